"""Polar spectral grids on the closed unit disc.

Functions are sampled on a tensor grid of Chebyshev-type radii and equispaced
angles.  Interpolation is trigonometric in the angle and polynomial in the
radius.  Radial data is doubled across the origin (value at ``-r`` along a ray
equals the value at ``+r`` along the opposite ray), so each angular Fourier
mode is represented by a polynomial of definite parity on ``[-1, 1]`` and the
coordinate singularity at the origin never enters.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "PolarGrid",
    "DiscFunction",
    "BoundaryFunction",
    "SpectralTailError",
    "wirtinger_derivatives",
    "holder_norm_estimate",
    "winding_number",
]


class SpectralTailError(ValueError):
    """Angular Fourier tail exceeds the grid's smoothness threshold."""


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class PolarGrid:
    """Tensor grid on the closed unit disc.

    ``n_radial`` radii sit in (0, 1] at the positive Chebyshev-Lobatto points
    of a doubled grid, so the outermost node is exactly 1 and nodes cluster at
    the boundary.  ``n_angular`` must be a power of two (FFT friendliness and
    so that opposite rays are both on the grid).
    """

    n_radial: int
    n_angular: int
    tail_threshold: float = 1e-6

    def __post_init__(self):
        if self.n_radial < 4:
            raise ValueError("n_radial must be at least 4")
        if self.n_angular < 8 or not _is_power_of_two(self.n_angular):
            raise ValueError("n_angular must be a power of two, at least 8")
        if not (0 < self.tail_threshold < 1):
            raise ValueError("tail_threshold must lie in (0, 1)")

    @property
    def radii(self) -> np.ndarray:
        return _tables(self).radii

    @property
    def angles(self) -> np.ndarray:
        return _tables(self).angles

    @property
    def zeta(self) -> np.ndarray:
        """Complex grid nodes, shape (n_radial, n_angular)."""
        return _tables(self).zeta

    @property
    def area_weights(self) -> np.ndarray:
        """Quadrature weights for integration over the disc, shape (n_radial,).

        The weight of node (k, a) is ``area_weights[k]`` independently of the
        angle; the rule integrates the grid interpolant exactly.
        """
        return _tables(self).area_w

    @property
    def angular_modes(self) -> np.ndarray:
        """Signed integer frequencies in FFT slot order."""
        return _tables(self).mfreq


class _GridTables:
    """Precomputed interpolation and differentiation data shared per grid."""

    def __init__(self, grid: PolarGrid):
        m, n = grid.n_radial, grid.n_angular
        j = np.arange(2 * m)
        self.x_dbl = np.cos(np.pi * j / (2 * m - 1))          # 2m Lobatto nodes
        self.bary_w = np.where(j % 2 == 0, 1.0, -1.0)
        self.bary_w[0] *= 0.5
        self.bary_w[-1] *= 0.5
        self.radii = self.x_dbl[m - 1 :: -1].copy()            # increasing, last == 1
        self.angles = 2 * np.pi * np.arange(n) / n
        self.zeta = self.radii[:, None] * np.exp(1j * self.angles)[None, :]
        self.mfreq = np.fft.fftfreq(n, d=1.0 / n).astype(int)

        # Differentiation matrix on the doubled nodes (barycentric form).
        x = self.x_dbl
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = x[:, None] - x[None, :]
            d = (self.bary_w[None, :] / self.bary_w[:, None]) / dx
        np.fill_diagonal(d, 0.0)
        np.fill_diagonal(d, -d.sum(axis=1))
        self.diff = d

        # Weights eta_j = int_0^1 l_j(x) x dx for the doubled cardinals,
        # computed with a Gauss-Legendre rule exact for the relevant degree.
        q = 2 * m + 4
        gl_x, gl_w = np.polynomial.legendre.leggauss(q)
        t = 0.5 * (gl_x + 1.0)
        wt = 0.5 * gl_w
        cards = _bary_cardinals(self.x_dbl, self.bary_w, t)   # (q, 2m)
        eta = cards.T @ (wt * t)
        self.radial_moment = eta
        # Fold onto physical nodes: node r_k appears as doubled index m-1-k and
        # as the mirror m+k of the opposite ray.
        k = np.arange(m)
        self.area_w = (2 * np.pi / n) * (eta[m - 1 - k] + eta[m + k])

        # Index maps between increasing radii and doubled node order.
        self.desc = slice(None, None, -1)


@lru_cache(maxsize=64)
def _tables(grid: PolarGrid) -> _GridTables:
    return _GridTables(grid)


def _bary_cardinals(nodes: np.ndarray, weights: np.ndarray, xq: np.ndarray) -> np.ndarray:
    """Cardinal (Lagrange) function values at query points, shape (P, len(nodes))."""
    xq = np.atleast_1d(np.asarray(xq, dtype=float))
    diff = xq[:, None] - nodes[None, :]
    hit = np.abs(diff) < 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        c = weights[None, :] / diff
    rows_hit = hit.any(axis=1)
    if rows_hit.any():
        c[rows_hit] = 0.0
        c[hit] = 1.0
    denom = c.sum(axis=1, keepdims=True)
    return c / denom


def _double_values(grid: PolarGrid, vals: np.ndarray) -> np.ndarray:
    """Extend (m, n, ...) nodal data to the doubled radial nodes (2m, n, ...)."""
    n = grid.n_angular
    top = vals[::-1]                       # doubled indices 0..m-1, descending radius
    bottom = np.roll(vals, n // 2, axis=1)  # value at -r along ray = +r on opposite ray
    return np.concatenate([top, bottom], axis=0)


@dataclass(frozen=True, eq=False)
class DiscFunction:
    """A C^n-valued function sampled on a PolarGrid.

    Values are immutable after construction; all operations return new
    objects, so instances may be shared freely across threads.
    """

    grid: PolarGrid
    values: np.ndarray  # complex, shape (n_radial, n_angular, n_components)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.shape[:2] != (self.grid.n_radial, self.grid.n_angular):
            raise ValueError(f"values shape {v.shape} does not match grid")
        if v.shape[2] > 4096:
            raise ValueError("unreasonable component count")
        if not np.all(np.isfinite(v.view(float))):
            raise ValueError("disc function values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    # ---- constructors -------------------------------------------------

    @classmethod
    def from_callable(cls, grid: PolarGrid, fn, n_components: int | None = None) -> "DiscFunction":
        out = np.asarray(fn(grid.zeta), dtype=complex)
        if out.shape == (grid.n_radial, grid.n_angular):
            out = out[:, :, None]
        if n_components is not None and out.shape[2] != n_components:
            raise ValueError("callable returned wrong component count")
        return cls(grid, out)

    @classmethod
    def constant(cls, grid: PolarGrid, value) -> "DiscFunction":
        value = np.atleast_1d(np.asarray(value, dtype=complex))
        vals = np.broadcast_to(value, (grid.n_radial, grid.n_angular, value.size))
        return cls(grid, vals.copy())

    @classmethod
    def zero(cls, grid: PolarGrid, n_components: int = 1) -> "DiscFunction":
        return cls(grid, np.zeros((grid.n_radial, grid.n_angular, n_components), complex))

    # ---- basic queries -------------------------------------------------

    @property
    def n_components(self) -> int:
        return self.values.shape[2]

    def component(self, i: int) -> "DiscFunction":
        return DiscFunction(self.grid, self.values[:, :, i : i + 1])

    def boundary(self) -> "BoundaryFunction":
        return BoundaryFunction(self.values[-1].copy())

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=2)))

    def angular_mode_table(self) -> np.ndarray:
        """Fourier coefficients per radius, shape (n_radial, n_angular, n)."""
        return np.fft.fft(self.values, axis=1) / self.grid.n_angular

    def spectral_tail(self) -> float:
        """Relative magnitude of the top 10% of angular frequencies."""
        modes = self.angular_mode_table()
        mfreq = self.grid.angular_modes
        cut = 0.9 * (self.grid.n_angular // 2)
        band = np.abs(mfreq) >= cut
        denom = np.max(np.abs(modes))
        if denom == 0.0:
            return 0.0
        return float(np.max(np.abs(modes[:, band, :])) / denom)

    def check_smooth(self):
        tail = self.spectral_tail()
        if tail > self.grid.tail_threshold:
            raise SpectralTailError(
                f"angular Fourier tail {tail:.3e} exceeds threshold "
                f"{self.grid.tail_threshold:.1e}"
            )

    # ---- algebra -------------------------------------------------------

    def _binop(self, other, op):
        if isinstance(other, DiscFunction):
            if other.grid != self.grid:
                raise ValueError("grid mismatch")
            return DiscFunction(self.grid, op(self.values, other.values))
        return DiscFunction(self.grid, op(self.values, other))

    def __add__(self, other):
        return self._binop(other, np.add)

    def __sub__(self, other):
        return self._binop(other, np.subtract)

    def __mul__(self, scalar):
        return DiscFunction(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return DiscFunction(self.grid, -self.values)

    def conj(self) -> "DiscFunction":
        return DiscFunction(self.grid, np.conj(self.values))

    # ---- evaluation ----------------------------------------------------

    def evaluate(self, z, *, tol: float = 1e-9) -> np.ndarray:
        """Interpolate at points with |z| <= 1 + tol.

        Spectral in the angle, barycentric-polynomial in the radius (on the
        parity-doubled nodes).  Exact at grid nodes.  Returns shape
        ``z.shape + (n_components,)``.
        """
        z = np.asarray(z, dtype=complex)
        shape = z.shape
        pts = np.atleast_1d(z).ravel()
        rho = np.abs(pts)
        if np.any(rho > 1 + tol):
            raise ValueError(f"evaluation point outside closed disc (max |z| = {rho.max():.6f})")
        out = _evaluate_modes(self.grid, self.angular_mode_table(), pts)
        return out.reshape(shape + (self.n_components,))

    def evaluate_extrapolated(self, z, *, mode_cap: int = 40, coef_floor: float = 1e-9) -> np.ndarray:
        """Low-pass evaluation allowing mild |z| > 1 overshoot.

        High angular modes amplify violently outside the disc, so only the
        modes above ``coef_floor`` (relative) and below ``mode_cap`` are kept.
        Intended for family construction on a thin annulus, not for precise
        work.
        """
        z = np.asarray(z, dtype=complex)
        shape = z.shape
        pts = np.atleast_1d(z).ravel()
        modes = self.angular_mode_table().copy()
        mfreq = self.grid.angular_modes
        amp = np.max(np.abs(modes), axis=(0, 2))
        kill = (np.abs(mfreq) > mode_cap) | (amp < coef_floor * max(amp.max(), 1e-300))
        modes[:, kill, :] = 0.0
        out = _evaluate_modes(self.grid, modes, pts)
        return out.reshape(shape + (self.n_components,))


def _evaluate_modes(grid: PolarGrid, modes: np.ndarray, pts: np.ndarray) -> np.ndarray:
    tabs = _tables(grid)
    m = grid.n_radial
    rho = np.abs(pts)
    phi = np.angle(pts)
    cards = _bary_cardinals(tabs.x_dbl, tabs.bary_w, rho)     # (P, 2m)
    fold_pos = cards[:, m - 1 :: -1]                           # column k -> node r_k
    fold_mir = cards[:, m:]
    fold_even = fold_pos + fold_mir
    fold_odd = fold_pos - fold_mir
    mfreq = tabs.mfreq
    even = mfreq % 2 == 0
    ve = np.einsum("pk,ksn->psn", fold_even, modes[:, even, :])
    vo = np.einsum("pk,ksn->psn", fold_odd, modes[:, ~even, :])
    phase_e = np.exp(1j * np.outer(phi, mfreq[even]))
    phase_o = np.exp(1j * np.outer(phi, mfreq[~even]))
    return np.einsum("psn,ps->pn", ve, phase_e) + np.einsum("psn,ps->pn", vo, phase_o)


@dataclass(frozen=True, eq=False)
class BoundaryFunction:
    """Values of a C^n-valued function at the angular nodes of the circle."""

    values: np.ndarray  # (n_angular, n_components)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim == 1:
            v = v[:, None]
        if not np.all(np.isfinite(v.view(float))):
            raise ValueError("boundary values must be finite")
        if not _is_power_of_two(v.shape[0]):
            raise ValueError("angular node count must be a power of two")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_angular(self) -> int:
        return self.values.shape[0]

    @property
    def n_components(self) -> int:
        return self.values.shape[1]

    def __sub__(self, other):
        if isinstance(other, BoundaryFunction):
            return BoundaryFunction(self.values - other.values)
        return BoundaryFunction(self.values - np.asarray(other, dtype=complex))

    def __mul__(self, other):
        return BoundaryFunction(self.values * other)

    __rmul__ = __mul__


def wirtinger_derivatives(f: DiscFunction, *, check_tail: bool = True):
    """Return (df/dzeta, df/dzeta_bar) computed spectrally.

    Angular derivative by FFT, radial derivative by the collocation matrix on
    the parity-doubled Chebyshev nodes, combined through the polar form of the
    Wirtinger operators.
    """
    if check_tail:
        f.check_smooth()
    fr, ft = _polar_derivative_arrays(f.grid, f.values)
    fz, fzb = _wirtinger_from_polar(f.grid, fr, ft)
    return DiscFunction(f.grid, fz), DiscFunction(f.grid, fzb)


def wirtinger_arrays(grid: PolarGrid, vals: np.ndarray):
    """Array-level variant of :func:`wirtinger_derivatives` (no tail check)."""
    fr, ft = _polar_derivative_arrays(grid, vals)
    return _wirtinger_from_polar(grid, fr, ft)


def _polar_derivative_arrays(grid: PolarGrid, vals: np.ndarray):
    tabs = _tables(grid)
    m = grid.n_radial
    dbl = _double_values(grid, vals)
    flat = dbl.reshape(2 * m, -1)
    dr_dbl = (tabs.diff @ flat).reshape(dbl.shape)
    fr = dr_dbl[:m][::-1]
    modes = np.fft.fft(vals, axis=1)
    ft = np.fft.ifft(1j * tabs.mfreq[None, :, None] * modes, axis=1)
    return fr, ft


def _wirtinger_from_polar(grid: PolarGrid, fr: np.ndarray, ft: np.ndarray):
    r = grid.radii[:, None, None]
    eith = np.exp(1j * grid.angles)[None, :, None]
    fz = 0.5 * np.conj(eith) * (fr - 1j * ft / r)
    fzb = 0.5 * eith * (fr + 1j * ft / r)
    return fz, fzb


def holder_norm_estimate(f: DiscFunction, beta: float, *, max_nodes: int = 1400) -> float:
    """Empirical C^beta norm: max difference quotient over node pairs plus sup.

    A lower bound of the true Holder norm (only grid pairs are examined), so
    treat it as a relative diagnostic.  Exhaustive when the grid is small
    enough, deterministically subsampled otherwise.
    """
    if not (0 < beta < 1):
        raise ValueError("beta must lie in (0, 1)")
    zs = f.grid.zeta.ravel()
    vs = f.values.reshape(len(zs), f.n_components)
    if len(zs) > max_nodes:
        idx = np.random.default_rng(0).choice(len(zs), size=max_nodes, replace=False)
        idx.sort()
        zs, vs = zs[idx], vs[idx]
    dz = np.abs(zs[:, None] - zs[None, :])
    dv = np.linalg.norm(vs[:, None, :] - vs[None, :, :], axis=2)
    mask = dz > 1e-14
    quot = np.zeros_like(dv)
    quot[mask] = dv[mask] / dz[mask] ** beta
    sup = float(np.max(np.linalg.norm(vs, axis=1)))
    return float(quot.max()) + sup


def winding_number(curve: BoundaryFunction, *, tol: float = 1e-9, max_refine: int = 4) -> int:
    """Total argument increment / 2 pi of a closed nonvanishing scalar curve.

    Refines by trigonometric upsampling if consecutive samples turn by close
    to pi (ambiguous branch); rejects curves passing within ``tol`` of zero.
    """
    if curve.n_components != 1:
        raise ValueError("winding_number expects a scalar curve")
    vals = curve.values[:, 0]
    if np.min(np.abs(vals)) <= tol:
        raise ValueError("curve passes within tolerance of 0")
    for _ in range(max_refine + 1):
        steps = np.angle(np.roll(vals, -1) / vals)
        if np.max(np.abs(steps)) < 0.9 * np.pi:
            total = steps.sum() / (2 * np.pi)
            k = int(np.round(total))
            if abs(total - k) > 0.05:
                raise ValueError(f"argument increment {total:.4f} is not close to an integer")
            return k
        spec = np.fft.fft(vals)
        n = len(vals)
        pad = np.zeros(2 * n, dtype=complex)
        half = n // 2
        pad[:half] = spec[:half]
        pad[-half:] = spec[-half:]
        vals = np.fft.ifft(pad) * 2
        if np.min(np.abs(vals)) <= tol:
            raise ValueError("curve passes within tolerance of 0 after refinement")
    raise ValueError("winding ambiguous: curve too rough for the sample density")
