"""The Cauchy-Green transform on the unit disc and its normalized variants.

``T(f)(z) = (1/pi) * integral over D of f(w) / (z - w) dA(w)`` is a right
inverse of d/dz_bar.  It is computed mode by mode: writing
``f = sum_m f_m(r) e^{i m t}``, the transform of mode m is
``g_m(s) e^{i (m-1) t}`` with

    m <= 0:  g_m(s) =  2 * integral_0^s f_m(r) (r/s)^{1-m} dr
    m >= 1:  g_m(s) = -2 * integral_s^1 f_m(r) (s/r)^{m-1} dr

Both radial profiles solve the first order equation

    s g'(s) - (m - 1) g(s) = 2 s f_m(s)

(with g(1) = 0 for m >= 1, and no boundary condition needed for m <= 0, where
the operator is already invertible on polynomials).  The equation is solved by
collocation on the parity-doubled Chebyshev nodes, which reproduces the
transform exactly on the representable polynomial space: for monomials,

    T(z^a zbar^b) = (z^a zbar^{b+1} - [a > b] z^{a-b-1}) / (b + 1).

This avoids any quadrature of the singular kernel and is uniformly stable in
the mode number.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .grid import (
    DiscFunction,
    PolarGrid,
    _tables,
    wirtinger_derivatives,
)

__all__ = [
    "cauchy_green",
    "cauchy_green_pinned",
    "cauchy_green_interpolating",
    "cauchy_green_arrays",
    "pinned_transform_arrays",
    "hermite_polynomial_fit",
    "pinned_operator_norm",
    "IllConditionedInterpolation",
]


class IllConditionedInterpolation(ValueError):
    """Interpolation points too close; carries the condition number."""

    def __init__(self, cond: float):
        self.cond = cond
        super().__init__(f"interpolation system ill-conditioned (cond = {cond:.3e})")


class _CgTables:
    """Per-grid LU factorizations of the radial mode equations."""

    def __init__(self, grid: PolarGrid):
        tabs = _tables(grid)
        m = grid.n_radial
        x = tabs.x_dbl
        d = tabs.diff
        a_full = x[:, None] * d
        self.lu = [None] * grid.n_angular
        eye_diag = np.eye(2 * m)
        for s, mode in enumerate(tabs.mfreq):
            if mode == -(grid.n_angular // 2):
                continue  # beyond-Nyquist slot, dropped (tail-suppressed)
            a = a_full - (mode - 1) * eye_diag
            sign = 1.0 if (mode - 1) % 2 == 0 else -1.0
            l_half = a[:m, :m] + sign * a[:m, ::-1][:, :m]
            if mode >= 1:
                l_half[0, :] = 0.0
                l_half[0, 0] = 1.0  # g(1) = 0 at the node x_0 = 1
            self.lu[s] = lu_factor(l_half)
        self.x_pos = x[:m]


@lru_cache(maxsize=64)
def _cg_tables(grid: PolarGrid) -> _CgTables:
    return _CgTables(grid)


def cauchy_green_arrays(grid: PolarGrid, vals: np.ndarray) -> np.ndarray:
    """Array-level Cauchy-Green transform (no smoothness check)."""
    n = grid.n_angular
    tabs = _tables(grid)
    cg = _cg_tables(grid)
    modes = np.fft.fft(vals, axis=1) / n
    out_modes = np.zeros_like(modes)
    for s, mode in enumerate(tabs.mfreq):
        if cg.lu[s] is None:
            continue
        fm_desc = modes[::-1, s, :]
        rhs = 2.0 * cg.x_pos[:, None] * fm_desc
        if mode >= 1:
            rhs[0] = 0.0
        g_desc = lu_solve(cg.lu[s], rhs)
        out_modes[:, (s - 1) % n, :] = g_desc[::-1]
    return np.fft.ifft(out_modes * n, axis=1)


def cauchy_green(f: DiscFunction, *, check_tail: bool = True) -> DiscFunction:
    """Solve dW/dz_bar = f on the disc via the Cauchy-Green area integral."""
    if check_tail:
        f.check_smooth()
    return DiscFunction(f.grid, cauchy_green_arrays(f.grid, f.values))


def pinned_transform_arrays(grid: PolarGrid, vals: np.ndarray, b: complex) -> np.ndarray:
    w = DiscFunction(grid, cauchy_green_arrays(grid, vals))
    w0 = w.evaluate(0)
    wb = w.evaluate(b)
    corr = w0[None, None, :] + (grid.zeta / b)[:, :, None] * (wb - w0)[None, None, :]
    return w.values - corr


def cauchy_green_pinned(f: DiscFunction, b: complex, *, check_tail: bool = True) -> DiscFunction:
    """Cauchy-Green transform normalized to vanish at 0 and at b.

    Subtracts the affine holomorphic function matching T(f) at both points,
    so the result still solves the d-bar equation.
    """
    b = complex(b)
    if not (0 < abs(b) < 1):
        raise ValueError("pin b must satisfy 0 < |b| < 1")
    if check_tail:
        f.check_smooth()
    return DiscFunction(f.grid, pinned_transform_arrays(f.grid, f.values, b))


def hermite_polynomial_fit(points, values, derivs, *, cond_limit: float = 1e12):
    """Coefficients of the lowest-degree polynomial matching the conditions.

    ``points`` is a list of (z, order) with order 0 (value only) or 1 (value
    and first derivative).  ``values[i]``/``derivs[i]`` are the targets at
    points[i], each an (n,) vector.  Returns coefficients (n_cond, n) in
    increasing degree.
    """
    rows = []
    rhs = []
    n_cond = sum(1 + order for _, order in points)
    for (z, order), val, der in zip(points, values, derivs):
        rows.append([z**k for k in range(n_cond)])
        rhs.append(val)
        if order >= 1:
            rows.append([k * z ** (k - 1) if k >= 1 else 0.0 for k in range(n_cond)])
            rhs.append(der)
    v = np.array(rows, dtype=complex)
    cond = np.linalg.cond(v)
    if cond > cond_limit:
        raise IllConditionedInterpolation(float(cond))
    coef = np.linalg.solve(v, np.array(rhs, dtype=complex))
    return coef, float(cond)


def _polyval_grid(grid: PolarGrid, coef: np.ndarray) -> np.ndarray:
    zs = grid.zeta
    out = np.zeros(zs.shape + (coef.shape[1],), dtype=complex)
    for c in coef[::-1]:
        out = out * zs[:, :, None] + c[None, None, :]
    return out


def cauchy_green_interpolating(
    f: DiscFunction,
    points,
    *,
    check_tail: bool = True,
    cond_limit: float = 1e12,
) -> DiscFunction:
    """Cauchy-Green transform vanishing to prescribed order at given points.

    ``points`` is a list of (z, order) pairs inside the closed disc; order 0
    pins the value, order 1 pins value and z-derivative.  Subtracts the
    holomorphic Hermite interpolant of T(f), so the d-bar identity survives.
    """
    if check_tail:
        f.check_smooth()
    pts = [(complex(z), int(order)) for z, order in points]
    for z, order in pts:
        if abs(z) > 1 + 1e-12:
            raise ValueError("interpolation points must lie in the closed disc")
        if order not in (0, 1):
            raise ValueError("orders 0 and 1 only")
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            if abs(pts[i][0] - pts[j][0]) < 1e-12:
                raise ValueError("interpolation points must be distinct")
    w = DiscFunction(f.grid, cauchy_green_arrays(f.grid, f.values))
    need_deriv = any(order >= 1 for _, order in pts)
    wz = wirtinger_derivatives(w, check_tail=False)[0] if need_deriv else None
    values = [w.evaluate(z) for z, _ in pts]
    derivs = [wz.evaluate(z) if (wz is not None and order >= 1) else np.zeros(f.n_components, complex)
              for z, order in pts]
    if len(pts) == 1 and pts[0][1] == 0:
        corr = np.broadcast_to(values[0], w.values.shape).copy()
    else:
        coef, _ = hermite_polynomial_fit(pts, values, derivs, cond_limit=cond_limit)
        corr = _polyval_grid(f.grid, coef)
    return DiscFunction(f.grid, w.values - corr)


@lru_cache(maxsize=256)
def _pinned_norm_cached(grid: PolarGrid, b_key: complex) -> float:
    rng = np.random.default_rng(7)
    best = 0.0
    for _ in range(6):
        coef = rng.standard_normal((5, 5, 2)) @ np.array([1, 1j])
        def smooth(z, c=coef):
            out = np.zeros_like(z)
            for a in range(c.shape[0]):
                for bb in range(c.shape[1]):
                    out = out + c[a, bb] * z**a * np.conj(z) ** bb / (1 + a + bb) ** 2
            return out
        f = DiscFunction.from_callable(grid, smooth)
        tf = DiscFunction(grid, pinned_transform_arrays(grid, f.values, b_key))
        best = max(best, tf.sup_norm() / f.sup_norm())
    return 1.5 * best  # empirical probe, padded


def pinned_operator_norm(grid: PolarGrid, b: complex) -> float:
    """Empirical sup-norm bound estimate for the pinned transform.

    Probes random smooth inputs and pads the observed ratio; cached per grid
    and (rounded) pin.  A diagnostic for contraction budgeting, not a proof.
    """
    b = complex(b)
    key = complex(round(b.real, 3), round(b.imag, 3))
    return _pinned_norm_cached(grid, key)
