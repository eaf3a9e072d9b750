"""Almost complex structures on chart domains and their derived objects.

A structure is a field of real 2n x 2n matrices J with J^2 = -I.  Whenever
J + J_st is invertible it is encoded by the complex n x n matrix field

    A(x) v = (J_st + J(x))^{-1} (J(x) - J_st) conj(v),

which is complex linear in v, and discs are holomorphic for J exactly when
f_zbar + A(f) conj(f_z) = 0.  The encoding is invertible,

    J = J_st (I + M)(I - M)^{-1},   M = A_real o conj,

and any A field with ||A|| < 1 produces a genuine structure this way, which
is how the built-in families are defined.

Points of the chart are complex n-vectors; the real picture interleaves
coordinates as (Re z_1, Im z_1, ..., Re z_n, Im z_n).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .grid import DiscFunction, PolarGrid, wirtinger_arrays

__all__ = [
    "AcStructure",
    "ComplexMatrixField",
    "Chart",
    "GraphCoordinates",
    "DiscFamily",
    "EllipticCoefficients",
    "Box",
    "Ball",
    "FrameDegenerationError",
    "ChartError",
    "realify",
    "complexify",
    "real_matrix",
    "j_standard",
    "standard_structure",
    "ball_structure",
    "beltrami_structure",
    "bump_structure",
    "structure_from_complex_matrix",
    "complex_matrix",
    "normalizing_chart",
    "graph_coordinates",
    "elliptic_coefficients",
]


class ChartError(RuntimeError):
    pass


class FrameDegenerationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# real / complex bookkeeping

def realify(v: np.ndarray) -> np.ndarray:
    """(..., n) complex -> (..., 2n) real, interleaved."""
    v = np.asarray(v, dtype=complex)
    out = np.empty(v.shape[:-1] + (2 * v.shape[-1],), dtype=float)
    out[..., 0::2] = v.real
    out[..., 1::2] = v.imag
    return out


def complexify(x: np.ndarray) -> np.ndarray:
    """(..., 2n) real -> (..., n) complex."""
    x = np.asarray(x, dtype=float)
    return x[..., 0::2] + 1j * x[..., 1::2]


def real_matrix(b: np.ndarray) -> np.ndarray:
    """Realification of a complex (..., n, n) matrix acting linearly."""
    b = np.asarray(b, dtype=complex)
    n = b.shape[-1]
    out = np.zeros(b.shape[:-2] + (2 * n, 2 * n), dtype=float)
    out[..., 0::2, 0::2] = b.real
    out[..., 0::2, 1::2] = -b.imag
    out[..., 1::2, 0::2] = b.imag
    out[..., 1::2, 1::2] = b.real
    return out


@lru_cache(maxsize=8)
def j_standard(n: int) -> np.ndarray:
    j = np.zeros((2 * n, 2 * n))
    for k in range(n):
        j[2 * k, 2 * k + 1] = -1.0
        j[2 * k + 1, 2 * k] = 1.0
    j.setflags(write=False)
    return j


@lru_cache(maxsize=8)
def _conj_matrix(n: int) -> np.ndarray:
    c = np.diag([1.0, -1.0] * n)
    c.setflags(write=False)
    return c


# ---------------------------------------------------------------------------
# domains and structures

@dataclass(frozen=True)
class Box:
    """Axis-aligned box in R^{2n}."""

    lo: tuple
    hi: tuple

    @classmethod
    def cube(cls, n: int, halfwidth: float, center=None) -> "Box":
        c = np.zeros(2 * n) if center is None else realify(np.atleast_1d(center))
        return cls(tuple(c - halfwidth), tuple(c + halfwidth))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, x: np.ndarray, margin: float = 0.0) -> np.ndarray:
        x = np.asarray(x)
        lo = np.asarray(self.lo) + margin
        hi = np.asarray(self.hi) - margin
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def sample(self, per_axis: int = 4) -> np.ndarray:
        axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def interior_distance(self, x: np.ndarray) -> float:
        x = np.asarray(x)
        return float(min(np.min(x - np.asarray(self.lo)), np.min(np.asarray(self.hi) - x)))


@dataclass(frozen=True)
class Ball:
    """Round ball in R^{2n}; the natural domain for the unit-ball model."""

    center: tuple
    radius: float

    @classmethod
    def unit(cls, n: int, radius: float = 1.0) -> "Ball":
        return cls(tuple(np.zeros(2 * n)), radius)

    @property
    def dim(self) -> int:
        return len(self.center)

    def contains(self, x: np.ndarray, margin: float = 0.0) -> np.ndarray:
        x = np.asarray(x)
        d = np.linalg.norm(x - np.asarray(self.center), axis=-1)
        return d <= self.radius - margin

    def sample(self, per_axis: int = 4) -> np.ndarray:
        count = per_axis ** self.dim
        rng = np.random.default_rng(0)
        dirs = rng.standard_normal((count, self.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        rad = self.radius * rng.random(count) ** (1.0 / self.dim)
        return np.asarray(self.center) + rad[:, None] * dirs

    def interior_distance(self, x: np.ndarray) -> float:
        x = np.asarray(x)
        return float(self.radius - np.linalg.norm(x - np.asarray(self.center)))


@dataclass(frozen=True, eq=False)
class AcStructure:
    """A smooth field of matrices J(x) with J^2 = -I on a box in R^{2n}.

    ``j`` must accept a batch of real points (..., 2n) and return
    (..., 2n, 2n).  Fields are pure callables and must be safe to evaluate
    concurrently.
    """

    n: int
    j: object  # callable
    domain: object  # Box or Ball
    name: str = "custom"

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("dimension n must be 1 or 2")
        if self.domain.dim != 2 * self.n:
            raise ValueError("domain dimension does not match n")

    def contains_disc(self, f: DiscFunction, margin: float = -1e-7) -> bool:
        """Whether all sampled disc values stay inside the chart domain."""
        return bool(np.all(self.domain.contains(realify(f.values), margin)))

    def evaluate(self, points_real: np.ndarray) -> np.ndarray:
        return self.j(np.asarray(points_real, dtype=float))

    def validate(self, *, per_axis: int = 4, square_tol: float = 1e-10, svd_floor: float = 1e-6):
        pts = self.domain.sample(per_axis)
        jm = self.evaluate(pts)
        eye = np.eye(2 * self.n)
        sq = np.max(np.abs(jm @ jm + eye))
        if sq > square_tol:
            raise ValueError(f"J^2 + I residual {sq:.3e} exceeds {square_tol:.1e}")
        s = jm + j_standard(self.n)
        smin = np.min(np.linalg.svd(s, compute_uv=False))
        if smin < svd_floor:
            bad = pts[np.argmin(np.min(np.linalg.svd(s, compute_uv=False), axis=-1))]
            raise ValueError(f"J + J_st nearly singular (min sv {smin:.3e}) near {bad}")
        return self


@dataclass(frozen=True, eq=False)
class ComplexMatrixField:
    """The complex n x n matrix field of a structure; multiplies conj(v)."""

    n: int
    field: object  # callable on complex points (..., n) -> (..., n, n)

    def __call__(self, points_cplx: np.ndarray) -> np.ndarray:
        return self.field(np.asarray(points_cplx, dtype=complex))

    def apply_conj(self, points_cplx: np.ndarray, v: np.ndarray) -> np.ndarray:
        """A(p) conj(v), the nonlinearity of the holomorphy equation."""
        a = self(points_cplx)
        return np.einsum("...ij,...j->...i", a, np.conj(v))


def complex_matrix(structure: AcStructure) -> ComplexMatrixField:
    """Encode J in Beltrami form; rejects structures with J + J_st singular."""
    jst = j_standard(structure.n)

    def field(zpts):
        x = realify(zpts)
        jm = structure.evaluate(x)
        s = jm + jst
        try:
            m = np.linalg.solve(s, jm - jst)
        except np.linalg.LinAlgError as exc:
            raise ValueError("J + J_st singular on the requested points") from exc
        return m[..., 0::2, 0::2] + 1j * m[..., 1::2, 0::2]

    return ComplexMatrixField(structure.n, field)


def structure_from_complex_matrix(a_field, n: int, domain: Box, name: str = "from-matrix") -> AcStructure:
    """Build the structure with prescribed complex matrix field (||A|| < 1)."""
    jst = j_standard(n)
    conj = _conj_matrix(n)
    eye = np.eye(2 * n)

    def j(x):
        b = np.asarray(a_field(complexify(x)), dtype=complex)
        m = real_matrix(b) @ conj
        return jst @ (eye + m) @ np.linalg.inv(eye - m)

    return AcStructure(n, j, domain, name=name)


def standard_structure(n: int, halfwidth: float = 4.0, domain=None) -> AcStructure:
    jst = j_standard(n)

    def j(x):
        return np.broadcast_to(jst, x.shape[:-1] + jst.shape).copy()

    return AcStructure(n, j, domain or Box.cube(n, halfwidth), name="standard")


def ball_structure(n: int = 2, radius: float = 1.0) -> AcStructure:
    """The integrable structure on the closed round ball (the model case)."""
    s = standard_structure(n, domain=Ball.unit(n, radius))
    return AcStructure(s.n, s.j, s.domain, name=f"ball({radius})")


def beltrami_structure(mu: complex, halfwidth: float = 2.0) -> AcStructure:
    """Constant-coefficient structure on C whose complex matrix is mu."""
    mu = complex(mu)
    if abs(mu) >= 1:
        raise ValueError("|mu| must be < 1")

    def a_field(z):
        return np.broadcast_to(np.array([[mu]]), z.shape[:-1] + (1, 1)).copy()

    return structure_from_complex_matrix(a_field, 1, Box.cube(1, halfwidth), name=f"beltrami-const {mu}")


_BUMP_MATRIX = np.array([[0.9, 0.35], [0.25, 0.65]], dtype=complex)
_BUMP_MATRIX.setflags(write=False)


def bump_structure(delta: float, n: int = 2, halfwidth: float = 2.0,
                   center=None, width: float = 0.8, matrix=None) -> AcStructure:
    """Standard structure perturbed by a smooth compactly-flavored bump.

    The complex matrix is ``delta * exp(-|z - center|^2 / width^2) * B`` for a
    fixed mixing matrix B, so the deviation from the integrable case is O(delta).
    """
    if delta < 0 or delta >= 0.5:
        raise ValueError("delta must lie in [0, 0.5)")
    c = np.zeros(n, dtype=complex) if center is None else np.atleast_1d(np.asarray(center, complex))
    b = (_BUMP_MATRIX[:n, :n] if matrix is None else np.asarray(matrix, complex))

    def a_field(z):
        d2 = np.sum(np.abs(z - c) ** 2, axis=-1)
        amp = delta * np.exp(-d2 / width**2)
        return amp[..., None, None] * b

    return structure_from_complex_matrix(a_field, n, Box.cube(n, halfwidth), name=f"bump {delta}")


# ---------------------------------------------------------------------------
# normalizing charts

@dataclass(frozen=True, eq=False)
class Chart:
    """Affine chart x -> S^{-1}(x - p)/t with psi(p) = 0."""

    p_real: np.ndarray
    frame: np.ndarray
    scale: float
    pulled: AcStructure

    def forward(self, points_cplx: np.ndarray) -> np.ndarray:
        x = realify(np.asarray(points_cplx, complex))
        y = np.linalg.solve(self.frame, (x - self.p_real)[..., None])[..., 0] / self.scale
        return complexify(y)

    def inverse(self, points_cplx: np.ndarray) -> np.ndarray:
        y = realify(np.asarray(points_cplx, complex))
        x = self.p_real + self.scale * np.einsum("ij,...j->...i", self.frame, y)
        return complexify(x)

    def push_vector(self, v_cplx: np.ndarray) -> np.ndarray:
        x = realify(np.asarray(v_cplx, complex))
        return complexify(np.linalg.solve(self.frame, x) / self.scale)

    def pull_disc(self, f: DiscFunction) -> DiscFunction:
        return DiscFunction(f.grid, self.inverse(f.values))


def _diagonalizing_frame(jp: np.ndarray, n: int) -> np.ndarray:
    cols = []
    v1 = np.zeros(2 * n)
    v1[0] = 1.0
    cols += [v1, jp @ v1]
    if n == 2:
        q, _ = np.linalg.qr(np.stack(cols, axis=1))
        best, best_res = None, -1.0
        for k in range(4):
            e = np.zeros(4)
            e[k] = 1.0
            res = e - q @ (q.T @ e)
            if np.linalg.norm(res) > best_res:
                best, best_res = res, np.linalg.norm(res)
        v3 = best / np.linalg.norm(best)
        cols += [v3, jp @ v3]
    s = np.stack(cols, axis=1)
    if abs(np.linalg.det(s)) < 1e-10:
        raise ChartError("degenerate frame while diagonalizing J(p)")
    return s


def _c1_norm_of_matrix_field(a_field, n: int, halfwidth: float, per_axis: int = 4,
                             h: float = 1e-4) -> float:
    pts = Box.cube(n, halfwidth).sample(per_axis)
    z = complexify(pts)
    norm0 = np.max(np.linalg.norm(a_field(z), ord=2, axis=(-2, -1)))
    dmax = 0.0
    for axis in range(2 * n):
        dx = np.zeros(2 * n)
        dx[axis] = h
        zp = complexify(pts + dx)
        zm = complexify(pts - dx)
        d = (a_field(zp) - a_field(zm)) / (2 * h)
        dmax = max(dmax, np.max(np.linalg.norm(d, ord=2, axis=(-2, -1))))
    return float(norm0 + dmax)


# Radii of the chart working region.  The pulled-back structure is kept
# honest for |y| <= _CHART_CORE and smoothly flattened to the standard one
# between _CHART_CORE and _CHART_OUTER, as the pinned constructions need
# discs of chart radius up to about 1.5.
_CHART_CORE = 2.0
_CHART_OUTER = 2.6


def _chart_cutoff(r: np.ndarray) -> np.ndarray:
    t = np.clip((r - _CHART_CORE) / (_CHART_OUTER - _CHART_CORE), 0.0, 1.0)
    return 0.5 * (1 + np.cos(np.pi * t))


def normalizing_chart(structure: AcStructure, p, epsilon: float,
                      *, dilation_budget: int = 40, per_axis: int = 4,
                      max_scale: float = 2.0) -> Chart:
    """Affine chart at p with psi*(J)(0) = J_st and small pulled-back matrix.

    The frame diagonalizes J(p) exactly, so the pulled-back matrix vanishes
    at the origin; a dilation is then bisected until its measured C^1 norm on
    the working box drops below epsilon.  Outside the working region the
    structure is smoothly flattened to the standard one (the pinned-disc
    constructions evaluate it at chart radius up to about 1.5).  Fails if the
    budget runs out or p is not interior to the domain.
    """
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    p_real = realify(p)
    dist = structure.domain.interior_distance(p_real)
    if dist <= 0:
        raise ChartError("chart center must be interior to the structure domain")
    jp = structure.evaluate(p_real)
    s = _diagonalizing_frame(jp, structure.n)
    n = structure.n
    s_inv = np.linalg.inv(s)
    # keep p + t S y inside the domain for |y|_2 <= _CHART_OUTER
    t = min(max_scale, 0.95 * dist / (np.linalg.norm(s, 2) * _CHART_OUTER))
    jst = j_standard(n)
    conj = _conj_matrix(n)
    eye = np.eye(2 * n)

    for _ in range(dilation_budget):
        def a_ext(z, t=t):
            y = realify(z)
            r = np.linalg.norm(y, axis=-1)
            chi = _chart_cutoff(r)
            # clip radially where chi = 0 so the structure is never queried
            # far outside its domain; no-op wherever chi > 0
            clip = np.minimum(1.0, _CHART_OUTER / np.maximum(r, 1e-300))
            x = p_real + t * np.einsum("ij,...j->...i", s, y * clip[..., None])
            jm = s_inv @ structure.evaluate(x) @ s
            m = np.linalg.solve(jm + jst, jm - jst)
            a_raw = m[..., 0::2, 0::2] + 1j * m[..., 1::2, 0::2]
            return chi[..., None, None] * a_raw

        def pulled_j(y, a_ext=a_ext):
            b = np.asarray(a_ext(complexify(y)), dtype=complex)
            m = real_matrix(b) @ conj
            return jst @ (eye + m) @ np.linalg.inv(eye - m)

        if _c1_norm_of_matrix_field(a_ext, n, _CHART_CORE, per_axis=per_axis) < epsilon:
            pulled = AcStructure(n, pulled_j, Box.cube(n, _CHART_OUTER),
                                 name=f"chart({structure.name})")
            return Chart(p_real=p_real, frame=s, scale=t, pulled=pulled)
        t *= 0.5
    raise ChartError(f"epsilon = {epsilon} unreachable within dilation budget")


# ---------------------------------------------------------------------------
# graph coordinates along a disc

def _entries_disc(grid: PolarGrid, arr: np.ndarray) -> DiscFunction:
    m, n = grid.n_radial, grid.n_angular
    return DiscFunction(grid, arr.reshape(m, n, -1).astype(complex))


@dataclass(frozen=True, eq=False)
class GraphCoordinates:
    """Tubular coordinates (zeta, w) around the graph of a base disc.

    The fiber frame E(zeta) intertwines J along the disc with J_st, so the
    pushed-forward structure restricts to the standard one on the zero
    section and the deformation equation for the fiber component h reads

        h_zbar + A(zeta, h) conj(h_z) + a(zeta, h) = 0

    with a(zeta, 0) = 0 and A(zeta, 0) = 0.
    """

    structure: AcStructure
    base: DiscFunction
    frame: np.ndarray        # (m, n_ang, 2n, 2n)
    frame_inv: np.ndarray
    frame_dx: np.ndarray
    frame_dy: np.ndarray
    base_dx: np.ndarray      # (m, n_ang, 2n) real
    base_dy: np.ndarray
    _interp: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self) -> PolarGrid:
        return self.base.grid

    @property
    def n(self) -> int:
        return self.structure.n

    # -- evaluation ------------------------------------------------------

    def _fields_at(self, zeta):
        """Evaluate (f, E, E^-1, E_x, E_y, f_x, f_y) off-grid at points zeta."""
        n2 = 2 * self.n
        interp = self._interp
        if not interp:
            g = self.grid
            interp["f"] = self.base
            interp["E"] = _entries_disc(g, self.frame)
            interp["Ex"] = _entries_disc(g, self.frame_dx)
            interp["Ey"] = _entries_disc(g, self.frame_dy)
            interp["fx"] = _entries_disc(g, self.base_dx)
            interp["fy"] = _entries_disc(g, self.base_dy)
        zeta = np.atleast_1d(np.asarray(zeta, complex))
        shp = zeta.shape
        f = interp["f"].evaluate(zeta)
        e = interp["E"].evaluate(zeta).real.reshape(shp + (n2, n2))
        ex = interp["Ex"].evaluate(zeta).real.reshape(shp + (n2, n2))
        ey = interp["Ey"].evaluate(zeta).real.reshape(shp + (n2, n2))
        fx = interp["fx"].evaluate(zeta).real.reshape(shp + (n2,))
        fy = interp["fy"].evaluate(zeta).real.reshape(shp + (n2,))
        return f, e, np.linalg.inv(e), ex, ey, fx, fy

    def coefficients(self, w_values: np.ndarray, zeta=None):
        """Return (a, A) of the pushed-forward structure at fiber values w.

        ``w_values``: (..., n) complex fiber offsets.  With ``zeta=None`` the
        leading shape must be the full grid (fast path using stored arrays).
        Also returns the sup of the first row of the full matrix, which
        vanishes identically for exact data (a consistency diagnostic).
        """
        if zeta is None:
            fvals = self.base.values
            e, einv = self.frame, self.frame_inv
            ex, ey = self.frame_dx, self.frame_dy
            fx, fy = self.base_dx, self.base_dy
        else:
            fvals, e, einv, ex, ey, fx, fy = self._fields_at(zeta)
        w_real = realify(w_values)
        q_real = realify(fvals) + np.einsum("...ij,...j->...i", e, w_real)
        jq = self.structure.evaluate(q_real)
        etil = einv @ jq @ e
        xx = -np.einsum("...ij,...j->...i", einv,
                        np.einsum("...ij,...j->...i", ex, w_real) + fx)
        xy = -np.einsum("...ij,...j->...i", einv,
                        np.einsum("...ij,...j->...i", ey, w_real) + fy)
        x = np.stack([xx, xy], axis=-1)                      # (..., 2n, 2)
        jst2 = j_standard(1)
        c21 = x @ jst2 - etil @ x
        n2 = 2 * self.n
        big = np.zeros(q_real.shape[:-1] + (n2 + 2, n2 + 2))
        big[..., :2, :2] = jst2
        big[..., 2:, :2] = c21
        big[..., 2:, 2:] = etil
        jst_big = j_standard(self.n + 1)
        m = np.linalg.solve(big + jst_big, big - jst_big)
        atil = m[..., 0::2, 0::2] + 1j * m[..., 1::2, 0::2]
        a_vec = atil[..., 1:, 0]
        a_mat = atil[..., 1:, 1:]
        first_row = float(np.max(np.abs(atil[..., 0, :])))
        return a_vec, a_mat, first_row

    def deformation_term(self, h_vals: np.ndarray, hz_vals: np.ndarray) -> np.ndarray:
        """A(zeta, h) conj(h_z) + a(zeta, h) on the grid."""
        a_vec, a_mat, _ = self.coefficients(h_vals)
        return np.einsum("...ij,...j->...i", a_mat, np.conj(hz_vals)) + a_vec

    def reconstruct_disc(self, h: DiscFunction) -> DiscFunction:
        """Map a fiber solution h back to a disc in the chart."""
        vals = complexify(realify(self.base.values)
                          + np.einsum("...ij,...j->...i", self.frame, realify(h.values)))
        return DiscFunction(self.grid, vals)

    def fiber_offset(self, point, zeta=0.0) -> np.ndarray:
        """Fiber coordinates of a chart point over a given zeta."""
        _, _, einv, *_ = self._fields_at(zeta)
        base_val = self.base.evaluate(zeta)
        d = realify(np.atleast_1d(np.asarray(point, complex))) - realify(base_val)
        return complexify(np.einsum("...ij,...j->...i", einv, d))[0]


def graph_coordinates(structure: AcStructure, f: DiscFunction, *,
                      frame_seed: str = "auto", degeneracy_tol: float = 1e-8) -> GraphCoordinates:
    """Build tubular coordinates around the graph of a disc.

    ``frame_seed='tangent'`` Gram-Schmidts against the disc tangent (needs an
    immersion), ``'basis'`` uses a fixed seed (works for constant and
    non-immersed discs); ``'auto'`` picks per the measured tangent.
    """
    n = structure.n
    grid = f.grid
    fz, fzb = wirtinger_arrays(grid, f.values)
    fx = realify(fz + fzb)
    fy = realify(1j * (fz - fzb))
    tan_norm = np.linalg.norm(fx, axis=-1)
    if frame_seed == "auto":
        frame_seed = "tangent" if np.min(tan_norm) > 1e-6 * max(np.max(tan_norm), 1e-30) else "basis"
    jf = structure.evaluate(realify(f.values))
    if frame_seed == "tangent":
        v1 = fx / tan_norm[..., None]
    else:
        v1 = np.zeros_like(fx)
        v1[..., 0] = 1.0
    v2 = np.einsum("...ij,...j->...i", jf, v1)
    cols = [v1, v2]
    if n == 2:
        q1 = v1 / np.linalg.norm(v1, axis=-1, keepdims=True)
        q2 = v2 - np.sum(v2 * q1, axis=-1, keepdims=True) * q1
        q2 = q2 / np.linalg.norm(q2, axis=-1, keepdims=True)
        best_k, best_score = 0, -1.0
        for k in range(4):
            e = np.zeros(4)
            e[k] = 1.0
            res = e - np.sum(e * q1, axis=-1, keepdims=True) * q1 \
                    - np.sum(e * q2, axis=-1, keepdims=True) * q2
            score = np.min(np.linalg.norm(res, axis=-1))
            if score > best_score:
                best_k, best_score = k, score
        e = np.zeros(4)
        e[best_k] = 1.0
        v3 = e - np.sum(e * q1, axis=-1, keepdims=True) * q1 \
               - np.sum(e * q2, axis=-1, keepdims=True) * q2
        v3 = v3 / np.linalg.norm(v3, axis=-1, keepdims=True)
        v4 = np.einsum("...ij,...j->...i", jf, v3)
        cols += [v3, v4]
    frame = np.stack(cols, axis=-1)
    dets = np.abs(np.linalg.det(frame))
    if np.min(dets) < degeneracy_tol:
        k_bad = np.unravel_index(np.argmin(dets), dets.shape)
        raise FrameDegenerationError(
            f"transverse frame degenerates at zeta = {grid.zeta[k_bad]:.4f}"
        )
    frame_inv = np.linalg.inv(frame)
    ez, _ = wirtinger_arrays(grid, frame.reshape(grid.n_radial, grid.n_angular, -1).astype(complex))
    ez = ez.reshape(frame.shape)
    frame_dx = 2 * ez.real
    frame_dy = -2 * ez.imag
    return GraphCoordinates(
        structure=structure, base=f,
        frame=frame, frame_inv=frame_inv,
        frame_dx=frame_dx, frame_dy=frame_dy,
        base_dx=fx, base_dy=fy,
    )


# ---------------------------------------------------------------------------
# disc families and the induced elliptic system

@dataclass(frozen=True, eq=False)
class DiscFamily:
    """A smooth family G(z, w) of discs over an annulus of centers.

    ``G`` accepts broadcastable complex arrays (z, w) with |w| <= 1 + gamma
    and returns chart points (..., n).  ``center_curve`` is G(., 0).  The
    fibers w -> G(z, w) are expected to be holomorphic discs; this is what
    makes the pushed-forward structure's matrix have its second column zero.
    """

    structure: AcStructure
    G: object
    gamma: float
    center_curve: object
    name: str = "family"

    def jacobian(self, z, w, *, step: float = 1e-5, scheme: str = "central") -> np.ndarray:
        """Real 4x4 (n=2) Jacobian of (z, w) -> G(z, w) by finite differences.

        Families with seams (piecewise construction) may expose their own
        ``fd_jacobian``; it is preferred since a stencil crossing a seam
        amplifies the jump by 1/step.
        """
        if hasattr(self.G, "fd_jacobian"):
            return self.G.fd_jacobian(z, w, step=step)
        z = np.asarray(z, complex)
        w = np.asarray(w, complex)
        cols = []
        if scheme == "central":
            for dz, dw in [(step, 0), (1j * step, 0), (0, step), (0, 1j * step)]:
                d = (np.asarray(self.G(z + dz, w + dw))
                     - np.asarray(self.G(z - dz, w - dw))) / (2 * step)
                cols.append(realify(d))
        else:
            base = np.asarray(self.G(z, w))
            for dz, dw in [(step, 0), (1j * step, 0), (0, step), (0, 1j * step)]:
                d = (np.asarray(self.G(z + dz, w + dw)) - base) / step
                cols.append(realify(d))
        return np.stack(cols, axis=-1)

    def w_component_winding(self, *, samples: int = 256) -> int:
        """Winding of the fiber direction d/dw G(z, 0) around the unit circle.

        Zero winding is required for the torus-attachment construction.  The
        direction is projected onto its dominant complex component.
        """
        from .grid import BoundaryFunction, winding_number
        t = 2 * np.pi * np.arange(samples) / samples
        z = np.exp(1j * t)
        h = 1e-5
        d = (np.asarray(self.G(z, h + 0 * z)) - np.asarray(self.G(z, -h + 0 * z))) / (2 * h)
        comp = np.argmax(np.mean(np.abs(d), axis=0))
        return winding_number(BoundaryFunction(d[:, comp]))


@dataclass(frozen=True, eq=False)
class EllipticCoefficients:
    """Scalar coefficients of the system z_zbar = c conj(z_z), w_zbar = d conj(z_z).

    ``c``/``d`` are callables on broadcastable (z, w); both vanish at w = 0
    and |c| <= c_bound < 1.  ``c_over_w``/``d_over_w`` are the Lipschitz
    quotients c/w and d/w used by the attachment solver where w underflows;
    when not supplied they fall back to a floored evaluation.
    """

    c: object
    d: object
    gamma: float
    c_bound: float = 0.95
    c_over_w: object = None
    d_over_w: object = None
    cd_over_w: object = None    # joint evaluator, one pushforward per call

    def quotients(self, z, w, *, floor: float = 1e-6):
        if self.cd_over_w is not None:
            cq, dq = self.cd_over_w(z, w)
            return np.asarray(cq), np.asarray(dq)
        if self.c_over_w is not None and self.d_over_w is not None:
            return np.asarray(self.c_over_w(z, w)), np.asarray(self.d_over_w(z, w))
        w = np.asarray(w, complex)
        mag = np.abs(w)
        unit = np.where(mag > 0, w / np.where(mag == 0, 1, mag), 1.0)
        w_eff = unit * np.maximum(mag, floor)
        return np.asarray(self.c(z, w_eff)) / w_eff, np.asarray(self.d(z, w_eff)) / w_eff


def elliptic_coefficients(family: DiscFamily, *, c_bound: float = 0.95,
                          fd_step: float = 1e-5, fd_scheme: str = "central",
                          n_sample: int = 12,
                          singular_fraction: float = 0.05,
                          holomorphy_tol: float = 5e-2) -> EllipticCoefficients:
    """Push the structure through the family and extract the scalar system.

    Rejects families whose Jacobian degenerates on a non-discrete part of a
    fiber, and families whose |c| exceeds ``c_bound``.  The second column of
    the pushed-forward matrix is checked against ``holomorphy_tol``; a large
    value means the fibers are not holomorphic discs.
    """
    if family.structure.n != 2:
        raise ValueError("the elliptic system requires a 4-real-dimensional chart")
    jst2 = j_standard(2)

    def coeff_matrix(z, w):
        z = np.asarray(z, complex)
        w = np.asarray(w, complex)
        z, w = np.broadcast_arrays(z, w)
        dg = family.jacobian(z, w, step=fd_step, scheme=fd_scheme)
        # near the family's pinch circle the Jacobian degenerates (a legal,
        # removable singularity); nudge those fibers off the sliver
        dets = np.abs(np.linalg.det(dg))
        bad = dets < 1e-13
        if np.any(bad):
            w = np.array(w, copy=True)
            w[bad] = w[bad] * (1.0 + 5e-4) + (w[bad] == 0) * 5e-4
            dg = family.jacobian(z, w, step=fd_step, scheme=fd_scheme)
        q = np.asarray(family.G(z, w))
        jq = family.structure.evaluate(realify(q))
        jtil = np.linalg.solve(dg, jq @ dg)
        m = np.linalg.solve(jtil + jst2, jtil - jst2)
        return m[..., 0::2, 0::2] + 1j * m[..., 1::2, 0::2]

    # validation sweep over the closed bidisc (with the w margin)
    tt = 2 * np.pi * np.arange(n_sample) / n_sample
    zs = np.concatenate([r * np.exp(1j * tt) for r in (0.4, 0.8, 1.0)])
    ws = np.concatenate([[0.0], 0.5 * np.exp(1j * tt[:4]), (1.0 + 0.5 * family.gamma) * np.exp(1j * tt[:4])])
    zg, wg = np.meshgrid(zs, ws, indexing="ij")
    atil = coeff_matrix(zg, wg)
    col2 = float(np.max(np.abs(atil[..., :, 1])))
    if col2 > holomorphy_tol:
        raise ValueError(f"family fibers are not holomorphic discs (column residual {col2:.2e})")
    cmag = np.abs(atil[..., 0, 0])
    if cmag.max() > c_bound:
        k = np.unravel_index(np.argmax(cmag), cmag.shape)
        raise ValueError(
            f"|c| = {cmag.max():.3f} exceeds bound {c_bound} at z = {zg[k]:.3f}, w = {wg[k]:.3f}"
        )
    at0 = coeff_matrix(zs, np.zeros_like(zs))
    w0_residual = float(np.max(np.abs(at0[..., :, 0])))

    # fiberwise rank check: near-singular Jacobians must be rare in each fiber
    wfine = 0.97 * np.exp(1j * 2 * np.pi * np.arange(24) / 24)
    for z0 in zs[::4]:
        dg = family.jacobian(np.full_like(wfine, z0), wfine, step=fd_step)
        dets = np.abs(np.linalg.det(dg))
        frac = float(np.mean(dets < 1e-8 * np.median(dets)))
        if frac > singular_fraction:
            raise ValueError(f"singular set not discrete in the fiber over z = {z0:.3f}")

    def c(z, w):
        return -coeff_matrix(z, w)[..., 0, 0]

    def d(z, w):
        return -coeff_matrix(z, w)[..., 1, 0]

    def cd_over_w(z, w, floor: float = 1e-6):
        w = np.asarray(w, complex)
        mag = np.abs(w)
        unit = np.where(mag > 0, w / np.where(mag == 0, 1, mag), 1.0)
        w_eff = unit * np.maximum(mag, floor)
        atil = coeff_matrix(np.asarray(z, complex), w_eff)
        return -atil[..., 0, 0] / w_eff, -atil[..., 1, 0] / w_eff

    coeffs = EllipticCoefficients(c=c, d=d, gamma=family.gamma, c_bound=c_bound,
                                  cd_over_w=cd_over_w)
    object.__setattr__(coeffs, "_w0_residual", w0_residual)
    return coeffs
