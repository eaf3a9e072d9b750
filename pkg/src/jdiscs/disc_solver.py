"""Solvers producing J-holomorphic discs.

Small discs through a point with prescribed direction, deformations pinned at
the center and one more point, translation of a big disc's center, kernel
detection and augmentation for the linearized deformation operator, and
immersion repair.  Every solver reduces to a fixed point of

    f = (holomorphic data) - T_*[ A(f) conj(f_z) + lower order ]

for a suitably normalized Cauchy-Green transform T_*, which is a contraction
once the structure has been tamed by a normalizing chart.  Every returned
disc is checked against the literal holomorphy equation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cauchy_green import (
    cauchy_green_arrays,
    hermite_polynomial_fit,
    pinned_operator_norm,
    pinned_transform_arrays,
)
from .grid import DiscFunction, PolarGrid, wirtinger_arrays
from .structure import (
    AcStructure,
    Chart,
    ComplexMatrixField,
    GraphCoordinates,
    complex_matrix,
    complexify,
    graph_coordinates,
    normalizing_chart,
    realify,
)

__all__ = [
    "SolveReport",
    "ContractionError",
    "BasinError",
    "KernelAmbiguityError",
    "KernelResult",
    "LinearCoefficientModel",
    "holomorphic_residual",
    "solve_small_disc",
    "solve_pinned_disc",
    "two_point_disc",
    "linearization_kernel",
    "kernel_of_linearized",
    "solve_augmented",
    "translate_center",
    "translate_basin_radius",
    "immersion_repair",
]

DEFAULT_GRID = PolarGrid(32, 128)

RESIDUAL_TOL = 1e-8
PIN_TOL = 1e-9


class ContractionError(RuntimeError):
    """Fixed-point iteration failed to contract."""


class BasinError(RuntimeError):
    """Requested data lies outside the solver's convergence basin."""


class KernelAmbiguityError(RuntimeError):
    """Singular value gap too small to decide the kernel dimension."""


@dataclass
class SolveReport:
    iterations: int
    residual: float
    contraction_estimate: float
    kernel_dimension: int = 0
    pins_error: float = 0.0
    lambda_scale: float | None = None
    condition_number: float | None = None
    notes: dict = field(default_factory=dict)


def holomorphic_residual(f: DiscFunction, a_field: ComplexMatrixField) -> float:
    """Sup norm of f_zbar + A(f) conj(f_z), the literal holomorphy defect."""
    fz, fzb = wirtinger_arrays(f.grid, f.values)
    res = fzb + a_field.apply_conj(f.values, fz)
    return float(np.max(np.linalg.norm(res, axis=-1)))


# ---------------------------------------------------------------------------
# generic damped fixed-point driver

def _fixed_point(step, x0: np.ndarray, *, tol: float, max_iter: int,
                 damping: float = 1.0, use_aitken: bool = True, label: str = "solve"):
    x = x0.copy()
    scale = max(1.0, float(np.max(np.abs(x0))))
    prev_inc = None
    ratios: list[float] = []
    history: list[np.ndarray] = [x.copy()]
    for it in range(1, max_iter + 1):
        xn = step(x)
        if damping != 1.0:
            xn = x + damping * (xn - x)
        inc = float(np.max(np.abs(xn - x)))
        if prev_inc is not None and prev_inc > 0:
            ratios.append(inc / prev_inc)
        x = xn
        history.append(x.copy())
        if len(history) > 3:
            history.pop(0)
        if inc < tol * scale:
            contraction = float(np.median(ratios)) if ratios else 0.0
            return x, it, contraction
        if use_aitken and it % 4 == 0 and len(history) == 3:
            x = _aitken(history)
            history = [x.copy()]
            prev_inc = None
            continue
        if len(ratios) >= 5 and np.median(ratios[-5:]) > 1.02 and inc > 1e3 * tol * scale:
            raise ContractionError(
                f"{label}: iteration diverging (ratio {np.median(ratios[-5:]):.3f})"
            )
        prev_inc = inc
    contraction = float(np.median(ratios)) if ratios else 1.0
    if contraction >= 1.0:
        raise ContractionError(f"{label}: no contraction after {max_iter} iterations")
    raise ContractionError(
        f"{label}: tolerance not reached in {max_iter} iterations "
        f"(contraction {contraction:.3f})"
    )


def _aitken(history):
    """Elementwise Aitken extrapolation with a safeguard mask."""
    x0, x1, x2 = history
    d1 = x1 - x0
    d2 = x2 - x1
    denom = d2 - d1
    scale = np.max(np.abs(x2)) + 1e-300
    mask = np.abs(denom) > 1e-10 * scale
    out = x2.copy()
    out[mask] = x2[mask] - d2[mask] ** 2 / denom[mask]
    return out


# ---------------------------------------------------------------------------
# small discs and pinned deformations

def _hermite_at_zero(grid: PolarGrid, w_vals: np.ndarray) -> np.ndarray:
    """Subtract value and z-derivative at 0 (the order-1 pin fast path)."""
    w = DiscFunction(grid, w_vals)
    wz = DiscFunction(grid, wirtinger_arrays(grid, w_vals)[0])
    w0 = w.evaluate(0)
    wz0 = wz.evaluate(0)
    corr = w0[None, None, :] + grid.zeta[:, :, None] * wz0[None, None, :]
    return w_vals - corr


def solve_small_disc(structure: AcStructure, p, v, *, grid: PolarGrid = DEFAULT_GRID,
                     eps_chart: float = 0.08, radius: float = 0.35,
                     tol: float = RESIDUAL_TOL, max_iter: int = 60,
                     damping: float = 1.0) -> tuple[DiscFunction, SolveReport]:
    """Small J-holomorphic disc with f(0) = p and df(0)(d/dx) a positive
    multiple of v (reported as ``lambda_scale``).

    Works in a normalizing chart at p, where the line disc is an approximate
    solution and the correction operator is a small perturbation of the
    identity; halves the disc radius if the iteration refuses to contract.
    """
    v = np.atleast_1d(np.asarray(v, dtype=complex))
    if np.linalg.norm(v) == 0:
        raise ValueError("direction v must be nonzero")
    chart = normalizing_chart(structure, p, eps_chart)
    a_chart = complex_matrix(chart.pulled)
    v_chart = chart.push_vector(v)
    unit = v_chart / np.linalg.norm(v_chart)
    zeta = grid.zeta

    last_exc = None
    for attempt in range(9):
        rad = radius * 0.5**attempt
        seed = rad * zeta[:, :, None] * unit[None, None, :]

        def step(fv):
            fz = wirtinger_arrays(grid, fv)[0]
            term = a_chart.apply_conj(fv, fz)
            w = cauchy_green_arrays(grid, term)
            return seed - _hermite_at_zero(grid, w)

        try:
            fv, it, contraction = _fixed_point(
                step, seed, tol=1e-13, max_iter=max_iter, damping=damping,
                label="small-disc")
        except ContractionError as exc:
            last_exc = exc
            continue
        f_chart = DiscFunction(grid, fv)
        f_out = DiscFunction(grid, chart.inverse(fv))
        res = holomorphic_residual(f_out, complex_matrix(structure))
        if res > tol:
            last_exc = ContractionError(f"small-disc: residual {res:.2e} above {tol:.1e}")
            continue
        fz, fzb = wirtinger_arrays(grid, f_out.values)
        d0 = DiscFunction(grid, fz + fzb).evaluate(0)
        lam = float(np.linalg.norm(d0) / np.linalg.norm(v))
        report = SolveReport(iterations=it, residual=res, contraction_estimate=contraction,
                             lambda_scale=lam,
                             notes={"chart_scale": chart.scale, "disc_radius": rad})
        return f_out, report
    raise last_exc if last_exc is not None else ContractionError("small-disc failed")


def _holomorphic_part(grid: PolarGrid, vals: np.ndarray) -> np.ndarray:
    modes = np.fft.fft(vals, axis=1)
    modes[:, grid.angular_modes < 0, :] = 0.0
    return np.fft.ifft(modes, axis=1)


def solve_pinned_disc(structure: AcStructure, seed: DiscFunction, b: complex,
                      *, a_field: ComplexMatrixField | None = None,
                      tol: float = RESIDUAL_TOL, max_iter: int = 80,
                      damping: float = 1.0) -> tuple[DiscFunction, SolveReport]:
    """Deform the holomorphic part of the seed into a J-holomorphic disc
    agreeing with it at 0 and at b.

    The pin radius is capped at 1/2, the regime where the pinned transform is
    uniformly bounded.  The structure is evaluated along the iterates, so the
    seed must live well inside its chart domain (use a normalizing chart
    first for rough structures).
    """
    b = complex(b)
    if not (0 < abs(b) <= 0.5 + 1e-12):
        raise ValueError("pin radius bound: b must satisfy 0 < |b| <= 1/2")
    grid = seed.grid
    a = a_field if a_field is not None else complex_matrix(structure)
    phi = _holomorphic_part(grid, seed.values)

    def step(fv):
        fz = wirtinger_arrays(grid, fv)[0]
        term = a.apply_conj(fv, fz)
        return phi - pinned_transform_arrays(grid, term, b)

    fv, it, contraction = _fixed_point(step, phi, tol=1e-13, max_iter=max_iter,
                                       damping=damping, label="pinned-disc")
    f = DiscFunction(grid, fv)
    res = holomorphic_residual(f, a)
    phi_f = DiscFunction(grid, phi)
    pins = max(
        float(np.linalg.norm(f.evaluate(0) - phi_f.evaluate(0))),
        float(np.linalg.norm(f.evaluate(b) - phi_f.evaluate(b))),
    )
    if res > tol:
        raise ContractionError(f"pinned-disc: residual {res:.2e} above {tol:.1e}")
    return f, SolveReport(iterations=it, residual=res, contraction_estimate=contraction,
                          pins_error=pins)


@dataclass
class TwoPointDisc:
    disc: DiscFunction
    b: float                  # pin location on the disc (negative real)
    chart: Chart
    report: SolveReport


def two_point_disc(structure: AcStructure, p, q, *, grid: PolarGrid = DEFAULT_GRID,
                   eps_chart: float = 0.08, tol: float = RESIDUAL_TOL) -> TwoPointDisc:
    """Disc centered at q passing through p at the parameter -|psi(q)|.

    psi is a normalizing chart at p; the seed is the affine disc through the
    chart images and the pinned solver corrects it without moving either
    point.  Requires q close enough to p that the chart distance stays within
    the pin bound.
    """
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    q = np.atleast_1d(np.asarray(q, dtype=complex))
    chart = normalizing_chart(structure, p, eps_chart)
    psi_q = chart.forward(q)
    rho = float(np.linalg.norm(psi_q))
    if rho < 1e-13:
        f = DiscFunction.constant(grid, p)
        rep = SolveReport(iterations=0, residual=0.0, contraction_estimate=0.0)
        return TwoPointDisc(disc=f, b=-0.0, chart=chart, report=rep)
    if rho > 0.5:
        raise BasinError(
            f"q too far from p: chart distance {rho:.3f} exceeds the pin bound 1/2"
        )
    b = -rho
    seed_vals = psi_q[None, None, :] * (1.0 + grid.zeta / rho)[:, :, None]
    seed = DiscFunction(grid, seed_vals)
    f_chart, rep = solve_pinned_disc(chart.pulled, seed, b, tol=tol)
    f = DiscFunction(grid, chart.inverse(f_chart.values))
    pin0 = float(np.linalg.norm(f.evaluate(0) - q))
    pinb = float(np.linalg.norm(f.evaluate(b) - p))
    rep.pins_error = max(pin0, pinb)
    rep.notes["chart_scale"] = chart.scale
    res = holomorphic_residual(f, complex_matrix(structure))
    rep.residual = res
    if res > 10 * tol:
        raise ContractionError(f"two-point disc residual {res:.2e}")
    return TwoPointDisc(disc=f, b=b, chart=chart, report=rep)


# ---------------------------------------------------------------------------
# linearized deformation operator: kernel detection and augmentation

@dataclass(frozen=True, eq=False)
class LinearCoefficientModel:
    """Deformation model with a(zeta, w) = B1 w + B2 conj(w) and A = 0.

    Satisfies the same protocol as GraphCoordinates for the augmented solver;
    used to exercise kernel machinery on engineered coefficient sets.
    """

    grid: PolarGrid
    n: int
    b1: np.ndarray  # (m, n_ang, n, n)
    b2: np.ndarray

    def coefficients(self, w_values, zeta=None):
        if zeta is not None:
            raise NotImplementedError("linear model is grid-only")
        a = (np.einsum("...ij,...j->...i", self.b1, w_values)
             + np.einsum("...ij,...j->...i", self.b2, np.conj(w_values)))
        return a, np.zeros(w_values.shape + (self.n,), complex), 0.0

    def deformation_term(self, h_vals, hz_vals):
        a, _, _ = self.coefficients(h_vals)
        return a


@dataclass
class KernelResult:
    dimension: int
    basis: list
    singular_values: np.ndarray | None
    method: str
    norm_bound: float | None = None


def _linearized_b_fields(coords, h: float = 1e-5):
    """B1 = da/dw, B2 = da/dwbar at w = 0 by central differences per direction."""
    if isinstance(coords, LinearCoefficientModel):
        return coords.b1, coords.b2
    grid = coords.grid
    n = coords.n
    shape = (grid.n_radial, grid.n_angular, n)
    b1 = np.zeros(shape + (n,), complex)
    b2 = np.zeros(shape + (n,), complex)
    for j in range(n):
        e = np.zeros(shape, complex)
        e[:, :, j] = 1.0
        ax = (coords.coefficients(h * e)[0] - coords.coefficients(-h * e)[0]) / (2 * h)
        ay = (coords.coefficients(1j * h * e)[0] - coords.coefficients(-1j * h * e)[0]) / (2 * h)
        b1[..., j] = 0.5 * (ax - 1j * ay)
        b2[..., j] = 0.5 * (ax + 1j * ay)
    return b1, b2


def _apply_linearized(grid, b1, b2, b_pin, v_vals):
    term = (np.einsum("...ij,...j->...i", b1, v_vals)
            + np.einsum("...ij,...j->...i", b2, np.conj(v_vals)))
    return v_vals + pinned_transform_arrays(grid, term, b_pin)


def _real_stack(v: np.ndarray) -> np.ndarray:
    return np.concatenate([v.real.ravel(), v.imag.ravel()])


def _real_unstack(x: np.ndarray, shape) -> np.ndarray:
    half = x.size // 2
    return (x[:half] + 1j * x[half:]).reshape(shape)


def _l2_inner(grid: PolarGrid, f_vals: np.ndarray, g_vals: np.ndarray) -> float:
    """Real L2 pairing Re sum_j int f_j conj(g_j) dA on the grid."""
    w = grid.area_weights[:, None, None]
    return float(np.sum((f_vals * np.conj(g_vals)).real * w))


def _perturbation_spectral_radius(grid, b1, b2, b_pin, *, iters: int = 14,
                                  seed: int = 11) -> float:
    """Power-iteration estimate of the spectral radius of
    V -> T_{0,b}(B1 V + B2 conj(V)) (the deviation of the linearization
    from the identity)."""
    rng = np.random.default_rng(seed)
    shape = b1.shape[:-1]
    v = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    v /= np.max(np.abs(v))
    growth = []
    for _ in range(iters):
        term = (np.einsum("...ij,...j->...i", b1, v)
                + np.einsum("...ij,...j->...i", b2, np.conj(v)))
        v_new = pinned_transform_arrays(grid, term, b_pin)
        nrm = float(np.max(np.abs(v_new)))
        if nrm == 0.0:
            return 0.0
        growth.append(nrm)
        v = v_new / nrm
    return float(np.median(growth[-5:]))


def kernel_of_linearized(grid: PolarGrid, n: int, b1, b2, b_pin: complex, *,
                         sv_rel: float = 1e-6, dense_cap: int = 4096,
                         try_norm_bound: bool = True,
                         force_dense: bool = False) -> KernelResult:
    """Numerical kernel of V -> V + T_{0,b}(B1 V + B2 conj(V)).

    If an empirical operator-norm product (or, failing that, a power
    iteration on the perturbation) certifies a contraction, the kernel is
    trivially empty; otherwise the operator is assembled densely as a
    real-linear map and its kernel read off the singular values below
    ``sv_rel`` times the largest.  An ambiguous gap around the threshold
    raises rather than guessing.
    """
    bsup = float(np.max(np.linalg.norm(b1, ord=2, axis=(-2, -1))
                        + np.linalg.norm(b2, ord=2, axis=(-2, -1))))
    norm_t = pinned_operator_norm(grid, b_pin)
    bound = norm_t * bsup
    if try_norm_bound and not force_dense and bound < 0.9:
        return KernelResult(dimension=0, basis=[], singular_values=None,
                            method="norm-bound", norm_bound=bound)
    if try_norm_bound and not force_dense:
        rho = _perturbation_spectral_radius(grid, b1, b2, b_pin)
        if rho < 0.85:
            return KernelResult(dimension=0, basis=[], singular_values=None,
                                method="power-iteration", norm_bound=rho)
    dim = 2 * grid.n_radial * grid.n_angular * n
    if dim > dense_cap:
        raise ValueError(
            f"dense kernel assembly needs dimension {dim} > cap {dense_cap}; "
            "use a coarser grid"
        )
    shape = (grid.n_radial, grid.n_angular, n)
    mat = np.empty((dim, dim))
    basis_vec = np.zeros(dim)
    for k in range(dim):
        basis_vec[k] = 1.0
        v = _real_unstack(basis_vec, shape)
        mat[:, k] = _real_stack(_apply_linearized(grid, b1, b2, b_pin, v))
        basis_vec[k] = 0.0
    u, s, vt = np.linalg.svd(mat)
    smax = s[0]
    thr = sv_rel * smax
    small = s <= thr
    ndim = int(np.count_nonzero(small))
    in_gap = (s > thr) & (s < 10 * thr)
    if np.any(in_gap):
        raise KernelAmbiguityError(
            f"singular values {s[in_gap]} sit inside the threshold decade "
            f"({thr:.2e}); kernel dimension is ambiguous at this resolution"
        )
    basis = []
    for k in range(dim - ndim, dim):
        vec = _real_unstack(vt[k], shape)
        basis.append(vec)
    # re-orthonormalize in the weighted real L2 inner product
    ortho = []
    for vec in basis:
        for prev in ortho:
            vec = vec - _l2_inner(grid, vec, prev) * prev
        nrm = np.sqrt(_l2_inner(grid, vec, vec))
        if nrm > 1e-12:
            ortho.append(vec / nrm)
    return KernelResult(dimension=len(ortho),
                        basis=[DiscFunction(grid, v) for v in ortho],
                        singular_values=s, method="dense", norm_bound=bound)


def linearization_kernel(coords, b: complex, *, sv_rel: float = 1e-6,
                         dense_cap: int = 4096, force_dense: bool = False) -> KernelResult:
    """Kernel of the deformation operator linearized at the zero section.

    The coefficient fields B1, B2 are the w-derivatives of the inhomogeneous
    term at w = 0; there is no derivative term because the pushed-forward
    matrix vanishes on the zero section.
    """
    b1, b2 = _linearized_b_fields(coords)
    return kernel_of_linearized(coords.grid, coords.n, b1, b2, b,
                                sv_rel=sv_rel, dense_cap=dense_cap,
                                force_dense=force_dense)


def _augmentation_polynomials(grid: PolarGrid, n: int, b: complex, count: int,
                              scale: float = 1e-3):
    """Small holomorphic vector polynomials z(z-b) z^k e_c vanishing at 0 and b."""
    polys = []
    zs = grid.zeta
    for j in range(count):
        k = j // n
        comp = j % n
        prof = zs * (zs - b) * zs**k
        prof = prof / max(np.max(np.abs(prof)), 1e-300) * scale
        vals = np.zeros(zs.shape + (n,), complex)
        vals[:, :, comp] = prof
        polys.append(vals)
    return polys


def solve_augmented(coords, b: complex, phi: DiscFunction, *,
                    kernel: KernelResult | None = None,
                    tol: float = RESIDUAL_TOL, max_iter: int = 80,
                    pj_scale: float = 1e-3, dense_cap: int = 4096,
                    damping: float = 1.0) -> tuple[DiscFunction, SolveReport]:
    """Solve the pinned deformation equation with holomorphic data phi.

    phi must vanish at 0 and b (then the solution h keeps h(0) = phi(0) = 0
    and h(b) = 0, i.e. the reconstructed disc preserves both pins).  If the
    linearization has a kernel, the operator is augmented by rank-one terms
    against small holomorphic polynomials, which restores invertibility
    without disturbing holomorphy or the pins; in that regime a dense
    quasi-Newton iteration is used and its condition number reported.
    """
    grid = coords.grid
    n = coords.n
    if kernel is None:
        # the plain iteration is the generic regime; kernel machinery is the
        # exception, so probe it only after the iteration refuses to contract
        try:
            return solve_augmented(coords, b, phi,
                                   kernel=KernelResult(0, [], None, "picard-first"),
                                   tol=tol, max_iter=max_iter, pj_scale=pj_scale,
                                   dense_cap=dense_cap, damping=damping)
        except ContractionError:
            b1, b2 = _linearized_b_fields(coords)
            kernel = kernel_of_linearized(grid, n, b1, b2, b, dense_cap=dense_cap,
                                          try_norm_bound=False)
            if kernel.dimension == 0:
                raise
    nker = kernel.dimension
    phi_vals = phi.values

    if nker == 0:
        def step(hv):
            hz = wirtinger_arrays(grid, hv)[0]
            term = coords.deformation_term(hv, hz)
            return phi_vals - pinned_transform_arrays(grid, term, b)

        hv, it, contraction = _fixed_point(step, phi_vals, tol=1e-13,
                                           max_iter=max_iter, damping=damping,
                                           label="augmented-solve")
        cond = None
    else:
        b1, b2 = _linearized_b_fields(coords)
        polys = _augmentation_polynomials(grid, n, b, nker, scale=pj_scale)
        wbasis = [w.values for w in kernel.basis]
        dim = 2 * grid.n_radial * grid.n_angular * n
        if dim > dense_cap:
            raise ValueError("grid too large for the dense augmented solve")
        shape = (grid.n_radial, grid.n_angular, n)

        def apply_aug_lin(v):
            out = _apply_linearized(grid, b1, b2, b, v)
            for wj, pj in zip(wbasis, polys):
                out = out + _l2_inner(grid, v, wj) * pj
            return out

        mat = np.empty((dim, dim))
        e = np.zeros(dim)
        for k in range(dim):
            e[k] = 1.0
            mat[:, k] = _real_stack(apply_aug_lin(_real_unstack(e, shape)))
            e[k] = 0.0
        cond = float(np.linalg.cond(mat))

        def residual_map(hv):
            hz = wirtinger_arrays(grid, hv)[0]
            term = coords.deformation_term(hv, hz)
            out = hv + pinned_transform_arrays(grid, term, b) - phi_vals
            for wj, pj in zip(wbasis, polys):
                out = out + _l2_inner(grid, hv, wj) * pj
            return out

        hv = phi_vals.copy()
        it = 0
        scale = max(1.0, float(np.max(np.abs(phi_vals))))
        from scipy.linalg import lu_factor, lu_solve
        lu = lu_factor(mat)
        for it in range(1, max_iter + 1):
            r = residual_map(hv)
            rn = float(np.max(np.abs(r)))
            if rn < 1e-13 * scale:
                break
            hv = hv - _real_unstack(lu_solve(lu, _real_stack(r)), shape)
        contraction = 0.0

    h = DiscFunction(grid, hv)
    hz, hzb = wirtinger_arrays(grid, hv)
    a_vec, a_mat, _ = coords.coefficients(hv)
    res_field = hzb + np.einsum("...ij,...j->...i", a_mat, np.conj(hz)) + a_vec
    res = float(np.max(np.linalg.norm(res_field, axis=-1)))
    phi_df = phi
    pins = max(
        float(np.linalg.norm(h.evaluate(0) - phi_df.evaluate(0))),
        float(np.linalg.norm(h.evaluate(b) - phi_df.evaluate(b))),
    )
    if res > tol:
        raise ContractionError(f"augmented solve residual {res:.2e} above {tol:.1e}")
    return h, SolveReport(iterations=it, residual=res, contraction_estimate=contraction,
                          kernel_dimension=nker, pins_error=pins,
                          condition_number=cond)


# ---------------------------------------------------------------------------
# center translation

def translate_center(structure: AcStructure, f_p: DiscFunction, b: complex, q, *,
                     coords: GraphCoordinates | None = None,
                     kernel: KernelResult | None = None,
                     tol: float = RESIDUAL_TOL, pin_tol: float = PIN_TOL,
                     max_iter: int = 80) -> tuple[DiscFunction, SolveReport]:
    """Disc centered at q agreeing with f_p at the parameter b.

    Solves the deformation equation with the affine data (1 - w/b) s, where s
    is the fiber offset of q over the center; both pins hold exactly by the
    structure of the pinned operator.  Raises BasinError when q is too far
    for the iteration to contract.
    """
    b = complex(b)
    if not (0 < abs(b) < 1):
        raise ValueError("b must lie in the punctured disc")
    if coords is None:
        coords = graph_coordinates(structure, f_p)
    grid = coords.grid
    q = np.atleast_1d(np.asarray(q, dtype=complex))
    s = coords.fiber_offset(q, zeta=0.0)
    phi_vals = (1.0 - grid.zeta / b)[:, :, None] * s[None, None, :]
    phi = DiscFunction(grid, phi_vals)
    try:
        h, rep = solve_augmented(coords, b, phi, kernel=kernel, tol=tol,
                                 max_iter=max_iter)
    except ContractionError as exc:
        raise BasinError(f"q outside the translation basin: {exc}") from exc
    g = coords.reconstruct_disc(h)
    pin0 = float(np.linalg.norm(g.evaluate(0) - q))
    pinb = float(np.linalg.norm(g.evaluate(b) - f_p.evaluate(b)))
    rep.pins_error = max(pin0, pinb)
    if rep.pins_error > 100 * pin_tol:
        raise BasinError(f"pins drifted by {rep.pins_error:.2e}; q outside basin")
    return g, rep


def translate_basin_radius(structure: AcStructure, f_p: DiscFunction, b: complex, *,
                           direction=None, start: float = 0.5,
                           shrink: float = 0.5, attempts: int = 12) -> float:
    """Empirical radius within which translate_center succeeds, by bisection."""
    coords = graph_coordinates(structure, f_p)
    n = coords.n
    d = np.zeros(n, complex)
    if direction is None:
        d[0] = 1.0
    else:
        d = np.asarray(direction, complex)
        d = d / np.linalg.norm(d)
    center = f_p.evaluate(0)
    rad = start
    for _ in range(attempts):
        try:
            translate_center(structure, f_p, b, center + rad * d, coords=coords)
            return rad
        except (BasinError, ContractionError):
            rad *= shrink
    return 0.0


# ---------------------------------------------------------------------------
# immersion repair

def _critical_points(f: DiscFunction, *, rel_floor: float = 5e-2,
                     newton_steps: int = 40, inside_margin: float = 1e-3):
    """Zeros of f_z inside the disc by grid seeding plus Gauss-Newton."""
    grid = f.grid
    fz_vals = wirtinger_arrays(grid, f.values)[0]
    fz = DiscFunction(grid, fz_vals)
    d1 = DiscFunction(grid, wirtinger_arrays(grid, fz_vals)[0])   # f_zz
    d1b = DiscFunction(grid, wirtinger_arrays(grid, fz_vals)[1])  # f_z zbar
    mag = np.linalg.norm(fz_vals, axis=-1)
    top = float(np.max(mag))
    if top == 0.0:
        return [], fz
    seeds = []
    mask = mag < rel_floor * top
    idx = np.argwhere(mask)
    for k, a in idx:
        seeds.append(grid.zeta[k, a])
    roots = []
    for z0 in seeds:
        z = complex(z0)
        ok = False
        for _ in range(newton_steps):
            val = fz.evaluate(z)
            if np.linalg.norm(val) < 1e-12 * top:
                ok = True
                break
            jz = d1.evaluate(z)
            jzb = d1b.evaluate(z)
            # real 2x2(n) system for the step in (Re z, Im z)
            a_mat = np.concatenate([
                np.stack([(jz + jzb).real, (1j * (jz - jzb)).real], axis=-1),
                np.stack([(jz + jzb).imag, (1j * (jz - jzb)).imag], axis=-1),
            ], axis=0)
            rhs = -np.concatenate([val.real, val.imag])
            step_xy, *_ = np.linalg.lstsq(a_mat, rhs, rcond=None)
            z = z + step_xy[0] + 1j * step_xy[1]
            if abs(z) > 1.2:
                break
        if ok and abs(z) <= 1 - inside_margin:
            if all(abs(z - r) > 1e-6 for r in roots):
                roots.append(z)
        elif ok and abs(z) > 1 - inside_margin:
            raise ValueError(
                f"critical point at |zeta| = {abs(z):.4f} too close to the boundary; "
                "shrink the disc parameter first"
            )
    return roots, fz


def immersion_repair(structure: AcStructure, f: DiscFunction, pins, *,
                     v_scale: float = 1e-2, lam: float = 0.18,
                     lam_budget: int = 12, tol: float = RESIDUAL_TOL,
                     max_iter: int = 60) -> tuple[DiscFunction, SolveReport]:
    """Immersed J-holomorphic disc close to f, agreeing with f at the pins.

    Detects the critical points, pushes the disc along small transverse
    directions there (an interpolating correction pinned at every requested
    point, with prescribed first derivative at each critical point), and
    shrinks the push until the derivative is nonvanishing on the grid.
    """
    from .cauchy_green import cauchy_green_arrays as _cg  # local alias
    grid = f.grid
    a_struct = complex_matrix(structure)
    crits, fz = _critical_points(f)
    if not crits:
        rep = SolveReport(iterations=0, residual=holomorphic_residual(f, a_struct),
                          contraction_estimate=0.0, notes={"critical_points": []})
        return f, rep

    coords = graph_coordinates(structure, f, frame_seed="basis")
    n = coords.n
    sup_f = f.sup_norm()
    # transverse directions from the first nonvanishing jet, in fiber coords
    derivs = []
    cur = f.values
    jets = []
    for _ in range(4):
        cur = wirtinger_arrays(grid, cur)[0]
        jets.append(DiscFunction(grid, cur))
    vdirs = []
    for a_j in crits:
        t_dir = None
        for jet in jets:
            val = jet.evaluate(a_j)
            if np.linalg.norm(val) > 1e-5 * max(sup_f, 1.0):
                t_dir = val
                break
        if t_dir is None:
            t_dir = np.zeros(n, complex)
            t_dir[0] = 1.0
        _, _, einv, *_ = coords._fields_at(a_j)
        t_fiber = complexify(np.einsum("ij,...j->...i", einv[0], realify(t_dir)))
        if n == 2:
            v = np.array([-np.conj(t_fiber[1]), np.conj(t_fiber[0])])
            nrm = np.linalg.norm(v)
            v = v / nrm if nrm > 1e-14 else np.array([0.0, 1.0], complex)
        else:
            v = np.ones(1, complex)
        vdirs.append(v * v_scale * max(sup_f, 1e-2))

    pin_pts = [(complex(z), 0) for z in pins]
    crit_pts = [(complex(z), 1) for z in crits]
    cond_points = pin_pts + crit_pts
    zero = np.zeros(n, complex)
    values = [zero] * len(cond_points)
    derivs = [zero] * len(pin_pts) + vdirs
    coef, cond = hermite_polynomial_fit(cond_points, values, derivs)
    zs = grid.zeta
    phi_vals = np.zeros(zs.shape + (n,), complex)
    for c in coef[::-1]:
        phi_vals = phi_vals * zs[:, :, None] + c[None, None, :]

    def t_interp(term_vals):
        """Transform vanishing at the pins and to first order at the criticals."""
        w_vals = _cg(grid, term_vals)
        w = DiscFunction(grid, w_vals)
        wz = DiscFunction(grid, wirtinger_arrays(grid, w_vals)[0])
        vals = [w.evaluate(z) for z, _ in cond_points]
        ders = [wz.evaluate(z) if o else np.zeros(n, complex) for z, o in cond_points]
        pc, _ = hermite_polynomial_fit(cond_points, vals, ders)
        corr = np.zeros_like(w_vals)
        for c in pc[::-1]:
            corr = corr * zs[:, :, None] + c[None, None, :]
        return w_vals - corr

    last_profile = None
    lam_k = lam
    for _ in range(lam_budget):
        target = lam_k * phi_vals

        def step(hv):
            hz = wirtinger_arrays(grid, hv)[0]
            term = coords.deformation_term(hv, hz)
            return target - t_interp(term)

        hv, it, contraction = _fixed_point(step, target, tol=1e-13,
                                           max_iter=max_iter, label="immersion-repair")
        g = coords.reconstruct_disc(DiscFunction(grid, hv))
        gz_vals = wirtinger_arrays(grid, g.values)[0]
        gz = DiscFunction(grid, gz_vals)
        mag = np.linalg.norm(gz_vals, axis=-1)
        # refine the grid minimum near each former critical point
        min_val = float(np.min(mag))
        for a_j in crits:
            for dz in [0, 0.3 * (grid.radii[0])]:
                for ang in (0, np.pi / 3, 2 * np.pi / 3):
                    val = gz.evaluate(a_j + dz * np.exp(1j * ang))
                    min_val = min(min_val, float(np.linalg.norm(val)))
        last_profile = min_val
        if min_val > 1e-8 * max(np.max(mag), 1e-300):
            res = holomorphic_residual(g, a_struct)
            pins_err = max(
                (float(np.linalg.norm(g.evaluate(z) - f.evaluate(z))) for z in pins),
                default=0.0,
            )
            if res > tol:
                raise ContractionError(f"immersion repair residual {res:.2e}")
            rep = SolveReport(iterations=it, residual=res,
                              contraction_estimate=contraction,
                              pins_error=pins_err, condition_number=cond,
                              notes={"critical_points": crits, "lambda": lam_k,
                                     "min_derivative": min_val,
                                     "distance": float(np.max(np.linalg.norm(g.values - f.values, axis=-1)))})
            return g, rep
        lam_k *= 0.5
    raise ContractionError(
        f"no lambda in budget yields an immersion (last min |g_z| = {last_profile:.3e})"
    )
