"""Envelope estimation for the disc functionals.

Envelopes are infima over discs through a point, so any family of valid
candidate discs gives a certified upper bound.  The candidate engine combines
the constant disc, deformed two-pin discs aimed at each weight atom (with the
minimal feasible hit radius found by bisection), and a derivative-free
simplex polish of the seed parameters.

The Lelong-envelope estimator additionally runs the boundary-gluing
construction: near-extremal discs over a partition of boundary arcs are
extended to a smooth disc family by center translation, shrunk near the arc
junctions, pushed to an elliptic system on the bidisc, attached to the torus
by the winding ansatz, and reassembled into a single disc whose atom
preimages are certified by argument-principle root counting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .cauchy_green import pinned_transform_arrays
from .disc_solver import (
    BasinError,
    ContractionError,
    _fixed_point,
    solve_small_disc,
    translate_center,
    two_point_disc,
)
from .functionals import (
    Arc,
    NEG_INF,
    WeightAtoms,
    k_functional,
    lelong_functional,
    poisson_functional,
    root_count,
)
from .grid import DiscFunction, PolarGrid, wirtinger_arrays
from .structure import (
    AcStructure,
    Chart,
    DiscFamily,
    complex_matrix,
    complexify,
    elliptic_coefficients,
    graph_coordinates,
    normalizing_chart,
)
from .torus_attach import RhConvergenceError, solve_rh

__all__ = [
    "EnvelopeEstimate",
    "EnvelopeStageError",
    "GluingParams",
    "estimate_k_alpha",
    "estimate_poisson_envelope",
    "estimate_lelong_envelope",
    "verify_disc_formula",
]

CANDIDATE_GRID = PolarGrid(24, 128)


class EnvelopeStageError(RuntimeError):
    """Failure of a named stage of the envelope pipeline."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


@dataclass
class EnvelopeEstimate:
    point: np.ndarray
    value: float
    witness: DiscFunction | None
    history: list = field(default_factory=list)   # (candidate id, value)
    flags: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def record(self, cid: str, value: float):
        self.history.append((cid, value))
        if value < self.value:
            self.value = value


@dataclass
class _Candidate:
    disc: DiscFunction
    cid: str
    pin: float | None = None          # disc parameter where the atom is hit
    atom: np.ndarray | None = None
    atom_mass: float = 0.0
    chart: Chart | None = None


def _solve_two_pin(chart: Chart, a_field, seed_vals: np.ndarray, s: float,
                   grid: PolarGrid, *, max_iter: int = 60) -> np.ndarray:
    """Chart-level deformation pinned at 0 and at the real parameter s."""

    def step(fv):
        fz = wirtinger_arrays(grid, fv)[0]
        term = a_field.apply_conj(fv, fz)
        return seed_vals - pinned_transform_arrays(grid, term, s)

    fv, _, _ = _fixed_point(step, seed_vals, tol=1e-13, max_iter=max_iter,
                            label="aimed-candidate")
    return fv


def _aimed_candidate(structure: AcStructure, chart: Chart, a_chart, y_star: np.ndarray,
                     s: float, grid: PolarGrid, *, mobius_a: complex | None = None,
                     transverse: np.ndarray | None = None) -> DiscFunction | None:
    """Solve the two-pin disc through the chart origin and y_star at parameter s.

    The seed is the Mobius profile z / (1 - conj(a) z) normalized to hit
    y_star at s; with a = s this is the extremal disc of the round model.
    Returns the disc in the original coordinates, or None when the iteration
    fails or the disc leaves the structure domain.
    """
    a = s if mobius_a is None else mobius_a
    zeta = grid.zeta
    prof = zeta / (1.0 - np.conj(a) * zeta)
    prof = prof / (s / (1.0 - np.conj(a) * s))
    seed = prof[:, :, None] * y_star[None, None, :]
    if transverse is not None:
        seed = seed + (zeta * (zeta - s))[:, :, None] * transverse[None, None, :]
    try:
        fv = _solve_two_pin(chart, a_chart, seed, s, grid)
    except ContractionError:
        return None
    f_chart = DiscFunction(grid, fv)
    # the pin is exact by construction up to the aliasing of the Mobius seed,
    # which grows like s^n_angular as the profile pole nears the boundary
    alias = min(1e-6, float(s) ** grid.n_angular)
    tol_hit = max(1e-9, alias) * max(1.0, float(np.linalg.norm(y_star)))
    if float(np.linalg.norm(f_chart.evaluate(s) - y_star)) > tol_hit:
        return None
    disc = DiscFunction(grid, chart.inverse(fv))
    # containment blurs by the interpolation error of marginally resolved seeds
    geom_tol = 1e-7 + 2.0 * disc.spectral_tail() * disc.sup_norm()
    if not structure.contains_disc(disc, margin=-geom_tol):
        return None
    return disc


def _atom_candidates(structure: AcStructure, alpha: WeightAtoms, p: np.ndarray,
                     *, grid: PolarGrid, budget: int,
                     bisect_tol: float = 2e-3, eps_chart: float = 0.08,
                     s_max: float = 0.88) -> list[_Candidate]:
    """Candidates aimed at each atom: bisect the minimal feasible hit radius,
    then polish the seed shape with a simplex around the bisection result."""
    out: list[_Candidate] = []
    try:
        chart = normalizing_chart(structure, p, eps_chart)
    except Exception:
        return out
    a_chart = complex_matrix(chart.pulled)
    for point, mass in alpha.atoms:
        y_star = chart.forward(point)

        def feasible(s):
            if not (0 < s <= s_max):
                return None
            # the chart-level hit check inside _aimed_candidate certifies the pin
            return _aimed_candidate(structure, chart, a_chart, y_star, s, grid)

        top = feasible(s_max)
        if top is None:
            continue
        lo, hi, disc_hi = 0.02, s_max, top
        d0 = feasible(lo)
        if d0 is not None:
            hi, disc_hi = lo, d0
        else:
            while hi - lo > bisect_tol:
                mid = 0.5 * (lo + hi)
                dm = feasible(mid)
                if dm is None:
                    lo = mid
                else:
                    hi, disc_hi = mid, dm
        out.append(_Candidate(disc=disc_hi, cid=f"aimed[{_fmt_pt(point)}]@s={hi:.4f}",
                              pin=hi, atom=point, atom_mass=mass, chart=chart))

        # simplex polish over (s, Re a, Im a) of the seed's Mobius parameter
        if budget >= 8:
            best = {"val": mass * np.log(hi), "cand": None}

            def objective(x):
                s, ar, ai = x
                if not (0.03 < s <= s_max) or ar * ar + ai * ai > 0.9:
                    return 1.0
                disc = _aimed_candidate(structure, chart, a_chart, y_star, s, grid,
                                        mobius_a=complex(ar, ai))
                if disc is None:
                    return 1.0
                val = mass * np.log(s)
                if val < best["val"]:
                    best["val"] = val
                    best["cand"] = _Candidate(
                        disc=disc, cid=f"simplex[{_fmt_pt(point)}]@s={s:.4f}",
                        pin=s, atom=point, atom_mass=mass, chart=chart)
                return val

            x0 = np.array([hi, hi, 0.0])
            minimize(objective, x0, method="Nelder-Mead",
                     options={"maxfev": int(budget), "xatol": 1e-3, "fatol": 1e-4})
            if best["cand"] is not None:
                out.append(best["cand"])
    return out


def _two_point_candidates(structure: AcStructure, alpha: WeightAtoms, p: np.ndarray,
                          *, grid: PolarGrid) -> list[_Candidate]:
    """Discs through each atom from the local two-point construction
    (only available when p lies within the atom's chart basin)."""
    out = []
    for point, mass in alpha.atoms:
        try:
            tp = two_point_disc(structure, point, p, grid=grid)
        except Exception:
            continue
        if not structure.contains_disc(tp.disc, margin=-1e-7):
            continue
        out.append(_Candidate(disc=tp.disc, cid=f"two-point[{_fmt_pt(point)}]",
                              pin=tp.b, atom=point, atom_mass=mass, chart=tp.chart))
    return out


def _fmt_pt(point) -> str:
    return ",".join(f"{z.real:+.3f}{z.imag:+.3f}j" for z in np.atleast_1d(point))


def estimate_k_alpha(structure: AcStructure, alpha: WeightAtoms, p, budget: int = 60,
                     *, grid: PolarGrid = CANDIDATE_GRID, seed: int = 0,
                     full_search: bool = True) -> EnvelopeEstimate:
    """Upper envelope estimate of the infimum functional at p.

    Minimizes the pointwise-infimum functional over candidate discs centered
    at p.  A weight atom at p itself forces -inf through the constant disc.
    With no reachable atom the estimate is 0 with an empty witness.
    """
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    est = EnvelopeEstimate(point=p, value=0.0, witness=None)
    if len(alpha) == 0:
        est.flags.append("empty-weight")
        return est
    if alpha.mass_at(p) > 0:
        est.value = NEG_INF
        est.witness = DiscFunction.constant(grid, p)
        est.record("constant", NEG_INF)
        return est
    cands = []
    cands += _two_point_candidates(structure, alpha, p, grid=grid)
    cands += _atom_candidates(structure, alpha, p, grid=grid, budget=budget)
    best_disc = None
    for cand in cands:
        if cand.pin is not None and cand.atom is not None:
            val = cand.atom_mass * np.log(abs(cand.pin))
        else:
            val = k_functional(cand.disc, alpha).value
        if full_search:
            kv = k_functional(cand.disc, alpha)
            val = min(val, kv.value)
        before = est.value
        est.record(cand.cid, float(val))
        if est.value < before or best_disc is None:
            best_disc = cand.disc
            est.details["best_pin"] = cand.pin
            est.details["best_atom"] = cand.atom
            est.details["best_mass"] = cand.atom_mass
            est.details["best_chart"] = cand.chart
    if not est.history:
        est.flags.append("no-candidate-hits")
        est.value = 0.0
    est.witness = best_disc
    return est


def estimate_poisson_envelope(structure: AcStructure, u, p, budget: int = 40,
                              *, grid: PolarGrid = CANDIDATE_GRID,
                              seed: int = 0) -> EnvelopeEstimate:
    """Upper estimate of the Poisson envelope at p: minimize the boundary
    average over centered candidate discs (constant disc included, so the
    estimate never exceeds u(p))."""
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    est = EnvelopeEstimate(point=p, value=np.inf, witness=None)
    const = DiscFunction.constant(grid, p)
    est.witness = const
    est.record("constant", poisson_functional(u, const))

    try:
        chart = normalizing_chart(structure, p, 0.08)
        a_chart = complex_matrix(chart.pulled)
    except Exception:
        est.flags.append("chart-failed")
        return est
    rng = np.random.default_rng(seed)
    zeta = grid.zeta
    n = structure.n
    evaluations = 0

    def try_seed(radius, dirvec, cid):
        nonlocal evaluations
        if evaluations >= budget:
            return
        seed_vals = radius * zeta[:, :, None] * dirvec[None, None, :]

        def step(fv):
            fz = wirtinger_arrays(grid, fv)[0]
            term = a_chart.apply_conj(fv, fz)
            w = pinned_transform_arrays(grid, term, 0.5)
            # pin only the center: add back the affine part at the other pin
            return seed_vals - w

        try:
            fv, _, _ = _fixed_point(step, seed_vals, tol=1e-13, max_iter=50,
                                    label="poisson-candidate")
        except ContractionError:
            return
        disc = DiscFunction(grid, chart.inverse(fv))
        evaluations += 1
        if not structure.contains_disc(disc, margin=-1e-7):
            return
        center_err = float(np.linalg.norm(disc.evaluate(0) - p))
        if center_err > 1e-8:
            return
        est_val = poisson_functional(u, disc)
        before = est.value
        est.record(cid, est_val)
        if est.value < before:
            est.witness = disc

    dirs = [np.eye(n, dtype=complex)[k] for k in range(n)]
    for k in range(2):
        v = rng.standard_normal(2 * n)
        vc = complexify(v)
        dirs.append(vc / np.linalg.norm(vc))
    for r in (0.1, 0.3, 0.6):
        for i, d in enumerate(dirs):
            try_seed(r, d, f"radial[r={r},dir={i}]")
    est.flags.append(f"candidates={evaluations + 1}")
    return est


# ---------------------------------------------------------------------------
# the gluing construction

@dataclass
class GluingParams:
    arcs: int = 4
    psi_min: float = 2e-3            # cutoff floor at junctions and inside
    pad_tau: float = 0.02            # junction taper width in arc units
    gamma: float = 0.02              # fiber margin of the family
    rho_levels: tuple = (0.90, 0.95, 1.0, 1.04)
    taper_lo: float = 0.92           # radial shrink ramp toward the seam
    taper_hi: float = 0.965
    n_tau: int = 16                  # Chebyshev nodes per arc (angular)
    interior_levels: tuple = (0.0, 0.40, 0.70, 0.93)
    interior_angles: int = 12
    seam: float = 0.915
    w_grid: PolarGrid = PolarGrid(16, 64)
    out_grid: PolarGrid = PolarGrid(24, 128)
    n_start: int = 8
    n_max: int = 256
    root_region: float = 0.975       # roots must sit above the radial taper


def _cheb_nodes01(k: int) -> np.ndarray:
    return 0.5 * (1 - np.cos(np.pi * np.arange(k) / (k - 1)))


def _bary_weights(nodes: np.ndarray) -> np.ndarray:
    w = np.ones(len(nodes))
    for j in range(len(nodes)):
        for i in range(len(nodes)):
            if i != j:
                w[j] /= (nodes[j] - nodes[i])
    return w / np.max(np.abs(w))


def _bary_interp_weights(nodes: np.ndarray, bw: np.ndarray, x: np.ndarray) -> np.ndarray:
    x = np.atleast_1d(x)
    diff = x[:, None] - nodes[None, :]
    hit = np.abs(diff) < 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        c = bw[None, :] / diff
    rows = hit.any(axis=1)
    if rows.any():
        c[rows] = 0.0
        c[hit] = 1.0
    return c / c.sum(axis=1, keepdims=True)


def _trig_interp_weights(k: int, theta: np.ndarray) -> np.ndarray:
    """Trigonometric cardinal weights on k uniform nodes (k even).

    Angle differences are wrapped and the row sums renormalized;
    argument-reduction roundoff near nodes otherwise leaks a spurious
    derivative into anything interpolated through these weights.
    """
    theta = np.atleast_1d(theta)
    nodes = 2 * np.pi * np.arange(k) / k
    x = theta[:, None] - nodes[None, :]
    x = np.mod(x + np.pi, 2 * np.pi) - np.pi
    small = np.abs(np.sin(x / 2)) < 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sin(k * x / 2) / (k * np.tan(x / 2))
    out[small] = 1.0
    return out / out.sum(axis=1, keepdims=True)


class _PatchworkFamily:
    """Piecewise-smooth disc family built from per-arc translated discs,
    junction cutoffs, and a small-disc interior fill.

    Scale bookkeeping: the family is G(z, w) = f_z(cut(z) sigma w) for
    |w| <= 1 + gamma with sigma = 1/(1 + 2 gamma) and cut(z) the junction and
    seam cutoff, so an uncut fiber disc pinned at b meets its pin at the
    family parameter b / sigma.  Each node stores the uncut disc rescaled by
    R = 1 + 1.5 gamma (samples of f_z(sigma R wtilde) on the unit grid), and
    the cutoff is applied to the query argument, never to the stored data:
    interpolation only ever sees the smooth uncut family, and both the
    stored samples and every query |w| <= 1 + gamma stay strictly inside the
    unit disc, so no spectral extrapolation happens.

    Fiber data is stacked into one disc function per patch, so a query costs
    a single spectral evaluation plus low-order interpolation over the
    patch's center nodes.
    """

    def __init__(self, structure, params: GluingParams):
        self.structure = structure
        self.par = params
        self.arc_data = []
        self.interior = None
        self.sigma = 1.0 / (1.0 + 2.0 * params.gamma)
        self.store_stretch = 1.0 + 1.5 * params.gamma   # R
        self.query_scale = 1.0 / self.store_stretch

    def node_sample_factor(self) -> float:
        """Factor applied to the unit w-grid when sampling a fiber disc."""
        return self.sigma * self.store_stretch

    def pin_parameter(self, b_fiber: float) -> float:
        """Family parameter at which an (uncut) fiber disc meets its pin."""
        return b_fiber / self.sigma

    # -- building ---------------------------------------------------------

    def add_arc(self, t0: float, t1: float, discs, taus, rhos):
        """discs: list over (rho, tau) in C-order of storage-scaled discs."""
        stack = np.stack([d.values for d in discs], axis=2)  # (Mw,Nw,K,n)
        m, nn = stack.shape[:2]
        modes = np.fft.fft(stack.reshape(m, nn, -1), axis=1) / nn
        self.arc_data.append({
            "t0": t0, "t1": t1,
            "taus": taus, "tau_bw": _bary_weights(taus),
            "rhos": np.asarray(rhos), "rho_bw": _bary_weights(np.asarray(rhos)),
            "modes": modes, "k": stack.shape[2], "n": stack.shape[3],
        })

    def set_interior(self, discs, levels, n_angles):
        stack = np.stack([d.values for d in discs], axis=2)
        m, nn = stack.shape[:2]
        self.interior = {
            "levels": np.asarray(levels), "lev_bw": _bary_weights(np.asarray(levels)),
            "n_angles": n_angles,
            "modes": np.fft.fft(stack.reshape(m, nn, -1), axis=1) / nn,
            "k": stack.shape[2], "n": stack.shape[3],
        }

    # -- querying ---------------------------------------------------------

    def cutoff(self, z) -> np.ndarray:
        """Pointwise fiber cutoff: junction taper times seam taper, floored
        at psi_min, and psi_min flat on the interior patch."""
        z = np.atleast_1d(np.asarray(z, complex))
        par = self.par
        out = np.full(z.shape, par.psi_min)
        rest = np.abs(z) >= par.seam
        if rest.any():
            zr = z[rest]
            ang = np.mod(np.angle(zr), 2 * np.pi)
            psi = np.full(zr.shape, par.psi_min)
            for data in self.arc_data:
                t0 = np.mod(data["t0"], 2 * np.pi)
                span = np.mod(data["t1"] - data["t0"], 2 * np.pi)
                span = span if span > 0 else 2 * np.pi
                rel = np.mod(ang - t0, 2 * np.pi)
                mine = rel <= span + 1e-12
                if mine.any():
                    tau = np.clip(rel[mine] / span, 0.0, 1.0)
                    psi[mine] = _cutoff_profile(tau, par.pad_tau, par.psi_min)
            chi = _radial_taper_vec(np.abs(zr), par)
            out[rest] = psi * chi
        return out

    def _query_patch(self, patch_kind, idx, z, w):
        """Evaluate one patch at matched arrays (z, w); the cutoff scales the
        query argument, so stored data stays smooth."""
        from .grid import _evaluate_modes
        wq = np.asarray(w, complex) * self.query_scale * self.cutoff(z)
        if np.max(np.abs(wq)) > 1 + 1e-9:
            raise EnvelopeStageError(
                "family", f"|w| = {np.max(np.abs(w)):.4f} beyond the fiber margin")
        grid = self.par.w_grid
        if patch_kind == "arc":
            data = self.arc_data[idx]
            vals = _evaluate_modes(grid, data["modes"], wq)   # (P, K*n)
            p = vals.shape[0]
            vals = vals.reshape(p, data["k"], data["n"])
            ang = np.mod(np.angle(z) - data["t0"], 2 * np.pi)
            span = np.mod(data["t1"] - data["t0"], 2 * np.pi)
            span = span if span > 0 else 2 * np.pi
            tau = np.clip(ang / span, 0.0, 1.0)
            wt_t = _bary_interp_weights(data["taus"], data["tau_bw"], tau)
            wt_r = _bary_interp_weights(data["rhos"], data["rho_bw"], np.abs(z))
            wts = (wt_r[:, :, None] * wt_t[:, None, :]).reshape(p, data["k"])
            return np.einsum("pk,pkn->pn", wts, vals)
        data = self.interior
        vals = _evaluate_modes(grid, data["modes"], wq)
        p = vals.shape[0]
        vals = vals.reshape(p, data["k"], data["n"])
        ka = data["n_angles"]
        wt_a = _trig_interp_weights(ka, np.angle(z))
        wt_l = _bary_interp_weights(data["levels"], data["lev_bw"], np.abs(z))
        # stacked order: level-major, angle-minor; level 0 is a single disc
        # replicated across the angular nodes
        wts = (wt_l[:, :, None] * wt_a[:, None, :]).reshape(p, data["k"])
        return np.einsum("pk,pkn->pn", wts, vals)

    def __call__(self, z, w):
        z = np.asarray(z, complex)
        w = np.asarray(w, complex)
        z, w = np.broadcast_arrays(z, w)
        shape = z.shape
        zf, wf = z.ravel(), w.ravel()
        n = self.arc_data[0]["n"]
        out = np.empty((zf.size, n), complex)
        interior_mask = np.abs(zf) < self.par.seam
        if interior_mask.any():
            out[interior_mask] = self._query_patch("interior", 0,
                                                   zf[interior_mask], wf[interior_mask])
        rest = ~interior_mask
        if rest.any():
            ang = np.mod(np.angle(zf[rest]), 2 * np.pi)
            idx_rest = np.where(rest)[0]
            assigned = np.full(idx_rest.size, -1)
            for j, data in enumerate(self.arc_data):
                t0 = np.mod(data["t0"], 2 * np.pi)
                span = np.mod(data["t1"] - data["t0"], 2 * np.pi)
                span = span if span > 0 else 2 * np.pi
                rel = np.mod(ang - t0, 2 * np.pi)
                mine = (rel <= span + 1e-12) & (assigned < 0)
                if mine.any():
                    assigned[mine] = j
            for j in range(len(self.arc_data)):
                sel = idx_rest[assigned == j]
                if sel.size:
                    out[sel] = self._query_patch("arc", j, zf[sel], wf[sel])
        return out.reshape(shape + (n,))

    # -- seam-aware differentiation ----------------------------------------

    def _patch_id(self, z):
        """Integer patch label per point: -1 interior, else arc index."""
        z = np.atleast_1d(np.asarray(z, complex))
        out = np.full(z.shape, -1, dtype=int)
        rest = np.abs(z) >= self.par.seam
        ang = np.mod(np.angle(z), 2 * np.pi)
        for j, data in enumerate(self.arc_data):
            t0 = np.mod(data["t0"], 2 * np.pi)
            span = np.mod(data["t1"] - data["t0"], 2 * np.pi)
            span = span if span > 0 else 2 * np.pi
            rel = np.mod(ang - t0, 2 * np.pi)
            mine = rest & (rel <= span + 1e-12) & (out < 0)
            out[mine] = j
        return out

    def fd_jacobian(self, z, w, *, step: float = 1e-6, scheme: str = "forward"):
        """Forward-difference Jacobian whose stencil never crosses a patch
        seam (the family jumps by the cutoff floor there, which a seam
        crossing would amplify by 1/step)."""
        from .structure import realify as _realify
        z = np.atleast_1d(np.asarray(z, complex))
        w = np.atleast_1d(np.asarray(w, complex))
        z, w = np.broadcast_arrays(z, w)
        base_id = self._patch_id(z)
        base = np.asarray(self(z, w))
        cols = []
        for dz, dw in [(step, 0.0), (1j * step, 0.0), (0.0, step), (0.0, 1j * step)]:
            if dw == 0.0:
                plus_id = self._patch_id(z + 3 * dz)
                sign = np.where(plus_id == base_id, 1.0, -1.0)
                d = (np.asarray(self(z + sign * dz, w)) - base) \
                    / (sign * step)[..., None]
            else:
                d = (np.asarray(self(z, w + dw)) - base) / step
            cols.append(_realify(d))
        return np.stack(cols, axis=-1)


def _cutoff_profile(tau: np.ndarray, pad_tau: float, floor: float) -> np.ndarray:
    """1 on the arc core, cosine-tapered to ``floor`` within ``pad_tau`` of
    the endpoints."""
    up = np.clip(tau / pad_tau, 0.0, 1.0)
    down = np.clip((1.0 - tau) / pad_tau, 0.0, 1.0)
    ramp = 0.5 * (1 - np.cos(np.pi * np.minimum(up, down)))
    return floor + (1.0 - floor) * ramp


def _extrapolating_disc(disc: DiscFunction, cap: int = 30):
    """Callable evaluating a disc slightly beyond |z| = 1 by low-pass modes."""

    def g(z):
        z = np.asarray(z, complex)
        inside = np.abs(z) <= 1.0
        out = np.empty(z.shape + (disc.n_components,), complex)
        if inside.any():
            out[inside] = disc.evaluate(z[inside])
        if (~inside).any():
            out[~inside] = disc.evaluate_extrapolated(z[~inside], mode_cap=cap)
        return out

    return g


def estimate_lelong_envelope(structure: AcStructure, alpha: WeightAtoms,
                             g_disc, phi, eps: float, budget: int = 40, *,
                             params: GluingParams | None = None,
                             grid: PolarGrid = CANDIDATE_GRID,
                             seed: int = 0) -> EnvelopeEstimate:
    """Upper estimate of the Lelong-functional envelope at g(0).

    Direct candidate discs are evaluated under the summed functional, and the
    boundary-gluing construction is executed around the immersed disc g: each
    boundary arc contributes a near-extremal pinned family, the families are
    merged with junction cutoffs, the induced elliptic system is attached to
    the torus, the atom preimages are counted and verified, and the assembled
    disc's value is checked against the boundary average of phi plus eps.

    phi may be None, in which case the per-arc extremal values stand in for
    the boundary average of phi over g.
    """
    par = params or GluingParams()
    p0 = None
    if isinstance(g_disc, DiscFunction):
        p0 = g_disc.evaluate(0.0)
        g_call = _extrapolating_disc(g_disc)
    else:
        g_call = g_disc
        p0 = np.atleast_1d(np.asarray(g_call(np.zeros(1, complex))[0], complex))
    est = EnvelopeEstimate(point=p0, value=0.0, witness=None)

    # direct candidates under the summed functional
    kest = estimate_k_alpha(structure, alpha, p0, budget=budget, grid=grid, seed=seed)
    if kest.value == NEG_INF:
        est.value = NEG_INF
        est.witness = kest.witness
        est.record("constant", NEG_INF)
        return est
    if kest.witness is not None:
        lval = lelong_functional(kest.witness, alpha)
        est.record("direct:" + (kest.history[-1][0] if kest.history else "best"), lval.value)
        est.witness = kest.witness
        est.details["direct_flags"] = lval.flags
    if len(alpha) == 0:
        est.flags.append("empty-weight")
        return est

    # ---- gluing construction -------------------------------------------
    try:
        glue_val, glue_disc, glue_info = _gluing_construction(
            structure, alpha, g_call, p0, phi, eps, par, grid, seed)
        est.details["gluing"] = glue_info
        est.record("glued-disc", glue_val)
        if glue_val <= est.value:
            est.witness = glue_disc
    except EnvelopeStageError as exc:
        est.flags.append(f"gluing-failed:{exc.stage}")
        est.details["gluing_error"] = str(exc)
    return est


def _translate_batch(structure, coords, base, b, qs, *, tol=1e-11, max_iter=60):
    """Solve the center-translation problem for a batch of targets at once.

    All targets share the graph coordinates of the base disc; the stacked
    fixed-point iteration amortizes the coefficient evaluations.  Falls back
    to the scalar path on contraction failure.
    """
    grid = coords.grid
    n = coords.n
    mm, nn = grid.n_radial, grid.n_angular
    k = len(qs)
    s_list = np.stack([coords.fiber_offset(q, zeta=0.0) for q in qs])  # (K, n)
    zeta = grid.zeta
    phi = (1.0 - zeta / b)[None, :, :, None] * s_list[:, None, None, :]  # (K,M,N,n)

    def to_flat(v):
        return np.moveaxis(v, 0, 2).reshape(mm, nn, k * n)

    def from_flat(v):
        return np.moveaxis(v.reshape(mm, nn, k, n), 2, 0)

    def step(flat):
        stacked = from_flat(flat)
        hz = from_flat(wirtinger_arrays(grid, flat)[0])
        a_vec, a_mat, _ = coords.coefficients(stacked)
        term = np.einsum("...ij,...j->...i", a_mat, np.conj(hz)) + a_vec
        return to_flat(phi) - pinned_transform_arrays(grid, to_flat(term), b)

    flat, _, _ = _fixed_point(step, to_flat(phi), tol=tol, max_iter=max_iter,
                              label="translate-batch")
    out = []
    stacked = from_flat(flat)
    for i in range(k):
        h = DiscFunction(grid, stacked[i])
        g = coords.reconstruct_disc(h)
        pin0 = float(np.linalg.norm(g.evaluate(0) - qs[i]))
        pinb = float(np.linalg.norm(g.evaluate(b) - base.evaluate(b)))
        if max(pin0, pinb) > 1e-7:
            raise ContractionError(f"batched translation pin drift {max(pin0, pinb):.2e}")
        out.append(g)
    return out


def _gluing_construction(structure, alpha, g_call, p0, phi, eps, par, grid, seed):
    import time as _time
    info: dict = {}
    timings: dict = {}
    t_mark = _time.time()

    def _lap(stage):
        nonlocal t_mark
        timings[stage] = round(_time.time() - t_mark, 2)
        t_mark = _time.time()

    m = par.arcs
    two_pi = 2 * np.pi
    bounds = [two_pi * j / m for j in range(m + 1)]

    # stage: arc extremals
    arc_mid = [0.5 * (bounds[j] + bounds[j + 1]) for j in range(m)]
    arc_ests = []
    for j in range(m):
        z_mid = np.exp(1j * arc_mid[j])
        x_j = np.atleast_1d(np.asarray(g_call(np.array([z_mid]))[0], complex))
        e_j = estimate_k_alpha(structure, alpha, x_j, budget=0,
                               grid=par.w_grid, seed=seed, full_search=False)
        if e_j.witness is None or e_j.details.get("best_pin") is None:
            raise EnvelopeStageError("arc-extremals",
                                     f"no pinned extremal disc over arc {j}")
        arc_ests.append(e_j)
    info["arc_values"] = [e.value for e in arc_ests]
    _lap("arc-extremals")

    # stage: family (translate each arc extremal along its arc, with cutoffs)
    family = _PatchworkFamily(structure, par)
    taus = _cheb_nodes01(par.n_tau)
    pad_tau = par.pad_tau
    b_fs = []
    atoms_hit = []
    for j in range(m):
        e_j = arc_ests[j]
        base = e_j.witness
        b_f = float(abs(e_j.details["best_pin"]))
        sign = np.sign(e_j.details["best_pin"]) or 1.0
        b_fs.append(b_f * sign)
        atoms_hit.append((e_j.details["best_atom"], e_j.details["best_mass"]))
        coords = graph_coordinates(structure, base)
        discs = []
        nodes = []
        for rho in par.rho_levels:
            for tau in taus:
                theta = bounds[j] + tau * (bounds[j + 1] - bounds[j])
                nodes.append((rho, tau, rho * np.exp(1j * theta)))
        qs = [np.atleast_1d(np.asarray(g_call(np.array([zn]))[0], complex))
              for _, _, zn in nodes]
        try:
            f_list = _translate_batch(structure, coords, base, b_f * sign, qs)
        except ContractionError:
            f_list = []
            for q, (_, _, z_node) in zip(qs, nodes):
                try:
                    f_z, _ = translate_center(structure, base, b_f * sign, q,
                                              coords=coords)
                except (BasinError, ContractionError) as exc:
                    raise EnvelopeStageError(
                        "family",
                        f"translation failed at arc {j}, z = {z_node:.3f}: {exc}")
                f_list.append(f_z)
        factor = family.node_sample_factor()
        for f_z in f_list:
            comp_vals = f_z.evaluate(factor * par.w_grid.zeta)
            discs.append(DiscFunction(par.w_grid,
                                      comp_vals.reshape(par.w_grid.n_radial,
                                                        par.w_grid.n_angular, -1)))
        family.add_arc(bounds[j], bounds[j + 1], discs, taus, par.rho_levels)
    _lap("family")

    # stage: interior fill with small discs along an extended direction field
    _fill_interior(family, structure, g_call, par)
    _lap("interior")

    # stage: coefficients
    n_comp = structure.n
    fam = DiscFamily(structure=structure, G=family, gamma=par.gamma,
                     center_curve=lambda z: family(z, np.zeros_like(z)),
                     name="glued-family")
    try:
        wind = fam.w_component_winding()
    except ValueError as exc:
        raise EnvelopeStageError("family", f"fiber direction winding undefined: {exc}")
    if wind != 0:
        raise EnvelopeStageError("family", f"fiber direction winding {wind} != 0")
    try:
        coeffs = elliptic_coefficients(fam, holomorphy_tol=0.5, fd_scheme="forward",
                                       fd_step=1e-6)
    except ValueError as exc:
        raise EnvelopeStageError("coefficients", str(exc))
    _lap("coefficients")

    # stage: attachment order selection and solve
    b_gs = [family.pin_parameter(b) for b in b_fs]
    if max(abs(b) for b in b_gs) >= 0.97:
        raise EnvelopeStageError("rh-solve", "family pin too close to the torus")
    n = par.n_start
    sol = None
    core_pad = 1.5 * pad_tau
    arcs_for_count = [Arc(bounds[j] + core_pad * (bounds[j + 1] - bounds[j]),
                          bounds[j + 1] - core_pad * (bounds[j + 1] - bounds[j]),
                          width=0.12, pad=0.0)
                      for j in range(m)]
    chosen = None
    while n <= par.n_max:
        try:
            sol = solve_rh(coeffs, n, grid=par.out_grid)
        except RhConvergenceError as exc:
            raise EnvelopeStageError("rh-solve", str(exc))
        ok_interior = sol.interior_max_w < 1.0 + par.gamma
        roots_ok = True
        results = []
        for j in range(m):
            chi = _chi_factory(b_gs[j], sol)
            try:
                rc = root_count(n, chi, [arcs_for_count[j]])
            except ValueError:
                roots_ok = False
                break
            results.append(rc)
            if not rc.threshold_ok:
                roots_ok = False
                break
        root_radius_ok = roots_ok and all(
            min(abs(z) for z in rc.roots[0]) >= par.root_region
            for rc in results if rc.roots[0])
        if ok_interior and roots_ok and root_radius_ok:
            chosen = results
            break
        n *= 2
    if chosen is None:
        raise EnvelopeStageError(
            "root-count", f"root count below k|I_j| up to n = {par.n_max}")
    info["n"] = n
    info["rh_boundary_residual"] = sol.boundary_residual
    info["rh_pde_residual"] = sol.pde_residual
    _lap("rh-and-roots")

    # stage: assemble the glued disc and evaluate
    u_vals = sol.u.values[:, :, 0]
    v_vals = sol.v.values[:, :, 0]
    zeta = par.out_grid.zeta
    z_arg = zeta * np.exp(u_vals)
    w_arg = zeta**n * np.exp(v_vals)
    f_vals = family(z_arg, w_arg)
    glued = DiscFunction(par.out_grid, f_vals)
    center_err = float(np.linalg.norm(glued.evaluate(0.0) - p0))
    if center_err > 1e-6:
        raise EnvelopeStageError("assemble", f"center drifted by {center_err:.2e}")

    terms = []
    total = 0.0
    verified = 0
    dropped = 0
    for j in range(m):
        atom, mass = atoms_hit[j]
        for root_zeta in chosen[j].roots[0]:
            # the root solves zeta^n = b e^{-v}; map through the ansatz
            val = np.atleast_1d(glued.evaluate(root_zeta))
            if np.linalg.norm(val - atom) < 1e-5:
                contrib = mass * np.log(abs(root_zeta))
                terms.append((root_zeta, contrib))
                total += contrib
                verified += 1
            else:
                dropped += 1
    info["verified_roots"] = verified
    info["dropped_roots"] = dropped
    if verified == 0:
        raise EnvelopeStageError("evaluate", "no verified atom preimages on the glued disc")

    # inequality check against the boundary average of phi
    if phi is not None:
        tsamp = np.linspace(0, two_pi, 256, endpoint=False)
        gb = np.asarray(g_call(np.exp(1j * tsamp)))
        phi_avg = float(np.mean([float(phi(gb[k])) for k in range(len(tsamp))]))
    else:
        phi_avg = float(np.mean(info["arc_values"]))
    _lap("assemble")
    info["timings"] = timings
    info["phi_average"] = phi_avg
    info["target"] = phi_avg + eps
    info["achieved_margin"] = phi_avg + eps - total
    info["inequality_ok"] = bool(total < phi_avg + eps)
    return total, glued, info


def _radial_taper_vec(rho: np.ndarray, par: GluingParams) -> np.ndarray:
    """Shrink toward the seam so arc fibers meet the tiny interior fibers."""
    lo, hi = par.taper_lo, par.taper_hi
    t = np.clip((np.asarray(rho) - lo) / (hi - lo), 0.0, 1.0)
    return par.psi_min + (1 - par.psi_min) * 0.5 * (1 - np.cos(np.pi * t))


def _chi_factory(b_g: float, sol):
    v = sol.v

    def chi(z):
        z = np.asarray(z, complex)
        vv = v.evaluate(np.clip(np.abs(z), 0, 1) * np.exp(1j * np.angle(z)))[:, 0]
        return b_g * np.exp(-vv)

    return chi


def _fill_interior(family: _PatchworkFamily, structure, g_call, par: GluingParams):
    """Small discs on an interior polar grid of centers, with tiny fiber scale.

    Directions extend the innermost ring's fiber direction field harmonically
    (componentwise Fourier decay), which is possible exactly when the field's
    winding vanishes.
    """
    ka = par.interior_angles
    theta = 2 * np.pi * np.arange(ka) / ka
    # fiber direction of the arc patches just above the patch seam, w -> 0
    ring_rho = max(par.rho_levels[0], par.seam + 0.003)
    zr = ring_rho * np.exp(1j * theta)
    h = 1e-4
    d = (family(zr, h + 0j * zr) - family(zr, -h + 0j * zr)) / (2 * h)
    coef = np.fft.fft(d, axis=0) / ka
    kfreq = np.fft.fftfreq(ka, d=1.0 / ka).astype(int)

    def x_field(z):
        z = np.asarray(z, complex)
        rho = np.abs(z) / ring_rho
        ang = np.angle(z)
        out = np.zeros(z.shape + (d.shape[1],), complex)
        for i, kf in enumerate(kfreq):
            out += coef[i][None, :] * (rho ** abs(kf))[:, None] \
                * np.exp(1j * kf * ang)[:, None]
        return out

    discs = []
    levels = par.interior_levels
    for li, lev in enumerate(levels):
        if li == 0:
            centers = np.zeros(1, complex)
        else:
            centers = lev * np.exp(1j * theta)
        level_discs = []
        for z0 in centers:
            q = np.atleast_1d(np.asarray(g_call(np.array([z0]))[0], complex))
            xv = x_field(np.array([z0]))[0]
            nx = np.linalg.norm(xv)
            if nx < 1e-10:
                raise EnvelopeStageError("family",
                                         "interior direction field vanishes")
            try:
                d_z, _ = solve_small_disc(structure, q, xv / nx, grid=par.w_grid,
                                          radius=0.3)
            except Exception as exc:
                raise EnvelopeStageError("family", f"interior disc at {z0:.3f}: {exc}")
            factor = family.node_sample_factor()
            comp = d_z.evaluate(factor * par.w_grid.zeta)
            level_discs.append(DiscFunction(
                par.w_grid, comp.reshape(par.w_grid.n_radial, par.w_grid.n_angular, -1)))
        if li == 0:
            level_discs = level_discs * ka
        discs.extend(level_discs)
    family.set_interior(discs, levels, ka)


def _transverse_seed(alpha: WeightAtoms, p: np.ndarray, n: int) -> np.ndarray:
    """Direction for the seed disc of the gluing, transverse to the lines
    from p toward the atoms (fibers tangent to the center curve degenerate
    the family's Jacobian)."""
    if n == 1 or len(alpha) == 0:
        return np.eye(n, dtype=complex)[0]
    t = alpha.atoms[0][0] - p
    nt = np.linalg.norm(t)
    if nt < 1e-12:
        return np.eye(n, dtype=complex)[0]
    t = t / nt
    v = np.array([-np.conj(t[1]), np.conj(t[0])])
    return v / np.linalg.norm(v)


def verify_disc_formula(structure: AcStructure, alpha: WeightAtoms, test_points,
                        eps: float, *, budget: int = 40,
                        grid: PolarGrid = CANDIDATE_GRID,
                        params: GluingParams | None = None,
                        g_radius: float = 0.01, seed: int = 0) -> dict:
    """Cross-check the two envelope routes at each test point.

    Column one estimates the Lelong envelope (direct candidates plus the
    gluing pipeline seeded by a small immersed disc at p); column two is the
    Poisson envelope of the infimum-functional estimate.  Rows where the gap
    exceeds eps plus the reported optimization slack are flagged as
    counterexample candidates (resolution and budget being the first
    suspects).
    """
    rows = []
    kcache: dict = {}

    def k_hat(x):
        x = np.atleast_1d(np.asarray(x, complex)).ravel()
        key = tuple(np.round(x, 7))
        if key not in kcache:
            kcache[key] = estimate_k_alpha(structure, alpha, x, budget=0,
                                           grid=grid, seed=seed,
                                           full_search=False).value
        return kcache[key]

    def k_hat_vec(pts):
        pts2 = np.atleast_2d(np.asarray(pts, complex))
        return np.array([k_hat(pt) for pt in pts2])

    all_ok = True
    for p in test_points:
        p = np.atleast_1d(np.asarray(p, dtype=complex))
        g_small, _ = solve_small_disc(structure, p, _transverse_seed(alpha, p, structure.n),
                                      grid=grid, radius=g_radius)
        el = estimate_lelong_envelope(structure, alpha, g_small, None, eps,
                                      budget=budget, params=params, grid=grid,
                                      seed=seed)
        ep = estimate_poisson_envelope(structure, k_hat_vec, p, budget=budget,
                                       grid=grid, seed=seed)
        gap = abs(el.value - ep.value) if np.isfinite(el.value) and np.isfinite(ep.value) \
            else (0.0 if el.value == ep.value else np.inf)
        ok = gap < eps + 1e-9
        all_ok = all_ok and ok
        rows.append({
            "point": p,
            "el_hat": el.value,
            "ep_khat": ep.value,
            "gap": gap,
            "consistent": ok,
            "el_flags": el.flags,
            "gluing": el.details.get("gluing", el.details.get("gluing_error")),
        })
    return {"rows": rows, "eps": eps, "all_consistent": all_ok,
            "counterexample_candidates": [r["point"] for r in rows if not r["consistent"]]}
