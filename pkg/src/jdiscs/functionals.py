"""Disc functionals and potential-theoretic quantities.

The Lelong functional sums mass * log|zeta| over the parameter preimages of
the weight's atoms, its pointwise-infimum companion bounds it from above, the
weighted Green sum realizes the largest subharmonic minorant along the disc,
and the Poisson functional averages a function over the boundary trace.
Minus infinity is a first-class value with saturating arithmetic.

Preimage sets are certified where possible: for scalar discs the argument
principle counts roots inside circles, and the count is localized by ring
subdivision until every root is accounted for.  For two-component discs the
search is reported as a lower bound (finding roots only makes the functional
values smaller, so envelope estimates stay upper bounds).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import BoundaryFunction, DiscFunction, winding_number, wirtinger_arrays

__all__ = [
    "WeightAtoms",
    "FunctionalValue",
    "PreimageResult",
    "Arc",
    "RootCountResult",
    "LelongNumberEstimate",
    "preimages",
    "lelong_functional",
    "k_functional",
    "green_sum",
    "poisson_functional",
    "lelong_number",
    "root_count",
]

NEG_INF = float("-inf")


@dataclass(frozen=True)
class WeightAtoms:
    """Finitely supported nonnegative weight: a list of (point, mass) pairs.

    Points are complex n-vectors.  Matching uses the ``match_tol`` radius
    (an exact-equality weight is invisible to floating point).  Zero-mass
    atoms are dropped; negative masses are rejected.
    """

    atoms: tuple
    match_tol: float = 1e-7

    def __init__(self, atoms, match_tol: float = 1e-7):
        cleaned = []
        for point, mass in atoms:
            mass = float(mass)
            if mass < 0:
                raise ValueError("atom masses must be positive")
            if mass == 0.0:
                continue
            cleaned.append((np.atleast_1d(np.asarray(point, dtype=complex)), mass))
        for i in range(len(cleaned)):
            for j in range(i + 1, len(cleaned)):
                if np.linalg.norm(cleaned[i][0] - cleaned[j][0]) <= match_tol:
                    raise ValueError("atom points must be distinct")
        object.__setattr__(self, "atoms", tuple((p.copy(), m) for p, m in cleaned))
        object.__setattr__(self, "match_tol", float(match_tol))

    def __len__(self):
        return len(self.atoms)

    def mass_at(self, point) -> float:
        point = np.atleast_1d(np.asarray(point, dtype=complex))
        for p, m in self.atoms:
            if np.linalg.norm(point - p) <= self.match_tol:
                return m
        return 0.0


@dataclass
class FunctionalValue:
    """Value of a disc functional with provenance.

    ``terms`` lists (zeta, contribution) pairs; ``value`` is their sum or
    infimum (or -inf).  ``certified`` is False when the preimage search could
    not be certified complete, in which case the preimage set, hence the
    number of terms, is a lower bound only.
    """

    value: float
    disc_id: str = ""
    terms: list = field(default_factory=list)
    certified: bool = True
    flags: list = field(default_factory=list)


@dataclass
class PreimageResult:
    roots: list            # complex parameters in the open disc
    multiplicities: list
    certified: bool
    total_count: int | None = None
    flags: list = field(default_factory=list)


def _newton_refine(f: DiscFunction, p: np.ndarray, z0: complex, fz: DiscFunction,
                   fzb: DiscFunction, *, steps: int = 40, tol: float = 1e-11) -> complex | None:
    """Gauss-Newton for f(z) = p in the two real variables of z."""
    z = complex(z0)
    scale = max(1.0, f.sup_norm())
    for _ in range(steps):
        val = f.evaluate(z) - p
        if np.linalg.norm(val) < tol * scale:
            return z
        jz = fz.evaluate(z)
        jzb = fzb.evaluate(z)
        col_x = jz + jzb
        col_y = 1j * (jz - jzb)
        a = np.concatenate([
            np.stack([col_x.real, col_y.real], axis=-1),
            np.stack([col_x.imag, col_y.imag], axis=-1),
        ])
        rhs = -np.concatenate([val.real, val.imag])
        try:
            step, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        except np.linalg.LinAlgError:
            return None
        z = z + step[0] + 1j * step[1]
        if abs(z) > 1.0:
            # clamp onto the closed disc; diverging iterates fail the
            # residual test and are dropped
            z = z / abs(z) * (1.0 - 1e-12)
    val = f.evaluate(z) - p
    return z if np.linalg.norm(val) < 1e2 * tol * scale else None


def _winding_on_circle(f: DiscFunction, p, radius: float, *, samples: int = 512) -> int:
    t = 2 * np.pi * np.arange(samples) / samples
    ring = radius * np.exp(1j * t)
    vals = f.evaluate(ring)[:, 0] - p[0]
    return winding_number(BoundaryFunction(vals))


def preimages(f: DiscFunction, p, *, radius_tol: float = 1e-6,
              match_tol: float = 1e-8, max_subdiv: int = 8) -> PreimageResult:
    """All solutions of f(zeta) = p in the open disc.

    Grid-seeded Gauss-Newton locates candidates.  For scalar discs the total
    root count from the boundary winding certifies completeness, subdividing
    into rings when the counts disagree; roots within ``radius_tol`` of the
    boundary make the certification unstable and are flagged.
    """
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    grid = f.grid
    scale = max(1.0, f.sup_norm())
    dist = np.linalg.norm(f.values - p[None, None, :], axis=-1)

    # whole-disc coincidence: the function sits on the point
    if float(np.max(dist)) < match_tol * scale:
        return PreimageResult(roots=[], multiplicities=[], certified=True,
                              flags=["identically-equal"])

    fz_vals, fzb_vals = wirtinger_arrays(grid, f.values)
    fz = DiscFunction(grid, fz_vals)
    fzb = DiscFunction(grid, fzb_vals)

    # candidate seeds: local minima of the distance field
    thresh = min(0.2 * float(np.max(dist)), 20 * float(np.min(dist)) + 1e-12 * scale)
    seeds = [grid.zeta[idx] for idx in zip(*np.where(dist <= thresh))]
    roots: list[complex] = []
    for z0 in seeds:
        z = _newton_refine(f, p, z0, fz, fzb)
        if z is None or abs(z) >= 1.0:
            continue
        if all(abs(z - r) > 1e-8 for r in roots):
            roots.append(z)
    flags = []
    near_boundary = [z for z in roots if abs(z) > 1 - radius_tol]
    if near_boundary:
        flags.append("root-near-boundary")
    if f.n_components != 1:
        # no global certificate in higher rank; report what was found
        mult = [1] * len(roots)
        return PreimageResult(roots=roots, multiplicities=mult, certified=False,
                              flags=flags + ["lower-bound-only"])

    # scalar case: argument-principle certification
    bvals = f.boundary().values[:, 0] - p[0]
    if np.min(np.abs(bvals)) < radius_tol * scale:
        return PreimageResult(roots=roots, multiplicities=[1] * len(roots),
                              certified=False, flags=flags + ["boundary-root", "lower-bound-only"])
    try:
        total = _winding_on_circle(f, p, 1.0 - 1e-12)
    except ValueError:
        total = None
    mults = []
    for z in roots:
        sep = min([abs(z - r) for r in roots if r is not z] + [1 - abs(z)])
        rad = max(min(0.45 * sep, 0.05), 1e-6)
        try:
            m = _winding_on_circle_at(f, p, z, rad)
        except ValueError:
            m = 1
        mults.append(max(m, 1))
    if total is not None and sum(mults) == total:
        return PreimageResult(roots=roots, multiplicities=mults, certified=True,
                              total_count=total, flags=flags)
    # localize the discrepancy by ring subdivision and rescue missed roots
    missing = (total - sum(mults)) if total is not None else None
    if missing and missing > 0:
        radii = np.linspace(0.05, 1 - 1e-10, 2**min(max_subdiv, 6) + 1)
        prev = 0
        for r_in, r_out in zip(radii[:-1], radii[1:]):
            try:
                w_out = _winding_on_circle(f, p, r_out)
                w_in = _winding_on_circle(f, p, r_in)
            except ValueError:
                continue
            here = w_out - w_in
            have = sum(m for z, m in zip(roots, mults) if r_in <= abs(z) < r_out)
            if here > have:
                t = 2 * np.pi * np.arange(64) / 64
                ring = 0.5 * (r_in + r_out) * np.exp(1j * t)
                vals = np.linalg.norm(f.evaluate(ring) - p[None, :], axis=-1)
                for z0 in ring[np.argsort(vals)[:6]]:
                    z = _newton_refine(f, p, z0, fz, fzb)
                    if z is not None and abs(z) < 1 and all(abs(z - r) > 1e-8 for r in roots):
                        roots.append(z)
                        mults.append(1)
            prev = w_out
    certified = total is not None and sum(mults) == total
    if not certified:
        flags.append("lower-bound-only")
    return PreimageResult(roots=roots, multiplicities=mults, certified=certified,
                          total_count=total, flags=flags)


def _winding_on_circle_at(f: DiscFunction, p, center: complex, radius: float,
                          *, samples: int = 256) -> int:
    t = 2 * np.pi * np.arange(samples) / samples
    ring = center + radius * np.exp(1j * t)
    vals = f.evaluate(ring, tol=1e-6)[:, 0] - p[0]
    return winding_number(BoundaryFunction(vals))


def lelong_functional(f: DiscFunction, alpha: WeightAtoms, *, disc_id: str = "",
                      preimage_kw: dict | None = None) -> FunctionalValue:
    """Sum of mass * log|zeta| over all atom preimages in the disc.

    Minus infinity when the disc is centered on an atom or sits on one along
    a non-isolated set.
    """
    kw = preimage_kw or {}
    f0 = f.evaluate(0.0)
    center_mass = alpha.mass_at(f0)
    if center_mass > 0:
        return FunctionalValue(value=NEG_INF, disc_id=disc_id,
                               terms=[(0.0, NEG_INF)], flags=["atom-at-center"])
    total = 0.0
    terms = []
    certified = True
    flags: list[str] = []
    for point, mass in alpha.atoms:
        pre = preimages(f, point, **kw)
        if "identically-equal" in pre.flags:
            return FunctionalValue(value=NEG_INF, disc_id=disc_id,
                                   terms=[(0.0, NEG_INF)],
                                   flags=["non-isolated-preimage"])
        certified = certified and pre.certified
        for z, mult in zip(pre.roots, pre.multiplicities):
            az = abs(z)
            contrib = NEG_INF if az == 0.0 else mass * mult * np.log(az)
            terms.append((z, contrib))
            total = NEG_INF if contrib == NEG_INF else total + contrib
        for fl in pre.flags:
            if fl not in flags:
                flags.append(fl)
    if not certified:
        flags.append("preimage-set-lower-bound-only")
    return FunctionalValue(value=total, disc_id=disc_id, terms=terms,
                           certified=certified, flags=flags)


def k_functional(f: DiscFunction, alpha: WeightAtoms, *, disc_id: str = "",
                 preimage_kw: dict | None = None) -> FunctionalValue:
    """Infimum of mass * log|zeta| over atom preimages (0 when none are hit)."""
    kw = preimage_kw or {}
    f0 = f.evaluate(0.0)
    if alpha.mass_at(f0) > 0:
        return FunctionalValue(value=NEG_INF, disc_id=disc_id,
                               terms=[(0.0, NEG_INF)], flags=["atom-at-center"])
    best = 0.0
    terms = []
    certified = True
    flags: list[str] = []
    for point, mass in alpha.atoms:
        pre = preimages(f, point, **kw)
        if "identically-equal" in pre.flags:
            return FunctionalValue(value=NEG_INF, disc_id=disc_id,
                                   terms=[(0.0, NEG_INF)],
                                   flags=["non-isolated-preimage"])
        certified = certified and pre.certified
        for z in pre.roots:
            az = abs(z)
            contrib = NEG_INF if az == 0.0 else mass * np.log(az)
            terms.append((z, contrib))
            best = min(best, contrib)
        for fl in pre.flags:
            if fl not in flags:
                flags.append(fl)
    if not certified:
        flags.append("preimage-set-lower-bound-only")
    return FunctionalValue(value=best, disc_id=disc_id, terms=terms,
                           certified=certified, flags=flags)


def green_sum(preimage_data, z: complex) -> float:
    """Weighted sum of Green functions of the disc at z.

    ``preimage_data`` is a list of (zeta, mass) pairs; each term is
    mass * log |(z - zeta) / (1 - conj(zeta) z)|, exactly -inf at the poles.
    """
    z = complex(z)
    if abs(z) >= 1:
        raise ValueError("green_sum requires |z| < 1")
    total = 0.0
    for zeta, mass in preimage_data:
        zeta = complex(zeta)
        num = abs(z - zeta)
        if num == 0.0:
            return NEG_INF
        den = abs(1 - np.conj(zeta) * z)
        total += mass * np.log(num / den)
    return total


def poisson_functional(u, f: DiscFunction) -> float:
    """Boundary average (1/2pi) integral of u(f(e^{it})) dt.

    Trapezoidal rule at the grid's angular nodes with one Richardson step
    (the halved-node rule); -inf propagates if u is -inf anywhere sampled.
    """
    bvals = f.boundary().values
    uv = _call_scalar_function(u, bvals)
    if np.any(np.isneginf(uv)):
        return NEG_INF
    if not np.all(np.isfinite(uv)):
        raise ValueError("u returned non-finite values on the boundary trace")
    full = float(np.mean(uv))
    half = float(np.mean(uv[::2]))
    return (4.0 * full - half) / 3.0


def _call_scalar_function(u, points: np.ndarray) -> np.ndarray:
    """Evaluate a user function on (k, n) points, vectorized or not."""
    try:
        out = np.asarray(u(points), dtype=float)
        if out.shape == (points.shape[0],):
            return out
    except Exception:
        pass
    return np.array([float(u(points[k])) for k in range(points.shape[0])])


@dataclass
class LelongNumberEstimate:
    value: float
    residuals: np.ndarray
    radii: np.ndarray
    monotone: bool
    flags: list = field(default_factory=list)


def lelong_number(u, p, radii=None, *, directions: int = 192,
                  seed: int = 3) -> LelongNumberEstimate:
    """Logarithmic pole strength of u at p by regression of sphere maxima.

    Fits max_{|q - p| = r} u(q) against log r over the supplied radii
    (default: a geometric ladder from 10^-1.5 to 10^-4) and reports the
    slope, per-radius residuals, and whether the max profile is monotone.
    """
    p = np.atleast_1d(np.asarray(p, dtype=complex))
    n = p.size
    if radii is None:
        radii = np.logspace(-1.5, -4.0, 6)
    radii = np.asarray(radii, dtype=float)
    if np.any(np.diff(radii) >= 0):
        raise ValueError("radii must be strictly decreasing")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((directions, 2 * n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs_c = dirs[:, 0::2] + 1j * dirs[:, 1::2]
    maxima = []
    for r in radii:
        pts = p[None, :] + r * dirs_c
        vals = _call_scalar_function(u, pts)
        maxima.append(float(np.max(vals)))
    maxima = np.asarray(maxima)
    monotone = bool(np.all(np.diff(maxima) <= 1e-12))
    flags = [] if monotone else ["max-profile-not-monotone"]
    a = np.stack([np.log(radii), np.ones_like(radii)], axis=1)
    coef, *_ = np.linalg.lstsq(a, maxima, rcond=None)
    fit = a @ coef
    return LelongNumberEstimate(value=float(coef[0]), residuals=maxima - fit,
                                radii=radii, monotone=monotone, flags=flags)


# ---------------------------------------------------------------------------
# argument-principle root counting near boundary arcs

@dataclass(frozen=True)
class Arc:
    """Closed boundary arc [t0, t1] with an annular neighborhood.

    ``width`` is the radial half-width of the neighborhood, ``pad`` the
    angular padding (radians) counted as part of the neighborhood.
    """

    t0: float
    t1: float
    width: float = 0.15
    pad: float = 0.0

    @property
    def length(self) -> float:
        """Normalized arc length (full circle = 1)."""
        return (self.t1 - self.t0) / (2 * np.pi)

    def contains_angle(self, t: np.ndarray) -> np.ndarray:
        t = np.mod(np.asarray(t) - self.t0, 2 * np.pi)
        return t <= (self.t1 - self.t0) + 2 * self.pad + 1e-12

    def contains(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=complex)
        ok_r = np.abs(np.abs(z) - 1.0) <= self.width
        return ok_r & self.contains_angle(np.angle(z) - self.pad)


@dataclass
class RootCountResult:
    per_arc_counts: list
    per_arc_required: list
    roots: list                 # list of lists, per arc
    threshold_ok: bool
    delta: float
    flags: list = field(default_factory=list)


def _trace_winding(fvals: np.ndarray) -> int:
    return winding_number(BoundaryFunction(fvals))


def root_count(k: int, chi, arcs, *, delta: float = None, newton_tol: float = 1e-12,
               max_subdiv: int = 5, samples_per_ball: int = 128) -> RootCountResult:
    """Count and locate solutions of z^k = chi(z) near boundary arcs.

    Covers each arc with balls on which chi moves by less than delta/2, maps
    each ball through every k-th root branch, verifies by the winding of
    z^k - chi(z) around the cell boundary, and Newton-polishes each root.
    Requires the measured delta < |chi| < 1 - delta margin to be positive.
    Per-arc counts are compared against k times the normalized arc length.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    arcs = list(arcs)
    # measure the modulus margin over the arc neighborhoods
    probe = []
    for arc in arcs:
        t = np.linspace(arc.t0 - arc.pad, arc.t1 + arc.pad, 48)
        for r in (1 - 0.8 * arc.width, 1 - 0.4 * arc.width, 1.0):
            probe.append(r * np.exp(1j * t))
    probe = np.concatenate(probe)
    chi_probe = np.asarray(chi(probe), dtype=complex)
    lo = float(np.min(np.abs(chi_probe)))
    hi = float(np.max(np.abs(chi_probe)))
    measured = min(lo, 1.0 - hi)
    if delta is None:
        delta = 0.9 * measured
    if delta <= 0 or lo <= delta / 2 or hi >= 1 - delta / 2:
        raise ValueError(
            f"modulus margin violated: |chi| in [{lo:.4f}, {hi:.4f}] leaves no "
            f"usable delta (requested {delta})"
        )

    def chi_at(z):
        return np.asarray(chi(z), dtype=complex)

    all_roots: list[complex] = []
    for arc in arcs:
        n_balls = max(8, int(np.ceil(4 * k * arc.length)))
        for _ in range(max_subdiv):
            centers = np.exp(1j * np.linspace(arc.t0, arc.t1, n_balls))
            rad_ball = 1.2 * (arc.t1 - arc.t0) / max(n_balls - 1, 1)
            ok = True
            for c in centers:
                t = 2 * np.pi * np.arange(12) / 12
                sample = c + rad_ball * np.exp(1j * t)
                sample = sample[np.abs(sample) <= 1]
                if len(sample) and np.max(np.abs(chi_at(sample) - chi_at(np.array([c]))[0])) >= delta / 2:
                    ok = False
                    break
            if ok:
                break
            n_balls *= 2
        else:
            raise ValueError("equicontinuity subdivision budget exhausted")

        for c in centers:
            chi_c = chi_at(np.array([c]))[0]
            t = 2 * np.pi * np.arange(samples_per_ball) / samples_per_ball
            cell_targets = chi_c + (delta / 2) * np.exp(1j * t)
            base_root = cell_targets ** (1.0 / k)  # principal branch, smooth: cell avoids 0
            # fix the branch cut: principal power of a loop away from 0 is smooth
            for branch in range(k):
                cell = base_root * np.exp(2j * np.pi * branch / k)
                vals = cell**k - chi_at(cell)
                try:
                    w = _trace_winding(vals)
                except ValueError:
                    continue
                if w < 1:
                    continue
                z = complex(np.mean(cell))
                for _ in range(60):
                    g = z**k - chi_at(np.array([z]))[0]
                    if abs(g) < newton_tol:
                        break
                    h = 1e-7
                    dchi = (chi_at(np.array([z + h]))[0] - chi_at(np.array([z - h]))[0]) / (2 * h)
                    dg = k * z ** (k - 1) - dchi
                    if dg == 0:
                        break
                    z = z - g / dg
                if abs(z**k - chi_at(np.array([z]))[0]) < 1e3 * newton_tol and abs(z) < 1:
                    if all(abs(z - r) > 1e-9 for r in all_roots):
                        all_roots.append(z)

    per_arc = []
    per_req = []
    roots_by_arc = []
    for arc in arcs:
        mine = [z for z in all_roots if arc.contains(np.array([z]))[0]]
        per_arc.append(len(mine))
        per_req.append(k * arc.length)
        roots_by_arc.append(sorted(mine, key=np.angle))
    threshold_ok = all(c >= r - 1e-12 for c, r in zip(per_arc, per_req))
    flags = [] if threshold_ok else ["count-below-threshold: k below the lemma rank"]
    return RootCountResult(per_arc_counts=per_arc, per_arc_required=per_req,
                           roots=roots_by_arc, threshold_ok=threshold_ok,
                           delta=delta, flags=flags)
