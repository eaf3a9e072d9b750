"""Batch driver: validate scenario configs, run pipelines, emit results.

Configs are JSON or YAML trees; every run directory receives the normalized
config echo (rerunning the echo reproduces the run byte for byte), a
structured report, CSV tables, and sampled radial profiles for plotting.
Numbers are written in round-trip decimal form.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .envelope import (
    EnvelopeStageError,
    estimate_k_alpha,
    estimate_lelong_envelope,
    estimate_poisson_envelope,
    verify_disc_formula,
)
from .functionals import Arc, WeightAtoms, green_sum, root_count
from .grid import DiscFunction, PolarGrid
from .structure import (
    AcStructure,
    Box,
    EllipticCoefficients,
    ball_structure,
    beltrami_structure,
    bump_structure,
    standard_structure,
    structure_from_complex_matrix,
)
from .disc_solver import solve_small_disc, two_point_disc
from .torus_attach import asymptotics_check, solve_rh

__all__ = ["main", "run_scenario", "validate_config", "emit_results", "ConfigError"]

PIPELINES = ("solve-disc", "envelope", "green", "roots", "rh-attach",
             "verify-formula", "asymptotics")

BUILTIN_STRUCTURES = ("standard", "ball", "beltrami-const", "bump", "table")


class ConfigError(ValueError):
    """Aggregated configuration problems."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# ---------------------------------------------------------------------------
# config handling

def _load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith((".yaml", ".yml")):
        import yaml
        return yaml.safe_load(text)
    return json.loads(text)


def _as_complex_vector(value, errors, what):
    try:
        arr = np.atleast_1d(np.asarray(value, dtype=complex))
        return [ [z.real, z.imag] for z in arr ]
    except Exception:
        errors.append(f"{what}: cannot parse as a complex vector")
        return None


def validate_config(config: dict) -> dict:
    """Schema-check and normalize a scenario config.

    All defaults are materialized so a run is reproducible from the echoed
    config alone.  Problems are aggregated and raise ConfigError together.
    """
    errors = []
    if not isinstance(config, dict):
        raise ConfigError(["config must be a mapping"])
    out: dict = {}

    pipeline = config.get("pipeline")
    if pipeline not in PIPELINES:
        errors.append(f"pipeline must be one of {PIPELINES}, got {pipeline!r}")
    out["pipeline"] = pipeline

    grid_cfg = dict(config.get("grid", {}))
    n_radial = int(grid_cfg.get("n_radial", 48))
    n_angular = int(grid_cfg.get("n_angular", 256))
    if n_radial < 4:
        errors.append("grid.n_radial must be at least 4")
    if n_angular < 8 or (n_angular & (n_angular - 1)) != 0:
        errors.append("grid.n_angular must be a power of two, at least 8")
    out["grid"] = {"n_radial": n_radial, "n_angular": n_angular}

    st = dict(config.get("structure", {"name": "standard", "dimension": 2}))
    name = st.get("name", "standard")
    if name not in BUILTIN_STRUCTURES:
        errors.append(f"unknown structure {name!r}; built-ins: {BUILTIN_STRUCTURES}")
    dim = int(st.get("dimension", 1 if name == "beltrami-const" else 2))
    if dim not in (1, 2):
        errors.append("structure.dimension must be 1 or 2")
    norm = {"name": name, "dimension": dim}
    if name == "beltrami-const":
        mu = st.get("mu", 0.2)
        mu_c = complex(mu[0], mu[1]) if isinstance(mu, (list, tuple)) else complex(mu)
        if abs(mu_c) >= 1:
            errors.append("structure.mu must satisfy |mu| < 1")
        norm["mu"] = [mu_c.real, mu_c.imag]
        norm["dimension"] = 1
    elif name == "bump":
        delta = float(st.get("delta", 0.05))
        if not (0 <= delta < 0.5):
            errors.append("structure.delta must lie in [0, 0.5)")
        norm["delta"] = delta
        norm["width"] = float(st.get("width", 0.8))
    elif name == "ball":
        norm["radius"] = float(st.get("radius", 1.0))
    elif name == "table":
        entries = st.get("entries")
        if not isinstance(entries, list) or not entries:
            errors.append("structure.table requires a nonempty entries list")
        else:
            for e in entries:
                if not (isinstance(e, dict) and "row" in e and "col" in e
                        and "powers" in e and "coeff" in e):
                    errors.append("table entry needs row, col, powers, coeff")
                    break
            norm["entries"] = entries
        norm["halfwidth"] = float(st.get("halfwidth", 2.0))
    if name in ("standard",):
        norm["halfwidth"] = float(st.get("halfwidth", 4.0))
    out["structure"] = norm

    atoms_cfg = config.get("atoms", [])
    atoms_norm = []
    for it in atoms_cfg:
        mass = float(it.get("mass", 0.0))
        if mass <= 0:
            errors.append("atom mass must be positive")
        point = _as_complex_vector(_cplx(it.get("point", 0)), errors, "atom point")
        atoms_norm.append({"point": point, "mass": mass})
    out["atoms"] = atoms_norm

    disc = dict(config.get("disc", {}))
    if "b" in disc:
        b = _cplx_scalar(disc["b"])
        if abs(b) > 0.5:
            errors.append(f"pin radius bound: |b| = {abs(b):.3f} exceeds 1/2")
        disc["b"] = [b.real, b.imag]
    for key in ("p", "q", "v"):
        if key in disc:
            disc[key] = _as_complex_vector(_cplx(disc[key]), errors, f"disc.{key}")
    out["disc"] = disc

    out["solver"] = {
        "tol": float(config.get("solver", {}).get("tol", 1e-8)),
        "budget": int(config.get("solver", {}).get("budget", 40)),
    }
    out["seed"] = int(config.get("seed", 0))
    out["threads"] = int(config.get("threads", 1))

    env = dict(config.get("envelope", {}))
    env.setdefault("mode", "k-alpha")
    if env["mode"] not in ("k-alpha", "poisson", "lelong"):
        errors.append("envelope.mode must be k-alpha, poisson, or lelong")
    pts = env.get("points", [])
    env["points"] = [_as_complex_vector(_cplx(p), errors, "envelope point") for p in pts]
    env.setdefault("eps", 0.05)
    out["envelope"] = env

    rh = dict(config.get("rh", {}))
    rh.setdefault("epsilon", 0.12)
    rh.setdefault("orders", [4, 8, 16, 32])
    rh.setdefault("n", 8)
    out["rh"] = rh

    roots_cfg = dict(config.get("roots", {}))
    roots_cfg.setdefault("k", 8)
    roots_cfg.setdefault("chi_const", 0.5)
    roots_cfg.setdefault("arcs", [[0.0, 2 * np.pi]])
    out["roots"] = roots_cfg

    green_cfg = dict(config.get("green", {}))
    green_cfg.setdefault("sources", [{"zeta": [0.5, 0.0], "mass": 1.0}])
    green_cfg.setdefault("eval_radii", [0.0, 0.2, 0.4, 0.6, 0.8])
    out["green"] = green_cfg

    if errors:
        raise ConfigError(errors)
    return out


def _cplx(value):
    """Accept [re, im] pairs, lists of them, or bare numbers."""
    return value


def _cplx_scalar(value) -> complex:
    if isinstance(value, (list, tuple)):
        return complex(value[0], value[1])
    return complex(value)


def _vec_from_norm(norm) -> np.ndarray:
    return np.array([complex(re, im) for re, im in norm])


def _build_structure(norm: dict) -> AcStructure:
    name = norm["name"]
    if name == "standard":
        return standard_structure(norm["dimension"], halfwidth=norm.get("halfwidth", 4.0))
    if name == "ball":
        return ball_structure(norm["dimension"], radius=norm.get("radius", 1.0))
    if name == "beltrami-const":
        return beltrami_structure(complex(norm["mu"][0], norm["mu"][1]))
    if name == "bump":
        return bump_structure(norm["delta"], n=norm["dimension"], width=norm["width"])
    if name == "table":
        entries = norm["entries"]
        dim = norm["dimension"]

        def a_field(z):
            out = np.zeros(z.shape[:-1] + (dim, dim), dtype=complex)
            for e in entries:
                coeff = _cplx_scalar(e["coeff"])
                powers = e["powers"]
                mono = np.ones(z.shape[:-1], dtype=complex)
                for comp, (a, b) in enumerate(zip(powers[0::2], powers[1::2])):
                    mono = mono * z[..., comp] ** a * np.conj(z[..., comp]) ** b
                out[..., int(e["row"]), int(e["col"])] += coeff * mono
            return out

        return structure_from_complex_matrix(a_field, dim, Box.cube(dim, norm["halfwidth"]),
                                             name="table")
    raise ConfigError([f"unknown structure {name!r}"])


# ---------------------------------------------------------------------------
# output handling

def _fmt(x) -> str:
    """Round-trip decimal formatting for floats; repr parses back exactly."""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _atomic_write(path: str, data: str):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def emit_results(results: dict, out_dir: str):
    """Write config echo, report, tables, and profiles atomically."""
    os.makedirs(out_dir, exist_ok=True)
    tables_dir = os.path.join(out_dir, "tables")
    os.makedirs(tables_dir, exist_ok=True)
    _atomic_write(os.path.join(out_dir, "config.echo"),
                  json.dumps(results["config"], indent=2, sort_keys=True) + "\n")
    _atomic_write(os.path.join(out_dir, "report.json"),
                  json.dumps(results["report"], indent=2, sort_keys=True,
                             default=_json_default) + "\n")
    for name, (header, rows) in results.get("tables", {}).items():
        _atomic_write(os.path.join(tables_dir, f"{name}.csv"), _csv_text(header, rows))
    for name, (header, rows) in results.get("profiles", {}).items():
        _atomic_write(os.path.join(out_dir, f"{name}.csv"), _csv_text(header, rows))


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _disc_profile(f: DiscFunction):
    """(r, value) samples along the positive real radius, per component."""
    grid = f.grid
    rows = []
    for k, r in enumerate(grid.radii):
        row = [float(r)]
        for c in range(f.n_components):
            row += [float(f.values[k, 0, c].real), float(f.values[k, 0, c].imag)]
        rows.append(row)
    header = ["r"]
    for c in range(f.n_components):
        header += [f"re_{c + 1}", f"im_{c + 1}"]
    return header, rows


def _disc_table(f: DiscFunction):
    grid = f.grid
    header = ["r", "theta"]
    for c in range(f.n_components):
        header += [f"re_{c + 1}", f"im_{c + 1}"]
    rows = []
    for k, r in enumerate(grid.radii):
        for a, t in enumerate(grid.angles):
            row = [float(r), float(t)]
            for c in range(f.n_components):
                row += [float(f.values[k, a, c].real), float(f.values[k, a, c].imag)]
            rows.append(row)
    return header, rows


# ---------------------------------------------------------------------------
# pipelines

def _atoms_from_config(cfg) -> WeightAtoms:
    return WeightAtoms([(_vec_from_norm(a["point"]), a["mass"]) for a in cfg["atoms"]])


def _pipeline_solve_disc(cfg):
    structure = _build_structure(cfg["structure"])
    grid = PolarGrid(cfg["grid"]["n_radial"], cfg["grid"]["n_angular"])
    disc_cfg = cfg["disc"]
    p = _vec_from_norm(disc_cfg.get("p") or [[0.0, 0.0]] * structure.n)
    report = {"stage": "solve-disc"}
    if disc_cfg.get("q") is not None:
        q = _vec_from_norm(disc_cfg["q"])
        tp = two_point_disc(structure, p, q, grid=grid)
        f, rep = tp.disc, tp.report
        report["pin_b"] = tp.b
    else:
        v = _vec_from_norm(disc_cfg.get("v") or [[1.0, 0.0]] * structure.n)
        f, rep = solve_small_disc(structure, p, v, grid=grid, tol=cfg["solver"]["tol"])
        report["lambda_scale"] = rep.lambda_scale
    report.update({
        "iterations": rep.iterations,
        "residual": rep.residual,
        "contraction_estimate": rep.contraction_estimate,
        "pins_error": rep.pins_error,
    })
    return {
        "report": report,
        "tables": {"disc": _disc_table(f)},
        "profiles": {"disc_profile": _disc_profile(f)},
    }


def _pipeline_envelope(cfg):
    structure = _build_structure(cfg["structure"])
    alpha = _atoms_from_config(cfg)
    env = cfg["envelope"]
    budget = cfg["solver"]["budget"]
    rows = []
    report = {"stage": "envelope", "mode": env["mode"], "points": []}
    for pt_norm in env["points"]:
        p = _vec_from_norm(pt_norm)
        if env["mode"] == "k-alpha":
            est = estimate_k_alpha(structure, alpha, p, budget=budget, seed=cfg["seed"])
        elif env["mode"] == "lelong":
            from .disc_solver import solve_small_disc as _ssd
            g, _ = _ssd(structure, p, np.eye(structure.n, dtype=complex)[0], radius=0.01)
            est = estimate_lelong_envelope(structure, alpha, g, None, env["eps"],
                                           budget=budget, seed=cfg["seed"])
        else:
            u = _psh_log_distance(alpha)
            est = estimate_poisson_envelope(structure, u, p, budget=budget,
                                            seed=cfg["seed"])
        rows.append([np.linalg.norm(p), est.value])
        report["points"].append({"p": p, "value": est.value, "flags": est.flags,
                                 "history": est.history})
    return {"report": report, "tables": {"envelope": (["abs_p", "value"], rows)}}


def _psh_log_distance(alpha: WeightAtoms):
    atoms = alpha.atoms

    def u(x):
        x = np.atleast_2d(np.asarray(x, complex))
        best = np.full(x.shape[0], 0.0)
        for p, m in atoms:
            d = np.linalg.norm(x - p[None, :], axis=1)
            with np.errstate(divide="ignore"):
                best = np.minimum(best, m * np.log(d))
        return best

    return u


def _pipeline_green(cfg):
    g = cfg["green"]
    sources = [(complex(sc["zeta"][0], sc["zeta"][1]), float(sc["mass"]))
               for sc in g["sources"]]
    rows = []
    for r in g["eval_radii"]:
        val = green_sum(sources, complex(r))
        rows.append([float(r), val])
    return {
        "report": {"stage": "green", "sources": sources, "values": rows},
        "tables": {"green": (["r", "value"], rows)},
        "profiles": {"green_profile": (["r", "value"], rows)},
    }


def _pipeline_roots(cfg):
    rc = cfg["roots"]
    k = int(rc["k"])
    chi_const = _cplx_scalar(rc["chi_const"])
    arcs = [Arc(float(a[0]), float(a[1])) for a in rc["arcs"]]
    res = root_count(k, lambda z: chi_const + 0 * z, arcs)
    rows = []
    for j, arc in enumerate(arcs):
        rows.append([j, arc.t0, arc.t1, res.per_arc_counts[j], res.per_arc_required[j]])
    roots_rows = []
    for j, roots in enumerate(res.roots):
        for z in roots:
            roots_rows.append([j, z.real, z.imag, abs(z)])
    return {
        "report": {"stage": "roots", "threshold_ok": res.threshold_ok,
                   "delta": res.delta, "flags": res.flags},
        "tables": {"arc_counts": (["arc", "t0", "t1", "count", "required"], rows),
                   "roots": (["arc", "re", "im", "abs"], roots_rows)},
    }


def _rh_coefficients(cfg) -> EllipticCoefficients:
    eps = float(cfg["rh"]["epsilon"])

    def c(z, w):
        return eps * w * 0.5 * (1 + 0.3 * np.conj(z))

    def d(z, w):
        return eps * w * 0.6 * np.exp(0.2j)

    return EllipticCoefficients(
        c=c, d=d, gamma=0.1,
        c_over_w=lambda z, w: eps * 0.5 * (1 + 0.3 * np.conj(z)) + 0 * z,
        d_over_w=lambda z, w: eps * 0.6 * np.exp(0.2j) + 0 * z,
    )


def _pipeline_rh_attach(cfg):
    coeffs = _rh_coefficients(cfg)
    grid = PolarGrid(min(cfg["grid"]["n_radial"], 32), min(cfg["grid"]["n_angular"], 128))
    sol = solve_rh(coeffs, int(cfg["rh"]["n"]), grid=grid)
    disc = sol.disc()
    return {
        "report": {"stage": "rh-attach", "n": sol.n,
                   "boundary_residual": sol.boundary_residual,
                   "pde_residual": sol.pde_residual,
                   "interior_max_w": sol.interior_max_w,
                   "iterations": sol.iterations},
        "tables": {"attached_disc": _disc_table(disc)},
        "profiles": {"u_profile": _disc_profile(sol.u), "v_profile": _disc_profile(sol.v)},
    }


def _pipeline_asymptotics(cfg):
    coeffs = _rh_coefficients(cfg)
    grid = PolarGrid(min(cfg["grid"]["n_radial"], 32), min(cfg["grid"]["n_angular"], 128))
    rep = asymptotics_check(coeffs, cfg["rh"]["orders"], grid=grid)
    rows = [[r.n, r.sup_u, r.holder_v] for r in rep.rows]
    return {
        "report": {"stage": "asymptotics", "sup_u_decreasing": rep.sup_u_decreasing,
                   "holder_v_bounded": rep.holder_v_bounded, "flags": rep.flags},
        "tables": {"asymptotics": (["n", "sup_u", "holder_v"], rows)},
    }


def _pipeline_verify_formula(cfg):
    structure = _build_structure(cfg["structure"])
    alpha = _atoms_from_config(cfg)
    env = cfg["envelope"]
    pts = [_vec_from_norm(p) for p in env["points"]]
    res = verify_disc_formula(structure, alpha, pts, float(env["eps"]),
                              budget=cfg["solver"]["budget"], seed=cfg["seed"])
    rows = []
    for r in res["rows"]:
        rows.append([np.linalg.norm(r["point"]), r["el_hat"], r["ep_khat"], r["gap"]])
    return {
        "report": {"stage": "verify-formula", "all_consistent": res["all_consistent"],
                   "eps": res["eps"],
                   "counterexample_candidates": res["counterexample_candidates"]},
        "tables": {"formula": (["abs_p", "EL_hat", "EP_khat", "gap"], rows)},
    }


_PIPELINE_FN = {
    "solve-disc": _pipeline_solve_disc,
    "envelope": _pipeline_envelope,
    "green": _pipeline_green,
    "roots": _pipeline_roots,
    "rh-attach": _pipeline_rh_attach,
    "asymptotics": _pipeline_asymptotics,
    "verify-formula": _pipeline_verify_formula,
}


def run_scenario(config_path: str, out_dir: str, *, seed: int | None = None,
                 threads: int | None = None) -> int:
    """Execute the pipeline named in the config; exit code semantics:
    0 success, 1 config error, 2 numerical-stage failure."""
    try:
        raw = _load_config(config_path)
        if seed is not None:
            raw["seed"] = seed
        if threads is not None:
            raw["threads"] = threads
        cfg = validate_config(raw)
    except (ConfigError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    np.random.seed(cfg["seed"])
    try:
        results = _PIPELINE_FN[cfg["pipeline"]](cfg)
    except EnvelopeStageError as exc:
        emit_results({"config": cfg, "report": {"error": str(exc), "stage": exc.stage}},
                     out_dir)
        print(f"numerical stage failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        emit_results({"config": cfg, "report": {"error": str(exc),
                                                "stage": cfg["pipeline"]}}, out_dir)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    results["config"] = cfg
    emit_results(results, out_dir)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="jdiscs",
        description="pseudoholomorphic disc laboratory: scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in PIPELINES:
        sp = sub.add_parser(name, help=f"run the {name} pipeline")
        sp.add_argument("--config", required=True, help="scenario config (JSON or YAML)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    threads = args.threads
    env_threads = os.environ.get("JDISCS_THREADS")
    if threads is None and env_threads is not None:
        threads = int(env_threads)
    raw = _load_config(args.config) if os.path.exists(args.config) else None
    if raw is not None and raw.get("pipeline") not in (None, args.command):
        print(f"config pipeline {raw.get('pipeline')!r} does not match "
              f"subcommand {args.command!r}", file=sys.stderr)
        return 1
    if raw is not None and raw.get("pipeline") is None:
        raw["pipeline"] = args.command
        import tempfile
        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as tmp:
            json.dump(raw, tmp)
            path = tmp.name
        code = run_scenario(path, args.out, seed=args.seed, threads=threads)
        os.unlink(path)
        return code
    return run_scenario(args.config, args.out, seed=args.seed, threads=threads)


if __name__ == "__main__":
    sys.exit(main())
