"""Command-line pipelines: ``python -m dbgtorus <subcommand> ...`` or ``dbgtorus ...``.

Every subcommand writes its artifacts to the output directory, taken from
``--out``, the config file, ``$DBGTORUS_OUT`` or ``./dbgtorus-out`` (first one
set wins).  JSON reports carry a schema tag, the fully resolved config and
SHA-256 hashes of the config and of every input file.  Reports hold no
timestamps or runtimes, so identical inputs give byte-identical files.

A YAML config file (JSON also parses) may hold a ``common`` section and one
section per subcommand; command-line flags override it.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

SCHEMA_VERSION = 1
OUT_ENV = "DBGTORUS_OUT"
DEFAULT_OUT = "dbgtorus-out"

# built-in defaults, by subcommand; "common" applies everywhere
DEFAULTS = {
    "common": {"a": 5.0, "quadrature_tol": 1e-12, "delta": 0.0, "metric": None},
    "build-profile": {},
    "solve-metric": {},
    "integrate": {"hamiltonian": "ConformalKinetic", "eps": 0.0, "potential": "unit", "q": "0.7,0.1",
                  "angle": 2.3, "p": None, "T": 10.0, "h": 1e-3, "order": 6, "sample_dt": 0.01},
    "jacobi": {"chord_angle": 0.3, "h": 1e-3},
    "lyapunov": {"flat": False, "eps": 0.0, "level": None, "n": 100, "T": 1000.0, "seed": 0,
                 "renorm_dt": 1.0, "stability": False},
    "returnmap": {"eps_grid": "1e-1,1e-2,1e-3", "n": 10000, "m": 1, "seed": 0, "potential": "unit"},
    "lens-check": {"a": 25.0, "eps": 1e-2, "n": 1000, "seed": 0},
    "figure": {"r_min_fraction": 0.3},
    "acceptance": {"only": None},
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    """Plain JSON types, with non-finite floats mapped to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def canonical(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=1)


def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def write_json(path: Path, command: str, config: dict, inputs: dict, result) -> None:
    doc = {
        "schema": f"dbgtorus/{command}/v{SCHEMA_VERSION}",
        "config": config,
        "config_sha256": sha256_bytes(canonical(config).encode()),
        "inputs_sha256": inputs,
        "result": result,
    }
    path.write_text(canonical(doc) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    """Floats at 17 significant digits, so values round-trip exactly."""
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise UsageError("the config file must hold a mapping")
    return data


def resolve(command: str, args: argparse.Namespace, file_cfg: dict) -> dict:
    """Built-in defaults < config file (common, then section) < flags."""
    keys = {**DEFAULTS["common"], **DEFAULTS.get(command, {})}
    out = dict(keys)
    for section in ("common", command):
        for k, v in (file_cfg.get(section) or {}).items():
            k = k.replace("-", "_")
            if section == "common" and k in ("out", "threads"):
                continue  # handled by main()
            if k not in keys:
                raise UsageError(f"unknown key {k!r} in config section {section!r}")
            out[k] = v
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _floats(text, n: int | None = None) -> list[float]:
    vals = [float(x) for x in str(text).split(",") if x.strip()]
    if n is not None and len(vals) != n:
        raise UsageError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def load_metric(cfg: dict, inputs: dict):
    """The metric named by ``--metric`` (a solve-metric report) or built from a and delta."""
    from .conformal import build_metric
    from .profile import CapParams, build_profile

    a, delta, tol = float(cfg["a"]), float(cfg["delta"]), float(cfg["quadrature_tol"])
    if cfg.get("metric"):
        raw = Path(cfg["metric"]).read_bytes()
        inputs["metric"] = sha256_bytes(raw)
        res = json.loads(raw)["result"]
        a, delta, tol = float(res["a"]), float(res["delta"]), float(res["quadrature_tol"])
        cfg["a"], cfg["delta"], cfg["quadrature_tol"] = a, delta, tol
    return build_metric(build_profile(CapParams(a=a, quadrature_tol=tol)), delta)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_build_profile(cfg, out: Path, inputs):
    from .profile import CapParams, build_profile, identity_residual, verify_profile

    p = build_profile(CapParams(a=float(cfg["a"]), quadrature_tol=float(cfg["quadrature_tol"])))
    res = {"profile": p.to_json(), "certificate": verify_profile(p).to_dict(),
           "identity_residual": identity_residual(p)}
    write_json(out / "profile.json", "build-profile", cfg, inputs, res)
    return res["certificate"]["passed"]


def cmd_solve_metric(cfg, out: Path, inputs):
    from .conformal import dbg_certificate

    m = load_metric(cfg, inputs)
    res = {**m.to_json(), "quadrature_tol": float(cfg["quadrature_tol"]),
           "certificate": dbg_certificate(m).to_dict()}
    write_json(out / "metric.json", "solve-metric", cfg, inputs, res)
    return True


def cmd_integrate(cfg, out: Path, inputs):
    from .flow import CotangentState, HamiltonianSpec, integrate, unit_covector

    kind = cfg["hamiltonian"]
    m = None if kind == "Flat" else load_metric(cfg, inputs)
    spec = HamiltonianSpec(kind, m, float(cfg["eps"]), potential=cfg["potential"])
    q = _floats(cfg["q"], 2)
    if cfg.get("p") is not None:
        st = CotangentState(q, _floats(cfg["p"], 2))
    elif kind == "ConformalKinetic":
        st = unit_covector(m, q, float(cfg["angle"]))
    else:
        th = float(cfg["angle"])
        st = CotangentState(q, [0.3 * math.cos(th), 0.3 * math.sin(th)])
    tr = integrate(spec, st, float(cfg["T"]), float(cfg["h"]), order=int(cfg["order"]),
                   sample_dt=float(cfg["sample_dt"]), sections=True)
    write_csv(out / "trajectory.csv", ["t", "x", "y", "px", "py", "H", "clairaut", "event"], tr.to_rows())
    res = {"spec": spec.describe(), "max_energy_drift": tr.max_energy_drift,
           "passage_clairaut_drift_max": float(tr.passage_clairaut_drift.max())
           if tr.passage_clairaut_drift.size else 0.0,
           "events": [{"t": e.t, "kind": e.kind} for e in tr.events],
           "final": {"q": tr.final.q, "p": tr.final.p, "lift": tr.final.lift}}
    write_json(out / "integrate.json", "integrate", cfg, inputs, res)
    return True


def cmd_jacobi(cfg, out: Path, inputs):
    from . import jacobi as J

    m = load_metric(cfg, inputs)
    h = float(cfg["h"])
    ch = J.chord_from_entry_angle(m, float(cfg["chord_angle"]), h=h)
    tr = J.propagate(ch, [J.TransverseState(0.0, 1.0, 0.0), J.TransverseState(1.0, 0.0, 0.0)])
    uS, uC = tr.u(0), tr.u(1)
    write_csv(out / "chord.csv", ["t", "r", "K", "J_S", "J_S'", "J_C", "J_C'", "u_S", "u_C"],
              zip(tr.t, tr.r, tr.K, tr.J[:, 0], tr.Jp[:, 0], tr.J[:, 1], tr.Jp[:, 1], uS, uC))
    res = {"r_min": ch.r_min, "clairaut": ch.clairaut, "T1": ch.T1, "T2": ch.T2, "deep": ch.deep,
           "cone_exit_u0": J.cone_transit(ch, 0.0), "blowups_u_C": J.riccati_events(tr, 1)}
    if ch.deep:
        A = J.check_A(ch)
        res.update({"u_S": A.u_S, "J_S_extra_zeros": A.extra_zeros, "A_flagged": A.flagged,
                    "tau": J.conjugate_time(ch)})
    write_json(out / "chord.json", "jacobi", cfg, inputs, res)
    return True


def cmd_lyapunov(cfg, out: Path, inputs):
    from .flow import HamiltonianSpec
    from .lyapunov import SampleSpec, run_ensemble, shifted_metric_for_level

    n, T, seed = int(cfg["n"]), float(cfg["T"]), int(cfg["seed"])
    if cfg["flat"]:
        spec = HamiltonianSpec("Flat")
    else:
        m = load_metric(cfg, inputs)
        eps = float(cfg["eps"])
        if eps > 0:
            level = eps if cfg["level"] is None else float(cfg["level"])
            m = shifted_metric_for_level(m, eps, level)
        spec = HamiltonianSpec("ConformalKinetic", m)
    rep = run_ensemble(SampleSpec(spec, n, T, float(cfg["renorm_dt"]), seed),
                       stability=bool(cfg["stability"]), keep_entries=False)
    write_json(out / "lyapunov.json", "lyapunov", cfg, inputs, rep.to_dict())
    return True


def cmd_returnmap(cfg, out: Path, inputs):
    from .returnmap import closeness_scan

    m = load_metric(cfg, inputs)
    rep = closeness_scan(m, _floats(cfg["eps_grid"]), int(cfg["n"]), int(cfg["m"]), seed=int(cfg["seed"]),
                         potential=cfg["potential"])
    write_json(out / "closeness.json", "returnmap", cfg, inputs, rep.to_dict())
    return True


def cmd_lens_check(cfg, out: Path, inputs):
    from .lens import lens_suite

    m = load_metric(cfg, inputs)
    res = lens_suite(m, float(cfg["eps"]), int(cfg["n"]), seed=int(cfg["seed"]))
    write_json(out / "lens.json", "lens-check", cfg, inputs, res)
    return res["passed"]


def cmd_figure(cfg, out: Path, inputs, which: str):
    if which == "rho":
        from .profile import CapParams, build_profile

        p = build_profile(CapParams(a=float(cfg["a"]), quadrature_tol=float(cfg["quadrature_tol"])))
        ls = np.linspace(0.0, 1.5 * p.l2, 1501)
        d = p.derivatives(ls)
        write_csv(out / "rho.csv", ["l", "rho", "drho", "d2rho"], zip(ls, d[:, 0], d[:, 1], d[:, 2]))
        res = {"markers": {"1/sqrt(10a)": p.l0, "1/sqrt(5a)": p.l1, "1/(2sqrt(a))": p.l2},
               "drho_at_markers": [p.drho(p.l0), p.drho(p.l1)], "rows": int(ls.size)}
        write_json(out / "rho.json", "figure-rho", cfg, inputs, res)
        return True
    from . import jacobi as J

    m = load_metric(cfg, inputs)
    ch = J.build_chord(m, float(cfg["r_min_fraction"]) * m.r0)
    tr = J.propagate(ch, [J.TransverseState(0.0, 1.0, 0.0), J.TransverseState(1.0, 0.0, 0.0)])
    # u starts on the cone boundary at the entry t = -T1: the combination of J_S, J_C with (J, J') = (1, 0)
    M = np.array([[tr.J[0, 0], tr.J[0, 1]], [tr.Jp[0, 0], tr.Jp[0, 1]]])
    c = np.linalg.solve(M, [1.0, 0.0])
    Ju, Jpu = tr.J @ c, tr.Jp @ c
    with np.errstate(divide="ignore", invalid="ignore"):
        u = Jpu / Ju
    write_csv(out / "riccati.csv", ["t", "u_S", "u_C", "u"], zip(tr.t, tr.u(0), tr.u(1), u))
    res = {"r_min": ch.r_min, "T1": ch.T1, "T2": ch.T2, "tau": J.conjugate_time(ch),
           "u_exit": float(u[-1]), "rows": int(tr.t.size)}
    write_json(out / "riccati.json", "figure-riccati", cfg, inputs, res)
    return True


def cmd_acceptance(cfg, out: Path, inputs):
    from . import acceptance

    only = None if not cfg["only"] else [int(x) for x in str(cfg["only"]).split(",")]
    res = acceptance.run(only)
    doc = {"passed": all(r.passed for r in res), "criteria": [r.to_dict() for r in res]}
    # runtimes make this report time-dependent; it is kept out of the reproducibility check
    write_json(out / "acceptance.json", "acceptance", cfg, inputs, doc)
    return doc["passed"]


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dbgtorus", description=__doc__.split("\n")[0])
    ap.add_argument("--config", help="YAML/JSON config file; flags override it")
    ap.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    ap.add_argument("--threads", type=int, help="cap on worker threads for parallel kernels")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, metric=True):
        p.add_argument("--a", type=float, help="cap parameter a")
        p.add_argument("--quadrature-tol", dest="quadrature_tol", type=float)
        if metric:
            p.add_argument("--delta", type=float, help="metric shift delta")
            p.add_argument("--metric", help="metric.json written by solve-metric")

    common(sub.add_parser("build-profile", help="build and certify rho"), metric=False)
    common(sub.add_parser("solve-metric", help="solve for g(r) and certify the DBG conditions"))

    p = sub.add_parser("integrate", help="integrate one orbit")
    common(p)
    p.add_argument("--hamiltonian", choices=["Flat", "ConformalKinetic", "PerturbedKinetic", "Relativistic"])
    p.add_argument("--eps", type=float)
    p.add_argument("--potential", choices=["unit", "compact"])
    p.add_argument("--q", help="x,y")
    p.add_argument("--p", help="px,py (overrides --angle)")
    p.add_argument("--angle", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--h", type=float)
    p.add_argument("--order", type=int, choices=[2, 4, 6])
    p.add_argument("--sample-dt", dest="sample_dt", type=float)

    p = sub.add_parser("jacobi", help="Jacobi fields along one cap chord")
    common(p)
    p.add_argument("--chord-angle", dest="chord_angle", type=float, help="entry angle at C_r1 (radians)")
    p.add_argument("--h", type=float)

    p = sub.add_parser("lyapunov", help="Lyapunov ensemble")
    common(p)
    p.add_argument("--flat", action="store_const", const=True)
    p.add_argument("--eps", type=float, help="run on a level of H_eps via the equivalent metric")
    p.add_argument("--level", type=float, help="energy level h (default: eps)")
    p.add_argument("--n", type=int)
    p.add_argument("--T", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--renorm-dt", dest="renorm_dt", type=float)
    p.add_argument("--stability", action="store_const", const=True, help="continue flagged orbits to 2T")

    p = sub.add_parser("returnmap", help="closeness of R_eps to R")
    common(p)
    p.add_argument("--eps-grid", dest="eps_grid")
    p.add_argument("--n", type=int)
    p.add_argument("--m", type=int, choices=[0, 1])
    p.add_argument("--seed", type=int)
    p.add_argument("--potential", choices=["unit", "compact"])

    p = sub.add_parser("lens-check", help="lens maps, sigma_eps and the decomposition")
    common(p)
    p.add_argument("--eps", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("figure", help="plot data (CSV)")
    p.add_argument("which", choices=["rho", "riccati"])
    common(p)
    p.add_argument("--r-min-fraction", dest="r_min_fraction", type=float,
                   help="closest approach of the riccati chord, as a fraction of r0")

    p = sub.add_parser("acceptance", help="run the acceptance criteria")
    p.add_argument("--only", help="comma-separated criterion numbers")
    return ap


COMMANDS = {"build-profile": cmd_build_profile, "solve-metric": cmd_solve_metric, "integrate": cmd_integrate,
            "jacobi": cmd_jacobi, "lyapunov": cmd_lyapunov, "returnmap": cmd_returnmap,
            "lens-check": cmd_lens_check, "acceptance": cmd_acceptance}


def main(argv=None) -> int:
    from .errors import DBGError

    args = build_parser().parse_args(argv)
    try:
        file_cfg = load_config(args.config)
        out = Path(args.out or (file_cfg.get("common") or {}).get("out") or os.environ.get(OUT_ENV) or DEFAULT_OUT)
        out.mkdir(parents=True, exist_ok=True)
        threads = args.threads or (file_cfg.get("common") or {}).get("threads")
        if threads:
            import numba
            numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))
        cfg = resolve(args.command, args, file_cfg)
        inputs = {}
        if args.config:
            inputs["config_file"] = sha256_bytes(Path(args.config).read_bytes())
        if args.command == "figure":
            cfg["figure"] = args.which
            ok = cmd_figure(cfg, out, inputs, args.which)
        else:
            ok = COMMANDS[args.command](cfg, out, inputs)
    except (DBGError, UsageError, ValueError, OSError) as exc:
        record = {"schema": f"dbgtorus/error/v{SCHEMA_VERSION}", "error": type(exc).__name__,
                  "message": str(exc), "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        try:
            Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT, "error.json").write_text(
                canonical(record) + "\n")
        except OSError:
            pass
        return 2
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
