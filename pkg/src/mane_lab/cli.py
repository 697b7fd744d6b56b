"""``mane-lab <command> --config <path> [--out <dir>] [--seed <n>] [--threads <n>]``.

Every run writes ``summary.json`` (with the resolved configuration and a
provenance block) plus one CSV per data series into the output directory.

Exit status: 0 success, 1 invalid input or unwritable output, 2 numerical
failure (``diagnostics.json`` is written), 3 acceptance mismatch
(verify-paper only).
"""
from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import math
import os
import sys as _sys
from importlib import resources

import jsonschema
import numpy as np

from . import acceptance
from .barrier import aubry_flag, barrier_profile
from .core import CotangentState, InputError, ManeLabError, NumericalError, TangentState, legendre_forward
from .critical import DEFAULT_T_GRID, estimate_cu
from .flow import IntegratorConfig, el_residual, integrate
from .io import atoms_table, path_table, provenance, segment_table, write_csv, write_json
from .measures import (
    graph_union_witness,
    horocycle_measure,
    mean_energy,
    rescale_measure,
    sample_from_path,
    stationarity_residual,
)
from .symmaps import action_identity_residual, barrier_transport_check, build_map, cu_invariance_report, mapped_system, tonelli_probe
from .systems import SystemSpec, build_system, reference_orbit, reference_segment
from .variational import MinimizeConfig, el_grid_bound, minimize_closed_loop, minimize_fixed_endpoints

COMMANDS = ("integrate", "minimize", "cu", "barrier", "aubry-scan", "measures", "symcheck", "verify-paper")
# config section holding each command's parameters
SECTION = {
    "integrate": "integrate",
    "minimize": "minimize_path",
    "cu": "cu",
    "barrier": "barrier",
    "aubry-scan": "aubry_scan",
    "measures": "measures",
    "symcheck": "symcheck",
    "verify-paper": "verify_paper",
}
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3


class AcceptanceMismatch(Exception):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("mane_lab").joinpath("config.schema.json").read_text(encoding="utf-8"))


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"config invalid at {where}: {exc.message}") from None


def _dataclass_defaults(cls, skip=()):
    return {f.name: f.default for f in dataclasses.fields(cls) if f.name not in skip}


def resolve_config(raw: dict, command: str, seed=None) -> dict:
    """Validated copy of ``raw`` with every default written out."""
    validate_config(raw)
    cfg = copy.deepcopy(raw)
    if cfg.get("command", command) != command:
        raise InputError(f"config is for command {cfg['command']!r}, not {command!r}")
    cfg["command"] = command
    cfg["system"] = SystemSpec.from_dict(cfg["system"]).to_dict()
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg.setdefault("seed", 0)
    if cfg["seed"] < 0:
        raise InputError("seed must be nonnegative")
    cfg["minimize"] = {**_dataclass_defaults(MinimizeConfig, ("seed", "threads")), **cfg.get("minimize", {})}
    cfg["integrator"] = {**_dataclass_defaults(IntegratorConfig), **cfg.get("integrator", {})}
    section = SECTION[command]
    if section not in cfg and command != "verify-paper":
        raise InputError(f"command {command!r} needs a {section!r} section")
    cfg.setdefault(section, {})
    validate_config(cfg)
    return cfg


# ---------------------------------------------------------------- commands

def _vec(sys, v, what):
    v = np.asarray(v, float)
    if v.shape != (sys.dimension,):
        raise InputError(f"{what} must have {sys.dimension} entries")
    return v


def _reference_c(sys, sec, key="c"):
    if key not in sec:
        if sys.reference is None or sys.reference.c_u is None:
            raise InputError(f"{sys.name} has no reference c_u; give '{key}' explicitly")
        sec[key] = float(sys.reference.c_u)
    return float(sec[key])


def cmd_integrate(sys, cfg, run):
    sec = cfg["integrate"]
    base = _vec(sys, sec["base"], "base")
    if ("momentum" in sec) == ("velocity" in sec):
        raise InputError("give exactly one of 'momentum' and 'velocity'")
    if "velocity" in sec:
        start = legendre_forward(sys, TangentState(base, _vec(sys, sec["velocity"], "velocity")))
    else:
        start = CotangentState(base, _vec(sys, sec["momentum"], "momentum"))
    seg = integrate(sys, start, float(sec["duration"]), run["icfg"])
    header, rows = segment_table(sys, seg)
    drifts = {k: float(np.max(np.abs(v - v[0]))) for k, v in seg.integral_logs.items()}
    summary = {
        "samples": len(seg),
        "energy_initial": float(seg.energy_log[0]),
        "energy_drift_relative": seg.drift,
        "drift_exceeded": seg.drift_exceeded,
        "integral_drift": drifts,
        "final_state": {"base": seg.bases[-1], "momentum": seg.momenta[-1]},
    }
    return summary, [("trajectory.csv", header, rows)]


def cmd_minimize(sys, cfg, run):
    sec = cfg["minimize_path"]
    sec.setdefault("mode", "closed")
    sec.setdefault("k", 0.0)
    T, k = float(sec["T"]), float(sec["k"])
    if sec["mode"] == "closed":
        res = minimize_closed_loop(sys, T, run["mcfg"], k=k)
    else:
        if "x0" not in sec or "x1" not in sec:
            raise InputError("endpoint mode needs x0 and x1")
        res = minimize_fixed_endpoints(sys, _vec(sys, sec["x0"], "x0"), _vec(sys, sec["x1"], "x1"), T, run["mcfg"], k=k)
    header, rows = path_table(sys, res.path)
    summary = dict(res.record(), el_residual=el_residual(sys, res.path),
                   el_grid_bound=el_grid_bound(res.path, run["mcfg"]), nodes=res.path.m + 1, starts=res.starts)
    return summary, [("path.csv", header, rows)]


def cmd_cu(sys, cfg, run):
    sec = cfg["cu"]
    sec.setdefault("tol", 0.02)
    sec.setdefault("T_grid", list(DEFAULT_T_GRID))
    est = estimate_cu(sys, float(sec["k_lo"]), float(sec["k_hi"]), float(sec["tol"]), sec["T_grid"],
                      run["mcfg"], sec.get("epsilon"))
    rows = [(r["k"], r["T"], r["loop_action"], r["loop_energy"]) for r in est.sweeps]
    summary = {"cu_bracket": [est.lower, est.upper], **est.record()}
    if sys.reference is not None and sys.reference.c_u is not None:
        summary["reference_c_u"] = sys.reference.c_u
        summary["contains_reference"] = est.contains(sys.reference.c_u)
    return summary, [("sweep.csv", ["k", "T", "loop_action", "loop_energy"], rows)]


def _profile_summary(prof):
    return {
        "T_values": prof.T_values,
        "liminf_proxy": prof.liminf_proxy,
        "limit_fit": prof.limit_fit,
        "grid_slack": prof.grid_slack,
        "aubry_flag": aubry_flag(prof),
        "strictly_increasing": prof.strictly_increasing(),
        "failures": {repr(T): m for T, m in prof.failures.items()},
    }


def cmd_barrier(sys, cfg, run):
    sec = cfg["barrier"]
    sec.setdefault("x1", sec["x0"])
    sec.setdefault("T_grid", list(acceptance.BARRIER_T_GRID))
    c = _reference_c(sys, sec)
    prof = barrier_profile(sys, _vec(sys, sec["x0"], "x0"), _vec(sys, sec["x1"], "x1"), c, sec["T_grid"], run["mcfg"])
    rows = list(zip(prof.T_values, prof.h_T, prof.h_T_plus_cT))
    return _profile_summary(prof), [("barrier_profile.csv", ["T", "hT", "hT_plus_cT"], rows)]


def cmd_aubry_scan(sys, cfg, run):
    sec = cfg["aubry_scan"]
    sec.setdefault("T_grid", list(acceptance.BARRIER_T_GRID))
    c = _reference_c(sys, sec)
    names = list(sys.coord_names)
    rows, points = [], []
    for i, x in enumerate(sec["points"]):
        x = _vec(sys, x, f"points[{i}]")
        prof = barrier_profile(sys, x, x, c, sec["T_grid"], run["mcfg"])
        fit_a = prof.limit_fit["a"] if prof.limit_fit else math.nan
        rows.append([i, *x, prof.liminf_proxy, fit_a, prof.grid_slack, int(aubry_flag(prof))])
        points.append(dict(_profile_summary(prof), point=x))
    summary = {"points": points, "flagged": [i for i, p in enumerate(points) if p["aubry_flag"]]}
    header = ["index"] + names + ["liminf_proxy", "fit_a", "grid_slack", "flagged"]
    return summary, [("aubry_scan.csv", header, rows)]


def cmd_measures(sys, cfg, run):
    sec = cfg["measures"]
    sec.setdefault("rescale", [])
    c = _reference_c(sys, sec)
    if sec["kind"] == "horocycle":
        for key, val in (("p_alpha", 0.5), ("p_beta", 0.0), ("length", 50.0)):
            sec.setdefault(key, val)
        sample = horocycle_measure(sys, float(sec["p_alpha"]), float(sec["p_beta"]), float(sec["length"]), run["icfg"])
    else:
        if "T" not in sec:
            raise InputError("closed_loop measures need a period T")
        res = minimize_closed_loop(sys, float(sec["T"]), run["mcfg"])
        sample = sample_from_path(sys, res.path)
    fd, ident = stationarity_residual(sys, sample)
    summary = {
        "atoms": len(sample),
        "mean_energy": mean_energy(sys, sample),
        "action_L_plus_c": sample.integrate(lambda x, v: sys.lagrangian(x, v) + c),
        "c": c,
        "stationarity": {"fd_derivative": fd, "energy_plus_lagrangian": ident, "residual": abs(fd - ident)},
        "rescaled": [{"lambda": lam, "action_L": rescale_measure(sample, lam).integrate(sys.lagrangian)}
                     for lam in sec["rescale"]],
    }
    if sample.orbit is not None:
        summary["first_integrals"] = {k: [float(v.min()), float(v.max())] for k, v in sample.orbit.integral_logs.items()}
    other = sec.get("compare_with")
    if other is not None:
        other.setdefault("tol", 1e-2)
        if sec["kind"] != "horocycle":
            raise InputError("compare_with needs a horocycle measure")
        mB = horocycle_measure(sys, float(other["p_alpha"]), float(other["p_beta"]), float(sec["length"]), run["icfg"])
        w = graph_union_witness(sample, mB, float(other["tol"]))
        summary["graph_witness"] = None if w is None else w._asdict()
    header, rows = atoms_table(sys, sample)
    return summary, [("atoms.csv", header, rows)]


def cmd_symcheck(sys, cfg, run):
    sec = cfg["symcheck"]
    psi = build_map(sec["map"], sys.dimension)
    msys = mapped_system(sys, psi)
    summary = {"tonelli_min_eigenvalue": tonelli_probe(msys, seed=cfg["seed"])}
    rows = []
    ref = sys.reference
    has_family = ref is not None and ref.orbit_start is not None
    if has_family:
        sec.setdefault("orbit_k", [0.25 * ref.k_max, 0.5 * ref.k_max, 0.75 * ref.k_max])
    sec.setdefault("orbit_nodes", 1000)
    for k in sec.get("orbit_k", []):
        if not has_family:
            raise InputError(f"{sys.name} has no closed-orbit family for orbit_k")
        T, _ = reference_orbit(sys, k)
        seg = reference_segment(sys, k, int(sec["orbit_nodes"]))
        rows.append((k, T, action_identity_residual(sys, psi, seg, k, require_closed=False)))
    summary["action_identity"] = [{"k": k, "T": T, "residual": r} for k, T, r in rows]
    if "barrier" in sec:
        b = sec["barrier"]
        if not has_family:
            raise InputError(f"{sys.name} has no reference covector for the barrier check")
        b.setdefault("orbit_k", 0.75 * ref.k_max)
        X = ref.orbit_start(float(b["orbit_k"]))
        b0, b1, s = barrier_transport_check(sys, psi, X, float(b["k"]))
        summary["barrier_transport"] = {"b_original": b0, "b_mapped": b1, "s_correction": s,
                                        "difference": abs(b0 - b1)}
    if "cu" in sec:
        c = sec["cu"]
        c.setdefault("tol", 0.02)
        c.setdefault("T_grid", list(DEFAULT_T_GRID))
        e0, e1 = cu_invariance_report(sys, psi, (c["k_lo"], c["k_hi"]), c["tol"], run["mcfg"], c["T_grid"])
        summary["cu"] = {"original": e0.record(), "mapped": e1.record(), "overlap": e0.overlaps(e1)}
    return summary, [("action_identity.csv", ["k", "T", "residual"], rows)]


def cmd_verify_paper(sys, cfg, run):
    sec = cfg["verify_paper"]
    sec.setdefault("all_systems", False)
    systems = acceptance.ALL_SYSTEMS if sec["all_systems"] else (sys.name,)
    sec.setdefault("criteria", acceptance.criteria_for(systems))
    ctx = acceptance.Context(seed=cfg["seed"], threads=run["threads"], systems=systems)
    results = acceptance.run_criteria(sec["criteria"], ctx, echo=run["echo"])
    summary = {"criteria": [r.record() for r in results],
               "failed": [r.number for r in results if not r.passed]}
    summary.update(_highlights(results))
    rows = [(r.number, r.title, int(r.passed), r.detail) for r in results]
    return summary, [("acceptance.csv", ["criterion", "title", "passed", "detail"], rows)]


def _highlights(results):
    out = {}
    by = {r.number: r.values for r in results if not r.values.get("skipped")}
    for name, v in by.get(3, {}).items():
        out.setdefault(name, {})["cu_bracket"] = [v["lower"], v["upper"]]
    for name, v in by.get(4, {}).items():
        out.setdefault(name, {})["barrier_fit"] = v["fit"]
    if 5 in by:
        out.setdefault("heisenberg", {})["vertical_orbit_action"] = by[5]["action"]
    if 6 in by:
        out.setdefault("psl2r", {})["horocycle_constants"] = {"energy": 0.25, "f": -0.5, "p_gamma": 0.5,
                                                              "max_deviation": by[6]}
    return {"highlights": out} if out else {}


HANDLERS = {
    "integrate": cmd_integrate,
    "minimize": cmd_minimize,
    "cu": cmd_cu,
    "barrier": cmd_barrier,
    "aubry-scan": cmd_aubry_scan,
    "measures": cmd_measures,
    "symcheck": cmd_symcheck,
    "verify-paper": cmd_verify_paper,
}


# ---------------------------------------------------------------- driver

def run(command: str, raw_config: dict, out_dir: str, seed=None, threads: int = 1, echo=None) -> dict:
    """Execute one command and write its artifacts; returns the summary."""
    cfg = resolve_config(raw_config, command, seed)
    system = build_system(cfg["system"])
    mcfg = MinimizeConfig(**cfg["minimize"], seed=cfg["seed"], threads=threads)
    icfg = IntegratorConfig(**cfg["integrator"])
    ctx = {"mcfg": mcfg, "icfg": icfg, "threads": threads, "echo": echo}
    result, tables = HANDLERS[command](system, cfg, ctx)
    # handlers may fill section defaults; validate the final form
    validate_config(cfg)
    summary = {"command": command, "system": cfg["system"], "results": result,
               "config": cfg, "provenance": provenance(cfg)}
    for name, header, rows in tables:
        write_csv(os.path.join(out_dir, name), header, rows)
    write_json(os.path.join(out_dir, "summary.json"), summary)
    if command == "verify-paper" and result["failed"]:
        raise AcceptanceMismatch(result["failed"])
    return summary


def _threads(arg) -> int:
    val = arg if arg is not None else os.environ.get("MANE_LAB_THREADS", 1)
    try:
        n = int(val)
    except ValueError:
        raise InputError(f"invalid thread count {val!r}") from None
    if n < 1:
        raise InputError("thread count must be positive")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mane-lab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--out", default="mane_lab_out", help="output directory (default: mane_lab_out)")
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: $MANE_LAB_THREADS or 1)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    err = _sys.stderr
    try:
        threads = _threads(args.threads)
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise InputError("config must be a JSON object")
        run(args.command, raw, args.out, args.seed, threads, echo=print)
    except AcceptanceMismatch as exc:
        print("acceptance mismatch; violated criteria: " + ", ".join(map(str, exc.args[0])), file=err)
        return EXIT_ACCEPTANCE
    except NumericalError as exc:
        diag = {"error": type(exc).__name__, "message": str(exc), "diagnostics": getattr(exc, "diagnostics", [])}
        try:
            write_json(os.path.join(args.out, "diagnostics.json"), diag)
        except InputError as werr:
            print(f"error: {werr}", file=err)
        print(f"numerical failure: {exc}", file=err)
        return EXIT_NUMERICAL
    except ManeLabError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    _sys.exit(main())
