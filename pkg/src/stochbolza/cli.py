"""Command-line entry point: problem ingestion, subcommand dispatch, report
emission.

Exit codes: 0 on success or a passing verdict, 1 on a failing verdict, 2 on
input errors (malformed JSON, schema mismatch, inconsistent data).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bolza import (
    BolzaProblem,
    DualBolzaProblem,
    ProblemError,
    duality_report,
    dualize,
    solve_dual,
    solve_primal,
    value_and_subgradient,
)
from .characteristics import check_trajectory, propagate_subgradient
from .convex import ConvexityError
from .lcontrol import ControlError, LCProblem, LQProblem, check_assumptions, \
    lc_to_bolza, lq_solve_characteristics, recover_control
from .oracles import finite_diff_subgradient, fuzz_weak_duality
from .splitting import SolveConfig
from .serialize import (
    SchemaError,
    bolza_to_dict,
    canonical_json,
    dual_to_dict,
    dump_report,
    input_hash,
    lc_to_dict,
    load_problem,
    make_report,
    trajectory_from_rows,
    trajectory_to_csv,
    trajectory_to_rows,
)
from .trees import TreeError


@dataclass
class RunConfig:
    """Run-wide tolerances and output options, echoed into every report."""

    solve: SolveConfig
    seed: int = 0
    out: Path | None = None
    formats: tuple = ("json",)

    def as_dict(self):
        d = self.solve.as_dict()
        d["seed"] = self.seed
        return d


class InputError(Exception):
    pass


def _load_json(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(
            f"{path}:{exc.lineno}:{exc.colno}: malformed JSON: {exc.msg}") from exc


def _parse_vec(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError as exc:
        raise InputError(f"cannot parse vector {text!r}: {exc}") from exc


def _emit(cfg: RunConfig, name: str, report: dict, csv: str | None = None) -> None:
    text = dump_report(report)
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        cfg.out.mkdir(parents=True, exist_ok=True)
        if "json" in cfg.formats:
            (cfg.out / f"{name}.json").write_text(text)
        if csv is not None and "csv" in cfg.formats:
            (cfg.out / f"{name}.csv").write_text(csv)
    if csv is not None and cfg.out is None and "csv" in cfg.formats:
        sys.stdout.write(csv)


def _solve_payload(rep) -> dict:
    d = rep.as_dict()
    if rep.trajectory is not None:
        key = "x" if rep.kind == "primal" else "p"
        d["trajectory"] = trajectory_to_rows(
            rep.trajectory if key == "x" else None,
            rep.trajectory if key == "p" else None)
    return d


def cmd_solve(args, cfg: RunConfig) -> int:
    data = _load_json(args.input)
    problem = load_problem(data)
    if isinstance(problem, (LCProblem, LQProblem)):
        problem, _ = lc_to_bolza(problem if isinstance(problem, LCProblem)
                                 else problem.as_lc())
    if not isinstance(problem, BolzaProblem):
        raise InputError("solve expects a primal problem")
    if args.start is not None or args.xi is not None:
        start = problem.start if args.start is None else args.start
        xi = problem.initial_mean if args.xi is None else _parse_vec(args.xi)
        problem = problem.restarted(start, xi)
    rep = solve_primal(problem, cfg.solve)
    csv = None
    if rep.trajectory is not None:
        csv = trajectory_to_csv(rep.trajectory, None)
    _emit(cfg, "solve", make_report("solve", _solve_payload(rep),
                                    cfg.as_dict(), input_hash(data)), csv)
    return 0 if rep.status in ("optimal", "infeasible", "unbounded") else 1


def cmd_dualize(args, cfg: RunConfig) -> int:
    data = _load_json(args.input)
    problem = load_problem(data)
    if not isinstance(problem, BolzaProblem):
        raise InputError("dualize expects a primal Bolza problem")
    dual = dualize(problem, eta=None if args.eta is None else _parse_vec(args.eta))
    out = dual_to_dict(dual)
    if cfg.out is None:
        sys.stdout.write(json.dumps(out, indent=2, sort_keys=True) + "\n")
    else:
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "dual.json").write_text(
            json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_dual_solve(args, cfg: RunConfig) -> int:
    data = _load_json(args.input)
    problem = load_problem(data)
    if isinstance(problem, BolzaProblem):
        problem = dualize(problem)
    if not isinstance(problem, DualBolzaProblem):
        raise InputError("dual-solve expects a dual problem (or a primal to dualize)")
    eta = None if args.eta is None else _parse_vec(args.eta)
    rep = solve_dual(problem, cfg.solve, eta=eta)
    csv = trajectory_to_csv(None, rep.trajectory) if rep.trajectory is not None else None
    _emit(cfg, "dual-solve", make_report("dual-solve", _solve_payload(rep),
                                         cfg.as_dict(), input_hash(data)), csv)
    return 0 if rep.status in ("optimal", "infeasible", "unbounded") else 1


def cmd_duality(args, cfg: RunConfig) -> int:
    data = _load_json(args.input)
    problem = load_problem(data)
    if not isinstance(problem, BolzaProblem):
        raise InputError("duality expects a primal Bolza problem")
    xi = problem.initial_mean if args.xi is None else _parse_vec(args.xi)
    if args.eta is None:
        raise InputError("duality requires --eta")
    rep = duality_report(problem, xi, _parse_vec(args.eta), cfg.solve)
    payload = rep.as_dict()
    payload["label"] = "strong" if rep.strong else "weak only"
    _emit(cfg, "duality", make_report("duality", payload, cfg.as_dict(),
                                      input_hash(data)))
    return 0 if rep.weak_holds else 1


def cmd_check_characteristics(args, cfg: RunConfig) -> int:
    data = _load_json(args.input)
    problem = load_problem(data)
    if isinstance(problem, (LCProblem, LQProblem)):
        problem, _ = lc_to_bolza(problem if isinstance(problem, LCProblem)
                                 else problem.as_lc())
    tdata = _load_json(args.trajectory)
    x, p = trajectory_from_rows(tdata, problem.tree, problem.dim)
    if x is None or p is None:
        raise InputError("trajectory file must carry both x and p values")
    verdict = check_trajectory(problem, x, p, tol=args.tol_verify)
    _emit(cfg, "check-characteristics",
          make_report("check-characteristics", verdict.as_dict(), cfg.as_dict(),
                      input_hash(data)))
    return 0 if verdict.passed else 1


def cmd_subgrad(args, cfg: RunConfig) -> int:
    data = _load_json(args.input)
    problem = load_problem(data)
    if not isinstance(problem, BolzaProblem):
        raise InputError("subgrad expects a primal Bolza problem")
    xi = problem.initial_mean if args.xi is None else _parse_vec(args.xi)
    from .bolza import value_function
    cert = value_and_subgradient(problem, xi, cfg.solve)
    slopes = finite_diff_subgradient(
        lambda y: value_function(problem, y, config=cfg.solve), xi)
    payload = {
        "value": cert.value,
        "eta": None if cert.eta is None else cert.eta.tolist(),
        "certificate_residual": cert.residual,
        "dual_value": cert.dual_value,
        "slope_left": slopes.left.tolist(),
        "slope_right": slopes.right.tolist(),
        "within_slopes": (None if cert.eta is None
                          else bool(slopes.contains(cert.eta))),
        "note": cert.note,
    }
    _emit(cfg, "subgrad", make_report("subgrad", payload, cfg.as_dict(),
                                      input_hash(data)))
    return 0 if cert.eta is not None else 1


def cmd_lc_reduce(args, cfg: RunConfig) -> int:
    data = _load_json(args.input)
    problem = load_problem(data)
    if isinstance(problem, LQProblem):
        problem = problem.as_lc()
    if not isinstance(problem, LCProblem):
        raise InputError("lc-reduce expects an lc or lq problem")
    bolza, _ = lc_to_bolza(problem)
    out = bolza_to_dict(bolza)
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "bolza.json").write_text(text)
    return 0


def cmd_lq(args, cfg: RunConfig) -> int:
    data = _load_json(args.input)
    problem = load_problem(data)
    if not isinstance(problem, LQProblem):
        raise InputError("lq expects an lq problem")
    if args.xi is not None:
        xi = _parse_vec(args.xi)
    else:
        xi = problem.xi
    res = lq_solve_characteristics(problem, xi=xi, config=cfg.solve)
    payload = {
        "value": res.value,
        "eta": res.eta.tolist(),
        "degenerate": res.degenerate,
        "verdict": res.verdict.as_dict(),
        "trajectory": trajectory_to_rows(res.x, res.p),
    }
    csv = trajectory_to_csv(res.x, res.p, res.controls)
    _emit(cfg, "lq", make_report("lq", payload, cfg.as_dict(), input_hash(data)), csv)
    return 0 if res.verdict.passed else 1


def cmd_fuzz(args, cfg: RunConfig) -> int:
    failures = []

    def collect(k, inst):
        failures.append((k, bolza_to_dict(inst.problem)))

    rep = fuzz_weak_duality(cfg.seed, args.count, max_atoms=args.max_atoms,
                            max_horizon=args.max_horizon, max_dim=args.max_dim,
                            collect_failures=collect)
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        for k, pdict in failures:
            (cfg.out / f"fuzz_failure_{k}.json").write_text(
                json.dumps(pdict, indent=2, sort_keys=True) + "\n")
    _emit(cfg, "fuzz", make_report("fuzz", rep.as_dict(), cfg.as_dict(),
                                   input_hash({"seed": cfg.seed, "count": args.count})))
    return 0 if not rep.violations else 1


def cmd_assumptions(args, cfg: RunConfig) -> int:
    data = _load_json(args.input)
    problem = load_problem(data)
    if isinstance(problem, DualBolzaProblem):
        raise InputError("assumptions expects a primal, lc, or lq problem")
    checks = check_assumptions(problem)
    payload = {"checks": [{"name": c.name, "status": c.status,
                           "evidence": _jsonable(c.evidence)} for c in checks]}
    _emit(cfg, "assumptions", make_report("assumptions", payload, cfg.as_dict(),
                                          input_hash(data)))
    return 0 if all("fail" not in c.status for c in checks) else 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochbolza",
                                 description="Stochastic convex Bolza toolkit")
    ap.add_argument("--tol-stationarity", type=float, default=1e-8)
    ap.add_argument("--tol-feasibility", type=float, default=1e-10)
    ap.add_argument("--tol-certification", type=float, default=1e-6)
    ap.add_argument("--tol-gap", type=float, default=1e-5)
    ap.add_argument("--tol-verify", type=float, default=1e-6)
    ap.add_argument("--max-iter", type=int, default=200000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--format", default="json",
                    help="comma-separated output formats: json,csv")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, **kw):
        p = sub.add_parser(name, **kw)
        p.set_defaults(fn=fn)
        return p

    p = add("solve", cmd_solve, help="solve the primal problem")
    p.add_argument("--input", required=True)
    p.add_argument("--xi")
    p.add_argument("--start", type=int)

    p = add("dualize", cmd_dualize, help="emit the dual problem JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--eta")

    p = add("dual-solve", cmd_dual_solve, help="solve the dual problem")
    p.add_argument("--input", required=True)
    p.add_argument("--eta")

    p = add("duality", cmd_duality, help="duality gap report")
    p.add_argument("--input", required=True)
    p.add_argument("--xi")
    p.add_argument("--eta", required=True)

    p = add("check-characteristics", cmd_check_characteristics,
            help="verify a Hamiltonian trajectory")
    p.add_argument("--input", required=True)
    p.add_argument("--trajectory", required=True)

    p = add("subgrad", cmd_subgrad,
            help="value and certified subgradient of the value function")
    p.add_argument("--input", required=True)
    p.add_argument("--xi")

    p = add("lc-reduce", cmd_lc_reduce, help="reduce an LC/LQ problem to Bolza form")
    p.add_argument("--input", required=True)

    p = add("lq", cmd_lq, help="LQ characteristics pipeline")
    p.add_argument("--input", required=True)
    p.add_argument("--xi")

    p = add("fuzz", cmd_fuzz, help="randomized weak-duality fuzzing")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--max-atoms", type=int, default=8)
    p.add_argument("--max-horizon", type=int, default=3)
    p.add_argument("--max-dim", type=int, default=2)

    p = add("assumptions", cmd_assumptions, help="qualification diagnostics")
    p.add_argument("--input", required=True)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    cfg = RunConfig(
        solve=SolveConfig(
            stationarity_tol=args.tol_stationarity,
            feasibility_tol=args.tol_feasibility,
            certification_tol=args.tol_certification,
            gap_strong_tol=args.tol_gap,
            max_iter=args.max_iter,
        ),
        seed=args.seed,
        out=args.out,
        formats=tuple(args.format.split(",")),
    )
    try:
        return args.fn(args, cfg)
    except (InputError, SchemaError, TreeError, ConvexityError, ProblemError,
            ControlError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
