"""JSON schemas for problems, trajectories, and reports; CSV emission.

One ingestion path: every file carries ``schema_version`` and problems
round-trip through dictionaries.  Infinite box bounds serialize as null.
Reports embed the solver configuration, a hash of the canonical input, and
the tool version, so reruns with identical inputs are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from . import __version__
from .bolza import BolzaProblem, DualBolzaProblem
from .convex import (
    AffineSet,
    AllSpace,
    Box,
    ConjugateView,
    Intersection,
    PartialMinView,
    Polyhedron,
    StructuredConvex,
)
from .lcontrol import LCProblem, LQProblem
from .trees import AdaptedProcess, Schedule, ScenarioTree

SCHEMA_VERSION = 1
INF = math.inf


class SchemaError(ValueError):
    pass


def _num(x):
    x = float(x)
    return x


def _mat(M):
    return [[_num(v) for v in row] for row in np.atleast_2d(np.asarray(M, dtype=float))]


def _vec(v):
    return [_num(x) for x in np.atleast_1d(np.asarray(v, dtype=float))]


def domain_to_dict(dom):
    if isinstance(dom, AllSpace):
        return {"kind": "all", "dim": dom.dim}
    if isinstance(dom, Box):
        return {"kind": "box",
                "lower": [None if not math.isfinite(v) else _num(v) for v in dom.lower],
                "upper": [None if not math.isfinite(v) else _num(v) for v in dom.upper]}
    if isinstance(dom, AffineSet):
        return {"kind": "affine", "A": _mat(dom.A), "b": _vec(dom.b)}
    if isinstance(dom, Polyhedron):
        return {"kind": "polyhedron", "A": _mat(dom.A), "b": _vec(dom.b)}
    if isinstance(dom, Intersection):
        return {"kind": "intersection", "parts": [domain_to_dict(p) for p in dom.parts]}
    raise SchemaError(f"unknown domain {type(dom).__name__}")


def domain_from_dict(d):
    kind = d.get("kind")
    if kind == "all":
        return AllSpace(int(d["dim"]))
    if kind == "box":
        lower = [(-INF if v is None else float(v)) for v in d["lower"]]
        upper = [(INF if v is None else float(v)) for v in d["upper"]]
        return Box(np.array(lower), np.array(upper))
    if kind == "affine":
        return AffineSet(np.array(d["A"], dtype=float), np.array(d["b"], dtype=float))
    if kind == "polyhedron":
        return Polyhedron(np.array(d["A"], dtype=float), np.array(d["b"], dtype=float))
    if kind == "intersection":
        return Intersection([domain_from_dict(p) for p in d["parts"]])
    raise SchemaError(f"unknown domain kind {kind!r}")


def function_to_dict(f):
    if isinstance(f, StructuredConvex):
        return {"quad": _mat(f.quad), "lin": _vec(f.lin), "const": _num(f.const),
                "domain": domain_to_dict(f.domain)}
    if isinstance(f, ConjugateView):
        pre = None
        if f.S is not None:
            if np.allclose(f.S, -np.eye(f.dim)):
                pre = "negate"
            else:
                pre = "swap"
        return {"conjugate_of": function_to_dict(f.base), "pre": pre}
    if isinstance(f, PartialMinView):
        return {"partial_min_of": function_to_dict(f.base),
                "kept": list(f.kept_idx), "elim": list(f.elim_idx)}
    raise SchemaError(f"unknown function {type(f).__name__}")


def function_from_dict(d):
    if "conjugate_of" in d:
        base = function_from_dict(d["conjugate_of"])
        pre = d.get("pre")
        S = None
        if pre == "negate":
            S = -np.eye(base.dim)
        elif pre == "swap":
            n = base.dim // 2
            S = np.zeros((base.dim, base.dim))
            S[:n, n:] = np.eye(n)
            S[n:, :n] = np.eye(n)
        return ConjugateView(base, S)
    if "partial_min_of" in d:
        return PartialMinView(function_from_dict(d["partial_min_of"]),
                              d["kept"], d["elim"])
    dom = domain_from_dict(d["domain"])
    quad = np.array(d["quad"], dtype=float)
    return StructuredConvex(dom.dim, quad, np.array(d["lin"], dtype=float),
                            float(d["const"]), dom)


def tree_to_dict(tree: ScenarioTree):
    out = {
        "atoms": [list(a) if isinstance(a, tuple) else a for a in tree.atoms],
        "probs": _vec(tree.prob),
        "times": list(tree.times),
        "partitions": {str(t): [list(cell) for cell in tree.cells(t)]
                       for t in range(tree.times[0], tree.times[1] + 1)},
    }
    if tree.noise:
        out["noise"] = {str(t): _mat(w) for t, w in sorted(tree.noise.items())}
    return out


def tree_from_dict(d) -> ScenarioTree:
    atoms = tuple(tuple(a) if isinstance(a, list) else a for a in d["atoms"])
    partitions = {int(t): tuple(tuple(int(a) for a in cell) for cell in cells)
                  for t, cells in d["partitions"].items()}
    noise = {int(t): np.array(w, dtype=float)
             for t, w in d.get("noise", {}).items()}
    return ScenarioTree(atoms=atoms, prob=np.array(d["probs"], dtype=float),
                        times=tuple(d["times"]), partitions=partitions,
                        noise=noise)


def bolza_to_dict(problem: BolzaProblem, kind="bolza"):
    tree = problem.tree
    stages = []
    for t in sorted(problem.stage_costs):
        cells = []
        for c, cell in enumerate(tree.cells(t)):
            cells.append({"atoms": list(cell),
                          "L": function_to_dict(problem.stage_costs[t][c])})
        stages.append({"t": t, "cells": cells})
    out = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "tree": tree_to_dict(tree),
        "n": problem.dim,
        "start": problem.start,
        "stages": stages,
        "terminal": function_to_dict(problem.terminal),
    }
    if kind == "bolza":
        out["xi"] = _vec(problem.initial_mean)
    else:
        eta = problem.initial_mean_negated
        out["eta"] = None if eta is None else _vec(eta)
    return out


def dual_to_dict(problem: DualBolzaProblem):
    return bolza_to_dict(problem, kind="dual-bolza")


def _check_version(d):
    v = d.get("schema_version")
    if v != SCHEMA_VERSION:
        raise SchemaError(f"schema_version {v!r} unsupported (expected {SCHEMA_VERSION})")


def bolza_from_dict(d) -> BolzaProblem | DualBolzaProblem:
    _check_version(d)
    kind = d.get("kind", "bolza")
    tree = tree_from_dict(d["tree"])
    n = int(d["n"])
    stage_costs = {}
    for stage in d["stages"]:
        t = int(stage["t"])
        fns = [function_from_dict(cell["L"]) for cell in stage["cells"]]
        stage_costs[t] = tuple(fns)
    terminal = function_from_dict(d["terminal"])
    if kind == "bolza":
        return BolzaProblem(tree, n, stage_costs, terminal,
                            np.array(d["xi"], dtype=float), int(d["start"]))
    if kind == "dual-bolza":
        eta = d.get("eta")
        return DualBolzaProblem(tree, n, stage_costs, terminal,
                                None if eta is None else np.array(eta, dtype=float),
                                int(d["start"]))
    raise SchemaError(f"unknown problem kind {kind!r}")


def lc_to_dict(problem: LCProblem | LQProblem):
    if isinstance(problem, LQProblem):
        out = {
            "schema_version": SCHEMA_VERSION,
            "kind": "lq",
            "n": problem.n, "m": problem.m,
            "A": _mat(problem.A), "B": _mat(problem.B),
            "horizon": list(problem.horizon),
            "P": _mat(problem.P), "R": _mat(problem.R), "Q": _mat(problem.Q),
            "noise": [{"t": t, "samples": [{"w": _vec(w), "prob": _num(p)}
                                           for w, p in problem.noise[t]]}
                      for t in sorted(problem.noise)],
            "gamma": [{"w": _vec(np.atleast_1d(w)), "prob": _num(p)}
                      for w, p in problem.gamma],
            "xi": _vec(problem.xi),
            "X_initial": domain_to_dict(problem.initial_box),
        }
        return out
    out = {
        "schema_version": SCHEMA_VERSION,
        "kind": "lc",
        "n": problem.n, "m": problem.m,
        "A": _mat(problem.A), "B": _mat(problem.B),
        "horizon": list(problem.horizon),
        "stage_costs": {str(t): function_to_dict(f)
                        for t, f in sorted(problem.stage_costs.items())},
        "terminal": function_to_dict(problem.terminal),
        "noise": [{"t": t, "samples": [{"w": _vec(w), "prob": _num(p)}
                                       for w, p in problem.noise[t]]}
                  for t in sorted(problem.noise)],
        "gamma": [{"w": _vec(np.atleast_1d(w)), "prob": _num(p)}
                  for w, p in problem.gamma],
        "xi": _vec(problem.xi),
        "U": {str(t): domain_to_dict(dom) for t, dom in sorted(problem.control_sets.items())},
        "X": {str(t): domain_to_dict(dom) for t, dom in sorted(problem.state_sets.items())},
        "mixed": {str(t): domain_to_dict(dom) for t, dom in sorted(problem.mixed.items())},
    }
    return out


def lc_from_dict(d) -> LCProblem | LQProblem:
    _check_version(d)
    kind = d.get("kind")
    noise = {int(e["t"]): [(np.array(s["w"], dtype=float), float(s["prob"]))
                           for s in e["samples"]]
             for e in d["noise"]}
    gamma = tuple((np.array(e["w"], dtype=float), float(e["prob"]))
                  for e in d.get("gamma", [{"w": [0.0], "prob": 1.0}]))
    if kind == "lq":
        return LQProblem(int(d["n"]), int(d["m"]),
                         np.array(d["A"], dtype=float), np.array(d["B"], dtype=float),
                         tuple(d["horizon"]),
                         np.array(d["P"], dtype=float), np.array(d["R"], dtype=float),
                         np.array(d["Q"], dtype=float), noise,
                         np.array(d["xi"], dtype=float), gamma,
                         initial_box=domain_from_dict(d["X_initial"]))
    if kind == "lc":
        return LCProblem(int(d["n"]), int(d["m"]),
                         np.array(d["A"], dtype=float), np.array(d["B"], dtype=float),
                         tuple(d["horizon"]),
                         {int(t): function_from_dict(f)
                          for t, f in d["stage_costs"].items()},
                         function_from_dict(d["terminal"]), noise,
                         np.array(d["xi"], dtype=float), gamma,
                         control_sets={int(t): domain_from_dict(x)
                                       for t, x in d.get("U", {}).items()},
                         state_sets={int(t): domain_from_dict(x)
                                     for t, x in d.get("X", {}).items()},
                         mixed={int(t): domain_from_dict(x)
                                for t, x in d.get("mixed", {}).items()})
    raise SchemaError(f"unknown problem kind {kind!r}")


def load_problem(d):
    """Dispatch on the ``kind`` field."""
    _check_version(d)
    kind = d.get("kind", "bolza")
    if kind in ("bolza", "dual-bolza"):
        return bolza_from_dict(d)
    if kind in ("lc", "lq"):
        return lc_from_dict(d)
    raise SchemaError(f"unknown problem kind {kind!r}")


# ---------------------------------------------------------------------------
# trajectories


def trajectory_to_rows(x: AdaptedProcess | None, p: AdaptedProcess | None):
    proc = x or p
    s, T = proc.window
    rows = []
    for t in range(s, T + 1):
        for a in range(proc.tree.n_atoms):
            row = {"t": t, "atom": a}
            if x is not None:
                row["x"] = _vec(x.value(t)[a])
            if p is not None:
                row["p"] = _vec(p.value(t)[a])
            rows.append(row)
    return {"schema_version": SCHEMA_VERSION, "window": [s, T], "rows": rows}


def trajectory_from_rows(d, tree: ScenarioTree, dim: int):
    _check_version(d)
    s, T = d["window"]
    has_x = any("x" in r for r in d["rows"])
    has_p = any("p" in r for r in d["rows"])
    x_stack = np.zeros((T - s + 1, tree.n_atoms, dim)) if has_x else None
    p_stack = np.zeros((T - s + 1, tree.n_atoms, dim)) if has_p else None
    for r in d["rows"]:
        t, a = int(r["t"]), int(r["atom"])
        if has_x and "x" in r:
            x_stack[t - s, a] = np.array(r["x"], dtype=float)
        if has_p and "p" in r:
            p_stack[t - s, a] = np.array(r["p"], dtype=float)
    x = AdaptedProcess(tree, dim, (s, T), x_stack, Schedule.PRIMAL) if has_x else None
    p = AdaptedProcess(tree, dim, (s, T), p_stack, Schedule.DUAL) if has_p else None
    return x, p


def trajectory_to_csv(x: AdaptedProcess | None, p: AdaptedProcess | None,
                      controls: np.ndarray | None = None) -> str:
    proc = x or p
    s, T = proc.window
    n = proc.dim
    header = ["t", "atom"]
    if x is not None:
        header += [f"x{i}" for i in range(n)]
    if p is not None:
        header += [f"p{i}" for i in range(n)]
    if controls is not None:
        header += [f"u{i}" for i in range(controls.shape[2])]
    lines = [",".join(header)]
    for t in range(s, T + 1):
        for a in range(proc.tree.n_atoms):
            row = [str(t), str(a)]
            if x is not None:
                row += [repr(float(v)) for v in x.value(t)[a]]
            if p is not None:
                row += [repr(float(v)) for v in p.value(t)[a]]
            if controls is not None:
                if t < T:
                    row += [repr(float(v)) for v in controls[t - s, a]]
                else:
                    row += [""] * controls.shape[2]
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# reports


def jsonable(obj):
    """Deep-convert numpy scalars/arrays so json.dumps stays deterministic."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    return obj


def canonical_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":"))


def input_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def make_report(kind: str, payload: dict, config_dict: dict,
                source_hash: str | None = None) -> dict:
    return jsonable({
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "kind": kind,
        "input_hash": source_hash,
        "config": config_dict,
        "report": payload,
    })


def dump_report(report: dict) -> str:
    return json.dumps(jsonable(report), indent=2, sort_keys=True) + "\n"
