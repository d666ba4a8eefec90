"""Independent brute-force oracles and randomized fuzzing.

The grid oracle evaluates the Bolza objective by direct enumeration over
the adapted decision grid (cell values only, mean constraint eliminated),
touching none of the proximal or projection machinery.  Multi-level grid
refinement is used to honor the evaluation budget; it is sound here because
the objectives are convex, so the continuous minimizer lies within one grid
cell of the discrete argmin at every level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bolza import BolzaProblem, dual_cost, dualize, primal_cost
from .trees import AdaptedProcess, Schedule, ScenarioTree, build_tree

INF = math.inf


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Per-variable bounds, target step, and an evaluation budget cap."""

    lower: float | np.ndarray = -10.0
    upper: float | np.ndarray = 10.0
    step: float = 1e-3
    budget: int = 10 ** 7

    def __post_init__(self):
        if self.step <= 0:
            raise OracleError("grid step must be positive")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise OracleError("grid bounds must be finite")


@dataclass
class GridResult:
    value: float
    argmin: np.ndarray | None
    trajectory: AdaptedProcess | None
    evaluations: int
    accuracy: float
    final_step: float


def refine_grid_min(fun_batch, lower, upper, step, budget, chunk=200_000):
    """Multi-level exhaustive minimization of a convex batched objective.

    ``fun_batch(Z)`` maps an (m, d) array of candidate points to m values
    (+inf allowed).  Returns ``(value, argmin, evaluations, final_step)``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = len(lower)
    if d == 0:
        val = float(fun_batch(np.zeros((1, 0)))[0])
        return val, np.zeros(0), 1, 0.0
    widths = upper - lower
    wmax = max(float(widths.max()), step)
    # refine well below the requested step: at a domain face the grid value
    # sits above the infimum by about slope * spacing, so the resolution has
    # to outrun the requested step for the reported accuracy to carry it
    step_floor = step * 1e-4

    def levels_needed(k):
        # each level shrinks the window to 3 * current step = 3W/(k-1)
        if (k - 1) * step_floor >= wmax:
            return 1
        shrink = 3.0 / (k - 1)
        return 1 + math.ceil(math.log(step_floor / wmax) / math.log(shrink))

    per_dim = None
    for k in range(min(41, max(5, int(budget ** (1.0 / d)))), 4, -1):
        if (k ** d) * levels_needed(k) <= budget:
            per_dim = k
            break
    if per_dim is None:
        need = (5 ** d) * levels_needed(5)
        raise OracleError(f"grid budget exceeded: needs about {need} > {budget}")
    cur_step = np.maximum(widths / (per_dim - 1), step_floor)
    lo, hi = lower.copy(), upper.copy()
    evals = 0
    best_val, best_z = INF, None
    stall = 0
    for _ in range(400):
        axes = [np.linspace(lo[i], hi[i], max(2, int(round((hi[i] - lo[i]) / cur_step[i])) + 1))
                if hi[i] > lo[i] else np.array([lo[i]]) for i in range(d)]
        counts = [len(ax) for ax in axes]
        total = int(np.prod(counts))
        if evals + total > budget:
            if np.all(cur_step <= step * (1 + 1e-12)):
                break  # the requested resolution is already honored
            raise OracleError(
                f"grid budget exceeded: needs {evals + total} > {budget}")
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        vals = np.empty(len(mesh))
        for k0 in range(0, len(mesh), chunk):
            vals[k0:k0 + chunk] = fun_batch(mesh[k0:k0 + chunk])
        evals += total
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val, best_z = float(vals[i]), mesh[i]
        if best_z is None or not math.isfinite(best_val):
            break
        if np.all(cur_step <= step_floor * (1 + 1e-12)):
            break
        # next window: bounding box of the near-optimal sublevel set.  For a
        # convex objective some node adjacent to the continuous minimizer
        # stays within one local cell variation of the incumbent, so the
        # sublevel box (with a one-cell halo) keeps the minimizer even when
        # the incumbent is trapped on a constraint face.
        spacing = np.array([ax[1] - ax[0] if len(ax) > 1 else cur_step[j]
                            for j, ax in enumerate(axes)])
        grid_vals = vals.reshape(counts)
        local_var = 0.0
        for j in range(d):
            if counts[j] < 2:
                continue
            diffs = np.abs(np.diff(grid_vals, axis=j))
            finite = diffs[np.isfinite(diffs)]
            if len(finite):
                local_var += float(np.min(finite.max(initial=0.0), initial=INF) * 0.0
                                   + np.percentile(finite, 50))
        margin = max(local_var, 1e-12 + 1e-9 * abs(best_val))
        keep = np.isfinite(vals) & (vals <= best_val + margin)
        pts = mesh[keep]
        new_lo = np.minimum(pts.min(axis=0), best_z) - 1.5 * spacing
        new_hi = np.maximum(pts.max(axis=0), best_z) + 1.5 * spacing
        new_lo = np.maximum(lower, new_lo)
        new_hi = np.minimum(upper, new_hi)
        # guard against stalls: demand geometric progress, fall back to
        # halving around the incumbent when the sublevel box stops shrinking
        if np.max(new_hi - new_lo) > 0.75 * np.max(hi - lo):
            stall += 1
        else:
            stall = 0
        if stall >= 3:
            new_lo = np.maximum(lower, best_z - 0.25 * (hi - lo))
            new_hi = np.minimum(upper, best_z + 0.25 * (hi - lo))
            stall = 0
        lo, hi = new_lo, new_hi
        cur_step = np.maximum((hi - lo) / (per_dim - 1), step_floor)
    return best_val, best_z, evals, float(np.max(cur_step))


def _free_layout(problem: BolzaProblem):
    """Free grid coordinates: cell values per time, with one time-s cell
    eliminated by the mean constraint."""
    tree, n, s = problem.tree, problem.dim, problem.start
    T = tree.last_time
    layout = []  # (t, cell index)
    for t in range(s, T + 1):
        ncells = len(tree.cells(t))
        for c in range(ncells):
            if t == s and c == ncells - 1:
                continue  # eliminated through the mean constraint
            layout.append((t, c))
    return layout


def _decode_grid(problem: BolzaProblem, Z: np.ndarray, layout):
    """Map free grid coordinates to full per-time cell-value arrays."""
    tree, n, s = problem.tree, problem.dim, problem.start
    T = tree.last_time
    m = Z.shape[0]
    cells = {t: len(tree.cells(t)) for t in range(s, T + 1)}
    out = {t: np.zeros((m, cells[t], n)) for t in range(s, T + 1)}
    for j, (t, c) in enumerate(layout):
        out[t][:, c, :] = Z[:, j * n:(j + 1) * n]
    ws = tree.cell_prob(s)
    xi = problem.initial_mean
    partial = np.tensordot(out[s][:, :-1, :], ws[:-1], axes=(1, 0)) if cells[s] > 1 else 0.0
    out[s][:, -1, :] = (xi - partial) / ws[-1]
    return out


def grid_oracle(problem: BolzaProblem, spec: GridSpec | None = None) -> GridResult:
    """Exhaustively minimize the Bolza objective on the adapted grid.

    Adaptedness is imposed by enumerating cell-constant values only; the
    mean constraint is handled by eliminating one time-s cell.  The
    objective goes through plain function evaluation.
    """
    spec = spec or GridSpec()
    tree, n, s = problem.tree, problem.dim, problem.start
    T = tree.last_time
    layout = _free_layout(problem)
    d = len(layout) * n
    lower = np.broadcast_to(np.asarray(spec.lower, dtype=float), (d,)).copy()
    upper = np.broadcast_to(np.asarray(spec.upper, dtype=float), (d,)).copy()

    wc = {t: tree.cell_prob(t) for t in range(s, T + 1)}
    parent = {t: tree.cell_of(t - 1) for t in range(s + 1, T + 1)}

    def fun_batch(Z):
        cellvals = _decode_grid(problem, Z, layout)
        total = np.zeros(Z.shape[0])
        for t in range(s + 1, T + 1):
            for c, cell in enumerate(tree.cells(t)):
                pc = parent[t][cell[0]]
                x_prev = cellvals[t - 1][:, pc, :]
                dx = cellvals[t][:, c, :] - x_prev
                args = np.hstack([x_prev, dx])
                total += wc[t][c] * problem.stage_costs[t][c].value_batch(args)
            if np.all(np.isinf(total)):
                return total
        mean_T = np.tensordot(cellvals[T], wc[T], axes=(1, 0))
        total += problem.terminal.value_batch(mean_T)
        return total

    value, z, evals, final_step = refine_grid_min(
        fun_batch, lower, upper, spec.step, spec.budget)
    if not math.isfinite(value):
        return GridResult(INF, None, None, evals, INF, final_step)
    cellvals = _decode_grid(problem, z[None, :], layout)
    stack = np.empty((T - s + 1, tree.n_atoms, n))
    for t in range(s, T + 1):
        cell_of = tree.cell_of(t)
        stack[t - s] = cellvals[t][0, cell_of, :]
    traj = AdaptedProcess(tree, n, (s, T), stack, Schedule.PRIMAL)
    # local Lipschitz estimate from one-step probes around the argmin
    lip = 0.0
    for j in range(len(z)):
        for sgn in (-1.0, 1.0):
            zp = z.copy()
            zp[j] = np.clip(zp[j] + sgn * final_step, lower[j], upper[j])
            vp = float(fun_batch(zp[None, :])[0])
            if math.isfinite(vp) and abs(zp[j] - z[j]) > 0:
                lip = max(lip, abs(vp - value) / abs(zp[j] - z[j]))
    return GridResult(value, z, traj, evals, final_step * max(lip, 1.0), final_step)


# ---------------------------------------------------------------------------
# finite-difference subgradient intervals


@dataclass
class SlopeIntervals:
    left: np.ndarray
    right: np.ndarray
    flags: tuple = ()

    def contains(self, g, slack: float = 1e-6) -> bool:
        g = np.atleast_1d(np.asarray(g, dtype=float))
        return bool(np.all(g >= self.left - slack) and np.all(g <= self.right + slack))


def finite_diff_subgradient(V, xi, h: float = 1e-4) -> SlopeIntervals:
    """Two-sided per-coordinate difference quotients of a convex function.

    For convex V every subgradient coordinate lies in [left_i, right_i].
    Infinite probe values trigger a one-sided fallback, flagged.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    n = len(xi)
    v0 = float(V(xi))
    if not math.isfinite(v0):
        raise OracleError("V not finite at the base point")
    left = np.empty(n)
    right = np.empty(n)
    flags = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        vp = float(V(xi + e))
        vm = float(V(xi - e))
        right[i] = (vp - v0) / h if math.isfinite(vp) else INF
        left[i] = (v0 - vm) / h if math.isfinite(vm) else -INF
        if not math.isfinite(vp):
            flags.append(("right-probe-infeasible", i))
        if not math.isfinite(vm):
            flags.append(("left-probe-infeasible", i))
    return SlopeIntervals(left, right, tuple(flags))


# ---------------------------------------------------------------------------
# randomized weak-duality fuzzing


@dataclass
class FuzzInstance:
    problem: BolzaProblem
    x: AdaptedProcess
    p: AdaptedProcess
    xi: np.ndarray
    eta: np.ndarray


def random_tree(rng, max_atoms: int = 8, max_horizon: int = 3) -> ScenarioTree:
    horizon = int(rng.integers(1, max_horizon + 1))
    stages = {}
    atoms = 1
    for t in range(horizon):
        cap = max(1, max_atoms // max(atoms, 1))
        b = int(rng.integers(1, min(3, cap) + 1))
        atoms *= b
        w = rng.dirichlet(np.ones(b))
        w[-1] = 1.0 - w[:-1].sum()
        stages[t] = [(float(rng.normal()), float(wi)) for wi in w]
    return build_tree(stages)


def _random_psd(rng, d, lo=0.1, hi=10.0):
    w = rng.uniform(lo, hi, size=d)
    V = np.linalg.qr(rng.normal(size=(d, d)))[0]
    return V @ np.diag(w) @ V.T


def random_instance(rng, max_atoms: int = 8, max_horizon: int = 3,
                    max_dim: int = 2) -> FuzzInstance:
    """One random Bolza instance plus a feasible primal/dual pair.

    Stage quadratics draw eigenvalues from [0.1, 10]; boxes have half-widths
    in [0.5, 5] and are centered on the stage arguments of a pre-sampled
    adapted reference trajectory, which keeps that trajectory feasible by
    construction.  Tree probabilities come from a symmetric Dirichlet.
    """
    from .convex import AllSpace, Box, StructuredConvex

    tree = random_tree(rng, max_atoms, max_horizon)
    n = int(rng.integers(1, max_dim + 1))
    s, T = tree.times

    # adapted reference trajectory (cell values), and the feasible primal
    ref = np.empty((T - s + 1, tree.n_atoms, n))
    for t in range(s, T + 1):
        vals = np.zeros((tree.n_atoms, n))
        for cell in tree.cells(t):
            vals[list(cell)] = rng.normal(size=n) * 1.5
        ref[t - s] = vals
    x = AdaptedProcess(tree, n, (s, T), ref, Schedule.PRIMAL)

    stage_costs = {}
    for t in range(s + 1, T + 1):
        fns = []
        for c, cell in enumerate(tree.cells(t)):
            a = cell[0]
            args = np.concatenate([ref[t - 1 - s, a], ref[t - s, a] - ref[t - 1 - s, a]])
            kind = int(rng.integers(0, 3))
            if kind == 0:
                Q = _random_psd(rng, 2 * n)
                dom = AllSpace(2 * n)
            elif kind == 1:
                Q = np.diag(rng.uniform(0.1, 10.0, size=2 * n))
                half = rng.uniform(0.5, 5.0, size=2 * n)
                dom = Box(args - half, args + half)
            else:
                Q = _random_psd(rng, 2 * n)
                half = rng.uniform(0.5, 5.0, size=2 * n)
                dom = Box(args - half, args + half)
            fns.append(StructuredConvex(2 * n, Q, rng.normal(size=2 * n),
                                        float(rng.uniform(-1.0, 1.0)), dom))
        stage_costs[t] = tuple(fns)
    mean_T = tree.expect(ref[T - s])
    if rng.integers(0, 2):
        gdom = Box(mean_T - rng.uniform(0.5, 5.0, size=n),
                   mean_T + rng.uniform(0.5, 5.0, size=n))
    else:
        gdom = AllSpace(n)
    terminal = StructuredConvex(n, _random_psd(rng, n), rng.normal(size=n),
                                float(rng.uniform(-1.0, 1.0)), gdom)
    xi = tree.expect(ref[0])
    problem = BolzaProblem(tree, n, stage_costs, terminal, xi, s)

    # feasible dual process under the one-step look-ahead schedule
    pstack = np.empty((T - s + 1, tree.n_atoms, n))
    for t in range(s, T):
        vals = np.zeros((tree.n_atoms, n))
        for cell in tree.cells(t + 1):
            vals[list(cell)] = rng.normal(size=n)
        pstack[t - s] = vals
    pstack[T - s] = rng.normal(size=n)
    p = AdaptedProcess(tree, n, (s, T), pstack, Schedule.DUAL)
    eta = -tree.expect(pstack[0])
    return FuzzInstance(problem, x, p, xi, eta)


@dataclass
class FuzzReport:
    seed: int
    count: int
    limits: dict
    checked: int = 0
    violations: list = field(default_factory=list)
    slacks: list = field(default_factory=list)
    min_slack: float = INF

    def as_dict(self):
        return {
            "seed": self.seed,
            "count": self.count,
            "limits": self.limits,
            "checked": self.checked,
            "violations": self.violations,
            "min_slack": self.min_slack,
            "slacks": [repr(s) for s in self.slacks],
        }


def fuzz_weak_duality(seed: int, count: int, max_atoms: int = 8,
                      max_horizon: int = 3, max_dim: int = 2,
                      collect_failures=None) -> FuzzReport:
    """Assert primal + dual - xi.eta >= -1e-7 on random feasible pairs.

    Deterministic under the seed.  Any violation signals an implementation
    bug; the failing instance index is recorded (and handed to
    ``collect_failures`` for serialization when provided).
    """
    rng = np.random.default_rng(seed)
    report = FuzzReport(seed, count, {
        "max_atoms": max_atoms, "max_horizon": max_horizon, "max_dim": max_dim})
    for k in range(count):
        inst = random_instance(rng, max_atoms, max_horizon, max_dim)
        pv = primal_cost(inst.problem, inst.x)
        dual = dualize(inst.problem)
        dv = dual_cost(dual, inst.p)
        if math.isfinite(pv) and math.isfinite(dv):
            slack = pv + dv - float(inst.xi @ inst.eta)
        else:
            slack = INF
        report.checked += 1
        report.slacks.append(round(slack, 12) if math.isfinite(slack) else INF)
        if math.isfinite(slack):
            report.min_slack = min(report.min_slack, slack)
        if slack < -1e-7:
            report.violations.append(k)
            if collect_failures is not None:
                collect_failures(k, inst)
    return report
