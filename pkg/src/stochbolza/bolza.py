"""Primal and dual stochastic Bolza problems on scenario trees.

The primal minimizes ``E[ sum_t L_t(x_{t-1}, dx_t) ] + g(E[x_T])`` over
adapted processes with a prescribed mean at the start time; the dual
minimizes ``E[ sum_t M_t(E^t[p_t], E^t[dp_t]) ] + f(p_T)`` over the
one-step-look-ahead process class with ``E[p_s]`` pinned.  Stage costs are
cell-constant structured convex functions; the dual stage costs are their
conjugates in the swapped pairing and the dual terminal cost is
``f(b) = g*(-b)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .convex import ConjugateView, StructuredConvex
from .splitting import RawSolution, SlotProblem, SolveConfig, solve_slot_problem
from .trees import AdaptedProcess, Schedule, ScenarioTree, check_adapted, cond_expect

INF = math.inf


class ProblemError(ValueError):
    """Raised for malformed problem data."""


def _swap_matrix(n: int) -> np.ndarray:
    S = np.zeros((2 * n, 2 * n))
    S[:n, n:] = np.eye(n)
    S[n:, :n] = np.eye(n)
    return S


def _per_cell(tree: ScenarioTree, t: int, fns) -> tuple:
    """Normalize per-atom or per-cell stage functions to one entry per cell,
    enforcing cell-constancy for per-atom input."""
    cells = tree.cells(t)
    fns = list(fns)
    if len(fns) == len(cells):
        return tuple(fns)
    if len(fns) != tree.n_atoms:
        raise ProblemError(
            f"stage {t}: expected {len(cells)} per-cell or {tree.n_atoms} "
            f"per-atom functions, got {len(fns)}")
    out = []
    for cell in cells:
        ref = fns[cell[0]]
        if any(fns[a] is not ref for a in cell[1:]):
            raise ProblemError(f"stage {t}: function varies inside a cell")
        out.append(ref)
    return tuple(out)


@dataclass(frozen=True)
class BolzaProblem:
    """Stochastic Bolza problem data.

    ``stage_costs[t]`` holds functions over (x, v) in R^{2n} for
    t in [first+1, last]; entries may be given per atom (cell-constant) or
    per cell of ``partitions[t]``.  ``terminal`` applies to the mean of the
    final state.  ``start`` is the time of the mean constraint.
    """

    tree: ScenarioTree
    dim: int
    stage_costs: dict[int, tuple]
    terminal: StructuredConvex
    initial_mean: np.ndarray
    start: int

    def __post_init__(self):
        tau, T = self.tree.times
        if not tau <= self.start <= T - 1:
            raise ProblemError(f"start {self.start} outside [{tau}, {T - 1}]")
        xi = np.atleast_1d(np.asarray(self.initial_mean, dtype=float))
        if xi.shape != (self.dim,):
            raise ProblemError("initial mean has wrong dimension")
        xi.setflags(write=False)
        object.__setattr__(self, "initial_mean", xi)
        costs = {}
        for t in range(tau + 1, T + 1):
            if t not in self.stage_costs:
                raise ProblemError(f"missing stage cost at time {t}")
            fns = _per_cell(self.tree, t, self.stage_costs[t])
            for f in fns:
                if f.dim != 2 * self.dim:
                    raise ProblemError(f"stage {t}: function dim {f.dim} != {2 * self.dim}")
            costs[t] = fns
        object.__setattr__(self, "stage_costs", costs)
        if self.terminal.dim != self.dim:
            raise ProblemError("terminal cost dimension mismatch")

    def stage_cost(self, t: int, atom: int):
        """Stage function at (t, atom); uniform per-atom indexing."""
        return self.stage_costs[t][self.tree.cell_of(t)[atom]]

    def restarted(self, start: int, xi) -> "BolzaProblem":
        return BolzaProblem(self.tree, self.dim, self.stage_costs,
                            self.terminal, xi, start)


@dataclass(frozen=True)
class DualBolzaProblem:
    """Dual problem data: stage costs over (p, q), terminal cost on p_T.

    The conditional-expectation wrapping of the stage arguments belongs to
    the objective assembly, not to the stage functions themselves.
    """

    tree: ScenarioTree
    dim: int
    stage_costs: dict[int, tuple]
    terminal: object
    initial_mean_negated: np.ndarray | None
    start: int

    def __post_init__(self):
        costs = {t: _per_cell(self.tree, t, fns)
                 for t, fns in self.stage_costs.items()}
        object.__setattr__(self, "stage_costs", costs)
        if self.initial_mean_negated is not None:
            eta = np.atleast_1d(np.asarray(self.initial_mean_negated, dtype=float))
            eta.setflags(write=False)
            object.__setattr__(self, "initial_mean_negated", eta)

    def restarted(self, start: int, eta) -> "DualBolzaProblem":
        return DualBolzaProblem(self.tree, self.dim, self.stage_costs,
                                self.terminal, eta, start)


def dualize(problem: BolzaProblem, eta=None) -> DualBolzaProblem:
    """Conjugate every stage per cell and the terminal cost.

    ``M_t(p, q) = sup {x.q + v.p - L_t(x, v)}`` is the conjugate of L_t with
    the (v, x) -> (p, q) slot swap; ``f(b) = g*(-b)``.  Closed-form
    structured conjugates are used whenever the quadratic/affine family is
    closed under conjugation, certified conjugate views otherwise.
    """
    n = problem.dim
    S = _swap_matrix(n)
    duals = {}
    for t, fns in problem.stage_costs.items():
        duals[t] = tuple(f.precompose_signed_perm(S).conjugate() for f in fns)
    g_neg = problem.terminal.precompose_signed_perm(-np.eye(n))
    return DualBolzaProblem(problem.tree, n, duals, g_neg.conjugate(),
                            eta, problem.start)


# ---------------------------------------------------------------------------
# assembly


@dataclass
class _Assembly:
    prob: SlotProblem
    var_slices: dict          # (t,) -> list of per-cell variable slices
    slot_index: dict          # (t, cell) -> slot number
    terminal_slot: int


def _var_layout(tree, dim, times_and_cells):
    slices, offset = {}, 0
    for key, ncells in times_and_cells:
        slices[key] = [slice(offset + c * dim, offset + (c + 1) * dim)
                       for c in range(ncells)]
        offset += ncells * dim
    return slices, offset


def _coo_add_block(rows, cols, vals, r0, var_slice, coeff, dim):
    for k in range(dim):
        rows.append(r0 + k)
        cols.append(var_slice.start + k)
        vals.append(coeff)


def assemble_primal(problem: BolzaProblem, xi=None, *, tilt=None,
                    with_mean: bool = True) -> _Assembly:
    """Stage-slot assembly of the primal on [start, T].

    Slots per (t, cell of partitions[t]) carry (x_{t-1}, dx_t); a terminal
    slot carries E[x_T].  With ``tilt`` set, an extra linear slot
    ``-tilt . E[x_s]`` is appended (the mean constraint is then usually
    dropped via ``with_mean=False``).
    """
    tree, n, s = problem.tree, problem.dim, problem.start
    T = tree.last_time
    xi = problem.initial_mean if xi is None else np.atleast_1d(np.asarray(xi, dtype=float))
    layout = [(t, len(tree.cells(t))) for t in range(s, T + 1)]
    var_slices, n_vars = _var_layout(tree, n, layout)

    slot_fns, slot_weights = [], []
    rows, cols, vals = [], [], []
    slot_index = {}
    r0 = 0
    for t in range(s + 1, T + 1):
        cells = tree.cells(t)
        wcells = tree.cell_prob(t)
        parent_of = tree.cell_of(t - 1)
        for c, cell in enumerate(cells):
            pc = parent_of[cell[0]]
            slot_index[(t, c)] = len(slot_fns)
            slot_fns.append(problem.stage_costs[t][c])
            slot_weights.append(wcells[c])
            vs_prev = var_slices[t - 1][pc]
            vs_cur = var_slices[t][c]
            _coo_add_block(rows, cols, vals, r0, vs_prev, 1.0, n)          # x part
            _coo_add_block(rows, cols, vals, r0 + n, vs_cur, 1.0, n)       # dx part
            _coo_add_block(rows, cols, vals, r0 + n, vs_prev, -1.0, n)
            r0 += 2 * n
    terminal_slot = len(slot_fns)
    slot_fns.append(problem.terminal)
    slot_weights.append(1.0)
    wT = tree.cell_prob(T)
    for c in range(len(tree.cells(T))):
        _coo_add_block(rows, cols, vals, r0, var_slices[T][c], float(wT[c]), n)
    r0 += n
    if tilt is not None:
        tilt = np.atleast_1d(np.asarray(tilt, dtype=float))
        slot_fns.append(StructuredConvex(n, np.zeros((n, n)), -tilt, 0.0, _all(n)))
        slot_weights.append(1.0)
        ws = tree.cell_prob(s)
        for c in range(len(tree.cells(s))):
            _coo_add_block(rows, cols, vals, r0, var_slices[s][c], float(ws[c]), n)
        r0 += n
    K = sp.coo_matrix((vals, (rows, cols)), shape=(r0, n_vars)).tocsr()

    crows, ccols, cvals, crhs = [], [], [], []
    if with_mean:
        ws = tree.cell_prob(s)
        for k in range(n):
            for c in range(len(tree.cells(s))):
                crows.append(k)
                ccols.append(var_slices[s][c].start + k)
                cvals.append(float(ws[c]))
            crhs.append(float(xi[k]))
    C = sp.coo_matrix((cvals, (crows, ccols)), shape=(len(crhs), n_vars)).tocsr()
    prob = SlotProblem(slot_fns, np.asarray(slot_weights), K, C, np.asarray(crhs))
    return _Assembly(prob, var_slices, slot_index, terminal_slot)


def _all(n):
    from .convex import AllSpace
    return AllSpace(n)


def assemble_dual(problem: DualBolzaProblem, eta=None) -> _Assembly:
    """Stage-slot assembly of the dual on [start, T].

    Variables: p_t per cell of partitions[t+1] for t < T (one-step
    look-ahead measurability) and a single constant p_T.  Slots carry
    ``(E^t[p_t], E^t[dp_t])`` per cell of partitions[t]; linear constraints
    pin ``E[p_s] = -eta`` and the constancy of ``E^s[p_s]``.
    """
    tree, n, s = problem.tree, problem.dim, problem.start
    T = tree.last_time
    if eta is None:
        eta = problem.initial_mean_negated
    if eta is None:
        raise ProblemError("dual solve requires eta")
    eta = np.atleast_1d(np.asarray(eta, dtype=float))

    layout = [(t, len(tree.cells(t + 1)) if t < T else 1) for t in range(s, T + 1)]
    var_slices, n_vars = _var_layout(tree, n, layout)

    slot_fns, slot_weights = [], []
    rows, cols, vals = [], [], []
    slot_index = {}
    r0 = 0
    for t in range(s + 1, T + 1):
        cells = tree.cells(t)
        wcells = tree.cell_prob(t)
        sub_of = tree.cell_of(t + 1) if t < T else None
        for c, cell in enumerate(cells):
            slot_index[(t, c)] = len(slot_fns)
            slot_fns.append(problem.stage_costs[t][c])
            slot_weights.append(wcells[c])
            # beta = E^t[p_t] on this cell; alpha = beta - p_{t-1}(cell),
            # since p_{t-1} is already measurable on cells(t)
            if t == T:
                beta_coeffs = [(var_slices[T][0], 1.0)]
            else:
                subcells = sorted({sub_of[a] for a in cell})
                beta_coeffs = [
                    (var_slices[t][c2],
                     float(tree.prob[list(tree.cells(t + 1)[c2])].sum() / wcells[c]))
                    for c2 in subcells
                ]
            for vs, coeff in beta_coeffs:
                _coo_add_block(rows, cols, vals, r0, vs, coeff, n)
                _coo_add_block(rows, cols, vals, r0 + n, vs, coeff, n)
            _coo_add_block(rows, cols, vals, r0 + n, var_slices[t - 1][c], -1.0, n)
            r0 += 2 * n
    terminal_slot = len(slot_fns)
    slot_fns.append(problem.terminal)
    slot_weights.append(1.0)
    _coo_add_block(rows, cols, vals, r0, var_slices[T][0], 1.0, n)
    r0 += n
    K = sp.coo_matrix((vals, (rows, cols)), shape=(r0, n_vars)).tocsr()

    # constraints: E[p_s] = -eta and E^s[p_s] constant across cells(s)
    crows, ccols, cvals, crhs = [], [], [], []
    cells_s1 = tree.cells(s + 1) if s < T else [tuple(range(tree.n_atoms))]
    w_s1 = [tree.prob[list(cell)].sum() for cell in cells_s1]
    row = 0
    for k in range(n):
        for c, wc in enumerate(w_s1):
            crows.append(row)
            ccols.append(var_slices[s][c].start + k)
            cvals.append(float(wc))
        crhs.append(float(-eta[k]))
        row += 1
    cells_s = tree.cells(s)
    if len(cells_s) > 1:
        sub_of = tree.cell_of(s + 1)
        def cond_coeffs(cell):
            subcells = sorted({sub_of[a] for a in cell})
            wc = tree.prob[list(cell)].sum()
            return [(c2, tree.prob[list(cells_s1[c2])].sum() / wc) for c2 in subcells]
        ref = cond_coeffs(cells_s[0])
        for cell in cells_s[1:]:
            cur = cond_coeffs(cell)
            for k in range(n):
                for c2, w in cur:
                    crows.append(row)
                    ccols.append(var_slices[s][c2].start + k)
                    cvals.append(float(w))
                for c2, w in ref:
                    crows.append(row)
                    ccols.append(var_slices[s][c2].start + k)
                    cvals.append(float(-w))
                crhs.append(0.0)
                row += 1
    C = sp.coo_matrix((cvals, (crows, ccols)), shape=(row, n_vars)).tocsr()
    prob = SlotProblem(slot_fns, np.asarray(slot_weights), K, C, np.asarray(crhs))
    return _Assembly(prob, var_slices, slot_index, terminal_slot)


def _decode_primal(problem: BolzaProblem, asm: _Assembly, v: np.ndarray) -> AdaptedProcess:
    tree, n, s = problem.tree, problem.dim, problem.start
    T = tree.last_time
    stack = np.empty((T - s + 1, tree.n_atoms, n))
    for t in range(s, T + 1):
        cell_of = tree.cell_of(t)
        for a in range(tree.n_atoms):
            stack[t - s, a] = v[asm.var_slices[t][cell_of[a]]]
    return AdaptedProcess(tree, n, (s, T), stack, Schedule.PRIMAL)


def _decode_dual(problem: DualBolzaProblem, asm: _Assembly, v: np.ndarray) -> AdaptedProcess:
    tree, n, s = problem.tree, problem.dim, problem.start
    T = tree.last_time
    stack = np.empty((T - s + 1, tree.n_atoms, n))
    for t in range(s, T):
        cell_of = tree.cell_of(t + 1)
        for a in range(tree.n_atoms):
            stack[t - s, a] = v[asm.var_slices[t][cell_of[a]]]
    stack[T - s, :] = v[asm.var_slices[T][0]]
    return AdaptedProcess(tree, n, (s, T), stack, Schedule.DUAL)


# ---------------------------------------------------------------------------
# reports and solves


@dataclass
class SolveReport:
    """Outcome of a primal or dual solve."""

    optimal_value: float
    trajectory: AdaptedProcess | None
    iterations: int
    stationarity_residual: float
    feasibility_residual: float
    status: str
    config: SolveConfig
    kind: str = "primal"
    note: str = ""
    slot_subgrads: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self):
        return {
            "kind": self.kind,
            "status": self.status,
            "optimal_value": self.optimal_value,
            "iterations": self.iterations,
            "stationarity_residual": self.stationarity_residual,
            "feasibility_residual": self.feasibility_residual,
            "note": self.note,
            "config": self.config.as_dict(),
        }


def _finish_report(problem, asm, raw: RawSolution, config, kind, decode) -> SolveReport:
    if raw.v is None or raw.status in ("infeasible", "unbounded"):
        value = INF if raw.status == "infeasible" else (-INF if raw.status == "unbounded" else raw.value)
        return SolveReport(value, None, raw.iterations, raw.stationarity,
                           raw.feasibility, raw.status, config, kind, raw.note)
    traj = decode(problem, asm, raw.v)
    adrep = check_adapted(traj)
    feas = raw.feasibility + adrep.max_spread
    return SolveReport(raw.value, traj, raw.iterations, raw.stationarity,
                       feas, raw.status, config, kind, raw.note,
                       slot_subgrads=getattr(raw, "slot_subgrads", None))


def solve_primal(problem: BolzaProblem, config: SolveConfig | None = None,
                 xi=None) -> SolveReport:
    """Minimize the primal objective; optimal value is V_start(xi)."""
    config = config or SolveConfig()
    asm = assemble_primal(problem, xi)
    raw = solve_slot_problem(asm.prob, config)
    return _finish_report(problem, asm, raw, config, "primal", _decode_primal)


def solve_dual(problem: DualBolzaProblem, config: SolveConfig | None = None,
               eta=None) -> SolveReport:
    """Minimize the dual objective; optimal value is W_start(eta)."""
    config = config or SolveConfig()
    asm = assemble_dual(problem, eta)
    raw = solve_slot_problem(asm.prob, config)
    return _finish_report(problem, asm, raw, config, "dual", _decode_dual)


def primal_cost(problem: BolzaProblem, traj: AdaptedProcess,
                feastol: float = 1e-9) -> float:
    """Objective value of a supplied primal trajectory."""
    tree, s = problem.tree, problem.start
    T = tree.last_time
    total = 0.0
    for t in range(s + 1, T + 1):
        wc = tree.cell_prob(t)
        for c, cell in enumerate(tree.cells(t)):
            a = cell[0]
            z = np.concatenate([traj.value(t - 1)[a], traj.delta(t)[a]])
            val = problem.stage_costs[t][c].value(z, feastol)
            if val == INF:
                return INF
            total += wc[c] * val
    gval = problem.terminal.value(traj.expect(T), feastol)
    return INF if gval == INF else total + gval


def dual_cost(problem: DualBolzaProblem, traj: AdaptedProcess,
              feastol: float = 1e-9) -> float:
    """Objective value of a supplied dual trajectory (assumed feasible)."""
    tree, s = problem.tree, problem.start
    T = tree.last_time
    total = 0.0
    for t in range(s + 1, T + 1):
        beta = cond_expect(tree, traj.value(t), t)
        alpha = beta - cond_expect(tree, traj.value(t - 1), t)
        wc = tree.cell_prob(t)
        for c, cell in enumerate(tree.cells(t)):
            a = cell[0]
            val = problem.stage_costs[t][c].value(
                np.concatenate([beta[a], alpha[a]]), feastol)
            if val == INF:
                return INF
            total += wc[c] * val
    fval = problem.terminal.value(tree.expect(traj.value(T)), feastol)
    return INF if fval == INF else total + fval


def value_function(problem: BolzaProblem, xi, start: int | None = None,
                   config: SolveConfig | None = None) -> float:
    """V_s(xi); at s = T this is the terminal cost itself."""
    s = problem.start if start is None else start
    if s == problem.tree.last_time:
        return problem.terminal.value(np.atleast_1d(np.asarray(xi, dtype=float)))
    return solve_primal(problem.restarted(s, xi), config).optimal_value


def dual_value_function(problem: DualBolzaProblem, eta, start: int | None = None,
                        config: SolveConfig | None = None) -> float:
    """W_s(eta); at s = T this is f(-eta)."""
    s = problem.start if start is None else start
    if s == problem.tree.last_time:
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        return problem.terminal.value(-eta)
    return solve_dual(problem.restarted(s, eta), config).optimal_value


def multiplier_dual_process(problem: BolzaProblem, report: SolveReport) -> AdaptedProcess | None:
    """Dual process reconstructed from the primal solve's slot subgradients.

    Each stage subgradient selection splits as (E^t[dp_t], E^t[p_t]); one
    step of look-ahead gives p_{t-1} = E^t[p_t] - E^t[dp_t] per cell, and
    the terminal selection gives p_T = -y for y in the subdifferential of
    the terminal cost at E[x_T].
    """
    if report.slot_subgrads is None or report.trajectory is None:
        return None
    tree, n, s = problem.tree, problem.dim, problem.start
    T = tree.last_time
    asm = assemble_primal(problem)
    y = report.slot_subgrads
    stack = np.empty((T - s + 1, tree.n_atoms, n))
    prob = asm.prob
    for t in range(s + 1, T + 1):
        cell_of = tree.cell_of(t)
        for c in range(len(tree.cells(t))):
            i = asm.slot_index[(t, c)]
            blk = y[prob.offsets[i]:prob.offsets[i + 1]]
            alpha, beta = blk[:n], blk[n:]
            for a in np.flatnonzero(cell_of == c):
                stack[t - 1 - s, a] = beta - alpha
    i = asm.terminal_slot
    ym = y[prob.offsets[i]:prob.offsets[i + 1]]
    stack[T - s, :] = -ym
    return AdaptedProcess(tree, n, (s, T), stack, Schedule.DUAL)


@dataclass
class SubgradientCertificate:
    value: float
    eta: np.ndarray | None
    residual: float
    dual_value: float
    note: str = ""


def value_and_subgradient(problem: BolzaProblem, xi=None,
                          config: SolveConfig | None = None) -> SubgradientCertificate:
    """V_s(xi) with a Fenchel-Young-certified subgradient candidate.

    The candidate ``eta = -E[p_s]`` comes from the dual process reconstructed
    out of the primal solve; the certificate is ``|V + W(eta) - xi.eta|``
    with W from an actual dual solve.  Above tolerance the subgradient is
    withheld and the measured gap reported.
    """
    config = config or SolveConfig()
    xi = problem.initial_mean if xi is None else np.atleast_1d(np.asarray(xi, dtype=float))
    prob = problem if xi is problem.initial_mean else problem.restarted(problem.start, xi)
    rep = solve_primal(prob, config)
    if rep.status == "infeasible" or rep.optimal_value == INF:
        raise ProblemError("value_and_subgradient requires finite V(xi)")
    if rep.status == "unbounded":
        raise ProblemError("primal unbounded below")
    V = rep.optimal_value
    pproc = multiplier_dual_process(prob, rep)
    if pproc is None:
        return SubgradientCertificate(V, None, INF, INF, "no multiplier available")
    eta = -pproc.expect(problem.start)
    dual = dualize(prob)
    W = solve_dual(dual, config, eta=eta).optimal_value
    residual = abs(V + W - float(xi @ eta)) if math.isfinite(W) else INF
    if residual <= config.certification_tol:
        return SubgradientCertificate(V, eta, residual, W)
    return SubgradientCertificate(V, None, residual, W,
                                  "duality gap above certification tolerance")


@dataclass
class TiltedReport:
    value: float
    minus_dual_value: float
    agrees: bool
    status: str


def tilted_primal(problem: BolzaProblem, eta, config: SolveConfig | None = None) -> TiltedReport:
    """Optimal value of the mean-unconstrained tilted problem
    ``inf E[sum L] + g(E x_T) - eta . E[x_s]`` and its comparison against
    ``-W_start(eta)`` (equal under strong duality)."""
    config = config or SolveConfig()
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    asm = assemble_primal(problem, tilt=eta, with_mean=False)
    raw = solve_slot_problem(asm.prob, config)
    value = raw.value if raw.status not in ("infeasible", "unbounded") else (
        INF if raw.status == "infeasible" else -INF)
    W = solve_dual(dualize(problem), config, eta=eta).optimal_value
    agrees = (math.isfinite(value) and math.isfinite(W)
              and abs(value + W) <= config.gap_strong_tol * (1.0 + abs(W)))
    if value == -INF and W == INF:
        agrees = True
    return TiltedReport(value, -W if math.isfinite(W) else -W, agrees, raw.status)


@dataclass
class DualityReport:
    primal_value: float
    dual_value: float
    gap: float
    weak_holds: bool
    strong: bool
    pair_slack: float | None = None

    def as_dict(self):
        return {
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "weak_holds": self.weak_holds,
            "strong": self.strong,
            "pair_slack": self.pair_slack,
        }


def duality_report(problem: BolzaProblem, xi, eta,
                   config: SolveConfig | None = None,
                   feasible_pair=None) -> DualityReport:
    """Compute V_s(xi), W_s(eta) and the duality gap V + W - xi.eta.

    The gap must be above -1e-7 (weak duality always); it is labeled strong
    below the configured threshold.  A user-supplied feasible (x, p) pair is
    costed directly and its pairwise slack reported.
    """
    config = config or SolveConfig()
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    V = value_function(problem, xi, config=config)
    dual = dualize(problem)
    W = dual_value_function(dual, eta, config=config)
    if math.isfinite(V) and math.isfinite(W):
        gap = V + W - float(xi @ eta)
    else:
        gap = INF
    slack = None
    if feasible_pair is not None:
        x_traj, p_traj = feasible_pair
        pv = primal_cost(problem, x_traj)
        dv = dual_cost(dual, p_traj)
        xi_pair = x_traj.expect(problem.start)
        eta_pair = -p_traj.expect(problem.start)
        slack = (pv + dv - float(xi_pair @ eta_pair)
                 if math.isfinite(pv) and math.isfinite(dv) else INF)
    return DualityReport(V, W, gap, weak_holds=gap >= -1e-7,
                         strong=gap <= config.gap_strong_tol, pair_slack=slack)
