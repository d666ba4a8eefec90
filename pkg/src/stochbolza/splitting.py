"""Splitting solver for tree-indexed convex programs in stage-slot form.

A problem is assembled as ``minimize sum_i weight_i * f_i(slot_i(K v))``
over reduced variables ``v`` subject to sparse equality constraints
``C v = c``.  Slots are small blocks (stage arguments, terminal means), the
reduced variables parametrize the measurability subspace exactly, and all
inner products are taken in the probability-weighted metric so per-slot
proximal maps drop the weights.

Two routes share the assembly:

* a direct KKT solve when every slot function is quadratic with an affine
  domain (exact, one factorization), and
* Douglas-Rachford splitting between the separable slot costs and the
  consistency subspace ``{w = K v : C v = c}``, whose projection is one
  prefactored sparse KKT solve per iteration.

The solver keeps the consistency-side iterate (always measurable and
mean-feasible) and reports the best feasible objective seen, so the reported
objective sequence is nonincreasing by construction.  Infeasibility is
confirmed by a quadratic-penalty homotopy with penalty doubling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .convex import AffineSet, AllSpace, Intersection, StructuredConvex, _project_descriptor

INF = math.inf


@dataclass(frozen=True)
class SolveConfig:
    """Solver tolerances, echoed verbatim into every report."""

    stationarity_tol: float = 1e-8
    feasibility_tol: float = 1e-10
    certification_tol: float = 1e-6
    gap_strong_tol: float = 1e-5
    max_iter: int = 200000
    prox_step: float = 1.0
    feastol: float = 1e-9
    check_every: int = 10
    penalty_ceiling: float = 1e12

    def as_dict(self):
        return {
            "stationarity_tol": self.stationarity_tol,
            "feasibility_tol": self.feasibility_tol,
            "certification_tol": self.certification_tol,
            "gap_strong_tol": self.gap_strong_tol,
            "max_iter": self.max_iter,
            "prox_step": self.prox_step,
            "feastol": self.feastol,
        }


@dataclass
class SlotProblem:
    """Assembled stage-slot program.

    ``slot_fns[i]`` acts on ``value_stack[offsets[i]:offsets[i+1]]`` with
    metric weight ``slot_weights[i]`` (atom/cell probability for stage slots,
    one for terminal slots).  ``K`` maps reduced variables to the stacked
    slot vector; ``C``/``c`` are equality constraints on the reduced
    variables.
    """

    slot_fns: list
    slot_weights: np.ndarray
    K: sp.csr_matrix
    C: sp.csr_matrix
    c: np.ndarray

    offsets: np.ndarray = field(init=False)
    coord_weights: np.ndarray = field(init=False)

    def __post_init__(self):
        sizes = [f.dim for f in self.slot_fns]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        w = np.empty(self.offsets[-1])
        for i, f in enumerate(self.slot_fns):
            w[self.offsets[i]:self.offsets[i + 1]] = self.slot_weights[i]
        self.coord_weights = w

    @property
    def n_vars(self) -> int:
        return self.K.shape[1]

    def slot(self, stack: np.ndarray, i: int) -> np.ndarray:
        return stack[self.offsets[i]:self.offsets[i + 1]]

    def objective(self, stack: np.ndarray, feastol: float) -> float:
        total = 0.0
        for i, f in enumerate(self.slot_fns):
            val = f.value(self.slot(stack, i), feastol)
            if val == INF:
                return INF
            total += self.slot_weights[i] * val
        return total

    def wnorm(self, stack: np.ndarray) -> float:
        return math.sqrt(float(np.sum(self.coord_weights * stack * stack)))


@dataclass
class RawSolution:
    status: str                 # optimal | infeasible | unbounded | max_iter
    value: float
    v: np.ndarray | None
    stack: np.ndarray | None
    iterations: int
    stationarity: float
    feasibility: float
    note: str = ""
    slot_subgrads: np.ndarray | None = None  # per-slot selections in dPhi
    objective_trace: list = field(default_factory=list)  # incumbent per sweep


def _is_quadratic_affine(f) -> bool:
    if not isinstance(f, StructuredConvex):
        return False
    dom = f.domain
    if isinstance(dom, (AllSpace, AffineSet)):
        return True
    if isinstance(dom, Intersection):
        return all(isinstance(p, (AllSpace, AffineSet)) for p in dom.parts)
    return False


def solve_slot_problem(prob: SlotProblem, config: SolveConfig,
                       warm: np.ndarray | None = None) -> RawSolution:
    """Solve the assembled program; direct KKT when possible, else splitting."""
    if all(_is_quadratic_affine(f) for f in prob.slot_fns):
        direct = _solve_direct(prob, config)
        if direct is not None:
            return direct
    return _douglas_rachford(prob, config, warm)


# ---------------------------------------------------------------------------
# direct equality-constrained QP route


def _solve_direct(prob: SlotProblem, config: SolveConfig) -> RawSolution | None:
    n = prob.n_vars
    Omega = sp.diags(prob.coord_weights)
    Qblk, bstack, extra_rows, extra_rhs = [], [], [], []
    for i, f in enumerate(prob.slot_fns):
        Qblk.append(sp.csr_matrix(f.quad))
        bstack.append(f.lin)
        A_eq, b_eq, _, _ = f.domain.rows()
        if len(b_eq):
            sel = prob.K[prob.offsets[i]:prob.offsets[i + 1]]
            extra_rows.append(sp.csr_matrix(A_eq) @ sel)
            extra_rhs.append(b_eq)
    H = 2.0 * (prob.K.T @ Omega @ sp.block_diag(Qblk, format="csr") @ prob.K)
    g = prob.K.T @ (prob.coord_weights * np.concatenate(bstack))
    C = sp.vstack([prob.C] + extra_rows, format="csr") if extra_rows else prob.C
    c = np.concatenate([prob.c] + extra_rhs) if extra_rows else prob.c
    m = C.shape[0]
    KKT = sp.bmat([[H, C.T], [C, None]], format="csc") if m else sp.csc_matrix(H)
    rhs = np.concatenate([-g, c]) if m else -g
    sol, ok = _solve_sparse_square(KKT, rhs)
    if not ok:
        return None  # singular or inconsistent: let splitting/penalty decide
    v = sol[:n]
    if m:
        feas = float(np.max(np.abs(C @ v - c), initial=0.0))
        if feas > max(config.feasibility_tol, 1e-8 * (1.0 + np.abs(c).max(initial=0.0))):
            return None
    stack = prob.K @ v
    value = prob.objective(stack, config.feastol)
    if value == INF:
        return None
    kkt_res = float(np.max(np.abs(KKT @ sol - rhs), initial=0.0))
    scale = 1.0 + float(np.max(np.abs(rhs), initial=0.0)) + float(np.max(np.abs(sol), initial=0.0))
    if kkt_res > 1e-7 * scale:
        return None
    feas = float(np.max(np.abs(prob.C @ v - prob.c), initial=0.0)) if prob.C.shape[0] else 0.0
    # subgradient selections: smooth part plus the affine-row normal element
    mult = sol[n + prob.C.shape[0]:]
    y = np.empty_like(stack)
    pos = 0
    for i, f in enumerate(prob.slot_fns):
        sl = slice(prob.offsets[i], prob.offsets[i + 1])
        y[sl] = 2.0 * f.quad @ stack[sl] + f.lin
        A_eq, b_eq, _, _ = f.domain.rows()
        if len(b_eq):
            y[sl] += A_eq.T @ mult[pos:pos + len(b_eq)] / prob.slot_weights[i]
            pos += len(b_eq)
    return RawSolution("optimal", value, v, stack, 1, kkt_res / scale, feas,
                       note="direct", slot_subgrads=y)


def _solve_sparse_square(A: sp.spmatrix, rhs: np.ndarray):
    try:
        lu = spla.splu(A.tocsc())
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise RuntimeError
        res = np.max(np.abs(A @ x - rhs), initial=0.0)
        scale = 1.0 + np.max(np.abs(rhs), initial=0.0) + np.max(np.abs(x), initial=0.0)
        if res > 1e-6 * scale:
            raise RuntimeError
        return x, True
    except (RuntimeError, Exception):
        dense = A.toarray()
        x, residuals, rank, _ = np.linalg.lstsq(dense, rhs, rcond=None)
        res = np.max(np.abs(dense @ x - rhs), initial=0.0)
        scale = 1.0 + np.max(np.abs(rhs), initial=0.0) + np.max(np.abs(x), initial=0.0)
        return x, bool(res <= 1e-6 * scale)


# ---------------------------------------------------------------------------
# Douglas-Rachford route


class _Projector:
    """Weighted least-squares projection onto {K v : C v = c}."""

    def __init__(self, prob: SlotProblem):
        Omega = sp.diags(prob.coord_weights)
        P = (prob.K.T @ Omega @ prob.K).tocsc()
        m = prob.C.shape[0]
        if m:
            KKT = sp.bmat([[P, prob.C.T], [prob.C, None]], format="csc")
        else:
            KKT = P
        self.m = m
        self.prob = prob
        self.KtOmega = (prob.K.T @ Omega).tocsr()
        try:
            self._lu = spla.splu(KKT)
            self._dense = None
        except Exception:
            self._dense = np.linalg.pinv(KKT.toarray())
            self._lu = None

    def __call__(self, stack: np.ndarray):
        rhs = self.KtOmega @ stack
        full = np.concatenate([rhs, self.prob.c]) if self.m else rhs
        sol = self._lu.solve(full) if self._lu is not None else self._dense @ full
        v = sol[:self.prob.n_vars]
        return self.prob.K @ v, v


class _ProxKernel:
    """Per-slot prox dispatch, batched across slots sharing a function."""

    def __init__(self, prob: SlotProblem, step: float):
        self.prob = prob
        self.step = step
        groups: dict[int, list[int]] = {}
        for i, f in enumerate(prob.slot_fns):
            groups.setdefault(id(f), []).append(i)
        self.groups = [(prob.slot_fns[idx[0]], idx) for idx in groups.values()]

    def __call__(self, stack: np.ndarray) -> np.ndarray:
        out = np.empty_like(stack)
        prob, step = self.prob, self.step
        for f, idx in self.groups:
            for i in idx:
                sl = slice(prob.offsets[i], prob.offsets[i + 1])
                out[sl] = f.prox(stack[sl], step)
        return out


def _douglas_rachford(prob: SlotProblem, config: SolveConfig,
                      warm: np.ndarray | None) -> RawSolution:
    project = _Projector(prob)
    lam = config.prox_step
    kernel = _ProxKernel(prob, lam)
    if warm is not None and warm.shape == (prob.offsets[-1],):
        Z = warm.copy()
    else:
        stack0, _ = project(np.zeros(prob.offsets[-1]))
        Z = stack0
    best_val, best_v, best_stack, best_y = INF, None, None, None
    stat = INF
    gap_window: list[float] = []
    trace: list = []
    scale0 = 1.0 + prob.wnorm(Z)
    it = 0
    for it in range(1, config.max_iter + 1):
        U_cost = kernel(Z)
        y_stack = (Z - U_cost) / lam
        U_cons, v = project(2.0 * U_cost - Z)
        Z += U_cons - U_cost
        gap = prob.wnorm(U_cost - U_cons)
        stat = gap / lam
        if it % config.check_every == 0 or stat <= config.stationarity_tol:
            # near convergence the consistency-side point violates stage
            # domains by about the gap; cap the slack so far-from-feasible
            # iterates never record a finite incumbent
            eval_tol = max(10.0 * config.feastol, min(10.0 * gap, 1e-6))
            val = prob.objective(U_cons, eval_tol)
            if val < best_val:
                best_val, best_v, best_stack, best_y = val, v.copy(), U_cons.copy(), y_stack
            trace.append(best_val)
            if best_val < -config.penalty_ceiling:
                return RawSolution("unbounded", -INF, best_v, best_stack, it,
                                   stat, 0.0, note="objective below -ceiling")
            gap_window.append(gap)
            if stat <= config.stationarity_tol and val < INF:
                best_val, best_v, best_stack, best_y = val, v, U_cons, y_stack
                break
            znorm = prob.wnorm(Z)
            if znorm > 1e9 * scale0:
                return _diverged(prob, config, best_val, best_v, best_stack, it, stat)
            if len(gap_window) > 400:
                old = gap_window[-400]
                if gap > 0.999 * old and znorm > 10.0 * scale0:
                    return _diverged(prob, config, best_val, best_v, best_stack, it, stat)
    feas = (float(np.max(np.abs(prob.C @ best_v - prob.c), initial=0.0))
            if (prob.C.shape[0] and best_v is not None) else 0.0)
    if best_val == INF:
        probe = penalty_probe(prob, config)
        if probe is not None:
            return probe
    status = "optimal" if (stat <= config.stationarity_tol
                           and feas <= config.feasibility_tol
                           and best_val < INF) else "max_iter"
    return RawSolution(status, best_val, best_v, best_stack, it, stat, feas,
                       slot_subgrads=best_y, objective_trace=trace)


def _diverged(prob, config, best_val, best_v, best_stack, it, stat):
    probe = penalty_probe(prob, config)
    if probe is not None:
        return probe
    if best_val == INF:
        return RawSolution("infeasible", INF, None, None, it, stat, INF,
                           note="iterates diverged without a feasible point")
    return RawSolution("max_iter", best_val, best_v, best_stack, it, stat, 0.0,
                       note="iterates diverged")


# ---------------------------------------------------------------------------
# quadratic-penalty homotopy: infeasibility / unboundedness certification


def penalty_probe(prob: SlotProblem, config: SolveConfig) -> RawSolution | None:
    """Minimize the smooth part plus rho * squared domain distances, doubling
    rho; certifies infeasibility (cost above the ceiling with stagnant
    residual) or unboundedness (cost below the negative ceiling).

    Requires every slot function to be structured (known domains); returns
    None otherwise.
    """
    from scipy.optimize import minimize as sp_minimize

    if not all(isinstance(f, StructuredConvex) for f in prob.slot_fns):
        return None
    m = prob.C.shape[0]
    if m:
        Cd = prob.C.toarray()
        v0, *_ = np.linalg.lstsq(Cd, prob.c, rcond=None)
        if np.max(np.abs(Cd @ v0 - prob.c), initial=0.0) > 1e-8 * (1.0 + np.abs(prob.c).max(initial=0.0)):
            return RawSolution("infeasible", INF, None, None, 0, 0.0, INF,
                               note="reduced equality system inconsistent")
        N = scipy_null_space(Cd)
    else:
        v0 = np.zeros(prob.n_vars)
        N = np.eye(prob.n_vars)
    if N.shape[1] == 0:
        stack = prob.K @ v0
        val = prob.objective(stack, config.feastol)
        status = "optimal" if val < INF else "infeasible"
        return RawSolution(status, val, v0, stack, 0, 0.0, 0.0, note="pinned")

    def smooth_and_dist(stack, rho):
        val, grad = 0.0, np.zeros_like(stack)
        dist2 = 0.0
        for i, f in enumerate(prob.slot_fns):
            sl = slice(prob.offsets[i], prob.offsets[i + 1])
            w, z = prob.slot_weights[i], stack[sl]
            val += w * (z @ f.quad @ z + f.lin @ z + f.const)
            grad[sl] += w * (2.0 * f.quad @ z + f.lin)
            pz = _project_descriptor(f.domain, z)
            d = z - pz
            dist2 += w * float(d @ d)
            grad[sl] += w * 2.0 * rho * d
        return val + rho * dist2, grad, dist2

    rho = 1.0
    w = np.zeros(N.shape[1])
    prev_dist = None
    while rho <= config.penalty_ceiling * 8.0:
        def fun(wvec):
            stack = prob.K @ (v0 + N @ wvec)
            val, grad, _ = smooth_and_dist(stack, rho)
            return val, N.T @ (prob.K.T @ grad)

        res = sp_minimize(fun, w, jac=True, method="L-BFGS-B",
                          options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-12})
        w = res.x
        stack = prob.K @ (v0 + N @ w)
        val, _, dist2 = smooth_and_dist(stack, rho)
        if val < -config.penalty_ceiling:
            return RawSolution("unbounded", -INF, v0 + N @ w, stack, 0, 0.0, 0.0,
                               note=f"penalized cost diverges down (rho={rho:g})")
        if dist2 <= config.feasibility_tol ** 0.5 * 1e-6:
            return None  # feasible after all: not an infeasibility certificate
        stagnant = prev_dist is not None and dist2 > 0.9 * prev_dist
        if stagnant and dist2 > 1e-12 and (val > config.penalty_ceiling
                                           or rho > config.penalty_ceiling):
            return RawSolution("infeasible", INF, None, None, 0, 0.0,
                               math.sqrt(dist2),
                               note=f"penalized cost above ceiling (rho={rho:g})")
        prev_dist = dist2
        rho *= 2.0
    return None


def scipy_null_space(A: np.ndarray) -> np.ndarray:
    import scipy.linalg
    return scipy.linalg.null_space(A)
