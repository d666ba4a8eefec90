"""Linear-convex and linear-quadratic control layer.

Control problems with linear dynamics ``x_{t+1} = A x_t + B u_t + w_t``
reduce to Bolza form by minimizing the control out of the per-stage
aggregate of cost, dynamics indicator, mixed constraints, control set, and
state set.  The reduction is closed-form (quadratic over affine) whenever
the control enters only through the dynamics; otherwise the stage cost is a
lazy partial-minimization view with exact value, prox, and conjugate.

The LQ specialization carries closed-form Hamiltonians and a
characteristics system: the coupled forward/backward difference equations,
transversality, measurability, and mean conditions assemble into one sparse
linear solve over all node unknowns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bolza import BolzaProblem, SolveConfig
from .characteristics import TrajectoryVerdict, check_trajectory
from .convex import (
    AffineSet,
    AllSpace,
    Box,
    Intersection,
    PartialMinView,
    Polyhedron,
    SetDescriptor,
    StructuredConvex,
    embed_descriptor,
    inf_project,
    partial_min_quadratic,
)
from .trees import AdaptedProcess, Schedule, ScenarioTree, build_tree, check_adapted, cond_expect

INF = math.inf


class ControlError(ValueError):
    pass


def _zero_mean(samples, tol=1e-10):
    vals = np.stack([np.atleast_1d(np.asarray(v, dtype=float)) for v, _ in samples])
    w = np.array([float(p) for _, p in samples])
    return np.max(np.abs(w @ vals)) <= tol


@dataclass(frozen=True)
class LCProblem:
    """Linear-convex control problem with mixed constraints.

    ``stage_costs[t]`` is a finite convex quadratic over (x, u) for
    t in [tau, T-1]; ``mixed[t]`` an optional polyhedral descriptor over
    (x, u) encoding f_t(x, u) <= 0; ``control_sets[t]`` and
    ``state_sets[t]`` constrain u_t and x_t.  The initial state set must be
    bounded.  ``noise[t]`` lists (value, prob) samples of w_t with zero
    mean; ``gamma`` is the initial-information variable w_{tau-1}.
    """

    n: int
    m: int
    A: np.ndarray
    B: np.ndarray
    horizon: tuple[int, int]
    stage_costs: dict
    terminal: StructuredConvex
    noise: dict
    xi: np.ndarray
    gamma: tuple = ((0.0, 1.0),)
    control_sets: dict = field(default_factory=dict)
    state_sets: dict = field(default_factory=dict)
    mixed: dict = field(default_factory=dict)

    def __post_init__(self):
        tau, T = self.horizon
        if T <= tau:
            raise ControlError("horizon must contain at least one stage")
        A = np.asarray(self.A, dtype=float).reshape(self.n, self.n)
        B = np.asarray(self.B, dtype=float).reshape(self.n, self.m)
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float)).reshape(self.n)
        for arr in (A, B, xi):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "xi", xi)
        for t in range(tau, T):
            if t not in self.stage_costs:
                raise ControlError(f"missing stage cost at time {t}")
            if self.stage_costs[t].dim != self.n + self.m:
                raise ControlError(f"stage cost at {t} must act on (x, u)")
            if t not in self.noise:
                raise ControlError(f"missing noise samples at time {t}")
            if not _zero_mean(self.noise[t]):
                raise ControlError(f"noise at stage {t} is not zero-mean")
        x0 = self.initial_state_set()
        if not isinstance(x0, Box) or not (np.all(np.isfinite(x0.lower))
                                           and np.all(np.isfinite(x0.upper))):
            raise ControlError("initial state set must be a bounded box")
        if self.terminal.dim != self.n:
            raise ControlError("terminal cost dimension mismatch")

    def initial_state_set(self) -> SetDescriptor:
        return self.state_sets.get(self.horizon[0],
                                   Box(np.full(self.n, -1e6), np.full(self.n, 1e6)))

    def control_set(self, t: int) -> SetDescriptor:
        return self.control_sets.get(t, AllSpace(self.m))

    def state_set(self, t: int) -> SetDescriptor | None:
        if t == self.horizon[0]:
            return self.initial_state_set()
        return self.state_sets.get(t)

    def noise_covariance(self) -> dict:
        """Empirical per-stage covariance of the noise samples."""
        out = {}
        for t, samples in self.noise.items():
            vals = np.stack([np.atleast_1d(np.asarray(v, dtype=float))
                             for v, _ in samples])
            w = np.array([float(p) for _, p in samples])
            out[t] = np.einsum("k,ki,kj->ij", w, vals, vals)
        return out


@dataclass(frozen=True)
class LQProblem:
    """Linear-quadratic specialization: stage cost x'Px + u'Ru, terminal
    x'Qx on the mean, R positive definite, P and Q positive semidefinite,
    no mixed constraints, unconstrained controls."""

    n: int
    m: int
    A: np.ndarray
    B: np.ndarray
    horizon: tuple[int, int]
    P: np.ndarray
    R: np.ndarray
    Q: np.ndarray
    noise: dict
    xi: np.ndarray
    gamma: tuple = ((0.0, 1.0),)
    initial_box: Box | None = None

    def __post_init__(self):
        for name in ("P", "R", "Q"):
            M = np.asarray(getattr(self, name), dtype=float)
            M = M.reshape((self.m, self.m) if name == "R" else (self.n, self.n))
            w = np.linalg.eigvalsh(0.5 * (M + M.T))
            if name == "R":
                if w.min() < 1e-10:
                    raise ControlError(f"R must be positive definite (min eig {w.min():.2e})")
            elif w.min() < -1e-10:
                raise ControlError(f"{name} must be PSD")
            M.setflags(write=False)
            object.__setattr__(self, name, M)
        A = np.asarray(self.A, dtype=float).reshape(self.n, self.n)
        B = np.asarray(self.B, dtype=float).reshape(self.n, self.m)
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float)).reshape(self.n)
        for arr in (A, B, xi):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "xi", xi)
        if self.initial_box is None:
            object.__setattr__(self, "initial_box",
                               Box(np.full(self.n, -1e6), np.full(self.n, 1e6)))

    def as_lc(self) -> LCProblem:
        tau, T = self.horizon
        nm = self.n + self.m
        Qfull = np.zeros((nm, nm))
        Qfull[:self.n, :self.n] = self.P
        Qfull[self.n:, self.n:] = self.R
        ell = StructuredConvex(nm, Qfull, np.zeros(nm), 0.0, AllSpace(nm))
        g = StructuredConvex(self.n, self.Q, np.zeros(self.n), 0.0, AllSpace(self.n))
        return LCProblem(self.n, self.m, self.A, self.B, self.horizon,
                         {t: ell for t in range(tau, T)}, g, self.noise,
                         self.xi, self.gamma,
                         state_sets={tau: self.initial_box})


# ---------------------------------------------------------------------------
# reduction to Bolza form


class ControlHandle:
    """Recovery map from Bolza stage arguments back to minimizing controls."""

    def __init__(self, lc: LCProblem, tree: ScenarioTree, phis: dict):
        self.lc = lc
        self.tree = tree
        self.phis = phis  # (t, cell) -> aggregate over (x, v, u)
        n, m = lc.n, lc.m
        self.elim = list(range(2 * n, 2 * n + m))

    def minimizing_u(self, t: int, atom: int, x, v):
        """Least-norm argmin of the stage aggregate at (x, v); None when
        the stage value is infinite there."""
        c = self.tree.cell_of(t)[atom]
        phi = self.phis[(t, c)]
        kept = np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)),
                               np.atleast_1d(np.asarray(v, dtype=float))])
        val, u, flag = inf_project(phi, self.elim, kept)
        if not math.isfinite(val):
            return None
        return u


def _build_lc_tree(lc: LCProblem) -> ScenarioTree:
    tau, T = lc.horizon
    stages = {tau - 1: list(lc.gamma)}
    for t in range(tau, T):
        stages[t] = list(lc.noise[t])
    return build_tree(stages, first_time=tau)


def lc_to_bolza(lc: LCProblem) -> tuple[BolzaProblem, ControlHandle]:
    """Reduce the control problem to Bolza form by minimizing out u.

    For each stage and cell the aggregate
    ``Phi_t(x, v, u) = cost + dynamics + mixed + control-set + state-set``
    is assembled over (x, v, u) with the cell's realized noise; the Bolza
    stage cost is its partial minimization over u (closed form when the
    control appears only in the dynamics row, a lazy view otherwise).
    """
    tree = _build_lc_tree(lc)
    tau, T = lc.horizon
    n, m = lc.n, lc.m
    dim = 2 * n + m
    x_idx = list(range(n))
    u_idx = list(range(2 * n, 2 * n + m))
    stage_costs = {}
    phis = {}
    for t in range(tau + 1, T + 1):
        fns = []
        for c, cell in enumerate(tree.cells(t)):
            a = cell[0]
            w = tree.noise[t - 1][a]
            ell = lc.stage_costs[t - 1]
            Q = np.zeros((dim, dim))
            Q[np.ix_(x_idx + u_idx, x_idx + u_idx)] = ell.quad
            lin = np.zeros(dim)
            lin[x_idx + u_idx] = ell.lin
            parts = [AffineSet(np.hstack([-(lc.A - np.eye(n)), np.eye(n), -lc.B]), w)]
            if not isinstance(ell.domain, AllSpace):
                parts.append(embed_descriptor(ell.domain, x_idx + u_idx, dim))
            uset = lc.control_set(t - 1)
            if not isinstance(uset, AllSpace):
                parts.append(embed_descriptor(uset, u_idx, dim))
            mixed = lc.mixed.get(t - 1)
            if mixed is not None:
                parts.append(embed_descriptor(mixed, x_idx + u_idx, dim))
            xset = lc.state_set(t - 1)
            if xset is not None and not isinstance(xset, AllSpace):
                parts.append(embed_descriptor(xset, x_idx, dim))
            dom = parts[0] if len(parts) == 1 else Intersection(parts)
            phi = StructuredConvex(dim, Q, lin, ell.const, dom)
            phis[(t, c)] = phi
            L = partial_min_quadratic(phi, u_idx)
            if L is None:
                L = PartialMinView(phi, kept_idx=range(2 * n), elim_idx=u_idx)
                probe, _, flag = inf_project(phi, u_idx, np.zeros(2 * n))
                if flag == "unbounded":
                    raise ControlError(
                        f"stage {t} reduction unbounded below in u (improper)")
            fns.append(L)
        stage_costs[t] = tuple(fns)
    problem = BolzaProblem(tree, n, stage_costs, lc.terminal, lc.xi, tau)
    return problem, ControlHandle(lc, tree, phis)


@dataclass
class ControlRecovery:
    controls: np.ndarray            # (T - tau, n_atoms, m); row t is u_{tau+t}
    measurable: bool
    measurability_spread: float
    lc_cost: float
    bolza_cost_gap: float


def recover_control(handle: ControlHandle, x: AdaptedProcess,
                    bolza_value: float | None = None) -> ControlRecovery:
    """Recover per-node minimizing controls along an optimal trajectory.

    Controls are the least-norm argmins of the stage aggregates; the strict
    information schedule (u_t measurable at time t) is verified and its
    worst spread reported rather than asserted, because the Bolza reduction
    admits controls measurable one step later.  The recovered pair is
    costed through the original control objective.
    """
    lc, tree = handle.lc, handle.tree
    tau, T = lc.horizon
    n, m = lc.n, lc.m
    controls = np.empty((T - tau, tree.n_atoms, m))
    for t in range(tau + 1, T + 1):
        for c, cell in enumerate(tree.cells(t)):
            a = cell[0]
            u = handle.minimizing_u(t, a, x.value(t - 1)[a], x.delta(t)[a])
            if u is None:
                raise ControlError(
                    f"empty argmin at t={t}, atom={tree.atoms[a]!r} "
                    "(stage cost infinite despite finite total)")
            controls[t - 1 - tau, list(cell)] = u
    # strict schedule: u_{t} constant on cells of partitions[t]
    worst = 0.0
    for t in range(tau, T):
        for cell in tree.cells(t):
            blk = controls[t - tau, list(cell)]
            if len(cell) > 1:
                worst = max(worst, float(np.max(blk.max(axis=0) - blk.min(axis=0))))
    cost = 0.0
    for t in range(tau, T):
        ell = lc.stage_costs[t]
        args = np.hstack([x.value(t), controls[t - tau]])
        vals = ell.value_batch(args)
        if np.any(np.isinf(vals)):
            cost = INF
            break
        cost += float(tree.prob @ vals)
    if math.isfinite(cost):
        gval = lc.terminal.value(x.expect(T))
        cost = cost + gval if math.isfinite(gval) else INF
    gap = abs(cost - bolza_value) if (bolza_value is not None
                                      and math.isfinite(cost)) else INF
    return ControlRecovery(controls, worst <= 1e-9, worst, cost, gap)


# ---------------------------------------------------------------------------
# Hamiltonians


def hamiltonian(problem: LCProblem | LQProblem, t: int, atom: int, x, pvec,
                mode: str | None = None) -> float:
    """Stage Hamiltonian at (x, p) for stage t in [tau+1, T].

    LC mode evaluates ``sup { p.Bu - cost(x, u) }`` over the feasible
    controls through the conjugate machinery and adds the drift term
    ``p.((A - I)x + w_{t-1})``; LQ mode uses the closed form
    ``1/4 (B'p)' R^-1 (B'p) - x'Px + p.((A - I)x + w_{t-1})``.  Following
    the concave-convex extension, an infeasible state yields -inf.
    """
    lq = problem if isinstance(problem, LQProblem) else None
    lc = problem.as_lc() if lq is not None else problem
    if mode is None:
        mode = "lq" if lq is not None else "lc"
    tree = _build_lc_tree(lc)
    tau, T = lc.horizon
    if not tau + 1 <= t <= T:
        raise ControlError(f"stage {t} outside [{tau + 1}, {T}]")
    n, m = lc.n, lc.m
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(n)
    pvec = np.atleast_1d(np.asarray(pvec, dtype=float)).reshape(n)
    w = tree.noise[t - 1][atom]
    xset = lc.state_set(t - 1)
    if xset is not None and not xset.contains(x):
        return -INF
    drift = float(pvec @ ((lc.A - np.eye(n)) @ x + w))
    if mode == "lq":
        if lq is None:
            raise ControlError("lq mode requires an LQProblem")
        Bp = lq.B.T @ pvec
        return float(0.25 * Bp @ np.linalg.solve(lq.R, Bp) - x @ lq.P @ x) + drift
    ell = lc.stage_costs[t - 1]
    dim = n + m
    parts = []
    if not isinstance(ell.domain, AllSpace):
        parts.append(ell.domain)
    uset = lc.control_set(t - 1)
    if not isinstance(uset, AllSpace):
        parts.append(embed_descriptor(uset, range(n, dim), dim))
    mixed = lc.mixed.get(t - 1)
    if mixed is not None:
        parts.append(mixed)
    dom = AllSpace(dim) if not parts else (parts[0] if len(parts) == 1
                                           else Intersection(parts))
    F = StructuredConvex(dim, ell.quad, ell.lin, ell.const, dom)
    sec = F.section(range(n), x, range(n, dim))
    if sec is None:
        return -INF
    res = sec.conjugate_value(lc.B.T @ pvec)
    return res.value + drift if math.isfinite(res.value) else INF


# ---------------------------------------------------------------------------
# LQ characteristics: one sparse linear solve


@dataclass
class LQCharacteristics:
    x: AdaptedProcess
    p: AdaptedProcess
    controls: np.ndarray
    value: float
    eta: np.ndarray
    verdict: TrajectoryVerdict
    degenerate: bool
    bolza: BolzaProblem


def lq_solve_characteristics(lq: LQProblem, xi=None, eta=None,
                             config: SolveConfig | None = None) -> LQCharacteristics:
    """Solve the coupled forward/backward LQ system directly.

    All conditions (forward dynamics per cell, backward adjoint per cell
    with conditional expectations as averaging maps, transversality
    ``p_T = -2Q E[x_T]``, measurability, constancy of the conditional start
    mean, and the start mean itself) assemble into one sparse linear system
    over the cell unknowns.  The initial mean must be strictly inside the
    initial state box so the normal-cone term vanishes.
    """
    config = config or SolveConfig()
    lc = lq.as_lc()
    tree = _build_lc_tree(lc)
    tau, T = lq.horizon
    n, m = lq.n, lq.m
    xi = lq.xi if xi is None else np.atleast_1d(np.asarray(xi, dtype=float)).reshape(n)
    x0 = lq.initial_box
    margin = min(float(np.min(xi - x0.lower)), float(np.min(x0.upper - xi)))
    if margin <= config.feastol:
        raise ControlError(
            "initial mean must be strictly inside the initial state set "
            "(boundary normal-cone selection not supported)")

    # unknown layout: x_t per cells(t), then p_t per cells(t+1) (t < T), p_T
    offsets = {}
    off = 0
    for t in range(tau, T + 1):
        offsets[("x", t)] = off
        off += n * len(tree.cells(t))
    for t in range(tau, T):
        offsets[("p", t)] = off
        off += n * len(tree.cells(t + 1))
    offsets[("p", T)] = off
    off += n
    N = off

    def x_slice(t, c):
        o = offsets[("x", t)] + n * c
        return list(range(o, o + n))

    def p_slice(t, c):
        if t == T:
            o = offsets[("p", T)]
        else:
            o = offsets[("p", t)] + n * c
        return list(range(o, o + n))

    def cond_p_coeffs(t):
        """E^t[p_t] per cell of partitions[t]: list of (cell, [(subcell, w)])."""
        cells = tree.cells(t)
        out = []
        if t == T:
            for c, _ in enumerate(cells):
                out.append((c, [(0, 1.0)]))
            return out
        sub_of = tree.cell_of(t + 1)
        for c, cell in enumerate(cells):
            wc = tree.prob[list(cell)].sum()
            subs = sorted({sub_of[a] for a in cell})
            out.append((c, [(c2, float(tree.prob[list(tree.cells(t + 1)[c2])].sum() / wc))
                            for c2 in subs]))
        return out

    rows, cols, vals, rhs = [], [], [], []
    r = 0

    def add(row, idx, coeff):
        for k in range(n):
            rows.append(row + k)
            cols.append(idx[k])
            vals.append(float(coeff[k]) if np.ndim(coeff) == 1 else coeff)

    def add_mat(row, idx, M):
        M = np.asarray(M, dtype=float)
        for k in range(n):
            for j in range(n):
                if M[k, j] != 0.0:
                    rows.append(row + k)
                    cols.append(idx[j])
                    vals.append(M[k, j])

    I_n = np.eye(n)
    Amat, Bmat = lq.A, lq.B
    half_BRB = 0.5 * Bmat @ np.linalg.solve(lq.R, Bmat.T)
    for t in range(tau + 1, T + 1):
        parent = tree.cell_of(t - 1)
        for c, cell in enumerate(tree.cells(t)):
            pc = parent[cell[0]]
            w = tree.noise[t - 1][cell[0]]
            # forward: x_t - x_{t-1} - (A - I) x_{t-1} - 1/2 B R^-1 B' E^t[p_t] = w
            add_mat(r, x_slice(t, c), I_n)
            add_mat(r, x_slice(t - 1, pc), -Amat)
            beta = dict(cond_p_coeffs(t))[c]
            for c2, wgt in beta:
                add_mat(r, p_slice(t, c2), -wgt * half_BRB)
            rhs.extend(w)
            r += n
            # backward: E^t[p_t] - p_{t-1} - 2P x_{t-1} + (A' - I) E^t[p_t] = 0
            for c2, wgt in beta:
                add_mat(r, p_slice(t, c2), wgt * (I_n + Amat.T - I_n))
            add_mat(r, p_slice(t - 1, c), -I_n)
            add_mat(r, x_slice(t - 1, pc), -2.0 * lq.P)
            rhs.extend(np.zeros(n))
            r += n
    # transversality: p_T + 2 Q sum_c mu_c x_T[c] = 0
    wT = tree.cell_prob(T)
    add_mat(r, p_slice(T, 0), I_n)
    for c in range(len(tree.cells(T))):
        add_mat(r, x_slice(T, c), 2.0 * wT[c] * lq.Q)
    rhs.extend(np.zeros(n))
    r += n
    # start mean: sum_c mu_c x_tau[c] = xi
    wS = tree.cell_prob(tau)
    for c in range(len(tree.cells(tau))):
        add_mat(r, x_slice(tau, c), wS[c] * I_n)
    rhs.extend(xi)
    r += n
    # constancy of E^tau[p_tau] across cells(tau)
    cp = cond_p_coeffs(tau)
    if len(cp) > 1:
        ref = cp[0][1]
        for c, coeffs in cp[1:]:
            for c2, wgt in coeffs:
                add_mat(r, p_slice(tau, c2), wgt * I_n)
            for c2, wgt in ref:
                add_mat(r, p_slice(tau, c2), -wgt * I_n)
            rhs.extend(np.zeros(n))
            r += n
    if eta is not None:
        eta_arr = np.atleast_1d(np.asarray(eta, dtype=float)).reshape(n)
        w1 = tree.cell_prob(tau + 1) if tau < T else np.array([1.0])
        for c in range(len(tree.cells(tau + 1)) if tau < T else 1):
            add_mat(r, p_slice(tau, c), w1[c] * I_n)
        rhs.extend(-eta_arr)
        r += n

    M = sp.coo_matrix((vals, (rows, cols)), shape=(r, N)).tocsc()
    b = np.asarray(rhs)
    degenerate = False
    if r == N:
        try:
            sol = spla.splu(M).solve(b)
            if not np.all(np.isfinite(sol)):
                raise RuntimeError
        except Exception:
            sol, *_ = np.linalg.lstsq(M.toarray(), b, rcond=None)
            degenerate = True
    else:
        sol, res, rank, _ = np.linalg.lstsq(M.toarray(), b, rcond=None)
        degenerate = rank < N
    resid = float(np.max(np.abs(M @ sol - b), initial=0.0))
    if resid > 1e-7 * (1.0 + np.max(np.abs(b), initial=0.0) + np.max(np.abs(sol), initial=0.0)):
        raise ControlError(
            f"characteristics system inconsistent (residual {resid:.3e}); "
            "the requested eta may not pair with xi")

    x_stack = np.empty((T - tau + 1, tree.n_atoms, n))
    for t in range(tau, T + 1):
        cell_of = tree.cell_of(t)
        for a in range(tree.n_atoms):
            x_stack[t - tau, a] = sol[x_slice(t, cell_of[a])]
    p_stack = np.empty((T - tau + 1, tree.n_atoms, n))
    for t in range(tau, T):
        cell_of = tree.cell_of(t + 1)
        for a in range(tree.n_atoms):
            p_stack[t - tau, a] = sol[p_slice(t, cell_of[a])]
    p_stack[T - tau] = sol[p_slice(T, 0)]
    x = AdaptedProcess(tree, n, (tau, T), x_stack, Schedule.PRIMAL)
    p = AdaptedProcess(tree, n, (tau, T), p_stack, Schedule.DUAL)

    # controls: u_{t-1} = 1/2 R^-1 B' E^t[p_t], per cell of partitions[t]
    controls = np.empty((T - tau, tree.n_atoms, m))
    for t in range(tau + 1, T + 1):
        Ept = cond_expect(tree, p.value(t), t)
        controls[t - 1 - tau] = 0.5 * np.linalg.solve(lq.R, Bmat.T @ Ept.T).T

    # cost through the control objective
    value = 0.0
    for t in range(tau, T):
        xs, us = x.value(t), controls[t - tau]
        value += float(tree.prob @ (np.einsum("ai,ij,aj->a", xs, lq.P, xs)
                                    + np.einsum("ai,ij,aj->a", us, lq.R, us)))
    mT = x.expect(T)
    value += float(mT @ lq.Q @ mT)

    bolza, _ = lc_to_bolza(lc)
    verdict = check_trajectory(bolza, x, p, tol=1e-6)
    eta_out = -p.expect(tau)
    return LQCharacteristics(x, p, controls, value, eta_out, verdict, degenerate, bolza)


# ---------------------------------------------------------------------------
# assumption diagnostics


@dataclass
class AssumptionCheck:
    name: str
    status: str     # pass | fail | inconclusive | not-applicable
    evidence: dict = field(default_factory=dict)


def check_assumptions(problem, probe_eps: float = 1e-3) -> list[AssumptionCheck]:
    """Diagnostics for the control-set boundedness, coercivity, strict
    feasibility, bounded recourse, and measurability conditions.

    Sufficient-condition heuristics only: each check reports pass, fail, or
    inconclusive with its evidence, never silently assumes.
    """
    checks = []
    if isinstance(problem, LQProblem):
        lc = problem.as_lc()
        lq = problem
    elif isinstance(problem, LCProblem):
        lc, lq = problem, None
    else:
        return _check_assumptions_bolza(problem, probe_eps)
    tau, T = lc.horizon
    n, m = lc.n, lc.m

    # control-set boundedness (with mixed constraints when present)
    statuses = []
    for t in range(tau, T):
        uset = lc.control_set(t)
        mixed = lc.mixed.get(t)
        if isinstance(uset, Box) and np.all(np.isfinite(uset.lower)) \
                and np.all(np.isfinite(uset.upper)):
            statuses.append(("pass", float(np.max(uset.upper - uset.lower))))
        elif mixed is not None:
            bounded = _recession_bounded(mixed, uset, n, m)
            statuses.append(("pass" if bounded else "fail", None))
        else:
            Ru = lc.stage_costs[t].quad[n:, n:]
            coercive = np.linalg.eigvalsh(Ru).min() > 1e-10 if m else True
            statuses.append(("pass (vacuous)" if coercive else "inconclusive", None))
    agg = ("fail" if any(s == "fail" for s, _ in statuses)
           else "inconclusive" if any(s == "inconclusive" for s, _ in statuses)
           else "pass")
    checks.append(AssumptionCheck("control-set boundedness", agg,
                                  {"per_stage": [s for s, _ in statuses]}))

    # coercivity in the control
    Rus = [lc.stage_costs[t].quad[n:, n:] for t in range(tau, T)]
    lam = min((np.linalg.eigvalsh(R).min() for R in Rus), default=0.0)
    Bnorm = float(np.linalg.norm(lc.B, 2))
    if lam > 1e-10:
        checks.append(AssumptionCheck("control coercivity", "pass", {
            "theta": f"{lam:.6g} * s^2 / {max(Bnorm, 1e-300) ** 2:.6g}",
            "c1": float(np.linalg.norm(lc.A - np.eye(n), 2)),
            "c2": 0.0,
        }))
    else:
        R = Rus[int(np.argmin([np.linalg.eigvalsh(R).min() for R in Rus]))]
        w, V = np.linalg.eigh(R)
        checks.append(AssumptionCheck("control coercivity", "fail", {
            "min_eig": float(w.min()),
            "witness_direction": V[:, 0].tolist(),
        }))

    # strict feasibility probe: zero-control trajectory from the clipped mean
    checks.append(_feasibility_probe(lc, probe_eps))

    # bounded recourse probe on sampled states
    checks.append(_recourse_probe(lc))

    checks.append(AssumptionCheck(
        "state-set measurability", "pass",
        {"reason": "finite probability space: every set-valued map is measurable"}))
    return checks


def _recession_bounded(mixed, uset, n, m) -> bool:
    from scipy.optimize import linprog
    rows = [mixed.A[:, n:]] if isinstance(mixed, Polyhedron) else []
    if isinstance(uset, Polyhedron):
        rows.append(uset.A)
    if isinstance(uset, Box):
        _, _, G, _ = uset.rows()
        rows.append(G)
    G = np.vstack(rows) if rows else np.zeros((0, m))
    for i in range(m):
        for sgn in (1.0, -1.0):
            c = np.zeros(m)
            c[i] = -sgn
            res = linprog(c, A_ub=G, b_ub=np.zeros(G.shape[0]),
                          bounds=[(-1, 1)] * m, method="highs")
            if res.success and -res.fun > 1e-9:
                return False
    return True


def _feasibility_probe(lc: LCProblem, eps: float) -> AssumptionCheck:
    tau, T = lc.horizon
    n, m = lc.n, lc.m
    try:
        bolza, handle = lc_to_bolza(lc)
    except ControlError as exc:
        return AssumptionCheck("strict feasibility", "fail", {"reason": str(exc)})
    tree = bolza.tree
    x0set = lc.initial_state_set()
    center = 0.5 * np.clip(lc.xi, x0set.lower, x0set.upper) \
        + 0.25 * (x0set.lower + x0set.upper)
    stack = np.empty((T - tau + 1, tree.n_atoms, n))
    stack[0] = center
    for t in range(tau + 1, T + 1):
        u0 = lc.control_set(t - 1).feasible_point()
        w = tree.noise[t - 1]
        stack[t - tau] = stack[t - tau - 1] @ lc.A.T + u0 @ lc.B.T + w
    ok = True
    margin_ok = True
    for t in range(tau + 1, T + 1):
        for c, cell in enumerate(tree.cells(t)):
            a = cell[0]
            z = np.concatenate([stack[t - tau - 1, a], stack[t - tau, a] - stack[t - tau - 1, a]])
            f = bolza.stage_costs[t][c]
            if not math.isfinite(f.value(z)):
                ok = False
            for i in range(2 * n):
                e = np.zeros(2 * n)
                e[i] = eps
                if not (math.isfinite(f.value(z + e)) and math.isfinite(f.value(z - e))):
                    margin_ok = False
    gdom_ok = math.isfinite(bolza.terminal.value(tree.expect(stack[T - tau])))
    if ok and margin_ok and gdom_ok:
        return AssumptionCheck("strict feasibility", "pass",
                               {"probe": "zero-control trajectory", "eps": eps})
    if ok and gdom_ok:
        return AssumptionCheck("strict feasibility", "inconclusive",
                               {"reason": "feasible probe without an eps margin"})
    return AssumptionCheck("strict feasibility", "inconclusive",
                           {"reason": "zero-control probe leaves the domain"})


def _recourse_probe(lc: LCProblem) -> AssumptionCheck:
    tau, T = lc.horizon
    n, m = lc.n, lc.m
    bolza, handle = lc_to_bolza(lc)
    probe_states = [np.zeros(n), np.full(n, -1.0), np.full(n, 1.0)]
    worst = 0.0
    for t in range(tau + 1, T + 1):
        xset = lc.state_set(t - 1)
        for xs in probe_states:
            if xset is not None and not xset.contains(xs):
                continue
            f = bolza.stage_costs[t][0]
            if isinstance(f, StructuredConvex):
                val, v, _ = inf_project(f, range(n, 2 * n), xs)
            else:
                # minimize the aggregate over (v, u) jointly at this state
                val, vu, _ = inf_project(f.base, range(n, 2 * n + m), xs)
                v = None if vu is None else vu[:n]
            if not math.isfinite(val):
                return AssumptionCheck("bounded recourse", "inconclusive",
                                       {"state": xs.tolist(), "t": t})
            worst = max(worst, float(np.max(np.abs(xs + v))))
    return AssumptionCheck("bounded recourse", "pass", {"rho_prime": worst})
