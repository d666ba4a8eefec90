"""Hamiltonian trajectories and the method of characteristics.

The stage inclusion is certified through the equivalent Euler-Lagrange
relation: the pair ``(E^t[dp_t], E^t[p_t])`` must be a subgradient of the
stage cost at ``(x_{t-1}, dx_t)``, which the Fenchel-Young residual turns
into a scalar certificate per stage.  Transversality couples the adjoint
endpoint to the terminal cost the same way.  The forward direction reads
value-function subgradients off a verified trajectory; the converse
recovers a trajectory from a certified subgradient pair by solving both
problems and verifying the pairing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bolza import (
    BolzaProblem,
    SolveConfig,
    dual_value_function,
    dualize,
    solve_dual,
    solve_primal,
    value_function,
)
from .convex import PartialMinView, fy_residual
from .oracles import SlopeIntervals, finite_diff_subgradient
from .trees import AdaptedProcess, Schedule, check_adapted, cond_expect

INF = math.inf


class CharacteristicsError(ValueError):
    pass


@dataclass
class HamiltonianTrajectory:
    """Paired state/adjoint processes with their stage and endpoint residuals."""

    x: AdaptedProcess
    p: AdaptedProcess
    per_stage_residuals: dict = field(default_factory=dict)
    transversality_residual: float = INF


@dataclass
class TrajectoryVerdict:
    passed: bool
    adapted_primal_spread: float
    adapted_dual_spread: float
    stage_residuals: dict | None
    transversality_residual: float | None
    reason: str = ""

    def as_dict(self):
        return {
            "passed": self.passed,
            "adapted_primal_spread": self.adapted_primal_spread,
            "adapted_dual_spread": self.adapted_dual_spread,
            "stage_residuals": self.stage_residuals,
            "transversality_residual": self.transversality_residual,
            "reason": self.reason,
        }


def el_residual(problem: BolzaProblem, x: AdaptedProcess, p: AdaptedProcess,
                t: int, feastol: float = 1e-7) -> float:
    """Euler-Lagrange certificate at stage t: the worst Fenchel-Young
    residual of ``(E^t[dp_t], E^t[p_t])`` against the stage cost at
    ``(x_{t-1}, dx_t)``, over the time-t cells.

    The slot against the state receives E^t[dp_t] and the slot against the
    increment receives E^t[p_t].
    """
    tree = problem.tree
    beta = cond_expect(tree, p.value(t), t)
    alpha = beta - cond_expect(tree, p.value(t - 1), t)
    worst = 0.0
    for c, cell in enumerate(tree.cells(t)):
        a = cell[0]
        z = np.concatenate([x.value(t - 1)[a], x.delta(t)[a]])
        L = problem.stage_costs[t][c]
        if not math.isfinite(L.value(z, feastol)):
            raise CharacteristicsError(
                f"stage cost infinite at t={t}, atom={tree.atoms[a]!r}")
        worst = max(worst,
                    fy_residual(L, z, np.concatenate([alpha[a], beta[a]]), feastol))
    return worst


def transversality_residual(problem: BolzaProblem, x: AdaptedProcess,
                            p: AdaptedProcess, feastol: float = 1e-7) -> float:
    """Fenchel-Young residual of -p_T against the terminal cost at E[x_T]."""
    T = problem.tree.last_time
    pT = problem.tree.expect(p.value(T))
    return fy_residual(problem.terminal, x.expect(T), -pT, feastol)


def check_trajectory(problem: BolzaProblem, x: AdaptedProcess, p: AdaptedProcess,
                     tol: float = 1e-6) -> TrajectoryVerdict:
    """Full trajectory verification: schedules, stage inclusions (through
    the Euler-Lagrange equivalence), and transversality.

    When an adaptedness schedule fails, residuals are not computed.
    """
    rep_x = check_adapted(x, Schedule.PRIMAL, tol)
    rep_p = check_adapted(p, Schedule.DUAL, tol)
    if not (rep_x.ok and rep_p.ok):
        return TrajectoryVerdict(False, rep_x.max_spread, rep_p.max_spread,
                                 None, None, reason="adaptedness schedule violated")
    s = x.window[0]
    T = problem.tree.last_time
    feastol = max(1e-9, 0.1 * tol)  # slack consistent with the verify tolerance
    residuals = {}
    try:
        for t in range(s + 1, T + 1):
            residuals[t] = el_residual(problem, x, p, t, feastol)
        trans = transversality_residual(problem, x, p, feastol)
    except (CharacteristicsError, ValueError) as exc:
        return TrajectoryVerdict(False, rep_x.max_spread, rep_p.max_spread,
                                 residuals, None, reason=str(exc))
    ok = all(r <= tol for r in residuals.values()) and trans <= tol
    reason = "" if ok else "residual above tolerance"
    return TrajectoryVerdict(ok, rep_x.max_spread, rep_p.max_spread,
                             residuals, trans, reason)


# ---------------------------------------------------------------------------
# Hamiltonians


def hamiltonian_eval(problem: BolzaProblem, t: int, atom: int, x, pvec) -> float:
    """H_t(x, p) = sup_v { p.v - L_t(x, v) }: the conjugate of the
    increment-section at fixed state.

    Returns -inf when the state section is empty (infeasible x) and +inf
    when the supremum diverges, matching the concave-convex extension.
    """
    n = problem.dim
    L = problem.stage_cost(t, atom)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    sec = L.section(range(n), x, range(n, 2 * n))
    if sec is None:
        return -INF
    return sec.conjugate_value(np.atleast_1d(np.asarray(pvec, dtype=float))).value


def hamiltonian_sections(problem: BolzaProblem, t: int, atom: int, x, pvec):
    """The two convex sections of H_t at (x, p) for saddle-subgradient checks:
    ``p -> H_t(x, p)`` and ``x -> -H_t(x, p)`` as function objects."""
    n = problem.dim
    L = problem.stage_cost(t, atom)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    pvec = np.atleast_1d(np.asarray(pvec, dtype=float))
    sec_v = L.section(range(n), x, range(n, 2 * n))
    if sec_v is None:
        raise CharacteristicsError("empty state section: H = -inf")
    h_in_p = sec_v.conjugate()
    tilt = np.concatenate([np.zeros(n), -pvec])
    h_neg_in_x = PartialMinView(L.add_linear(tilt), kept_idx=range(n),
                                elim_idx=range(n, 2 * n))
    return h_in_p, h_neg_in_x


# ---------------------------------------------------------------------------
# forward direction: subgradient propagation


@dataclass
class PropagationEntry:
    s: int
    state_mean: np.ndarray
    subgrad: np.ndarray
    primal_value: float
    dual_value: float
    fy_gap: float
    slopes: SlopeIntervals
    within_slopes: bool
    certified: bool

    def as_dict(self):
        return {
            "s": self.s,
            "state_mean": self.state_mean.tolist(),
            "subgrad": self.subgrad.tolist(),
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "fy_gap": self.fy_gap,
            "slope_left": self.slopes.left.tolist(),
            "slope_right": self.slopes.right.tolist(),
            "within_slopes": self.within_slopes,
            "certified": self.certified,
        }


def propagate_subgradient(problem: BolzaProblem, x: AdaptedProcess,
                          p: AdaptedProcess, config: SolveConfig | None = None,
                          tol: float = 1e-6, fd_step: float = 1e-4,
                          slope_slack: float = 1e-6) -> list[PropagationEntry]:
    """Read subgradients of the value function off a verified trajectory.

    For every start time s in the window, the pair
    ``(E[x_s], -E[p_s])`` is certified two independent ways: the
    Fenchel-Young gap ``|V_s + W_s - pairing|`` through fresh solves, and
    per-coordinate finite-difference slope intervals of V_s.  A failed
    certificate marks the entry (an implementation bug, not a theorem
    failure) rather than raising.
    """
    config = config or SolveConfig()
    verdict = check_trajectory(problem, x, p, tol)
    if not verdict.passed:
        raise CharacteristicsError(f"trajectory fails verification: {verdict.reason}")
    dual = dualize(problem)
    entries = []
    for s in range(x.window[0], problem.tree.last_time):
        xi_s = x.expect(s)
        eta_s = -p.expect(s)
        V = value_function(problem, xi_s, start=s, config=config)
        W = dual_value_function(dual, eta_s, start=s, config=config)
        gap = abs(V + W - float(xi_s @ eta_s)) if (math.isfinite(V) and math.isfinite(W)) else INF
        slopes = finite_diff_subgradient(
            lambda y: value_function(problem, y, start=s, config=config),
            xi_s, fd_step)
        within = slopes.contains(eta_s, slope_slack)
        entries.append(PropagationEntry(
            s, xi_s, eta_s, V, W, gap, slopes, within,
            certified=gap <= config.certification_tol and within))
    return entries


# ---------------------------------------------------------------------------
# converse direction: trajectory recovery


def recover_trajectory(problem: BolzaProblem, xi, eta,
                       config: SolveConfig | None = None,
                       tol: float = 1e-6) -> HamiltonianTrajectory:
    """Recover a verified trajectory from a certified subgradient pair.

    Solves the primal at xi and the dual at eta, demands the Fenchel-Young
    gap certify ``eta`` as a subgradient, pairs the solutions, and verifies
    the pairing; inconsistencies raise with the failing detail.
    """
    config = config or SolveConfig()
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    prep = solve_primal(problem.restarted(problem.start, xi), config)
    drep = solve_dual(dualize(problem), config, eta=eta)
    V, W = prep.optimal_value, drep.optimal_value
    if not (math.isfinite(V) and math.isfinite(W)):
        raise CharacteristicsError(
            f"recovery requires finite values, got V={V}, W={W}")
    gap = abs(V + W - float(xi @ eta))
    if gap > config.certification_tol:
        raise CharacteristicsError(
            f"eta not certified as a subgradient: duality gap {gap:.3e}")
    x, p = prep.trajectory, drep.trajectory
    verdict = check_trajectory(problem, x, p, tol)
    if not verdict.passed:
        raise CharacteristicsError(
            f"inconsistency: solved pair fails verification ({verdict.reason}; "
            f"residuals {verdict.stage_residuals}, "
            f"transversality {verdict.transversality_residual})")
    endpoint_gap = max(float(np.max(np.abs(x.expect(problem.start) - xi))),
                       float(np.max(np.abs(p.expect(problem.start) + eta))))
    if endpoint_gap > 1e3 * config.feasibility_tol + 1e-8:
        raise CharacteristicsError(f"endpoint means off by {endpoint_gap:.3e}")
    return HamiltonianTrajectory(x, p, verdict.stage_residuals,
                                 verdict.transversality_residual)
