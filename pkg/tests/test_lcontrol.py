
import math

import numpy as np
import pytest

from stochbolza.bolza import solve_primal
from stochbolza.convex import (
    AllSpace,
    Box,
    PartialMinView,
    StructuredConvex,
    box,
)
from stochbolza.lcontrol import (
    ControlError,
    LCProblem,
    LQProblem,
    check_assumptions,
    hamiltonian,
    lc_to_bolza,
    lq_solve_characteristics,
    recover_control,
)
from stochbolza.trees import cond_expect

from tests.conftest import random_lq

INF = math.inf


def one_step_lq(xi=2.0, noise=((0.0, 1.0),), P=0.0):
    return LQProblem(1, 1, [[1.0]], [[1.0]], (0, 1), [[P]], [[1.0]], [[1.0]],
                     {0: list(noise)}, [xi], initial_box=Box([-10.0], [10.0]))


def simple_lc(control_box=None, terminal=None, xi=0.0):
    ell = StructuredConvex(2, np.diag([0.0, 1.0]), np.zeros(2), 0.0, AllSpace(2))
    g = terminal or StructuredConvex.quadratic([[1.0]])
    control_sets = {} if control_box is None else {0: control_box}
    return LCProblem(1, 1, [[1.0]], [[1.0]], (0, 1), {0: ell}, g,
                     {0: [(0.0, 1.0)]}, [xi],
                     control_sets=control_sets,
                     state_sets={0: Box([-10.0], [10.0])})


# -- lc_to_bolza -----------------------------------------------------------------

def test_reduction_substitutes_dynamics():
    prob, handle = lc_to_bolza(simple_lc())
    L = prob.stage_costs[1][0]
    assert isinstance(L, StructuredConvex)
    for x, v in ((0.0, 1.0), (2.0, -1.5), (-1.0, 0.3)):
        assert L.value([x, v]) == pytest.approx(v ** 2, abs=1e-12)
    assert handle.minimizing_u(1, 0, [2.0], [-1.0]) == pytest.approx(-1.0)


def test_reduction_control_box_infeasible_probe():
    prob, _ = lc_to_bolza(simple_lc(control_box=box(-1.0, 1.0)))
    L = prob.stage_costs[1][0]
    assert isinstance(L, PartialMinView)
    assert L.value([0.0, 2.0]) == INF  # needs u = 2 outside the box
    assert L.value([0.0, 0.5]) == pytest.approx(0.25)


def test_reduction_with_drift_and_realized_noise():
    # A=2, B=1, stage noise realization w=1: u = v - (A-1)x - w
    ell = StructuredConvex(2, np.diag([0.0, 1.0]), np.zeros(2), 0.0, AllSpace(2))
    lc = LCProblem(1, 1, [[2.0]], [[1.0]], (0, 1), {0: ell},
                   StructuredConvex.quadratic([[1.0]]),
                   {0: [(1.0, 0.5), (-1.0, 0.5)]}, [0.0],
                   state_sets={0: Box([-10.0], [10.0])})
    prob, handle = lc_to_bolza(lc)
    tree = prob.tree
    # the w=+1 atom lands in its own time-1 cell
    plus_atom = int(np.argmax(tree.noise[0][:, 0]))
    c = tree.cell_of(1)[plus_atom]
    L = prob.stage_costs[1][c]
    assert L.value([1.0, 3.0]) == pytest.approx(1.0)       # u = 3 - 1 - 1 = 1
    assert handle.minimizing_u(1, plus_atom, [1.0], [3.0]) == pytest.approx(1.0)


# -- recover_control -------------------------------------------------------------

def test_recover_control_one_step_lq():
    lq = one_step_lq()
    prob, handle = lc_to_bolza(lq.as_lc())
    rep = solve_primal(prob)
    rec = recover_control(handle, rep.trajectory, rep.optimal_value)
    assert rec.controls.ravel() == pytest.approx([-1.0], abs=1e-8)
    assert rec.measurable and rec.bolza_cost_gap <= 1e-8


def test_recover_control_clamped_on_box_face():
    # optimal unconstrained u would be -2; the box clamps the increment
    g = StructuredConvex.quadratic([[1.0]], [4.0], 4.0)  # (y + 2)^2
    lc = simple_lc(control_box=box(-1.0, 1.0), terminal=g, xi=0.0)
    prob, handle = lc_to_bolza(lc)
    rep = solve_primal(prob)
    rec = recover_control(handle, rep.trajectory, rep.optimal_value)
    assert rec.controls.ravel() == pytest.approx([-1.0], abs=1e-6)
    assert rep.optimal_value == pytest.approx(2.0, abs=1e-6)
    assert rec.bolza_cost_gap <= 1e-6


def test_recover_control_reports_lookahead_honestly():
    # with a state cost and stage-0 noise the Bolza-optimal control reacts to
    # w_0; the strict schedule check must report the spread, not assert
    lq = LQProblem(1, 1, [[1.0]], [[1.0]], (0, 2), [[1.0]], [[1.0]], [[1.0]],
                   {0: [(1.0, 0.5), (-1.0, 0.5)], 1: [(0.0, 1.0)]}, [2.0],
                   initial_box=Box([-10.0], [10.0]))
    prob, handle = lc_to_bolza(lq.as_lc())
    rep = solve_primal(prob)
    rec = recover_control(handle, rep.trajectory, rep.optimal_value)
    assert not rec.measurable and rec.measurability_spread > 0.1
    assert rec.bolza_cost_gap <= 1e-7  # the pair still reproduces the value


# -- hamiltonian ------------------------------------------------------------------

def test_hamiltonian_lq_closed_form():
    # H(x, p) = p^2/4 - x^2 for R=B=A=1, P=1, w=0
    lq = one_step_lq(P=1.0)
    assert hamiltonian(lq, 1, 0, [1.0], [2.0]) == pytest.approx(0.0)


def test_hamiltonian_lc_box_matches_grid():
    lc = simple_lc(control_box=box(-1.0, 1.0))
    # sup over |u|<=1 of {4u - u^2} = 3 (grid oracle cross-check)
    us = np.arange(-1.0, 1.0 + 1e-4, 1e-4)
    oracle = float(np.max(4.0 * us - us ** 2))
    val = hamiltonian(lc, 1, 0, [0.5], [4.0], mode="lc")
    assert val == pytest.approx(oracle, abs=1e-7)
    assert val == pytest.approx(3.0, abs=1e-7)


def test_hamiltonian_zero_multiplier():
    lq = one_step_lq(P=0.0)
    assert hamiltonian(lq, 1, 0, [3.0], [0.0]) == pytest.approx(0.0)
    assert hamiltonian(lq, 1, 0, [3.0], [0.0], mode="lc") == pytest.approx(0.0)


def test_hamiltonian_infeasible_state_concave_convention():
    lq = one_step_lq()
    assert hamiltonian(lq, 1, 0, [20.0], [1.0]) == -INF
    assert hamiltonian(lq, 1, 0, [20.0], [1.0], mode="lc") == -INF


def test_hamiltonian_modes_agree_on_random_lq_points():
    rng = np.random.default_rng(30)
    for _ in range(5):
        lq = random_lq(rng)
        tree_atoms = 1
        for _ in range(40):
            t = int(rng.integers(1, lq.horizon[1] + 1))
            x = rng.uniform(-3.0, 3.0, size=lq.n)
            p = rng.uniform(-3.0, 3.0, size=lq.n)
            a = hamiltonian(lq, t, 0, x, p, mode="lq")
            b = hamiltonian(lq, t, 0, x, p, mode="lc")
            assert b == pytest.approx(a, abs=1e-7)


# -- lq_solve_characteristics -------------------------------------------------------

def test_lq_characteristics_one_step_analytic():
    res = lq_solve_characteristics(one_step_lq(2.0))
    assert np.allclose(res.x.values.ravel(), [2.0, 1.0], atol=1e-8)
    assert np.allclose(res.p.values, -2.0, atol=1e-8)
    assert res.controls.ravel() == pytest.approx([-1.0], abs=1e-8)
    assert res.value == pytest.approx(2.0, abs=1e-8)
    assert res.verdict.passed and not res.degenerate


def test_lq_characteristics_noise_cancels_in_mean():
    res = lq_solve_characteristics(one_step_lq(2.0, noise=((1.0, 0.5), (-1.0, 0.5))))
    assert np.allclose(res.controls, -1.0, atol=1e-6)
    assert res.value == pytest.approx(2.0, abs=1e-6)
    assert sorted(res.x.value(1).ravel()) == pytest.approx([0.0, 2.0], abs=1e-8)


def test_lq_characteristics_zero_by_symmetry():
    res = lq_solve_characteristics(one_step_lq(0.0))
    assert np.allclose(res.controls, 0.0, atol=1e-12)
    assert np.allclose(res.p.values, 0.0, atol=1e-12)
    assert res.value == pytest.approx(0.0, abs=1e-14)


def test_lq_characteristics_rejects_boundary_mean():
    lq = one_step_lq(10.0)
    with pytest.raises(ControlError, match="strictly inside"):
        lq_solve_characteristics(lq)


def test_lq_characteristics_degenerate_flat_adjoint():
    # P = Q = 0 leaves p underdetermined only in scale-free directions;
    # the least-norm solve flags nothing worse than a zero adjoint
    lq = LQProblem(1, 1, [[1.0]], [[1.0]], (0, 1), [[0.0]], [[1.0]], [[0.0]],
                   {0: [(0.0, 1.0)]}, [1.0], initial_box=Box([-10.0], [10.0]))
    res = lq_solve_characteristics(lq)
    assert np.allclose(res.p.values, 0.0, atol=1e-10)
    assert res.value == pytest.approx(0.0, abs=1e-12)


def test_lq_characteristics_consistency_random():
    rng = np.random.default_rng(77)
    for k in range(6):
        lq = random_lq(rng, with_gamma=(k % 3 == 0))
        res = lq_solve_characteristics(lq)
        assert res.verdict.passed, (k, res.verdict.as_dict())
        assert max(res.verdict.stage_residuals.values()) <= 1e-8
        # transversality: p_T = -2 Q E[x_T]
        pT = res.p.value(lq.horizon[1])[0]
        want = -2.0 * lq.Q @ res.x.expect(lq.horizon[1])
        assert np.max(np.abs(pT - want)) <= 1e-8
        # value agreement with the splitting solver
        rep = solve_primal(res.bolza)
        assert rep.optimal_value == pytest.approx(res.value, abs=1e-6)
        # control formula through the recovered conditional expectations
        tree = res.x.tree
        for t in range(1, lq.horizon[1] + 1):
            Ept = cond_expect(tree, res.p.value(t), t)
            want_u = 0.5 * np.linalg.solve(lq.R, lq.B.T @ Ept.T).T
            assert np.max(np.abs(res.controls[t - 1] - want_u)) <= 1e-8


# -- Lemma 4.1 equivalence against a direct (x, u) oracle -----------------------------

def lc_control_grid_value(lq: LQProblem, lo=-4.0, hi=4.0, step=1e-3):
    """Direct minimization over control grids with states substituted by the
    dynamics; controls live at the reduction's information level (per cell of
    the next partition).  Fully independent of the Bolza machinery."""
    from stochbolza.oracles import refine_grid_min
    from stochbolza.trees import build_tree as _bt
    assert lq.n == 1 and lq.m == 1
    stages = {-1: list(lq.gamma)}
    stages.update({t: list(lq.noise[t]) for t in range(*lq.horizon)})
    tree = _bt(stages, first_time=lq.horizon[0])
    tau, T = lq.horizon
    slots = [(t, c) for t in range(tau + 1, T + 1)
             for c in range(len(tree.cells(t)))]
    slot_of = {sl: i for i, sl in enumerate(slots)}

    def fun_batch(U):
        m = U.shape[0]
        x = np.broadcast_to(lq.xi[0], (m, tree.n_atoms)).copy()
        cost = np.zeros(m)
        for t in range(tau + 1, T + 1):
            cells = tree.cell_of(t)
            cols = np.array([slot_of[(t, cells[a])] for a in range(tree.n_atoms)])
            uvec = U[:, cols]
            cost += (lq.P[0, 0] * x ** 2 + lq.R[0, 0] * uvec ** 2) @ tree.prob
            x = lq.A[0, 0] * x + lq.B[0, 0] * uvec + tree.noise[t - 1][:, 0]
        cost += lq.Q[0, 0] * (x @ tree.prob) ** 2
        return cost

    d = len(slots)
    val, _, _, _ = refine_grid_min(fun_batch, np.full(d, lo), np.full(d, hi),
                                   step, budget=4 * 10 ** 6)
    return val


def test_lemma_41_equivalence_one_step():
    lq = one_step_lq(2.0, noise=((1.0, 0.5), (-1.0, 0.5)))
    direct = lc_control_grid_value(lq)
    prob, _ = lc_to_bolza(lq.as_lc())
    rep = solve_primal(prob)
    assert rep.optimal_value == pytest.approx(direct, abs=1e-4)


def test_lemma_41_equivalence_two_step_deterministic():
    lq = LQProblem(1, 1, [[1.0]], [[1.0]], (0, 2), [[1.0]], [[1.0]], [[1.0]],
                   {0: [(0.0, 1.0)], 1: [(0.0, 1.0)]}, [1.0],
                   initial_box=Box([-10.0], [10.0]))
    direct = lc_control_grid_value(lq, lo=-2.0, hi=2.0)
    prob, handle = lc_to_bolza(lq.as_lc())
    rep = solve_primal(prob)
    assert rep.optimal_value == pytest.approx(direct, abs=1e-4)
    # deterministic tree: the strict and relaxed control classes coincide
    rec = recover_control(handle, rep.trajectory, rep.optimal_value)
    assert rec.measurable


# -- check_assumptions -----------------------------------------------------------------

def test_assumptions_pass_on_lq():
    lq = one_step_lq()
    by_name = {c.name: c for c in check_assumptions(lq)}
    assert by_name["control-set boundedness"].status == "pass"
    assert by_name["control coercivity"].status == "pass"
    assert by_name["state-set measurability"].status == "pass"
    assert by_name["strict feasibility"].status == "pass"
    assert by_name["bounded recourse"].status == "pass"


def test_assumptions_fail_on_singular_control_cost():
    ell = StructuredConvex(2, np.diag([1.0, 0.0]), np.zeros(2), 0.0, AllSpace(2))
    lc = LCProblem(1, 1, [[1.0]], [[1.0]], (0, 1), {0: ell},
                   StructuredConvex.quadratic([[1.0]]), {0: [(0.0, 1.0)]}, [0.0],
                   state_sets={0: Box([-10.0], [10.0])})
    by_name = {c.name: c for c in check_assumptions(lc)}
    assert by_name["control coercivity"].status == "fail"
    assert "witness_direction" in by_name["control coercivity"].evidence


def test_assumptions_inconclusive_on_linear_control_cost():
    ell = StructuredConvex(2, np.zeros((2, 2)), np.array([0.0, 1.0]), 0.0,
                           AllSpace(2))
    lc = LCProblem(1, 1, [[1.0]], [[1.0]], (0, 1), {0: ell},
                   StructuredConvex.quadratic([[1.0]]), {0: [(0.0, 1.0)]}, [0.0],
                   state_sets={0: Box([-10.0], [10.0])})
    by_name = {c.name: c for c in check_assumptions(lc)}
    assert by_name["control-set boundedness"].status == "inconclusive"
    assert by_name["control coercivity"].status == "fail"


def test_lcproblem_rejects_biased_noise():
    ell = StructuredConvex.quadratic(np.diag([0.0, 1.0]))
    with pytest.raises(ControlError, match="zero-mean"):
        LCProblem(1, 1, [[1.0]], [[1.0]], (0, 1), {0: ell},
                  StructuredConvex.quadratic([[1.0]]),
                  {0: [(1.0, 0.6), (-1.0, 0.4)]}, [0.0],
                  state_sets={0: Box([-10.0], [10.0])})


def test_lqproblem_rejects_singular_R():
    with pytest.raises(ControlError, match="positive definite"):
        LQProblem(1, 1, [[1.0]], [[1.0]], (0, 1), [[0.0]], [[0.0]], [[1.0]],
                  {0: [(0.0, 1.0)]}, [0.0])


def test_noise_covariance_reported():
    lq = one_step_lq(2.0, noise=((1.0, 0.5), (-1.0, 0.5)))
    W = lq.as_lc().noise_covariance()
    assert W[0][0, 0] == pytest.approx(1.0)
