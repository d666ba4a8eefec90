import math

import numpy as np
import pytest

from stochbolza.bolza import solve_primal, value_function
from stochbolza.convex import AffineSet, StructuredConvex, singleton
from stochbolza.oracles import (
    GridSpec,
    OracleError,
    finite_diff_subgradient,
    fuzz_weak_duality,
    grid_oracle,
    random_instance,
)

from tests.test_bolza import one_atom_tree, quad_instance, stochastic_instance

INF = math.inf


def test_grid_oracle_one_step_quadratic():
    res = grid_oracle(quad_instance(2.0), GridSpec(-10.0, 10.0, 1e-3))
    assert res.value == pytest.approx(2.0, abs=1e-3)
    assert res.accuracy <= 1e-2
    assert res.trajectory.value(1)[0] == pytest.approx(1.0, abs=2e-3)


def test_grid_oracle_zero_objective_exact():
    from stochbolza.bolza import BolzaProblem
    prob = BolzaProblem(one_atom_tree(), 1, {1: (StructuredConvex.zero(2),)},
                        StructuredConvex.zero(1), [0.0], 0)
    res = grid_oracle(prob, GridSpec(-2.0, 2.0, 1e-2))
    assert res.value == 0.0


def test_grid_oracle_infeasible_instance():
    from stochbolza.bolza import BolzaProblem
    L = StructuredConvex.indicator(AffineSet([[0.0, 1.0]], [0.0]))
    g = StructuredConvex.indicator(singleton([0.0]))
    prob = BolzaProblem(one_atom_tree(), 1, {1: (L,)}, g, [1.0], 0)
    res = grid_oracle(prob, GridSpec(-2.0, 2.0, 1e-2))
    assert res.value == INF and res.argmin is None


def test_grid_oracle_budget_error():
    prob = stochastic_instance()
    with pytest.raises(OracleError, match="budget"):
        grid_oracle(prob, GridSpec(-10.0, 10.0, 1e-3, budget=1000))


def test_grid_oracle_agrees_with_solver():
    for prob, spec in ((quad_instance(1.3), GridSpec(-8.0, 8.0, 1e-3)),
                       (stochastic_instance(), GridSpec(-6.0, 6.0, 1e-3))):
        res = grid_oracle(prob, spec)
        rep = solve_primal(prob)
        assert abs(rep.optimal_value - res.value) <= res.accuracy + 1e-6


def test_finite_diff_quadratic_slopes():
    sl = finite_diff_subgradient(
        lambda xi: value_function(quad_instance(0.0), xi), [2.0])
    assert sl.left[0] == pytest.approx(1.99995, abs=1e-6)
    assert sl.right[0] == pytest.approx(2.00005, abs=1e-6)
    assert sl.contains([2.0])


def test_finite_diff_flat_function():
    sl = finite_diff_subgradient(lambda xi: 0.0, [1.0, -1.0])
    assert np.allclose(sl.left, 0.0) and np.allclose(sl.right, 0.0)


def test_finite_diff_kink():
    sl = finite_diff_subgradient(lambda xi: abs(xi[0]), [0.0])
    assert sl.left[0] == pytest.approx(-1.0)
    assert sl.right[0] == pytest.approx(1.0)
    for g in (-1.0, -0.3, 0.0, 1.0):
        assert sl.contains([g])


def test_finite_diff_one_sided_fallback_flagged():
    def v(xi):
        return xi[0] ** 2 if xi[0] <= 1.0 else INF
    sl = finite_diff_subgradient(v, [1.0])
    assert ("right-probe-infeasible", 0) in sl.flags
    assert sl.right[0] == INF


def test_fuzz_no_violations():
    rep = fuzz_weak_duality(42, 100)
    assert rep.checked == 100 and rep.violations == []
    assert rep.min_slack >= -1e-7


def test_fuzz_empty_report():
    rep = fuzz_weak_duality(7, 0)
    assert rep.checked == 0 and rep.violations == [] and rep.slacks == []


def test_fuzz_deterministic_reports():
    a = fuzz_weak_duality(12345, 60).as_dict()
    b = fuzz_weak_duality(12345, 60).as_dict()
    assert a == b
    import json
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_certified_subgradients_inside_slope_intervals():
    from stochbolza.bolza import value_and_subgradient
    rng = np.random.default_rng(5)
    for _ in range(5):
        inst = random_instance(rng, max_atoms=4, max_horizon=2, max_dim=1)
        prob = inst.problem
        cert = value_and_subgradient(prob)
        if cert.eta is None:
            continue
        sl = finite_diff_subgradient(
            lambda y: value_function(prob, y), prob.initial_mean)
        assert sl.contains(cert.eta, slack=1e-5)
