import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochbolza.trees import (
    AdaptedProcess,
    Schedule,
    ScenarioTree,
    TreeError,
    build_tree,
    check_adapted,
    cond_expect,
    expect_pair,
    project_adapted,
)


def two_stage_tree():
    return build_tree({0: [(1.0, 0.5), (-1.0, 0.5)], 1: [(1.0, 0.5), (-1.0, 0.5)]})


def test_build_tree_product_combinatorics():
    tree = two_stage_tree()
    assert tree.n_atoms == 4
    assert np.allclose(tree.prob, 0.25)
    assert [len(tree.cells(t)) for t in (0, 1, 2)] == [1, 2, 4]


def test_build_tree_degenerate():
    tree = build_tree({3: [(0.0, 1.0)]})
    assert tree.n_atoms == 1
    assert tree.times == (3, 4)
    assert all(len(tree.cells(t)) == 1 for t in (3, 4))


def test_build_tree_rejects_unnormalized_weights():
    with pytest.raises(TreeError, match="sum to"):
        build_tree({0: [(1.0, 0.3), (-1.0, 0.6)]})


def test_build_tree_rejects_empty_stage():
    with pytest.raises(TreeError):
        build_tree({0: []})


def test_build_tree_refinement_chain_always_valid():
    rng = np.random.default_rng(7)
    for _ in range(20):
        stages = {}
        t0 = int(rng.integers(-2, 3))
        for k in range(int(rng.integers(1, 4))):
            m = int(rng.integers(1, 4))
            w = rng.dirichlet(np.ones(m))
            w[-1] = 1.0 - w[:-1].sum()
            stages[t0 + k] = [(float(rng.normal()), float(wi)) for wi in w]
        tree = build_tree(stages)  # constructor re-runs all chain invariants
        assert abs(tree.prob.sum() - 1.0) < 1e-12


def test_build_tree_first_time_initial_information():
    # stage -1 is initial information: visible already at time 0
    tree = build_tree({-1: [(1.0, 0.5), (-1.0, 0.5)], 0: [(1.0, 0.5), (-1.0, 0.5)]},
                      first_time=0)
    assert tree.times == (0, 1)
    assert [len(tree.cells(t)) for t in (0, 1)] == [2, 4]


def test_cond_expect_plain_mean():
    tree = ScenarioTree(atoms=("a", "b"), prob=np.array([0.5, 0.5]),
                        times=(0, 1), partitions={0: ((0, 1),), 1: ((0,), (1,))})
    out = cond_expect(tree, np.array([1.0, 3.0]), 0)
    assert np.allclose(out, [2.0, 2.0])


def test_cond_expect_identity_on_finest_partition():
    tree = two_stage_tree()
    vals = np.arange(4.0)
    assert np.allclose(cond_expect(tree, vals, 2), vals)


def test_cond_expect_weighted_mean():
    tree = ScenarioTree(atoms=(0, 1), prob=np.array([0.25, 0.75]),
                        times=(0, 1), partitions={0: ((0, 1),), 1: ((0,), (1,))})
    out = cond_expect(tree, np.array([0.0, 4.0]), 0)
    assert np.allclose(out, [3.0, 3.0])


def test_expect_pair_arithmetic():
    tree = ScenarioTree(atoms=(0, 1), prob=np.array([0.5, 0.5]),
                        times=(0, 0), partitions={0: ((0,), (1,))})
    y = np.array([[[1.0], [1.0]]])
    x = np.array([[[2.0], [4.0]]])
    assert expect_pair(tree, y, x) == pytest.approx(3.0)
    assert expect_pair(tree, 0.0 * y, x) == 0.0


def test_expect_pair_two_times_single_atom():
    tree = build_tree({0: [(0.0, 1.0)], 1: [(0.0, 1.0)]})
    ones = np.ones((2, 1, 1))
    assert expect_pair(tree, ones, ones) == pytest.approx(2.0)


def test_expect_pair_bilinear_symmetric():
    tree = two_stage_tree()
    rng = np.random.default_rng(0)
    y, x, z = (rng.normal(size=(3, 4, 2)) for _ in range(3))
    assert expect_pair(tree, y, x) == pytest.approx(expect_pair(tree, x, y))
    assert expect_pair(tree, y + 2.0 * z, x) == pytest.approx(
        expect_pair(tree, y, x) + 2.0 * expect_pair(tree, z, x))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_cond_expect_projection_and_tower(seed):
    tree = two_stage_tree()
    vals = np.random.default_rng(seed).normal(size=(4, 2))
    for t in (0, 1, 2):
        once = cond_expect(tree, vals, t)
        assert np.allclose(cond_expect(tree, once, t), once, atol=1e-12)
        assert np.allclose(tree.expect(once), tree.expect(vals), atol=1e-12)


def test_cond_expect_self_adjoint_in_pairing():
    # for y measurable at t the pairing sees only the conditional mean of x
    tree = two_stage_tree()
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 1))
    y = cond_expect(tree, rng.normal(size=(4, 1)), 1)
    lhs = expect_pair(tree, y[None], x[None])
    rhs = expect_pair(tree, y[None], cond_expect(tree, x, 1)[None])
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_cond_expect_time_out_of_range():
    tree = two_stage_tree()
    with pytest.raises(TreeError):
        cond_expect(tree, np.zeros(4), 5)


def test_check_adapted_constant_process_both_schedules():
    tree = two_stage_tree()
    vals = np.ones((3, 4, 1))
    for schedule in Schedule:
        proc = AdaptedProcess(tree, 1, (0, 2), vals, schedule)
        rep = check_adapted(proc)
        assert rep.ok and rep.max_spread == 0.0


def test_check_adapted_detects_primal_violation():
    tree = two_stage_tree()
    vals = np.ones((3, 4, 1))
    vals[1, 0, 0] = 5.0  # varies inside a time-1 cell
    rep = check_adapted(AdaptedProcess(tree, 1, (0, 2), vals), Schedule.PRIMAL)
    assert not rep.ok and rep.max_spread > 0
    assert rep.worst[1] == 1


def test_check_adapted_dual_terminal_constancy():
    tree = two_stage_tree()
    vals = np.ones((3, 4, 1))
    vals[2, 3, 0] = 2.0  # p_T differs across atoms
    rep = check_adapted(AdaptedProcess(tree, 1, (0, 2), vals), Schedule.DUAL)
    assert not rep.ok
    assert rep.worst[0] == "terminal"


def test_check_adapted_dual_lookahead():
    tree = two_stage_tree()
    vals = np.zeros((3, 4, 1))
    # p_0 must be constant on time-1 cells {0,1} and {2,3}; violate the first
    vals[0] = np.array([[1.0], [4.0], [0.0], [0.0]])
    rep = check_adapted(AdaptedProcess(tree, 1, (0, 2), vals), Schedule.DUAL)
    assert not rep.ok and rep.worst[0] == "cell" and rep.worst[1] == 1

    # one step of look-ahead is allowed: p_0 varying ACROSS time-1 cells is
    # fine, and p_1 may vary freely (time-2 cells are singletons)
    vals[0] = np.array([[1.0], [1.0], [3.0], [3.0]])
    vals[1] = np.array([[1.0], [2.0], [3.0], [4.0]])
    vals[2] = 0.0
    rep = check_adapted(AdaptedProcess(tree, 1, (0, 2), vals), Schedule.DUAL)
    assert rep.ok


def test_project_adapted_is_idempotent_projection():
    tree = two_stage_tree()
    rng = np.random.default_rng(11)
    stack = rng.normal(size=(3, 4, 2))
    proj = project_adapted(tree, stack, 0)
    assert np.allclose(project_adapted(tree, proj, 0), proj, atol=1e-13)
    rep = check_adapted(AdaptedProcess(tree, 2, (0, 2), proj), Schedule.PRIMAL)
    assert rep.ok


def test_adapted_process_accessors():
    tree = two_stage_tree()
    vals = np.arange(12.0).reshape(3, 4, 1)
    proc = AdaptedProcess(tree, 1, (0, 2), vals)
    assert np.allclose(proc.delta(1), 4.0)
    assert proc.expect(0) == pytest.approx(1.5)
    with pytest.raises(TreeError):
        proc.value(3)


def test_tree_rejects_bad_probability_mass():
    with pytest.raises(TreeError):
        ScenarioTree(atoms=(0, 1), prob=np.array([0.5, 0.4]), times=(0, 0),
                     partitions={0: ((0,), (1,))})
    with pytest.raises(TreeError):
        ScenarioTree(atoms=(0, 1), prob=np.array([1.2, -0.2]), times=(0, 0),
                     partitions={0: ((0,), (1,))})


def test_tree_rejects_nonrefining_chain():
    with pytest.raises(TreeError, match="refine"):
        ScenarioTree(atoms=(0, 1, 2), prob=np.array([0.25, 0.25, 0.5]),
                     times=(0, 1),
                     partitions={0: ((0, 1), (2,)), 1: ((0,), (1, 2))})
