import math

import numpy as np
import pytest

from stochbolza.convex import (
    AffineSet,
    AllSpace,
    Box,
    ConjugateView,
    ConvexityError,
    EvaluationError,
    Intersection,
    PartialMinView,
    Polyhedron,
    StructuredConvex,
    box,
    fy_residual,
    inf_project,
    saddle_subgrad_check,
    singleton,
    solve_qp,
)

INF = math.inf


def sq():  # f(z) = z^2
    return StructuredConvex.quadratic([[1.0]])


def interval(lo=-1.0, hi=1.0):  # indicator of [lo, hi]
    return StructuredConvex.indicator(box(lo, hi))


def grid_conjugate(f, y, lo, hi, step):
    """Brute-force sup_z { y z - f(z) } on a 1-D grid; the independent oracle."""
    zs = np.arange(lo, hi + step, step)
    vals = y * zs - f.value_batch(zs[:, None])
    return float(np.max(vals))


# -- eval_subgrad ------------------------------------------------------------

def test_eval_square():
    res = sq().eval_subgrad([3.0])
    assert res.value == pytest.approx(9.0)
    assert res.subgrad == pytest.approx(6.0)


def test_eval_indicator_interior():
    res = interval().eval_subgrad([0.0])
    assert res.value == 0.0 and res.subgrad == pytest.approx(0.0)
    assert res.active == ()


def test_eval_indicator_outside():
    res = interval().eval_subgrad([2.0])
    assert res.value == INF and res.subgrad is None


def test_eval_active_faces_reported():
    res = interval().eval_subgrad([1.0])
    assert ("box-upper", 0) in res.active


# -- conjugate ---------------------------------------------------------------

def test_conjugate_square():
    assert sq().conjugate_value([2.0]).value == pytest.approx(1.0)


def test_conjugate_box_support_function():
    assert interval().conjugate_value([-3.0]).value == pytest.approx(3.0)


def test_conjugate_halfline_quadratic_vs_grid_oracle():
    f = StructuredConvex(1, [[1.0]], [0.0], 0.0, box(0.0, INF))
    for y in (-5.0, -1.0, 0.0, 2.0, 4.0):
        oracle = grid_conjugate(f, y, 0.0, 100.0, 1e-4)
        assert f.conjugate_value([y]).value == pytest.approx(oracle, abs=1e-7)
    assert f.conjugate_value([-5.0]).value == pytest.approx(0.0)
    assert f.conjugate_value([2.0]).value == pytest.approx(1.0)


def test_conjugate_unbounded_flag():
    f = StructuredConvex(1, [[0.0]], [0.0], 0.0, box(0.0, INF))
    res = f.conjugate_value([1.0])
    assert res.value == INF and res.unbounded


def test_closed_conjugate_quadratic_rank_deficient():
    # f(x, v) = v^2: conjugate is q^2-slot free part p^2/4 plus {first slot 0}
    f = StructuredConvex.quadratic(np.diag([0.0, 1.0]))
    g = f.conjugate()
    assert isinstance(g, StructuredConvex)
    assert g.value([0.0, 2.0]) == pytest.approx(1.0)
    assert g.value([0.5, 2.0]) == INF


def test_closed_conjugate_matches_numeric_on_affine_domain():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(1, 3))
    b = rng.normal(size=1)
    M = rng.normal(size=(3, 3))
    f = StructuredConvex(3, M @ M.T + 0.2 * np.eye(3), rng.normal(size=3), 0.3,
                         AffineSet(A, b))
    g = f.conjugate()
    for _ in range(20):
        y = rng.normal(size=3) * 2.0
        assert g.value(y) == pytest.approx(f.conjugate_value(y).value, abs=1e-8)


def test_biconjugate_returns_original_values():
    rng = np.random.default_rng(9)
    f = StructuredConvex(2, np.diag([1.0, 2.0]), [0.5, -1.0], 0.2,
                         box([-1.0, -2.0], [2.0, 1.0]))
    fstar = f.conjugate()
    assert isinstance(fstar, ConjugateView)
    fss = fstar.conjugate()
    for _ in range(20):
        z = rng.uniform(-1.0, 1.0, size=2)
        assert fss.value(z) == pytest.approx(f.value(z), abs=1e-9)


# -- prox ---------------------------------------------------------------------

def test_prox_quadratic():
    assert sq().prox([3.0], 1.0) == pytest.approx(1.0)
    lam = 0.37
    assert sq().prox([3.0], lam) == pytest.approx(3.0 / (1.0 + 2.0 * lam))


def test_prox_projection():
    assert interval().prox([5.0], 2.0) == pytest.approx(1.0)


def test_prox_zero_function_identity():
    f = StructuredConvex.zero(3)
    z = np.array([1.0, -2.0, 0.5])
    assert np.allclose(f.prox(z, 0.7), z)


def test_prox_affine_domain():
    # prox of delta_{x+y=1} is the projection onto the line
    f = StructuredConvex.indicator(AffineSet([[1.0, 1.0]], [1.0]))
    p = f.prox([0.0, 0.0], 1.0)
    assert np.allclose(p, [0.5, 0.5])


def test_prox_nondiagonal_box_kkt():
    Q = np.array([[1.0, 0.4], [0.4, 1.0]])
    f = StructuredConvex(2, Q, [0.0, 0.0], 0.0, box([-0.1, -0.1], [0.1, 0.1]))
    z = np.array([5.0, -3.0])
    w = f.prox(z, 1.0)
    # KKT at a box minimum: gradient >= 0 on lower faces, <= 0 on upper faces
    g = 2.0 * Q @ w + (w - z)
    assert w[0] == pytest.approx(0.1, abs=1e-9) and g[0] <= 1e-9
    assert w[1] == pytest.approx(-0.1, abs=1e-9) and g[1] >= -1e-9


def test_prox_firmly_nonexpansive():
    rng = np.random.default_rng(21)
    fns = [
        sq(),
        interval(),
        StructuredConvex(2, np.array([[2.0, 0.5], [0.5, 1.0]]), [0.1, -0.2], 0.0,
                         box([-1.0, -INF], [1.0, 2.0])),
        StructuredConvex.indicator(Polyhedron([[1.0, 1.0], [-1.0, 2.0]], [1.0, 2.0])),
    ]
    for f in fns:
        for _ in range(200):
            a = rng.normal(size=f.dim) * 3.0
            b = rng.normal(size=f.dim) * 3.0
            pa, pb = f.prox(a, 0.8), f.prox(b, 0.8)
            assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-10


def test_prox_moreau_identity_for_conjugate_view():
    # f = z^2 has conjugate y^2/4 with a known prox: argmin y^2/4 + (y-v)^2/2l
    f = sq()
    view = ConjugateView(f)
    for v in (-2.0, 0.3, 5.0):
        for lam in (0.5, 1.0, 3.0):
            expected = 2.0 * v / (2.0 + lam)
            assert view.prox([v], lam) == pytest.approx(expected, abs=1e-12)


# -- inf_project ---------------------------------------------------------------

def chain_phi(with_box=False):
    # Phi(x, v, u) = u^2 + delta_{v = x + u} (+ delta_{[-1,1]}(u))
    dom = AffineSet([[-1.0, 1.0, -1.0]], [0.0])
    if with_box:
        dom = Intersection([dom, Box([-INF, -INF, -1.0], [INF, INF, 1.0])])
    return StructuredConvex(3, np.diag([0.0, 0.0, 1.0]), np.zeros(3), 0.0, dom)


def test_inf_project_substitution():
    val, u, flag = inf_project(chain_phi(), [2], [1.0, 3.0])
    assert val == pytest.approx(4.0) and u == pytest.approx(2.0) and flag == ""


def test_inf_project_infeasible_box():
    val, u, _ = inf_project(chain_phi(with_box=True), [2], [0.0, 2.0])
    assert val == INF and u is None


def test_inf_project_unconstrained_minimum():
    phi = StructuredConvex.quadratic(np.diag([0.0, 1.0]))
    val, u, _ = inf_project(phi, [1], [7.0])
    assert val == pytest.approx(0.0) and u == pytest.approx(0.0)


def test_inf_project_unbounded_flagged():
    phi = StructuredConvex(2, np.zeros((2, 2)), [0.0, 1.0], 0.0, AllSpace(2))
    val, u, flag = inf_project(phi, [1], [0.0])
    assert val == -INF and flag == "unbounded"


def test_inf_project_least_norm_tie_break():
    # flat in u: every u minimizes; least-norm picks 0
    phi = StructuredConvex.quadratic(np.diag([1.0, 0.0]))
    val, u, _ = inf_project(phi, [1], [2.0])
    assert val == pytest.approx(4.0) and u == pytest.approx(0.0)


def test_inf_project_midpoint_convexity():
    rng = np.random.default_rng(13)
    phi = chain_phi(with_box=True)
    view = PartialMinView(phi, kept_idx=(0, 1), elim_idx=(2,))
    for _ in range(100):
        a = rng.uniform(-1.5, 1.5, size=2)
        b = rng.uniform(-1.5, 1.5, size=2)
        fa, fb, fm = view.value(a), view.value(b), view.value(0.5 * (a + b))
        if math.isfinite(fa) and math.isfinite(fb):
            assert fm <= 0.5 * fa + 0.5 * fb + 1e-8


# -- fy_residual ----------------------------------------------------------------

def test_fy_residual_gradient_point():
    assert fy_residual(sq(), [1.0], [2.0]) == pytest.approx(0.0, abs=1e-12)


def test_fy_residual_off_gradient():
    assert fy_residual(sq(), [1.0], [0.0]) == pytest.approx(1.0)


def test_fy_residual_normal_cone_point():
    assert fy_residual(interval(), [1.0], [7.0]) == pytest.approx(0.0, abs=1e-12)


def test_fy_residual_requires_finite_value():
    with pytest.raises(EvaluationError):
        fy_residual(interval(), [3.0], [0.0])


# -- saddle check -----------------------------------------------------------------

def test_saddle_check_hand_derivative():
    # h(x, p) = p^2/4 - x^2 at (1, 2); gradients (-2x, p/2) = (-2, 1)
    h_in_p = StructuredConvex(1, [[0.25]], [0.0], -1.0, AllSpace(1))
    h_neg_in_x = StructuredConvex(1, [[1.0]], [0.0], -1.0, AllSpace(1))
    res_p, res_x = saddle_subgrad_check(h_in_p, h_neg_in_x, ([1.0], [2.0]),
                                        ([-2.0], [1.0]))
    assert res_p == pytest.approx(0.0, abs=1e-12)
    assert res_x == pytest.approx(0.0, abs=1e-12)
    res_p, res_x = saddle_subgrad_check(h_in_p, h_neg_in_x, ([1.0], [2.0]),
                                        ([0.0], [0.0]))
    assert res_p == pytest.approx(1.0) and res_x == pytest.approx(1.0)


def test_saddle_check_bilinear_origin():
    zero = StructuredConvex.zero(1)
    res_p, res_x = saddle_subgrad_check(zero, zero, ([0.0], [0.0]), ([0.0], [0.0]))
    assert res_p == pytest.approx(0.0, abs=1e-12)
    assert res_x == pytest.approx(0.0, abs=1e-12)


# -- family-wide properties -------------------------------------------------------

def random_function(rng):
    d = int(rng.integers(1, 4))
    kind = rng.integers(0, 4)
    w = rng.uniform(0.1, 10.0, size=d)
    V = np.linalg.qr(rng.normal(size=(d, d)))[0]
    Q = V @ np.diag(w) @ V.T
    if kind == 0:
        dom = AllSpace(d)
    elif kind == 1:
        Q = np.diag(w)
        center = rng.uniform(-2.0, 2.0, size=d)
        half = rng.uniform(0.5, 5.0, size=d)
        dom = Box(center - half, center + half)
    elif kind == 2:
        center = rng.uniform(-2.0, 2.0, size=d)
        half = rng.uniform(0.5, 5.0, size=d)
        dom = Box(center - half, center + half)
    else:
        A = rng.normal(size=(1, d))
        dom = AffineSet(A, A @ rng.uniform(-1.0, 1.0, size=d))
    return StructuredConvex(d, Q, rng.normal(size=d), rng.uniform(-1.0, 1.0), dom)


def sample_domain_point(f, rng):
    z = f.domain.feasible_point()
    # jiggle inside the domain where possible
    if isinstance(f.domain, Box):
        lo = np.maximum(f.domain.lower, z - 3.0)
        hi = np.minimum(f.domain.upper, z + 3.0)
        return rng.uniform(lo, hi)
    if isinstance(f.domain, AffineSet):
        N = f.domain.nullspace()
        if N.shape[1]:
            return z + N @ rng.normal(size=N.shape[1])
    if isinstance(f.domain, AllSpace):
        return rng.normal(size=f.dim) * 2.0
    return z


def test_biconjugacy_sandwich_over_family():
    # f** <= f always, and z.y - f*(y) at y in subdiff(f)(z) matches f(z);
    # the Fenchel-Young residual at a subgradient bounds |f** - f|.
    rng = np.random.default_rng(42)
    for _ in range(300):
        f = random_function(rng)
        z = sample_domain_point(f, rng)
        res = f.eval_subgrad(z)
        if res.subgrad is None:
            continue
        gap = fy_residual(f, z, res.subgrad)
        assert -1e-9 <= gap <= 1e-7


def test_fy_residual_sign_over_family():
    rng = np.random.default_rng(7)
    for _ in range(1500):
        f = random_function(rng)
        z = sample_domain_point(f, rng)
        if not math.isfinite(f.value(z)):
            continue
        y = rng.normal(size=f.dim) * 3.0
        assert fy_residual(f, z, y) >= -1e-9


def test_subgrad_matches_central_differences_interior():
    rng = np.random.default_rng(17)
    h = 1e-5
    for _ in range(50):
        f = random_function(rng)
        if not isinstance(f.domain, AllSpace):
            continue
        z = rng.normal(size=f.dim)
        g = f.eval_subgrad(z).subgrad
        for i in range(f.dim):
            e = np.zeros(f.dim)
            e[i] = h
            fd = (f.value(z + e) - f.value(z - e)) / (2.0 * h)
            assert fd == pytest.approx(g[i], rel=1e-6, abs=1e-6)


def test_solve_qp_against_projection():
    rng = np.random.default_rng(3)
    for _ in range(50):
        d = int(rng.integers(1, 5))
        z = rng.normal(size=d) * 3.0
        lo, hi = -rng.uniform(0.2, 1.0, size=d), rng.uniform(0.2, 1.0, size=d)
        A_eq, b_eq, G, h = Box(lo, hi).rows()
        x, resid = solve_qp(np.eye(d), z, A_eq, b_eq, G, h)
        assert resid <= 1e-9
        assert np.allclose(x, np.clip(z, lo, hi), atol=1e-9)


def test_structured_convex_rejects_indefinite():
    with pytest.raises(ConvexityError):
        StructuredConvex.quadratic([[-1.0]])


def test_structured_convex_rejects_empty_domain():
    with pytest.raises(ConvexityError):
        StructuredConvex.indicator(AffineSet([[1.0], [1.0]], [0.0, 1.0]))


def test_singleton_descriptor():
    f = StructuredConvex.indicator(singleton([2.0]))
    assert f.value([2.0]) == 0.0
    assert f.value([2.1]) == INF
