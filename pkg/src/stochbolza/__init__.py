"""Stochastic convex Bolza problems on finite scenario trees.

Primal/dual problem construction and solves, Fenchel duality reports,
Hamiltonian trajectory verification (discrete-time method of
characteristics), linear-convex/linear-quadratic reductions, and
independent brute-force oracles.
"""

__version__ = "0.1.0"

from .trees import (  # noqa: F401
    AdaptedProcess,
    Schedule,
    ScenarioTree,
    build_tree,
    check_adapted,
    cond_expect,
    expect_pair,
)
from .convex import (  # noqa: F401
    AffineSet,
    AllSpace,
    Box,
    ConjugateView,
    Intersection,
    PartialMinView,
    Polyhedron,
    StructuredConvex,
    fy_residual,
    inf_project,
    prox,
    saddle_subgrad_check,
)
from .splitting import SolveConfig  # noqa: F401
from .bolza import (  # noqa: F401
    BolzaProblem,
    DualBolzaProblem,
    SolveReport,
    duality_report,
    dualize,
    solve_dual,
    solve_primal,
    tilted_primal,
    value_and_subgradient,
    value_function,
)
from .characteristics import (  # noqa: F401
    HamiltonianTrajectory,
    check_trajectory,
    el_residual,
    hamiltonian_eval,
    propagate_subgradient,
    recover_trajectory,
)
from .lcontrol import (  # noqa: F401
    LCProblem,
    LQProblem,
    check_assumptions,
    hamiltonian,
    lc_to_bolza,
    lq_solve_characteristics,
    recover_control,
)
from .oracles import (  # noqa: F401
    GridSpec,
    finite_diff_subgradient,
    fuzz_weak_duality,
    grid_oracle,
)
