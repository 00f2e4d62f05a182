"""Adaptive optimal control of input-state-output port-Hamiltonian systems.

The controller projects the dynamics through the gradient of an extended
control-Lyapunov function ``V(x, w) = H(x) + w^T Phi(x)``, solves the resulting
scalar optimal control problem in closed form, and adapts ``w`` online by
gradient descent on a sum of squared quadric residuals.
"""

from .system import (
    DisturbanceImpulse,
    PhsSystem,
    ValidationReport,
    evaluate_dynamics,
    linear_example,
    nonlinear_example,
    passive_output,
    validate_structure,
)
from .clf import (
    BasisSet,
    Certificate,
    ExtendedClf,
    certify_linear_kernel,
    certify_rank_R,
    certify_zsd_sampled,
    clf_gradient,
    clf_value,
    monomial_basis,
    named_basis,
    psd_kernel_membership,
)
from .moc import (
    ClfViolationError,
    MocScalars,
    control,
    moc_scalars,
    upsilon,
    vdot_closed_form,
)
from .adaptation import (
    DiagnosticReport,
    QuadricCoefficients,
    ShiftSet,
    convexity_diagnostic,
    jw_gradient,
    jw_hessian,
    jw_value,
    quadric_at,
    quadric_value,
    weight_rhs,
)
from .oracles import (
    FdReport,
    RiccatiSolution,
    fd_check,
    hjbe_residual,
    solve_riccati,
)
from .simulator import (
    ComparisonReport,
    Scenario,
    SimulationError,
    Trajectory,
    compare,
    simulate,
    simulate_reference,
)
from .scenarios import (
    ScenarioError,
    ScenarioSpec,
    builtin_scenario,
    certify,
    load_scenario,
    run_experiment,
)

__version__ = "0.1.0"
