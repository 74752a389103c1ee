from solvers.baselines import (
    CgConfig,
    GdConfig,
    Objective,
    PivotedCholesky,
    SgdConfig,
    cg_solve,
    gd_solve,
    max_stable_step_size,
    pivoted_cholesky,
    sgd_solve,
)
from solvers.dispatch import DirectConfig, SolverConfig, solve
from solvers.estimators import (
    SparseGradient,
    clip_by_norm,
    rb_rc_estimate,
    rc_batch,
    rf_estimate,
    sgd_mixed_estimate,
)
from solvers.objective import (
    RegressionProblem,
    direct_solve,
    dual_grad,
    dual_loss,
    gram_eigenvalues,
    k2_norm_sq,
    k_norm_sq,
    primal_grad,
    primal_loss,
)
from solvers.sdd import (
    Averaging,
    Estimator,
    Probes,
    Sampling,
    SddConfig,
    SolveReport,
    Termination,
    averaging_update,
    sdd_solve,
)

__all__ = [
    "Averaging",
    "CgConfig",
    "DirectConfig",
    "Estimator",
    "GdConfig",
    "Objective",
    "PivotedCholesky",
    "Probes",
    "RegressionProblem",
    "Sampling",
    "SddConfig",
    "SgdConfig",
    "SolveReport",
    "SolverConfig",
    "SparseGradient",
    "Termination",
    "averaging_update",
    "cg_solve",
    "clip_by_norm",
    "direct_solve",
    "dual_grad",
    "dual_loss",
    "gd_solve",
    "gram_eigenvalues",
    "k2_norm_sq",
    "k_norm_sq",
    "max_stable_step_size",
    "pivoted_cholesky",
    "primal_grad",
    "primal_loss",
    "rb_rc_estimate",
    "rc_batch",
    "rf_estimate",
    "sdd_solve",
    "sgd_mixed_estimate",
    "sgd_solve",
    "solve",
]
