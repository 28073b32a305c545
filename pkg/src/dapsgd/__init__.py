"""Decoupled asynchronous proximal stochastic gradient descent.

A numpy library implementing three composite-objective recursions (P-SGD,
coupled async TAP, decoupled async DAP), the coupled proximal operators they
exercise (L1, group lasso, fused lasso, nuclear norm), bounded-delay
execution (deterministic simulation and real threads), and an experiment
harness with CSV/JSON output.
"""

from .linalg import SpectralBounds, SvdResult, spectral_bounds, svd
from .objective import (
    Dataset,
    SyntheticConfig,
    estimate_variance_bound,
    generate_synthetic,
    load_dataset_csv,
    objective_value,
    save_dataset_csv,
    synthetic_truth,
)
from .proximal import (
    L1,
    FusedLasso,
    GroupLasso,
    NuclearNorm,
    ProxSolveConfig,
    prox_call_count,
    prox_objective,
    prox_oracle,
    subgradient_bound,
)
from .runtime import (
    DAP,
    PSGD,
    TAP,
    EventLog,
    IterateTrace,
    TimingBreakdown,
    UniformBounded,
    WorkerQueue,
    measured_max_delay,
    replay,
    run_threads,
    simulate,
)
from .solvers import (
    ConstantTheorem2,
    DiminishingTheorem1,
    Reciprocal,
    check_admissible,
    dap_master_step,
    dap_worker_innovation,
    default_constant,
    default_diminishing,
    gradient_mapping_norm,
    psgd_step,
    running_average,
    solve_reference,
    tap_master_step,
)

__version__ = "0.1.0"
