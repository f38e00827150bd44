"""Memory-augmented model predictive control: a triple-mode hybrid controller
switching among a fail-safe MPC, an imitation-trained neural policy, and an
LQR, plus the benchmark plants and timing harness used to evaluate it."""

__version__ = "0.1.0"

from .sets import Box, NormBall, erode  # noqa: F401
from .plants import (  # noqa: F401
    Plant,
    builtin_plant,
    check_constraints,
    eval_dynamics,
    linearize_continuous,
    linearize_discrete,
    step,
)
from .qp import QProblem, QPSolution, QPWorkspace, kkt_residual, solve_qp  # noqa: F401
from .mpc import (  # noqa: F401
    MPCController,
    MPCResult,
    MPCSpec,
    condense,
    feasible_set_member,
    make_mpc_spec,
    mpc_control,
)
from .lqr import (  # noqa: F401
    LQRSolution,
    build_lqr,
    dare_residual,
    lqr_gain,
    solve_dare,
    validate_roa_ball,
)
from .policy_nn import (  # noqa: F401
    ImitationDataset,
    MLPPolicy,
    TrainConfig,
    load_policy,
    mlp_forward,
    mlp_init,
    sample_dataset,
    save_policy,
    train_imitation,
)
from .hybrid import (  # noqa: F401
    HybridContext,
    MAMPCConfig,
    ModeDecision,
    dispatch,
    dispatch_aa,
    dispatch_parallel,
    dispatch_standard,
    dispatch_wp,
    failfree_check,
    robustify,
    verify_forward,
)
from .bench import (  # noqa: F401
    ImplicitMPC,
    LookupPolicy,
    MAMPCController,
    SimReport,
    TimingStats,
    build_lookup_baseline,
    simulate,
    time_controller,
    uptime_division,
)
