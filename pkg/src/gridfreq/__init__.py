"""Multi-area system-frequency-response models and two-layer frequency regulation.

Builds linear swing/turbine-governor models of interconnected power regions,
optimizes inverter-based primary (droop + virtual-synchronous-machine)
controllers, reduces the grid by balanced truncation, and closes the loop with
an augmented Kalman-Bucy disturbance observer feeding a constrained MPC
secondary layer.
"""

__version__ = "0.1.0"

from .numerics import (
    QpProblem,
    QpResult,
    expm,
    integrate_lti,
    solve_filter_are,
    solve_lyapunov,
    solve_qp,
    zoh_discretize,
)
from .sfr import (
    GasTgParams,
    GeneratorUnit,
    GridModel,
    RegionSpec,
    StateSpaceModel,
    SteamTgParams,
    TieLine,
    asm_aggregate,
    assemble_grid,
    build_region_model,
    equivalent_damping,
    equivalent_inertia,
    simulate_open_loop,
)
from .primary import (
    PrimaryBounds,
    PrimaryParams,
    PrimaryWeights,
    closed_loop_region,
    optimize_primary,
    primary_cost,
    primary_tf,
)
from .reduction import (
    BalancedRealization,
    ReducedGridModel,
    assemble_reduced_grid,
    balance,
    discretize_reduced,
    hsv_ratio,
    reduce_grid,
    truncate,
)
from .observer import AugmentedFilter, ObserverState, design_filter, sample_for_mpc, step_filter
from .mpc import (
    DiscretePrimaryFilter,
    MpcConfig,
    MpcSolution,
    SecondaryController,
    build_qp,
    continuous_primary_bank,
    solve_horizon,
    tustin_primary,
)
from .trace import Metrics, SimulationTrace
from .harness import (
    Disturbance,
    Scenario,
    compute_metrics,
    default_mpc_config,
    emit_report,
    run_closed_loop,
)
from .ksa import load_ksa_dataset

__all__ = [name for name in dir() if not name.startswith("_")]
