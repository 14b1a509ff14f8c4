"""Three-phase phase assignment and charging scheduling for adaptive EV
charging networks: offline and online (receding-horizon) solvers, a
brute-force oracle, baseline strategies, and evaluation metrics."""

from .model import (
    AggregatePower,
    CapExceededError,
    ChargingSchedule,
    FeasibilityReport,
    Fleet,
    HorizonClipWarning,
    NetworkSpec,
    PHASES,
    PhaseSelection,
    PhasorPair,
    SelectionConstraint,
    SessionProfile,
    build_m_tilde,
    build_phasors,
    build_presence,
    build_selection_matrix,
    build_w,
    check_feasibility,
    line_magnitudes,
    objective_value,
    quick_charge_weights,
)
from .conic import (
    ConicProgram,
    SolveResult,
    SolveStatus,
    ToleranceConfig,
    build_relaxed_node,
    build_socp_fixed_phase,
    solve_conic,
)
from .pxa import (
    BnBConfig,
    BnBResult,
    BruteForceResult,
    ContractViolation,
    PxaSolution,
    SAConfig,
    SAResult,
    bfsocp,
    branch_and_bound,
    pxa,
    reconstruct_schedule_zero_laxity,
    simulated_annealing,
)
from .mpc import EpisodeResult, MpcConfig, SimState, mpc_step, reveal, run_episode
from .baselines import STRATEGIES, MetricsReport, baseline_phases, evaluate

__version__ = "0.1.0"
