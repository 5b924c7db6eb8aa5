//! Group sequential designs with delayed responses: error spending,
//! boundary computation, the stop/decide procedure and trial simulation.

pub mod design;
pub mod mvn;
pub mod procedure;
pub mod simulate;
pub mod spending;

pub use design::{solve_boundaries, AnalysisLabel, DesignBoundaries, JointStatisticModel, SolverOptions};
pub use mvn::mvn_rect_prob;
pub use procedure::{analysis_schedule, apply_procedure, run_group_sequential, AnalysisSchedule, StopReason, TrialOutcome};
pub use simulate::{
    estimate_joint_covariance, relative_efficiency, search_n_max, simulate_operating_characteristics, OperatingCharacteristics, Runner, Sequential,
    SimulationConfig, SimulationOptions,
};
pub use spending::{ErrorSpendingSpec, PowerSpending};
