//! Activating-while-pruning: the movement-ordered negative-weight selection,
//! weight rewinding, and the cycle orchestration around a baseline method.

mod run;
mod select;

pub use run::{
    baseline_ladder, run_method_x, run_with_ap, sparsity_trajectory, CyclePlan, EpochRecord, Measurement,
    NoObserver, Phase, RunContext, RunEvent, RunLog, RunObserver, RunState, Trajectory,
};
pub use select::{
    ap_select, ap_select_count, weight_rewind, Ablation, ApConfig, ApVariant, MovementScore, QuotaBase, RetrainLr,
    RewindTarget,
};
