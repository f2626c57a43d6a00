//! Optimizers, annealing schedules and training loops.

mod adam;
mod lbfgs;
mod schedule;
mod train;

pub use adam::{adam_step, AdamState};
pub use lbfgs::{lbfgs_minimize, LbfgsResult, LbfgsState, LbfgsStatus, ARMIJO_C, BACKTRACK_SHRINK, FLAT_RELATIVE, MAX_BACKTRACKS, WOLFE_SIGMA};
pub use schedule::{schedule_weights, AnnealingSchedule};
pub use train::{
    amortized_train, em_train, eval_external_dictionary, initial_preimage, joint_train, EpochHook, train, DictionaryOptimizer,
    EvalOptions, EvalOutcome, TraceRow, TrainAlgorithm, TrainConfig, TrainDiagnostics, TrainOutcome, TRACE_HEADER,
};
