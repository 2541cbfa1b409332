//! Adam optimisation of the classifier with plateau learning-rate decay,
//! best-validation checkpointing and repeated-run statistics.

mod adam;
mod multi;
mod pool;
mod schedule;
mod train;

pub use adam::{adam_step, OptimizerState, BETA1, BETA2, EPSILON};
pub use multi::{multi_run, summarize, MetricTriple, RunResult, RunStats};
pub use pool::run_pool;
pub use schedule::{replay_schedule, PlateauScheduler, TrainSchedule};
pub use train::{train, BestSoFar, EpochRecord, TrainOutcome};
