//! Experiment orchestration: specs, the replication loop, sweeps and
//! reports.

mod report;
mod run;
mod spec;
mod sweep;

pub use report::{
    aggregate_rows, AggregateRow, ExperimentReport, ReplicationRow, RowStatus, TuningRecord,
    CSV_HEADER,
};
pub use run::{
    random_sphere_point, replication_problem, run_experiment, run_experiment_with, RunOptions,
};
pub use spec::{Estimator, ExperimentSpec, InferenceSettings, ResolvedSpec};
pub use sweep::{
    default_inference_spec, default_random_init_spec, inference_spec, random_init_spec, run_sweep,
    write_sweep_csv, SweepParameter, SweepPoint, SweepSpec,
};
