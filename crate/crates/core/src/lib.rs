//! First-order estimation of `Σ⁻¹a` (FONE), distributed refinement of an
//! initial estimator, DC-SGD, and the supporting data, ERM and tuning
//! machinery used to compare them.

pub mod data;
pub mod dataset;
pub mod distributed;
pub mod erm;
pub mod error;
pub mod fone;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sgd;
pub mod tuning;

pub use data::{generate_problem, shard_dataset, Covariance, DesignSpec, GeneratedProblem};
pub use dataset::{Dataset, Sample};
pub use distributed::{
    run_dcsgd, run_distributed_fone, Cluster, CommLedger, DistributedFoneConfig, Execution,
};
pub use erm::{initial_estimator, solve_erm, ErmResult};
pub use error::{FoneError, Result};
pub use fone::{run_fone, FoneConfig, FoneOutput};
pub use model::{LossModel, ModelFamily, PopulationOracle};
pub use sgd::{run_minibatch_sgd, SgdConfig, SgdSchedule};
pub use tuning::{CandidateGrid, TuningOutcome};
