//! Fixtures shared by the benchmarks in `benches/`.

use fone_core::data::{even_sizes, generate_problem, shard_dataset, DesignSpec};
use fone_core::{Cluster, GeneratedProblem, ModelFamily};

/// Logistic or quantile problem with identity design; quantile uses `τ = 0.25`.
pub fn problem(family: ModelFamily, n: usize, p: usize, seed: u64) -> GeneratedProblem {
    let tau = (family == ModelFamily::Quantile).then_some(0.25);
    let design = DesignSpec::identity(p).expect("valid design");
    generate_problem(family, &design, n, tau, seed).expect("problem generation")
}

/// The problem's data split evenly over `machines` shards.
pub fn cluster(problem: &GeneratedProblem, machines: usize) -> Cluster {
    let sizes = even_sizes(problem.dataset.len(), machines).expect("valid split");
    shard_dataset(&problem.dataset, &sizes, problem.seed ^ 1).expect("sharding")
}

/// A start point near the truth, as a cheap stand-in for the initial estimator.
pub fn perturbed_truth(problem: &GeneratedProblem) -> Vec<f64> {
    problem
        .theta_star
        .iter()
        .enumerate()
        .map(|(j, t)| t + if j % 2 == 0 { 0.1 } else { -0.1 })
        .collect()
}
