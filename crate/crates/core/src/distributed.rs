//! In-process simulation of a cluster of `L` machines: one-shot averaging of
//! local SGD runs, global subgradient aggregation, and multi-round
//! distributed FONE that refines on the largest shard only.
//!
//! A [`CommLedger`] records every `p`-vector and scalar that would cross the
//! network. Per-shard access counters record how many sample rows each
//! machine touched, which lets tests check that the inner FONE loop never
//! leaves shard 1.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{check_dim, FoneError, Result};
use crate::fone::{run_fone, FoneConfig};
use crate::model::LossModel;
use crate::rng::{derive_seed, stream};
use crate::sgd::{run_minibatch_sgd, SgdConfig};

/// Communication counters. Monotone within a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommLedger {
    pub rounds: u64,
    /// Transmissions of `p`-dimensional vectors.
    pub vectors_sent: u64,
    pub scalars_sent: u64,
}

/// Whether shard-local work within a round runs on the rayon pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

/// Shards ordered largest first, plus accounting.
#[derive(Debug, Clone)]
pub struct Cluster {
    shards: Vec<Dataset>,
    pub ledger: CommLedger,
    rows_touched: Vec<u64>,
    execution: Execution,
}

impl Cluster {
    /// Wraps shards as given; callers normally go through
    /// [`crate::data::shard_dataset`], which enforces largest-first order.
    pub fn new(shards: Vec<Dataset>) -> Self {
        let l = shards.len();
        Cluster {
            shards,
            ledger: CommLedger::default(),
            rows_touched: vec![0; l],
            execution: Execution::Sequential,
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn set_execution(&mut self, execution: Execution) {
        self.execution = execution;
    }

    pub fn machines(&self) -> usize {
        self.shards.len()
    }

    pub fn total_samples(&self) -> usize {
        self.shards.iter().map(Dataset::len).sum()
    }

    pub fn dim(&self) -> usize {
        self.shards.first().map_or(0, Dataset::dim)
    }

    pub fn shard(&self, k: usize) -> &Dataset {
        &self.shards[k]
    }

    pub fn shards(&self) -> &[Dataset] {
        &self.shards
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.shards.iter().map(Dataset::len).collect()
    }

    /// Rows evaluated on each shard so far.
    pub fn rows_touched(&self) -> &[u64] {
        &self.rows_touched
    }

    pub fn reset_accounting(&mut self) {
        self.ledger = CommLedger::default();
        self.rows_touched.iter_mut().for_each(|c| *c = 0);
    }

    fn map_shards<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &Dataset) -> T + Sync + Send,
    {
        match self.execution {
            Execution::Sequential => self
                .shards
                .iter()
                .enumerate()
                .map(|(k, d)| f(k, d))
                .collect(),
            Execution::Parallel => self
                .shards
                .par_iter()
                .enumerate()
                .map(|(k, d)| f(k, d))
                .collect(),
        }
    }

    /// `(1/N) Σ_i g(θ, ξ_i)` over all shards, without touching the ledger.
    /// Each shard contributes a `(sum, count)` pair.
    pub fn global_mean_subgradient(&self, model: &LossModel, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        let parts = self.map_shards(|_, d| {
            let mut s = vec![0.0; d.dim()];
            model.accumulate_subgradient(theta, d, &mut s);
            (s, d.len())
        });
        let mut total = vec![0.0; theta.len()];
        let mut count = 0usize;
        for (s, c) in &parts {
            for (t, v) in total.iter_mut().zip(s) {
                *t += v;
            }
            count += c;
        }
        let inv = 1.0 / count as f64;
        total.iter_mut().for_each(|v| *v *= inv);
        Ok(total)
    }
}

/// Local SGD estimates plus their average.
#[derive(Debug, Clone, PartialEq)]
pub struct DcSgdOutput {
    pub local: Vec<Vec<f64>>,
    pub average: Vec<f64>,
}

/// Seed of machine `k`'s local SGD pass.
pub fn dcsgd_shard_seed(seed: u64, k: usize) -> u64 {
    derive_seed(derive_seed(seed, stream::DCSGD), k as u64)
}

/// Divide-and-conquer SGD: broadcast `θ̂₀`, run one SGD pass per shard, and
/// average the `L` local estimates with equal weights.
pub fn run_dcsgd_detailed(
    cluster: &mut Cluster,
    model: &LossModel,
    theta0: &[f64],
    config: &SgdConfig,
    seed: u64,
) -> Result<DcSgdOutput> {
    check_dim(cluster.dim(), theta0.len())?;
    if let Some(small) = cluster.shards.iter().find(|d| d.len() < config.m) {
        return Err(FoneError::BatchTooLarge {
            m: config.m,
            n: small.len(),
        });
    }
    let l = cluster.machines();
    let results = cluster
        .map_shards(|k, d| run_minibatch_sgd(model, d, theta0, config, dcsgd_shard_seed(seed, k)));
    let local = results.into_iter().collect::<Result<Vec<_>>>()?;
    for (k, d) in cluster.shards.iter().enumerate() {
        cluster.rows_touched[k] += ((d.len() / config.m) * config.m) as u64;
    }
    cluster.ledger.rounds += 1;
    // θ̂₀ out to every machine, one local estimate back from each
    cluster.ledger.vectors_sent += 2 * l as u64;
    Ok(DcSgdOutput {
        average: mean_of(&local),
        local,
    })
}

pub fn run_dcsgd(
    cluster: &mut Cluster,
    model: &LossModel,
    theta0: &[f64],
    config: &SgdConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    Ok(run_dcsgd_detailed(cluster, model, theta0, config, seed)?.average)
}

/// Coordinate-wise arithmetic mean, summed in order.
pub fn mean_of(vectors: &[Vec<f64>]) -> Vec<f64> {
    let p = vectors.first().map_or(0, Vec::len);
    let mut out = vec![0.0; p];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let inv = vectors.len() as f64;
    out.iter_mut().for_each(|o| *o /= inv);
    out
}

/// Global mean subgradient; every machine sends its `(sum, count)` pair.
pub fn aggregate_subgradient(
    cluster: &mut Cluster,
    model: &LossModel,
    theta: &[f64],
) -> Result<Vec<f64>> {
    let a = cluster.global_mean_subgradient(model, theta)?;
    let l = cluster.machines() as u64;
    for (k, d) in cluster.shards.iter().enumerate() {
        cluster.rows_touched[k] += d.len() as u64;
    }
    cluster.ledger.vectors_sent += l;
    cluster.ledger.scalars_sent += l;
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributedFoneConfig {
    /// Inner-loop settings; `fone.seed` is the master seed of the rounds.
    pub fone: FoneConfig,
    /// Number of rounds `K`.
    pub rounds: usize,
}

/// Seed of the inner FONE loop in round `j` (1-based).
pub fn round_seed(seed: u64, round: usize) -> u64 {
    derive_seed(derive_seed(seed, stream::FONE), round as u64)
}

/// One round of distributed FONE given the already aggregated `a`: the inner
/// loop on shard 1 started at `theta`. Returns `z_T`.
pub(crate) fn fone_round(
    shard: &Dataset,
    model: &LossModel,
    theta: &[f64],
    a: &[f64],
    config: &FoneConfig,
    round: usize,
) -> Result<(Vec<f64>, usize)> {
    let inner = FoneConfig {
        seed: round_seed(config.seed, round),
        ..*config
    };
    let out = run_fone(model, shard, theta, a, &inner).map_err(|e| FoneError::Round {
        round,
        source: Box::new(e),
    })?;
    Ok((out.z_t, out.evaluations))
}

/// `K` rounds of: aggregate the global mean subgradient at `θ̂_{j-1}`, then
/// run the FONE inner loop on shard 1 from `θ̂_{j-1}` and take `θ̂_j = z_T`.
pub fn run_distributed_fone(
    cluster: &mut Cluster,
    model: &LossModel,
    theta0: &[f64],
    config: &DistributedFoneConfig,
) -> Result<Vec<f64>> {
    check_dim(cluster.dim(), theta0.len())?;
    let first = cluster.shard(0).len();
    if config.fone.m > first {
        return Err(FoneError::BatchTooLarge {
            m: config.fone.m,
            n: first,
        });
    }
    let mut theta = theta0.to_vec();
    for j in 1..=config.rounds {
        let a = aggregate_subgradient(cluster, model, &theta)?;
        // a goes out to machine 1
        cluster.ledger.vectors_sent += 1;
        let (next, evaluations) = fone_round(cluster.shard(0), model, &theta, &a, &config.fone, j)?;
        // two subgradient evaluations per sampled row
        cluster.rows_touched[0] += 2 * evaluations as u64;
        theta = next;
        // θ̂_j broadcast for the next aggregation
        cluster.ledger.vectors_sent += 1;
        cluster.ledger.rounds += 1;
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{even_sizes, generate_problem, shard_dataset, DesignSpec};
    use crate::model::{averaged_subgradient, ModelFamily};
    use crate::sgd::SgdSchedule;

    fn logistic_cluster(n: usize, sizes: &[usize]) -> (Cluster, Vec<f64>) {
        let prob = generate_problem(
            ModelFamily::Logistic,
            &DesignSpec::identity(4).unwrap(),
            n,
            None,
            3,
        )
        .unwrap();
        (
            shard_dataset(&prob.dataset, sizes, 5).unwrap(),
            prob.theta_star,
        )
    }

    #[test]
    fn single_machine_dcsgd_matches_local_sgd() {
        let (mut c, _) = logistic_cluster(400, &[400]);
        let cfg = SgdConfig {
            m: 16,
            schedule: SgdSchedule::new(2.0, 1.0).unwrap(),
        };
        let theta0 = vec![0.1; 4];
        let dc = run_dcsgd(&mut c, &LossModel::Logistic, &theta0, &cfg, 7).unwrap();
        let local = run_minibatch_sgd(
            &LossModel::Logistic,
            c.shard(0),
            &theta0,
            &cfg,
            dcsgd_shard_seed(7, 0),
        )
        .unwrap();
        assert_eq!(dc, local);
        assert_eq!(c.ledger.vectors_sent, 2);
        assert_eq!(c.ledger.rounds, 1);
    }

    #[test]
    fn identical_shards_average_to_one_local_estimate() {
        let (c, _) = logistic_cluster(100, &[100]);
        let same = c.shard(0).clone();
        let mut c3 = Cluster::new(vec![same.clone(), same.clone(), same]);
        let cfg = SgdConfig {
            m: 10,
            schedule: SgdSchedule::new(1.0, 1.0).unwrap(),
        };
        let theta0 = vec![0.0; 4];
        // identical data but different derived seeds still average exactly
        let out = run_dcsgd_detailed(&mut c3, &LossModel::Logistic, &theta0, &cfg, 1).unwrap();
        assert_eq!(out.average, mean_of(&out.local));
    }

    #[test]
    fn aggregate_weights_by_shard_size() {
        // shards of size 1 and 3 with quadratic subgradients known by hand
        let s1 = Dataset::from_parts(2, vec![1.0], vec![1.0, 0.0]).unwrap();
        let s2 = Dataset::from_parts(2, vec![0.0, 0.0, 2.0], vec![1.0, 1.0, 1.0, 0.0, 1.0, 2.0])
            .unwrap();
        let mut c = Cluster::new(vec![s2.clone(), s1.clone()]);
        let theta = [0.0, 0.0];
        // per-sample g = -y x: s1 → (-1, 0); s2 → (0,0), (0,0), (-2,-4)
        let a = aggregate_subgradient(&mut c, &LossModel::Quadratic, &theta).unwrap();
        assert_eq!(a, vec![-0.75, -1.0]);
        assert_eq!(c.ledger.vectors_sent, 2);
        assert_eq!(c.ledger.scalars_sent, 2);

        let mut single = Cluster::new(vec![s2.clone()]);
        let a1 = aggregate_subgradient(&mut single, &LossModel::Quadratic, &theta).unwrap();
        assert_eq!(
            a1,
            averaged_subgradient(&LossModel::Quadratic, &theta, &s2, &[0, 1, 2]).unwrap()
        );
    }

    #[test]
    fn zero_rounds_returns_start() {
        let (mut c, _) = logistic_cluster(200, &even_sizes(200, 2).unwrap());
        let cfg = DistributedFoneConfig {
            fone: FoneConfig {
                eta: 0.1,
                m: 10,
                iterations: 5,
                seed: 1,
            },
            rounds: 0,
        };
        let theta0 = vec![0.2, 0.1, 0.0, -0.1];
        assert_eq!(
            run_distributed_fone(&mut c, &LossModel::Logistic, &theta0, &cfg).unwrap(),
            theta0
        );
        assert_eq!(c.ledger, CommLedger::default());
    }

    #[test]
    fn dcsgd_rejects_small_shard() {
        let (mut c, _) = logistic_cluster(100, &[90, 10]);
        let cfg = SgdConfig {
            m: 11,
            schedule: SgdSchedule::new(1.0, 1.0).unwrap(),
        };
        assert!(run_dcsgd(&mut c, &LossModel::Logistic, &[0.0; 4], &cfg, 0).is_err());
    }

    #[test]
    fn divergence_carries_round_index() {
        let (mut c, _) = logistic_cluster(400, &even_sizes(400, 2).unwrap());
        let cfg = DistributedFoneConfig {
            fone: FoneConfig {
                eta: 1e9,
                m: 50,
                iterations: 20,
                seed: 1,
            },
            rounds: 3,
        };
        let err = run_distributed_fone(&mut c, &LossModel::Logistic, &[3.0; 4], &cfg).unwrap_err();
        assert!(matches!(err, FoneError::Round { round: 1, .. }), "{err:?}");
    }
}
