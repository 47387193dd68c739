//! Grid selection of the step-size scale constants.
//!
//! A candidate is scored by the empirical risk on machine 1 at the estimate
//! it produces: the local SGD estimate for `c0`, or the first distributed
//! FONE iterate for `c0'` (with `η = c0' m / n1`). Candidates that fail or
//! produce a non-finite risk score `+∞`.

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::distributed::{fone_round, Cluster, Execution};
use crate::error::{FoneError, Result};
use crate::fone::FoneConfig;
use crate::model::LossModel;
use crate::rng::{derive_seed, stream};
use crate::sgd::{run_minibatch_sgd, SgdConfig, SgdSchedule};

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGrid {
    values: Vec<f64>,
}

impl CandidateGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(FoneError::InvalidParameter(
                "candidate grid is empty".into(),
            ));
        }
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(FoneError::InvalidParameter(
                "candidates must be positive and finite".into(),
            ));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FoneError::InvalidParameter(
                "candidates must be strictly increasing".into(),
            ));
        }
        Ok(CandidateGrid { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for CandidateGrid {
    /// `10⁻³, 10⁻², …, 10³`
    fn default() -> Self {
        CandidateGrid {
            values: vec![1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub value: f64,
    /// Empirical risk, `+∞` on failure.
    pub score: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningOutcome {
    pub chosen: f64,
    pub scores: Vec<CandidateScore>,
}

fn candidate_seed(seed: u64, index: usize) -> u64 {
    derive_seed(derive_seed(seed, stream::TUNE), index as u64)
}

/// Evaluates `objective(candidate, seed)` for every grid value and returns
/// the smallest finite score; ties go to the smaller candidate.
pub fn select_scale_constant<F>(
    objective: F,
    grid: &CandidateGrid,
    seed: u64,
    execution: Execution,
) -> Result<TuningOutcome>
where
    F: Fn(f64, u64) -> Result<f64> + Sync,
{
    let eval = |(i, &c): (usize, &f64)| {
        let (score, failure) = match objective(c, candidate_seed(seed, i)) {
            Ok(s) if s.is_finite() => (s, None),
            Ok(s) => (f64::INFINITY, Some(format!("non-finite risk {s}"))),
            Err(e) => (f64::INFINITY, Some(e.to_string())),
        };
        CandidateScore {
            value: c,
            score,
            failure,
        }
    };
    let scores: Vec<CandidateScore> = match execution {
        Execution::Sequential => grid.values.iter().enumerate().map(eval).collect(),
        Execution::Parallel => grid.values.par_iter().enumerate().map(eval).collect(),
    };
    let mut best: Option<&CandidateScore> = None;
    for s in scores.iter().filter(|s| s.score.is_finite()) {
        if best.is_none_or(|b| s.score < b.score) {
            best = Some(s);
        }
    }
    match best {
        Some(b) => Ok(TuningOutcome {
            chosen: b.value,
            scores,
        }),
        None => Err(FoneError::TuningFailed(
            scores
                .iter()
                .map(|s| (s.value, s.failure.clone().unwrap_or_default()))
                .collect(),
        )),
    }
}

/// Chooses `c0` by the risk on `shard` (machine 1) of the SGD estimate it
/// produces from `theta0`.
pub fn tune_sgd_c0(
    shard: &Dataset,
    model: &LossModel,
    theta0: &[f64],
    m: usize,
    alpha: f64,
    grid: &CandidateGrid,
    seed: u64,
) -> Result<TuningOutcome> {
    let objective = |c: f64, s: u64| -> Result<f64> {
        let cfg = SgdConfig {
            m,
            schedule: SgdSchedule::new(c, alpha)?,
        };
        let est = run_minibatch_sgd(model, shard, theta0, &cfg, s)?;
        model.empirical_risk(&est, shard)
    };
    select_scale_constant(objective, grid, seed, Execution::Sequential)
}

/// Chooses `c0'` for distributed FONE by the machine-1 risk after one round
/// with `η = c0' m / n1`.
pub fn tune_fone_c0(
    cluster: &Cluster,
    model: &LossModel,
    theta0: &[f64],
    m: usize,
    iterations: usize,
    grid: &CandidateGrid,
    seed: u64,
) -> Result<TuningOutcome> {
    let shard = cluster.shard(0);
    let n1 = shard.len() as f64;
    let a = cluster.global_mean_subgradient(model, theta0)?;
    let objective = |c: f64, s: u64| -> Result<f64> {
        let cfg = FoneConfig {
            eta: c * m as f64 / n1,
            m,
            iterations,
            seed: s,
        };
        let (theta1, _) = fone_round(shard, model, theta0, &a, &cfg, 1)?;
        model.empirical_risk(&theta1, shard)
    };
    select_scale_constant(objective, grid, seed, Execution::Sequential)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(CandidateGrid::new(vec![]).is_err());
        assert!(CandidateGrid::new(vec![1.0, 1.0]).is_err());
        assert!(CandidateGrid::new(vec![2.0, 1.0]).is_err());
        assert!(CandidateGrid::new(vec![0.0, 1.0]).is_err());
        assert_eq!(CandidateGrid::default().values().len(), 7);
    }

    #[test]
    fn single_candidate() {
        let g = CandidateGrid::new(vec![3.0]).unwrap();
        let out = select_scale_constant(|c, _| Ok(c * 10.0), &g, 0, Execution::Sequential).unwrap();
        assert_eq!(out.chosen, 3.0);
    }

    #[test]
    fn diverging_candidate_is_skipped() {
        let g = CandidateGrid::new(vec![1.0, 2.0]).unwrap();
        let out = select_scale_constant(
            |c, _| if c < 1.5 { Ok(f64::NAN) } else { Ok(5.0) },
            &g,
            0,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(out.chosen, 2.0);
        assert_eq!(out.scores[0].score, f64::INFINITY);
        assert!(out.scores[0].failure.is_some());
    }

    #[test]
    fn ties_go_to_smallest() {
        let g = CandidateGrid::new(vec![0.1, 1.0, 10.0]).unwrap();
        let out = select_scale_constant(|_, _| Ok(1.0), &g, 0, Execution::Sequential).unwrap();
        assert_eq!(out.chosen, 0.1);
    }

    #[test]
    fn all_failures_reported() {
        let g = CandidateGrid::new(vec![0.1, 1.0]).unwrap();
        let err = select_scale_constant(
            |_, _| Err(FoneError::Diverged { iteration: 3 }),
            &g,
            0,
            Execution::Sequential,
        )
        .unwrap_err();
        match err {
            FoneError::TuningFailed(d) => {
                assert_eq!(d.len(), 2);
                assert!(d[0].1.contains("iteration 3"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let g = CandidateGrid::default();
        let f = |c: f64, s: u64| Ok((c.ln() - 0.7).powi(2) + (s % 7) as f64 * 1e-3);
        let a = select_scale_constant(f, &g, 11, Execution::Sequential).unwrap();
        let b = select_scale_constant(f, &g, 11, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
