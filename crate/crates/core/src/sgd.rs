//! One-pass mini-batch SGD with the dimension-aware step size
//! `r_i = c0 / max(i^α, p)`.

use rand::seq::SliceRandom;

use crate::dataset::Dataset;
use crate::error::{check_dim, FoneError, Result};
use crate::linalg::{all_finite, axpy, dot};
use crate::model::LossModel;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SgdSchedule {
    pub c0: f64,
    pub alpha: f64,
}

impl SgdSchedule {
    pub fn new(c0: f64, alpha: f64) -> Result<Self> {
        let s = SgdSchedule { c0, alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(FoneError::InvalidParameter(format!(
                "c0 must be positive, got {}",
                self.c0
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(FoneError::InvalidParameter(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    /// Mini-batch size.
    pub m: usize,
    pub schedule: SgdSchedule,
}

/// `c0 / max(i^α, p)` for iteration `i ≥ 1`.
pub fn step_size(i: usize, p: usize, schedule: &SgdSchedule) -> f64 {
    schedule.c0 / (i as f64).powf(schedule.alpha).max(p as f64)
}

/// Seeded permutation of `0..n` cut into `floor(n/m)` consecutive batches
/// of size `m`; the remainder is dropped.
pub fn minibatch_partition(n: usize, m: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(FoneError::InvalidParameter(
            "batch size must be at least 1".into(),
        ));
    }
    if n < m {
        return Err(FoneError::BatchTooLarge { m, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    Ok(perm.chunks_exact(m).map(|c| c.to_vec()).collect())
}

/// Single pass of `z_i = z_{i-1} - (r_i/m) Σ_{j∈H_i} g(z_{i-1}, ξ_j)`
/// starting from `theta0`; returns `z_s`.
pub fn run_minibatch_sgd(
    model: &LossModel,
    data: &Dataset,
    theta0: &[f64],
    config: &SgdConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    model.validate()?;
    config.schedule.validate()?;
    check_dim(data.dim(), theta0.len())?;
    let batches = minibatch_partition(data.len(), config.m, seed)?;
    let p = data.dim();
    let mut z = theta0.to_vec();
    let mut g = vec![0.0; p];
    for (k, batch) in batches.iter().enumerate() {
        g.iter_mut().for_each(|v| *v = 0.0);
        for &j in batch {
            let x = data.row(j);
            let s = model.slope_at(data.response(j), dot(x, &z));
            if s != 0.0 {
                axpy(s, x, &mut g);
            }
        }
        let r = step_size(k + 1, p, &config.schedule);
        axpy(-r / config.m as f64, &g, &mut z);
    }
    if !all_finite(&z) {
        return Err(FoneError::NonFinite("SGD iterate"));
    }
    Ok(z)
}
