//! Loss families, their subgradients, and closed-form or simulated
//! population quantities used as oracles.
//!
//! Every supported loss depends on the parameter only through the linear
//! predictor `u = x'θ`, so a subgradient is always `slope(y, u) * x`. The hot
//! loops elsewhere in the crate use [`LossModel::loss_at`] and
//! [`LossModel::slope_at`] directly on rows of a [`Dataset`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::data::DesignSpec;
use crate::dataset::{Dataset, Sample};
use crate::error::{check_dim, FoneError, Result};
use crate::linalg::{axpy, dot};
use crate::rng::rng_from_seed;

/// Which family of regression loss to use, without its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Logistic,
    Quantile,
    Quadratic,
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelFamily::Logistic => "logistic",
            ModelFamily::Quantile => "quantile",
            ModelFamily::Quadratic => "quadratic",
        };
        f.write_str(s)
    }
}

/// A convex loss `f(θ, ξ)` with a chosen subgradient `g(θ, ξ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossModel {
    /// `log(1 + exp(-y x'θ))` with `y ∈ {-1, +1}`.
    Logistic,
    /// Check loss `r (τ - 1{r ≤ 0})` on the residual `r = y - x'θ`.
    Quantile { tau: f64 },
    /// `½ (y - x'θ)²`.
    Quadratic,
}

impl LossModel {
    pub fn quantile(tau: f64) -> Result<Self> {
        let m = LossModel::Quantile { tau };
        m.validate()?;
        Ok(m)
    }

    pub fn from_family(family: ModelFamily, tau: Option<f64>) -> Result<Self> {
        match family {
            ModelFamily::Logistic => Ok(LossModel::Logistic),
            ModelFamily::Quadratic => Ok(LossModel::Quadratic),
            ModelFamily::Quantile => {
                let tau = tau.ok_or_else(|| {
                    FoneError::InvalidParameter("quantile model requires tau".into())
                })?;
                LossModel::quantile(tau)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LossModel::Quantile { tau } = *self {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(FoneError::InvalidParameter(format!(
                    "quantile level must lie in (0, 1), got {tau}"
                )));
            }
        }
        Ok(())
    }

    pub fn family(&self) -> ModelFamily {
        match self {
            LossModel::Logistic => ModelFamily::Logistic,
            LossModel::Quantile { .. } => ModelFamily::Quantile,
            LossModel::Quadratic => ModelFamily::Quadratic,
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match *self {
            LossModel::Quantile { tau } => Some(tau),
            _ => None,
        }
    }

    /// Whether the loss is differentiable in θ.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, LossModel::Quantile { .. })
    }

    /// Loss as a function of the response and the linear predictor.
    #[inline]
    pub fn loss_at(&self, y: f64, margin: f64) -> f64 {
        match *self {
            LossModel::Logistic => softplus(-y * margin),
            LossModel::Quantile { tau } => {
                let r = y - margin;
                if r <= 0.0 {
                    r * (tau - 1.0)
                } else {
                    r * tau
                }
            }
            LossModel::Quadratic => {
                let r = y - margin;
                0.5 * r * r
            }
        }
    }

    /// Derivative (or chosen subderivative) of [`Self::loss_at`] in the
    /// linear predictor. The subgradient in θ is this value times `x`.
    #[inline]
    pub fn slope_at(&self, y: f64, margin: f64) -> f64 {
        match *self {
            LossModel::Logistic => -y * sigmoid(-y * margin),
            // ties count as y ≤ x'θ
            LossModel::Quantile { tau } => {
                if y <= margin {
                    1.0 - tau
                } else {
                    -tau
                }
            }
            LossModel::Quadratic => margin - y,
        }
    }

    pub fn loss(&self, theta: &[f64], sample: &Sample) -> Result<f64> {
        self.validate()?;
        check_dim(sample.dim(), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(FoneError::NonFinite("theta"));
        }
        Ok(self.loss_at(sample.y(), dot(sample.x(), theta)))
    }

    pub fn subgradient(&self, theta: &[f64], sample: &Sample) -> Result<Vec<f64>> {
        self.validate()?;
        check_dim(sample.dim(), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(FoneError::NonFinite("theta"));
        }
        let s = self.slope_at(sample.y(), dot(sample.x(), theta));
        Ok(sample.x().iter().map(|x| s * x).collect())
    }

    /// Average loss over the whole dataset.
    pub fn empirical_risk(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        check_dim(data.dim(), theta.len())?;
        if data.is_empty() {
            return Err(FoneError::EmptyIndexSet);
        }
        let total: f64 = data
            .rows()
            .map(|(y, x)| self.loss_at(y, dot(x, theta)))
            .sum();
        Ok(total / data.len() as f64)
    }

    /// Adds `Σ_i g(θ, ξ_i)` over all rows of `data` into `out`.
    pub(crate) fn accumulate_subgradient(&self, theta: &[f64], data: &Dataset, out: &mut [f64]) {
        for (y, x) in data.rows() {
            let s = self.slope_at(y, dot(x, theta));
            if s != 0.0 {
                axpy(s, x, out);
            }
        }
    }

    /// Full-sample mean subgradient `(1/n) Σ_i g(θ, ξ_i)`.
    pub fn mean_subgradient(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        check_dim(data.dim(), theta.len())?;
        if data.is_empty() {
            return Err(FoneError::EmptyIndexSet);
        }
        let mut g = vec![0.0; theta.len()];
        self.accumulate_subgradient(theta, data, &mut g);
        let inv = 1.0 / data.len() as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        Ok(g)
    }
}

#[inline]
fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean subgradient over the rows named by `index_set`.
pub fn averaged_subgradient(
    model: &LossModel,
    theta: &[f64],
    data: &Dataset,
    index_set: &[usize],
) -> Result<Vec<f64>> {
    check_dim(data.dim(), theta.len())?;
    if index_set.is_empty() {
        return Err(FoneError::EmptyIndexSet);
    }
    let mut g = vec![0.0; theta.len()];
    for &i in index_set {
        if i >= data.len() {
            return Err(FoneError::IndexOutOfRange {
                index: i,
                len: data.len(),
            });
        }
        let x = data.row(i);
        axpy(model.slope_at(data.response(i), dot(x, theta)), x, &mut g);
    }
    let inv = 1.0 / index_set.len() as f64;
    g.iter_mut().for_each(|v| *v *= inv);
    Ok(g)
}

/// Where a [`PopulationOracle`] came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleSource {
    ClosedForm,
    MonteCarlo { samples: usize, std_error: f64 },
}

/// Monte Carlo settings for models without a closed-form oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            samples: 1_000_000,
            seed: 0,
        }
    }
}

const MIN_MONTE_CARLO: usize = 10_000;

/// Population Hessian `Σ` and subgradient covariance `A` at the truth.
#[derive(Debug, Clone)]
pub struct PopulationOracle {
    pub sigma: DMatrix<f64>,
    pub a_matrix: DMatrix<f64>,
    pub source: OracleSource,
}

impl PopulationOracle {
    fn checked(sigma: DMatrix<f64>, a_matrix: DMatrix<f64>, source: OracleSource) -> Result<Self> {
        let sym = |m: &DMatrix<f64>| {
            let scale = m.amax().max(1.0);
            (m - m.transpose()).amax() <= 1e-12 * scale
        };
        if !sym(&sigma) || !sym(&a_matrix) {
            return Err(FoneError::InvalidParameter(
                "oracle matrices must be symmetric".into(),
            ));
        }
        let min_sigma = sigma.clone().symmetric_eigenvalues().min();
        if min_sigma <= 0.0 {
            return Err(FoneError::NotPositiveDefinite);
        }
        let min_a = a_matrix.clone().symmetric_eigenvalues().min();
        if min_a < -1e-10 * a_matrix.amax().max(1.0) {
            return Err(FoneError::InvalidParameter(
                "A must be positive semidefinite".into(),
            ));
        }
        Ok(PopulationOracle {
            sigma,
            a_matrix,
            source,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    /// `Σ⁻¹ v` by Cholesky solve.
    pub fn sigma_inv(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), v.len())?;
        let chol = self
            .sigma
            .clone()
            .cholesky()
            .ok_or(FoneError::NotPositiveDefinite)?;
        Ok(chol
            .solve(&DVector::from_column_slice(v))
            .as_slice()
            .to_vec())
    }

    /// `w' Σ⁻¹ A Σ⁻¹ w`.
    pub fn limiting_variance(&self, w: &[f64]) -> Result<f64> {
        let s = DVector::from_vec(self.sigma_inv(w)?);
        Ok((s.transpose() * &self.a_matrix * &s)[(0, 0)])
    }
}

/// Closed-form (quantile, quadratic) or simulated (logistic) population
/// `Σ` and `A` for data drawn from `design` with true parameter `theta_star`.
///
/// Quantile errors are taken as standard normal shifted so that their
/// τ-quantile is zero; quadratic errors as standard normal.
pub fn population_oracle(
    model: &LossModel,
    design: &DesignSpec,
    theta_star: &[f64],
    mc: MonteCarloConfig,
) -> Result<PopulationOracle> {
    model.validate()?;
    design.validate()?;
    check_dim(design.p, theta_star.len())?;
    let second_moment = design.second_moment();
    match *model {
        LossModel::Quantile { tau } => {
            let density = quantile_error_density(tau);
            PopulationOracle::checked(
                &second_moment * density,
                &second_moment * (tau * (1.0 - tau)),
                OracleSource::ClosedForm,
            )
        }
        LossModel::Quadratic => PopulationOracle::checked(
            second_moment.clone(),
            second_moment,
            OracleSource::ClosedForm,
        ),
        LossModel::Logistic => logistic_oracle(design, theta_star, mc),
    }
}

/// `φ(Φ⁻¹(τ))`, the error density at zero after shifting a standard normal
/// so that its τ-quantile is zero.
pub fn quantile_error_density(tau: f64) -> f64 {
    let n = standard_normal();
    n.pdf(n.inverse_cdf(tau))
}

/// `Φ⁻¹(q)`.
pub fn normal_quantile(q: f64) -> f64 {
    standard_normal().inverse_cdf(q)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal is valid")
}

fn logistic_oracle(
    design: &DesignSpec,
    theta: &[f64],
    mc: MonteCarloConfig,
) -> Result<PopulationOracle> {
    if mc.samples < MIN_MONTE_CARLO {
        return Err(FoneError::InvalidParameter(format!(
            "Monte Carlo sample count {} is below {MIN_MONTE_CARLO}",
            mc.samples
        )));
    }
    let p = design.p;
    let sampler = design.sampler()?;
    let mut rng = rng_from_seed(mc.seed);
    // Accumulate in blocks so the outer products run as matrix products.
    const BLOCK: usize = 1000;
    const BATCHES: usize = 20;
    let mut sigma = DMatrix::<f64>::zeros(p, p);
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut batch_sigma: Vec<DMatrix<f64>> = Vec::with_capacity(BATCHES);
    let mut current = DMatrix::<f64>::zeros(p, p);
    let per_batch = mc.samples.div_ceil(BATCHES);
    let mut in_batch = 0usize;
    let mut xs = DMatrix::<f64>::zeros(p, BLOCK);
    let mut xw = DMatrix::<f64>::zeros(p, BLOCK);
    let mut xg = DMatrix::<f64>::zeros(p, BLOCK);
    let mut row = vec![0.0; p];
    let mut done = 0usize;
    while done < mc.samples {
        let take = BLOCK.min(mc.samples - done).min(per_batch - in_batch);
        for c in 0..take {
            sampler.draw(&mut rng, &mut row);
            let u = dot(&row, theta);
            let prob = sigmoid(u);
            let y = if rng.random::<f64>() < prob {
                1.0
            } else {
                -1.0
            };
            let slope = LossModel::Logistic.slope_at(y, u);
            let w = prob * (1.0 - prob);
            for j in 0..p {
                xs[(j, c)] = row[j];
                xw[(j, c)] = row[j] * w;
                xg[(j, c)] = row[j] * slope;
            }
        }
        let cols = 0..take;
        let xs_v = xs.columns(cols.start, cols.len());
        let xw_v = xw.columns(cols.start, cols.len());
        let xg_v = xg.columns(cols.start, cols.len());
        current.gemm(1.0, &xw_v, &xs_v.transpose(), 1.0);
        a.gemm(1.0, &xg_v, &xg_v.transpose(), 1.0);
        done += take;
        in_batch += take;
        if in_batch == per_batch || done == mc.samples {
            sigma += &current;
            batch_sigma
                .push(std::mem::replace(&mut current, DMatrix::zeros(p, p)) / in_batch as f64);
            in_batch = 0;
        }
    }
    let n = mc.samples as f64;
    sigma /= n;
    a /= n;
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let a = (&a + a.transpose()) * 0.5;
    // Standard error from the spread of batch means, worst entry.
    let b = batch_sigma.len() as f64;
    let mut worst: f64 = 0.0;
    if batch_sigma.len() > 1 {
        for i in 0..p {
            for j in 0..p {
                let mean = batch_sigma.iter().map(|m| m[(i, j)]).sum::<f64>() / b;
                let var = batch_sigma
                    .iter()
                    .map(|m| (m[(i, j)] - mean).powi(2))
                    .sum::<f64>()
                    / (b - 1.0);
                worst = worst.max((var / b).sqrt());
            }
        }
    }
    PopulationOracle::checked(
        sigma,
        a,
        OracleSource::MonteCarlo {
            samples: mc.samples,
            std_error: worst,
        },
    )
}
