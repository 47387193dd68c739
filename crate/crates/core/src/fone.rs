//! First-order Newton-type estimation of `Σ⁻¹a`.
//!
//! The recursion
//!
//! ```text
//! z_t = z_{t-1} - η (g_B(z_{t-1}) - g_B(z_0) + a),   z_0 = θ̂₀
//! ```
//!
//! is a stochastic Richardson iteration for `Σ⁻¹a` in which the product
//! `Σ (z_{t-1} - z_0)` is replaced by a difference of mini-batch
//! subgradients. Only first-order information is used, so the loss need not
//! be twice differentiable.
//!
//! Internally the iterate is tracked as the offset `d_t = z_t - z_0`. Every
//! operation on `d_t` is then linear in `a` for the quadratic loss, which
//! makes the linearity checks exact rather than approximate.

use rand::seq::index;

use crate::dataset::Dataset;
use crate::error::{check_dim, FoneError, Result};
use crate::linalg::{axpy, dot, norm2};
use crate::model::LossModel;
use crate::rng::rng_from_seed;

/// Hyper-parameters of one FONE run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoneConfig {
    /// Constant step size `η`.
    pub eta: f64,
    /// Batch size `m`, drawn without replacement within an iteration.
    pub m: usize,
    /// Iteration count `T`.
    pub iterations: usize,
    pub seed: u64,
}

impl FoneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(FoneError::InvalidParameter(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.iterations == 0 {
            return Err(FoneError::InvalidParameter(
                "iteration count must be at least 1".into(),
            ));
        }
        if self.m == 0 {
            return Err(FoneError::InvalidParameter(
                "batch size must be at least 1".into(),
            ));
        }
        if self.m > n {
            return Err(FoneError::BatchTooLarge { m: self.m, n });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoneOutput {
    /// Final iterate, an estimate of `θ̂₀ - Σ⁻¹a`.
    pub z_t: Vec<f64>,
    /// `θ̂₀ - z_T`, the estimate of `Σ⁻¹a`.
    pub theta_fone: Vec<f64>,
    /// Number of per-sample subgradient differences evaluated.
    pub evaluations: usize,
}

/// `g(θ₀ + δ, ξ) - g(θ₀, ξ)` expressed through the margin slope. For the
/// quadratic loss this is exactly `x'δ`.
#[inline]
fn slope_difference(model: &LossModel, y: f64, base: f64, delta: f64) -> f64 {
    match model {
        LossModel::Quadratic => delta,
        _ => model.slope_at(y, base + delta) - model.slope_at(y, base),
    }
}

const DIVERGENCE_FACTOR: f64 = 1e6;

pub fn run_fone(
    model: &LossModel,
    data: &Dataset,
    theta0: &[f64],
    a: &[f64],
    config: &FoneConfig,
) -> Result<FoneOutput> {
    model.validate()?;
    let p = data.dim();
    check_dim(p, theta0.len())?;
    check_dim(p, a.len())?;
    config.validate(data.len())?;
    if theta0.iter().chain(a).any(|v| !v.is_finite()) {
        return Err(FoneError::NonFinite("FONE input"));
    }
    let n = data.len();
    let limit = DIVERGENCE_FACTOR * (1.0 + norm2(a));
    let mut rng = rng_from_seed(config.seed);
    // margins at θ̂₀, filled in on first use
    let mut base = vec![f64::NAN; n];
    let mut d = vec![0.0; p];
    let mut g = vec![0.0; p];
    let inv_m = 1.0 / config.m as f64;
    for t in 1..=config.iterations {
        let batch = index::sample(&mut rng, n, config.m);
        g.iter_mut().for_each(|v| *v = 0.0);
        for i in batch.iter() {
            let x = data.row(i);
            let b = base[i];
            let b = if b.is_nan() {
                let v = dot(x, theta0);
                base[i] = v;
                v
            } else {
                b
            };
            let s = slope_difference(model, data.response(i), b, dot(x, &d));
            if s != 0.0 {
                axpy(s, x, &mut g);
            }
        }
        for ((dj, gj), aj) in d.iter_mut().zip(&g).zip(a) {
            *dj -= config.eta * (gj * inv_m + aj);
        }
        let size = norm2(&d);
        if !size.is_finite() || size > limit {
            return Err(FoneError::Diverged { iteration: t });
        }
    }
    let z_t: Vec<f64> = theta0.iter().zip(&d).map(|(t, dj)| t + dj).collect();
    let theta_fone = theta0.iter().zip(&z_t).map(|(t, z)| t - z).collect();
    Ok(FoneOutput {
        z_t,
        theta_fone,
        evaluations: config.iterations * config.m,
    })
}

/// Multiplier `τ_n` for the `Σ⁻¹w` estimator: `√(p log n / n)` for smooth
/// losses and `(p log n / n)^{1/3}` for the check loss.
pub fn default_tau_n(model: &LossModel, p: usize, n: usize) -> f64 {
    let r = p as f64 * (n as f64).ln() / n as f64;
    if model.is_smooth() {
        r.sqrt()
    } else {
        r.cbrt()
    }
}

/// Step size for the `Σ⁻¹w` estimator: `p log n / n` for smooth losses and
/// `(p log n / n)^{2/3}` for the check loss.
pub fn default_inference_eta(model: &LossModel, p: usize, n: usize) -> f64 {
    let r = p as f64 * (n as f64).ln() / n as f64;
    if model.is_smooth() {
        r
    } else {
        r.powf(2.0 / 3.0)
    }
}

/// `⌈10 log n / η⌉`, so that `η T` grows like `log n`.
pub fn default_inference_iterations(eta: f64, n: usize) -> usize {
    (10.0 * (n as f64).ln() / eta).ceil().max(1.0) as usize
}

/// `⌊p log n⌋`, clamped to `[1, n]`.
pub fn default_batch_size(p: usize, n: usize) -> usize {
    ((p as f64 * (n as f64).ln()).floor() as usize).clamp(1, n.max(1))
}

/// Estimates `Σ⁻¹w` for a unit vector `w` by running FONE with
/// `a = τ_n w` and rescaling by `1/τ_n`.
pub fn estimate_sigma_inv_w(
    model: &LossModel,
    data: &Dataset,
    theta0: &[f64],
    w: &[f64],
    tau_n: f64,
    config: &FoneConfig,
) -> Result<Vec<f64>> {
    check_dim(data.dim(), w.len())?;
    let len = norm2(w);
    if (len - 1.0).abs() > 1e-12 {
        return Err(FoneError::InvalidParameter(format!(
            "w must have unit length, has {len}"
        )));
    }
    if !(tau_n > 0.0 && tau_n.is_finite()) {
        return Err(FoneError::InvalidParameter(format!(
            "tau_n must be positive, got {tau_n}"
        )));
    }
    let a: Vec<f64> = w.iter().map(|v| v * tau_n).collect();
    let out = run_fone(model, data, theta0, &a, config)?;
    Ok(out.theta_fone.iter().map(|v| v / tau_n).collect())
}

/// `(1/n) Σ_i (g(θ̂₀, ξ_i)' v)²` with `v` an estimate of `Σ⁻¹w`: the plug-in
/// estimate of the limiting variance `w'Σ⁻¹AΣ⁻¹w`.
pub fn estimate_limiting_variance(
    model: &LossModel,
    data: &Dataset,
    theta0: &[f64],
    sigma_inv_w_hat: &[f64],
) -> Result<f64> {
    model.validate()?;
    check_dim(data.dim(), theta0.len())?;
    check_dim(data.dim(), sigma_inv_w_hat.len())?;
    if data.is_empty() {
        return Err(FoneError::EmptyIndexSet);
    }
    let total: f64 = data
        .rows()
        .map(|(y, x)| {
            let s = model.slope_at(y, dot(x, theta0));
            let proj = s * dot(x, sigma_inv_w_hat);
            proj * proj
        })
        .sum();
    Ok(total / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_problem, DesignSpec};
    use crate::model::ModelFamily;

    fn quadratic_problem(p: usize, n: usize, seed: u64) -> Dataset {
        generate_problem(
            ModelFamily::Quadratic,
            &DesignSpec::identity(p).unwrap(),
            n,
            None,
            seed,
        )
        .unwrap()
        .dataset
    }

    #[test]
    fn zero_a_is_a_fixed_point() {
        let prob = generate_problem(
            ModelFamily::Logistic,
            &DesignSpec::identity(5).unwrap(),
            300,
            None,
            1,
        )
        .unwrap();
        let theta0 = vec![0.1, -0.2, 0.3, 0.0, 0.5];
        for seed in 0..3 {
            let cfg = FoneConfig {
                eta: 0.7,
                m: 20,
                iterations: 15,
                seed,
            };
            let out = run_fone(&prob.model, &prob.dataset, &theta0, &[0.0; 5], &cfg).unwrap();
            assert_eq!(out.z_t, theta0);
            assert!(out.theta_fone.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn doubling_a_doubles_output_for_quadratic() {
        let data = quadratic_problem(6, 400, 2);
        let theta0 = vec![0.0; 6];
        let a = vec![0.3, -0.1, 0.2, 0.05, 0.0, -0.4];
        let a2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let cfg = FoneConfig {
            eta: 0.2,
            m: 50,
            iterations: 40,
            seed: 9,
        };
        let one = run_fone(&LossModel::Quadratic, &data, &theta0, &a, &cfg).unwrap();
        let two = run_fone(&LossModel::Quadratic, &data, &theta0, &a2, &cfg).unwrap();
        for (x, y) in one.theta_fone.iter().zip(&two.theta_fone) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let data = quadratic_problem(3, 10, 3);
        let a = [0.0; 3];
        let t0 = [0.0; 3];
        let big = FoneConfig {
            eta: 0.1,
            m: 11,
            iterations: 1,
            seed: 0,
        };
        assert!(matches!(
            run_fone(&LossModel::Quadratic, &data, &t0, &a, &big),
            Err(FoneError::BatchTooLarge { .. })
        ));
        let bad_eta = FoneConfig {
            eta: 0.0,
            m: 2,
            iterations: 1,
            seed: 0,
        };
        assert!(run_fone(&LossModel::Quadratic, &data, &t0, &a, &bad_eta).is_err());
        assert!(run_fone(
            &LossModel::Quadratic,
            &data,
            &[0.0; 2],
            &a,
            &FoneConfig {
                eta: 0.1,
                m: 2,
                iterations: 1,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn divergence_is_reported_with_iteration() {
        let data = quadratic_problem(4, 200, 4);
        let cfg = FoneConfig {
            eta: 50.0,
            m: 200,
            iterations: 200,
            seed: 0,
        };
        let res = run_fone(
            &LossModel::Quadratic,
            &data,
            &[0.0; 4],
            &[1.0, 0.0, 0.0, 0.0],
            &cfg,
        );
        match res {
            Err(FoneError::Diverged { iteration }) => assert!(iteration > 1 && iteration < 200),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn sigma_inv_w_requires_unit_w() {
        let data = quadratic_problem(3, 50, 5);
        let cfg = FoneConfig {
            eta: 0.1,
            m: 10,
            iterations: 5,
            seed: 0,
        };
        let r = estimate_sigma_inv_w(
            &LossModel::Quadratic,
            &data,
            &[0.0; 3],
            &[1.0, 1.0, 0.0],
            0.1,
            &cfg,
        );
        assert!(r.is_err());
        let r = estimate_sigma_inv_w(
            &LossModel::Quadratic,
            &data,
            &[0.0; 3],
            &[1.0, 0.0, 0.0],
            0.0,
            &cfg,
        );
        assert!(r.is_err());
    }

    #[test]
    fn limiting_variance_zero_when_subgradients_vanish() {
        let theta0 = [1.0, 2.0];
        let y: Vec<f64> = (0..10).map(|i| 1.0 + 2.0 * i as f64).collect();
        let x: Vec<f64> = (0..10).flat_map(|i| [1.0, i as f64]).collect();
        let data = Dataset::from_parts(2, y, x).unwrap();
        let v = estimate_limiting_variance(&LossModel::Quadratic, &data, &theta0, &[3.0, -1.0])
            .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn default_rates() {
        let n = 200_000;
        let r = 100.0 * (n as f64).ln() / n as f64;
        let q = LossModel::quantile(0.25).unwrap();
        assert!((default_tau_n(&q, 100, n) - r.cbrt()).abs() < 1e-15);
        assert!((default_tau_n(&LossModel::Logistic, 100, n) - r.sqrt()).abs() < 1e-15);
        assert!((default_inference_eta(&q, 100, n) - r.powf(2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(default_batch_size(100, 5000), 851);
        assert_eq!(default_batch_size(100, 100_000), 1151);
    }
}
