//! Replication loop: data, initial estimator, tuning, estimators, metrics.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::report::{failure, warning, ExperimentReport, ReplicationRow, RowStatus, TuningRecord};
use super::spec::{Estimator, ExperimentSpec, ResolvedSpec};
use crate::data::{generate_problem, generate_problem_with_theta, shard_dataset, GeneratedProblem};
use crate::distributed::{run_dcsgd, run_distributed_fone, Cluster, DistributedFoneConfig};
use crate::erm::{initial_estimator, solve_erm, ErmResult, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{FoneError, Result};
use crate::fone::{
    default_batch_size, default_inference_eta, default_inference_iterations, default_tau_n,
    estimate_limiting_variance, estimate_sigma_inv_w, FoneConfig,
};
use crate::linalg::dist2;
use crate::model::{population_oracle, MonteCarloConfig};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::sgd::{run_minibatch_sgd, SgdConfig, SgdSchedule};
use crate::tuning::{tune_fone_c0, tune_sgd_c0};

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for replications; rayon's default when unset.
    pub threads: Option<usize>,
    /// Run only these 1-based replication indices (default: all `R`).
    pub replications: Option<Vec<usize>>,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    run_experiment_with(spec, &RunOptions::default())
}

/// Runs every requested replication and aggregates. Estimator failures are
/// recorded in the rows; only an invalid spec or thread pool is an error.
pub fn run_experiment_with(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentReport> {
    let rs = spec.resolved()?;
    let reps: Vec<usize> = match &opts.replications {
        Some(r) => r.clone(),
        None => (1..=rs.replications).collect(),
    };
    if let Some(&bad) = reps.iter().find(|&&r| r == 0 || r > rs.replications) {
        return Err(FoneError::InvalidParameter(format!(
            "replication {bad} outside 1..={}",
            rs.replications
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| FoneError::InvalidParameter(format!("thread pool: {e}")))?;

    let fixed = rs
        .fixed_theta
        .then(|| draw_theta_raw(rs.design.p, derive_seed(rs.seed, stream::PROBLEM)));
    let (constants, mut tuning) = if rs.retune_per_replication {
        (None, Vec::new())
    } else {
        let seed = derive_seed(rs.seed, stream::TUNE);
        match Context::build(&rs, seed, fixed.as_deref()) {
            Ok(ctx) => {
                let (c, t) = tune_constants(&rs, &ctx, seed, None);
                (Some(c), t)
            }
            Err(e) => (
                Some(Constants::failed(&rs, &format!("tuning problem: {e}"))),
                Vec::new(),
            ),
        }
    };

    let results: Vec<(Vec<ReplicationRow>, Vec<TuningRecord>)> = pool.install(|| {
        reps.par_iter()
            .map(|&r| run_replication(&rs, r, constants.as_ref(), fixed.as_deref()))
            .collect()
    });
    let mut rows = Vec::new();
    for (r, t) in results {
        rows.extend(r);
        tuning.extend(t);
    }
    Ok(ExperimentReport::new(spec.hash(), rows, tuning))
}

/// The generated problem replication `r` of `spec` works on.
pub fn replication_problem(spec: &ExperimentSpec, r: usize) -> Result<GeneratedProblem> {
    let rs = spec.resolved()?;
    if r == 0 || r > rs.replications {
        return Err(FoneError::InvalidParameter(format!(
            "replication {r} outside 1..={}",
            rs.replications
        )));
    }
    let seed = derive_seed(derive_seed(rs.seed, r as u64), stream::PROBLEM);
    let (family, tau) = (rs.model.family(), rs.model.tau());
    if rs.fixed_theta {
        let theta = draw_theta_raw(rs.design.p, derive_seed(rs.seed, stream::PROBLEM));
        generate_problem_with_theta(family, &rs.design, rs.n, tau, theta, seed)
    } else {
        generate_problem(family, &rs.design, rs.n, tau, seed)
    }
}

fn draw_theta_raw(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..p).map(|_| rng.random::<f64>() - 0.5).collect()
}

/// Uniform draw from the sphere of radius `√p`.
pub fn random_sphere_point(p: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let v: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let scale = (p as f64).sqrt() / crate::linalg::norm2(&v);
    v.into_iter().map(|x| x * scale).collect()
}

/// Data and starting points shared by the estimators of one replication.
struct Context {
    problem: GeneratedProblem,
    theta0: std::result::Result<Vec<f64>, String>,
    theta0_seconds: f64,
    random_theta0: Vec<f64>,
    cluster: Option<Cluster>,
}

impl Context {
    fn build(rs: &ResolvedSpec, seed: u64, fixed_theta: Option<&[f64]>) -> Result<Self> {
        let family = rs.model.family();
        let tau = rs.model.tau();
        let problem_seed = derive_seed(seed, stream::PROBLEM);
        let problem = match fixed_theta {
            Some(t) => generate_problem_with_theta(
                family,
                &rs.design,
                rs.n,
                tau,
                t.to_vec(),
                problem_seed,
            )?,
            None => generate_problem(family, &rs.design, rs.n, tau, problem_seed)?,
        };
        let start = Instant::now();
        let theta0 = initial_estimator(&problem, rs.n0, derive_seed(seed, stream::INIT))
            .map_err(|e| e.to_string());
        let theta0_seconds = start.elapsed().as_secs_f64();
        let cluster = if rs.wants(Estimator::DcSgd) || rs.wants(Estimator::DisFone) {
            Some(shard_dataset(
                &problem.dataset,
                &rs.shard_sizes,
                derive_seed(seed, stream::SHARD),
            )?)
        } else {
            None
        };
        Ok(Context {
            random_theta0: random_sphere_point(rs.design.p, derive_seed(seed, stream::RANDOM_INIT)),
            problem,
            theta0,
            theta0_seconds,
            cluster,
        })
    }
}

/// Scale constants per estimator, or why they could not be chosen.
#[derive(Debug, Clone)]
struct Constants(Vec<(Estimator, std::result::Result<f64, String>)>);

impl Constants {
    fn failed(rs: &ResolvedSpec, msg: &str) -> Self {
        Constants(
            rs.estimators
                .iter()
                .map(|&e| (e, Err(msg.to_string())))
                .collect(),
        )
    }

    fn get(&self, e: Estimator) -> std::result::Result<f64, String> {
        self.0
            .iter()
            .find(|(k, _)| *k == e)
            .map(|(_, c)| c.clone())
            .unwrap_or_else(|| Err(format!("no scale constant for {e}")))
    }
}

fn tune_constants(
    rs: &ResolvedSpec,
    ctx: &Context,
    seed: u64,
    replication: Option<usize>,
) -> (Constants, Vec<TuningRecord>) {
    let mut constants = Vec::new();
    let mut records = Vec::new();
    for &e in &rs.estimators {
        let fixed = match e {
            Estimator::Sgd | Estimator::SgdRandomInit | Estimator::DcSgd => rs.sgd_c0,
            Estimator::DisFone => rs.fone_c0,
            _ => continue,
        };
        if let Some(c) = fixed {
            constants.push((e, Ok(c)));
            continue;
        }
        // Keyed by estimator so that adding estimators leaves the others'
        // seeds alone. SGD from the random start shares SGD's key: it uses
        // the constant chosen from the initial estimator, so the two runs
        // differ only in their starting point.
        let target = if e == Estimator::SgdRandomInit {
            Estimator::Sgd
        } else {
            e
        };
        let key = Estimator::ALL
            .iter()
            .position(|&x| x == target)
            .expect("listed") as u64;
        let seed = derive_seed(seed, key);
        let model = &rs.model;
        let outcome = match &ctx.theta0 {
            Err(msg) => Err(FoneError::InvalidParameter(format!(
                "initial estimator failed: {msg}"
            ))),
            Ok(theta0) => match e {
                Estimator::Sgd | Estimator::SgdRandomInit => tune_sgd_c0(
                    &ctx.problem.dataset,
                    model,
                    theta0,
                    rs.sgd_batch,
                    rs.alpha,
                    &rs.grid,
                    seed,
                ),
                Estimator::DcSgd => {
                    let shard = ctx
                        .cluster
                        .as_ref()
                        .expect("cluster built for DC-SGD")
                        .shard(0);
                    tune_sgd_c0(shard, model, theta0, rs.dc_batch, rs.alpha, &rs.grid, seed)
                }
                _ => {
                    let cluster = ctx.cluster.as_ref().expect("cluster built for FONE");
                    tune_fone_c0(
                        cluster,
                        model,
                        theta0,
                        rs.fone_batch,
                        rs.iterations,
                        &rs.grid,
                        seed,
                    )
                }
            },
        };
        match outcome {
            Ok(o) => {
                log::debug!("tuned {e}: {}", o.chosen);
                constants.push((e, Ok(o.chosen)));
                records.push(TuningRecord {
                    target: e,
                    replication,
                    outcome: o,
                });
            }
            Err(err) => constants.push((e, Err(format!("tuning failed: {err}")))),
        }
    }
    (Constants(constants), records)
}

/// Timed estimate plus communication count.
struct Estimate {
    theta: Vec<f64>,
    comm: u64,
    seconds: f64,
}

fn timed<F: FnOnce() -> Result<(Vec<f64>, u64)>>(f: F) -> std::result::Result<Estimate, String> {
    let start = Instant::now();
    let (theta, comm) = f().map_err(|e| e.to_string())?;
    Ok(Estimate {
        theta,
        comm,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn run_replication(
    rs: &ResolvedSpec,
    r: usize,
    constants: Option<&Constants>,
    fixed_theta: Option<&[f64]>,
) -> (Vec<ReplicationRow>, Vec<TuningRecord>) {
    let seed = derive_seed(rs.seed, r as u64);
    let failed_row = |e: Estimator, msg: &str| ReplicationRow {
        estimator: e,
        replication: r,
        err_to_truth: None,
        err_to_erm: None,
        comm_vectors: 0,
        seconds: 0.0,
        status: failure(msg),
    };
    let mut ctx = match Context::build(rs, seed, fixed_theta) {
        Ok(c) => c,
        Err(e) => {
            let msg = format!("data generation: {e}");
            return (
                rs.estimators.iter().map(|&e| failed_row(e, &msg)).collect(),
                Vec::new(),
            );
        }
    };
    let (constants, tuning) = match constants {
        Some(c) => (c.clone(), Vec::new()),
        None => tune_constants(rs, &ctx, derive_seed(seed, stream::TUNE), Some(r)),
    };

    let start = Instant::now();
    let erm = solve_erm(
        &rs.model,
        &ctx.problem.dataset,
        DEFAULT_TOL,
        DEFAULT_MAX_ITER,
    );
    let erm_seconds = start.elapsed().as_secs_f64();
    let erm_theta = erm.as_ref().ok().map(|e| e.theta_hat.clone());
    let truth = ctx.problem.theta_star.clone();
    let row = |e: Estimator, est: std::result::Result<Estimate, String>| match est {
        Ok(est) => ReplicationRow {
            estimator: e,
            replication: r,
            err_to_truth: Some(dist2(&est.theta, &truth)),
            err_to_erm: erm_theta.as_ref().map(|t| dist2(&est.theta, t)),
            comm_vectors: est.comm,
            seconds: est.seconds,
            status: RowStatus::Ok,
        },
        Err(msg) => failed_row(e, &msg),
    };

    let mut inference: Option<std::result::Result<InferenceOutcome, String>> = None;
    let mut rows = Vec::with_capacity(rs.estimators.len());
    for &e in &rs.estimators {
        let theta0 = ctx.theta0.clone();
        match e {
            Estimator::Init => rows.push(row(
                e,
                theta0.map(|t| Estimate {
                    theta: t,
                    comm: 0,
                    seconds: ctx.theta0_seconds,
                }),
            )),
            Estimator::Erm => rows.push(match &erm {
                Ok(res) => ReplicationRow {
                    estimator: e,
                    replication: r,
                    err_to_truth: Some(dist2(&res.theta_hat, &truth)),
                    err_to_erm: None,
                    comm_vectors: 0,
                    seconds: erm_seconds,
                    status: erm_status(res),
                },
                Err(err) => failed_row(e, &err.to_string()),
            }),
            Estimator::Sgd | Estimator::SgdRandomInit => {
                let start_point = if e == Estimator::Sgd {
                    theta0
                } else {
                    Ok(ctx.random_theta0.clone())
                };
                let est = start_point.and_then(|t0| {
                    let c0 = constants.get(e)?;
                    timed(|| {
                        let cfg = SgdConfig {
                            m: rs.sgd_batch,
                            schedule: SgdSchedule::new(c0, rs.alpha)?,
                        };
                        let seed = derive_seed(seed, stream::SGD);
                        Ok((
                            run_minibatch_sgd(&rs.model, &ctx.problem.dataset, &t0, &cfg, seed)?,
                            0,
                        ))
                    })
                });
                rows.push(row(e, est));
            }
            Estimator::DcSgd => {
                let cluster = ctx.cluster.as_mut().expect("cluster built for DC-SGD");
                let est = theta0.and_then(|t0| {
                    let c0 = constants.get(e)?;
                    cluster.reset_accounting();
                    timed(|| {
                        let cfg = SgdConfig {
                            m: rs.dc_batch,
                            schedule: SgdSchedule::new(c0, rs.alpha)?,
                        };
                        let theta = run_dcsgd(cluster, &rs.model, &t0, &cfg, seed)?;
                        Ok((theta, cluster.ledger.vectors_sent))
                    })
                });
                rows.push(row(e, est));
            }
            Estimator::DisFone => {
                let cluster = ctx.cluster.as_mut().expect("cluster built for FONE");
                let est = theta0.and_then(|t0| {
                    let c = constants.get(e)?;
                    cluster.reset_accounting();
                    let n1 = cluster.shard(0).len();
                    timed(|| {
                        let fone = FoneConfig {
                            eta: c * rs.fone_batch as f64 / n1 as f64,
                            m: rs.fone_batch,
                            iterations: rs.iterations,
                            seed,
                        };
                        let cfg = DistributedFoneConfig {
                            fone,
                            rounds: rs.rounds,
                        };
                        let theta = run_distributed_fone(cluster, &rs.model, &t0, &cfg)?;
                        Ok((theta, cluster.ledger.vectors_sent))
                    })
                });
                rows.push(row(e, est));
            }
            Estimator::SigmaInvW | Estimator::Variance => {
                let out = inference
                    .get_or_insert_with(|| match &erm {
                        Ok(res) => run_inference(rs, &ctx.problem, &res.theta_hat, seed),
                        Err(err) => Err(format!("ERM failed: {err}")),
                    })
                    .clone();
                rows.push(match out {
                    Ok(o) => {
                        let (value, seconds) = if e == Estimator::SigmaInvW {
                            (o.sigma_inv_w_error, o.fone_seconds)
                        } else {
                            (o.sqrt_variance_ratio, o.variance_seconds)
                        };
                        ReplicationRow {
                            estimator: e,
                            replication: r,
                            err_to_truth: Some(value),
                            err_to_erm: None,
                            comm_vectors: 0,
                            seconds,
                            status: RowStatus::Ok,
                        }
                    }
                    Err(msg) => failed_row(e, &msg),
                });
            }
        }
    }
    log::info!("replication {r} done");
    (rows, tuning)
}

fn erm_status(res: &ErmResult) -> RowStatus {
    if res.degenerate {
        return warning("all responses identical; no finite minimizer");
    }
    if res.residual_sign_ok == Some(false) {
        let frac = res.negative_residual_fraction.unwrap_or(f64::NAN);
        return warning(&format!(
            "negative residual fraction {frac} outside the tau ± (p+1)/n band"
        ));
    }
    if !res.converged {
        return warning(&format!(
            "stopped after {} iterations with gradient norm {:e}",
            res.iterations, res.final_grad_norm
        ));
    }
    RowStatus::Ok
}

#[derive(Debug, Clone)]
struct InferenceOutcome {
    sigma_inv_w_error: f64,
    sqrt_variance_ratio: f64,
    fone_seconds: f64,
    variance_seconds: f64,
}

/// `Σ⁻¹w` and limiting-variance estimates at the ERM with `w = 1_p/√p`,
/// scored against the population oracle.
fn run_inference(
    rs: &ResolvedSpec,
    problem: &GeneratedProblem,
    theta_hat: &[f64],
    seed: u64,
) -> std::result::Result<InferenceOutcome, String> {
    let go = || -> Result<InferenceOutcome> {
        let data = &problem.dataset;
        let (p, n) = (data.dim(), data.len());
        let w = vec![1.0 / (p as f64).sqrt(); p];
        let settings = &rs.inference;
        let eta = settings
            .eta
            .unwrap_or_else(|| default_inference_eta(&rs.model, p, n));
        let config = FoneConfig {
            eta,
            m: settings
                .batch_size
                .unwrap_or_else(|| default_batch_size(p, n)),
            iterations: settings
                .iterations
                .unwrap_or_else(|| default_inference_iterations(eta, n)),
            seed: derive_seed(seed, stream::INFERENCE),
        };
        let tau_n = settings
            .tau_n
            .unwrap_or_else(|| default_tau_n(&rs.model, p, n));
        let start = Instant::now();
        let v = estimate_sigma_inv_w(&rs.model, data, theta_hat, &w, tau_n, &config)?;
        let fone_seconds = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let variance = estimate_limiting_variance(&rs.model, data, theta_hat, &v)?;
        let variance_seconds = start.elapsed().as_secs_f64();
        let mc = MonteCarloConfig {
            samples: settings.oracle_samples,
            seed: derive_seed(derive_seed(seed, stream::INFERENCE), 1),
        };
        let oracle = population_oracle(&rs.model, &rs.design, &problem.theta_star, mc)?;
        let truth_v = oracle.sigma_inv(&w)?;
        let truth_var = oracle.limiting_variance(&w)?;
        Ok(InferenceOutcome {
            sigma_inv_w_error: dist2(&v, &truth_v),
            sqrt_variance_ratio: (variance / truth_var).sqrt(),
            fone_seconds,
            variance_seconds,
        })
    };
    go().map_err(|e| e.to_string())
}
