//! Experiment reports and their CSV / plain-text renderings.
//!
//! The CSV has the columns
//! `estimator,replication,err_to_truth,err_to_erm,comm_vectors,seconds,status,spec_hash`.
//! Besides one row per (replication, estimator) it carries
//!
//! * `AGG` rows with per-estimator means and `AGG_SE` rows with their
//!   standard errors (empty when fewer than two replications succeeded);
//! * `TUNE` rows (`TUNE:<r>` when re-tuning per replication) recording each
//!   grid candidate in `err_to_truth` and its risk in `err_to_erm`.
//!
//! Missing metrics are empty fields. Floats are written in shortest
//! round-trip form so a parsed report equals the emitted one.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use super::spec::Estimator;
use crate::error::{FoneError, Result};
use crate::tuning::TuningOutcome;

pub const CSV_HEADER: &str =
    "estimator,replication,err_to_truth,err_to_erm,comm_vectors,seconds,status,spec_hash";

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Ok,
    /// Succeeded, with a diagnostic worth reading (e.g. the check-loss ERM
    /// residual-sign test failing).
    Warning(String),
    Failed(String),
}

impl RowStatus {
    /// True unless the estimator failed.
    pub fn is_ok(&self) -> bool {
        !matches!(self, RowStatus::Failed(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRow {
    pub estimator: Estimator,
    /// 1-based replication index.
    pub replication: usize,
    pub err_to_truth: Option<f64>,
    pub err_to_erm: Option<f64>,
    pub comm_vectors: u64,
    pub seconds: f64,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub estimator: Estimator,
    /// Replications that produced the estimator without error.
    pub succeeded: usize,
    pub failed: usize,
    pub mean_err_to_truth: Option<f64>,
    pub se_err_to_truth: Option<f64>,
    pub mean_err_to_erm: Option<f64>,
    pub se_err_to_erm: Option<f64>,
    pub mean_comm_vectors: Option<f64>,
    pub mean_seconds: Option<f64>,
}

impl AggregateRow {
    pub fn complete(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningRecord {
    pub target: Estimator,
    /// `None` for once-per-experiment tuning.
    pub replication: Option<usize>,
    pub outcome: TuningOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub spec_hash: String,
    pub rows: Vec<ReplicationRow>,
    pub aggregates: Vec<AggregateRow>,
    pub tuning: Vec<TuningRecord>,
}

fn mean_se(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

/// Per-estimator means and standard errors over the successful rows, in
/// the order estimators first appear.
pub fn aggregate_rows(rows: &[ReplicationRow]) -> Vec<AggregateRow> {
    let mut order: Vec<Estimator> = Vec::new();
    for r in rows {
        if !order.contains(&r.estimator) {
            order.push(r.estimator);
        }
    }
    order
        .into_iter()
        .map(|e| {
            let mine: Vec<&ReplicationRow> = rows.iter().filter(|r| r.estimator == e).collect();
            let ok: Vec<&&ReplicationRow> = mine.iter().filter(|r| r.status.is_ok()).collect();
            let truth: Vec<f64> = ok.iter().filter_map(|r| r.err_to_truth).collect();
            let erm: Vec<f64> = ok.iter().filter_map(|r| r.err_to_erm).collect();
            let comm: Vec<f64> = ok.iter().map(|r| r.comm_vectors as f64).collect();
            let secs: Vec<f64> = ok.iter().map(|r| r.seconds).collect();
            let (mean_err_to_truth, se_err_to_truth) = mean_se(&truth);
            let (mean_err_to_erm, se_err_to_erm) = mean_se(&erm);
            AggregateRow {
                estimator: e,
                succeeded: ok.len(),
                failed: mine.len() - ok.len(),
                mean_err_to_truth,
                se_err_to_truth,
                mean_err_to_erm,
                se_err_to_erm,
                mean_comm_vectors: mean_se(&comm).0,
                mean_seconds: mean_se(&secs).0,
            }
        })
        .collect()
}

impl ExperimentReport {
    pub fn new(spec_hash: String, rows: Vec<ReplicationRow>, tuning: Vec<TuningRecord>) -> Self {
        let aggregates = aggregate_rows(&rows);
        ExperimentReport {
            spec_hash,
            rows,
            aggregates,
            tuning,
        }
    }

    pub fn aggregate(&self, e: Estimator) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.estimator == e)
    }

    /// Mean error to the truth for `e`, if any replication produced one.
    pub fn mean_error(&self, e: Estimator) -> Option<f64> {
        self.aggregate(e).and_then(|a| a.mean_err_to_truth)
    }

    pub fn mean_error_to_erm(&self, e: Estimator) -> Option<f64> {
        self.aggregate(e).and_then(|a| a.mean_err_to_erm)
    }

    pub fn chosen_constant(&self, e: Estimator) -> Option<f64> {
        self.tuning
            .iter()
            .find(|t| t.target == e)
            .map(|t| t.outcome.chosen)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        let h = &self.spec_hash;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{h}",
                r.estimator,
                r.replication,
                opt(r.err_to_truth),
                opt(r.err_to_erm),
                r.comm_vectors,
                float(r.seconds),
                status_text(&r.status),
            )?;
        }
        for a in &self.aggregates {
            let status = agg_status(a);
            writeln!(
                w,
                "{},AGG,{},{},{},{},{status},{h}",
                a.estimator,
                opt(a.mean_err_to_truth),
                opt(a.mean_err_to_erm),
                opt(a.mean_comm_vectors),
                opt(a.mean_seconds),
            )?;
            writeln!(
                w,
                "{},AGG_SE,{},{},,,{status},{h}",
                a.estimator,
                opt(a.se_err_to_truth),
                opt(a.se_err_to_erm),
            )?;
        }
        for t in &self.tuning {
            let label = match t.replication {
                Some(r) => format!("TUNE:{r}"),
                None => "TUNE".to_string(),
            };
            for s in &t.outcome.scores {
                let status = match &s.failure {
                    Some(f) => format!("failed: {}", sanitize(f)),
                    None if s.value == t.outcome.chosen => "chosen".to_string(),
                    None => "candidate".to_string(),
                };
                let score = s.score.is_finite().then_some(s.score);
                writeln!(
                    w,
                    "{},{label},{},{},0,0.0,{status},{h}",
                    t.target,
                    float(s.value),
                    opt(score)
                )?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim_end() != CSV_HEADER {
            return Err(FoneError::Parse {
                line: 1,
                msg: format!("unexpected header {header:?}"),
            });
        }
        let mut hash: Option<String> = None;
        let mut rows = Vec::new();
        let mut aggregates: Vec<AggregateRow> = Vec::new();
        let mut tuning: Vec<TuningRecord> = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| FoneError::Parse { line: lineno, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(err(format!("expected 8 fields, found {}", f.len())));
            }
            match &hash {
                None => hash = Some(f[7].to_string()),
                Some(h) if h != f[7] => {
                    return Err(err(format!("mixed spec hashes {h} and {}", f[7])))
                }
                _ => {}
            }
            let estimator = Estimator::from_name(f[0])
                .ok_or_else(|| err(format!("unknown estimator {:?}", f[0])))?;
            let num = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    f64::from_str(s)
                        .map(Some)
                        .map_err(|e| err(format!("bad number {s:?}: {e}")))
                }
            };
            match f[1] {
                "AGG" => {
                    let (succeeded, failed) = parse_agg_status(f[6])
                        .ok_or_else(|| err(format!("bad status {:?}", f[6])))?;
                    aggregates.push(AggregateRow {
                        estimator,
                        succeeded,
                        failed,
                        mean_err_to_truth: num(f[2])?,
                        se_err_to_truth: None,
                        mean_err_to_erm: num(f[3])?,
                        se_err_to_erm: None,
                        mean_comm_vectors: num(f[4])?,
                        mean_seconds: num(f[5])?,
                    });
                }
                "AGG_SE" => {
                    let a = aggregates
                        .iter_mut()
                        .rev()
                        .find(|a| a.estimator == estimator)
                        .ok_or_else(|| err("AGG_SE row without a preceding AGG row".into()))?;
                    a.se_err_to_truth = num(f[2])?;
                    a.se_err_to_erm = num(f[3])?;
                }
                label if label == "TUNE" || label.starts_with("TUNE:") => {
                    let replication = match label.strip_prefix("TUNE:") {
                        Some(r) => {
                            Some(r.parse().map_err(|_| err(format!("bad label {label:?}")))?)
                        }
                        None => None,
                    };
                    let value =
                        num(f[2])?.ok_or_else(|| err("tuning row without a candidate".into()))?;
                    let score = num(f[3])?.unwrap_or(f64::INFINITY);
                    let failure = f[6].strip_prefix("failed: ").map(str::to_string);
                    let chosen = f[6] == "chosen";
                    let pos = tuning
                        .iter()
                        .position(|t| t.target == estimator && t.replication == replication);
                    let rec = match pos {
                        Some(p) => &mut tuning[p],
                        None => {
                            tuning.push(TuningRecord {
                                target: estimator,
                                replication,
                                outcome: TuningOutcome {
                                    chosen: f64::NAN,
                                    scores: Vec::new(),
                                },
                            });
                            tuning.last_mut().expect("just pushed")
                        }
                    };
                    if chosen {
                        rec.outcome.chosen = value;
                    }
                    rec.outcome.scores.push(crate::tuning::CandidateScore {
                        value,
                        score,
                        failure,
                    });
                }
                rep => {
                    let replication = rep
                        .parse()
                        .map_err(|_| err(format!("bad replication {rep:?}")))?;
                    let status = match f[6] {
                        "ok" => RowStatus::Ok,
                        s => match (s.strip_prefix("warning: "), s.strip_prefix("error: ")) {
                            (Some(m), _) => RowStatus::Warning(m.to_string()),
                            (_, Some(m)) => RowStatus::Failed(m.to_string()),
                            _ => return Err(err(format!("bad status {s:?}"))),
                        },
                    };
                    rows.push(ReplicationRow {
                        estimator,
                        replication,
                        err_to_truth: num(f[2])?,
                        err_to_erm: num(f[3])?,
                        comm_vectors: f[4]
                            .parse()
                            .map_err(|_| err(format!("bad count {:?}", f[4])))?,
                        seconds: num(f[5])?.ok_or_else(|| err("missing seconds".into()))?,
                        status,
                    });
                }
            }
        }
        Ok(ExperimentReport {
            spec_hash: hash.unwrap_or_default(),
            rows,
            aggregates,
            tuning,
        })
    }

    /// Aligned plain-text table of the aggregates, one line per estimator.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<11} {:>5} {:>12} {:>10} {:>12} {:>10} {:>10} {:>9}",
            "estimator", "reps", "err_truth", "se", "err_erm", "se", "comm_vec", "seconds"
        );
        let cell = |v: Option<f64>, w: usize| match v {
            Some(v) => format!("{v:>w$.4}"),
            None => format!("{:>w$}", "-"),
        };
        for a in &self.aggregates {
            let mut reps = a.succeeded.to_string();
            if !a.complete() {
                reps.push('*');
            }
            let _ = writeln!(
                out,
                "{:<11} {:>5} {} {} {} {} {:>10} {}",
                a.estimator.name(),
                reps,
                cell(a.mean_err_to_truth, 12),
                cell(a.se_err_to_truth, 10),
                cell(a.mean_err_to_erm, 12),
                cell(a.se_err_to_erm, 10),
                a.mean_comm_vectors
                    .map_or("-".to_string(), |c| format!("{c:.0}")),
                cell(a.mean_seconds, 9),
            );
        }
        if self.aggregates.iter().any(|a| !a.complete()) {
            let _ = writeln!(out, "* some replications failed; see the CSV status column");
        }
        for t in &self.tuning {
            let scope = t
                .replication
                .map_or(String::new(), |r| format!(" (replication {r})"));
            let _ = writeln!(out, "tuned {}{scope}: {}", t.target, t.outcome.chosen);
        }
        out
    }
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

fn sanitize(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

fn status_text(s: &RowStatus) -> String {
    match s {
        RowStatus::Ok => "ok".into(),
        RowStatus::Warning(msg) => format!("warning: {}", sanitize(msg)),
        RowStatus::Failed(msg) => format!("error: {}", sanitize(msg)),
    }
}

fn agg_status(a: &AggregateRow) -> String {
    if a.complete() {
        format!("complete {}/{}", a.succeeded, a.succeeded)
    } else {
        format!("incomplete {}/{}", a.succeeded, a.succeeded + a.failed)
    }
}

fn parse_agg_status(s: &str) -> Option<(usize, usize)> {
    let (_, frac) = s.split_once(' ')?;
    let (ok, total) = frac.split_once('/')?;
    let ok: usize = ok.parse().ok()?;
    let total: usize = total.parse().ok()?;
    (ok <= total).then_some((ok, total - ok))
}

/// Failure status whose message reads back unchanged from the CSV.
pub(crate) fn failure(msg: &str) -> RowStatus {
    RowStatus::Failed(sanitize(msg))
}

pub(crate) fn warning(msg: &str) -> RowStatus {
    RowStatus::Warning(sanitize(msg))
}
