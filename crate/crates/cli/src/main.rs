use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fone_core::harness::{
    default_inference_spec, default_random_init_spec, inference_spec, random_init_spec,
    replication_problem, run_experiment_with, run_sweep, write_sweep_csv, ExperimentReport,
    ExperimentSpec, RunOptions, SweepSpec,
};

#[derive(Parser)]
#[command(
    name = "fone",
    version,
    about = "Distributed first-order Newton-type estimation experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset of one replication as CSV (plus `<out>.theta` with the true parameter).
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Replication whose data to write.
        #[arg(long, default_value_t = 1)]
        replication: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment described by a spec file.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run an experiment for each value of one parameter.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Σ⁻¹w and limiting-variance estimates against their oracles.
    Inference {
        /// Base spec; quantile τ=0.25, n=2·10⁵, p=100 when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// SGD from a random start on the sphere of radius √p versus from the initial estimator.
    DemoRandomInit {
        /// Base spec; logistic p=200, n=10⁵ when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads for replications.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
}

impl Common {
    fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(r) = self.reps {
            spec.replications = r;
        }
    }

    fn options(&self) -> Result<RunOptions> {
        if self.threads == Some(0) {
            bail!("--threads must be at least 1");
        }
        Ok(RunOptions {
            threads: self.threads,
            replications: None,
        })
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot write {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(report: &ExperimentReport, common: &Common) -> Result<()> {
    let mut w = output(common.out.as_deref())?;
    match common.format {
        Format::Csv => report.write_csv(&mut w)?,
        Format::Table => w.write_all(report.to_table().as_bytes())?,
    }
    w.flush()?;
    Ok(())
}

fn load_or(path: Option<&Path>, default: ExperimentSpec) -> Result<ExperimentSpec> {
    match path {
        Some(p) => Ok(ExperimentSpec::load(p)?),
        None => Ok(default),
    }
}

fn run_spec(spec: &ExperimentSpec, common: &Common) -> Result<()> {
    let report = run_experiment_with(spec, &common.options()?)?;
    emit(&report, common)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Generate {
            spec,
            seed,
            replication,
            out,
        } => {
            let mut spec = ExperimentSpec::load(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let problem = replication_problem(&spec, replication)?;
            let file =
                File::create(&out).with_context(|| format!("cannot write {}", out.display()))?;
            problem.dataset.write_csv(BufWriter::new(file))?;
            let theta: Vec<String> = problem
                .theta_star
                .iter()
                .map(|v| format!("{v:?}"))
                .collect();
            let mut theta_path = out.into_os_string();
            theta_path.push(".theta");
            std::fs::write(&theta_path, theta.join("\n") + "\n")?;
        }
        Command::Run { spec, common } => {
            let mut spec = ExperimentSpec::load(&spec)?;
            common.apply(&mut spec);
            run_spec(&spec, &common)?;
        }
        Command::Sweep { spec, common } => {
            let mut sweep = SweepSpec::load(&spec)?;
            common.apply(&mut sweep.base);
            let points = run_sweep(&sweep, &common.options()?)?;
            let mut w = output(common.out.as_deref())?;
            match common.format {
                Format::Csv => write_sweep_csv(sweep.parameter, &points, &mut w)?,
                Format::Table => {
                    for pt in &points {
                        writeln!(w, "{} = {}", sweep.parameter.name(), pt.value)?;
                        w.write_all(pt.report.to_table().as_bytes())?;
                        writeln!(w)?;
                    }
                }
            }
            w.flush()?;
        }
        Command::Inference { spec, common } => {
            let mut spec = match spec {
                Some(p) => inference_spec(&ExperimentSpec::load(&p)?),
                None => default_inference_spec(),
            };
            common.apply(&mut spec);
            run_spec(&spec, &common)?;
        }
        Command::DemoRandomInit { spec, common } => {
            let base = load_or(spec.as_deref(), default_random_init_spec())?;
            let mut spec = random_init_spec(&base);
            common.apply(&mut spec);
            run_spec(&spec, &common)?;
        }
    }
    Ok(())
}
