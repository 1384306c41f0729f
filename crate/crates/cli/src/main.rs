mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subsetq::verify::Corruption;
use subsetq::{Error, ErrorClass};

use config::{DataSource, QuerySection, RunConfig, SweepSection, VerifySection};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "subsetq", version, about = "Learning multiclass classifiers from subset-membership queries")]
struct Cli {
    /// TOML run configuration (version = 1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Nothing is written elsewhere.
    #[arg(long, global = true, default_value = "subsetq-out")]
    out: PathBuf,
    /// Worker threads for `sweep`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate or ingest labeled data and write a weak-supervision file plus a labeled test split.
    Gen(DataArgs),
    /// Train a scorer from weak supervision.
    Train(TrainArgs),
    /// Evaluate a checkpoint on labeled data.
    Eval(EvalArgs),
    /// Run the identity and unbiasedness battery.
    Verify(VerifyArgs),
    /// Train over a grid of one hyperparameter with repeats.
    Sweep(SweepArgs),
    /// Evaluate the finite-sample bounds.
    Bounds(BoundsArgs),
}

#[derive(Debug, Args, Default)]
struct DataArgs {
    /// Number of classes.
    #[arg(long)]
    k: Option<usize>,
    /// Query subset size.
    #[arg(long)]
    m: Option<usize>,
    /// desk, triangle, mixture, idx or csv.
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// IDX image file.
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Labeled CSV input.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct TrainFlags {
    /// linear or mlp:<hidden>.
    #[arg(long)]
    arch: Option<String>,
    /// mae, mse or gce[:q=<q>].
    #[arg(long)]
    loss: Option<String>,
    /// none, nn, abs or kappa:<k>.
    #[arg(long)]
    correction: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// skip or single_term.
    #[arg(long)]
    empty_group_policy: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// Weak file from `gen`; data is generated in memory otherwise.
    #[arg(long)]
    weak: Option<PathBuf>,
    /// Labeled test CSV.
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled test CSV; the configured source's test split otherwise.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Also report the weak objective on this weak file.
    #[arg(long)]
    weak: Option<PathBuf>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    correction: Option<String>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    joints_per_pair: Option<usize>,
    #[arg(long)]
    simulation_draws: Option<u64>,
    #[arg(long)]
    monte_carlo_datasets: Option<usize>,
    #[arg(long)]
    no_monte_carlo: bool,
    /// Perturb the inversion coefficient by this amount.
    #[arg(long, conflicts_with = "corrupt_risk_weight")]
    corrupt_inversion: Option<f64>,
    /// Perturb the negative-group risk weight by this amount.
    #[arg(long)]
    corrupt_risk_weight: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    train: TrainFlags,
    /// m, batch_size, correction or loss.
    #[arg(long)]
    axis: Option<String>,
    /// Comma-separated values along the axis.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<String>>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n1: Option<usize>,
    #[arg(long)]
    n0: Option<usize>,
    /// Total sample size, for the unconditional adjustment.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    /// Loss bound; taken from --loss when absent.
    #[arg(long)]
    c_ell: Option<f64>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    c_r: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Risk lower bound of the predictor, for the corrected bias bound.
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    b_f: Option<f64>,
}

fn parse_source(s: &str) -> Result<DataSource, Error> {
    Ok(match s.trim().to_ascii_lowercase().as_str() {
        "desk" => DataSource::Desk,
        "triangle" => DataSource::Triangle,
        "mixture" => DataSource::Mixture,
        "idx" => DataSource::Idx,
        "csv" => DataSource::Csv,
        other => return Err(Error::Config(format!("unknown data source '{other}'"))),
    })
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), Error> {
        match (self.k, self.m, cfg.query.as_mut()) {
            (None, None, _) => {}
            (k, m, Some(q)) => {
                if let Some(k) = k {
                    q.k = Some(k);
                }
                if let Some(m) = m {
                    q.m = m;
                }
            }
            (k, Some(m), None) => cfg.query = Some(QuerySection { k, m }),
            (Some(_), None, None) => return Err(Error::Config("--k given without --m".into())),
        }
        let d = &mut cfg.data;
        if let Some(s) = &self.source {
            d.source = parse_source(s)?;
        }
        overwrite(&mut d.n_train, self.n_train);
        overwrite(&mut d.n_test, self.n_test);
        overwrite(&mut d.images, self.images.clone());
        overwrite(&mut d.labels, self.labels.clone());
        overwrite(&mut d.csv, self.csv.clone());
        Ok(())
    }
}

impl TrainFlags {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), Error> {
        if let Some(a) = &self.arch {
            a.parse::<subsetq::Architecture>()?;
            cfg.model.architecture = a.clone();
        }
        let t = &mut cfg.train;
        if let Some(v) = &self.loss {
            t.loss = v.clone();
        }
        if let Some(v) = &self.correction {
            t.correction = v.clone();
        }
        replace(&mut t.epochs, self.epochs);
        replace(&mut t.batch_size, self.batch_size);
        replace(&mut t.learning_rate, self.lr);
        replace(&mut t.momentum, self.momentum);
        replace(&mut t.weight_decay, self.weight_decay);
        if let Some(p) = &self.empty_group_policy {
            t.empty_group_policy = p.parse()?;
        }
        Ok(())
    }
}

fn overwrite<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn replace<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    replace(&mut cfg.seed, cli.seed);
    match &cli.command {
        Command::Gen(a) => a.apply(&mut cfg)?,
        Command::Train(a) => {
            a.data.apply(&mut cfg)?;
            a.train.apply(&mut cfg)?;
            overwrite(&mut cfg.data.weak, a.weak.clone());
            overwrite(&mut cfg.data.test, a.test.clone());
        }
        Command::Eval(a) => {
            a.data.apply(&mut cfg)?;
            overwrite(&mut cfg.data.test, a.test.clone());
            overwrite(&mut cfg.data.weak, a.weak.clone());
            if let Some(v) = &a.loss {
                cfg.train.loss = v.clone();
            }
            if let Some(v) = &a.correction {
                cfg.train.correction = v.clone();
            }
        }
        Command::Verify(a) => {
            let v = cfg.verify.get_or_insert_with(VerifySection::default);
            overwrite(&mut v.k_min, a.k_min);
            overwrite(&mut v.k_max, a.k_max);
            overwrite(&mut v.joints_per_pair, a.joints_per_pair);
            overwrite(&mut v.simulation_draws, a.simulation_draws);
            overwrite(&mut v.monte_carlo_datasets, a.monte_carlo_datasets);
            if a.no_monte_carlo {
                v.monte_carlo = Some(false);
            }
            if let Some(offset) = a.corrupt_inversion {
                v.corruption = Some(Corruption::InversionCoefficient { offset });
            }
            if let Some(offset) = a.corrupt_risk_weight {
                v.corruption = Some(Corruption::RiskWeight { offset });
            }
        }
        Command::Sweep(a) => {
            a.data.apply(&mut cfg)?;
            a.train.apply(&mut cfg)?;
            if a.axis.is_some() || a.values.is_some() || a.repeats.is_some() {
                let s = cfg.sweep.get_or_insert_with(|| SweepSection {
                    axis: String::new(),
                    values: Vec::new(),
                    repeats: 1,
                });
                replace(&mut s.axis, a.axis.clone());
                replace(&mut s.values, a.values.clone());
                replace(&mut s.repeats, a.repeats);
            }
        }
        Command::Bounds(a) => commands::apply_bounds_flags(&mut cfg, a)?,
    }
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Data => EXIT_DATA,
        ErrorClass::Runtime => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    let result = build_config(&cli).and_then(|cfg| commands::run(&cli, &cfg));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
