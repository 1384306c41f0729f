use log::{info, warn};
use serde::Serialize;
use subsetq::bounds::{
    corrected_bias_bound, deviation_bound, excess_risk_bound, unconditional_adjustment, BoundInputs, CorrectedBounds,
    UnconditionalAdjustment,
};
use subsetq::datasets::{
    generate_mixture, load_csv, load_idx, load_weak, save_csv, save_weak, weakify, LabelColumn, LabeledDataset,
    Provenance, QueryResponseDataset,
};
use subsetq::model::Scorer;
use subsetq::rng::{derive_seed, SeededRng};
use subsetq::trainer::{dataset_objective, evaluate, sweep, train_from_scratch, SweepInputs, SweepTable, TrainConfig};
use subsetq::verify::run_battery;
use subsetq::{ClasswiseLoss, Correction, Error, Result};

use crate::config::{DataSource, RunConfig};
use crate::output::{csv_error, opt, sha256_file, OutDir};
use crate::{BoundsArgs, Cli, Command, EXIT_RUNTIME};

const DEFAULT_TEST_FRACTION: f64 = 0.2;

pub fn run(cli: &Cli, cfg: &RunConfig) -> Result<u8> {
    match &cli.command {
        Command::Gen(_) => gen(cli, cfg),
        Command::Train(_) => train(cli, cfg),
        Command::Eval(a) => eval(cli, cfg, &a.checkpoint),
        Command::Verify(_) => verify(cli, cfg),
        Command::Sweep(_) => run_sweep(cli, cfg),
        Command::Bounds(_) => bounds(cli, cfg),
    }
}

/// Creates the output directory and echoes the effective configuration.
fn prepare(cli: &Cli, cfg: &RunConfig) -> Result<OutDir> {
    let out = OutDir::create(&cli.out)?;
    out.write_text("effective_config.toml", &cfg.to_toml()?)?;
    Ok(out)
}

fn split_off_test(data: LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("test_fraction must lie in (0,1), got {fraction}")));
    }
    let n = data.n();
    let n_test = ((n as f64) * fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::Config(format!("cannot hold out {fraction} of {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let take = |idx: &[usize], tag: &str| -> Result<LabeledDataset> {
        let d = data.d();
        let mut features = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(data.row(i));
            labels.push(data.label(i));
        }
        LabeledDataset::new(features, labels, data.k(), d, format!("{}:{tag}", data.source_id()))
    };
    let (test_idx, train_idx) = order.split_at(n_test);
    Ok((take(train_idx, "train")?, take(test_idx, "test")?))
}

fn query_k(cfg: &RunConfig) -> Option<usize> {
    cfg.query.and_then(|q| q.k)
}

/// Labeled train and test data for the configured source.
fn labeled_data(cfg: &RunConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let d = &cfg.data;
    let split_seed = derive_seed(cfg.seed, 4);
    let fraction = d.test_fraction.unwrap_or(DEFAULT_TEST_FRACTION);
    let need = |p: &Option<std::path::PathBuf>, what: &str| {
        p.clone().ok_or_else(|| Error::Config(format!("source {:?} needs data.{what}", d.source)))
    };
    match d.source {
        DataSource::Desk | DataSource::Triangle | DataSource::Mixture => {
            let spec = cfg.mixture_spec()?;
            generate_mixture(&spec, &mut SeededRng::new(cfg.data_seed()))
        }
        DataSource::Idx => {
            let train = load_idx(&need(&d.images, "images")?, &need(&d.labels, "labels")?, query_k(cfg))?;
            match (&d.test_images, &d.test_labels) {
                (Some(i), Some(l)) => {
                    let test = load_idx(i, l, Some(train.k()))?;
                    Ok((train, test))
                }
                (None, None) => split_off_test(train, fraction, split_seed),
                _ => Err(Error::Config("data.test_images and data.test_labels go together".into())),
            }
        }
        DataSource::Csv => {
            let col = d.label_column()?;
            let train = load_csv(&need(&d.csv, "csv")?, col, query_k(cfg))?;
            match &d.test_csv {
                Some(p) => {
                    let test = load_csv(p, col, Some(train.k()))?;
                    Ok((train, test))
                }
                None => split_off_test(train, fraction, split_seed),
            }
        }
    }
}

#[derive(Serialize)]
struct GenSummary {
    provenance: Provenance,
    n: usize,
    d: usize,
    n1: usize,
    positive_fraction: f64,
    expected_positive_fraction: f64,
    n_test: usize,
    weak_sha256: String,
    test_sha256: String,
}

fn gen(cli: &Cli, cfg: &RunConfig) -> Result<u8> {
    cfg.check_query()?;
    let (train, test) = labeled_data(cfg)?;
    let query = cfg.query_for(train.k())?;
    let weak = weakify(&train, &query, cfg.weak_seed())?;
    let out = prepare(cli, cfg)?;
    let weak_path = out.path("weak.sqwk");
    save_weak(&weak, &weak_path)?;
    let test_path = out.path("test.csv");
    save_csv(&test, &test_path)?;
    let summary = GenSummary {
        provenance: weak.provenance().clone(),
        n: weak.n(),
        d: weak.d(),
        n1: weak.n1(),
        positive_fraction: weak.positive_fraction(),
        expected_positive_fraction: query.m() as f64 / query.k() as f64,
        n_test: test.n(),
        weak_sha256: sha256_file(&weak_path)?,
        test_sha256: sha256_file(&test_path)?,
    };
    out.write_json("gen_summary.json", &summary)?;
    info!("wrote {} weak rows and {} test rows to {}", weak.n(), test.n(), cli.out.display());
    Ok(0)
}

fn load_test_csv(path: &std::path::Path, k: usize) -> Result<LabeledDataset> {
    load_csv(path, LabelColumn::Last, Some(k))
}

/// Weak training data and an optional labeled evaluation set.
fn weak_data(cfg: &RunConfig) -> Result<(QueryResponseDataset, Option<LabeledDataset>)> {
    if let Some(path) = &cfg.data.weak {
        let weak = load_weak(path)?;
        if let Some(q) = cfg.query {
            if q.m != weak.m() || q.k.is_some_and(|k| k != weak.k()) {
                return Err(Error::Config(format!(
                    "query settings disagree with the weak file (k = {}, m = {})",
                    weak.k(),
                    weak.m()
                )));
            }
        }
        let test = cfg.data.test.as_deref().map(|p| load_test_csv(p, weak.k())).transpose()?;
        return Ok((weak, test));
    }
    cfg.check_query()?;
    let (train, test) = labeled_data(cfg)?;
    let query = cfg.query_for(train.k())?;
    let weak = weakify(&train, &query, cfg.weak_seed())?;
    let test = match &cfg.data.test {
        Some(p) => load_test_csv(p, train.k())?,
        None => test,
    };
    Ok((weak, Some(test)))
}

#[derive(Serialize)]
struct TrainSummary {
    source_id: String,
    k: usize,
    m: usize,
    n: usize,
    n1: usize,
    architecture: String,
    train: TrainConfig,
    epochs_run: usize,
    final_accuracy: Option<f64>,
    final_raw_objective: f64,
    final_corrected_objective: f64,
    negative_batch_fraction: f64,
    skipped_batches: usize,
    checkpoint_sha256: String,
}

fn train(cli: &Cli, cfg: &RunConfig) -> Result<u8> {
    let train_cfg = cfg.train_config()?;
    let arch = cfg.model.architecture()?;
    let (weak, test) = weak_data(cfg)?;
    train_cfg.validate(weak.m())?;
    let outcome = train_from_scratch(arch, &weak, &train_cfg, test.as_ref())?;
    let out = prepare(cli, cfg)?;
    let ck = out.path("checkpoint.json");
    outcome.scorer.save(&ck)?;
    let (mut w, path) = out.csv_writer("metrics.csv")?;
    w.write_record([
        "epoch",
        "learning_rate",
        "raw_objective_mean",
        "corrected_objective_mean",
        "negative_batch_fraction",
        "processed_batches",
        "skipped_batches",
        "test_accuracy",
    ])
    .map_err(|e| csv_error(&path, e))?;
    for e in &outcome.history {
        w.write_record([
            e.epoch.to_string(),
            e.learning_rate.to_string(),
            e.raw_objective_mean.to_string(),
            e.corrected_objective_mean.to_string(),
            e.negative_batch_fraction.to_string(),
            e.processed_batches.to_string(),
            e.skipped_batches.to_string(),
            opt(e.test_accuracy),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let last = outcome.history.last().expect("at least one epoch");
    if outcome.skipped_batches() > 0 {
        warn!("{} batches skipped for an empty response group", outcome.skipped_batches());
    }
    let summary = TrainSummary {
        source_id: weak.provenance().source_id.clone(),
        k: weak.k(),
        m: weak.m(),
        n: weak.n(),
        n1: weak.n1(),
        architecture: arch.to_string(),
        train: train_cfg.clone(),
        epochs_run: outcome.history.len(),
        final_accuracy: outcome.final_accuracy(),
        final_raw_objective: last.raw_objective_mean,
        final_corrected_objective: last.corrected_objective_mean,
        negative_batch_fraction: outcome.negative_batch_fraction(),
        skipped_batches: outcome.skipped_batches(),
        checkpoint_sha256: sha256_file(&ck)?,
    };
    out.write_json("summary.json", &summary)?;
    Ok(0)
}

#[derive(Serialize)]
struct WeakObjective {
    loss: ClasswiseLoss,
    correction: Correction,
    n: usize,
    n1: usize,
    raw: f64,
    corrected: f64,
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint_sha256: String,
    architecture: String,
    n: usize,
    accuracy: f64,
    weak_objective: Option<WeakObjective>,
}

fn eval(cli: &Cli, cfg: &RunConfig, checkpoint: &std::path::Path) -> Result<u8> {
    let scorer = Scorer::load(checkpoint)?;
    let test = match &cfg.data.test {
        Some(p) => load_test_csv(p, scorer.output_dim())?,
        None => labeled_data(cfg)?.1,
    };
    let accuracy = evaluate(&scorer, &test)?;
    let weak_objective = match &cfg.data.weak {
        Some(p) => {
            let weak = load_weak(p)?;
            let t = cfg.train_config()?;
            let est = dataset_objective(&scorer, &weak, &t.loss, &t.correction)?;
            Some(WeakObjective {
                loss: t.loss,
                correction: t.correction,
                n: weak.n(),
                n1: weak.n1(),
                raw: est.raw,
                corrected: est.corrected,
            })
        }
        None => None,
    };
    let out = prepare(cli, cfg)?;
    out.write_json(
        "eval.json",
        &EvalReport {
            checkpoint_sha256: sha256_file(checkpoint)?,
            architecture: scorer.architecture().to_string(),
            n: test.n(),
            accuracy,
            weak_objective,
        },
    )?;
    Ok(0)
}

fn verify(cli: &Cli, cfg: &RunConfig) -> Result<u8> {
    let vcfg = cfg.verify_config();
    let report = run_battery(&vcfg)?;
    let out = prepare(cli, cfg)?;
    out.write_json("verify.json", &report)?;
    for id in &report.identities {
        info!("{}: max residual {:e} (tolerance {:e})", id.name, id.max_residual, id.tolerance);
    }
    let failures = report.failures();
    if failures.is_empty() {
        Ok(0)
    } else {
        eprintln!("verification failed: {}", failures.join(", "));
        Ok(EXIT_RUNTIME)
    }
}

fn write_sweep_csv(out: &OutDir, table: &SweepTable) -> Result<()> {
    let (mut w, path) = out.csv_writer("sweep.csv")?;
    let header = [
        "kind",
        "axis",
        "value",
        "repeat",
        "train_seed",
        "weak_seed",
        "ok",
        "accuracy",
        "sd_accuracy",
        "raw_objective",
        "corrected_objective",
        "negative_batch_fraction",
        "skipped_batches",
        "runs",
        "failures",
        "error",
    ];
    w.write_record(header).map_err(|e| csv_error(&path, e))?;
    for r in &table.rows {
        w.write_record([
            "run".to_string(),
            r.axis.to_string(),
            r.value.clone(),
            r.repeat.to_string(),
            r.train_seed.to_string(),
            r.weak_seed.to_string(),
            r.ok.to_string(),
            opt(r.final_accuracy),
            String::new(),
            opt(r.final_raw_objective),
            opt(r.final_corrected_objective),
            opt(r.negative_batch_fraction),
            opt(r.skipped_batches),
            String::new(),
            String::new(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    for a in &table.aggregates {
        w.write_record([
            "aggregate".to_string(),
            a.axis.to_string(),
            a.value.clone(),
            String::new(),
            String::new(),
            String::new(),
            (a.failures == 0).to_string(),
            opt(a.mean_accuracy),
            opt(a.sd_accuracy),
            String::new(),
            String::new(),
            opt(a.mean_negative_batch_fraction),
            String::new(),
            a.runs.to_string(),
            a.failures.to_string(),
            String::new(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn run_sweep(cli: &Cli, cfg: &RunConfig) -> Result<u8> {
    let (values, repeats) = cfg.sweep_values()?;
    let base = cfg.train_config()?;
    let arch = cfg.model.architecture()?;
    cfg.check_query()?;
    let (train, test) = labeled_data(cfg)?;
    let query = cfg.query_for(train.k())?;
    base.validate(query.m())?;
    let jobs = cli.jobs.unwrap_or(1).max(1);
    let inputs = SweepInputs {
        train: &train,
        test: &test,
        architecture: arch,
        m: query.m(),
        weak_seed: cfg.weak_seed(),
        repeats,
        jobs,
    };
    let table = sweep(&base, &values, &inputs)?;
    let out = prepare(cli, cfg)?;
    write_sweep_csv(&out, &table)?;
    out.write_json("sweep.json", &table)?;
    let failed = table.rows.len() - table.successes();
    if failed > 0 {
        warn!("{failed} of {} sweep runs failed", table.rows.len());
    }
    Ok(if table.successes() > 0 { 0 } else { EXIT_RUNTIME })
}

pub fn apply_bounds_flags(cfg: &mut RunConfig, a: &BoundsArgs) -> Result<()> {
    let c_ell_from_loss = match &a.loss {
        Some(l) => Some(l.parse::<ClasswiseLoss>()?.bound()),
        None => None,
    };
    let mut inp = match cfg.bounds {
        Some(b) => b,
        None => {
            let k = a.k.or(query_k(cfg)).ok_or_else(|| Error::Config("bounds need --k".into()))?;
            let m = a.m.or(cfg.query.map(|q| q.m)).ok_or_else(|| Error::Config("bounds need --m".into()))?;
            let c_ell = a.c_ell.or(c_ell_from_loss).unwrap_or(cfg.train.loss.parse::<ClasswiseLoss>()?.bound());
            let mut b = BoundInputs::new(k, m, 0, 0, 0.05, c_ell);
            b.n1 = None;
            b.n0 = None;
            b.n = None;
            b
        }
    };
    crate::replace(&mut inp.k, a.k);
    crate::replace(&mut inp.m, a.m);
    crate::overwrite(&mut inp.n1, a.n1);
    crate::overwrite(&mut inp.n0, a.n0);
    crate::overwrite(&mut inp.n, a.n);
    if a.n.is_none() && (a.n1.is_some() || a.n0.is_some()) {
        if let (Some(n1), Some(n0)) = (inp.n1, inp.n0) {
            inp.n = Some(n1 + n0);
        }
    }
    crate::replace(&mut inp.delta, a.delta);
    crate::replace(&mut inp.c_ell, a.c_ell.or(c_ell_from_loss));
    crate::replace(&mut inp.rho, a.rho);
    crate::replace(&mut inp.c_r, a.c_r);
    crate::replace(&mut inp.kappa, a.kappa);
    crate::overwrite(&mut inp.zeta_f, a.zeta);
    crate::replace(&mut inp.b_f, a.b_f);
    cfg.bounds = Some(inp);
    Ok(())
}

#[derive(Serialize)]
struct BoundsReport {
    inputs: BoundInputs,
    deviation_bound: Option<f64>,
    excess_risk_bound: Option<f64>,
    unconditional: Option<UnconditionalAdjustment>,
    corrected: Option<CorrectedBounds>,
}

fn bounds(cli: &Cli, cfg: &RunConfig) -> Result<u8> {
    let inp = cfg.bounds.ok_or_else(|| Error::Config("missing [bounds] inputs".into()))?;
    inp.validate()?;
    let grouped = inp.n1.is_some() && inp.n0.is_some();
    let report = BoundsReport {
        inputs: inp,
        deviation_bound: grouped.then(|| deviation_bound(&inp)).transpose()?,
        excess_risk_bound: grouped.then(|| excess_risk_bound(&inp)).transpose()?,
        unconditional: inp.n.is_some().then(|| unconditional_adjustment(&inp)).transpose()?,
        corrected: (grouped && inp.zeta_f.is_some()).then(|| corrected_bias_bound(&inp)).transpose()?,
    };
    if report.deviation_bound.is_none() && report.unconditional.is_none() {
        return Err(Error::Config("bounds need --n1 and --n0, or --n".into()));
    }
    let out = prepare(cli, cfg)?;
    out.write_json("bounds.json", &report)?;
    Ok(0)
}
