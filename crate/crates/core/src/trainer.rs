//! Minibatch training against the corrected query-response objective.
//!
//! Each batch forms its own groupwise means, so the raw estimate
//! `m R̂1 - (m-1) R̂0` and its correction are computed per batch.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{weakify, LabeledDataset, QueryResponseDataset};
use crate::error::{Error, Result};
use crate::losses::ClasswiseLoss;
use crate::model::{Architecture, GradientBuffer, Scorer};
use crate::query::{QueryConfig, Response};
use crate::risk::{apply_correction, correction_slope, estimate_risk, Correction, RiskEstimate};
use crate::rng::{derive_seed, SeededRng};
use crate::stats::RunningStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmptyGroupPolicy {
    /// Drop the batch and count it.
    #[default]
    Skip,
    /// Keep only the populated term, with its usual weight.
    SingleTerm,
}

impl FromStr for EmptyGroupPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "skip" => Ok(Self::Skip),
            "single_term" | "single-term" => Ok(Self::SingleTerm),
            other => Err(Error::Config(format!("unknown empty-group policy '{other}'"))),
        }
    }
}

/// Multiply the learning rate by `factor` every `step_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub step_epochs: usize,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay: Option<LrDecay>,
    pub loss: ClasswiseLoss,
    pub correction: Correction,
    pub seed: u64,
    #[serde(default)]
    pub empty_group_policy: EmptyGroupPolicy,
    /// Wall-clock timing makes metrics non-reproducible, so it is opt-in.
    #[serde(default)]
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_decay: None,
            loss: ClasswiseLoss::Mae,
            correction: Correction::Abs,
            seed: 0,
            empty_group_policy: EmptyGroupPolicy::Skip,
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 || (self.batch_size < 2 && m > 1) {
            return Err(Error::Config(format!("batch_size {} too small for m = {m}", self.batch_size)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be finite and > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0,1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay)));
        }
        if let Some(d) = self.lr_decay {
            if d.step_epochs == 0 || !(d.factor > 0.0 && d.factor <= 1.0) {
                return Err(Error::Config("lr_decay needs step_epochs >= 1 and factor in (0,1]".into()));
            }
        }
        if let Some(k) = self.correction.kappa_value() {
            Correction::kappa(k)?;
        }
        Ok(())
    }

    /// Learning rate used in each epoch (1-based epoch `e` at index `e - 1`).
    pub fn learning_rates(&self) -> Vec<f64> {
        let mut lr = self.learning_rate;
        (1..=self.epochs)
            .map(|epoch| {
                if let Some(d) = self.lr_decay {
                    if epoch > 1 && (epoch - 1) % d.step_epochs == 0 {
                        lr *= d.factor;
                    }
                }
                lr
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub raw_objective_mean: f64,
    pub corrected_objective_mean: f64,
    pub negative_batch_fraction: f64,
    pub processed_batches: usize,
    pub skipped_batches: usize,
    pub test_accuracy: Option<f64>,
    pub train_time_ms: u64,
}

/// One processed or skipped minibatch, as seen by an observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub n1: usize,
    pub n0: usize,
    /// `None` when the batch was skipped.
    pub objective: Option<BatchObjective>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchObjective {
    pub raw: f64,
    pub corrected: f64,
    pub n1: usize,
    pub n0: usize,
}

fn required_group_missing(m: usize, n1: usize, n0: usize) -> bool {
    n1 == 0 || (m > 1 && n0 == 0)
}

/// Corrected objective of the rows `indices`, adding its parameter gradient
/// to `grad` when given. Returns `Ok(None)` if the batch lacks a required
/// group under [`EmptyGroupPolicy::Skip`].
pub fn batch_objective(
    scorer: &Scorer,
    data: &QueryResponseDataset,
    indices: &[usize],
    loss: &ClasswiseLoss,
    correction: &Correction,
    policy: EmptyGroupPolicy,
    grad: Option<&mut GradientBuffer>,
) -> Result<Option<BatchObjective>> {
    if indices.is_empty() {
        return Err(Error::Training("empty batch".into()));
    }
    let m = data.m();
    let n1 = indices.iter().filter(|&&i| data.response(i).is_in()).count();
    let n0 = indices.len() - n1;
    if policy == EmptyGroupPolicy::Skip && required_group_missing(m, n1, n0) {
        return Ok(None);
    }
    let w1 = if n1 > 0 { m as f64 / n1 as f64 } else { 0.0 };
    let w0 = if n0 > 0 { (m - 1) as f64 / n0 as f64 } else { 0.0 };

    let mut forwards = Vec::with_capacity(indices.len());
    let mut raw = 0.0;
    for &i in indices {
        let fwd = scorer.forward(data.row(i))?;
        let value = loss.subset_value_unchecked(fwd.probs.as_slice(), data.subset(i));
        raw += match data.response(i) {
            Response::In => w1 * value,
            Response::Out => -w0 * value,
        };
        forwards.push(fwd);
    }
    let corrected = apply_correction(raw, correction)?;

    if let Some(grad) = grad {
        let slope = correction_slope(raw, correction);
        if slope != 0.0 {
            let mut upstream = vec![0.0; data.k()];
            for (&i, fwd) in indices.iter().zip(&forwards) {
                let weight = match data.response(i) {
                    Response::In => w1,
                    Response::Out => -w0,
                };
                if weight == 0.0 {
                    continue;
                }
                upstream.iter_mut().for_each(|u| *u = 0.0);
                loss.accumulate_subset_grad(fwd.probs.as_slice(), data.subset(i), slope * weight, &mut upstream);
                scorer.backward(fwd, &upstream, grad)?;
            }
        }
    }
    Ok(Some(BatchObjective { raw, corrected, n1, n0 }))
}

/// Whole-dataset estimate, for verification runs.
pub fn dataset_objective(
    scorer: &Scorer,
    data: &QueryResponseDataset,
    loss: &ClasswiseLoss,
    correction: &Correction,
) -> Result<RiskEstimate> {
    let samples = (0..data.n())
        .map(|i| {
            let p = scorer.predict(data.row(i))?;
            Ok((loss.subset_value_unchecked(p.as_slice(), data.subset(i)), data.response(i)))
        })
        .collect::<Result<Vec<_>>>()?;
    estimate_risk(samples, &data.query_config(), correction)
}

/// Argmax accuracy; ties go to the smallest label.
pub fn evaluate(scorer: &Scorer, data: &LabeledDataset) -> Result<f64> {
    let mut correct = 0usize;
    for i in 0..data.n() {
        let p = scorer.predict(data.row(i))?;
        if argmax(p.as_slice()) + 1 == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.n() as f64)
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub scorer: Scorer,
    pub history: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.history.last().and_then(|e| e.test_accuracy)
    }

    /// Negative-raw batches over all processed batches of the run.
    pub fn negative_batch_fraction(&self) -> f64 {
        let (neg, total) = self.history.iter().fold((0.0, 0usize), |(neg, total), e| {
            (neg + e.negative_batch_fraction * e.processed_batches as f64, total + e.processed_batches)
        });
        if total == 0 {
            0.0
        } else {
            neg / total as f64
        }
    }

    pub fn skipped_batches(&self) -> usize {
        self.history.iter().map(|e| e.skipped_batches).sum()
    }
}

pub fn train(
    scorer: Scorer,
    data: &QueryResponseDataset,
    cfg: &TrainConfig,
    eval_set: Option<&LabeledDataset>,
) -> Result<TrainOutcome> {
    train_with_observer(scorer, data, cfg, eval_set, |_| {})
}

/// Initializes a scorer from `cfg.seed` and trains it.
pub fn train_from_scratch(
    arch: Architecture,
    data: &QueryResponseDataset,
    cfg: &TrainConfig,
    eval_set: Option<&LabeledDataset>,
) -> Result<TrainOutcome> {
    let scorer = Scorer::init(arch, data.d(), data.k(), &mut SeededRng::new(derive_seed(cfg.seed, 0)))?;
    train(scorer, data, cfg, eval_set)
}

pub fn train_with_observer<F>(
    mut scorer: Scorer,
    data: &QueryResponseDataset,
    cfg: &TrainConfig,
    eval_set: Option<&LabeledDataset>,
    mut observer: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&BatchRecord),
{
    cfg.validate(data.m())?;
    if scorer.input_dim() != data.d() || scorer.output_dim() != data.k() {
        return Err(Error::Config(format!(
            "scorer maps {} -> {}, data has d = {}, k = {}",
            scorer.input_dim(),
            scorer.output_dim(),
            data.d(),
            data.k()
        )));
    }
    if let Some(eval) = eval_set {
        if eval.d() != data.d() || eval.k() != data.k() {
            return Err(Error::Config("eval set dimensions do not match the training data".into()));
        }
    }
    let mut shuffle_rng = SeededRng::new(derive_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..data.n()).collect();
    let mut velocity = vec![0.0; scorer.param_count()];
    let mut grad = GradientBuffer::zeros_like(&scorer);
    let mut history = Vec::with_capacity(cfg.epochs);

    for (e, lr) in cfg.learning_rates().into_iter().enumerate() {
        let epoch = e + 1;
        let started = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let (mut raw_sum, mut corr_sum, mut negatives, mut processed, mut skipped) = (0.0, 0.0, 0usize, 0usize, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.zero();
            let obj = batch_objective(
                &scorer,
                data,
                batch,
                &cfg.loss,
                &cfg.correction,
                cfg.empty_group_policy,
                Some(&mut grad),
            )?;
            let n1 = batch.iter().filter(|&&i| data.response(i).is_in()).count();
            observer(&BatchRecord { epoch, batch: b, n1, n0: batch.len() - n1, objective: obj });
            let Some(obj) = obj else {
                skipped += 1;
                continue;
            };
            if !obj.raw.is_finite() {
                return Err(Error::Training(format!("non-finite objective in epoch {epoch}, batch {b}")));
            }
            processed += 1;
            raw_sum += obj.raw;
            corr_sum += obj.corrected;
            if obj.raw < 0.0 {
                negatives += 1;
            }
            let params = scorer.params_mut();
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad.as_slice()) {
                *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
                *p -= lr * *v;
            }
        }
        if processed == 0 {
            return Err(Error::Training(format!(
                "epoch {epoch}: no usable batches ({skipped} skipped for an empty response group)"
            )));
        }
        let train_time_ms = if cfg.record_timing { started.elapsed().as_millis() as u64 } else { 0 };
        let test_accuracy = eval_set.map(|ev| evaluate(&scorer, ev)).transpose()?;
        history.push(EpochMetrics {
            epoch,
            learning_rate: lr,
            raw_objective_mean: raw_sum / processed as f64,
            corrected_objective_mean: corr_sum / processed as f64,
            negative_batch_fraction: negatives as f64 / processed as f64,
            processed_batches: processed,
            skipped_batches: skipped,
            test_accuracy,
            train_time_ms,
        });
    }
    Ok(TrainOutcome { scorer, history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    M,
    BatchSize,
    Correction,
    Loss,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::M => "m",
            SweepAxis::BatchSize => "batch_size",
            SweepAxis::Correction => "correction",
            SweepAxis::Loss => "loss",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" => Ok(SweepAxis::M),
            "batch_size" | "batch-size" => Ok(SweepAxis::BatchSize),
            "correction" => Ok(SweepAxis::Correction),
            "loss" => Ok(SweepAxis::Loss),
            other => Err(Error::Config(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepValue {
    M(usize),
    BatchSize(usize),
    Correction(Correction),
    Loss(ClasswiseLoss),
}

impl SweepValue {
    pub fn axis(&self) -> SweepAxis {
        match self {
            SweepValue::M(_) => SweepAxis::M,
            SweepValue::BatchSize(_) => SweepAxis::BatchSize,
            SweepValue::Correction(_) => SweepAxis::Correction,
            SweepValue::Loss(_) => SweepAxis::Loss,
        }
    }

    pub fn parse(axis: SweepAxis, s: &str) -> Result<Self> {
        let int = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("'{s}' is not a count")));
        Ok(match axis {
            SweepAxis::M => SweepValue::M(int(s)?),
            SweepAxis::BatchSize => SweepValue::BatchSize(int(s)?),
            SweepAxis::Correction => SweepValue::Correction(s.parse()?),
            SweepAxis::Loss => SweepValue::Loss(s.parse()?),
        })
    }
}

impl fmt::Display for SweepValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepValue::M(m) => write!(f, "{m}"),
            SweepValue::BatchSize(b) => write!(f, "{b}"),
            SweepValue::Correction(c) => write!(f, "{c}"),
            SweepValue::Loss(l) => write!(f, "{l}"),
        }
    }
}

/// Shared inputs of a sweep. Weak data is regenerated per repeat from
/// `derive_seed(weak_seed, repeat)`, and the training seed is
/// `derive_seed(base.seed, repeat)`, so all axis values see paired data.
#[derive(Debug, Clone, Copy)]
pub struct SweepInputs<'a> {
    pub train: &'a LabeledDataset,
    pub test: &'a LabeledDataset,
    pub architecture: Architecture,
    pub m: usize,
    pub weak_seed: u64,
    pub repeats: usize,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    pub repeat: usize,
    pub train_seed: u64,
    pub weak_seed: u64,
    pub ok: bool,
    pub final_accuracy: Option<f64>,
    pub final_raw_objective: Option<f64>,
    pub final_corrected_objective: Option<f64>,
    pub negative_batch_fraction: Option<f64>,
    pub skipped_batches: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAggregate {
    pub axis: SweepAxis,
    pub value: String,
    pub runs: usize,
    pub failures: usize,
    pub mean_accuracy: Option<f64>,
    pub sd_accuracy: Option<f64>,
    pub mean_negative_batch_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
}

impl SweepTable {
    pub fn successes(&self) -> usize {
        self.rows.iter().filter(|r| r.ok).count()
    }
}

fn validate_sweep_value(value: &SweepValue, inputs: &SweepInputs<'_>) -> Result<()> {
    match *value {
        SweepValue::M(m) => QueryConfig::new(inputs.train.k(), m).map(|_| ()),
        SweepValue::BatchSize(0) => Err(Error::Config("batch size 0".into())),
        _ => Ok(()),
    }
}

fn run_one(base: &TrainConfig, value: &SweepValue, inputs: &SweepInputs<'_>, repeat: usize) -> SweepRow {
    let train_seed = derive_seed(base.seed, repeat as u64);
    let weak_seed = derive_seed(inputs.weak_seed, repeat as u64);
    let mut cfg = base.clone();
    cfg.seed = train_seed;
    let mut m = inputs.m;
    match *value {
        SweepValue::M(v) => m = v,
        SweepValue::BatchSize(b) => cfg.batch_size = b,
        SweepValue::Correction(c) => cfg.correction = c,
        SweepValue::Loss(l) => cfg.loss = l,
    }
    let outcome = QueryConfig::new(inputs.train.k(), m)
        .and_then(|q| weakify(inputs.train, &q, weak_seed))
        .and_then(|weak| train_from_scratch(inputs.architecture, &weak, &cfg, Some(inputs.test)));
    let mut row = SweepRow {
        axis: value.axis(),
        value: value.to_string(),
        repeat,
        train_seed,
        weak_seed,
        ok: false,
        final_accuracy: None,
        final_raw_objective: None,
        final_corrected_objective: None,
        negative_batch_fraction: None,
        skipped_batches: None,
        error: None,
    };
    match outcome {
        Ok(out) => {
            let last = out.history.last().expect("at least one epoch");
            row.ok = true;
            row.final_accuracy = last.test_accuracy;
            row.final_raw_objective = Some(last.raw_objective_mean);
            row.final_corrected_objective = Some(last.corrected_objective_mean);
            row.negative_batch_fraction = Some(out.negative_batch_fraction());
            row.skipped_batches = Some(out.skipped_batches());
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs every `(value, repeat)` pair, up to `inputs.jobs` at a time. Row order
/// is value-major, repeat-minor regardless of scheduling. Failed runs are
/// recorded with their error.
pub fn sweep(base: &TrainConfig, values: &[SweepValue], inputs: &SweepInputs<'_>) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    if inputs.repeats == 0 {
        return Err(Error::Config("sweep needs at least one repeat".into()));
    }
    let axis = values[0].axis();
    if values.iter().any(|v| v.axis() != axis) {
        return Err(Error::Config("sweep values must share one axis".into()));
    }
    for v in values {
        validate_sweep_value(v, inputs)?;
    }
    let jobs: Vec<(usize, usize)> =
        (0..values.len()).flat_map(|v| (0..inputs.repeats).map(move |r| (v, r))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(inputs.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rows: Vec<SweepRow> =
        pool.install(|| jobs.par_iter().map(|&(v, r)| run_one(base, &values[v], inputs, r)).collect());
    let aggregates = values.iter().map(|v| aggregate(axis, &v.to_string(), &rows)).collect();
    Ok(SweepTable { rows, aggregates })
}

fn aggregate(axis: SweepAxis, value: &str, rows: &[SweepRow]) -> SweepAggregate {
    let members: Vec<&SweepRow> = rows.iter().filter(|r| r.value == value).collect();
    let acc: RunningStats = members.iter().filter_map(|r| r.final_accuracy).collect();
    let neg: RunningStats = members.iter().filter_map(|r| r.negative_batch_fraction).collect();
    let has = acc.count() > 0;
    SweepAggregate {
        axis,
        value: value.to_string(),
        runs: members.len(),
        failures: members.iter().filter(|r| !r.ok).count(),
        mean_accuracy: has.then(|| acc.mean()),
        sd_accuracy: has.then(|| acc.std_dev()),
        mean_negative_batch_fraction: (neg.count() > 0).then(|| neg.mean()),
    }
}
