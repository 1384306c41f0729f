//! Oracle battery over a `(k, m)` grid: group proportions, conditional-law
//! normalization and simulation fit, the two inversion displays, and the
//! risk rewriting for every loss. Produces a serializable report.

use serde::{Deserialize, Serialize};

use crate::bounds::{empirical_bias_check, BiasCheck};
use crate::error::{Error, Result};
use crate::losses::{ClasswiseLoss, ProbabilityVector};
use crate::oracle::{
    inversion_residual_with, oracle_conditional_laws, oracle_group_proportion, simulate_mechanism, risk_rewriting_check_with,
    DiscreteJoint, InversionCoefficients,
};
use crate::query::{group_proportion, QueryConfig, Response};
use crate::risk::Correction;
use crate::rng::{derive_seed, SeededRng};
use crate::stats::chi_square_z;

pub const EXACT_TOLERANCE: f64 = 1e-10;
/// Largest accepted chi-square z-score.
pub const SIMULATION_Z_LIMIT: f64 = 4.0;

/// Deliberate coefficient errors, for checking that failures surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum Corruption {
    /// Added to the positive-group inversion coefficient.
    InversionCoefficient { offset: f64 },
    /// Added to the negative-group weight of the risk rewriting.
    RiskWeight { offset: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub k: usize,
    pub m: usize,
    pub n_instances: usize,
    pub predictors: usize,
    pub n: usize,
    pub datasets: usize,
    pub loss: ClasswiseLoss,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { k: 5, m: 2, n_instances: 4, predictors: 5, n: 200, datasets: 10_000, loss: ClasswiseLoss::Mae }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub joints_per_pair: usize,
    pub n_instances: usize,
    /// Mechanism draws per `(k, m)` for the simulation fit.
    pub simulation_draws: u64,
    pub seed: u64,
    pub monte_carlo: Option<MonteCarloConfig>,
    #[serde(default)]
    pub corruption: Option<Corruption>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 8,
            joints_per_pair: 100,
            n_instances: 3,
            simulation_draws: 200_000,
            seed: 0,
            monte_carlo: Some(MonteCarloConfig::default()),
            corruption: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityResult {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub checks: usize,
    /// `(k, m)` of the worst case.
    pub worst_case: Option<(usize, usize)>,
    pub passed: bool,
}

impl IdentityResult {
    fn new(name: &str, tolerance: f64) -> Self {
        Self { name: name.into(), max_residual: 0.0, tolerance, checks: 0, worst_case: None, passed: true }
    }

    fn record(&mut self, residual: f64, k: usize, m: usize) {
        self.checks += 1;
        if !(residual <= self.max_residual) {
            self.max_residual = residual;
            self.worst_case = Some((k, m));
        }
        self.passed = self.max_residual < self.tolerance;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub checks: Vec<BiasCheck>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub k_min: usize,
    pub k_max: usize,
    pub joints_per_pair: usize,
    pub identities: Vec<IdentityResult>,
    pub monte_carlo: Option<MonteCarloResult>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn failures(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.identities.iter().filter(|i| !i.passed).map(|i| i.name.as_str()).collect();
        if self.monte_carlo.as_ref().is_some_and(|m| !m.passed) {
            out.push("monte_carlo_unbiasedness");
        }
        out
    }
}

/// Probability vector with entries drawn from `U(0.02, 1)` then normalized.
pub fn random_probability_vector(k: usize, rng: &mut SeededRng) -> ProbabilityVector {
    let raw: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.02, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    ProbabilityVector::new(raw.into_iter().map(|v| v / total).collect()).expect("normalized")
}

fn simulation_fit(
    joint: &DiscreteJoint,
    cfg: &QueryConfig,
    draws: u64,
    rng: &mut SeededRng,
) -> Result<f64> {
    let laws = oracle_conditional_laws(joint, cfg)?;
    let sim = simulate_mechanism(joint, cfg, draws, rng)?;
    let mut worst = f64::NEG_INFINITY;
    for (counts, table) in [(&sim.positive, &laws.positive), (&sim.negative, &laws.negative)] {
        let flat_counts: Vec<u64> = counts.iter().flatten().copied().collect();
        let flat_probs: Vec<f64> = table.iter().flatten().copied().collect();
        if flat_counts.iter().sum::<u64>() == 0 {
            continue;
        }
        let (z, _) = chi_square_z(&flat_counts, &flat_probs);
        worst = worst.max(z);
    }
    // group sizes against Binomial(draws, m/k)
    let p = group_proportion(cfg, Response::In);
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    let z_n1 = (sim.n1 as f64 - draws as f64 * p).abs() / sd;
    Ok(worst.max(z_n1))
}

pub fn run_battery(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.k_min < 2 || cfg.k_max < cfg.k_min {
        return Err(Error::Config(format!("invalid k range {}..={}", cfg.k_min, cfg.k_max)));
    }
    if cfg.joints_per_pair == 0 || cfg.n_instances == 0 {
        return Err(Error::Config("joints_per_pair and n_instances must be >= 1".into()));
    }
    let losses = [ClasswiseLoss::Mae, ClasswiseLoss::Mse, ClasswiseLoss::default_gce()];
    let mut proportions = IdentityResult::new("group_proportions", EXACT_TOLERANCE);
    let mut normalized = IdentityResult::new("conditional_laws_normalized", EXACT_TOLERANCE);
    let mut simulated = IdentityResult::new("conditional_laws_simulation_z", SIMULATION_Z_LIMIT);
    let mut inversion = IdentityResult::new("inversion", EXACT_TOLERANCE);
    let mut rewriting: Vec<IdentityResult> =
        losses.iter().map(|l| IdentityResult::new(&format!("risk_rewriting_{}", l.name()), EXACT_TOLERANCE)).collect();

    for k in cfg.k_min..=cfg.k_max {
        for m in 1..k {
            let q = QueryConfig::new(k, m)?;
            let pair_seed = derive_seed(cfg.seed, (k * 64 + m) as u64);
            let mut rng = SeededRng::new(pair_seed);
            let mut coefs = InversionCoefficients::exact(&q);
            let (pos_w, mut neg_w) = (m as f64, m as f64 - 1.0);
            match cfg.corruption {
                Some(Corruption::InversionCoefficient { offset }) => coefs.a1 += offset,
                Some(Corruption::RiskWeight { offset }) => neg_w += offset,
                None => {}
            }
            for j in 0..cfg.joints_per_pair {
                let joint = DiscreteJoint::random(cfg.n_instances, k, 0.01, &mut rng);
                let target = [group_proportion(&q, Response::In), group_proportion(&q, Response::Out)];
                let got = [
                    oracle_group_proportion(&joint, &q, Response::In)?,
                    oracle_group_proportion(&joint, &q, Response::Out)?,
                ];
                proportions.record((got[0] - target[0]).abs().max((got[1] - target[1]).abs()), k, m);

                let laws = oracle_conditional_laws(&joint, &q)?;
                let (t1, t0) = (laws.total(Response::In), laws.total(Response::Out));
                normalized.record((t1 - 1.0).abs().max((t0 - 1.0).abs()), k, m);

                inversion.record(inversion_residual_with(&joint, &q, coefs)?, k, m);

                let scores: Vec<ProbabilityVector> =
                    (0..cfg.n_instances).map(|_| random_probability_vector(k, &mut rng)).collect();
                for (loss, result) in losses.iter().zip(rewriting.iter_mut()) {
                    result.record(risk_rewriting_check_with(&joint, &scores, loss, &q, pos_w, neg_w)?.residual, k, m);
                }

                if j == 0 && cfg.simulation_draws > 0 {
                    let mut sim_rng = SeededRng::new(derive_seed(pair_seed, 1));
                    simulated.record(simulation_fit(&joint, &q, cfg.simulation_draws, &mut sim_rng)?, k, m);
                }
            }
        }
    }

    let monte_carlo = cfg.monte_carlo.as_ref().map(|mc| monte_carlo_unbiasedness(mc, cfg.seed)).transpose()?;
    let mut identities = vec![proportions, normalized];
    if simulated.checks > 0 {
        identities.push(simulated);
    }
    identities.push(inversion);
    identities.extend(rewriting);
    let passed = identities.iter().all(|i| i.passed) && monte_carlo.as_ref().is_none_or(|m| m.passed);
    Ok(VerifyReport { k_min: cfg.k_min, k_max: cfg.k_max, joints_per_pair: cfg.joints_per_pair, identities, monte_carlo, passed })
}

/// Mean of the raw estimator over many simulated datasets, one check per predictor.
pub fn monte_carlo_unbiasedness(mc: &MonteCarloConfig, seed: u64) -> Result<MonteCarloResult> {
    let q = QueryConfig::new(mc.k, mc.m)?;
    let mut rng = SeededRng::new(derive_seed(seed, 0x4d43));
    let joint = DiscreteJoint::random(mc.n_instances, mc.k, 0.01, &mut rng);
    let mut checks = Vec::with_capacity(mc.predictors);
    for _ in 0..mc.predictors {
        let scores: Vec<ProbabilityVector> =
            (0..mc.n_instances).map(|_| random_probability_vector(mc.k, &mut rng)).collect();
        checks.push(empirical_bias_check(&joint, &scores, &mc.loss, &q, &Correction::None, mc.n, mc.datasets, &mut rng)?);
    }
    let passed = checks.iter().all(|c| c.within_bound);
    Ok(MonteCarloResult { k: mc.k, m: mc.m, n: mc.n, checks, passed })
}
