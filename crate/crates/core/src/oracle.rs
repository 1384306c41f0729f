//! Exact population computations on finite instance spaces.
//!
//! A [`DiscreteJoint`] holds `p(x, y)` for finitely many points `x`. On such a
//! joint every expectation under the query mechanism is a finite sum, so the
//! response-group proportions, the response-conditioned laws `p(x, L | s)`,
//! the inversion back to `p(x, y)` and the risk rewriting can all be checked
//! to rounding error. A mechanism simulator is included as the empirical
//! counterpart of the conditional-law tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{ClasswiseLoss, ProbabilityVector};
use crate::query::{
    binomial, enumerate_in_out, enumerate_subsets, respond, sample_subset, LabelSubset, QueryConfig, Response,
};
use crate::rng::SeededRng;

const MASS_TOL: f64 = 1e-12;

/// Finite joint law `p(x, y)`: rows are instances, columns are labels `1..=k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    instances: Vec<Vec<f64>>,
    pxy: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub fn new(instances: Vec<Vec<f64>>, pxy: Vec<Vec<f64>>) -> Result<Self> {
        if pxy.is_empty() || instances.len() != pxy.len() {
            return Err(Error::Domain(format!(
                "joint needs one probability row per instance ({} instances, {} rows)",
                instances.len(),
                pxy.len()
            )));
        }
        let k = pxy[0].len();
        if k < 2 || pxy.iter().any(|r| r.len() != k) {
            return Err(Error::Domain("joint rows must all have length k >= 2".into()));
        }
        if pxy.iter().flatten().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Domain("joint probabilities must be finite and non-negative".into()));
        }
        let total: f64 = pxy.iter().flatten().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Domain(format!("joint mass sums to {total}, not 1")));
        }
        Ok(Self { instances, pxy })
    }

    /// Random joint over `n_instances` one-dimensional points. Entries are
    /// drawn from `uniform(floor, 1)` and normalized.
    pub fn random(n_instances: usize, k: usize, floor: f64, rng: &mut SeededRng) -> Self {
        let mut pxy: Vec<Vec<f64>> =
            (0..n_instances).map(|_| (0..k).map(|_| rng.uniform_range(floor, 1.0)).collect()).collect();
        let total: f64 = pxy.iter().flatten().sum();
        for p in pxy.iter_mut().flatten() {
            *p /= total;
        }
        let instances = (0..n_instances).map(|i| vec![i as f64]).collect();
        Self { instances, pxy }
    }

    pub fn n_instances(&self) -> usize {
        self.pxy.len()
    }

    pub fn k(&self) -> usize {
        self.pxy[0].len()
    }

    pub fn instances(&self) -> &[Vec<f64>] {
        &self.instances
    }

    /// `p(x, y)` for instance index `x` and 1-based label `y`.
    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.pxy[x][y - 1]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.pxy[x]
    }

    pub fn marginal(&self, x: usize) -> f64 {
        self.pxy[x].iter().sum()
    }

    fn check_cfg(&self, cfg: &QueryConfig) -> Result<()> {
        if cfg.k() != self.k() {
            return Err(Error::Domain(format!("joint has k = {}, query config has k = {}", self.k(), cfg.k())));
        }
        Ok(())
    }

    fn check_scores(&self, scores: &[ProbabilityVector]) -> Result<()> {
        if scores.len() != self.n_instances() {
            return Err(Error::Domain(format!(
                "need one prediction per instance ({} instances, {} predictions)",
                self.n_instances(),
                scores.len()
            )));
        }
        if scores.iter().any(|p| p.k() != self.k()) {
            return Err(Error::Domain("prediction length differs from k".into()));
        }
        Ok(())
    }

    /// Draws one latent `(x, y)` pair (instance index, 1-based label).
    pub fn sample(&self, rng: &mut SeededRng) -> (usize, usize) {
        let cell = rng.categorical(&self.flat());
        (cell / self.k(), cell % self.k() + 1)
    }

    fn flat(&self) -> Vec<f64> {
        self.pxy.iter().flatten().copied().collect()
    }

    /// Cumulative table for repeated sampling.
    pub fn sampler(&self) -> JointSampler {
        let mut cdf = Vec::with_capacity(self.n_instances() * self.k());
        let mut acc = 0.0;
        for p in self.pxy.iter().flatten() {
            acc += p;
            cdf.push(acc);
        }
        JointSampler { cdf, k: self.k() }
    }
}

/// Inverse-CDF sampler over the cells of a [`DiscreteJoint`].
#[derive(Debug, Clone)]
pub struct JointSampler {
    cdf: Vec<f64>,
    k: usize,
}

impl JointSampler {
    /// `(instance index, 1-based label)`.
    pub fn draw(&self, rng: &mut SeededRng) -> (usize, usize) {
        let u = rng.uniform() * self.cdf[self.cdf.len() - 1];
        let cell = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        (cell / self.k, cell % self.k + 1)
    }
}

/// `R(f) = Σ_{x,y} p(x,y) l(f(x), y)`.
pub fn oracle_supervised_risk(joint: &DiscreteJoint, scores: &[ProbabilityVector], loss: &ClasswiseLoss) -> Result<f64> {
    joint.check_scores(scores)?;
    let mut risk = 0.0;
    for (x, p) in scores.iter().enumerate() {
        for y in 1..=joint.k() {
            risk += joint.p(x, y) * loss.value(p, y)?;
        }
    }
    Ok(risk)
}

/// `P(s = σ)` computed from the joint by summing over labels and subsets.
pub fn oracle_group_proportion(joint: &DiscreteJoint, cfg: &QueryConfig, s: Response) -> Result<f64> {
    joint.check_cfg(cfg)?;
    let subsets = enumerate_subsets(cfg)?;
    let family = subsets.len() as f64;
    let mut total = 0.0;
    for y in 1..=joint.k() {
        let hits = subsets.iter().filter(|l| l.contains(y) == s.is_in()).count() as f64;
        let py: f64 = (0..joint.n_instances()).map(|x| joint.p(x, y)).sum();
        total += py * hits / family;
    }
    Ok(total)
}

/// Tables of `p(x, L | s = 1)` and `p(x, L | s = 0)` over `Q_m`, indexed
/// `[instance][subset]` with subsets in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalLaws {
    pub subsets: Vec<LabelSubset>,
    pub positive: Vec<Vec<f64>>,
    pub negative: Vec<Vec<f64>>,
}

impl ConditionalLaws {
    pub fn table(&self, s: Response) -> &[Vec<f64>] {
        match s {
            Response::In => &self.positive,
            Response::Out => &self.negative,
        }
    }

    /// `p(x, L | s)`; zero for any `L` outside `Q_m`.
    pub fn prob(&self, x: usize, subset: &LabelSubset, s: Response) -> f64 {
        match self.subsets.binary_search(subset) {
            Ok(i) => self.table(s)[x][i],
            Err(_) => 0.0,
        }
    }

    pub fn total(&self, s: Response) -> f64 {
        self.table(s).iter().flatten().sum()
    }
}

/// `p(x,L|s=1) = Σ_{y∈L} p(x,y) / C(k-1,m-1)`,
/// `p(x,L|s=0) = Σ_{y∉L} p(x,y) / C(k-1,m)`.
pub fn oracle_conditional_laws(joint: &DiscreteJoint, cfg: &QueryConfig) -> Result<ConditionalLaws> {
    joint.check_cfg(cfg)?;
    let subsets = enumerate_subsets(cfg)?;
    let d_in = binomial(cfg.k() - 1, cfg.m() - 1) as f64;
    let d_out = binomial(cfg.k() - 1, cfg.m()) as f64;
    let mut positive = Vec::with_capacity(joint.n_instances());
    let mut negative = Vec::with_capacity(joint.n_instances());
    for x in 0..joint.n_instances() {
        let px = joint.marginal(x);
        let (mut pos_row, mut neg_row) = (Vec::with_capacity(subsets.len()), Vec::with_capacity(subsets.len()));
        for l in &subsets {
            let inside: f64 = l.members().iter().map(|&y| joint.p(x, y)).sum();
            pos_row.push(inside / d_in);
            neg_row.push((px - inside) / d_out);
        }
        positive.push(pos_row);
        negative.push(neg_row);
    }
    Ok(ConditionalLaws { subsets, positive, negative })
}

/// Coefficients of the two inversion displays
/// `p(x,y) = a1 Σ_{Q^in_y} p(x,L|s=1) - b1 p(x)` and
/// `p(x,y) = a0 Σ_{Q^out_y} p(x,L|s=0) - b0 p(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionCoefficients {
    pub a1: f64,
    pub b1: f64,
    pub a0: f64,
    pub b0: f64,
}

impl InversionCoefficients {
    pub fn exact(cfg: &QueryConfig) -> Self {
        let k = cfg.k() as f64;
        let m = cfg.m() as f64;
        Self { a1: (k - 1.0) / (k - m), b1: (m - 1.0) / (k - m), a0: (k - 1.0) / m, b0: (k - m - 1.0) / m }
    }
}

/// Largest `|reconstruction - p(x,y)|` over both inversion displays.
pub fn inversion_residual(joint: &DiscreteJoint, cfg: &QueryConfig) -> Result<f64> {
    inversion_residual_with(joint, cfg, InversionCoefficients::exact(cfg))
}

pub fn inversion_residual_with(joint: &DiscreteJoint, cfg: &QueryConfig, c: InversionCoefficients) -> Result<f64> {
    let laws = oracle_conditional_laws(joint, cfg)?;
    let mut worst: f64 = 0.0;
    for y in 1..=cfg.k() {
        let (q_in, q_out) = enumerate_in_out(cfg, y)?;
        for x in 0..joint.n_instances() {
            let px = joint.marginal(x);
            let s1: f64 = q_in.iter().map(|l| laws.prob(x, l, Response::In)).sum();
            let s0: f64 = q_out.iter().map(|l| laws.prob(x, l, Response::Out)).sum();
            let from_pos = c.a1 * s1 - c.b1 * px;
            let from_neg = c.a0 * s0 - c.b0 * px;
            let target = joint.p(x, y);
            worst = worst.max((from_pos - target).abs()).max((from_neg - target).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskIdentityCheck {
    /// `R(f)` from the latent joint.
    pub lhs: f64,
    /// `m E[l̄ | s=1] - (m-1) E[l̄ | s=0]` from the conditional laws.
    pub rhs: f64,
    pub residual: f64,
}

/// Evaluates both sides of the risk rewriting exactly.
pub fn risk_rewriting_check(
    joint: &DiscreteJoint,
    scores: &[ProbabilityVector],
    loss: &ClasswiseLoss,
    cfg: &QueryConfig,
) -> Result<RiskIdentityCheck> {
    let m = cfg.m() as f64;
    risk_rewriting_check_with(joint, scores, loss, cfg, m, m - 1.0)
}

pub fn risk_rewriting_check_with(
    joint: &DiscreteJoint,
    scores: &[ProbabilityVector],
    loss: &ClasswiseLoss,
    cfg: &QueryConfig,
    pos_weight: f64,
    neg_weight: f64,
) -> Result<RiskIdentityCheck> {
    let lhs = oracle_supervised_risk(joint, scores, loss)?;
    let laws = oracle_conditional_laws(joint, cfg)?;
    let (mut e1, mut e0) = (0.0, 0.0);
    for (x, p) in scores.iter().enumerate() {
        for (i, l) in laws.subsets.iter().enumerate() {
            let lbar = loss.subset_loss(p, l)?.value;
            e1 += laws.positive[x][i] * lbar;
            e0 += laws.negative[x][i] * lbar;
        }
    }
    let rhs = pos_weight * e1 - neg_weight * e0;
    Ok(RiskIdentityCheck { lhs, rhs, residual: (lhs - rhs).abs() })
}

/// Closed-form `E[l̄_MAE | x, y, s]` under the symmetric query:
/// `s=1: 2 - (2/m)(p_y + (m-1)/(k-1) (1-p_y))`, `s=0: 2 - (2/(k-1))(1-p_y)`.
pub fn mae_conditional_expectation(p: &ProbabilityVector, y: usize, s: Response, cfg: &QueryConfig) -> Result<f64> {
    cfg.space().check(y)?;
    if p.k() != cfg.k() {
        return Err(Error::Domain("prediction length differs from k".into()));
    }
    let k = cfg.k() as f64;
    let m = cfg.m() as f64;
    let py = p.get(y);
    Ok(match s {
        Response::In => 2.0 - (2.0 / m) * (py + (m - 1.0) / (k - 1.0) * (1.0 - py)),
        Response::Out => 2.0 - (2.0 / (k - 1.0)) * (1.0 - py),
    })
}

/// `E[l̄ | x, y, s]` by averaging `l̄(p, L)` over `Q^in_y` (s=1) or `Q^out_y` (s=0),
/// on which `L` is uniform given `(y, s)`.
pub fn conditional_subset_loss_by_enumeration(
    loss: &ClasswiseLoss,
    p: &ProbabilityVector,
    y: usize,
    s: Response,
    cfg: &QueryConfig,
) -> Result<f64> {
    let (q_in, q_out) = enumerate_in_out(cfg, y)?;
    let family = if s.is_in() { q_in } else { q_out };
    let mut total = 0.0;
    for l in &family {
        total += loss.subset_loss(p, l)?.value;
    }
    Ok(total / family.len() as f64)
}

/// Counts from simulating the mechanism: draw `(x, y)` from the joint, draw
/// `L` uniformly from `Q_m`, set `s = 1{y ∈ L}`, tally `(x, L)` by response.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedCounts {
    pub positive: Vec<Vec<u64>>,
    pub negative: Vec<Vec<u64>>,
    pub n1: u64,
    pub n0: u64,
}

pub fn simulate_mechanism(
    joint: &DiscreteJoint,
    cfg: &QueryConfig,
    draws: u64,
    rng: &mut SeededRng,
) -> Result<SimulatedCounts> {
    joint.check_cfg(cfg)?;
    let family = cfg.family_size();
    if family > crate::query::ENUMERATION_CAP {
        return Err(Error::EnumerationTooLarge {
            k: cfg.k(),
            m: cfg.m(),
            count: family,
            cap: crate::query::ENUMERATION_CAP,
        });
    }
    let family = family as usize;
    let sampler = joint.sampler();
    let mut positive = vec![vec![0u64; family]; joint.n_instances()];
    let mut negative = vec![vec![0u64; family]; joint.n_instances()];
    let (mut n1, mut n0) = (0, 0);
    for _ in 0..draws {
        let (x, y) = sampler.draw(rng);
        let l = sample_subset(cfg, rng);
        let idx = cfg.rank(&l)?;
        match respond(cfg.space(), y, &l)? {
            Response::In => {
                positive[x][idx] += 1;
                n1 += 1;
            }
            Response::Out => {
                negative[x][idx] += 1;
                n0 += 1;
            }
        }
    }
    Ok(SimulatedCounts { positive, negative, n1, n0 })
}
