//! Bounded classwise losses on the probability simplex and the subset-average
//! loss `l̄(p, L) = (1/m) Σ_{j∈L} l(p, j)`.
//!
//! | kind | value                          | gradient w.r.t. `p`               |
//! |------|--------------------------------|-----------------------------------|
//! | MAE  | `2 - 2 p_j`                    | `-2 e_j`                          |
//! | MSE  | `1 - 2 p_j + Σ_c p_c²`         | `-2 e_j + 2 p`                    |
//! | GCE  | `(1 - max(p_j, ε)^q) / q`      | `-p_j^(q-1) e_j` if `p_j > ε`, else 0 |
//!
//! Losses see probabilities, never logits; the softmax lives in the model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::LabelSubset;

pub const DEFAULT_GCE_Q: f64 = 0.7;
pub const DEFAULT_GCE_EPS: f64 = 1e-6;

const SIMPLEX_TOL: f64 = 1e-10;

/// A point of the simplex `Δ^{k-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Domain("probability vector needs at least two entries".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain(format!("probabilities must lie in [0,1]: {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Domain(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// One-hot at 1-based label `j`.
    pub fn one_hot(k: usize, j: usize) -> Self {
        let mut v = vec![0.0; k];
        v[j - 1] = 1.0;
        Self(v)
    }

    /// Unchecked constructor for values produced by a softmax.
    pub(crate) fn from_softmax(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    /// Probability of 1-based label `j`.
    pub fn get(&self, j: usize) -> f64 {
        self.0[j - 1]
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    fn check_label(&self, j: usize) -> Result<()> {
        if (1..=self.k()).contains(&j) {
            Ok(())
        } else {
            Err(Error::Domain(format!("label {j} outside 1..={}", self.k())))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClasswiseLoss {
    Mae,
    Mse,
    Gce { q: f64, eps: f64 },
}

impl ClasswiseLoss {
    pub fn gce(q: f64, eps: f64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Config(format!("GCE q must lie in (0,1], got {q}")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("GCE eps must lie in (0,1), got {eps}")));
        }
        Ok(ClasswiseLoss::Gce { q, eps })
    }

    pub fn default_gce() -> Self {
        ClasswiseLoss::Gce { q: DEFAULT_GCE_Q, eps: DEFAULT_GCE_EPS }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClasswiseLoss::Mae => "mae",
            ClasswiseLoss::Mse => "mse",
            ClasswiseLoss::Gce { .. } => "gce",
        }
    }

    /// `C_l`, the supremum of the loss over the simplex.
    pub fn bound(&self) -> f64 {
        match *self {
            ClasswiseLoss::Mae | ClasswiseLoss::Mse => 2.0,
            ClasswiseLoss::Gce { q, eps } => (1.0 - eps.powf(q)) / q,
        }
    }

    pub fn value(&self, p: &ProbabilityVector, j: usize) -> Result<f64> {
        p.check_label(j)?;
        Ok(self.value_unchecked(p.as_slice(), j - 1))
    }

    /// Value at 0-based label index `idx`.
    pub(crate) fn value_unchecked(&self, p: &[f64], idx: usize) -> f64 {
        match *self {
            ClasswiseLoss::Mae => 2.0 - 2.0 * p[idx],
            ClasswiseLoss::Mse => {
                let sq: f64 = p.iter().map(|v| v * v).sum();
                1.0 - 2.0 * p[idx] + sq
            }
            ClasswiseLoss::Gce { q, eps } => (1.0 - p[idx].max(eps).powf(q)) / q,
        }
    }

    pub fn grad(&self, p: &ProbabilityVector, j: usize) -> Result<Vec<f64>> {
        p.check_label(j)?;
        let mut out = vec![0.0; p.k()];
        self.accumulate_grad(p.as_slice(), j - 1, 1.0, &mut out);
        Ok(out)
    }

    /// `out += scale * ∂l(p, idx)/∂p` for 0-based `idx`.
    pub(crate) fn accumulate_grad(&self, p: &[f64], idx: usize, scale: f64, out: &mut [f64]) {
        match *self {
            ClasswiseLoss::Mae => out[idx] -= 2.0 * scale,
            ClasswiseLoss::Mse => {
                for (o, &pc) in out.iter_mut().zip(p) {
                    *o += 2.0 * scale * pc;
                }
                out[idx] -= 2.0 * scale;
            }
            ClasswiseLoss::Gce { q, eps } => {
                if p[idx] > eps {
                    out[idx] -= scale * p[idx].powf(q - 1.0);
                }
            }
        }
    }

    pub fn subset_loss(&self, p: &ProbabilityVector, subset: &LabelSubset) -> Result<SubsetLossValue> {
        if subset.is_empty() {
            return Err(Error::Domain("subset loss of an empty subset".into()));
        }
        let per_label = subset
            .members()
            .iter()
            .map(|&j| self.value(p, j))
            .collect::<Result<Vec<_>>>()?;
        let value = per_label.iter().sum::<f64>() / per_label.len() as f64;
        Ok(SubsetLossValue { value, per_label })
    }

    /// Subset-average loss without the per-label breakdown; `subset` must be
    /// valid for `p`.
    pub(crate) fn subset_value_unchecked(&self, p: &[f64], subset: &LabelSubset) -> f64 {
        match *self {
            // MSE shares the Σp² term across members
            ClasswiseLoss::Mse => {
                let sq: f64 = p.iter().map(|v| v * v).sum();
                let mean_p = subset.members().iter().map(|&j| p[j - 1]).sum::<f64>() / subset.len() as f64;
                1.0 - 2.0 * mean_p + sq
            }
            _ => {
                subset.members().iter().map(|&j| self.value_unchecked(p, j - 1)).sum::<f64>()
                    / subset.len() as f64
            }
        }
    }

    pub fn subset_loss_grad(&self, p: &ProbabilityVector, subset: &LabelSubset) -> Result<Vec<f64>> {
        if subset.is_empty() {
            return Err(Error::Domain("subset loss of an empty subset".into()));
        }
        for &j in subset.members() {
            p.check_label(j)?;
        }
        let mut out = vec![0.0; p.k()];
        self.accumulate_subset_grad(p.as_slice(), subset, 1.0, &mut out);
        Ok(out)
    }

    pub(crate) fn accumulate_subset_grad(&self, p: &[f64], subset: &LabelSubset, scale: f64, out: &mut [f64]) {
        let w = scale / subset.len() as f64;
        for &j in subset.members() {
            self.accumulate_grad(p, j - 1, w, out);
        }
    }
}

impl fmt::Display for ClasswiseLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClasswiseLoss::Gce { q, eps } if *q != DEFAULT_GCE_Q || *eps != DEFAULT_GCE_EPS => {
                write!(f, "gce:q={q},eps={eps}")
            }
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for ClasswiseLoss {
    type Err = Error;

    /// Accepts `mae`, `mse`, `gce`, or `gce:q=<v>,eps=<v>` (either key optional).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (head, params) = match s.split_once(':') {
            Some((h, p)) => (h, Some(p)),
            None => (s.as_str(), None),
        };
        match (head, params) {
            ("mae", None) => Ok(ClasswiseLoss::Mae),
            ("mse", None) => Ok(ClasswiseLoss::Mse),
            ("gce", None) => Ok(ClasswiseLoss::default_gce()),
            ("gce", Some(params)) => {
                let mut q = DEFAULT_GCE_Q;
                let mut eps = DEFAULT_GCE_EPS;
                for part in params.split(',').filter(|p| !p.is_empty()) {
                    let (key, val) = part
                        .split_once('=')
                        .ok_or_else(|| Error::Config(format!("malformed GCE parameter '{part}'")))?;
                    let val: f64 = val
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("GCE parameter '{part}' is not a number")))?;
                    match key.trim() {
                        "q" => q = val,
                        "eps" => eps = val,
                        other => return Err(Error::Config(format!("unknown GCE parameter '{other}'"))),
                    }
                }
                ClasswiseLoss::gce(q, eps)
            }
            _ => Err(Error::Config(format!("unknown loss '{s}' (expected mae, mse, gce)"))),
        }
    }
}

/// `l̄(p, L)` with its per-member terms.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetLossValue {
    pub value: f64,
    pub per_label: Vec<f64>,
}
