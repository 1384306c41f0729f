//! Groupwise empirical means, the unbiased difference-of-means estimator
//! `R̂ = m R̂1 - (m-1) R̂0`, and the `φ`-corrected objective `R̃ = φ(R̂)` with
//! `φ(z) = z` for `z >= 0` and `κ|z|` for `z < 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{QueryConfig, Response};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    /// `R̂1`, `None` when `n1 = 0`.
    pub r1_mean: Option<f64>,
    /// `R̂0`, `None` when `n0 = 0`.
    pub r0_mean: Option<f64>,
    pub n1: usize,
    pub n0: usize,
}

/// Means of the subset-average losses split by response.
pub fn groupwise_means<I>(samples: I) -> Result<GroupMeans>
where
    I: IntoIterator<Item = (f64, Response)>,
{
    let (mut sum1, mut sum0, mut n1, mut n0) = (0.0, 0.0, 0usize, 0usize);
    for (value, s) in samples {
        match s {
            Response::In => {
                sum1 += value;
                n1 += 1;
            }
            Response::Out => {
                sum0 += value;
                n0 += 1;
            }
        }
    }
    if n1 + n0 == 0 {
        return Err(Error::Domain("groupwise means of an empty sample".into()));
    }
    Ok(GroupMeans {
        r1_mean: (n1 > 0).then(|| sum1 / n1 as f64),
        r0_mean: (n0 > 0).then(|| sum0 / n0 as f64),
        n1,
        n0,
    })
}

/// Scalar correction applied to the raw estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "kappa", rename_all = "lowercase")]
pub enum Correction {
    /// Identity: the raw unbiased estimator.
    None,
    /// `κ = 0`: truncation at zero.
    Nn,
    /// `κ = 1`: absolute value.
    Abs,
    Kappa(f64),
}

impl Correction {
    pub fn kappa(value: f64) -> Result<Self> {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::Config(format!("correction κ must be finite and >= 0, got {value}")));
        }
        Ok(Correction::Kappa(value))
    }

    /// `κ` of the negative branch; `None` for the identity.
    pub fn kappa_value(&self) -> Option<f64> {
        match *self {
            Correction::None => None,
            Correction::Nn => Some(0.0),
            Correction::Abs => Some(1.0),
            Correction::Kappa(k) => Some(k),
        }
    }

    /// `L_φ = max{1, κ}`.
    pub fn lipschitz(&self) -> f64 {
        self.kappa_value().map_or(1.0, |k| k.max(1.0))
    }

    fn validated_kappa(&self) -> Result<Option<f64>> {
        match self.kappa_value() {
            Some(k) if !(k >= 0.0) => Err(Error::Config(format!("correction κ must be >= 0, got {k}"))),
            other => Ok(other),
        }
    }
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Correction::None => f.write_str("none"),
            Correction::Nn => f.write_str("nn"),
            Correction::Abs => f.write_str("abs"),
            Correction::Kappa(k) => write!(f, "kappa:{k}"),
        }
    }
}

impl FromStr for Correction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "none" | "ure" => Ok(Correction::None),
            "nn" => Ok(Correction::Nn),
            "abs" => Ok(Correction::Abs),
            _ => match s.strip_prefix("kappa:") {
                Some(v) => Correction::kappa(
                    v.parse().map_err(|_| Error::Config(format!("invalid κ value '{v}'")))?,
                ),
                None => Err(Error::Config(format!(
                    "unknown correction '{s}' (expected none, nn, abs, kappa:<v>)"
                ))),
            },
        }
    }
}

/// `φ(z)`.
pub fn apply_correction(z: f64, correction: &Correction) -> Result<f64> {
    Ok(match correction.validated_kappa()? {
        None => z,
        Some(_) if z >= 0.0 => z,
        Some(k) => k * z.abs(),
    })
}

/// `dφ/dz`, taking slope 1 at the kink `z = 0`.
pub fn correction_slope(z: f64, correction: &Correction) -> f64 {
    match correction.kappa_value() {
        Some(k) if z < 0.0 => -k,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub r1_mean: Option<f64>,
    pub r0_mean: Option<f64>,
    pub n1: usize,
    pub n0: usize,
    pub raw: f64,
    pub corrected: f64,
    pub correction_active: bool,
}

impl RiskEstimate {
    /// Estimate from precomputed group means. An empty `s = 1` group is an
    /// error; an empty `s = 0` group is one only when `m > 1`.
    pub fn from_means(means: GroupMeans, cfg: &QueryConfig, correction: &Correction) -> Result<Self> {
        let m = cfg.m() as f64;
        let r1 = means.r1_mean.ok_or(Error::EmptyResponseGroup { n1: means.n1, n0: means.n0 })?;
        let neg_term = match means.r0_mean {
            Some(r0) => (m - 1.0) * r0,
            None if cfg.m() == 1 => 0.0,
            None => return Err(Error::EmptyResponseGroup { n1: means.n1, n0: means.n0 }),
        };
        let raw = m * r1 - neg_term;
        let corrected = apply_correction(raw, correction)?;
        Ok(RiskEstimate {
            r1_mean: means.r1_mean,
            r0_mean: means.r0_mean,
            n1: means.n1,
            n0: means.n0,
            raw,
            corrected,
            correction_active: correction.kappa_value().is_some() && raw < 0.0,
        })
    }
}

/// `R̂` and `φ(R̂)` over a sample of `(l̄_i, s_i)` pairs.
pub fn estimate_risk<I>(samples: I, cfg: &QueryConfig, correction: &Correction) -> Result<RiskEstimate>
where
    I: IntoIterator<Item = (f64, Response)>,
{
    RiskEstimate::from_means(groupwise_means(samples)?, cfg, correction)
}
