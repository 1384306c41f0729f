//! Versioned TOML run configuration. Every section is optional; command-line
//! flags are applied on top and the merged result is echoed to the output
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use subsetq::bounds::BoundInputs;
use subsetq::datasets::{GaussianMixtureSpec, LabelColumn};
use subsetq::model::Architecture;
use subsetq::rng::derive_seed;
use subsetq::trainer::{EmptyGroupPolicy, LrDecay, SweepAxis, SweepValue, TrainConfig};
use subsetq::verify::{Corruption, MonteCarloConfig, VerifyConfig};
use subsetq::{ClasswiseLoss, Correction, Error, QueryConfig, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<QuerySection>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundInputs>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            query: None,
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            sweep: None,
            verify: None,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    /// Inferred from the data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// The frozen ten-class Gaussian benchmark.
    #[default]
    Desk,
    /// Three planar Gaussian classes on a triangle.
    Triangle,
    /// A mixture given in `[data.mixture]`.
    Mixture,
    Idx,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub source: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<GaussianMixtureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_csv: Option<PathBuf>,
    /// `"last"` or a 0-based column index.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    /// Held-out fraction for file sources without a separate test file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_fraction: Option<f64>,
    /// A weak file written by `gen`; replaces the source for `train`/`sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak: Option<PathBuf>,
    /// Labeled held-out csv for `train` and `eval`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

impl DataSection {
    pub fn label_column(&self) -> Result<LabelColumn> {
        match self.label_column.as_deref().map(str::trim) {
            None | Some("last") => Ok(LabelColumn::Last),
            Some(s) => s
                .parse()
                .map(LabelColumn::Index)
                .map_err(|_| Error::Config(format!("label_column must be 'last' or an index, got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `"linear"` or `"mlp:<hidden>"`.
    pub architecture: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { architecture: "linear".into() }
    }
}

impl ModelSection {
    pub fn architecture(&self) -> Result<Architecture> {
        self.architecture.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<LrDecay>,
    pub loss: String,
    pub correction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub empty_group_policy: EmptyGroupPolicy,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            lr_decay: d.lr_decay,
            loss: d.loss.to_string(),
            correction: d.correction.to_string(),
            seed: None,
            empty_group_policy: d.empty_group_policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: String,
    pub values: Vec<String>,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_min: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints_per_pair: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_instances: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation_draws: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo_datasets: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<Corruption>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "{}: config version {} is not supported (expected {CONFIG_VERSION})",
                path.display(),
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Checks the query section on its own, before any data is read.
    pub fn check_query(&self) -> Result<()> {
        match self.query {
            Some(QuerySection { k: Some(k), m }) => QueryConfig::new(k, m).map(|_| ()),
            Some(QuerySection { k: None, m: 0 }) => Err(Error::Config("query size m must be >= 1".into())),
            Some(_) => Ok(()),
            None => Err(Error::Config("missing query size: set [query] m or pass --m".into())),
        }
    }

    /// Query configuration for data with `k_data` classes.
    pub fn query_for(&self, k_data: usize) -> Result<QueryConfig> {
        self.check_query()?;
        let q = self.query.expect("checked");
        let k = q.k.unwrap_or(k_data);
        if k != k_data {
            return Err(Error::Config(format!("query k = {k} but the data has {k_data} classes")));
        }
        QueryConfig::new(k, q.m)
    }

    /// Seed for the mixture draw.
    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, 1)
    }

    /// Seed recorded in the weak file's provenance.
    pub fn weak_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            lr_decay: t.lr_decay,
            loss: t.loss.parse::<ClasswiseLoss>()?,
            correction: t.correction.parse::<Correction>()?,
            seed: t.seed.unwrap_or_else(|| derive_seed(self.seed, 3)),
            empty_group_policy: t.empty_group_policy,
            record_timing: false,
        })
    }

    pub fn sweep_values(&self) -> Result<(Vec<SweepValue>, usize)> {
        let s = self.sweep.as_ref().ok_or_else(|| Error::Config("missing [sweep] section".into()))?;
        let axis: SweepAxis = s.axis.parse()?;
        let values = s.values.iter().map(|v| SweepValue::parse(axis, v)).collect::<Result<Vec<_>>>()?;
        if values.is_empty() || s.repeats == 0 {
            return Err(Error::Config("sweep needs values and repeats >= 1".into()));
        }
        Ok((values, s.repeats))
    }

    pub fn verify_config(&self) -> VerifyConfig {
        let v = self.verify.clone().unwrap_or_default();
        let d = VerifyConfig::default();
        let monte_carlo = match v.monte_carlo {
            Some(false) => None,
            _ => Some(MonteCarloConfig {
                datasets: v.monte_carlo_datasets.unwrap_or(MonteCarloConfig::default().datasets),
                ..MonteCarloConfig::default()
            }),
        };
        VerifyConfig {
            k_min: v.k_min.unwrap_or(d.k_min),
            k_max: v.k_max.unwrap_or(d.k_max),
            joints_per_pair: v.joints_per_pair.unwrap_or(d.joints_per_pair),
            n_instances: v.n_instances.unwrap_or(d.n_instances),
            simulation_draws: v.simulation_draws.unwrap_or(d.simulation_draws),
            seed: self.seed,
            monte_carlo,
            corruption: v.corruption,
        }
    }

    pub fn mixture_spec(&self) -> Result<GaussianMixtureSpec> {
        let mut spec = match self.data.source {
            DataSource::Desk => GaussianMixtureSpec::desk_benchmark(),
            DataSource::Triangle => GaussianMixtureSpec::triangle(),
            DataSource::Mixture => self
                .data
                .mixture
                .clone()
                .ok_or_else(|| Error::Config("source 'mixture' needs a [data.mixture] table".into()))?,
            other => return Err(Error::Config(format!("source {other:?} is not a mixture"))),
        };
        if let Some(n) = self.data.n_train {
            spec.n_train = n;
        }
        if let Some(n) = self.data.n_test {
            spec.n_test = n;
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys_and_versions() {
        assert!(toml::from_str::<RunConfig>("version = 1\nbogus = 3").is_err());
        assert!(toml::from_str::<RunConfig>("version = 1\n[train]\nepochz = 3").is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "version = 2\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
        std::fs::write(&path, "seed = 2\n").unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig { query: Some(QuerySection { k: Some(10), m: 3 }), seed: 5, ..RunConfig::default() };
        cfg.sweep = Some(SweepSection { axis: "batch_size".into(), values: vec!["32".into(), "64".into()], repeats: 2 });
        cfg.train.lr_decay = Some(LrDecay { step_epochs: 10, factor: 0.5 });
        let text = cfg.to_toml().unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn train_section_parses_names() {
        let mut cfg = RunConfig::default();
        cfg.train.loss = "gce:q=0.5".into();
        cfg.train.correction = "kappa:2".into();
        let t = cfg.train_config().unwrap();
        assert_eq!(t.loss, ClasswiseLoss::gce(0.5, 1e-6).unwrap());
        assert_eq!(t.correction, Correction::Kappa(2.0));
        cfg.train.loss = "hinge".into();
        assert!(cfg.train_config().is_err());
    }
}
