//! Labeled source data and its query-response view.
//!
//! [`LabeledDataset`] is the latent supervised data. [`weakify`] applies the
//! query mechanism row by row and returns a [`QueryResponseDataset`], which has
//! no label field at all: a learner holding one cannot reach `y`.

mod csv_io;
mod idx;
mod weak_file;

pub use csv_io::{load_csv, save_csv, LabelColumn};
pub use idx::{load_idx, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use weak_file::{load_weak, save_weak, WEAK_FILE_MAGIC, WEAK_FILE_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{respond, sample_subset, LabelSubset, QueryConfig, Response};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    k: usize,
    d: usize,
    source_id: String,
}

impl LabeledDataset {
    /// `features` is row-major `n x d`; labels are 1-based.
    pub fn new(features: Vec<f64>, labels: Vec<usize>, k: usize, d: usize, source_id: impl Into<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Invariant("dataset must have at least one row".into()));
        }
        if d == 0 || features.len() != labels.len() * d {
            return Err(Error::Invariant(format!(
                "feature block has {} values, expected {} x {d}",
                features.len(),
                labels.len()
            )));
        }
        if k < 2 {
            return Err(Error::Invariant(format!("k must be >= 2, got {k}")));
        }
        if let Some(bad) = labels.iter().find(|&&y| y < 1 || y > k) {
            return Err(Error::Invariant(format!("label {bad} outside 1..={k}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("feature rows must be finite".into()));
        }
        Ok(Self { features, labels, k, d, source_id: source_id.into() })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Widens the label space (e.g. when a file does not contain every class).
    pub fn with_classes(mut self, k: usize) -> Result<Self> {
        let max = self.labels.iter().copied().max().unwrap_or(1);
        if k < max || k < 2 {
            return Err(Error::Invariant(format!("k = {k} is smaller than the largest label {max}")));
        }
        self.k = k;
        Ok(self)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &y in &self.labels {
            counts[y - 1] += 1;
        }
        counts
    }
}

/// Where a weak dataset came from; enough to regenerate it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub seed: u64,
    pub k: usize,
    pub m: usize,
}

/// Observable training data `{(x_i, L_i, s_i)}`. Features are held at `f32`
/// precision so the on-disk form round-trips exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResponseDataset {
    features: Vec<f64>,
    d: usize,
    subsets: Vec<LabelSubset>,
    responses: Vec<Response>,
    provenance: Provenance,
}

impl QueryResponseDataset {
    pub fn new(
        features: Vec<f64>,
        d: usize,
        subsets: Vec<LabelSubset>,
        responses: Vec<Response>,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = subsets.len();
        if n == 0 || responses.len() != n || d == 0 || features.len() != n * d {
            return Err(Error::Invariant("inconsistent weak dataset dimensions".into()));
        }
        let cfg = QueryConfig::new(provenance.k, provenance.m)?;
        for (i, l) in subsets.iter().enumerate() {
            if l.len() != cfg.m() {
                return Err(Error::Invariant(format!("row {i}: subset size {} != m = {}", l.len(), cfg.m())));
            }
            if l.members().iter().any(|&y| y > cfg.k()) {
                return Err(Error::Invariant(format!("row {i}: subset member outside 1..={}", cfg.k())));
            }
        }
        Ok(Self { features, d, subsets, responses, provenance })
    }

    pub fn n(&self) -> usize {
        self.subsets.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn k(&self) -> usize {
        self.provenance.k
    }

    pub fn m(&self) -> usize {
        self.provenance.m
    }

    pub fn query_config(&self) -> QueryConfig {
        QueryConfig::new(self.provenance.k, self.provenance.m).expect("validated at construction")
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn subset(&self, i: usize) -> &LabelSubset {
        &self.subsets[i]
    }

    pub fn subsets(&self) -> &[LabelSubset] {
        &self.subsets
    }

    pub fn response(&self, i: usize) -> Response {
        self.responses[i]
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn n1(&self) -> usize {
        self.responses.iter().filter(|s| s.is_in()).count()
    }

    pub fn positive_fraction(&self) -> f64 {
        self.n1() as f64 / self.n() as f64
    }
}

/// Draws `L_i` uniformly from `Q_m` for every row and sets `s_i = 1{y_i ∈ L_i}`.
/// The generator is seeded from `seed`, which is recorded in the provenance.
pub fn weakify(data: &LabeledDataset, cfg: &QueryConfig, seed: u64) -> Result<QueryResponseDataset> {
    if data.k() != cfg.k() {
        return Err(Error::Config(format!("dataset has k = {}, query config has k = {}", data.k(), cfg.k())));
    }
    let mut rng = SeededRng::new(seed);
    let mut subsets = Vec::with_capacity(data.n());
    let mut responses = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let l = sample_subset(cfg, &mut rng);
        responses.push(respond(cfg.space(), data.label(i), &l)?);
        subsets.push(l);
    }
    let features = data.features().iter().map(|&v| v as f32 as f64).collect();
    QueryResponseDataset::new(
        features,
        data.d(),
        subsets,
        responses,
        Provenance { source_id: data.source_id().to_string(), seed, k: cfg.k(), m: cfg.m() },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixtureSpec {
    pub k: usize,
    pub d: usize,
    /// `k x d` class means.
    pub means: Vec<Vec<f64>>,
    /// Isotropic noise scale; 0 places every point on its class mean.
    pub sigma: f64,
    pub class_priors: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
}

impl GaussianMixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.d == 0 {
            return Err(Error::Config("mixture needs k >= 2 and d >= 1".into()));
        }
        if self.means.len() != self.k || self.means.iter().any(|m| m.len() != self.d) {
            return Err(Error::Config("mixture means must be k x d".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if self.class_priors.len() != self.k || self.class_priors.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Config("class priors must be k non-negative values".into()));
        }
        let total: f64 = self.class_priors.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Config(format!("class priors sum to {total}, not 1")));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be positive".into()));
        }
        Ok(())
    }

    /// Three classes in the plane with means on an equilateral triangle of
    /// circumradius 2, `sigma = 0.5`, 3000 train / 1000 test.
    pub fn triangle() -> Self {
        let means = (0..3)
            .map(|c| {
                let angle = std::f64::consts::FRAC_PI_2 + c as f64 * 2.0 * std::f64::consts::PI / 3.0;
                vec![2.0 * angle.cos(), 2.0 * angle.sin()]
            })
            .collect();
        Self { k: 3, d: 2, means, sigma: 0.5, class_priors: vec![1.0 / 3.0; 3], n_train: 3000, n_test: 1000 }
    }

    /// The frozen ten-class benchmark: `d = 16`, means at `DESK_MEAN_SCALE`
    /// times orthonormal directions (Gram-Schmidt of seeded Gaussian vectors),
    /// `sigma = DESK_SIGMA`, uniform priors.
    pub fn desk_benchmark() -> Self {
        let (k, d) = (10, 16);
        let mut rng = SeededRng::new(DESK_MEANS_SEED);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
        while basis.len() < k {
            let mut v: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= dot * c);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-6 {
                basis.push(v.into_iter().map(|a| a / norm).collect());
            }
        }
        let means = basis.into_iter().map(|v| v.into_iter().map(|a| a * DESK_MEAN_SCALE).collect()).collect();
        Self {
            k,
            d,
            means,
            sigma: DESK_SIGMA,
            class_priors: vec![0.1; k],
            n_train: DESK_N_TRAIN,
            n_test: DESK_N_TEST,
        }
    }
}

pub const DESK_MEANS_SEED: u64 = 0x5eed_0010;
pub const DESK_MEAN_SCALE: f64 = 1.0;
pub const DESK_SIGMA: f64 = 0.275;
pub const DESK_N_TRAIN: usize = 1000;
pub const DESK_N_TEST: usize = 2000;

/// Samples train then test rows from the mixture, so the two never share a draw.
pub fn generate_mixture(spec: &GaussianMixtureSpec, rng: &mut SeededRng) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let mut draw = |n: usize| -> Result<LabeledDataset> {
        let mut features = Vec::with_capacity(n * spec.d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.categorical(&spec.class_priors);
            labels.push(c + 1);
            for &mu in &spec.means[c] {
                let noise = rng.standard_normal();
                features.push(if spec.sigma == 0.0 { mu } else { mu + spec.sigma * noise });
            }
        }
        LabeledDataset::new(features, labels, spec.k, spec.d, "mixture")
    };
    let train = draw(spec.n_train)?;
    let test = draw(spec.n_test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_dataset_validation() {
        assert!(LabeledDataset::new(vec![0.0, 1.0], vec![1, 3], 2, 1, "t").is_err());
        assert!(LabeledDataset::new(vec![0.0], vec![1, 2], 2, 1, "t").is_err());
        assert!(LabeledDataset::new(vec![f64::NAN, 1.0], vec![1, 2], 2, 1, "t").is_err());
        assert!(LabeledDataset::new(vec![], vec![], 2, 1, "t").is_err());
        let ds = LabeledDataset::new(vec![0.0, 1.0], vec![1, 2], 2, 1, "t").unwrap();
        assert_eq!(ds.class_counts(), vec![1, 1]);
        assert!(ds.clone().with_classes(1).is_err());
        assert_eq!(ds.with_classes(5).unwrap().k(), 5);
    }

    #[test]
    fn mixture_class_counts_are_multinomial() {
        let mut spec = GaussianMixtureSpec::desk_benchmark();
        spec.n_train = 10_000;
        spec.n_test = 10;
        let (train, _) = generate_mixture(&spec, &mut SeededRng::new(4)).unwrap();
        let n: f64 = 10_000.0;
        let p = 0.1;
        let sd = (n * p * (1.0 - p)).sqrt();
        for c in train.class_counts() {
            assert!((c as f64 - n * p).abs() < 4.0 * sd, "{c}");
        }
    }

    #[test]
    fn zero_sigma_puts_points_on_means() {
        let mut spec = GaussianMixtureSpec::triangle();
        spec.sigma = 0.0;
        spec.n_train = 50;
        spec.n_test = 5;
        let (train, _) = generate_mixture(&spec, &mut SeededRng::new(1)).unwrap();
        for i in 0..train.n() {
            assert_eq!(train.row(i), spec.means[train.label(i) - 1].as_slice());
        }
    }

    #[test]
    fn mixture_is_deterministic() {
        let spec = GaussianMixtureSpec::triangle();
        let a = generate_mixture(&spec, &mut SeededRng::new(9)).unwrap();
        let b = generate_mixture(&spec, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixture_spec_validation() {
        let mut spec = GaussianMixtureSpec::triangle();
        spec.class_priors = vec![0.5, 0.5, 0.5];
        assert!(spec.validate().is_err());
        let mut spec = GaussianMixtureSpec::triangle();
        spec.sigma = -1.0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn desk_means_are_orthogonal() {
        let spec = GaussianMixtureSpec::desk_benchmark();
        for i in 0..spec.k {
            for j in 0..spec.k {
                let dot: f64 = spec.means[i].iter().zip(&spec.means[j]).map(|(a, b)| a * b).sum();
                let expect = if i == j { DESK_MEAN_SCALE * DESK_MEAN_SCALE } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weakify_response_matches_membership() {
        let spec = GaussianMixtureSpec::triangle();
        let (train, _) = generate_mixture(&spec, &mut SeededRng::new(2)).unwrap();
        let cfg = QueryConfig::new(3, 2).unwrap();
        let weak = weakify(&train, &cfg, 17).unwrap();
        assert_eq!(weak.n(), train.n());
        for i in 0..train.n() {
            assert_eq!(weak.subset(i).contains(train.label(i)), weak.response(i).is_in());
            assert_eq!(weak.subset(i).len(), 2);
        }
        assert_eq!(weak, weakify(&train, &cfg, 17).unwrap());
    }

    #[test]
    fn weakify_largest_subset_negatives_are_excluded_label() {
        let mut spec = GaussianMixtureSpec::desk_benchmark();
        spec.n_train = 20_000;
        let (train, _) = generate_mixture(&spec, &mut SeededRng::new(6)).unwrap();
        let cfg = QueryConfig::new(10, 9).unwrap();
        let weak = weakify(&train, &cfg, 3).unwrap();
        for i in 0..weak.n() {
            let excluded = (1..=10).find(|&y| !weak.subset(i).contains(y)).unwrap();
            assert_eq!(weak.response(i) == Response::Out, excluded == train.label(i));
        }
        let p0 = 1.0 - weak.positive_fraction();
        let sd = (0.1 * 0.9 / 20_000.0f64).sqrt();
        assert!((p0 - 0.1).abs() < 4.0 * sd);
    }

    #[test]
    fn weakify_checks_class_count() {
        let (train, _) = generate_mixture(&GaussianMixtureSpec::triangle(), &mut SeededRng::new(1)).unwrap();
        assert!(matches!(weakify(&train, &QueryConfig::new(4, 2).unwrap(), 0), Err(Error::Config(_))));
    }
}
