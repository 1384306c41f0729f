//! Score functions `f: R^d -> R^k` composed with a softmax.
//!
//! Parameters live in one flat vector; each dense layer is a row-major
//! `out x in` weight block followed by its bias. Every mutation through
//! [`Scorer::params_mut`] bumps a generation counter so a [`Forward`] cached
//! before an update is rejected by [`Scorer::backward`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::ProbabilityVector;
use crate::rng::SeededRng;

pub const CHECKPOINT_FORMAT: &str = "subsetq-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    /// One ReLU hidden layer.
    Mlp { hidden: usize },
}

impl Architecture {
    fn layer_dims(&self, input_dim: usize, k: usize) -> Vec<(usize, usize)> {
        match *self {
            Architecture::Linear => vec![(input_dim, k)],
            Architecture::Mlp { hidden } => vec![(input_dim, hidden), (hidden, k)],
        }
    }

    pub fn param_count(&self, input_dim: usize, k: usize) -> usize {
        self.layer_dims(input_dim, k).iter().map(|&(i, o)| i * o + o).sum()
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    /// `linear` or `mlp:<hidden>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "linear" {
            return Ok(Architecture::Linear);
        }
        match s.strip_prefix("mlp:").map(str::parse::<usize>) {
            Some(Ok(h)) if h > 0 => Ok(Architecture::Mlp { hidden: h }),
            _ => Err(Error::Config(format!("unknown architecture '{s}' (expected linear or mlp:<hidden>)"))),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Architecture::Linear => f.write_str("linear"),
            Architecture::Mlp { hidden } => write!(f, "mlp:{hidden}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    offset: usize,
}

impl Layer {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.in_dim * self.out_dim
    }

    fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.in_dim * self.out_dim;
        start..start + self.out_dim
    }

    fn apply(&self, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &params[self.weights()];
        let b = &params[self.bias()];
        for (row, &bias) in w.chunks_exact(self.in_dim).zip(b) {
            out.push(bias + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>());
        }
    }
}

fn layout(arch: Architecture, input_dim: usize, k: usize) -> Vec<Layer> {
    let mut offset = 0;
    arch.layer_dims(input_dim, k)
        .into_iter()
        .map(|(in_dim, out_dim)| {
            let l = Layer { in_dim, out_dim, offset };
            offset += in_dim * out_dim + out_dim;
            l
        })
        .collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    arch: Architecture,
    input_dim: usize,
    output_dim: usize,
    layers: Vec<Layer>,
    params: Vec<f64>,
    generation: u64,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    generation: u64,
    input: Vec<f64>,
    hidden_pre: Option<Vec<f64>>,
    hidden: Option<Vec<f64>>,
    pub scores: Vec<f64>,
    pub probs: ProbabilityVector,
}

/// Gradient with the same layout as [`Scorer::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    values: Vec<f64>,
}

impl GradientBuffer {
    pub fn zeros_like(scorer: &Scorer) -> Self {
        Self { values: vec![0.0; scorer.params.len()] }
    }

    pub fn zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

impl Scorer {
    /// Glorot-uniform weights `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`; zero biases.
    pub fn init(arch: Architecture, input_dim: usize, k: usize, rng: &mut SeededRng) -> Result<Self> {
        if input_dim == 0 || k == 0 {
            return Err(Error::Config("scorer dimensions must be >= 1".into()));
        }
        if let Architecture::Mlp { hidden: 0 } = arch {
            return Err(Error::Config("hidden width must be >= 1".into()));
        }
        let layers = layout(arch, input_dim, k);
        let mut params = vec![0.0; arch.param_count(input_dim, k)];
        for l in &layers {
            let a = (6.0 / (l.in_dim + l.out_dim) as f64).sqrt();
            for w in &mut params[l.weights()] {
                *w = rng.uniform_range(-a, a);
            }
        }
        Ok(Self { arch, input_dim, output_dim: k, layers, params, generation: 0 })
    }

    /// Scorer with every parameter zero.
    pub fn zeros(arch: Architecture, input_dim: usize, k: usize) -> Self {
        Self {
            arch,
            input_dim,
            output_dim: k,
            layers: layout(arch, input_dim, k),
            params: vec![0.0; arch.param_count(input_dim, k)],
            generation: 0,
        }
    }

    pub fn from_params(arch: Architecture, input_dim: usize, k: usize, params: Vec<f64>) -> Result<Self> {
        let expected = arch.param_count(input_dim, k);
        if params.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: params.len() });
        }
        let mut s = Self::zeros(arch, input_dim, k);
        s.params = params;
        Ok(s)
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        let mut scores = Vec::with_capacity(self.output_dim);
        let (hidden_pre, hidden) = match self.layers.as_slice() {
            [out] => {
                out.apply(&self.params, x, &mut scores);
                (None, None)
            }
            [first, out] => {
                let mut pre = Vec::with_capacity(first.out_dim);
                first.apply(&self.params, x, &mut pre);
                let h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
                out.apply(&self.params, &h, &mut scores);
                (Some(pre), Some(h))
            }
            _ => unreachable!("scorers have one or two layers"),
        };
        let probs = ProbabilityVector::from_softmax(softmax(&scores));
        Ok(Forward { generation: self.generation, input: x.to_vec(), hidden_pre, hidden, scores, probs })
    }

    pub fn predict(&self, x: &[f64]) -> Result<ProbabilityVector> {
        Ok(self.forward(x)?.probs)
    }

    /// Adds `∂⟨upstream, softmax(f(x))⟩/∂θ` to `grad`.
    pub fn backward(&self, fwd: &Forward, upstream: &[f64], grad: &mut GradientBuffer) -> Result<()> {
        if fwd.generation != self.generation {
            return Err(Error::StaleForward { state: fwd.generation, current: self.generation });
        }
        if upstream.len() != self.output_dim {
            return Err(Error::DimensionMismatch { expected: self.output_dim, got: upstream.len() });
        }
        if grad.values.len() != self.params.len() {
            return Err(Error::DimensionMismatch { expected: self.params.len(), got: grad.values.len() });
        }
        // (diag(p) - p pᵀ) u
        let p = fwd.probs.as_slice();
        let dot: f64 = p.iter().zip(upstream).map(|(a, b)| a * b).sum();
        let dscores: Vec<f64> = p.iter().zip(upstream).map(|(pi, ui)| pi * (ui - dot)).collect();

        let g = &mut grad.values;
        let out = *self.layers.last().expect("at least one layer");
        let out_input: &[f64] = fwd.hidden.as_deref().unwrap_or(&fwd.input);
        accumulate_dense(g, out, out_input, &dscores);

        if let [first, _] = self.layers.as_slice() {
            let pre = fwd.hidden_pre.as_ref().expect("mlp forward keeps pre-activations");
            let w_out = &self.params[out.weights()];
            let mut dpre = vec![0.0; first.out_dim];
            for (o, &dz) in dscores.iter().enumerate() {
                if dz == 0.0 {
                    continue;
                }
                let row = &w_out[o * out.in_dim..(o + 1) * out.in_dim];
                for (d, w) in dpre.iter_mut().zip(row) {
                    *d += w * dz;
                }
            }
            for (d, &z) in dpre.iter_mut().zip(pre) {
                if z <= 0.0 {
                    *d = 0.0;
                }
            }
            accumulate_dense(g, *first, &fwd.input, &dpre);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            architecture: self.arch,
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weights: self.params[l.weights()].to_vec(),
                    bias: self.params[l.bias()].to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a checkpoint file (format '{}')", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { found: ck.version, expected: CHECKPOINT_VERSION });
        }
        let mut s = Scorer::zeros(ck.architecture, ck.input_dim, ck.output_dim);
        if ck.layers.len() != s.layers.len() {
            return Err(Error::Format(format!("expected {} layers, found {}", s.layers.len(), ck.layers.len())));
        }
        for (l, lp) in s.layers.clone().iter().zip(ck.layers) {
            if (lp.in_dim, lp.out_dim) != (l.in_dim, l.out_dim)
                || lp.weights.len() != l.in_dim * l.out_dim
                || lp.bias.len() != l.out_dim
            {
                return Err(Error::Format("layer shape does not match architecture".into()));
            }
            s.params[l.weights()].copy_from_slice(&lp.weights);
            s.params[l.bias()].copy_from_slice(&lp.bias);
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_checkpoint()).expect("checkpoint serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Scorer::from_checkpoint(ck)
    }
}

fn accumulate_dense(g: &mut [f64], layer: Layer, input: &[f64], dout: &[f64]) {
    let (wg, bg) = g[layer.offset..layer.bias().end].split_at_mut(layer.in_dim * layer.out_dim);
    for (o, &d) in dout.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        bg[o] += d;
        for (w, x) in wg[o * layer.in_dim..(o + 1) * layer.in_dim].iter_mut().zip(input) {
            *w += d * x;
        }
    }
}

/// On-disk model: architecture descriptor, dims, row-major parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}
