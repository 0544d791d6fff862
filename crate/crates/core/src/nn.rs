//! Dense feed-forward networks in `f64`: forward pass, exact reverse-mode
//! gradients, Adam with global-norm clipping and Polyak averaging.
//!
//! Batches are row-major: one sample per row. Hidden layers use ReLU.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const DEFAULT_HIDDEN: [usize; 2] = [512, 256];
pub const CHECKPOINT_FORMAT: &str = "edgemig-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    #[default]
    Identity,
    /// `tanh`, bounded in (-1, 1).
    Bounded,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    pub output: OutputActivation,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>, output: OutputActivation) -> Result<Self> {
        let spec = NetworkSpec { layer_sizes, output };
        spec.validate()?;
        Ok(spec)
    }

    /// `input -> hidden... -> output`.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, act: OutputActivation) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        NetworkSpec::new(sizes, act)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::invalid("a network needs at least input and output sizes"));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }
}

/// Weight is `out x in`; bias has `out` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(inp: usize, out: usize) -> Self {
        Layer {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    fn zeros_like(&self) -> Self {
        Layer {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsDump", try_from = "ParamsDump")]
pub struct ParameterSet {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

/// Gradients share the parameter layout.
pub type Gradients = ParameterSet;

impl ParameterSet {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(ParameterSet {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            spec: self.spec.clone(),
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    fn same_shape(&self, other: &ParameterSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len()
            })
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.parameter_count());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.spec.parameter_count() {
            return Err(Error::invalid("flat parameter vector has the wrong length"));
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for w in l.weight.iter_mut() {
                *w = *it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = *it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Forward pass for one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Internal(e.to_string()))?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.output().clone())
    }

    /// Forward pass keeping every layer's activations for `backward`.
    pub fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if x.ncols() != self.spec.input_size() {
            return Err(Error::invalid(format!(
                "input width {} does not match network input {}",
                x.ncols(),
                self.spec.input_size()
            )));
        }
        let n_layers = self.layers.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(x.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&l.weight.t());
            z += &l.bias;
            if i + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            } else if self.spec.output == OutputActivation::Bounded {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Reverse-mode pass. `grad_output` is dL/d(output) per sample; gradients
    /// are summed over the batch. Returns parameter and input gradients.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: ArrayView2<'_, f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let out = cache.output();
        if grad_output.dim() != out.dim() {
            return Err(Error::invalid(format!(
                "output gradient shape {:?} does not match output {:?}",
                grad_output.dim(),
                out.dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut grads = self.zeros_like();
        let mut delta = grad_output.to_owned();
        if self.spec.output == OutputActivation::Bounded {
            Zip::from(&mut delta).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
        }
        for i in (0..n_layers).rev() {
            let input = &cache.activations[i];
            grads.layers[i].weight = delta.t().dot(input);
            grads.layers[i].bias = delta.sum_axis(Axis(0));
            let mut upstream = delta.dot(&self.layers[i].weight);
            if i > 0 {
                // ReLU derivative, with the convention 0 at the kink.
                Zip::from(&mut upstream)
                    .and(input)
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0
                        }
                    });
            }
            delta = upstream;
        }
        Ok((grads, delta))
    }
}

#[derive(Clone, Debug)]
pub struct ForwardCache {
    activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().unwrap()
    }
}

/// Uniform fan-in initialisation in `±sqrt(6 / fan_in)`, zero biases.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParameterSet> {
    let mut params = ParameterSet::zeros(spec)?;
    let mut rng = rng_from_seed(seed);
    for l in &mut params.layers {
        let bound = (6.0 / l.weight.ncols() as f64).sqrt();
        for w in l.weight.iter_mut() {
            *w = rng.random_range(-bound..=bound);
        }
    }
    Ok(params)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Gradients,
    pub v: Gradients,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam step after rescaling `grads` to global L2 norm
/// at most `clip_norm`. Returns the norm before clipping.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &Gradients,
    opt: &mut OptimizerState,
    clip_norm: f64,
) -> Result<f64> {
    if !params.same_shape(grads) || !params.same_shape(&opt.m) {
        return Err(Error::invalid("gradient shape does not match parameters"));
    }
    if !(clip_norm > 0.0) {
        return Err(Error::invalid("clip norm must be positive"));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let norm = grads.l2_norm();
    let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = opt.config;
    opt.step += 1;
    let bc1 = 1.0 - beta1.powi(opt.step as i32);
    let bc2 = 1.0 - beta2.powi(opt.step as i32);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        let g = g * scale;
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
    };
    for (((pl, gl), ml), vl) in params
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut opt.m.layers)
        .zip(&mut opt.v.layers)
    {
        Zip::from(&mut pl.weight)
            .and(&mut ml.weight)
            .and(&mut vl.weight)
            .and(&gl.weight)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut pl.bias)
            .and(&mut ml.bias)
            .and(&mut vl.bias)
            .and(&gl.bias)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(norm)
}

/// `target <- omega * online + (1 - omega) * target`.
pub fn soft_update(target: &mut ParameterSet, online: &ParameterSet, omega: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::invalid("target and online shapes differ"));
    }
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::invalid(format!("soft update rate {omega} outside [0, 1]")));
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weight)
            .and(&o.weight)
            .for_each(|t, &o| *t = omega * o + (1.0 - omega) * *t);
        Zip::from(&mut t.bias)
            .and(&o.bias)
            .for_each(|t, &o| *t = omega * o + (1.0 - omega) * *t);
    }
    Ok(())
}

/// Serialised layout of a [`ParameterSet`]: weights row-major, `out x in`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDump {
    pub spec: NetworkSpec,
    pub layers: Vec<LayerDump>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDump {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<ParameterSet> for ParamsDump {
    fn from(p: ParameterSet) -> Self {
        ParamsDump {
            spec: p.spec,
            layers: p
                .layers
                .into_iter()
                .map(|l| LayerDump {
                    rows: l.weight.nrows(),
                    cols: l.weight.ncols(),
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ParamsDump> for ParameterSet {
    type Error = Error;

    fn try_from(d: ParamsDump) -> Result<Self> {
        let mut p = ParameterSet::zeros(&d.spec)?;
        if d.layers.len() != p.layers.len() {
            return Err(Error::Parse("layer count does not match spec".into()));
        }
        for (l, dump) in p.layers.iter_mut().zip(d.layers) {
            if (dump.rows, dump.cols) != l.weight.dim() || dump.bias.len() != l.bias.len() {
                return Err(Error::Parse("layer shape does not match spec".into()));
            }
            l.weight = Array2::from_shape_vec((dump.rows, dump.cols), dump.weight)
                .map_err(|e| Error::Parse(e.to_string()))?;
            l.bias = Array1::from(dump.bias);
        }
        if !p.is_finite() {
            return Err(Error::Parse("non-finite parameter in checkpoint".into()));
        }
        Ok(p)
    }
}

/// Checkpoint file: a JSON object with a format tag, version, the seed the
/// network was initialised from and its parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub params: ParameterSet,
}

impl Checkpoint {
    pub fn new(params: ParameterSet, seed: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            seed,
            params,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        serde_json::to_writer(f, self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(path)?);
        let c: Checkpoint = serde_json::from_reader(f).map_err(|e| Error::Parse(e.to_string()))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        Ok(c)
    }
}
