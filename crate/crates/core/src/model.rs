//! Symmetric VAE over feature vectors, a latent classifier head and the
//! trainable per-class Gaussian prior.
//!
//! Every network exists in two forms: eager `Tensor` functions used for
//! inference and replay generation, and `BoundModel` graph functions used in
//! training. Both compute the same thing from the same parameters.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ndcore::{Graph, NodeId, SeededRng, Tensor};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;
/// Matches the posterior clamp: `log σ ∈ [-5, 5]`.
pub const LOG_SIGMA_MIN: f64 = LOGVAR_MIN / 2.0;
pub const LOG_SIGMA_MAX: f64 = LOGVAR_MAX / 2.0;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Likelihood used for the reconstruction term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconKind {
    /// Binary cross-entropy; decoder ends in a sigmoid, inputs must be in [0, 1].
    #[default]
    Bernoulli,
    /// Squared error with a linear decoder output, for raw features.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Encoder hidden widths, input side first. The decoder mirrors them.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub n_classes: usize,
    #[serde(default)]
    pub recon: ReconKind,
}

fn default_latent_dim() -> usize {
    64
}

fn default_hidden() -> Vec<usize> {
    vec![256]
}

impl ModelConfig {
    pub fn new(input_dim: usize, n_classes: usize) -> Self {
        Self {
            input_dim,
            latent_dim: default_latent_dim(),
            hidden: default_hidden(),
            n_classes,
            recon: ReconKind::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `[in, out]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Linear {
    /// Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| (2.0 * rng.uniform() - 1.0) * bound).collect() };
        let weight = Tensor::from_parts(vec![inputs, outputs], draw(inputs * outputs));
        let bias = Tensor::vector(draw(outputs));
        Self { weight, bias }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.add_row_vector(&self.bias)
    }
}

/// Affine layers with ReLU between them and no activation after the last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn init(widths: &[usize], rng: &mut SeededRng) -> Self {
        let layers = widths.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = h.relu()?;
            }
        }
        Ok(h)
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(Linear::inputs).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Linear::outputs).unwrap_or(0)
    }

    pub fn final_layer_mut(&mut self) -> &mut Linear {
        self.layers.last_mut().expect("mlp has at least one layer")
    }
}

/// Per-class prior components `N(μ^c, diag(σ^c)²)`.
///
/// Rows are allocated for every scenario class up front; a row only becomes
/// readable once its class is activated, and is initialised at that point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPriorTable {
    /// `[n_classes, D]`
    pub means: Tensor,
    /// `[n_classes, D]`, log standard deviation.
    pub log_sigma: Tensor,
    seen: BTreeSet<usize>,
}

impl ClassPriorTable {
    pub fn new(n_classes: usize, latent_dim: usize) -> Self {
        Self {
            means: Tensor::zeros(&[n_classes, latent_dim]),
            log_sigma: Tensor::zeros(&[n_classes, latent_dim]),
            seen: BTreeSet::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.means.cols()
    }

    pub fn seen(&self) -> &BTreeSet<usize> {
        &self.seen
    }

    /// Adds new classes with `μ^c ~ N(0, 0.1²)` and `log σ^c = 0`. Classes
    /// already active keep their parameters.
    pub fn activate(&mut self, classes: &[usize], rng: &mut SeededRng) -> Result<()> {
        let d = self.latent_dim();
        for &c in classes {
            if c >= self.n_classes() {
                return Err(Error::Contract(format!(
                    "class {c} outside the scenario's {} classes",
                    self.n_classes()
                )));
            }
            if self.seen.insert(c) {
                for j in 0..d {
                    self.means.data_mut()[c * d + j] = 0.1 * rng.normal();
                    self.log_sigma.data_mut()[c * d + j] = 0.0;
                }
            }
        }
        Ok(())
    }

    fn check(&self, c: usize) -> Result<()> {
        if self.seen.contains(&c) {
            Ok(())
        } else {
            Err(Error::UnseenClass(c))
        }
    }

    pub fn mean(&self, c: usize) -> Result<&[f64]> {
        self.check(c)?;
        Ok(self.means.row(c))
    }

    pub fn log_sigma(&self, c: usize) -> Result<&[f64]> {
        self.check(c)?;
        Ok(self.log_sigma.row(c))
    }

    /// Uniform class prior `p(Y = c)` over seen classes.
    pub fn class_weight(&self, c: usize) -> Result<f64> {
        self.check(c)?;
        Ok(1.0 / self.seen.len() as f64)
    }
}

/// Encoder, decoder, classifier head and prior table of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub classifier: Linear,
    pub prior: ClassPriorTable,
    /// Number of tasks trained so far.
    pub task: usize,
}

impl ModelState {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        if config.input_dim == 0 || config.latent_dim == 0 || config.n_classes == 0 {
            return Err(Error::config(
                "model",
                "input_dim, latent_dim and n_classes must be positive",
            ));
        }
        if config.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "hidden widths must be positive"));
        }
        let d = config.latent_dim;
        let mut enc_widths = vec![config.input_dim];
        enc_widths.extend(&config.hidden);
        enc_widths.push(2 * d);
        let mut dec_widths = vec![d];
        dec_widths.extend(config.hidden.iter().rev());
        dec_widths.push(config.input_dim);

        let encoder = Mlp::init(&enc_widths, rng);
        let decoder = Mlp::init(&dec_widths, rng);
        let classifier = Linear::init(d, config.n_classes, rng);
        let prior = ClassPriorTable::new(config.n_classes, d);
        Ok(Self {
            config,
            encoder,
            decoder,
            classifier,
            prior,
            task: 0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn seen(&self) -> &BTreeSet<usize> {
        self.prior.seen()
    }

    pub fn seen_vec(&self) -> Vec<usize> {
        self.prior.seen().iter().copied().collect()
    }

    fn check_input(&self, op: &'static str, x: &Tensor, width: usize) -> Result<()> {
        let (_, c) = x.dims2()?;
        if c != width {
            return Err(Error::dim(op, x.shape(), &[width]));
        }
        Ok(())
    }

    /// Posterior parameters `(μ, log σ²)` for each row of `x`, log-variance
    /// clamped to `[-10, 10]`.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input("encode", x, self.input_dim())?;
        let x = as_matrix(x)?;
        let out = self.encoder.forward(&x)?;
        let d = self.latent_dim();
        let mu = out.select_columns(&(0..d).collect::<Vec<_>>())?;
        let logvar = out
            .select_columns(&(d..2 * d).collect::<Vec<_>>())?
            .clamp(LOGVAR_MIN, LOGVAR_MAX)?;
        Ok((mu, logvar))
    }

    pub fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode(x)?.0)
    }

    /// Pre-activation decoder output.
    pub fn decode_logits(&self, z: &Tensor) -> Result<Tensor> {
        self.check_input("decode", z, self.latent_dim())?;
        self.decoder.forward(&as_matrix(z)?)
    }

    /// Reconstruction `x̂`; in `(0, 1)` under the Bernoulli likelihood.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let logits = self.decode_logits(z)?;
        match self.config.recon {
            ReconKind::Bernoulli => logits.sigmoid(),
            ReconKind::Gaussian => Ok(logits),
        }
    }

    /// Logits over all scenario classes.
    pub fn classifier_logits(&self, z: &Tensor) -> Result<Tensor> {
        self.check_input("classify", z, self.latent_dim())?;
        self.classifier.forward(&as_matrix(z)?)
    }

    /// Class probabilities over all scenario classes; classes outside `seen`
    /// get exactly zero.
    pub fn classify(&self, z: &Tensor, seen: &BTreeSet<usize>) -> Result<Tensor> {
        classify_logits(&self.classifier_logits(z)?, seen)
    }

    /// Class-incremental prediction from the posterior mean over the classes
    /// seen so far.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let seen = self.seen_vec();
        if seen.is_empty() {
            return Err(Error::EmptyClassSet);
        }
        let logits = self.classifier_logits(&self.encode_mean(x)?)?;
        Ok(logits
            .select_columns(&seen)?
            .argmax_rows()?
            .into_iter()
            .map(|j| seen[j])
            .collect())
    }

    /// One draw `z = μ^c + σ^c ⊙ ε` from class `c`'s prior component.
    pub fn sample_conditional_prior(&self, c: usize, rng: &mut SeededRng) -> Result<Vec<f64>> {
        sample_conditional_prior(c, &self.prior, rng)
    }

    /// Tensors in a fixed order shared with [`BoundModel::params`] and the
    /// optimizer state.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in self.encoder.layers.iter().chain(&self.decoder.layers) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.classifier.weight);
        out.push(&self.classifier.bias);
        out.push(&self.prior.means);
        out.push(&self.prior.log_sigma);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in self.encoder.layers.iter_mut().chain(self.decoder.layers.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.classifier.weight);
        out.push(&mut self.classifier.bias);
        out.push(&mut self.prior.means);
        out.push(&mut self.prior.log_sigma);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, _) in self.encoder.layers.iter().enumerate() {
            out.push(format!("encoder.{i}.weight"));
            out.push(format!("encoder.{i}.bias"));
        }
        for (i, _) in self.decoder.layers.iter().enumerate() {
            out.push(format!("decoder.{i}.weight"));
            out.push(format!("decoder.{i}.bias"));
        }
        out.extend(["classifier.weight", "classifier.bias", "prior.means", "prior.log_sigma"].map(String::from));
        out
    }

    /// SHA-256 over every parameter bit pattern, the seen set and the task
    /// counter.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            for &d in p.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        for &c in self.seen() {
            h.update((c as u64).to_le_bytes());
        }
        h.update((self.task as u64).to_le_bytes());
        hex::encode(h.finalize())
    }

    /// Records every parameter as a trainable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> BoundModel {
        let bind_mlp = |mlp: &Mlp, g: &mut Graph| -> Vec<BoundLinear> {
            mlp.layers
                .iter()
                .map(|l| BoundLinear {
                    weight: g.param(l.weight.clone()),
                    bias: g.param(l.bias.clone()),
                })
                .collect()
        };
        let encoder = bind_mlp(&self.encoder, g);
        let decoder = bind_mlp(&self.decoder, g);
        let classifier = BoundLinear {
            weight: g.param(self.classifier.weight.clone()),
            bias: g.param(self.classifier.bias.clone()),
        };
        let prior_means = g.param(self.prior.means.clone());
        let prior_log_sigma = g.param(self.prior.log_sigma.clone());
        BoundModel {
            latent_dim: self.latent_dim(),
            recon: self.config.recon,
            encoder,
            decoder,
            classifier,
            prior_means,
            prior_log_sigma,
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&Checkpoint::from_model(self))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.into_model(&path.display().to_string())
    }
}

fn as_matrix(x: &Tensor) -> Result<Tensor> {
    match x.shape() {
        [_, _] => Ok(x.clone()),
        [n] => x.reshape(&[1, *n]),
        _ => Err(Error::dim("as_matrix", x.shape(), &[])),
    }
}

/// Softmax over the `seen` columns of `logits`, zero elsewhere.
pub fn classify_logits(logits: &Tensor, seen: &BTreeSet<usize>) -> Result<Tensor> {
    if seen.is_empty() {
        return Err(Error::EmptyClassSet);
    }
    let (r, c) = logits.dims2()?;
    let cols: Vec<usize> = seen.iter().copied().collect();
    let probs = logits.select_columns(&cols)?.softmax_t(1.0)?;
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for (jj, &j) in cols.iter().enumerate() {
            out[i * c + j] = probs.get(i, jj);
        }
    }
    Tensor::matrix(r, c, out)
}

/// `z = μ + exp(½ log σ²) ⊙ ε` with `ε ~ N(0, I)`.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
    if mu.shape() != logvar.shape() {
        return Err(Error::dim("reparameterize", mu.shape(), logvar.shape()));
    }
    let eps = rng.normal_tensor(mu.shape());
    let sigma = logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)?.scale(0.5)?.exp()?;
    mu.add(&sigma.mul(&eps)?)
}

pub fn sample_conditional_prior(c: usize, prior: &ClassPriorTable, rng: &mut SeededRng) -> Result<Vec<f64>> {
    let mean = prior.mean(c)?;
    let log_sigma = prior.log_sigma(c)?;
    Ok(mean
        .iter()
        .zip(log_sigma)
        .map(|(&m, &ls)| m + ls.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp() * rng.normal())
        .collect())
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: NodeId,
    pub bias: NodeId,
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let xw = g.matmul(x, self.weight)?;
        g.add_bias(xw, self.bias)
    }
}

fn mlp_forward(layers: &[BoundLinear], g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        h = layer.forward(g, h)?;
        if i + 1 < layers.len() {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

/// A [`ModelState`] recorded into a [`Graph`] as trainable leaves.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub latent_dim: usize,
    pub recon: ReconKind,
    pub encoder: Vec<BoundLinear>,
    pub decoder: Vec<BoundLinear>,
    pub classifier: BoundLinear,
    pub prior_means: NodeId,
    pub prior_log_sigma: NodeId,
}

impl BoundModel {
    /// Same order as [`ModelState::params`].
    pub fn params(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for l in self.encoder.iter().chain(&self.decoder) {
            out.push(l.weight);
            out.push(l.bias);
        }
        out.extend([
            self.classifier.weight,
            self.classifier.bias,
            self.prior_means,
            self.prior_log_sigma,
        ]);
        out
    }

    pub fn encode(&self, g: &mut Graph, x: NodeId) -> Result<(NodeId, NodeId)> {
        let out = mlp_forward(&self.encoder, g, x)?;
        let d = self.latent_dim;
        let mu = g.select_columns(out, &(0..d).collect::<Vec<_>>())?;
        let raw = g.select_columns(out, &(d..2 * d).collect::<Vec<_>>())?;
        let logvar = g.clamp(raw, LOGVAR_MIN, LOGVAR_MAX)?;
        Ok((mu, logvar))
    }

    pub fn reparameterize(&self, g: &mut Graph, mu: NodeId, logvar: NodeId, eps: NodeId) -> Result<NodeId> {
        let half = g.scale(logvar, 0.5)?;
        let sigma = g.exp(half)?;
        let noise = g.mul(sigma, eps)?;
        g.add(mu, noise)
    }

    pub fn decode_logits(&self, g: &mut Graph, z: NodeId) -> Result<NodeId> {
        mlp_forward(&self.decoder, g, z)
    }

    pub fn classifier_logits(&self, g: &mut Graph, z: NodeId) -> Result<NodeId> {
        self.classifier.forward(g, z)
    }
}

#[derive(Serialize, Deserialize)]
struct HexTensor {
    name: String,
    shape: Vec<usize>,
    /// IEEE-754 bit patterns, 16 hex digits each.
    data: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    task: usize,
    seen: Vec<usize>,
    params: Vec<HexTensor>,
}

impl Checkpoint {
    fn from_model(m: &ModelState) -> Self {
        let params = m
            .param_names()
            .into_iter()
            .zip(m.params())
            .map(|(name, t)| HexTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| format!("{:016x}", v.to_bits())).collect(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: m.config.clone(),
            task: m.task,
            seen: m.seen_vec(),
            params,
        }
    }

    fn into_model(self, source: &str) -> Result<ModelState> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::format(
                source,
                None,
                format!("unsupported checkpoint format_version {}", self.format_version),
            ));
        }
        let mut model = ModelState::new(self.config, &mut SeededRng::new(0))?;
        let names = model.param_names();
        if names.len() != self.params.len() {
            return Err(Error::format(
                source,
                None,
                format!("expected {} tensors, found {}", names.len(), self.params.len()),
            ));
        }
        for ((slot, name), stored) in model.params_mut().into_iter().zip(&names).zip(self.params) {
            if &stored.name != name || stored.shape != slot.shape() {
                return Err(Error::format(
                    source,
                    Some(stored.name.clone()),
                    format!("expected {name} with shape {:?}", slot.shape()),
                ));
            }
            let data = stored
                .data
                .iter()
                .map(|h| {
                    u64::from_str_radix(h, 16)
                        .map(f64::from_bits)
                        .map_err(|e| Error::format(source, Some(stored.name.clone()), e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            *slot = Tensor::new(stored.shape, data)?;
        }
        for c in self.seen {
            if c >= model.config.n_classes {
                return Err(Error::format(source, None, format!("seen class {c} out of range")));
            }
            model.prior.seen.insert(c);
        }
        model.task = self.task;
        Ok(model)
    }
}
