//! Recursive hierarchical model: each stage runs an encoder stack, routes
//! and downsamples to a compressed stream, recurses into its inner network,
//! then smooths, upsamples, adds the encoder residual and runs a decoder
//! stack. A linear head on the outermost stream yields next-nucleotide
//! logits.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    backward, cross_entropy_rows, no_grad, read_checkpoint, write_checkpoint, CheckpointEntry,
    CheckpointError, Parameter, Scalar, Tensor, TensorError, TensorPayload,
};
use crate::chunking::{
    discretize, downsample, ratio_loss, smooth, upsample, BoundaryDecision, Router,
};
use crate::layers::{
    build_stack, parse_layout, print_layout, run_stack, Block, Embedding, Layout, LayoutError,
    LevelDims, Linear, OutputHead, ParamSet, RmsNorm,
};
use crate::seqdata::NucleotideSequence;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("sequence length {length} exceeds context window {limit}")]
    Context { length: usize, limit: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("checkpoint is missing parameter {0}")]
    MissingParam(String),
}

pub type Result<V> = std::result::Result<V, ModelError>;

fn config_err<V>(msg: impl Into<String>) -> Result<V> {
    Err(ModelError::Config(msg.into()))
}

/// Complete architecture description: the layout tree plus per-level widths
/// and per-stage compression targets.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Layout string, e.g. `["m4", ["T1m4", ["T7"], "m4T1"], "m4"]`.
    pub layout: String,
    /// Model dimension per hierarchy level (outer first); length = stages+1.
    pub dims: Vec<usize>,
    /// Attention heads per level; length = stages+1.
    pub heads: Vec<usize>,
    /// Feed-forward hidden width per level; 0 disables the FFN sublayer.
    #[serde(default)]
    pub ffn_dims: Vec<usize>,
    /// Recurrent mixer state width.
    #[serde(default = "default_state_dim")]
    pub state_dim: usize,
    /// Causal convolution width inside mixers.
    #[serde(default = "default_conv_width")]
    pub conv_width: usize,
    /// Target compression ratio per stage; length = stages.
    #[serde(default)]
    pub targets: Vec<f64>,
    /// Ratio-loss weight.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Maximum sequence length.
    #[serde(default = "default_context")]
    pub context: usize,
    /// Straight-through confidence coefficients on upsampling.
    #[serde(default = "default_true")]
    pub confidence: bool,
    /// Additive encoder residual into the decoder stream.
    #[serde(default = "default_true")]
    pub residual: bool,
}

fn default_state_dim() -> usize {
    128
}
fn default_conv_width() -> usize {
    4
}
fn default_alpha() -> f64 {
    0.01
}
fn default_context() -> usize {
    8192
}
fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// Parses the layout and cross-checks every per-level list against it.
    pub fn validate(&self) -> Result<Layout> {
        let layout = parse_layout(&self.layout)?;
        let stages = layout.num_stages();
        let levels = stages + 1;
        if self.dims.len() != levels {
            return config_err(format!(
                "{stages}-stage layout needs {levels} dims, got {}",
                self.dims.len()
            ));
        }
        if self.heads.len() != levels {
            return config_err(format!(
                "{stages}-stage layout needs {levels} heads, got {}",
                self.heads.len()
            ));
        }
        if !self.ffn_dims.is_empty() && self.ffn_dims.len() != levels {
            return config_err(format!(
                "ffn_dims must be empty or length {levels}, got {}",
                self.ffn_dims.len()
            ));
        }
        if self.targets.len() != stages {
            return config_err(format!(
                "{stages}-stage layout needs {stages} targets, got {}",
                self.targets.len()
            ));
        }
        if let Some(t) = self.targets.iter().find(|&&t| t <= 1.0) {
            return config_err(format!("compression targets must exceed 1, got {t}"));
        }
        if let Some(d) = self.dims.iter().find(|&&d| d == 0) {
            return config_err(format!("dims must be positive, got {d}"));
        }
        for (level, (&d, &h)) in self.dims.iter().zip(&self.heads).enumerate() {
            if h == 0 || d % h != 0 {
                return config_err(format!(
                    "level {level}: {h} heads must divide dim {d}"
                ));
            }
        }
        if self.state_dim == 0 || self.conv_width == 0 {
            return config_err("state_dim and conv_width must be positive");
        }
        if self.context == 0 {
            return config_err("context must be positive");
        }
        Ok(layout)
    }

    pub fn num_stages(&self) -> usize {
        self.targets.len()
    }

    pub fn level_dims(&self, level: usize) -> LevelDims {
        LevelDims {
            dim: self.dims[level],
            heads: self.heads[level],
            ffn_dim: self.ffn_dims.get(level).copied().unwrap_or(0),
            state_dim: self.state_dim,
            conv_width: self.conv_width,
        }
    }

    /// Canonical layout string (sorted whitespace); useful for round trips.
    pub fn canonical_layout(&self) -> Result<String> {
        Ok(print_layout(&parse_layout(&self.layout)?))
    }
}

enum Net<T: Scalar> {
    Stack(Vec<Block<T>>),
    Stage(Box<StageNet<T>>),
}

struct StageNet<T: Scalar> {
    stage_index: usize,
    encoder: Vec<Block<T>>,
    router: Router<T>,
    proj_in: Linear<T>,
    inner: Net<T>,
    proj_out: Linear<T>,
    decoder: Vec<Block<T>>,
    target: f64,
}

/// Routing decisions and rate statistics recorded for one stage during a
/// forward pass.
pub struct StageTrace<T: Scalar> {
    pub stage_index: usize,
    pub decision: BoundaryDecision,
    pub chunk_map: Vec<usize>,
    /// 0-based positions (in the original sequence) of this stage's inputs.
    pub input_positions: Vec<usize>,
    /// F_s: fraction of selected positions over this stage's input length.
    pub selected_fraction: f64,
    /// G_s: mean boundary probability over this stage's input length.
    pub mean_probability: f64,
    pub rate_loss: Tensor<T>,
    pub num_chunks: usize,
    /// Set when every position was selected even though the target ratio is
    /// at least 2 (a diagnostic for collapsed routing).
    pub full_selection: bool,
}

impl<T: Scalar> StageTrace<T> {
    /// Routing collapse check: nearly all or nearly no positions selected.
    pub fn degenerate(&self) -> bool {
        self.selected_fraction < 0.02 || self.selected_fraction > 0.98
    }

    pub fn rate_loss_value(&self) -> f64 {
        self.rate_loss.item().as_f64()
    }
}

/// Everything a forward pass produces: final logits plus per-stage traces.
pub struct ForwardTrace<T: Scalar> {
    pub logits: Tensor<T>,
    pub stages: Vec<StageTrace<T>>,
    pub length: usize,
}

/// Composite loss values for one sequence.
pub struct LossReport<T: Scalar> {
    pub nll: Tensor<T>,
    pub total: Tensor<T>,
    pub nll_value: f64,
    pub perplexity: f64,
    pub rate_values: Vec<f64>,
}

/// The hierarchical model instance: configuration, parameters and the
/// recursive network.
pub struct HNetModel<T: Scalar> {
    pub config: ModelConfig,
    embed: Embedding<T>,
    net: Net<T>,
    final_norm: RmsNorm<T>,
    head: OutputHead<T>,
    params: Vec<Parameter<T>>,
}

fn build_net<T: Scalar>(
    ps: &mut ParamSet<T>,
    rng: &mut ChaCha8Rng,
    layout: &Layout,
    level: usize,
    config: &ModelConfig,
) -> Net<T> {
    match layout {
        Layout::Stack(spec) => {
            let blocks = build_stack(ps, rng, "main", spec, config.level_dims(level), 1.0);
            Net::Stack(blocks)
        }
        Layout::Stage {
            encoder,
            inner,
            decoder,
        } => {
            let prefix = format!("stage{level}");
            let dims = config.level_dims(level);
            let d_in = config.dims[level];
            let d_out = config.dims[level + 1];
            let enc = build_stack(ps, rng, &format!("{prefix}.encoder"), encoder, dims, 1.0);
            let wq = ps.trunc_normal(rng, format!("{prefix}.router.wq"), &[d_in, d_in], 1.0);
            let wk = ps.trunc_normal(rng, format!("{prefix}.router.wk"), &[d_in, d_in], 1.0);
            let proj_in = Linear::new(ps, rng, format!("{prefix}.proj_in.w"), d_in, d_out, 1.0);
            let inner_net = build_net(ps, rng, inner, level + 1, config);
            let proj_out = Linear::new(ps, rng, format!("{prefix}.proj_out.w"), d_out, d_in, 1.0);
            let dec = build_stack(ps, rng, &format!("{prefix}.decoder"), decoder, dims, 1.0);
            Net::Stage(Box::new(StageNet {
                stage_index: level,
                encoder: enc,
                router: Router::new(wq, wk),
                proj_in,
                inner: inner_net,
                proj_out,
                decoder: dec,
                target: config.targets[level],
            }))
        }
    }
}

/// Builds a freshly initialized model. Construction order is fixed, so the
/// same seed always yields identical parameters.
pub fn build_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<HNetModel<T>> {
    let layout = config.validate()?;
    let mut ps = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embed = Embedding::new(&mut ps, &mut rng, config.dims[0], 1.0);
    let net = build_net(&mut ps, &mut rng, &layout, 0, config);
    let final_norm = RmsNorm::new(&mut ps, "final_norm.gain".into(), config.dims[0], 1.0);
    let head = OutputHead::new(&mut ps, &mut rng, config.dims[0], 1.0);
    Ok(HNetModel {
        config: config.clone(),
        embed,
        net,
        final_norm,
        head,
        params: ps.into_params(),
    })
}

impl<T: Scalar> Net<T> {
    fn forward(
        &self,
        x: &Tensor<T>,
        positions: &[usize],
        config: &ModelConfig,
        traces: &mut Vec<StageTrace<T>>,
    ) -> crate::autodiff::Result<Tensor<T>> {
        match self {
            Net::Stack(blocks) => run_stack(blocks, x),
            Net::Stage(stage) => {
                let h = run_stack(&stage.encoder, x)?;
                let p = stage.router.probs(&h)?;
                let p_values: Vec<f64> = p.data().iter().map(|v| v.as_f64()).collect();
                let b = discretize(&p_values);
                let chunked = downsample(&h, &p, &b)?;

                let selected_fraction =
                    b.iter().filter(|&&x| x).count() as f64 / b.len() as f64;
                let g_tensor = p.mean_all()?;
                let mean_probability = g_tensor.item().as_f64();
                let rate = ratio_loss(selected_fraction, &g_tensor, stage.target)?;

                let inner_positions: Vec<usize> = chunked
                    .boundary_positions
                    .iter()
                    .map(|&i| positions[i])
                    .collect();
                traces.push(StageTrace {
                    stage_index: stage.stage_index,
                    decision: BoundaryDecision {
                        p: p_values,
                        b: b.clone(),
                        stage_index: stage.stage_index,
                    },
                    chunk_map: chunked.chunk_map.clone(),
                    input_positions: positions.to_vec(),
                    selected_fraction,
                    mean_probability,
                    rate_loss: rate,
                    num_chunks: chunked.num_chunks(),
                    full_selection: chunked.num_chunks() == b.len()
                        && b.len() > 1
                        && stage.target >= 2.0,
                });

                let z = stage.proj_in.forward(&chunked.latents)?;
                let inner_out = stage.inner.forward(&z, &inner_positions, config, traces)?;
                let e_hat = stage.proj_out.forward(&inner_out)?;
                let smoothed = smooth(&e_hat, &chunked.boundary_probs_at_chunks)?;
                let up = upsample(
                    &smoothed,
                    &chunked.chunk_map,
                    &p,
                    &b,
                    config.confidence,
                )?;
                let dec_in = if config.residual { up.add(&h)? } else { up };
                run_stack(&stage.decoder, &dec_in)
            }
        }
    }
}

impl<T: Scalar> HNetModel<T> {
    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    /// Hierarchy level of a parameter, derived from its name: `stageN.*` is
    /// level N, `main.*` is the innermost level, everything else (embedding,
    /// final norm, head) lives at level 0.
    pub fn level_of(&self, name: &str) -> usize {
        if name.starts_with("main.") {
            self.config.num_stages()
        } else if let Some(rest) = name.strip_prefix("stage") {
            rest.split('.')
                .next()
                .and_then(|d| d.parse().ok())
                .unwrap_or(0)
        } else {
            0
        }
    }

    /// Assigns learning-rate multipliers per hierarchy level
    /// (`per_level.len()` must equal stages+1).
    pub fn set_level_multipliers(&mut self, per_level: &[f64]) {
        assert_eq!(per_level.len(), self.config.num_stages() + 1);
        let levels: Vec<usize> = self
            .params
            .iter()
            .map(|p| self.level_of(&p.name))
            .collect();
        for (p, level) in self.params.iter_mut().zip(levels) {
            p.lr_multiplier = per_level[level];
        }
    }

    /// Forward pass over an encoded sequence; logits row `t` parameterizes
    /// `P(x_{t+2} | x_{1..t+1})` under the one-step target shift.
    pub fn forward(&self, codes: &[u8]) -> Result<ForwardTrace<T>> {
        if codes.is_empty() {
            return config_err("cannot run forward on an empty sequence");
        }
        if codes.len() > self.config.context {
            return Err(ModelError::Context {
                length: codes.len(),
                limit: self.config.context,
            });
        }
        let x = self.embed.forward(codes)?;
        let positions: Vec<usize> = (0..codes.len()).collect();
        let mut traces = Vec::with_capacity(self.config.num_stages());
        let y = self.net.forward(&x, &positions, &self.config, &mut traces)?;
        let y = self.final_norm.forward(&y)?;
        let logits = self.head.forward(&y)?;
        Ok(ForwardTrace {
            logits,
            stages: traces,
            length: codes.len(),
        })
    }

    /// Composite objective for one sequence: per-nucleotide mean NLL plus
    /// the alpha-weighted per-stage rate losses.
    pub fn losses(&self, trace: &ForwardTrace<T>, codes: &[u8]) -> Result<LossReport<T>> {
        let nll = nll_loss(trace, codes)?;
        let rates: Vec<Tensor<T>> = trace.stages.iter().map(|s| s.rate_loss.clone()).collect();
        let total = compose_total(&nll, &rates, self.config.alpha)?;
        let nll_value = nll.item().as_f64();
        Ok(LossReport {
            nll_value,
            perplexity: nll_value.exp(),
            rate_values: trace.stages.iter().map(|s| s.rate_loss_value()).collect(),
            nll,
            total,
        })
    }

    /// Sum of `log P(x_t | x_{<t})` over `t >= 2`, in nats. The first
    /// nucleotide has no conditioning context and is unscored. Runs without
    /// taping.
    pub fn sequence_loglik(&self, codes: &[u8]) -> Result<f64> {
        if codes.len() < 2 {
            return config_err("log-likelihood needs at least 2 nucleotides");
        }
        no_grad(|| {
            let trace = self.forward(codes)?;
            let nll = nll_loss(&trace, codes)?;
            Ok(-nll.item().as_f64() * (codes.len() - 1) as f64)
        })
    }

    /// Autoregressive sampling. The output contains the prompt followed by
    /// `length` generated nucleotides. Temperature 0 is greedy argmax with
    /// ties resolved toward the lowest code; positive temperatures draw from
    /// the tempered distribution with a seeded generator. An empty prompt
    /// starts from a single seeded-uniform base (code 0 at temperature 0).
    /// When the sequence outgrows the context window, conditioning slides to
    /// the most recent `context` nucleotides.
    pub fn generate(
        &self,
        prompt: &[u8],
        length: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<u8>> {
        assert!(temperature >= 0.0, "temperature must be non-negative");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seq: Vec<u8> = prompt.to_vec();
        if seq.is_empty() {
            let first = if temperature == 0.0 {
                0
            } else {
                rng.random_range(0..4u8)
            };
            seq.push(first);
        }
        let goal = prompt.len().max(1) + length - usize::from(prompt.is_empty());
        no_grad(|| -> Result<()> {
            while seq.len() < goal {
                let start = seq.len().saturating_sub(self.config.context);
                let window = &seq[start..];
                let trace = self.forward(window)?;
                let logits = trace.logits.data();
                let last = &logits[(window.len() - 1) * 4..window.len() * 4];
                let next = sample_code(last, temperature, &mut rng);
                seq.push(next);
            }
            Ok(())
        })?;
        Ok(seq)
    }

    /// Generation wrapper producing a named sequence.
    pub fn generate_sequence(
        &self,
        prompt: &[u8],
        length: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<NucleotideSequence> {
        Ok(NucleotideSequence {
            id: format!("generated:seed{seed}"),
            codes: self.generate(prompt, length, temperature, seed)?,
            origin: None,
        })
    }

    /// Plain data copy of every parameter, safe to share across threads.
    pub fn snapshot(&self) -> ModelSnapshot<T> {
        ModelSnapshot {
            config: self.config.clone(),
            values: self
                .params
                .iter()
                .map(|p| (p.name.clone(), p.tensor.data()))
                .collect(),
        }
    }

    /// Rebuilds a model from a snapshot (exact parameter values).
    pub fn from_snapshot(snap: &ModelSnapshot<T>) -> Result<Self> {
        let model = build_model::<T>(&snap.config, 0)?;
        let by_name: HashMap<&str, &Vec<T>> =
            snap.values.iter().map(|(n, v)| (n.as_str(), v)).collect();
        for p in &model.params {
            let vals = by_name
                .get(p.name.as_str())
                .ok_or_else(|| ModelError::MissingParam(p.name.clone()))?;
            if vals.len() != p.tensor.numel() {
                return config_err(format!("snapshot entry {} has wrong size", p.name));
            }
            p.tensor.set_data(vals);
        }
        Ok(model)
    }

    /// The embedding/stack/norm/head quadruple when this model is a plain
    /// (zero-stage) stack.
    pub fn plain_stack_parts(
        &self,
    ) -> Option<(&Embedding<T>, &[Block<T>], &RmsNorm<T>, &OutputHead<T>)> {
        match &self.net {
            Net::Stack(blocks) => Some((&self.embed, blocks, &self.final_norm, &self.head)),
            Net::Stage(_) => None,
        }
    }
}

fn sample_code<T: Scalar>(logits: &[T], temperature: f64, rng: &mut ChaCha8Rng) -> u8 {
    if temperature == 0.0 {
        let mut best = 0usize;
        for i in 1..logits.len() {
            if logits[i] > logits[best] {
                best = i;
            }
        }
        return best as u8;
    }
    let scaled: Vec<f64> = logits.iter().map(|v| v.as_f64() / temperature).collect();
    let m = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let u: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, e) in exps.iter().enumerate() {
        acc += e / z;
        if u < acc {
            return i as u8;
        }
    }
    (logits.len() - 1) as u8
}

/// Mean next-nucleotide NLL under the one-step target shift; the prediction
/// at the final position is unused.
pub fn nll_loss<T: Scalar>(
    trace: &ForwardTrace<T>,
    codes: &[u8],
) -> crate::autodiff::Result<Tensor<T>> {
    let l = codes.len();
    if l < 2 {
        return Err(TensorError::Domain(
            "NLL needs at least 2 nucleotides".into(),
        ));
    }
    debug_assert_eq!(trace.length, l);
    let predicting = trace.logits.slice_rows(0, l - 1)?;
    let targets: Vec<usize> = codes[1..].iter().map(|&c| c as usize).collect();
    cross_entropy_rows(&predicting, &targets)?.mean_all()
}

/// Sum-form NLL (`mean * (L-1)`); the optimizer uses the mean.
pub fn nll_loss_sum<T: Scalar>(
    trace: &ForwardTrace<T>,
    codes: &[u8],
) -> crate::autodiff::Result<Tensor<T>> {
    let scale = (codes.len() - 1) as f64;
    nll_loss(trace, codes)?.scale(scale)
}

/// `nll + alpha * sum(rate losses)`.
pub fn compose_total<T: Scalar>(
    nll: &Tensor<T>,
    rates: &[Tensor<T>],
    alpha: f64,
) -> crate::autodiff::Result<Tensor<T>> {
    let mut total = nll.clone();
    if alpha != 0.0 {
        for r in rates {
            total = total.add(&r.scale(alpha)?)?;
        }
    }
    Ok(total)
}

/// Composite objective assembled from a forward trace.
pub fn total_loss<T: Scalar>(
    trace: &ForwardTrace<T>,
    codes: &[u8],
    alpha: f64,
) -> crate::autodiff::Result<Tensor<T>> {
    let nll = nll_loss(trace, codes)?;
    let rates: Vec<Tensor<T>> = trace.stages.iter().map(|s| s.rate_loss.clone()).collect();
    compose_total(&nll, &rates, alpha)
}

/// Gradient backpropagation with a reachability check: errors if some
/// parameter receives no gradient at all.
pub fn backward_checked<T: Scalar>(loss: &Tensor<T>, params: &[Parameter<T>]) -> Result<()> {
    backward(loss)?;
    let missing = crate::autodiff::unreached_params(params);
    if !missing.is_empty() {
        return Err(ModelError::Tensor(TensorError::Graph(format!(
            "loss does not reach {} parameter(s), e.g. {}",
            missing.len(),
            missing[0]
        ))));
    }
    Ok(())
}

/// Sendable parameter snapshot used to rebuild models on worker threads.
pub struct ModelSnapshot<T: Scalar> {
    pub config: ModelConfig,
    pub values: Vec<(String, Vec<T>)>,
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    model: ModelConfig,
}

/// Sidecar path holding the model config next to a checkpoint.
pub fn config_sidecar_path(ckpt: &Path) -> PathBuf {
    let mut os = ckpt.as_os_str().to_os_string();
    os.push(".cfg");
    PathBuf::from(os)
}

/// Writes parameters to the checkpoint container plus a structured-text
/// config sidecar at `<path>.cfg`. `extra` entries (e.g. optimizer state)
/// are appended verbatim. Both files land via write-temp-then-rename so a
/// failed save never leaves a partial artifact.
pub fn save_model<T: Scalar>(
    model: &HNetModel<T>,
    path: &Path,
    extra: &[CheckpointEntry],
) -> Result<()> {
    let mut entries: Vec<CheckpointEntry> = model
        .params
        .iter()
        .map(|p| {
            CheckpointEntry::new(
                p.name.clone(),
                p.tensor.shape().to_vec(),
                payload_of(&p.tensor),
            )
        })
        .collect();
    entries.extend_from_slice(extra);
    let tmp = path.with_extension("ckpt.tmp");
    write_checkpoint(&tmp, &entries)?;
    std::fs::rename(&tmp, path).map_err(|e| ModelError::Checkpoint(CheckpointError::Io(e)))?;
    let text = toml::to_string_pretty(&ConfigFile {
        model: model.config.clone(),
    })
    .map_err(|e| ModelError::Config(format!("cannot serialize config: {e}")))?;
    let cfg_path = config_sidecar_path(path);
    let cfg_tmp = cfg_path.with_extension("cfg.tmp");
    std::fs::write(&cfg_tmp, text).map_err(|e| ModelError::Checkpoint(CheckpointError::Io(e)))?;
    std::fs::rename(&cfg_tmp, cfg_path)
        .map_err(|e| ModelError::Checkpoint(CheckpointError::Io(e)))?;
    Ok(())
}

/// Reads the `[model]` section of a structured-text config file, ignoring
/// any other sections (a full run config works too).
pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: toml::Value = toml::from_str(&text)
        .map_err(|e| ModelError::Config(format!("bad config file: {e}")))?;
    let model = value
        .get("model")
        .ok_or_else(|| ModelError::Config("config file lacks a [model] section".into()))?;
    let config: ModelConfig = model
        .clone()
        .try_into()
        .map_err(|e| ModelError::Config(format!("bad [model] section: {e}")))?;
    config.validate()?;
    Ok(config)
}

fn payload_of<T: Scalar>(t: &Tensor<T>) -> TensorPayload {
    match T::DTYPE {
        crate::autodiff::DType::F32 => {
            TensorPayload::F32(t.data().iter().map(|v| v.as_f64() as f32).collect())
        }
        _ => TensorPayload::F64(t.data().iter().map(|v| v.as_f64()).collect()),
    }
}

/// Loads a model from a checkpoint plus its config sidecar. Returns the
/// model and any entries that are not model parameters (optimizer state,
/// counters), keyed by name.
pub fn load_model<T: Scalar>(path: &Path) -> Result<(HNetModel<T>, HashMap<String, CheckpointEntry>)> {
    let cfg_path = config_sidecar_path(path);
    let text = std::fs::read_to_string(&cfg_path).map_err(|e| {
        ModelError::Config(format!(
            "cannot read config sidecar {}: {e}",
            cfg_path.display()
        ))
    })?;
    let parsed: ConfigFile = toml::from_str(&text)
        .map_err(|e| ModelError::Config(format!("bad config sidecar: {e}")))?;
    let entries = read_checkpoint(path)?;
    let mut by_name: HashMap<String, CheckpointEntry> =
        entries.into_iter().map(|e| (e.name.clone(), e)).collect();
    let model = build_model::<T>(&parsed.model, 0)?;
    for p in &model.params {
        let entry = by_name
            .remove(&p.name)
            .ok_or_else(|| ModelError::MissingParam(p.name.clone()))?;
        if entry.shape != p.tensor.shape() {
            return config_err(format!(
                "checkpoint entry {} has shape {:?}, expected {:?}",
                p.name,
                entry.shape,
                p.tensor.shape()
            ));
        }
        let values = entry.payload.as_f64()?;
        let cast: Vec<T> = values.iter().map(|&v| T::from_f64(v)).collect();
        p.tensor.set_data(&cast);
    }
    Ok((model, by_name))
}
