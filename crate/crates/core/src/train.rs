//! Training: AdamW with decoupled weight decay, linear-warmup/cosine-decay
//! schedule with per-level learning-rate multipliers, gradient accumulation
//! and clipping, metrics logging, checkpointing and bit-exact resume.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{zero_grads, CheckpointEntry, Parameter, Scalar, TensorPayload};
use crate::fmt_sig;
use crate::hnet::{backward_checked, save_model, HNetModel, ModelConfig, ModelError};
use crate::seqdata::NucleotideSequence;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("at step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<V> = std::result::Result<V, TrainError>;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: f64,
    pub warmup_steps: usize,
    pub max_steps: usize,
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub grad_accum: usize,
    /// Learning-rate multipliers (outer, mid, inner hierarchy levels).
    #[serde(default = "default_multipliers")]
    pub lr_multipliers: [f64; 3],
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_log_interval")]
    pub log_interval: usize,
    /// Steps between checkpoints; 0 disables intermediate checkpoints.
    #[serde(default)]
    pub checkpoint_interval: usize,
}

fn default_weight_decay() -> f64 {
    0.05
}
fn default_grad_clip() -> f64 {
    1.0
}
fn default_one() -> usize {
    1
}
fn default_multipliers() -> [f64; 3] {
    [2.0, 1.5, 1.0]
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_log_interval() -> usize {
    10
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.max_steps {
            return Err(TrainError::Config(format!(
                "warmup_steps {} must be below max_steps {}",
                self.warmup_steps, self.max_steps
            )));
        }
        if self.base_lr <= 0.0 {
            return Err(TrainError::Config("base_lr must be positive".into()));
        }
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(TrainError::Config(
                "batch_size and grad_accum must be positive".into(),
            ));
        }
        if self.lr_multipliers.iter().any(|&m| m <= 0.0) {
            return Err(TrainError::Config("lr multipliers must be positive".into()));
        }
        Ok(())
    }

    /// Per-level multipliers for a model with `levels` hierarchy levels:
    /// the outermost gets `outer`, the innermost `inner`, everything between
    /// `mid`. A flat (one-level) model trains unscaled.
    pub fn level_multipliers(&self, levels: usize) -> Vec<f64> {
        let [outer, mid, inner] = self.lr_multipliers;
        match levels {
            0 => vec![],
            1 => vec![1.0],
            2 => vec![outer, inner],
            n => {
                let mut v = vec![mid; n];
                v[0] = outer;
                v[n - 1] = inner;
                v
            }
        }
    }
}

/// Schedule value at `step`: linear 0 -> base over warmup, then cosine decay
/// from base to 0 at `max_steps`.
pub fn lr_at(step: usize, config: &TrainConfig) -> f64 {
    if step < self_warmup(config) {
        config.base_lr * step as f64 / self_warmup(config) as f64
    } else {
        let span = (config.max_steps - config.warmup_steps).max(1);
        let progress = (step - config.warmup_steps) as f64 / span as f64;
        let progress = progress.min(1.0);
        config.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

fn self_warmup(config: &TrainConfig) -> usize {
    config.warmup_steps.max(1)
}

/// AdamW moment accumulators, parallel to the parameter list.
pub struct AdamW<T: Scalar> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    updates: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &[Parameter<T>]) -> Self {
        AdamW {
            m: params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.tensor.numel()]).collect(),
            updates: 0,
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One decoupled-weight-decay Adam update. `lr` is the schedule value;
    /// each parameter additionally applies its own multiplier. Parameters
    /// without gradient are skipped.
    pub fn step(&mut self, params: &[Parameter<T>], lr: f64, cfg: &TrainConfig) {
        self.updates += 1;
        let t = self.updates as i32;
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let eps = T::from_f64(cfg.adam_eps);
        let bias1 = T::from_f64(1.0 - cfg.beta1.powi(t));
        let bias2 = T::from_f64(1.0 - cfg.beta2.powi(t));
        for (i, p) in params.iter().enumerate() {
            let Some(grad) = p.tensor.grad() else {
                continue;
            };
            let lr_eff = T::from_f64(lr * p.lr_multiplier);
            let decay = if p.weight_decay {
                T::one() - lr_eff * T::from_f64(cfg.weight_decay)
            } else {
                T::one()
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            p.tensor.map_data(|w| {
                for j in 0..w.len() {
                    let g = grad[j];
                    m[j] = b1 * m[j] + (T::one() - b1) * g;
                    v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                    let m_hat = m[j] / bias1;
                    let v_hat = v[j] / bias2;
                    w[j] = w[j] * decay - lr_eff * m_hat / (v_hat.sqrt() + eps);
                }
            });
        }
    }

    /// Serializes moments and the update counter as checkpoint entries.
    pub fn to_entries(&self, params: &[Parameter<T>]) -> Vec<CheckpointEntry> {
        let mut out = Vec::with_capacity(2 * params.len() + 1);
        for (i, p) in params.iter().enumerate() {
            out.push(CheckpointEntry::new(
                format!("opt.m.{}", p.name),
                p.tensor.shape().to_vec(),
                payload_from(&self.m[i]),
            ));
            out.push(CheckpointEntry::new(
                format!("opt.v.{}", p.name),
                p.tensor.shape().to_vec(),
                payload_from(&self.v[i]),
            ));
        }
        out.push(CheckpointEntry::new(
            "trainstate.opt_updates",
            vec![1],
            TensorPayload::U64(vec![self.updates]),
        ));
        out
    }

    /// Restores moments from checkpoint entries.
    pub fn from_entries(
        params: &[Parameter<T>],
        entries: &HashMap<String, CheckpointEntry>,
    ) -> Result<Self> {
        let mut opt = AdamW::new(params);
        for (i, p) in params.iter().enumerate() {
            for (buf, prefix) in [(&mut opt.m[i], "opt.m."), (&mut opt.v[i], "opt.v.")] {
                let key = format!("{prefix}{}", p.name);
                let entry = entries.get(&key).ok_or_else(|| {
                    TrainError::Config(format!("checkpoint lacks optimizer entry {key}"))
                })?;
                let vals = entry
                    .payload
                    .as_f64()
                    .map_err(|e| TrainError::Config(e.to_string()))?;
                if vals.len() != buf.len() {
                    return Err(TrainError::Config(format!("optimizer entry {key} has wrong size")));
                }
                for (dst, src) in buf.iter_mut().zip(vals) {
                    *dst = T::from_f64(src);
                }
            }
        }
        let updates = match entries.get("trainstate.opt_updates").map(|e| &e.payload) {
            Some(TensorPayload::U64(v)) if v.len() == 1 => v[0],
            _ => {
                return Err(TrainError::Config(
                    "checkpoint lacks trainstate.opt_updates".into(),
                ))
            }
        };
        opt.updates = updates;
        Ok(opt)
    }
}

fn payload_from<T: Scalar>(values: &[T]) -> TensorPayload {
    match T::DTYPE {
        crate::autodiff::DType::F32 => {
            TensorPayload::F32(values.iter().map(|v| v.as_f64() as f32).collect())
        }
        _ => TensorPayload::F64(values.iter().map(|v| v.as_f64()).collect()),
    }
}

/// Global L2 norm over all parameter gradients.
pub fn global_grad_norm<T: Scalar>(params: &[Parameter<T>]) -> f64 {
    let mut acc = 0.0f64;
    for p in params {
        if let Some(g) = p.tensor.grad() {
            for v in g {
                let x = v.as_f64();
                acc += x * x;
            }
        }
    }
    acc.sqrt()
}

/// Scales all gradients so the global norm is at most `max_norm`; returns
/// the pre-clip norm.
pub fn clip_gradients<T: Scalar>(params: &[Parameter<T>], max_norm: f64) -> f64 {
    let norm = global_grad_norm(params);
    if norm > max_norm && norm > 0.0 {
        let factor = T::from_f64(max_norm / norm);
        for p in params {
            p.tensor.map_grad(|g| {
                for v in g.iter_mut() {
                    *v = *v * factor;
                }
            });
        }
    }
    norm
}

/// Deterministic per-epoch shuffle of corpus indices.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Per-step metrics captured for logging.
#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    pub nll: f64,
    pub perplexity: f64,
    /// Per stage: (rate loss, F, G).
    pub stages: Vec<(f64, f64, f64)>,
    pub grad_norm: f64,
    pub warnings: Vec<String>,
}

/// Metrics CSV header. A model with fewer than two stages leaves the spare
/// columns empty; deeper models append extra stage columns before
/// `warnings`.
fn metrics_header(num_stages: usize) -> String {
    let mut cols = vec!["step".to_string(), "lr".into(), "nll".into(), "ppl".into()];
    let slots = num_stages.max(2);
    for s in 1..=slots {
        cols.push(format!("rate_loss_s{s}"));
    }
    for s in 1..=slots {
        cols.push(format!("F_s{s}"));
        cols.push(format!("G_s{s}"));
    }
    cols.push("warnings".into());
    cols.join(",")
}

fn metrics_row(m: &StepMetrics, num_stages: usize) -> String {
    let slots = num_stages.max(2);
    let mut cols = vec![
        m.step.to_string(),
        fmt_sig(m.lr),
        fmt_sig(m.nll),
        fmt_sig(m.perplexity),
    ];
    for s in 0..slots {
        cols.push(m.stages.get(s).map_or(String::new(), |v| fmt_sig(v.0)));
    }
    for s in 0..slots {
        cols.push(m.stages.get(s).map_or(String::new(), |v| fmt_sig(v.1)));
        cols.push(m.stages.get(s).map_or(String::new(), |v| fmt_sig(v.2)));
    }
    cols.push(m.warnings.join(";"));
    cols.join(",")
}

/// One optimizer step: accumulates gradients over `grad_accum` micro-batches
/// of `batch_size` sequences, clips, and applies AdamW. Deterministic given
/// the data order.
pub fn train_step<T: Scalar>(
    model: &HNetModel<T>,
    opt: &mut AdamW<T>,
    micro_batches: &[Vec<&NucleotideSequence>],
    step: usize,
    cfg: &TrainConfig,
) -> Result<StepMetrics> {
    let params = model.params();
    zero_grads(params);
    let accum = micro_batches.len().max(1) as f64;

    let mut nll_sum = 0.0;
    let mut stage_sums: Vec<(f64, f64, f64)> = vec![(0.0, 0.0, 0.0); model.config.num_stages()];
    let mut n_seqs = 0usize;
    let mut full_selection = vec![false; model.config.num_stages()];

    for batch in micro_batches {
        let mut batch_total: Option<crate::Tensor<T>> = None;
        for seq in batch {
            let trace = model
                .forward(&seq.codes)
                .map_err(|source| TrainError::Step { step, source })?;
            let report = model
                .losses(&trace, &seq.codes)
                .map_err(|source| TrainError::Step { step, source })?;
            nll_sum += report.nll_value;
            for (s, st) in trace.stages.iter().enumerate() {
                stage_sums[s].0 += st.rate_loss_value();
                stage_sums[s].1 += st.selected_fraction;
                stage_sums[s].2 += st.mean_probability;
                full_selection[s] |= st.full_selection;
            }
            n_seqs += 1;
            batch_total = Some(match batch_total {
                None => report.total,
                Some(acc) => acc
                    .add(&report.total)
                    .map_err(|e| TrainError::Step { step, source: e.into() })?,
            });
        }
        if let Some(total) = batch_total {
            let scaled = total
                .scale(1.0 / (batch.len() as f64 * accum))
                .map_err(|e| TrainError::Step { step, source: e.into() })?;
            backward_checked(&scaled, params)
                .map_err(|source| TrainError::Step { step, source })?;
        }
    }

    let grad_norm = clip_gradients(params, cfg.grad_clip);
    let lr = lr_at(step, cfg);
    opt.step(params, lr, cfg);

    let n = n_seqs.max(1) as f64;
    let nll = nll_sum / n;
    let stages: Vec<(f64, f64, f64)> = stage_sums
        .iter()
        .map(|(r, f, g)| (r / n, f / n, g / n))
        .collect();
    let warnings = routing_warnings(&stages, &full_selection);
    Ok(StepMetrics {
        step,
        lr,
        nll,
        perplexity: nll.exp(),
        stages,
        grad_norm,
        warnings,
    })
}

/// Degenerate-routing diagnostics for one step: a boundary predictor that
/// selects (almost) all positions or (almost) none has collapsed.
pub fn routing_warnings(stages: &[(f64, f64, f64)], full_selection: &[bool]) -> Vec<String> {
    let mut warnings = Vec::new();
    for (s, &(_, f, _)) in stages.iter().enumerate() {
        if f < 0.02 {
            warnings.push(format!("degenerate_low_s{}", s + 1));
        } else if f > 0.98 {
            warnings.push(format!("degenerate_high_s{}", s + 1));
        }
        if full_selection.get(s).copied().unwrap_or(false) {
            warnings.push(format!("full_selection_s{}", s + 1));
        }
    }
    warnings
}

/// Result of a training run.
pub struct FitOutcome {
    pub final_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub steps_run: usize,
    pub final_metrics: Option<StepMetrics>,
    pub warning_count: usize,
}

/// Trains `model` on `corpus` windows for `max_steps`, logging metrics,
/// checkpointing periodically, and emitting degenerate-routing warnings.
/// With `resume_state` the run continues from a loaded optimizer state and
/// step counter, reproducing the uninterrupted run bit-identically.
pub fn fit<T: Scalar>(
    model: &mut HNetModel<T>,
    corpus: &[NucleotideSequence],
    cfg: &TrainConfig,
    out_dir: &Path,
    resume_state: Option<(AdamW<T>, usize)>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::Config("corpus is empty".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let levels = model.config.num_stages() + 1;
    model.set_level_multipliers(&cfg.level_multipliers(levels));

    let resuming = resume_state.is_some();
    let (mut opt, start_step) = match resume_state {
        Some((opt, step)) => (opt, step),
        None => (AdamW::new(model.params()), 0),
    };

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics_file = if resuming && metrics_path.exists() {
        OpenOptions::new().append(true).open(&metrics_path)?
    } else {
        let mut f = std::fs::File::create(&metrics_path)?;
        writeln!(f, "{}", metrics_header(model.config.num_stages()))?;
        f
    };

    let per_step = cfg.batch_size * cfg.grad_accum;
    let mut warning_count = 0usize;
    let mut last_metrics = None;

    for step in start_step..cfg.max_steps {
        // Data order is a pure function of (seed, epoch), so a resumed run
        // sees exactly the sequence stream of an uninterrupted one.
        let cursor = step * per_step;
        let mut batch_refs: Vec<Vec<&NucleotideSequence>> = Vec::with_capacity(cfg.grad_accum);
        let mut flat = Vec::with_capacity(per_step);
        for k in 0..per_step {
            let global = cursor + k;
            let epoch = (global / corpus.len()) as u64;
            let within = global % corpus.len();
            let order = epoch_order(cfg.seed, epoch, corpus.len());
            flat.push(&corpus[order[within]]);
        }
        for chunk in flat.chunks(cfg.batch_size) {
            batch_refs.push(chunk.to_vec());
        }

        let metrics = train_step(model, &mut opt, &batch_refs, step, cfg)?;
        warning_count += metrics.warnings.len();

        let is_last = step + 1 == cfg.max_steps;
        if step % cfg.log_interval == 0 || is_last {
            writeln!(metrics_file, "{}", metrics_row(&metrics, model.config.num_stages()))?;
        }
        if cfg.checkpoint_interval > 0 && (step + 1) % cfg.checkpoint_interval == 0 && !is_last {
            let path = out_dir.join(format!("step{:06}.ckpt", step + 1));
            save_train_checkpoint(model, &opt, step + 1, &path)?;
        }
        last_metrics = Some(metrics);
    }
    metrics_file.flush()?;

    let final_checkpoint = out_dir.join("model.ckpt");
    save_train_checkpoint(model, &opt, cfg.max_steps, &final_checkpoint)?;
    Ok(FitOutcome {
        final_checkpoint,
        metrics_path,
        steps_run: cfg.max_steps - start_step,
        final_metrics: last_metrics,
        warning_count,
    })
}

/// Saves model parameters plus optimizer state and the step counter.
pub fn save_train_checkpoint<T: Scalar>(
    model: &HNetModel<T>,
    opt: &AdamW<T>,
    step: usize,
    path: &Path,
) -> Result<()> {
    let mut extra = opt.to_entries(model.params());
    extra.push(CheckpointEntry::new(
        "trainstate.step",
        vec![1],
        TensorPayload::U64(vec![step as u64]),
    ));
    save_model(model, path, &extra)?;
    Ok(())
}

/// Loads a training checkpoint: the model plus optimizer state and the step
/// to resume from.
pub fn load_train_checkpoint<T: Scalar>(
    path: &Path,
) -> Result<(HNetModel<T>, AdamW<T>, usize)> {
    let (model, extra) = crate::hnet::load_model::<T>(path)?;
    let opt = AdamW::from_entries(model.params(), &extra)?;
    let step = match extra.get("trainstate.step").map(|e| &e.payload) {
        Some(TensorPayload::U64(v)) if v.len() == 1 => v[0] as usize,
        _ => return Err(TrainError::Config("checkpoint lacks trainstate.step".into())),
    };
    Ok((model, opt, step))
}

/// Data source selection for a training run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic {
        num_sequences: usize,
        length: usize,
        seed: u64,
    },
    Fasta {
        path: String,
        #[serde(default)]
        window: Option<usize>,
    },
}

/// A full run configuration: `[model]`, `[train]` and `[data]` sections of a
/// key = value config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| TrainError::Config(format!("bad config file: {e}")))
}

pub fn save_run_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| TrainError::Config(format!("cannot serialize config: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Materializes the configured corpus as training windows.
pub fn load_corpus(data: &DataConfig, context: usize) -> std::result::Result<Vec<NucleotideSequence>, crate::seqdata::SeqError> {
    match data {
        DataConfig::Synthetic {
            num_sequences,
            length,
            seed,
        } => Ok(crate::seqdata::synth_codon_corpus(*num_sequences, *length, *seed)),
        DataConfig::Fasta { path, window } => {
            let seqs = crate::seqdata::read_fasta(
                Path::new(path),
                crate::seqdata::AmbiguityPolicy::Reject,
            )?;
            let w = window.unwrap_or(context);
            let mut out = Vec::new();
            for s in &seqs {
                out.extend(crate::seqdata::window_genome(s, w.min(context)));
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{backward, Tensor};
    use crate::hnet::build_model;
    use crate::seqdata::synth_codon_corpus;

    fn cfg(max_steps: usize) -> TrainConfig {
        TrainConfig {
            base_lr: 1e-2,
            weight_decay: 0.05,
            grad_clip: 1.0,
            warmup_steps: 2,
            max_steps,
            batch_size: 2,
            grad_accum: 2,
            lr_multipliers: [2.0, 1.5, 1.0],
            seed: 0,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            log_interval: 2,
            checkpoint_interval: 0,
        }
    }

    fn tiny_model_config() -> ModelConfig {
        ModelConfig {
            layout: r#"["m1", ["T1", ["T1"], "T1"], "m1"]"#.into(),
            dims: vec![8, 8, 8],
            heads: vec![2, 2, 2],
            ffn_dims: vec![0, 0, 0],
            state_dim: 8,
            conv_width: 4,
            targets: vec![3.0, 2.0],
            alpha: 0.03,
            context: 64,
            confidence: true,
            residual: true,
        }
    }

    #[test]
    fn schedule_endpoints_and_warmup_midpoint() {
        let c = cfg(100);
        let c = TrainConfig {
            warmup_steps: 10,
            ..c
        };
        assert_eq!(lr_at(0, &c), 0.0);
        assert!((lr_at(5, &c) - c.base_lr / 2.0).abs() < 1e-15);
        assert!((lr_at(10, &c) - c.base_lr).abs() < 1e-15);
        assert!(lr_at(100, &c).abs() < 1e-15, "cosine floor is 0");
        // Monotone decay after warmup.
        assert!(lr_at(40, &c) > lr_at(70, &c));
    }

    #[test]
    fn clip_scales_to_exactly_max_norm() {
        let w = Tensor::leaf(&[4], vec![1.0f64; 4]).unwrap();
        let loss = w.mul(&Tensor::constant(&[4], vec![5.0; 4]).unwrap()).unwrap().sum_all().unwrap();
        backward(&loss).unwrap();
        let params = vec![Parameter::new("w", w.clone())];
        // grad = [5,5,5,5], norm 10
        let before = clip_gradients(&params, 1.0);
        assert!((before - 10.0).abs() < 1e-12);
        let after = global_grad_norm(&params);
        assert!((after - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adamw_matches_hand_stepped_trace() {
        // Single weight, quadratic loss w^2 evaluated at fixed points; the
        // optimizer recurrences are mirrored by hand below.
        let c = TrainConfig { grad_clip: 1e9, weight_decay: 0.1, ..cfg(10) };
        let w = Tensor::leaf(&[1], vec![2.0f64]).unwrap();
        let params = vec![Parameter::new("w", w.clone())];
        let mut opt = AdamW::new(&params);

        let mut hand_w = 2.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let lr = 0.1;
        for t in 1..=3 {
            zero_grads(&params);
            let loss = w.mul(&w).unwrap().sum_all().unwrap();
            backward(&loss).unwrap();
            opt.step(&params, lr, &c);

            let g = 2.0 * hand_w;
            hand_w *= 1.0 - lr * c.weight_decay;
            m = c.beta1 * m + (1.0 - c.beta1) * g;
            v = c.beta2 * v + (1.0 - c.beta2) * g * g;
            let m_hat = m / (1.0 - c.beta1.powi(t));
            let v_hat = v / (1.0 - c.beta2.powi(t));
            hand_w -= lr * m_hat / (v_hat.sqrt() + c.adam_eps);

            let got = w.data()[0];
            assert!(
                (got - hand_w).abs() < 1e-12,
                "step {t}: {got} vs {hand_w}"
            );
        }
    }

    #[test]
    fn effective_rate_is_schedule_times_multiplier() {
        // Two identical parameters, one with multiplier 2: after one update
        // from zero moments its step must equal the multiplier-1 parameter
        // updated at twice the schedule rate.
        let c = TrainConfig { weight_decay: 0.0, grad_clip: 1e9, ..cfg(10) };
        let mk = || Tensor::leaf(&[1], vec![1.0f64]).unwrap();
        let (wa, wb) = (mk(), mk());
        let pa = vec![Parameter::new("a", wa.clone()).with_lr_multiplier(2.0)];
        let pb = vec![Parameter::new("b", wb.clone())];
        let mut oa = AdamW::new(&pa);
        let mut ob = AdamW::new(&pb);
        for (w, params, opt, lr) in [(&wa, &pa, &mut oa, 0.05), (&wb, &pb, &mut ob, 0.10)] {
            zero_grads(params);
            let loss = w.mul(w).unwrap().sum_all().unwrap();
            backward(&loss).unwrap();
            opt.step(params, lr, &c);
        }
        assert_eq!(wa.data(), wb.data());
    }

    #[test]
    fn routing_warnings_flag_collapse() {
        let healthy = vec![(1.0, 0.33, 0.35), (1.0, 0.5, 0.5)];
        assert!(routing_warnings(&healthy, &[false, false]).is_empty());
        let collapsed = vec![(1.0, 0.01, 0.02), (1.0, 0.99, 0.97)];
        let w = routing_warnings(&collapsed, &[false, true]);
        assert_eq!(
            w,
            vec![
                "degenerate_low_s1".to_string(),
                "degenerate_high_s2".into(),
                "full_selection_s2".into()
            ]
        );
    }

    #[test]
    fn two_runs_same_seed_are_bit_identical() {
        let corpus = synth_codon_corpus(8, 24, 5);
        let run = || {
            let dir = tempfile::tempdir().unwrap();
            let mut model = build_model::<f64>(&tiny_model_config(), 7).unwrap();
            fit(&mut model, &corpus, &cfg(4), dir.path(), None).unwrap();
            model.params().iter().map(|p| p.tensor.data()).collect::<Vec<_>>()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn resume_reproduces_uninterrupted_run() {
        let corpus = synth_codon_corpus(8, 24, 6);
        let c6 = cfg(6);

        // Uninterrupted 6 steps.
        let dir_a = tempfile::tempdir().unwrap();
        let mut full = build_model::<f64>(&tiny_model_config(), 9).unwrap();
        fit(&mut full, &corpus, &c6, dir_a.path(), None).unwrap();

        // 3 steps, checkpoint, resume for the rest.
        let dir_b = tempfile::tempdir().unwrap();
        let mut part = build_model::<f64>(&tiny_model_config(), 9).unwrap();
        let c3 = TrainConfig { max_steps: 3, ..c6.clone() };
        let out = fit(&mut part, &corpus, &c3, dir_b.path(), None).unwrap();
        let (mut resumed, opt, step) =
            load_train_checkpoint::<f64>(&out.final_checkpoint).unwrap();
        assert_eq!(step, 3);
        let dir_c = tempfile::tempdir().unwrap();
        fit(&mut resumed, &corpus, &c6, dir_c.path(), Some((opt, step))).unwrap();

        for (pa, pb) in full.params().iter().zip(resumed.params()) {
            assert_eq!(pa.tensor.data(), pb.tensor.data(), "{} diverged", pa.name);
        }
    }

    #[test]
    fn metrics_csv_has_fixed_header() {
        let corpus = synth_codon_corpus(4, 24, 8);
        let dir = tempfile::tempdir().unwrap();
        let mut model = build_model::<f64>(&tiny_model_config(), 10).unwrap();
        let out = fit(&mut model, &corpus, &cfg(3), dir.path(), None).unwrap();
        let text = std::fs::read_to_string(&out.metrics_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,lr,nll,ppl,rate_loss_s1,rate_loss_s2,F_s1,G_s1,F_s2,G_s2,warnings"
        );
        assert!(lines.next().is_some());
    }

    #[test]
    fn run_config_round_trips_through_toml() {
        let rc = RunConfig {
            model: tiny_model_config(),
            train: cfg(5),
            data: DataConfig::Synthetic {
                num_sequences: 16,
                length: 48,
                seed: 3,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        save_run_config(&path, &rc).unwrap();
        let back = load_run_config(&path).unwrap();
        assert_eq!(back, rc);
    }

    #[test]
    fn invalid_schedule_is_rejected() {
        let c = TrainConfig {
            warmup_steps: 10,
            max_steps: 10,
            ..cfg(10)
        };
        assert!(c.validate().is_err());
    }
}
