//! Analytic FLOP cost model for hierarchical configurations and power-law
//! scaling fits.
//!
//! Conventions, printed in every report header: one multiply-add counts 2
//! FLOPs, so every parametrized map costs `2 * params * length`; each
//! attention layer adds a quadratic term `4 * len^2 * dim * KAPPA` with the
//! causal factor `KAPPA = 0.5`; routing costs `2 * (2 D^2) * len` per stage;
//! training FLOPs are `3 *` forward. Target ratios are used as realized
//! ratios; an alternate entry point accepts measured fractions from a
//! forward trace. Non-parametrized glue (smoothing, upsampling, softmax) is
//! not costed.

use std::io::Write;

use thiserror::Error;

use crate::fmt_sig;
use crate::hnet::{ModelConfig, ModelError};
use crate::layers::{BlockKind, Layout, StackSpec};

/// Causal attention discount.
pub const KAPPA: f64 = 0.5;
/// FLOPs per multiply-add.
pub const FLOPS_PER_MADD: f64 = 2.0;
/// Training cost multiple of forward cost (forward + backward).
pub const TRAIN_MULTIPLIER: f64 = 3.0;

#[derive(Debug, Error)]
pub enum FlopsError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-component FLOP totals for one sequence length.
#[derive(Debug, Clone)]
pub struct FlopReport {
    pub seq_len: u64,
    /// Embedding, every encoder stack, and entry projections.
    pub encoder: f64,
    /// The innermost stack.
    pub main: f64,
    /// Every decoder stack, exit projections, final norm and head.
    pub decoder: f64,
    /// Boundary routers, one per stage.
    pub routing: f64,
    /// Quadratic attention subtotal of the innermost stack; scales as
    /// `(L / R_eff)^2`.
    pub quadratic_subtotal: f64,
    /// Product of per-stage compression ratios.
    pub r_eff: f64,
}

impl FlopReport {
    pub fn total(&self) -> f64 {
        self.encoder + self.main + self.decoder + self.routing
    }

    pub fn per_token(&self) -> f64 {
        self.total() / self.seq_len as f64
    }
}

/// Parameter count of one stack at the given level widths; mirrors the
/// model builder exactly (verified against built models in tests).
pub fn stack_params(spec: &StackSpec, dim: usize, ffn_dim: usize, state_dim: usize, conv_width: usize) -> u64 {
    let d = dim as u64;
    let n = state_dim as u64;
    let mut total = 0u64;
    for kind in spec.expanded() {
        total += d; // pre-norm gain
        match kind {
            BlockKind::Attention => {
                total += 4 * d * d;
                if ffn_dim > 0 {
                    total += d; // ffn pre-norm gain
                    total += 2 * d * ffn_dim as u64;
                }
            }
            BlockKind::Mixer => {
                // w_in, two gate projections, w_out
                total += 3 * d * n + n * d;
                // conv taps + conv bias + two gate biases + decays
                total += conv_width as u64 * n + 4 * n;
            }
        }
    }
    total
}

/// Total parameter count of a configuration.
pub fn model_params(config: &ModelConfig) -> Result<u64, FlopsError> {
    let layout = config.validate()?;
    let d0 = config.dims[0] as u64;
    let mut total = 4 * d0 + 4 * d0 + d0; // embedding + head + final norm
    fn walk(layout: &Layout, level: usize, config: &ModelConfig, total: &mut u64) {
        let dims = config.level_dims(level);
        match layout {
            Layout::Stack(spec) => {
                *total += stack_params(spec, dims.dim, dims.ffn_dim, dims.state_dim, dims.conv_width);
            }
            Layout::Stage {
                encoder,
                inner,
                decoder,
            } => {
                let d_in = config.dims[level] as u64;
                let d_out = config.dims[level + 1] as u64;
                *total += stack_params(encoder, dims.dim, dims.ffn_dim, dims.state_dim, dims.conv_width);
                *total += stack_params(decoder, dims.dim, dims.ffn_dim, dims.state_dim, dims.conv_width);
                *total += 2 * d_in * d_in; // router
                *total += 2 * d_in * d_out; // both projections
                walk(inner, level + 1, config, total);
            }
        }
    }
    walk(&layout, 0, config, &mut total);
    Ok(total)
}

/// Linear plus quadratic cost of one stack at effective length `len`.
fn stack_cost(
    spec: &StackSpec,
    dim: usize,
    ffn_dim: usize,
    state_dim: usize,
    conv_width: usize,
    len: f64,
) -> (f64, f64) {
    let params = stack_params(spec, dim, ffn_dim, state_dim, conv_width) as f64;
    let linear = FLOPS_PER_MADD * params * len;
    let quadratic =
        4.0 * len * len * dim as f64 * KAPPA * spec.num_attention() as f64;
    (linear, quadratic)
}

/// Analytic cost of one forward pass at sequence length `l`, using the
/// given per-stage ratios as realized compression.
pub fn flops_with_ratios(
    config: &ModelConfig,
    l: u64,
    ratios: &[f64],
) -> Result<FlopReport, FlopsError> {
    let layout = config.validate()?;
    if ratios.len() != config.num_stages() {
        return Err(FlopsError::Degenerate(format!(
            "expected {} ratios, got {}",
            config.num_stages(),
            ratios.len()
        )));
    }
    if let Some(r) = ratios.iter().find(|&&r| r < 1.0) {
        return Err(FlopsError::Degenerate(format!(
            "realized ratios must be at least 1, got {r}"
        )));
    }
    let d0 = config.dims[0] as f64;
    let lf = l as f64;
    let mut report = FlopReport {
        seq_len: l,
        encoder: FLOPS_PER_MADD * 4.0 * d0 * lf, // embedding
        main: 0.0,
        decoder: FLOPS_PER_MADD * (4.0 * d0 + d0) * lf, // head + final norm
        routing: 0.0,
        quadratic_subtotal: 0.0,
        r_eff: ratios.iter().product(),
    };

    fn walk(
        layout: &Layout,
        level: usize,
        len: f64,
        config: &ModelConfig,
        ratios: &[f64],
        report: &mut FlopReport,
    ) {
        let dims = config.level_dims(level);
        match layout {
            Layout::Stack(spec) => {
                let (linear, quad) = stack_cost(
                    spec,
                    dims.dim,
                    dims.ffn_dim,
                    dims.state_dim,
                    dims.conv_width,
                    len,
                );
                report.main += linear + quad;
                report.quadratic_subtotal += quad;
            }
            Layout::Stage {
                encoder,
                inner,
                decoder,
            } => {
                let d_in = config.dims[level] as f64;
                let d_out = config.dims[level + 1] as f64;
                let (enc_lin, enc_quad) = stack_cost(
                    encoder,
                    dims.dim,
                    dims.ffn_dim,
                    dims.state_dim,
                    dims.conv_width,
                    len,
                );
                let (dec_lin, dec_quad) = stack_cost(
                    decoder,
                    dims.dim,
                    dims.ffn_dim,
                    dims.state_dim,
                    dims.conv_width,
                    len,
                );
                report.encoder += enc_lin + enc_quad;
                report.decoder += dec_lin + dec_quad;
                report.routing += FLOPS_PER_MADD * 2.0 * d_in * d_in * len;
                let inner_len = len / ratios[level];
                // Projections touch chunk latents only.
                report.encoder += FLOPS_PER_MADD * d_in * d_out * inner_len;
                report.decoder += FLOPS_PER_MADD * d_out * d_in * inner_len;
                walk(inner, level + 1, inner_len, config, ratios, report);
            }
        }
    }
    walk(&layout, 0, lf, config, ratios, &mut report);
    Ok(report)
}

/// Analytic cost using the configured targets as realized ratios.
pub fn flops_estimate(config: &ModelConfig, l: u64) -> Result<FlopReport, FlopsError> {
    flops_with_ratios(config, l, &config.targets)
}

/// The compression-disabled twin: identical layers, routers and
/// projections, every stream at full length. This is the plain-stack
/// comparator used by the sweep.
pub fn flops_plain_stack(config: &ModelConfig, l: u64) -> Result<FlopReport, FlopsError> {
    let ones = vec![1.0; config.num_stages()];
    flops_with_ratios(config, l, &ones)
}

/// Training cost for one pass over `tokens` nucleotides (forward+backward).
pub fn training_flops(forward_flops: f64, tokens: f64) -> f64 {
    TRAIN_MULTIPLIER * forward_flops * tokens
}

/// One sweep row: hierarchical and plain-stack totals at one length.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub report: FlopReport,
    pub plain_total: f64,
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// First sweep length where the hierarchical total is strictly below
    /// the plain-stack comparator.
    pub crossover: Option<u64>,
}

/// Evaluates both cost curves over ascending lengths and reports the first
/// strict crossing.
pub fn flops_sweep(config: &ModelConfig, lengths: &[u64]) -> Result<SweepOutcome, FlopsError> {
    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(FlopsError::Degenerate(
            "lengths must be strictly ascending".into(),
        ));
    }
    let mut rows = Vec::with_capacity(lengths.len());
    let mut crossover = None;
    for &l in lengths {
        let report = flops_estimate(config, l)?;
        let plain_total = flops_plain_stack(config, l)?.total();
        if crossover.is_none() && report.total() < plain_total {
            crossover = Some(l);
        }
        rows.push(SweepRow { report, plain_total });
    }
    Ok(SweepOutcome { rows, crossover })
}

/// Writes the sweep CSV, conventions in the header comments.
pub fn write_sweep_csv<W: Write>(w: &mut W, sweep: &SweepOutcome) -> std::io::Result<()> {
    writeln!(
        w,
        "# flops_per_madd={FLOPS_PER_MADD} attention_causal_factor={KAPPA} train_multiplier={TRAIN_MULTIPLIER}"
    )?;
    if let Some(c) = sweep.crossover {
        writeln!(w, "# crossover_below_plain_at_L={c}")?;
    }
    writeln!(
        w,
        "L,total_flops,per_token,enc,main,dec,routing,quadratic_subtotal,R_eff,plain_total"
    )?;
    for row in &sweep.rows {
        let r = &row.report;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.seq_len,
            fmt_sig(r.total()),
            fmt_sig(r.per_token()),
            fmt_sig(r.encoder),
            fmt_sig(r.main),
            fmt_sig(r.decoder),
            fmt_sig(r.routing),
            fmt_sig(r.quadratic_subtotal),
            fmt_sig(r.r_eff),
            fmt_sig(row.plain_total),
        )?;
    }
    Ok(())
}

/// Power law `PPL = A * C^(-alpha)` fitted by least squares in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawFit {
    pub a: f64,
    pub alpha: f64,
    /// RMS residual in log space.
    pub residual: f64,
    pub n_points: usize,
}

/// Fits `(compute, perplexity)` points. All values must be positive and the
/// compute values must not all coincide.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit, FlopsError> {
    if points.len() < 2 {
        return Err(FlopsError::Degenerate(format!(
            "need at least 2 points, got {}",
            points.len()
        )));
    }
    if let Some(&(c, p)) = points.iter().find(|(c, p)| *c <= 0.0 || *p <= 0.0) {
        return Err(FlopsError::Degenerate(format!(
            "all points must be positive, got ({c}, {p})"
        )));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(c, p)| (c.ln(), p.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = logs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(FlopsError::Degenerate(
            "all compute values are identical".into(),
        ));
    }
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (logs
        .iter()
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(PowerLawFit {
        a: intercept.exp(),
        alpha: -slope,
        residual,
        n_points: points.len(),
    })
}

pub fn write_fit_csv<W: Write>(w: &mut W, fit: &PowerLawFit) -> std::io::Result<()> {
    writeln!(w, "A,alpha,residual,n_points")?;
    writeln!(
        w,
        "{},{},{},{}",
        fmt_sig(fit.a),
        fmt_sig(fit.alpha),
        fmt_sig(fit.residual),
        fit.n_points
    )
}

/// Parses a `compute,perplexity` CSV (header optional, `#` comments
/// skipped).
pub fn parse_points_csv(text: &str) -> Result<Vec<(f64, f64)>, FlopsError> {
    let mut points = Vec::new();
    let mut first_data_line = true;
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = t.split(',').collect();
        if cols.len() < 2 {
            return Err(FlopsError::Degenerate(format!(
                "line {}: expected at least 2 columns",
                i + 1
            )));
        }
        let parsed = (cols[0].trim().parse::<f64>(), cols[1].trim().parse::<f64>());
        match parsed {
            (Ok(c), Ok(p)) => points.push((c, p)),
            _ if first_data_line => {} // header row
            _ => {
                return Err(FlopsError::Degenerate(format!(
                    "line {}: bad numbers '{t}'",
                    i + 1
                )))
            }
        }
        first_data_line = false;
    }
    Ok(points)
}
