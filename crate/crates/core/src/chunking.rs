//! Dynamic chunking: boundary routing, hard downsampling with
//! straight-through gradients, the boundary-weighted smoothing recurrence,
//! upsampling, and the compression ratio loss.
//!
//! The first position is always a forced boundary (`p_1 = b_1 = 1`), which
//! guarantees at least one chunk and anchors the smoothing recurrence.

use std::io::Write;

use crate::autodiff::{
    concat_rows, gather_rows, linear_scan, matmul, ste_one, Result, Scalar, Tensor,
    TensorError,
};

/// Epsilon guard in cosine-similarity denominators.
pub const COSINE_EPS: f64 = 1e-8;

/// Inference discretization threshold.
pub const TAU: f64 = 0.5;

/// Per-position boundary probabilities and hard decisions for one stage.
#[derive(Debug, Clone)]
pub struct BoundaryDecision {
    pub p: Vec<f64>,
    pub b: Vec<bool>,
    pub stage_index: usize,
}

impl BoundaryDecision {
    /// Fraction of selected positions (F in the ratio loss).
    pub fn selected_fraction(&self) -> f64 {
        self.b.iter().filter(|&&x| x).count() as f64 / self.b.len() as f64
    }

    /// Mean boundary probability (G in the ratio loss).
    pub fn mean_probability(&self) -> f64 {
        self.p.iter().sum::<f64>() / self.p.len() as f64
    }
}

/// Compressed stream produced by downsampling: boundary-row latents, the
/// position-to-chunk map, and the boundary probability opening each chunk.
pub struct ChunkedSequence<T: Scalar> {
    pub latents: Tensor<T>,
    /// `chunk_map[t]` = 0-based index of the chunk containing position `t`;
    /// non-decreasing, surjective onto `0..num_chunks`, starts at 0.
    pub chunk_map: Vec<usize>,
    /// Probability at the boundary position that opened each chunk (P_j).
    pub boundary_probs_at_chunks: Tensor<T>,
    /// Input positions of the chunk-opening boundaries.
    pub boundary_positions: Vec<usize>,
}

impl<T: Scalar> ChunkedSequence<T> {
    pub fn num_chunks(&self) -> usize {
        self.boundary_positions.len()
    }
}

/// Boundary router: projects adjacent hidden states and scores their
/// dissimilarity.
pub struct Router<T: Scalar> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
}

impl<T: Scalar> Router<T> {
    pub fn new(wq: Tensor<T>, wk: Tensor<T>) -> Self {
        Router { wq, wk }
    }

    pub fn probs(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        route(h, &self.wq, &self.wk)
    }
}

/// Boundary probabilities `p_t = (1 - cos(W_q h_t, W_k h_{t-1})) / 2` for
/// `t >= 2`, with `p_1` forced to 1. Differentiable in `h` and both
/// projections; zero-norm projections are guarded by [`COSINE_EPS`].
pub fn route<T: Scalar>(h: &Tensor<T>, wq: &Tensor<T>, wk: &Tensor<T>) -> Result<Tensor<T>> {
    let (l, _) = h.dims2()?;
    let q = matmul(h, wq)?;
    let k = matmul(h, wk)?;
    let k_prev = k.shift_rows(1)?;

    // Row-wise cosine between q_t and k_{t-1}.
    let dot = q.mul(&k_prev)?.sum_axis1()?;
    let qn = q.mul(&q)?.sum_axis1()?.sqrt()?;
    let kn = k_prev.mul(&k_prev)?.sum_axis1()?.sqrt()?;
    let cos = dot.div(&qn.mul(&kn)?.add_scalar(COSINE_EPS)?)?;
    let p = cos.neg()?.add_scalar(1.0)?.scale(0.5)?.reshape(&[l])?;

    if l == 1 {
        return Ok(Tensor::ones(&[1]));
    }
    let rest = p.slice_rows(1, l)?;
    concat_rows(&[&Tensor::ones(&[1]), &rest])
}

/// Hard decisions `b_t = (p_t > tau)` with a strict inequality; the first
/// position is forced on.
pub fn discretize(p: &[f64]) -> Vec<bool> {
    let mut b: Vec<bool> = p.iter().map(|&v| v > TAU).collect();
    if let Some(first) = b.first_mut() {
        *first = true;
    }
    b
}

/// Selects the hidden rows at boundary positions. The forward pass is a hard
/// selection; gradients flow only into the selected rows.
pub fn downsample<T: Scalar>(
    h: &Tensor<T>,
    p: &Tensor<T>,
    b: &[bool],
) -> Result<ChunkedSequence<T>> {
    let (l, _) = h.dims2()?;
    if b.len() != l {
        return Err(TensorError::Shape {
            op: "downsample",
            msg: format!("{l} rows vs {} decisions", b.len()),
        });
    }
    if !b[0] {
        return Err(TensorError::Domain(
            "first position must be a boundary".into(),
        ));
    }
    let boundary_positions: Vec<usize> =
        b.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| i).collect();
    let num_chunks = boundary_positions.len();
    debug_assert!(num_chunks >= 1 && num_chunks <= l);

    let mut chunk_map = Vec::with_capacity(l);
    let mut current = 0usize;
    for (t, &bt) in b.iter().enumerate() {
        if bt && t > 0 {
            current += 1;
        }
        chunk_map.push(current);
    }

    Ok(ChunkedSequence {
        latents: gather_rows(h, &boundary_positions)?,
        chunk_map,
        boundary_probs_at_chunks: gather_rows(p, &boundary_positions)?,
        boundary_positions,
    })
}

/// Boundary-weighted smoothing recurrence over chunk latents:
/// `s_j = P_j e_j + (1 - P_j) s_{j-1}`, with `s_0 = 0`. This is a primary
/// gradient path from the decoder into the router.
pub fn smooth<T: Scalar>(latents: &Tensor<T>, probs: &Tensor<T>) -> Result<Tensor<T>> {
    let (lp, _) = latents.dims2()?;
    if probs.numel() != lp {
        return Err(TensorError::Shape {
            op: "smooth",
            msg: format!("{lp} latents vs {} probabilities", probs.numel()),
        });
    }
    let p_col = probs.reshape(&[lp, 1])?;
    let decay = p_col.neg()?.add_scalar(1.0)?;
    let (rows, cols) = latents.dims2()?;
    let decay_full = matmul(&decay, &Tensor::ones(&[1, cols]))?;
    let _ = rows;
    linear_scan(&decay_full, &latents.mul(&p_col)?)
}

/// Expands smoothed chunk latents back to one row per input position by
/// copying chunk `chunk_map[t]` to position `t`.
///
/// With `confidence` on, each row is multiplied by a straight-through
/// coefficient whose forward value is exactly 1 and whose backward pass uses
/// the surrogate `p_t` at boundaries and `1 - p_t` elsewhere, giving the
/// router a gradient through every position. With it off the copy has no
/// gradient to `p`.
pub fn upsample<T: Scalar>(
    smoothed: &Tensor<T>,
    chunk_map: &[usize],
    p: &Tensor<T>,
    b: &[bool],
    confidence: bool,
) -> Result<Tensor<T>> {
    let expanded = gather_rows(smoothed, chunk_map)?;
    if !confidence {
        return Ok(expanded);
    }
    let l = chunk_map.len();
    let mask: Vec<T> = b
        .iter()
        .map(|&x| if x { T::one() } else { T::zero() })
        .collect();
    let mask = Tensor::constant(&[l], mask)?;
    let anti = mask.neg()?.add_scalar(1.0)?;
    // surrogate: p where b=1, (1-p) where b=0
    let surrogate = p.mul(&mask)?.add(&p.neg()?.add_scalar(1.0)?.mul(&anti)?)?;
    let coeff = ste_one(&surrogate)?.reshape(&[l, 1])?;
    expanded.mul(&coeff)
}

/// The relaxed (non-straight-through) coefficient used as the finite
/// difference target for the straight-through estimator.
pub fn relaxed_confidence<T: Scalar>(p: &Tensor<T>, b: &[bool]) -> Result<Tensor<T>> {
    let l = b.len();
    let mask: Vec<T> = b
        .iter()
        .map(|&x| if x { T::one() } else { T::zero() })
        .collect();
    let mask = Tensor::constant(&[l], mask)?;
    let anti = mask.neg()?.add_scalar(1.0)?;
    p.mul(&mask)?.add(&p.neg()?.add_scalar(1.0)?.mul(&anti)?)
}

/// Compression regularizer
/// `(R/(R-1)) * ((R-1) F G + (1-F)(1-G))` pushing both the selected
/// fraction `F` (no gradient) and the mean probability `G` (gradient path)
/// toward `1/R`. Minimum value 1 on the diagonal `F = G = 1/R`.
pub fn ratio_loss<T: Scalar>(f: f64, g: &Tensor<T>, target: f64) -> Result<Tensor<T>> {
    if target <= 1.0 {
        return Err(TensorError::Domain(format!(
            "compression target must exceed 1, got {target}"
        )));
    }
    if !(0.0..=1.0).contains(&f) {
        return Err(TensorError::Domain(format!(
            "selected fraction must lie in [0,1], got {f}"
        )));
    }
    let scale = target / (target - 1.0);
    // (R-1) F G + (1 - F)(1 - G)
    let term1 = g.scale((target - 1.0) * f)?;
    let term2 = g.neg()?.add_scalar(1.0)?.scale(1.0 - f)?;
    term1.add(&term2)?.scale(scale)
}

/// Scalar form of the ratio loss for analysis and tests.
pub fn ratio_loss_value(f: f64, g: f64, target: f64) -> f64 {
    (target / (target - 1.0)) * ((target - 1.0) * f * g + (1.0 - f) * (1.0 - g))
}

/// One row of a boundary dump (`seq_id,stage,position,p,b`, 1-based
/// positions).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryDumpRow {
    pub seq_id: String,
    /// 1-based stage number.
    pub stage: usize,
    /// 1-based position in the originating sequence (origin offset applied).
    pub position: usize,
    pub p: f64,
    pub b: bool,
}

pub fn write_boundary_dump<W: Write>(
    w: &mut W,
    rows: &[BoundaryDumpRow],
) -> std::io::Result<()> {
    writeln!(w, "seq_id,stage,position,p,b")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.seq_id,
            r.stage,
            r.position,
            crate::fmt_sig(r.p),
            u8::from(r.b)
        )?;
    }
    Ok(())
}

pub fn parse_boundary_dump(text: &str) -> std::result::Result<Vec<BoundaryDumpRow>, String> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "seq_id,stage,position,p,b" {
                return Err(format!("unexpected dump header: {line}"));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(format!("line {}: expected 5 columns", i + 1));
        }
        rows.push(BoundaryDumpRow {
            seq_id: cols[0].to_string(),
            stage: cols[1].parse().map_err(|_| format!("line {}: bad stage", i + 1))?,
            position: cols[2]
                .parse()
                .map_err(|_| format!("line {}: bad position", i + 1))?,
            p: cols[3].parse().map_err(|_| format!("line {}: bad p", i + 1))?,
            b: cols[4] == "1",
        });
    }
    Ok(rows)
}
