//! Sequence-mixing building blocks: embedding, causal self-attention with
//! rotary positions, a gated linear recurrent mixer, feed-forward, RMS
//! pre-normalization, the output head, and the layout grammar.

mod layout;

pub use layout::{parse_layout, print_layout, BlockKind, Layout, LayoutError, StackSpec};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{
    concat_cols, gather_rows, linear_scan, matmul, rms_norm, Parameter, Result, Scalar, Tensor,
};

const INIT_STD: f64 = 0.02;
const ROPE_BASE: f64 = 10000.0;
const ATTN_MASK: f64 = -1e30;

/// Collects uniquely named parameters as layers are built.
pub struct ParamSet<T: Scalar> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn into_params(self) -> Vec<Parameter<T>> {
        self.params
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    fn add(&mut self, p: Parameter<T>) -> Tensor<T> {
        assert!(
            !self.params.iter().any(|q| q.name == p.name),
            "duplicate parameter name {}",
            p.name
        );
        let t = p.tensor.clone();
        self.params.push(p);
        t
    }

    /// Truncated-normal initialized matrix (std 0.02, resampled at 2 sigma).
    pub fn trunc_normal(
        &mut self,
        rng: &mut ChaCha8Rng,
        name: String,
        shape: &[usize],
        lr_multiplier: f64,
    ) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| {
                let mut z: f64 = rng.sample(StandardNormal);
                while z.abs() > 2.0 {
                    z = rng.sample(StandardNormal);
                }
                T::from_f64(z * INIT_STD)
            })
            .collect();
        let t = Tensor::leaf(shape, data).expect("init shape");
        self.add(Parameter::new(name, t).with_lr_multiplier(lr_multiplier))
    }

    pub fn constant_init(
        &mut self,
        name: String,
        shape: &[usize],
        value: f64,
        lr_multiplier: f64,
        weight_decay: bool,
    ) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let t = Tensor::leaf(shape, vec![T::from_f64(value); n]).expect("init shape");
        let mut p = Parameter::new(name, t).with_lr_multiplier(lr_multiplier);
        if !weight_decay {
            p = p.without_weight_decay();
        }
        self.add(p)
    }

    pub fn from_values(
        &mut self,
        name: String,
        shape: &[usize],
        values: Vec<T>,
        lr_multiplier: f64,
        weight_decay: bool,
    ) -> Tensor<T> {
        let t = Tensor::leaf(shape, values).expect("init shape");
        let mut p = Parameter::new(name, t).with_lr_multiplier(lr_multiplier);
        if !weight_decay {
            p = p.without_weight_decay();
        }
        self.add(p)
    }
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Nucleotide embedding table (4 x D).
pub struct Embedding<T: Scalar> {
    pub table: Tensor<T>,
}

impl<T: Scalar> Embedding<T> {
    pub fn new(ps: &mut ParamSet<T>, rng: &mut ChaCha8Rng, dim: usize, lr: f64) -> Self {
        let n = 4 * dim;
        let data: Vec<T> = (0..n)
            .map(|_| {
                let mut z: f64 = rng.sample(StandardNormal);
                while z.abs() > 2.0 {
                    z = rng.sample(StandardNormal);
                }
                T::from_f64(z * INIT_STD)
            })
            .collect();
        let t = Tensor::leaf(&[4, dim], data).expect("embedding shape");
        let table = ps.add(
            Parameter::new("embed.table", t)
                .with_lr_multiplier(lr)
                .without_weight_decay(),
        );
        Embedding { table }
    }

    pub fn forward(&self, codes: &[u8]) -> Result<Tensor<T>> {
        let idx: Vec<usize> = codes.iter().map(|&c| c as usize).collect();
        gather_rows(&self.table, &idx)
    }
}

/// Linear projection to vocabulary logits (D x 4), untied from the embedding.
pub struct OutputHead<T: Scalar> {
    pub w: Tensor<T>,
}

impl<T: Scalar> OutputHead<T> {
    pub fn new(ps: &mut ParamSet<T>, rng: &mut ChaCha8Rng, dim: usize, lr: f64) -> Self {
        OutputHead {
            w: ps.trunc_normal(rng, "head.w".into(), &[dim, 4], lr),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        matmul(x, &self.w)
    }
}

/// RMS normalization with a learned gain.
pub struct RmsNorm<T: Scalar> {
    pub gain: Tensor<T>,
}

impl<T: Scalar> RmsNorm<T> {
    pub fn new(ps: &mut ParamSet<T>, name: String, dim: usize, lr: f64) -> Self {
        RmsNorm {
            gain: ps.constant_init(name, &[1, dim], 1.0, lr, false),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        rms_norm(x, &self.gain)
    }
}

/// Bias-free dense map between stage dimensions.
pub struct Linear<T: Scalar> {
    pub w: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        name: String,
        d_in: usize,
        d_out: usize,
        lr: f64,
    ) -> Self {
        Linear {
            w: ps.trunc_normal(rng, name, &[d_in, d_out], lr),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        matmul(x, &self.w)
    }
}

/// Causal multi-head self-attention with rotary positions.
pub struct Attention<T: Scalar> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub heads: usize,
}

impl<T: Scalar> Attention<T> {
    pub fn new(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        dim: usize,
        heads: usize,
        lr: f64,
    ) -> Self {
        assert!(heads >= 1 && dim % heads == 0, "heads must divide dim");
        Attention {
            wq: ps.trunc_normal(rng, format!("{prefix}.wq"), &[dim, dim], lr),
            wk: ps.trunc_normal(rng, format!("{prefix}.wk"), &[dim, dim], lr),
            wv: ps.trunc_normal(rng, format!("{prefix}.wv"), &[dim, dim], lr),
            wo: ps.trunc_normal(rng, format!("{prefix}.wo"), &[dim, dim], lr),
            heads,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (l, d) = x.dims2()?;
        let dh = d / self.heads;
        let q = matmul(x, &self.wq)?;
        let k = matmul(x, &self.wk)?;
        let v = matmul(x, &self.wv)?;
        let mask = causal_mask::<T>(l);
        let (cos, sin, rot) = rope_tables::<T>(l, dh);
        let scale = 1.0 / (dh as f64).sqrt();

        let mut heads_out = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let qh = apply_rope(&q.slice_cols(c0, c1)?, &cos, &sin, &rot)?;
            let kh = apply_rope(&k.slice_cols(c0, c1)?, &cos, &sin, &rot)?;
            let vh = v.slice_cols(c0, c1)?;
            let scores = matmul(&qh, &kh.transpose()?)?.scale(scale)?.add(&mask)?;
            let attn = scores.softmax_rows()?;
            heads_out.push(matmul(&attn, &vh)?);
        }
        let refs: Vec<&Tensor<T>> = heads_out.iter().collect();
        let merged = if refs.len() == 1 {
            heads_out[0].clone()
        } else {
            concat_cols(&refs)?
        };
        matmul(&merged, &self.wo)
    }
}

/// Strictly lower-triangular-permitting additive mask: 0 at or below the
/// diagonal, a large negative constant above, so masked weights underflow to
/// exactly zero after softmax.
fn causal_mask<T: Scalar>(l: usize) -> Tensor<T> {
    let neg = T::from_f64(ATTN_MASK);
    let mut data = vec![T::zero(); l * l];
    for i in 0..l {
        for j in (i + 1)..l {
            data[i * l + j] = neg;
        }
    }
    Tensor::constant(&[l, l], data).expect("mask shape")
}

/// Rotary tables for head width `dh`: elementwise cos/sin factors plus the
/// pair-swap matrix, so `rope(x) = x*cos + (x@rot)*sin`.
fn rope_tables<T: Scalar>(l: usize, dh: usize) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let pairs = dh / 2;
    let mut cos = vec![T::one(); l * dh];
    let mut sin = vec![T::zero(); l * dh];
    for t in 0..l {
        for j in 0..pairs {
            let theta = (t as f64) * ROPE_BASE.powf(-2.0 * j as f64 / dh as f64);
            let (s, c) = theta.sin_cos();
            cos[t * dh + 2 * j] = T::from_f64(c);
            cos[t * dh + 2 * j + 1] = T::from_f64(c);
            sin[t * dh + 2 * j] = T::from_f64(s);
            sin[t * dh + 2 * j + 1] = T::from_f64(s);
        }
    }
    let mut rot = vec![T::zero(); dh * dh];
    for j in 0..pairs {
        rot[(2 * j + 1) * dh + 2 * j] = T::zero() - T::one();
        rot[2 * j * dh + 2 * j + 1] = T::one();
    }
    (
        Tensor::constant(&[l, dh], cos).expect("cos shape"),
        Tensor::constant(&[l, dh], sin).expect("sin shape"),
        Tensor::constant(&[dh, dh], rot).expect("rot shape"),
    )
}

fn apply_rope<T: Scalar>(
    x: &Tensor<T>,
    cos: &Tensor<T>,
    sin: &Tensor<T>,
    rot: &Tensor<T>,
) -> Result<Tensor<T>> {
    x.mul(cos)?.add(&matmul(x, rot)?.mul(sin)?)
}

/// Gated diagonal linear recurrence with a width-`conv` causal convolution
/// front end. State update per channel: `s_t = a * s_{t-1} + b_t * u_t` with
/// input-dependent gates `b_t` and fixed learned decays `a` squashed into
/// (0,1); the output is gated and projected back to model dimension.
pub struct RecurrentMixer<T: Scalar> {
    pub w_in: Tensor<T>,
    pub conv_w: Tensor<T>,
    pub conv_b: Tensor<T>,
    pub w_gate_in: Tensor<T>,
    pub b_gate_in: Tensor<T>,
    pub w_gate_out: Tensor<T>,
    pub b_gate_out: Tensor<T>,
    pub decay_logits: Tensor<T>,
    pub w_out: Tensor<T>,
    pub conv_width: usize,
}

impl<T: Scalar> RecurrentMixer<T> {
    pub fn new(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        dim: usize,
        state_dim: usize,
        conv_width: usize,
        lr: f64,
    ) -> Self {
        assert!(conv_width >= 1);
        // Delta-kernel init: tap 0 passes the input through untouched.
        let mut conv_init = vec![T::zero(); conv_width * state_dim];
        for j in 0..state_dim {
            conv_init[j] = T::one();
        }
        // Decay logits spread over (0, 4] so sigmoid covers (0.5, ~0.98).
        let decay_init: Vec<T> = (0..state_dim)
            .map(|j| T::from_f64(4.0 * (j + 1) as f64 / state_dim as f64))
            .collect();
        RecurrentMixer {
            w_in: ps.trunc_normal(rng, format!("{prefix}.w_in"), &[dim, state_dim], lr),
            conv_w: ps.from_values(
                format!("{prefix}.conv_w"),
                &[conv_width, state_dim],
                conv_init,
                lr,
                true,
            ),
            conv_b: ps.constant_init(format!("{prefix}.conv_b"), &[1, state_dim], 0.0, lr, true),
            w_gate_in: ps.trunc_normal(rng, format!("{prefix}.w_gate_in"), &[dim, state_dim], lr),
            b_gate_in: ps.constant_init(
                format!("{prefix}.b_gate_in"),
                &[1, state_dim],
                1.0,
                lr,
                true,
            ),
            w_gate_out: ps.trunc_normal(rng, format!("{prefix}.w_gate_out"), &[dim, state_dim], lr),
            b_gate_out: ps.constant_init(
                format!("{prefix}.b_gate_out"),
                &[1, state_dim],
                0.0,
                lr,
                true,
            ),
            decay_logits: ps.from_values(
                format!("{prefix}.decay"),
                &[1, state_dim],
                decay_init,
                lr,
                true,
            ),
            w_out: ps.trunc_normal(rng, format!("{prefix}.w_out"), &[state_dim, dim], lr),
            conv_width,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (l, _) = x.dims2()?;
        let u0 = matmul(x, &self.w_in)?;
        // Depthwise causal convolution: sum of delayed copies times per-tap
        // channel weights.
        let mut u = u0.mul(&self.conv_w.slice_rows(0, 1)?)?;
        for k in 1..self.conv_width {
            let tap = u0.shift_rows(k)?.mul(&self.conv_w.slice_rows(k, k + 1)?)?;
            u = u.add(&tap)?;
        }
        let u = u.add(&self.conv_b)?.silu()?;

        let gate_in = matmul(x, &self.w_gate_in)?.add(&self.b_gate_in)?.sigmoid()?;
        let decay = self.decay_logits.sigmoid()?.repeat_rows(l)?;
        let s = linear_scan(&decay, &gate_in.mul(&u)?)?;
        let gate_out = matmul(x, &self.w_gate_out)?.add(&self.b_gate_out)?.sigmoid()?;
        matmul(&gate_out.mul(&s)?, &self.w_out)
    }
}

/// Two-matrix feed-forward with SiLU gating on the hidden layer.
pub struct FeedForward<T: Scalar> {
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn new(
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        dim: usize,
        hidden: usize,
        lr: f64,
    ) -> Self {
        FeedForward {
            w1: ps.trunc_normal(rng, format!("{prefix}.w1"), &[dim, hidden], lr),
            w2: ps.trunc_normal(rng, format!("{prefix}.w2"), &[hidden, dim], lr),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        matmul(&matmul(x, &self.w1)?.silu()?, &self.w2)
    }
}

enum Sublayer<T: Scalar> {
    Mixer(RecurrentMixer<T>),
    Attention(Attention<T>),
}

/// One residual block: pre-normed mixer or attention, plus an optional
/// pre-normed feed-forward when the level's intermediate dim is nonzero.
pub struct Block<T: Scalar> {
    norm1: RmsNorm<T>,
    sublayer: Sublayer<T>,
    ffn: Option<(RmsNorm<T>, FeedForward<T>)>,
}

impl<T: Scalar> Block<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.norm1.forward(x)?;
        let mixed = match &self.sublayer {
            Sublayer::Mixer(m) => m.forward(&h)?,
            Sublayer::Attention(a) => a.forward(&h)?,
        };
        let y = x.add(&mixed)?;
        match &self.ffn {
            Some((norm2, ffn)) => {
                let f = ffn.forward(&norm2.forward(&y)?)?;
                y.add(&f)
            }
            None => Ok(y),
        }
    }

    pub fn kind(&self) -> BlockKind {
        match &self.sublayer {
            Sublayer::Mixer(_) => BlockKind::Mixer,
            Sublayer::Attention(_) => BlockKind::Attention,
        }
    }
}

/// Width settings shared by every block at one hierarchy level.
#[derive(Debug, Clone, Copy)]
pub struct LevelDims {
    pub dim: usize,
    pub heads: usize,
    /// Feed-forward hidden width; 0 disables the FFN sublayer.
    pub ffn_dim: usize,
    pub state_dim: usize,
    pub conv_width: usize,
}

/// Builds the blocks of one stack; names are `{prefix}.block{i}.*`.
pub fn build_stack<T: Scalar>(
    ps: &mut ParamSet<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    spec: &StackSpec,
    dims: LevelDims,
    lr: f64,
) -> Vec<Block<T>> {
    let mut blocks = Vec::with_capacity(spec.num_layers());
    for (i, kind) in spec.expanded().into_iter().enumerate() {
        let base = format!("{prefix}.block{i}");
        let norm1 = RmsNorm::new(ps, format!("{base}.norm1.gain"), dims.dim, lr);
        let sublayer = match kind {
            BlockKind::Mixer => Sublayer::Mixer(RecurrentMixer::new(
                ps,
                rng,
                &format!("{base}.mixer"),
                dims.dim,
                dims.state_dim,
                dims.conv_width,
                lr,
            )),
            BlockKind::Attention => Sublayer::Attention(Attention::new(
                ps,
                rng,
                &format!("{base}.attn"),
                dims.dim,
                dims.heads,
                lr,
            )),
        };
        // Feed-forward rides on attention blocks only, and only at levels
        // with a nonzero intermediate width.
        let ffn = if kind == BlockKind::Attention && dims.ffn_dim > 0 {
            let norm2 = RmsNorm::new(ps, format!("{base}.norm2.gain"), dims.dim, lr);
            let ffn = FeedForward::new(ps, rng, &format!("{base}.ffn"), dims.dim, dims.ffn_dim, lr);
            Some((norm2, ffn))
        } else {
            None
        };
        blocks.push(Block {
            norm1,
            sublayer,
            ffn,
        });
    }
    blocks
}

/// Runs a stack of blocks in order.
pub fn run_stack<T: Scalar>(blocks: &[Block<T>], x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut h = x.clone();
    for b in blocks {
        h = b.forward(&h)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::no_grad;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_input(l: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut r = rng(seed);
        let data: Vec<f64> = (0..l * d).map(|_| r.random_range(-1.0..1.0)).collect();
        Tensor::constant(&[l, d], data).unwrap()
    }

    fn dims(d: usize, heads: usize) -> LevelDims {
        LevelDims {
            dim: d,
            heads,
            ffn_dim: 0,
            state_dim: 8,
            conv_width: 4,
        }
    }

    /// Perturbing position `t` must leave outputs at earlier positions
    /// bit-identical.
    fn assert_causal(f: impl Fn(&Tensor<f64>) -> Tensor<f64>, l: usize, d: usize) {
        let x = random_input(l, d, 3);
        let y = f(&x);
        for t in 1..l {
            let mut data = x.data();
            for j in 0..d {
                data[t * d + j] += 0.7 + t as f64;
            }
            let xp = Tensor::constant(&[l, d], data).unwrap();
            let yp = f(&xp);
            let (y0, y1) = (y.data(), yp.data());
            for i in 0..t * d {
                assert_eq!(y0[i], y1[i], "leak at pos {} after perturbing {}", i / d, t);
            }
        }
    }

    #[test]
    fn attention_is_causal() {
        let mut ps = ParamSet::<f64>::new();
        let mut r = rng(1);
        let attn = Attention::new(&mut ps, &mut r, "a", 8, 2, 1.0);
        assert_causal(|x| no_grad(|| attn.forward(x).unwrap()), 7, 8);
    }

    #[test]
    fn mixer_is_causal() {
        let mut ps = ParamSet::<f64>::new();
        let mut r = rng(2);
        let mixer = RecurrentMixer::new(&mut ps, &mut r, "m", 8, 8, 4, 1.0);
        assert_causal(|x| no_grad(|| mixer.forward(x).unwrap()), 9, 8);
    }

    #[test]
    fn block_with_ffn_is_causal() {
        let mut ps = ParamSet::<f64>::new();
        let mut r = rng(3);
        let blocks = build_stack(
            &mut ps,
            &mut r,
            "s",
            &StackSpec {
                blocks: vec![(BlockKind::Attention, 1), (BlockKind::Mixer, 1)],
            },
            LevelDims {
                ffn_dim: 16,
                ..dims(8, 2)
            },
            1.0,
        );
        assert_causal(|x| no_grad(|| run_stack(&blocks, x).unwrap()), 6, 8);
    }

    #[test]
    fn attention_length_one_is_value_path() {
        // With a single position, softmax over one key is 1, so the output
        // is x W_v W_o exactly.
        let mut ps = ParamSet::<f64>::new();
        let mut r = rng(4);
        let attn = Attention::new(&mut ps, &mut r, "a", 6, 2, 1.0);
        let x = random_input(1, 6, 5);
        let y = attn.forward(&x).unwrap();
        let expect = matmul(&matmul(&x, &attn.wv).unwrap(), &attn.wo).unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_queries_average_prefix_values() {
        // With Q and K zeroed, attention weights are uniform over the causal
        // prefix: output t = mean(v_1..v_t) O.
        let mut ps = ParamSet::<f64>::new();
        let mut r = rng(6);
        let attn = Attention::new(&mut ps, &mut r, "a", 4, 1, 1.0);
        attn.wq.map_data(|d| d.fill(0.0));
        attn.wk.map_data(|d| d.fill(0.0));
        let l = 5;
        let x = random_input(l, 4, 7);
        let y = attn.forward(&x).unwrap();

        let v = matmul(&x, &attn.wv).unwrap().data();
        let mut means = vec![0.0; l * 4];
        for t in 0..l {
            for j in 0..4 {
                let mut s = 0.0;
                for u in 0..=t {
                    s += v[u * 4 + j];
                }
                means[t * 4 + j] = s / (t + 1) as f64;
            }
        }
        let expect = matmul(
            &Tensor::constant(&[l, 4], means).unwrap(),
            &attn.wo,
        )
        .unwrap();
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn mixer_with_closed_gates_is_near_zero() {
        let mut ps = ParamSet::<f64>::new();
        let mut r = rng(8);
        let mixer = RecurrentMixer::new(&mut ps, &mut r, "m", 6, 8, 4, 1.0);
        // Force both gates shut through their biases.
        mixer.w_gate_in.map_data(|d| d.fill(0.0));
        mixer.b_gate_in.map_data(|d| d.fill(-60.0));
        mixer.w_gate_out.map_data(|d| d.fill(0.0));
        mixer.b_gate_out.map_data(|d| d.fill(-60.0));
        let x = random_input(6, 6, 9);
        let y = mixer.forward(&x).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn mixer_scan_matches_sequential_reference() {
        // Re-derive the mixer output with a plain per-position loop.
        let mut ps = ParamSet::<f64>::new();
        let mut r = rng(10);
        let (l, d, n, cw) = (11, 5, 7, 4);
        let mixer = RecurrentMixer::new(&mut ps, &mut r, "m", d, n, cw, 1.0);
        let x = random_input(l, d, 11);
        let y = no_grad(|| mixer.forward(&x).unwrap());

        let xd = x.data();
        let w_in = mixer.w_in.data();
        let conv_w = mixer.conv_w.data();
        let conv_b = mixer.conv_b.data();
        let wg_in = mixer.w_gate_in.data();
        let bg_in = mixer.b_gate_in.data();
        let wg_out = mixer.w_gate_out.data();
        let bg_out = mixer.b_gate_out.data();
        let decays: Vec<f64> = mixer
            .decay_logits
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let w_out = mixer.w_out.data();

        let matvec = |w: &[f64], row: &[f64], rows: usize, cols: usize| -> Vec<f64> {
            let mut out = vec![0.0; cols];
            for i in 0..rows {
                for j in 0..cols {
                    out[j] += row[i] * w[i * cols + j];
                }
            }
            out
        };
        let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());

        let mut u0 = vec![vec![0.0; n]; l];
        for t in 0..l {
            u0[t] = matvec(&w_in, &xd[t * d..(t + 1) * d], d, n);
        }
        let mut state = vec![0.0; n];
        let mut expect = vec![0.0; l * d];
        for t in 0..l {
            let mut u = vec![0.0; n];
            for j in 0..n {
                for k in 0..cw {
                    if t >= k {
                        u[j] += conv_w[k * n + j] * u0[t - k][j];
                    }
                }
                u[j] += conv_b[j];
                u[j] *= sigmoid(u[j]);
            }
            let gin = matvec(&wg_in, &xd[t * d..(t + 1) * d], d, n);
            let gout = matvec(&wg_out, &xd[t * d..(t + 1) * d], d, n);
            let mut gated = vec![0.0; n];
            for j in 0..n {
                state[j] = decays[j] * state[j] + sigmoid(gin[j] + bg_in[j]) * u[j];
                gated[j] = sigmoid(gout[j] + bg_out[j]) * state[j];
            }
            let out = matvec(&w_out, &gated, n, d);
            expect[t * d..(t + 1) * d].copy_from_slice(&out);
        }
        for (a, b) in y.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn embedding_rows_match_table() {
        let mut ps = ParamSet::<f64>::new();
        let mut r = rng(12);
        let emb = Embedding::new(&mut ps, &mut r, 5, 1.0);
        let x = emb.forward(&[2, 0, 3]).unwrap();
        let table = emb.table.data();
        let got = x.data();
        assert_eq!(&got[0..5], &table[10..15]);
        assert_eq!(&got[5..10], &table[0..5]);
        assert_eq!(&got[10..15], &table[15..20]);
    }

    #[test]
    fn head_produces_four_logits_per_position() {
        let mut ps = ParamSet::<f64>::new();
        let mut r = rng(13);
        let head = OutputHead::new(&mut ps, &mut r, 6, 1.0);
        for l in [1, 3, 17] {
            let y = head.forward(&random_input(l, 6, 14)).unwrap();
            assert_eq!(y.shape(), &[l, 4]);
            let sm = y.softmax_rows().unwrap().data();
            for i in 0..l {
                let s: f64 = sm[i * 4..(i + 1) * 4].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
