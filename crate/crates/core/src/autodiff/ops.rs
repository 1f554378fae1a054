//! Primitive tensor operations with registered gradient rules.
//!
//! Binary elementwise ops broadcast a scalar, a column `[L,1]` or a row
//! `[1,D]` against a 2-D operand; everything else must match shapes exactly.
//! Matrix products route through `ndarray::linalg::general_mat_mul`.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::{shape_err, Result, Scalar, Tensor};

/// How an operand's flat index is derived from the output's flat index.
#[derive(Clone, Copy, PartialEq)]
enum Map {
    Full,
    Scalar,
    Col,
    Row,
}

fn broadcast_plan(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<(Vec<usize>, Map, Map)> {
    if a == b {
        return Ok((a.to_vec(), Map::Full, Map::Full));
    }
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if na == 1 {
        return Ok((b.to_vec(), Map::Scalar, Map::Full));
    }
    if nb == 1 {
        return Ok((a.to_vec(), Map::Full, Map::Scalar));
    }
    if let ([ar, ac], [br, bc]) = (a, b) {
        if ar == br && *bc == 1 {
            return Ok((a.to_vec(), Map::Full, Map::Col));
        }
        if ar == br && *ac == 1 {
            return Ok((b.to_vec(), Map::Col, Map::Full));
        }
        if ac == bc && *br == 1 {
            return Ok((a.to_vec(), Map::Full, Map::Row));
        }
        if ac == bc && *ar == 1 {
            return Ok((b.to_vec(), Map::Row, Map::Full));
        }
    }
    shape_err(op, format!("incompatible shapes {a:?} and {b:?}"))
}

fn cols_of(shape: &[usize]) -> usize {
    match shape {
        [_, c] => *c,
        _ => 1,
    }
}

#[inline]
fn mapped_index(map: Map, i: usize, cols: usize) -> usize {
    match map {
        Map::Full => i,
        Map::Scalar => 0,
        Map::Col => i / cols,
        Map::Row => i % cols,
    }
}

/// Reduces an output-shaped gradient back onto a broadcast operand.
fn reduce_to_operand<T: Scalar>(
    grad: &[T],
    out_shape: &[usize],
    map: Map,
    operand_len: usize,
) -> Vec<T> {
    match map {
        Map::Full => grad.to_vec(),
        Map::Scalar => {
            let mut s = T::zero();
            for g in grad {
                s = s + *g;
            }
            vec![s]
        }
        Map::Col | Map::Row => {
            let cols = cols_of(out_shape);
            let mut out = vec![T::zero(); operand_len];
            for (i, g) in grad.iter().enumerate() {
                let j = mapped_index(map, i, cols);
                out[j] = out[j] + *g;
            }
            out
        }
    }
}

fn binary_op<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    fwd: impl Fn(T, T) -> T,
    // (grad, a_val, b_val) -> (da, db)
    bwd: impl Fn(T, T, T) -> (T, T) + 'static,
) -> Result<Tensor<T>> {
    let (out_shape, ma, mb) = broadcast_plan(op, a.shape(), b.shape())?;
    let cols = cols_of(&out_shape);
    let n: usize = out_shape.iter().product();
    let av = a.data();
    let bv = b.data();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(fwd(av[mapped_index(ma, i, cols)], bv[mapped_index(mb, i, cols)]));
    }
    let (osh, alen, blen) = (out_shape.clone(), av.len(), bv.len());
    Tensor::from_op(
        op,
        out_shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let mut ga_full = Vec::with_capacity(g.len());
            let mut gb_full = Vec::with_capacity(g.len());
            for (i, gi) in g.iter().enumerate() {
                let (da, db) = bwd(
                    *gi,
                    av[mapped_index(ma, i, cols)],
                    bv[mapped_index(mb, i, cols)],
                );
                ga_full.push(da);
                gb_full.push(db);
            }
            vec![
                reduce_to_operand(&ga_full, &osh, ma, alen),
                reduce_to_operand(&gb_full, &osh, mb, blen),
            ]
        }),
    )
}

fn unary_op<T: Scalar>(
    op: &'static str,
    x: &Tensor<T>,
    fwd: impl Fn(T) -> T,
    // (grad, x_val, y_val) -> dx
    bwd: impl Fn(T, T, T) -> T + 'static,
) -> Result<Tensor<T>> {
    let xv = x.data();
    let out: Vec<T> = xv.iter().map(|&v| fwd(v)).collect();
    let yv = out.clone();
    Tensor::from_op(
        op,
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |g| {
            vec![g
                .iter()
                .zip(xv.iter().zip(&yv))
                .map(|(&gi, (&xi, &yi))| bwd(gi, xi, yi))
                .collect()]
        }),
    )
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op("add", self, other, |a, b| a + b, |g, _, _| (g, g))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op("sub", self, other, |a, b| a - b, |g, _, _| (g, T::zero() - g))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op("mul", self, other, |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        binary_op(
            "div",
            self,
            other,
            |a, b| a / b,
            |g, a, b| (g / b, T::zero() - g * a / (b * b)),
        )
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        unary_op("neg", self, |v| T::zero() - v, |g, _, _| T::zero() - g)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor<T>> {
        let k = T::from_f64(c);
        unary_op("scale", self, move |v| v * k, move |g, _, _| g * k)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor<T>> {
        let k = T::from_f64(c);
        unary_op("add_scalar", self, move |v| v + k, |g, _, _| g)
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        unary_op("exp", self, |v| v.exp(), |g, _, y| g * y)
    }

    pub fn ln(&self) -> Result<Tensor<T>> {
        unary_op("ln", self, |v| v.ln(), |g, x, _| g / x)
    }

    pub fn sqrt(&self) -> Result<Tensor<T>> {
        let two = T::from_f64(2.0);
        unary_op("sqrt", self, |v| v.sqrt(), move |g, _, y| g / (two * y))
    }

    pub fn tanh(&self) -> Result<Tensor<T>> {
        unary_op("tanh", self, |v| v.tanh(), |g, _, y| g * (T::one() - y * y))
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        unary_op(
            "sigmoid",
            self,
            |v| T::one() / (T::one() + (T::zero() - v).exp()),
            |g, _, y| g * y * (T::one() - y),
        )
    }

    /// `x * sigmoid(x)`, the gated activation used by feed-forward blocks.
    pub fn silu(&self) -> Result<Tensor<T>> {
        self.mul(&self.sigmoid()?)
    }

    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let xv = self.data();
        let mut s = T::zero();
        for v in &xv {
            s = s + *v;
        }
        let n = xv.len();
        Tensor::from_op(
            "sum_all",
            vec![],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| vec![vec![g[0]; n]]),
        )
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        self.sum_all()?.scale(1.0 / n as f64)
    }

    /// Column sums of a 2-D tensor: `[r,c] -> [1,c]`.
    pub fn sum_axis0(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let xv = self.data();
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] = out[j] + xv[i * c + j];
            }
        }
        Tensor::from_op(
            "sum_axis0",
            vec![1, c],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = Vec::with_capacity(r * c);
                for _ in 0..r {
                    dx.extend_from_slice(g);
                }
                vec![dx]
            }),
        )
    }

    /// Row sums of a 2-D tensor: `[r,c] -> [r,1]`.
    pub fn sum_axis1(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let xv = self.data();
        let mut out = vec![T::zero(); r];
        for i in 0..r {
            let mut s = T::zero();
            for j in 0..c {
                s = s + xv[i * c + j];
            }
            out[i] = s;
        }
        Tensor::from_op(
            "sum_axis1",
            vec![r, 1],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = Vec::with_capacity(r * c);
                for gi in g.iter().take(r) {
                    for _ in 0..c {
                        dx.push(*gi);
                    }
                }
                vec![dx]
            }),
        )
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        let xv = self.data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        Tensor::from_op(
            "transpose",
            vec![c, r],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                vec![dx]
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return shape_err(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            );
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data(),
            vec![self.clone()],
            Box::new(move |g| vec![g.to_vec()]),
        )
    }

    /// Value copy cut loose from the graph (stop-gradient).
    pub fn detach(&self) -> Tensor<T> {
        Tensor::constant(self.shape(), self.data()).expect("detach preserves shape")
    }

    /// Rows `r0..r1` (2-D) or elements `r0..r1` (1-D).
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Tensor<T>> {
        let rows = self.shape().first().copied().unwrap_or(1);
        let width: usize = self.shape().iter().skip(1).product();
        if r0 > r1 || r1 > rows {
            return shape_err(
                "slice_rows",
                format!("range {r0}..{r1} out of bounds for {rows} rows"),
            );
        }
        let xv = self.data();
        let out = xv[r0 * width..r1 * width].to_vec();
        let mut out_shape = self.shape().to_vec();
        out_shape[0] = r1 - r0;
        let total = xv.len();
        Tensor::from_op(
            "slice_rows",
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); total];
                dx[r0 * width..r1 * width].copy_from_slice(g);
                vec![dx]
            }),
        )
    }

    /// Columns `c0..c1` of a 2-D tensor.
    pub fn slice_cols(&self, c0: usize, c1: usize) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        if c0 > c1 || c1 > c {
            return shape_err(
                "slice_cols",
                format!("range {c0}..{c1} out of bounds for {c} cols"),
            );
        }
        let w = c1 - c0;
        let xv = self.data();
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&xv[i * c + c0..i * c + c1]);
        }
        Tensor::from_op(
            "slice_cols",
            vec![r, w],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); r * c];
                for i in 0..r {
                    dx[i * c + c0..i * c + c1].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                vec![dx]
            }),
        )
    }

    /// Shifts rows down by `k` (causal delay), zero-filling the top.
    pub fn shift_rows(&self, k: usize) -> Result<Tensor<T>> {
        let rows = self.shape().first().copied().unwrap_or(1);
        let width: usize = self.shape().iter().skip(1).product();
        let xv = self.data();
        let mut out = vec![T::zero(); xv.len()];
        if k < rows {
            out[k * width..].copy_from_slice(&xv[..(rows - k) * width]);
        }
        Tensor::from_op(
            "shift_rows",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); g.len()];
                if k < rows {
                    dx[..(rows - k) * width].copy_from_slice(&g[k * width..]);
                }
                vec![dx]
            }),
        )
    }

    /// Tiles a `[1,D]` row into `[l,D]`.
    pub fn repeat_rows(&self, l: usize) -> Result<Tensor<T>> {
        let (r, c) = self.dims2()?;
        if r != 1 {
            return shape_err("repeat_rows", format!("expected [1,D], got {:?}", self.shape()));
        }
        let xv = self.data();
        let mut out = Vec::with_capacity(l * c);
        for _ in 0..l {
            out.extend_from_slice(&xv);
        }
        Tensor::from_op(
            "repeat_rows",
            vec![l, c],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); c];
                for i in 0..l {
                    for j in 0..c {
                        dx[j] = dx[j] + g[i * c + j];
                    }
                }
                vec![dx]
            }),
        )
    }

    /// Row-wise softmax. 1-D input is treated as a single row.
    pub fn softmax_rows(&self) -> Result<Tensor<T>> {
        let (rows, cols) = match self.shape() {
            [n] => (1usize, *n),
            [r, c] => (*r, *c),
            s => return shape_err("softmax", format!("expected rank 1 or 2, got {s:?}")),
        };
        let xv = self.data();
        let mut out = vec![T::zero(); xv.len()];
        for i in 0..rows {
            let row = &xv[i * cols..(i + 1) * cols];
            let mut m = row[0];
            for v in row {
                if *v > m {
                    m = *v;
                }
            }
            let mut z = T::zero();
            for (j, v) in row.iter().enumerate() {
                let e = (*v - m).exp();
                out[i * cols + j] = e;
                z = z + e;
            }
            for j in 0..cols {
                out[i * cols + j] = out[i * cols + j] / z;
            }
        }
        let yv = out.clone();
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); g.len()];
                for i in 0..rows {
                    let y = &yv[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let mut dot = T::zero();
                    for j in 0..cols {
                        dot = dot + gr[j] * y[j];
                    }
                    for j in 0..cols {
                        dx[i * cols + j] = (gr[j] - dot) * y[j];
                    }
                }
                vec![dx]
            }),
        )
    }
}

fn gemm_view<'a, T: Scalar>(shape: (usize, usize), data: &'a [T]) -> ArrayView2<'a, T> {
    ArrayView2::from_shape(shape, data).expect("gemm view shape")
}

/// `[m,k] x [k,n] -> [m,n]` matrix product.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, ka) = a.dims2()?;
    let (kb, n) = b.dims2()?;
    if ka != kb {
        return shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape()));
    }
    let av = a.data();
    let bv = b.data();
    let mut out = vec![T::zero(); m * n];
    {
        let mut cv = ArrayViewMut2::from_shape((m, n), &mut out).expect("gemm out shape");
        general_mat_mul(
            T::one(),
            &gemm_view((m, ka), &av),
            &gemm_view((kb, n), &bv),
            T::zero(),
            &mut cv,
        );
    }
    let k = ka;
    Tensor::from_op(
        "matmul",
        vec![m, n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            // dA = G B^T, dB = A^T G
            let gv = gemm_view((m, n), g);
            let mut da = vec![T::zero(); m * k];
            let mut db = vec![T::zero(); k * n];
            {
                let mut dav = ArrayViewMut2::from_shape((m, k), &mut da).unwrap();
                general_mat_mul(T::one(), &gv, &gemm_view((k, n), &bv).t(), T::zero(), &mut dav);
            }
            {
                let mut dbv = ArrayViewMut2::from_shape((k, n), &mut db).unwrap();
                general_mat_mul(T::one(), &gemm_view((m, k), &av).t(), &gv, T::zero(), &mut dbv);
            }
            vec![da, db]
        }),
    )
}

/// Concatenation along axis 0; trailing dimensions must match.
pub fn concat_rows<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return shape_err("concat_rows", "no tensors given");
    }
    let width: usize = parts[0].shape().iter().skip(1).product();
    let rank = parts[0].shape().len();
    let mut rows = 0usize;
    let mut data = Vec::new();
    let mut splits = Vec::with_capacity(parts.len());
    for p in parts {
        let w: usize = p.shape().iter().skip(1).product();
        if w != width || p.shape().len() != rank {
            return shape_err("concat_rows", "trailing dimensions differ");
        }
        rows += p.shape().first().copied().unwrap_or(1);
        splits.push(p.numel());
        data.extend(p.data());
    }
    let mut out_shape = parts[0].shape().to_vec();
    out_shape[0] = rows;
    Tensor::from_op(
        "concat_rows",
        out_shape,
        data,
        parts.iter().map(|p| (*p).clone()).collect(),
        Box::new(move |g| {
            let mut offset = 0;
            splits
                .iter()
                .map(|len| {
                    let piece = g[offset..offset + len].to_vec();
                    offset += len;
                    piece
                })
                .collect()
        }),
    )
}

/// Concatenation along axis 1 of 2-D tensors with equal row counts.
pub fn concat_cols<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return shape_err("concat_cols", "no tensors given");
    }
    let (rows, _) = parts[0].dims2()?;
    let mut widths = Vec::with_capacity(parts.len());
    let mut total = 0usize;
    for p in parts {
        let (r, c) = p.dims2()?;
        if r != rows {
            return shape_err("concat_cols", "row counts differ");
        }
        widths.push(c);
        total += c;
    }
    let datas: Vec<Vec<T>> = parts.iter().map(|p| p.data()).collect();
    let mut out = Vec::with_capacity(rows * total);
    for i in 0..rows {
        for (d, w) in datas.iter().zip(&widths) {
            out.extend_from_slice(&d[i * w..(i + 1) * w]);
        }
    }
    let widths_b = widths.clone();
    Tensor::from_op(
        "concat_cols",
        vec![rows, total],
        out,
        parts.iter().map(|p| (*p).clone()).collect(),
        Box::new(move |g| {
            let mut grads: Vec<Vec<T>> =
                widths_b.iter().map(|w| Vec::with_capacity(rows * w)).collect();
            for i in 0..rows {
                let mut off = 0;
                for (gbuf, w) in grads.iter_mut().zip(&widths_b) {
                    gbuf.extend_from_slice(&g[i * total + off..i * total + off + w]);
                    off += w;
                }
            }
            grads
        }),
    )
}

/// Selects rows by index (duplicates allowed); gradients scatter-add back.
pub fn gather_rows<T: Scalar>(x: &Tensor<T>, idx: &[usize]) -> Result<Tensor<T>> {
    let rows = x.shape().first().copied().unwrap_or(1);
    let width: usize = x.shape().iter().skip(1).product();
    if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
        return shape_err("gather_rows", format!("index {bad} out of {rows} rows"));
    }
    let xv = x.data();
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&xv[i * width..(i + 1) * width]);
    }
    let mut out_shape = x.shape().to_vec();
    out_shape[0] = idx.len();
    let total = xv.len();
    let idx_b = idx.to_vec();
    Tensor::from_op(
        "gather_rows",
        out_shape,
        out,
        vec![x.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); total];
            for (m, &i) in idx_b.iter().enumerate() {
                for j in 0..width {
                    dx[i * width + j] = dx[i * width + j] + g[m * width + j];
                }
            }
            vec![dx]
        }),
    )
}

/// First-order linear recurrence along axis 0:
/// `s[t] = decay[t] * s[t-1] + x[t]` with `s[-1] = 0`.
///
/// This is the associative scan used by recurrent mixers and the boundary
/// smoothing step; backward runs the reverse recurrence exactly.
pub fn linear_scan<T: Scalar>(decay: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    if decay.shape() != x.shape() {
        return shape_err(
            "linear_scan",
            format!("decay {:?} vs input {:?}", decay.shape(), x.shape()),
        );
    }
    let rows = x.shape().first().copied().unwrap_or(1);
    let width: usize = x.shape().iter().skip(1).product();
    let dv = decay.data();
    let xv = x.data();
    let mut s = vec![T::zero(); xv.len()];
    for t in 0..rows {
        for j in 0..width {
            let prev = if t == 0 { T::zero() } else { s[(t - 1) * width + j] };
            s[t * width + j] = dv[t * width + j] * prev + xv[t * width + j];
        }
    }
    let sv = s.clone();
    Tensor::from_op(
        "linear_scan",
        x.shape().to_vec(),
        s,
        vec![decay.clone(), x.clone()],
        Box::new(move |g| {
            // q[t] = g[t] + decay[t+1] * q[t+1]; dx = q; ddecay[t] = q[t]*s[t-1]
            let mut q = vec![T::zero(); g.len()];
            for t in (0..rows).rev() {
                for j in 0..width {
                    let carry = if t + 1 < rows {
                        dv[(t + 1) * width + j] * q[(t + 1) * width + j]
                    } else {
                        T::zero()
                    };
                    q[t * width + j] = g[t * width + j] + carry;
                }
            }
            let mut ddecay = vec![T::zero(); g.len()];
            for t in 1..rows {
                for j in 0..width {
                    ddecay[t * width + j] = q[t * width + j] * sv[(t - 1) * width + j];
                }
            }
            vec![ddecay, q]
        }),
    )
}

/// Per-row negative log-likelihood of integer targets: `[M,V] -> [M]`.
pub fn cross_entropy_rows<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<Tensor<T>> {
    let (m, v) = logits.dims2()?;
    if targets.len() != m {
        return shape_err(
            "cross_entropy",
            format!("{m} rows vs {} targets", targets.len()),
        );
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
        return shape_err("cross_entropy", format!("target {bad} out of {v} classes"));
    }
    let xv = logits.data();
    let mut probs = vec![T::zero(); m * v];
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let row = &xv[i * v..(i + 1) * v];
        let mut mx = row[0];
        for val in row {
            if *val > mx {
                mx = *val;
            }
        }
        let mut z = T::zero();
        for (j, val) in row.iter().enumerate() {
            let e = (*val - mx).exp();
            probs[i * v + j] = e;
            z = z + e;
        }
        for j in 0..v {
            probs[i * v + j] = probs[i * v + j] / z;
        }
        out.push(z.ln() + mx - row[targets[i]]);
    }
    let tg = targets.to_vec();
    Tensor::from_op(
        "cross_entropy",
        vec![m],
        out,
        vec![logits.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); m * v];
            for i in 0..m {
                for j in 0..v {
                    let onehot = if tg[i] == j { T::one() } else { T::zero() };
                    dx[i * v + j] = g[i] * (probs[i * v + j] - onehot);
                }
            }
            vec![dx]
        }),
    )
}

const NORM_EPS: f64 = 1e-6;

/// RMS normalization over the last axis with a learned gain row `[1,D]`.
pub fn rms_norm<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, d) = x.dims2()?;
    let (gr, gc) = gain.dims2()?;
    if gr != 1 || gc != d {
        return shape_err("rms_norm", format!("gain {:?} vs width {d}", gain.shape()));
    }
    let eps = T::from_f64(NORM_EPS);
    let dn = T::from_f64(d as f64);
    let xv = x.data();
    let gv = gain.data();
    let mut inv_r = vec![T::zero(); rows];
    let mut out = vec![T::zero(); rows * d];
    for i in 0..rows {
        let mut ss = T::zero();
        for j in 0..d {
            let v = xv[i * d + j];
            ss = ss + v * v;
        }
        let r = (ss / dn + eps).sqrt();
        inv_r[i] = T::one() / r;
        for j in 0..d {
            out[i * d + j] = xv[i * d + j] * inv_r[i] * gv[j];
        }
    }
    Tensor::from_op(
        "rms_norm",
        vec![rows, d],
        out,
        vec![x.clone(), gain.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); rows * d];
            let mut dgain = vec![T::zero(); d];
            for i in 0..rows {
                let ir = inv_r[i];
                // gh = g * gain; dx = gh*ir - x * (sum(gh*x)/D) * ir^3
                let mut dot = T::zero();
                for j in 0..d {
                    let gh = g[i * d + j] * gv[j];
                    dot = dot + gh * xv[i * d + j];
                    dgain[j] = dgain[j] + g[i * d + j] * xv[i * d + j] * ir;
                }
                let coeff = dot / dn * ir * ir * ir;
                for j in 0..d {
                    let gh = g[i * d + j] * gv[j];
                    dx[i * d + j] = gh * ir - xv[i * d + j] * coeff;
                }
            }
            vec![dx, dgain]
        }),
    )
}

/// Layer normalization over the last axis with gain and bias rows `[1,D]`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (rows, d) = x.dims2()?;
    for (name, t) in [("gain", gain), ("bias", bias)] {
        let (r, c) = t.dims2()?;
        if r != 1 || c != d {
            return shape_err("layer_norm", format!("{name} {:?} vs width {d}", t.shape()));
        }
    }
    let eps = T::from_f64(NORM_EPS);
    let dn = T::from_f64(d as f64);
    let xv = x.data();
    let gv = gain.data();
    let bv = bias.data();
    let mut xhat = vec![T::zero(); rows * d];
    let mut inv_std = vec![T::zero(); rows];
    let mut out = vec![T::zero(); rows * d];
    for i in 0..rows {
        let mut mu = T::zero();
        for j in 0..d {
            mu = mu + xv[i * d + j];
        }
        mu = mu / dn;
        let mut var = T::zero();
        for j in 0..d {
            let c = xv[i * d + j] - mu;
            var = var + c * c;
        }
        var = var / dn;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[i] = istd;
        for j in 0..d {
            let h = (xv[i * d + j] - mu) * istd;
            xhat[i * d + j] = h;
            out[i * d + j] = h * gv[j] + bv[j];
        }
    }
    Tensor::from_op(
        "layer_norm",
        vec![rows, d],
        out,
        vec![x.clone(), gain.clone(), bias.clone()],
        Box::new(move |g| {
            let mut dx = vec![T::zero(); rows * d];
            let mut dgain = vec![T::zero(); d];
            let mut dbias = vec![T::zero(); d];
            for i in 0..rows {
                let istd = inv_std[i];
                let mut sum_gh = T::zero();
                let mut sum_gh_xhat = T::zero();
                for j in 0..d {
                    let gh = g[i * d + j] * gv[j];
                    sum_gh = sum_gh + gh;
                    sum_gh_xhat = sum_gh_xhat + gh * xhat[i * d + j];
                    dgain[j] = dgain[j] + g[i * d + j] * xhat[i * d + j];
                    dbias[j] = dbias[j] + g[i * d + j];
                }
                for j in 0..d {
                    let gh = g[i * d + j] * gv[j];
                    dx[i * d + j] =
                        istd * (gh - sum_gh / dn - xhat[i * d + j] * sum_gh_xhat / dn);
                }
            }
            vec![dx, dgain, dbias]
        }),
    )
}

/// Euclidean norm of all entries, as a scalar tensor.
pub fn l2_norm<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.mul(x)?.sum_all()?.sqrt()
}

/// Cosine similarity of two equal-shape tensors flattened to vectors, with an
/// epsilon guard in the denominator.
pub fn cosine_sim<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    if u.shape() != v.shape() {
        return shape_err(
            "cosine_sim",
            format!("{:?} vs {:?}", u.shape(), v.shape()),
        );
    }
    let dot = u.mul(v)?.sum_all()?;
    let denom = l2_norm(u)?.mul(&l2_norm(v)?)?.add_scalar(eps)?;
    dot.div(&denom)
}

/// Straight-through "one": forward value is exactly 1 everywhere, backward
/// passes the incoming gradient to `surrogate` unchanged.
pub fn ste_one<T: Scalar>(surrogate: &Tensor<T>) -> Result<Tensor<T>> {
    Tensor::from_op(
        "ste_one",
        surrogate.shape().to_vec(),
        vec![T::one(); surrogate.numel()],
        vec![surrogate.clone()],
        Box::new(move |g| vec![g.to_vec()]),
    )
}
