use super::Op;
use crate::error::{NumericsError, Result};
use crate::graph::{Graph, Var};

/// Additive logit offset applied to masked keys before normalization.
pub const MASK_FILL: f64 = -1e9;

const LAYER_NORM_EPS: f64 = 1e-5;

/// `c = beta * c + a · b` for row/column-strided operands; `c` is dense row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Graph<'_> {
    /// Batched matrix product. `a: [.., m, k]`; `b: [k, n]` (shared across the
    /// batch) or `[.., k, n]` with the same leading dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(NumericsError::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let lead = &sa[..sa.len() - 2];
        let b_shared = sb.len() == 2;
        if k != kb || (!b_shared && &sb[..sb.len() - 2] != lead) {
            return Err(NumericsError::shape("matmul", &sa, &sb));
        }
        let batch: usize = lead.iter().product();
        let mut out = vec![0.0; batch * m * n];
        let (av, bv) = (self.value(a), self.value(b));
        for i in 0..batch {
            let boff = if b_shared { 0 } else { i * k * n };
            gemm(
                m,
                k,
                n,
                &av[i * m * k..],
                (k, 1),
                &bv[boff..],
                (n, 1),
                0.0,
                &mut out[i * m * n..],
            );
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        Ok(self.push(
            shape,
            out,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                b_shared,
            },
        ))
    }

    /// `x · w + b` with `w: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    fn gather(&mut self, x: Var, shape: Vec<usize>, map: Vec<usize>) -> Var {
        let xv = self.value(x);
        let data = map.iter().map(|&i| xv[i]).collect();
        self.push(shape, data, Op::Gather { x, map })
    }

    /// General axis permutation; output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(NumericsError::invalid(
                "permute",
                format!("bad permutation {perm:?} for shape {shape:?}"),
            ));
        }
        let in_strides = strides(&shape);
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let n: usize = shape.iter().product();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; out_shape.len()];
        for _ in 0..n {
            map.push(idx.iter().zip(perm).map(|(i, &p)| i * in_strides[p]).sum());
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok(self.gather(x, out_shape, map))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, d0: usize, d1: usize) -> Result<Var> {
        let mut perm: Vec<usize> = (0..self.shape(x).len()).collect();
        if d0 >= perm.len() || d1 >= perm.len() {
            return Err(NumericsError::invalid("transpose", "axis out of range"));
        }
        perm.swap(d0, d1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(NumericsError::shape("reshape", self.shape(x), shape));
        }
        let data = self.value(x).to_vec();
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x)))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(NumericsError::invalid(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut map = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner + start * inner;
            map.extend(base..base + len * inner);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.gather(x, out_shape, map))
    }

    /// Rows of `x` (axis 0) picked by `idx`, in order; repeats allowed.
    pub fn index_select(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(NumericsError::invalid("index_select", "scalar input"));
        }
        let row: usize = shape[1..].iter().product();
        let mut map = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            if i >= shape[0] {
                return Err(NumericsError::invalid(
                    "index_select",
                    format!("index {i} out of range for {} rows", shape[0]),
                ));
            }
            map.extend(i * row..(i + 1) * row);
        }
        let mut out_shape = shape;
        out_shape[0] = idx.len();
        Ok(self.gather(x, out_shape, map))
    }

    /// Embedding lookup: `table: [vocab, d]` → `[idx.len(), d]`.
    pub fn embedding(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        if self.shape(table).len() != 2 {
            return Err(NumericsError::invalid("embedding", "table must be 2-D"));
        }
        self.index_select(table, idx)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| NumericsError::invalid("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(NumericsError::invalid("concat", "axis out of range"));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut total_axis = 0;
        let mut chunks = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || s[..axis] != first[..axis] || s[axis + 1..] != first[axis + 1..] {
                return Err(NumericsError::shape("concat", &first, s));
            }
            total_axis += s[axis];
            chunks.push(s[axis] * inner);
        }
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for (&x, &chunk) in xs.iter().zip(&chunks) {
                data.extend_from_slice(&self.value(x)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total_axis;
        Ok(self.push(
            shape,
            data,
            Op::Concat {
                xs: xs.to_vec(),
                outer,
                chunks,
            },
        ))
    }

    /// Softmax over the last dim. `mask`, when given, is an additive offset per
    /// last-dim position shared by every row (0 keeps, [`MASK_FILL`] removes).
    pub fn softmax(&mut self, x: Var, mask: Option<&[f64]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape
            .last()
            .ok_or_else(|| NumericsError::invalid("softmax", "scalar input"))?;
        if let Some(m) = mask {
            if m.len() != cols {
                return Err(NumericsError::shape("softmax", &shape, &[m.len()]));
            }
            if m.iter().all(|&v| v <= MASK_FILL / 2.0) {
                return Err(NumericsError::FullyMasked);
            }
        }
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for (row, orow) in xv.chunks(cols).zip(out.chunks_mut(cols)) {
            for (j, o) in orow.iter_mut().enumerate() {
                *o = row[j] + mask.map_or(0.0, |m| m[j]);
            }
            let max = orow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for o in orow.iter_mut() {
                *o = (*o - max).exp();
                s += *o;
            }
            orow.iter_mut().for_each(|o| *o /= s);
        }
        Ok(self.push(shape, out, Op::Softmax(x, cols)))
    }

    /// Normalizes over the last dim, then applies `gamma` scale and `beta` shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap_or(&0);
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(NumericsError::shape("layer_norm", &shape, self.shape(gamma)));
        }
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mu) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gv[j] + bv[j];
            }
        }
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                d,
            },
        ))
    }
}

pub(super) fn matmul_backward(
    g: &Graph<'_>,
    a: Var,
    b: Var,
    (batch, m, k, n, b_shared): (usize, usize, usize, usize, bool),
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let (av, bv) = (g.value(a), g.value(b));
    if let Some(ga) = g.slot(grads, a) {
        for i in 0..batch {
            let boff = if b_shared { 0 } else { i * k * n };
            // dA = dC · Bᵀ
            gemm(
                m,
                n,
                k,
                &gout[i * m * n..],
                (n, 1),
                &bv[boff..],
                (1, n),
                1.0,
                &mut ga[i * m * k..],
            );
        }
    }
    if let Some(gb) = g.slot(grads, b) {
        for i in 0..batch {
            let boff = if b_shared { 0 } else { i * k * n };
            // dB = Aᵀ · dC
            gemm(
                k,
                m,
                n,
                &av[i * m * k..],
                (1, k),
                &gout[i * m * n..],
                (n, 1),
                1.0,
                &mut gb[boff..],
            );
        }
    }
}

pub(super) fn softmax_backward(
    g: &Graph<'_>,
    x: Var,
    out: Var,
    cols: usize,
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let y = g.value(out);
    if let Some(gx) = g.slot(grads, x) {
        for ((yr, dr), gr) in y
            .chunks(cols)
            .zip(gout.chunks(cols))
            .zip(gx.chunks_mut(cols))
        {
            let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
            for j in 0..cols {
                gr[j] += yr[j] * (dr[j] - dot);
            }
        }
    }
}

pub(super) fn layer_norm_backward(
    g: &Graph<'_>,
    (x, gamma, beta): (Var, Var, Var),
    xhat: &[f64],
    inv_std: &[f64],
    d: usize,
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let gv = g.value(gamma);
    if let Some(gg) = g.slot(grads, gamma) {
        for (r, h) in gout.chunks(d).zip(xhat.chunks(d)) {
            for j in 0..d {
                gg[j] += r[j] * h[j];
            }
        }
    }
    if let Some(gb) = g.slot(grads, beta) {
        for r in gout.chunks(d) {
            for j in 0..d {
                gb[j] += r[j];
            }
        }
    }
    if let Some(gx) = g.slot(grads, x) {
        let mut dh = vec![0.0; d];
        for (row, inv) in inv_std.iter().enumerate() {
            let h = &xhat[row * d..(row + 1) * d];
            let dy = &gout[row * d..(row + 1) * d];
            for j in 0..d {
                dh[j] = dy[j] * gv[j];
            }
            let s1: f64 = dh.iter().sum();
            let s2: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
            let dn = d as f64;
            for j in 0..d {
                gx[row * d + j] += inv / dn * (dn * dh[j] - s1 - h[j] * s2);
            }
        }
    }
}
