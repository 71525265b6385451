use serde::{Deserialize, Serialize};

use super::linalg::gemm;
use super::{ConvDims, Op};
use crate::error::{NumericsError, Result};
use crate::graph::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Conv2dSpec { stride, padding }
    }
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec {
            stride: 1,
            padding: 0,
        }
    }
}

fn im2col(x: &[f64], d: &ConvDims, kh: usize, kw: usize, spec: Conv2dSpec, cols: &mut [f64]) {
    let (s, p) = (spec.stride as isize, spec.padding as isize);
    let plane = d.ho * d.wo;
    for ci in 0..d.c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..d.ho {
                    let iy = oy as isize * s + ki as isize - p;
                    for ox in 0..d.wo {
                        let ix = ox as isize * s + kj as isize - p;
                        dst[oy * d.wo + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < d.h && (ix as usize) < d.w {
                            x[(ci * d.h + iy as usize) * d.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], d: &ConvDims, kh: usize, kw: usize, spec: Conv2dSpec, gx: &mut [f64]) {
    let (s, p) = (spec.stride as isize, spec.padding as isize);
    let plane = d.ho * d.wo;
    for ci in 0..d.c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..d.ho {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy as usize >= d.h {
                        continue;
                    }
                    for ox in 0..d.wo {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && (ix as usize) < d.w {
                            gx[(ci * d.h + iy as usize) * d.w + ix as usize] += src[oy * d.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Bilinear source taps along one axis (align-corners off, edge clamped).
fn resize_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Four bilinear taps `(flat index, weight)` for a fractional `(row, col)`;
/// taps outside the `h × w` plane are dropped (zero padding).
fn bilinear_taps(r: f64, c: f64, h: usize, w: usize) -> impl Iterator<Item = (usize, f64)> {
    let (r0, c0) = (r.floor(), c.floor());
    let (fr, fc) = (r - r0, c - c0);
    let (r0, c0) = (r0 as i64, c0 as i64);
    [
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c0 + 1, (1.0 - fr) * fc),
        (r0 + 1, c0, fr * (1.0 - fc)),
        (r0 + 1, c0 + 1, fr * fc),
    ]
    .into_iter()
    .filter(move |&(y, x, _)| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w)
    .map(move |(y, x, wt)| (y as usize * w + x as usize, wt))
}

impl Graph<'_> {
    /// `x: [N, C, H, W]`, `w: [O, C, kh, kw]`, `b: [O]` → `[N, O, Ho, Wo]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || spec.stride == 0 {
            return Err(NumericsError::shape("conv2d", &xs, &ws));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(NumericsError::shape("conv2d", &ws, self.shape(b)));
            }
        }
        let (kh, kw) = (ws[2], ws[3]);
        if xs[2] + 2 * spec.padding < kh || xs[3] + 2 * spec.padding < kw {
            return Err(NumericsError::shape("conv2d", &xs, &ws));
        }
        let dims = ConvDims {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            ho: (xs[2] + 2 * spec.padding - kh) / spec.stride + 1,
            wo: (xs[3] + 2 * spec.padding - kw) / spec.stride + 1,
        };
        let ckk = dims.c * kh * kw;
        let plane = dims.ho * dims.wo;
        let mut cols = vec![0.0; ckk * plane];
        let mut out = vec![0.0; dims.n * dims.o * plane];
        let (xv, wv) = (self.value(x), self.value(w));
        let bv = b.map(|b| self.value(b));
        for n in 0..dims.n {
            im2col(&xv[n * dims.c * dims.h * dims.w..], &dims, kh, kw, spec, &mut cols);
            let dst = &mut out[n * dims.o * plane..(n + 1) * dims.o * plane];
            if let Some(bv) = bv {
                for (o, row) in dst.chunks_mut(plane).enumerate() {
                    row.iter_mut().for_each(|v| *v = bv[o]);
                }
            }
            gemm(dims.o, ckk, plane, wv, (ckk, 1), &cols, (plane, 1), 1.0, dst);
        }
        Ok(self.push(
            vec![dims.n, dims.o, dims.ho, dims.wo],
            out,
            Op::Conv2d {
                x,
                w,
                b,
                spec,
                dims,
            },
        ))
    }

    /// Non-overlapping `k × k` mean pooling over the last two dims.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || k == 0 {
            return Err(NumericsError::invalid("avg_pool2d", "need at least 2 dims"));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if h % k != 0 || w % k != 0 {
            return Err(NumericsError::invalid(
                "avg_pool2d",
                format!("{h}x{w} not divisible by {k}"),
            ));
        }
        let (oh, ow) = (h / k, w / k);
        let planes = shape[..shape.len() - 2].iter().product::<usize>();
        let xv = self.value(x);
        let norm = 1.0 / (k * k) as f64;
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    out[(p * oh + y / k) * ow + xx / k] += xv[(p * h + y) * w + xx] * norm;
                }
            }
        }
        let mut oshape = shape;
        let l = oshape.len();
        oshape[l - 2] = oh;
        oshape[l - 1] = ow;
        Ok(self.push(oshape, out, Op::AvgPool2d { x, k, h, w }))
    }

    /// Bilinear up/down-sampling of the last two dims to `oh × ow`.
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || oh == 0 || ow == 0 {
            return Err(NumericsError::invalid("resize_bilinear", "need at least 2 dims"));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let planes = shape[..shape.len() - 2].iter().product::<usize>();
        let (ty, tx) = (resize_taps(h, oh), resize_taps(w, ow));
        let xv = self.value(x);
        let mut out = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let src = &xv[p * h * w..(p + 1) * h * w];
            for &(y0, y1, ly) in &ty {
                for &(x0, x1, lx) in &tx {
                    let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                    out.push(top * (1.0 - ly) + bot * ly);
                }
            }
        }
        let mut oshape = shape;
        let l = oshape.len();
        oshape[l - 2] = oh;
        oshape[l - 1] = ow;
        Ok(self.push(oshape, out, Op::Resize { x, h, w, oh, ow }))
    }

    /// Samples every channel of `x: [C, H, W]` at fractional `(row, col)`
    /// positions; returns `[C, out_h, out_w]`. Taps outside the plane read 0.
    pub fn grid_sample(
        &mut self,
        x: Var,
        coords: Vec<[f64; 2]>,
        out_h: usize,
        out_w: usize,
    ) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || coords.len() != out_h * out_w {
            return Err(NumericsError::shape("grid_sample", &shape, &[coords.len()]));
        }
        if coords.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
            return Err(NumericsError::NonFinite("grid_sample coordinates".into()));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let xv = self.value(x);
        let npts = coords.len();
        let mut out = vec![0.0; c * npts];
        for (p, rc) in coords.iter().enumerate() {
            for (idx, wt) in bilinear_taps(rc[0], rc[1], h, w) {
                for ch in 0..c {
                    out[ch * npts + p] += wt * xv[ch * h * w + idx];
                }
            }
        }
        Ok(self.push(vec![c, out_h, out_w], out, Op::GridSample { x, coords, h, w }))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv2d_backward(
    g: &Graph<'_>,
    x: Var,
    w: Var,
    b: Option<Var>,
    spec: Conv2dSpec,
    dims: ConvDims,
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let ws = g.shape(w);
    let (kh, kw) = (ws[2], ws[3]);
    let ckk = dims.c * kh * kw;
    let plane = dims.ho * dims.wo;
    let img = dims.c * dims.h * dims.w;
    let (xv, wv) = (g.value(x), g.value(w));
    if let Some(b) = b {
        if let Some(gb) = g.slot(grads, b) {
            for n in 0..dims.n {
                for o in 0..dims.o {
                    let start = (n * dims.o + o) * plane;
                    gb[o] += gout[start..start + plane].iter().sum::<f64>();
                }
            }
        }
    }
    let mut cols = vec![0.0; ckk * plane];
    if g.requires_grad(w) {
        let gw = g.slot(grads, w).expect("weight requires grad");
        for n in 0..dims.n {
            im2col(&xv[n * img..], &dims, kh, kw, spec, &mut cols);
            // dW += dOut · colsᵀ
            gemm(
                dims.o,
                plane,
                ckk,
                &gout[n * dims.o * plane..],
                (plane, 1),
                &cols,
                (1, plane),
                1.0,
                gw,
            );
        }
    }
    if let Some(gx) = g.slot(grads, x) {
        for n in 0..dims.n {
            // dcols = Wᵀ · dOut
            gemm(
                ckk,
                dims.o,
                plane,
                wv,
                (1, ckk),
                &gout[n * dims.o * plane..],
                (plane, 1),
                0.0,
                &mut cols,
            );
            col2im(&cols, &dims, kh, kw, spec, &mut gx[n * img..(n + 1) * img]);
        }
    }
}

pub(super) fn avg_pool_backward(
    g: &Graph<'_>,
    x: Var,
    k: usize,
    h: usize,
    w: usize,
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if let Some(gx) = g.slot(grads, x) {
        let (oh, ow) = (h / k, w / k);
        let planes = gx.len() / (h * w);
        let norm = 1.0 / (k * k) as f64;
        for p in 0..planes {
            for y in 0..h {
                for xx in 0..w {
                    gx[(p * h + y) * w + xx] += gout[(p * oh + y / k) * ow + xx / k] * norm;
                }
            }
        }
    }
}

pub(super) fn resize_backward(
    g: &Graph<'_>,
    x: Var,
    (h, w, oh, ow): (usize, usize, usize, usize),
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if let Some(gx) = g.slot(grads, x) {
        let (ty, tx) = (resize_taps(h, oh), resize_taps(w, ow));
        let planes = gx.len() / (h * w);
        for p in 0..planes {
            let dst = &mut gx[p * h * w..(p + 1) * h * w];
            let src = &gout[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let d = src[oy * ow + ox];
                    dst[y0 * w + x0] += d * (1.0 - ly) * (1.0 - lx);
                    dst[y0 * w + x1] += d * (1.0 - ly) * lx;
                    dst[y1 * w + x0] += d * ly * (1.0 - lx);
                    dst[y1 * w + x1] += d * ly * lx;
                }
            }
        }
    }
}

pub(super) fn grid_sample_backward(
    g: &Graph<'_>,
    x: Var,
    coords: &[[f64; 2]],
    h: usize,
    w: usize,
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if let Some(gx) = g.slot(grads, x) {
        let c = gx.len() / (h * w);
        let npts = coords.len();
        for (p, rc) in coords.iter().enumerate() {
            for (idx, wt) in bilinear_taps(rc[0], rc[1], h, w) {
                for ch in 0..c {
                    gx[ch * h * w + idx] += wt * gout[ch * npts + p];
                }
            }
        }
    }
}
