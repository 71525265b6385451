//! The layer vocabulary: forward constructors live as `Graph` methods in the
//! submodules; `backward_node` dispatches the matching vector-Jacobian
//! product for each recorded [`Op`].

mod elementwise;
mod linalg;
mod loss;
mod recurrent;
mod spatial;

pub use linalg::MASK_FILL;
pub use recurrent::GruVars;
pub use spatial::Conv2dSpec;

use crate::graph::{Graph, Var};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub ho: usize,
    pub wo: usize,
}

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddTrailing(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_shared: bool,
    },
    Gather {
        x: Var,
        map: Vec<usize>,
    },
    Reshape(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        d: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv2dSpec,
        dims: ConvDims,
    },
    AvgPool2d {
        x: Var,
        k: usize,
        h: usize,
        w: usize,
    },
    Resize {
        x: Var,
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
    },
    GridSample {
        x: Var,
        coords: Vec<[f64; 2]>,
        h: usize,
        w: usize,
    },
    Concat {
        xs: Vec<Var>,
        outer: usize,
        chunks: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    L1(Var, Var),
    BceWithLogits {
        x: Var,
        targets: Vec<f64>,
    },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddTrailing(a, b) | L1(a, b) => vec![*a, *b],
            Scale(x, _) | Relu(x) | Sigmoid(x) | Tanh(x) | Reshape(x) | Softmax(x, _) | Sum(x)
            | Mean(x) => vec![*x],
            MatMul { a, b, .. } => vec![*a, *b],
            Gather { x, .. }
            | AvgPool2d { x, .. }
            | Resize { x, .. }
            | GridSample { x, .. }
            | BceWithLogits { x, .. } => vec![*x],
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Concat { xs, .. } => xs.clone(),
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            AddTrailing(..) => "add_trailing",
            Scale(..) => "scale",
            Relu(..) => "relu",
            Sigmoid(..) => "sigmoid",
            Tanh(..) => "tanh",
            MatMul { .. } => "matmul",
            Gather { .. } => "gather",
            Reshape(..) => "reshape",
            Softmax(..) => "softmax",
            LayerNorm { .. } => "layer_norm",
            Conv2d { .. } => "conv2d",
            AvgPool2d { .. } => "avg_pool2d",
            Resize { .. } => "resize_bilinear",
            GridSample { .. } => "grid_sample",
            Concat { .. } => "concat",
            Sum(..) => "sum",
            Mean(..) => "mean",
            L1(..) => "l1_loss",
            BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

pub(crate) fn backward_node(
    g: &Graph<'_>,
    out: Var,
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    use Op::*;
    match &g.nodes[out.0].op {
        Leaf => {}
        Add(a, b) => elementwise::binary_backward(g, *a, *b, gout, grads, 1.0, 1.0),
        Sub(a, b) => elementwise::binary_backward(g, *a, *b, gout, grads, 1.0, -1.0),
        Mul(a, b) => elementwise::mul_backward(g, *a, *b, gout, grads),
        AddTrailing(x, v) => elementwise::add_trailing_backward(g, *x, *v, gout, grads),
        Scale(x, c) => {
            if let Some(gx) = g.slot(grads, *x) {
                gx.iter_mut().zip(gout).for_each(|(a, d)| *a += c * d);
            }
        }
        Relu(x) => elementwise::unary_backward(g, *x, out, gout, grads, |xi, _| {
            if xi > 0.0 {
                1.0
            } else {
                0.0
            }
        }),
        Sigmoid(x) => elementwise::unary_backward(g, *x, out, gout, grads, |_, y| y * (1.0 - y)),
        Tanh(x) => elementwise::unary_backward(g, *x, out, gout, grads, |_, y| 1.0 - y * y),
        MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            b_shared,
        } => linalg::matmul_backward(g, *a, *b, (*batch, *m, *k, *n, *b_shared), gout, grads),
        Gather { x, map } => {
            if let Some(gx) = g.slot(grads, *x) {
                for (o, &i) in map.iter().enumerate() {
                    gx[i] += gout[o];
                }
            }
        }
        Reshape(x) => {
            if let Some(gx) = g.slot(grads, *x) {
                gx.iter_mut().zip(gout).for_each(|(a, d)| *a += d);
            }
        }
        Softmax(x, cols) => linalg::softmax_backward(g, *x, out, *cols, gout, grads),
        LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            d,
        } => linalg::layer_norm_backward(g, (*x, *gamma, *beta), xhat, inv_std, *d, gout, grads),
        Conv2d {
            x,
            w,
            b,
            spec,
            dims,
        } => spatial::conv2d_backward(g, *x, *w, *b, *spec, *dims, gout, grads),
        AvgPool2d { x, k, h, w } => spatial::avg_pool_backward(g, *x, *k, *h, *w, gout, grads),
        Resize { x, h, w, oh, ow } => {
            spatial::resize_backward(g, *x, (*h, *w, *oh, *ow), gout, grads)
        }
        GridSample { x, coords, h, w } => {
            spatial::grid_sample_backward(g, *x, coords, *h, *w, gout, grads)
        }
        Concat { xs, outer, chunks } => {
            let total: usize = chunks.iter().sum();
            let mut off = 0;
            for (x, &chunk) in xs.iter().zip(chunks) {
                if let Some(gx) = g.slot(grads, *x) {
                    for o in 0..*outer {
                        let src = &gout[o * total + off..o * total + off + chunk];
                        gx[o * chunk..(o + 1) * chunk]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, d)| *a += d);
                    }
                }
                off += chunk;
            }
        }
        Sum(x) => {
            if let Some(gx) = g.slot(grads, *x) {
                gx.iter_mut().for_each(|a| *a += gout[0]);
            }
        }
        Mean(x) => {
            if let Some(gx) = g.slot(grads, *x) {
                let scale = gout[0] / gx.len() as f64;
                gx.iter_mut().for_each(|a| *a += scale);
            }
        }
        L1(a, b) => loss::l1_backward(g, *a, *b, gout[0], grads),
        BceWithLogits { x, targets } => loss::bce_backward(g, *x, targets, gout, grads),
    }
}
