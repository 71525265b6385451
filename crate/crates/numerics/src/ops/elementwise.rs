use super::Op;
use crate::error::{NumericsError, Result};
use crate::graph::{Graph, Var};

/// Output shape for a binary op: equal shapes, or one operand's shape is a
/// suffix of the other's and is repeated over the leading dims.
fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b {
        return Ok(a.to_vec());
    }
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if long.ends_with(short) {
        Ok(long.to_vec())
    } else {
        Err(NumericsError::shape(op, a, b))
    }
}

impl Graph<'_> {
    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let shape = broadcast_shape(op, self.shape(a), self.shape(b))?;
        let n: usize = shape.iter().product();
        let (av, bv) = (self.value(a), self.value(b));
        let (la, lb) = (av.len(), bv.len());
        let data = (0..n).map(|i| f(av[i % la], bv[i % lb])).collect();
        Ok(self.push(shape, data, mk(a, b)))
    }

    /// Element-wise sum; the shorter operand broadcasts over leading dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `x + v` where `v`'s shape is a prefix of `x`'s and is repeated over the
    /// trailing dims (a per-channel offset on a `[C, H, W]` map, for example).
    pub fn add_trailing(&mut self, x: Var, v: Var) -> Result<Var> {
        let (xs, vs) = (self.shape(x), self.shape(v));
        if !xs.starts_with(vs) {
            return Err(NumericsError::shape("add_trailing", xs, vs));
        }
        let shape = xs.to_vec();
        let (xv, vv) = (self.value(x), self.value(v));
        let inner = xv.len() / vv.len().max(1);
        let data = xv
            .iter()
            .enumerate()
            .map(|(i, a)| a + vv[i / inner])
            .collect();
        Ok(self.push(shape, data, Op::AddTrailing(x, v)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let shape = self.shape(x).to_vec();
        let data = self.value(x).iter().map(|v| v * c).collect();
        self.push(shape, data, Op::Scale(x, c))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let shape = self.shape(x).to_vec();
        let data = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(shape, data, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(Vec::new(), vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(Vec::new(), vec![s], Op::Mean(x))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(super) fn binary_backward(
    g: &Graph<'_>,
    a: Var,
    b: Var,
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
    ca: f64,
    cb: f64,
) {
    for (v, c) in [(a, ca), (b, cb)] {
        if let Some(gv) = g.slot(grads, v) {
            let l = gv.len();
            for (i, d) in gout.iter().enumerate() {
                gv[i % l] += c * d;
            }
        }
    }
}

pub(super) fn mul_backward(
    g: &Graph<'_>,
    a: Var,
    b: Var,
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    for (v, other) in [(a, b), (b, a)] {
        let ov = g.value(other);
        let lo = ov.len();
        if let Some(gv) = g.slot(grads, v) {
            let l = gv.len();
            for (i, d) in gout.iter().enumerate() {
                gv[i % l] += d * ov[i % lo];
            }
        }
    }
}

pub(super) fn add_trailing_backward(
    g: &Graph<'_>,
    x: Var,
    v: Var,
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    if let Some(gx) = g.slot(grads, x) {
        gx.iter_mut().zip(gout).for_each(|(a, d)| *a += d);
    }
    if let Some(gv) = g.slot(grads, v) {
        let inner = gout.len() / gv.len().max(1);
        for (i, d) in gout.iter().enumerate() {
            gv[i / inner] += d;
        }
    }
}

/// `dfdx(x_i, y_i)` gives the local derivative from the input and output values.
pub(super) fn unary_backward(
    g: &Graph<'_>,
    x: Var,
    out: Var,
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
    dfdx: impl Fn(f64, f64) -> f64,
) {
    let (xv, yv) = (g.value(x), g.value(out));
    if let Some(gx) = g.slot(grads, x) {
        for i in 0..gx.len() {
            gx[i] += gout[i] * dfdx(xv[i], yv[i]);
        }
    }
}
