use super::elementwise::sigmoid;
use super::Op;
use crate::error::{NumericsError, Result};
use crate::graph::{Graph, Var};

impl Graph<'_> {
    /// `Σ |a − b|` over all entries, as a scalar.
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(NumericsError::shape("l1_loss", self.shape(a), self.shape(b)));
        }
        let s = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y).abs())
            .sum();
        Ok(self.push(Vec::new(), vec![s], Op::L1(a, b)))
    }

    /// Per-element binary cross-entropy between `logits` and constant 0/1 `targets`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        if self.value(logits).len() != targets.len() {
            return Err(NumericsError::shape(
                "bce_with_logits",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        let shape = self.shape(logits).to_vec();
        let data = self
            .value(logits)
            .iter()
            .zip(targets)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .collect();
        Ok(self.push(
            shape,
            data,
            Op::BceWithLogits {
                x: logits,
                targets: targets.to_vec(),
            },
        ))
    }
}

pub(super) fn l1_backward(
    g: &Graph<'_>,
    a: Var,
    b: Var,
    gout: f64,
    grads: &mut [Option<Vec<f64>>],
) {
    let (av, bv) = (g.value(a), g.value(b));
    let sign = |i: usize| {
        let d = av[i] - bv[i];
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    if let Some(ga) = g.slot(grads, a) {
        for (i, v) in ga.iter_mut().enumerate() {
            *v += gout * sign(i);
        }
    }
    if let Some(gb) = g.slot(grads, b) {
        for (i, v) in gb.iter_mut().enumerate() {
            *v -= gout * sign(i);
        }
    }
}

pub(super) fn bce_backward(
    g: &Graph<'_>,
    x: Var,
    targets: &[f64],
    gout: &[f64],
    grads: &mut [Option<Vec<f64>>],
) {
    let xv = g.value(x);
    if let Some(gx) = g.slot(grads, x) {
        for i in 0..gx.len() {
            gx[i] += gout[i] * (sigmoid(xv[i]) - targets[i]);
        }
    }
}
