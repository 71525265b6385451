use crate::error::Result;
use crate::graph::{Graph, Var};

/// Weights of one GRU cell, gate order `[reset, update, candidate]` along the
/// last dim of each tensor.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    /// `[input, 3 * hidden]`
    pub w_ih: Var,
    /// `[hidden, 3 * hidden]`
    pub w_hh: Var,
    /// `[3 * hidden]`
    pub b_ih: Var,
    /// `[3 * hidden]`
    pub b_hh: Var,
}

impl Graph<'_> {
    /// One GRU step on `x: [B, input]`, `h: [B, hidden]`:
    ///
    /// ```text
    /// r  = σ(x W_ir + b_ir + h W_hr + b_hr)
    /// z  = σ(x W_iz + b_iz + h W_hz + b_hz)
    /// n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
    /// h' = (1 − z) ⊙ n + z ⊙ h
    /// ```
    pub fn gru_cell(&mut self, x: Var, h: Var, w: GruVars) -> Result<Var> {
        let hidden = *self.shape(h).last().unwrap_or(&0);
        let axis = self.shape(h).len() - 1;
        let gi = self.linear(x, w.w_ih, Some(w.b_ih))?;
        let gh = self.linear(h, w.w_hh, Some(w.b_hh))?;
        let (ir, iz, inn) = (
            self.narrow(gi, axis, 0, hidden)?,
            self.narrow(gi, axis, hidden, hidden)?,
            self.narrow(gi, axis, 2 * hidden, hidden)?,
        );
        let (hr, hz, hn) = (
            self.narrow(gh, axis, 0, hidden)?,
            self.narrow(gh, axis, hidden, hidden)?,
            self.narrow(gh, axis, 2 * hidden, hidden)?,
        );
        let r = self.add(ir, hr)?;
        let r = self.sigmoid(r);
        let z = self.add(iz, hz)?;
        let z = self.sigmoid(z);
        let rh = self.mul(r, hn)?;
        let n = self.add(inn, rh)?;
        let n = self.tanh(n);
        let hmn = self.sub(h, n)?;
        let zh = self.mul(z, hmn)?;
        self.add(n, zh)
    }
}
