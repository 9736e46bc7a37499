use rand::Rng;

use super::mlp::{dot, sigmoid};
use super::store::{ParameterStore, Span};
use crate::error::{Error, Result};

/// Gated recurrent cell producing the agent-type embedding.
///
/// ```text
/// r  = sigmoid(Wr x + Ur h + br)
/// z  = sigmoid(Wz x + Uz h + bz)
/// n  = tanh(Wn x + r * (Un h) + bn)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    input_dim: usize,
    hidden: usize,
    /// `3H x input_dim`, gate order r, z, n.
    wx: Span,
    /// `3H x H`
    wh: Span,
    /// `3H`
    bias: Span,
}

#[derive(Clone, Debug)]
pub struct GruTrace {
    x: Vec<f64>,
    h: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    un_h: Vec<f64>,
}

impl GruCell {
    pub fn new(
        store: &mut ParameterStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let wx = store.alloc(format!("{name}.wx"), &[3 * hidden, input_dim]);
        let wh = store.alloc(format!("{name}.wh"), &[3 * hidden, hidden]);
        let bias = store.alloc(format!("{name}.bias"), &[3 * hidden]);
        store.init_glorot(wx, input_dim, hidden, rng);
        store.init_glorot(wh, hidden, hidden, rng);
        GruCell {
            input_dim,
            hidden,
            wx,
            wh,
            bias,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn check(&self, x: &[f64], h: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape {
                context: "recurrent cell input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if h.len() != self.hidden {
            return Err(Error::Shape {
                context: "recurrent cell hidden state",
                expected: self.hidden,
                got: h.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_traced(params, x, h)?.0)
    }

    pub fn forward_traced(
        &self,
        params: &[f64],
        x: &[f64],
        h: &[f64],
    ) -> Result<(Vec<f64>, GruTrace)> {
        self.check(x, h)?;
        let hd = self.hidden;
        let wx = self.wx.of(params);
        let wh = self.wh.of(params);
        let b = self.bias.of(params);
        let xrow = |row: usize| dot(&wx[row * self.input_dim..(row + 1) * self.input_dim], x);
        let hrow = |row: usize| dot(&wh[row * hd..(row + 1) * hd], h);

        let mut r = vec![0.0; hd];
        let mut z = vec![0.0; hd];
        let mut n = vec![0.0; hd];
        let mut un_h = vec![0.0; hd];
        let mut out = vec![0.0; hd];
        for u in 0..hd {
            r[u] = sigmoid(xrow(u) + hrow(u) + b[u]);
            z[u] = sigmoid(xrow(hd + u) + hrow(hd + u) + b[hd + u]);
            un_h[u] = hrow(2 * hd + u);
            n[u] = (xrow(2 * hd + u) + r[u] * un_h[u] + b[2 * hd + u]).tanh();
            out[u] = (1.0 - z[u]) * n[u] + z[u] * h[u];
        }
        Ok((
            out,
            GruTrace {
                x: x.to_vec(),
                h: h.to_vec(),
                r,
                z,
                n,
                un_h,
            },
        ))
    }

    /// Returns `(dx, dh_prev)` and accumulates parameter gradients.
    pub fn backward(
        &self,
        params: &[f64],
        trace: &GruTrace,
        d_out: &[f64],
        grads: &mut [f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let hd = self.hidden;
        if trace.h.len() != hd || trace.x.len() != self.input_dim || d_out.len() != hd {
            return Err(Error::State("trace does not match this recurrent cell".into()));
        }
        let mut da = vec![0.0; 3 * hd];
        let mut dh = vec![0.0; hd];
        // n-gate contribution through r * (Un h) is routed separately
        let mut da_nh = vec![0.0; hd];
        for u in 0..hd {
            let (r, z, n) = (trace.r[u], trace.z[u], trace.n[u]);
            let dn = d_out[u] * (1.0 - z);
            let dz = d_out[u] * (trace.h[u] - n);
            dh[u] += d_out[u] * z;
            let da_n = dn * (1.0 - n * n);
            let dr = da_n * trace.un_h[u];
            da[u] = dr * r * (1.0 - r);
            da[hd + u] = dz * z * (1.0 - z);
            da[2 * hd + u] = da_n;
            da_nh[u] = da_n * r;
        }

        let wx = self.wx.of(params);
        let wh = self.wh.of(params);
        let mut dx = vec![0.0; self.input_dim];
        {
            let gwx = self.wx.of_mut(grads);
            for (row, &d) in da.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let lo = row * self.input_dim;
                for i in 0..self.input_dim {
                    gwx[lo + i] += d * trace.x[i];
                    dx[i] += d * wx[lo + i];
                }
            }
        }
        {
            let gwh = self.wh.of_mut(grads);
            for row in 0..3 * hd {
                // r and z rows see h directly; n rows see h through r * (Un h)
                let d = if row < 2 * hd { da[row] } else { da_nh[row - 2 * hd] };
                if d == 0.0 {
                    continue;
                }
                let lo = row * hd;
                for i in 0..hd {
                    gwh[lo + i] += d * trace.h[i];
                    dh[i] += d * wh[lo + i];
                }
            }
        }
        {
            let gb = self.bias.of_mut(grads);
            for (g, d) in gb.iter_mut().zip(&da) {
                *g += d;
            }
        }
        Ok((dx, dh))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_halve_hidden_state() {
        // all gates 0.5, n = tanh(0) = 0 -> h' = 0.5 h
        let mut store = ParameterStore::new();
        let cell = GruCell::new(&mut store, "g", 2, 3, &mut ChaCha8Rng::seed_from_u64(1));
        store.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let out = cell.forward(store.values(), &[1.0, 2.0], &[2.0, -4.0, 0.0]).unwrap();
        assert_eq!(out, vec![1.0, -2.0, 0.0]);
    }

    #[test]
    fn shape_checks() {
        let mut store = ParameterStore::new();
        let cell = GruCell::new(&mut store, "g", 2, 3, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(cell.forward(store.values(), &[1.0], &[0.0; 3]).is_err());
        assert!(cell.forward(store.values(), &[1.0, 1.0], &[0.0; 2]).is_err());
    }
}
