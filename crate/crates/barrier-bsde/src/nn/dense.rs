//! Fully-connected layer with explicit forward/backward passes.

use crate::scalar::Real;

/// Dense layer; weights are `[out][in]` row-major.
#[derive(Clone, Debug)]
pub struct DenseLayer<R: Real> {
    weights: Vec<R>,
    bias: Vec<R>,
    in_dim: usize,
    out_dim: usize,
}

impl<R: Real> DenseLayer<R> {
    /// Glorot-uniform weights on `[-sqrt(6/(in+out)), +sqrt(6/(in+out))]`,
    /// zero biases.
    pub fn glorot(in_dim: usize, out_dim: usize, uniform: &mut impl FnMut(f64, f64) -> R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| uniform(-limit, limit))
            .collect();
        Self {
            weights,
            bias: vec![R::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[R] {
        &self.weights
    }

    pub fn bias(&self) -> &[R] {
        &self.bias
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [R] {
        &mut self.weights
    }

    pub(crate) fn bias_mut(&mut self) -> &mut [R] {
        &mut self.bias
    }

    #[cfg(test)]
    pub(crate) fn from_parts(weights: Vec<R>, bias: Vec<R>, in_dim: usize, out_dim: usize) -> Self {
        assert_eq!(weights.len(), in_dim * out_dim);
        assert_eq!(bias.len(), out_dim);
        Self {
            weights,
            bias,
            in_dim,
            out_dim,
        }
    }

    /// `y[p][o] = b[o] + sum_i w[o][i] x[p][i]`.
    pub fn forward(&self, x: &[R], batch: usize) -> Vec<R> {
        debug_assert_eq!(x.len(), batch * self.in_dim);
        let mut y = Vec::with_capacity(batch * self.out_dim);
        for xs in x.chunks_exact(self.in_dim) {
            for (ws, &b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
                let mut acc = b;
                for (w, xv) in ws.iter().zip(xs) {
                    acc = acc + *w * *xv;
                }
                y.push(acc);
            }
        }
        y
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(
        &self,
        x: &[R],
        d_out: &[R],
        batch: usize,
        grad_w: &mut [R],
        grad_b: &mut [R],
    ) -> Vec<R> {
        debug_assert_eq!(x.len(), batch * self.in_dim);
        debug_assert_eq!(d_out.len(), batch * self.out_dim);
        debug_assert_eq!(grad_w.len(), self.weights.len());
        debug_assert_eq!(grad_b.len(), self.bias.len());

        let mut d_in = vec![R::zero(); batch * self.in_dim];
        for p in 0..batch {
            let xs = &x[p * self.in_dim..(p + 1) * self.in_dim];
            let ds = &d_out[p * self.out_dim..(p + 1) * self.out_dim];
            let dxs = &mut d_in[p * self.in_dim..(p + 1) * self.in_dim];
            for o in 0..self.out_dim {
                let d = ds[o];
                if d == R::zero() {
                    continue;
                }
                grad_b[o] = grad_b[o] + d;
                let ws = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
                let gw = &mut grad_w[o * self.in_dim..(o + 1) * self.in_dim];
                for i in 0..self.in_dim {
                    gw[i] = gw[i] + d * xs[i];
                    dxs[i] = dxs[i] + d * ws[i];
                }
            }
        }
        d_in
    }
}

/// Test hook: a layer with prescribed weights.
#[cfg(test)]
pub(crate) fn layer_from<R: Real>(weights: &[f64], bias: &[f64], in_dim: usize, out_dim: usize) -> DenseLayer<R> {
    use crate::scalar::r64;
    DenseLayer::from_parts(
        weights.iter().map(|&w| r64(w)).collect(),
        bias.iter().map(|&b| r64(b)).collect(),
        in_dim,
        out_dim,
    )
}
