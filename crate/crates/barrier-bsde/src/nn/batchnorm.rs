//! Batch normalization with one trainable scale/shift pair per time step.
//!
//! A single `StepBatchNorm` owns the parameters of every time step for one
//! normalized layer, stored flat with stride `dim`; callers address a step
//! by index. Training mode normalizes with batch statistics and updates the
//! addressed step's running statistics; inference mode normalizes with the
//! running statistics.

use crate::error::{Error, Result};
use crate::scalar::{r64, Real};

/// Variance floor inside the normalization.
pub const BN_EPSILON: f64 = 1e-5;
/// Running-statistics momentum: `running = m * running + (1 - m) * batch`.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Debug)]
pub struct StepBatchNorm<R: Real> {
    dim: usize,
    n_steps: usize,
    gamma: Vec<R>,
    beta: Vec<R>,
    running_mean: Vec<R>,
    running_var: Vec<R>,
}

/// Values a backward pass needs from the matching forward pass.
#[derive(Clone, Debug)]
pub struct BnCache<R: Real> {
    /// Normalized inputs, `batch * dim`.
    x_hat: Vec<R>,
    /// `1 / sqrt(var + eps)` per feature.
    inv_std: Vec<R>,
}

impl<R: Real> StepBatchNorm<R> {
    /// Unit scales, zero shifts, zero running means, unit running variances.
    pub fn identity(dim: usize, n_steps: usize) -> Self {
        Self {
            dim,
            n_steps,
            gamma: vec![R::one(); dim * n_steps],
            beta: vec![R::zero(); dim * n_steps],
            running_mean: vec![R::zero(); dim * n_steps],
            running_var: vec![R::one(); dim * n_steps],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn gamma(&self) -> &[R] {
        &self.gamma
    }

    pub fn beta(&self) -> &[R] {
        &self.beta
    }

    pub fn running_mean(&self) -> &[R] {
        &self.running_mean
    }

    pub fn running_var(&self) -> &[R] {
        &self.running_var
    }

    pub(crate) fn gamma_mut(&mut self) -> &mut [R] {
        &mut self.gamma
    }

    pub(crate) fn beta_mut(&mut self) -> &mut [R] {
        &mut self.beta
    }

    pub(crate) fn set_running(&mut self, mean: Vec<R>, var: Vec<R>) -> Result<()> {
        if mean.len() != self.running_mean.len() || var.len() != self.running_var.len() {
            return Err(Error::Checkpoint("running statistics shape mismatch".into()));
        }
        if var.iter().any(|&v| v < R::zero()) {
            return Err(Error::Checkpoint("running variance must be nonnegative".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    #[inline]
    fn step_range(&self, step: usize) -> std::ops::Range<usize> {
        debug_assert!(step < self.n_steps, "time step out of range");
        step * self.dim..(step + 1) * self.dim
    }

    /// Batch-statistics normalization; updates the running statistics of
    /// `step`. Fails for batches smaller than two (degenerate variance).
    pub fn forward_train(
        &mut self,
        step: usize,
        x: &[R],
        batch: usize,
    ) -> Result<(Vec<R>, BnCache<R>)> {
        if batch < 2 {
            return Err(Error::Domain(
                "batch normalization in training mode needs a batch of at least 2".into(),
            ));
        }
        debug_assert_eq!(x.len(), batch * self.dim);
        let dim = self.dim;
        let eps = r64::<R>(BN_EPSILON);
        let momentum = r64::<R>(BN_MOMENTUM);
        let inv_n = R::one() / r64::<R>(batch as f64);

        // One sweep for the per-feature sums of x and x^2.
        let mut sum = vec![R::zero(); dim];
        let mut sum_sq = vec![R::zero(); dim];
        for row in x.chunks_exact(dim) {
            for j in 0..dim {
                let v = row[j];
                sum[j] = sum[j] + v;
                sum_sq[j] = sum_sq[j] + v * v;
            }
        }
        let mean: Vec<R> = sum.iter().map(|&s| s * inv_n).collect();
        let var: Vec<R> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(&sq, &m)| (sq * inv_n - m * m).max(R::zero()))
            .collect();
        let inv_std: Vec<R> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();

        let range = self.step_range(step);
        let gamma = &self.gamma[range.clone()];
        let beta = &self.beta[range.clone()];
        let mut x_hat = Vec::with_capacity(batch * dim);
        let mut y = Vec::with_capacity(batch * dim);
        for row in x.chunks_exact(dim) {
            for j in 0..dim {
                let xh = (row[j] - mean[j]) * inv_std[j];
                x_hat.push(xh);
                y.push(gamma[j] * xh + beta[j]);
            }
        }

        let rm = &mut self.running_mean[range.clone()];
        let rv = &mut self.running_var[range];
        for j in 0..dim {
            rm[j] = momentum * rm[j] + (R::one() - momentum) * mean[j];
            rv[j] = momentum * rv[j] + (R::one() - momentum) * var[j];
        }

        Ok((y, BnCache { x_hat, inv_std }))
    }

    /// Running-statistics normalization (inference).
    pub fn forward_infer(&self, step: usize, x: &[R], batch: usize) -> Vec<R> {
        debug_assert_eq!(x.len(), batch * self.dim);
        let dim = self.dim;
        let eps = r64::<R>(BN_EPSILON);
        let range = self.step_range(step);
        let gamma = &self.gamma[range.clone()];
        let beta = &self.beta[range.clone()];
        let rm = &self.running_mean[range.clone()];
        let rv = &self.running_var[range];

        let mut y = vec![R::zero(); batch * dim];
        for p in 0..batch {
            for j in 0..dim {
                let idx = p * dim + j;
                y[idx] = gamma[j] * (x[idx] - rm[j]) / (rv[j] + eps).sqrt() + beta[j];
            }
        }
        y
    }

    /// Exact backward pass through the batch statistics. Scale/shift
    /// gradients accumulate into the addressed step's slice of
    /// `grad_gamma` / `grad_beta`; the return value is the input gradient.
    pub fn backward(
        &self,
        step: usize,
        cache: &BnCache<R>,
        d_out: &[R],
        batch: usize,
        grad_gamma: &mut [R],
        grad_beta: &mut [R],
    ) -> Vec<R> {
        debug_assert_eq!(d_out.len(), batch * self.dim);
        debug_assert_eq!(grad_gamma.len(), self.gamma.len());
        debug_assert_eq!(grad_beta.len(), self.beta.len());
        let dim = self.dim;
        let inv_n = R::one() / r64::<R>(batch as f64);
        let range = self.step_range(step);
        let gamma = &self.gamma[range.clone()];

        // Per-feature reductions over the batch.
        let mut sum_d = vec![R::zero(); dim];
        let mut sum_d_xhat = vec![R::zero(); dim];
        for (d_row, xh_row) in d_out.chunks_exact(dim).zip(cache.x_hat.chunks_exact(dim)) {
            for j in 0..dim {
                sum_d[j] = sum_d[j] + d_row[j];
                sum_d_xhat[j] = sum_d_xhat[j] + d_row[j] * xh_row[j];
            }
        }

        let gg = &mut grad_gamma[range.clone()];
        let gb = &mut grad_beta[range];
        for j in 0..dim {
            gg[j] = gg[j] + sum_d_xhat[j];
            gb[j] = gb[j] + sum_d[j];
        }

        // d x_hat = d_out * gamma; fold the three coupling terms.
        let n = r64::<R>(batch as f64);
        let scale: Vec<R> = (0..dim)
            .map(|j| gamma[j] * cache.inv_std[j] * inv_n)
            .collect();
        let mut d_in = Vec::with_capacity(batch * dim);
        for (d_row, xh_row) in d_out.chunks_exact(dim).zip(cache.x_hat.chunks_exact(dim)) {
            for j in 0..dim {
                let term = d_row[j] * n - sum_d[j] - xh_row[j] * sum_d_xhat[j];
                d_in.push(scale[j] * term);
            }
        }
        d_in
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_to_zero_mean_unit_variance() {
        let mut bn = StepBatchNorm::<f64>::identity(1, 1);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (y, _) = bn.forward_train(0, &x, 5).unwrap();
        let mean: f64 = y.iter().sum::<f64>() / 5.0;
        let var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-12, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }

    #[test]
    fn constant_batch_collapses_to_beta() {
        let mut bn = StepBatchNorm::<f64>::identity(2, 3);
        bn.beta_mut()[2] = 0.7; // step 1, feature 0
        bn.beta_mut()[3] = -0.4; // step 1, feature 1
        let x = [5.0, 3.0, 5.0, 3.0, 5.0, 3.0];
        let (y, _) = bn.forward_train(1, &x, 3).unwrap();
        for p in 0..3 {
            assert!((y[2 * p] - 0.7).abs() < 1e-12);
            assert!((y[2 * p + 1] + 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_degenerate_training_batch() {
        let mut bn = StepBatchNorm::<f64>::identity(2, 1);
        assert!(bn.forward_train(0, &[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn running_statistics_blend_toward_batch() {
        let mut bn = StepBatchNorm::<f64>::identity(1, 2);
        let x = [0.0, 2.0]; // mean 1, biased var 1
        bn.forward_train(0, &x, 2).unwrap();
        // running = 0.99 * init + 0.01 * batch; only step 0 moves.
        assert!((bn.running_mean()[0] - 0.01).abs() < 1e-12);
        assert!((bn.running_var()[0] - (0.99 + 0.01)).abs() < 1e-12);
        assert_eq!(bn.running_mean()[1], 0.0);
        assert_eq!(bn.running_var()[1], 1.0);
    }

    #[test]
    fn inference_uses_running_statistics() {
        let mut bn = StepBatchNorm::<f64>::identity(1, 1);
        for round in 0..200 {
            let base = 10.0 + (round % 3) as f64;
            let x = [base - 1.0, base, base + 1.0, base + 2.0];
            bn.forward_train(0, &x, 4).unwrap();
        }
        // Feed the running mean itself: output should sit near beta = 0.
        let mu = bn.running_mean()[0];
        let y = bn.forward_infer(0, &[mu], 1);
        assert!(y[0].abs() < 1e-6, "got {}", y[0]);
    }
}
