//! From-first-principles feed-forward network with explicit reverse-mode
//! gradients.
//!
//! One merged network serves every time step: it takes the underlying value
//! and the time to maturity as inputs and produces the scalar control. Batch
//! normalization, when enabled, carries a separate trainable scale/shift set
//! per time step; the dense trunk is shared.

mod adam;
mod batchnorm;
mod checkpoint;
mod dense;

pub use adam::{adam_step, AdamState};
pub use batchnorm::{BnCache, StepBatchNorm, BN_EPSILON, BN_MOMENTUM};
pub use checkpoint::Checkpoint;
pub use dense::DenseLayer;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{r64, Real};

/// Where batch normalization is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "input-only")]
    InputOnly,
    #[serde(rename = "every-layer")]
    EveryLayer,
}

/// Activation of the hidden layers. Elu is the only one in use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "elu")]
    Elu,
}

/// Exponential linear unit: identity on nonnegatives, `exp(x) - 1` below.
#[inline]
pub fn elu<R: Real>(x: R) -> R {
    if x >= R::zero() {
        x
    } else {
        x.exp() - R::one()
    }
}

/// Derivative of `elu`; equals 1 from both sides at zero.
#[inline]
pub fn elu_prime<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one()
    } else {
        x.exp()
    }
}

/// Derivative of `elu` expressed through its own output:
/// `exp(x) = elu(x) + 1` on the negative branch, so no transcendental call
/// is needed when the activation value is already cached.
#[inline]
fn elu_prime_from_output<R: Real>(a: R) -> R {
    if a >= R::zero() {
        R::one()
    } else {
        a + R::one()
    }
}

/// Network architecture. The default trunk is one hidden layer of width
/// `input asset dimension + 20`, i.e. 21 in one dimension, with a scalar
/// output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub bn_mode: BnMode,
    /// Number of per-step batch-norm parameter sets (when `bn_mode` is not
    /// `None`).
    pub n_time_steps: usize,
}

/// Default hidden width for a `d`-dimensional underlying.
pub fn default_width(asset_dim: usize) -> usize {
    asset_dim + 20
}

impl NetworkSpec {
    /// The merged architecture: inputs are (underlying value, time to
    /// maturity).
    pub fn merged(n_time_steps: usize, bn_mode: BnMode) -> Self {
        Self {
            input_dim: 2,
            hidden_layers: 1,
            hidden_width: default_width(1),
            activation: Activation::Elu,
            bn_mode,
            n_time_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidConfig(
                "network dimensions must be positive".into(),
            ));
        }
        if self.bn_mode != BnMode::None && self.n_time_steps == 0 {
            return Err(Error::InvalidConfig(
                "per-step batch norm needs at least one time step".into(),
            ));
        }
        Ok(())
    }
}

/// Whether a forward pass uses batch statistics (training) or running
/// statistics (inference).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// All trainable state: the dense trunk, per-step batch-norm parameters,
/// and the two scalar optimization variables `y0` (initial value) and `z0`
/// (initial control).
#[derive(Clone, Debug)]
pub struct Network<R: Real> {
    spec: NetworkSpec,
    hidden: Vec<DenseLayer<R>>,
    output: DenseLayer<R>,
    input_bn: Option<StepBatchNorm<R>>,
    hidden_bn: Vec<StepBatchNorm<R>>,
    y0: R,
    z0: R,
}

/// Per-layer values retained by a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<R: Real> {
    batch: usize,
    time_index: usize,
    /// Input to the first dense layer (after input BN when present).
    post_input: Vec<R>,
    input_bn: Option<BnCache<R>>,
    layers: Vec<LayerCache<R>>,
}

#[derive(Clone, Debug)]
struct LayerCache<R: Real> {
    /// Dense output before batch norm / activation.
    pre: Vec<R>,
    bn: Option<BnCache<R>>,
    /// Activation output, input to the next layer.
    act: Vec<R>,
}

/// Gradient accumulator shaped like the trainable tensors of a network.
#[derive(Clone, Debug)]
pub struct NetworkGrads<R: Real> {
    pub hidden_w: Vec<Vec<R>>,
    pub hidden_b: Vec<Vec<R>>,
    pub output_w: Vec<R>,
    pub output_b: Vec<R>,
    pub input_bn_gamma: Vec<R>,
    pub input_bn_beta: Vec<R>,
    pub hidden_bn_gamma: Vec<Vec<R>>,
    pub hidden_bn_beta: Vec<Vec<R>>,
    pub y0: R,
    pub z0: R,
}

impl<R: Real> Network<R> {
    /// Random initialization: Glorot-uniform dense weights, zero biases,
    /// unit scales and zero shifts for batch norm, `y0` uniform on
    /// `[0, y0_max]`, `z0` uniform on `[-0.1, 0.1]`.
    pub fn init(spec: NetworkSpec, y0_max: R, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |lo: f64, hi: f64| -> R { r64(rng.gen_range(lo..hi)) };

        let mut hidden = Vec::with_capacity(spec.hidden_layers);
        let mut fan_in = spec.input_dim;
        for _ in 0..spec.hidden_layers {
            hidden.push(DenseLayer::glorot(fan_in, spec.hidden_width, &mut uniform));
            fan_in = spec.hidden_width;
        }
        let output = DenseLayer::glorot(fan_in, 1, &mut uniform);

        let input_bn = (spec.bn_mode != BnMode::None)
            .then(|| StepBatchNorm::identity(spec.input_dim, spec.n_time_steps));
        let hidden_bn = if spec.bn_mode == BnMode::EveryLayer {
            (0..spec.hidden_layers)
                .map(|_| StepBatchNorm::identity(spec.hidden_width, spec.n_time_steps))
                .collect()
        } else {
            Vec::new()
        };

        let y0 = uniform(0.0, crate::scalar::to_f64(y0_max).max(1e-12));
        let z0 = uniform(-0.1, 0.1);

        Ok(Self {
            spec,
            hidden,
            output,
            input_bn,
            hidden_bn,
            y0,
            z0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn y0(&self) -> R {
        self.y0
    }

    pub fn z0(&self) -> R {
        self.z0
    }

    pub fn set_y0(&mut self, y0: R) {
        self.y0 = y0;
    }

    /// Row-wise network evaluation. `inputs` is `batch * input_dim`
    /// row-major; the return is `batch` scalars plus the cache needed for
    /// `backward`. Training mode uses batch statistics in every BN layer
    /// and updates the running statistics of the addressed time step.
    pub fn forward_train(
        &mut self,
        time_index: usize,
        inputs: &[R],
        batch: usize,
    ) -> Result<(Vec<R>, ForwardCache<R>)> {
        self.check_shapes(time_index, inputs.len(), batch);

        let (post_input, input_bn_cache) = match &mut self.input_bn {
            Some(bn) => {
                let (y, cache) = bn.forward_train(time_index, inputs, batch)?;
                (y, Some(cache))
            }
            None => (inputs.to_vec(), None),
        };

        let mut layers: Vec<LayerCache<R>> = Vec::with_capacity(self.hidden.len());
        for (l, dense) in self.hidden.iter().enumerate() {
            let input = layers
                .last()
                .map(|prev| prev.act.as_slice())
                .unwrap_or(&post_input);
            let pre = dense.forward(input, batch);
            let (act, bn_cache) = match self.hidden_bn.get_mut(l) {
                Some(bn) => {
                    let (mut bn_out, cache) = bn.forward_train(time_index, &pre, batch)?;
                    for v in bn_out.iter_mut() {
                        *v = elu(*v);
                    }
                    (bn_out, Some(cache))
                }
                None => (pre.iter().map(|&v| elu(v)).collect(), None),
            };
            layers.push(LayerCache {
                pre,
                bn: bn_cache,
                act,
            });
        }

        let last = layers
            .last()
            .map(|l| l.act.as_slice())
            .unwrap_or(&post_input);
        let out = self.output.forward(last, batch);
        Ok((
            out,
            ForwardCache {
                batch,
                time_index,
                post_input,
                input_bn: input_bn_cache,
                layers,
            },
        ))
    }

    /// Inference-mode evaluation with running statistics; no cache.
    pub fn forward_infer(&self, time_index: usize, inputs: &[R], batch: usize) -> Vec<R> {
        self.check_shapes(time_index, inputs.len(), batch);
        let mut cur = match &self.input_bn {
            Some(bn) => bn.forward_infer(time_index, inputs, batch),
            None => inputs.to_vec(),
        };
        for (l, dense) in self.hidden.iter().enumerate() {
            let mut pre = dense.forward(&cur, batch);
            if let Some(bn) = self.hidden_bn.get(l) {
                pre = bn.forward_infer(time_index, &pre, batch);
            }
            cur = pre.into_iter().map(elu).collect();
        }
        self.output.forward(&cur, batch)
    }

    fn check_shapes(&self, time_index: usize, input_len: usize, batch: usize) {
        assert_eq!(
            input_len,
            batch * self.spec.input_dim,
            "input buffer does not match batch * input_dim"
        );
        if self.spec.bn_mode != BnMode::None {
            assert!(
                time_index < self.spec.n_time_steps,
                "time index {time_index} out of range for {} per-step parameter sets",
                self.spec.n_time_steps
            );
        }
    }

    /// Exact reverse-mode pass. `upstream` is the loss gradient with respect
    /// to the scalar outputs (`batch` entries). Parameter gradients are
    /// accumulated into `grads`; the return value is the gradient with
    /// respect to the raw inputs.
    pub fn backward(
        &self,
        cache: &ForwardCache<R>,
        upstream: &[R],
        grads: &mut NetworkGrads<R>,
    ) -> Vec<R> {
        let batch = cache.batch;
        assert_eq!(upstream.len(), batch, "upstream gradient shape mismatch");

        let last_act = cache
            .layers
            .last()
            .map(|l| l.act.as_slice())
            .unwrap_or(&cache.post_input);
        let mut d_cur = self.output.backward(
            last_act,
            upstream,
            batch,
            &mut grads.output_w,
            &mut grads.output_b,
        );

        for l in (0..self.hidden.len()).rev() {
            let layer = &cache.layers[l];
            // The Elu derivative comes straight from the cached activation
            // values, whichever stage fed them.
            let d_preact: Vec<R> = d_cur
                .iter()
                .zip(layer.act.iter())
                .map(|(&d, &a)| d * elu_prime_from_output(a))
                .collect();

            let d_pre = match (&layer.bn, self.hidden_bn.get(l)) {
                (Some(bn_cache), Some(bn)) => bn.backward(
                    cache.time_index,
                    bn_cache,
                    &d_preact,
                    batch,
                    &mut grads.hidden_bn_gamma[l],
                    &mut grads.hidden_bn_beta[l],
                ),
                _ => d_preact,
            };

            let layer_input = if l == 0 {
                &cache.post_input
            } else {
                &cache.layers[l - 1].act
            };
            d_cur = self.hidden[l].backward(
                layer_input,
                &d_pre,
                batch,
                &mut grads.hidden_w[l],
                &mut grads.hidden_b[l],
            );
        }

        match (&self.input_bn, &cache.input_bn) {
            (Some(bn), Some(bn_cache)) => bn.backward(
                cache.time_index,
                bn_cache,
                &d_cur,
                batch,
                &mut grads.input_bn_gamma,
                &mut grads.input_bn_beta,
            ),
            _ => d_cur,
        }
    }

    /// Visits every trainable tensor in canonical order.
    pub fn for_each_tensor(&self, mut f: impl FnMut(String, &[R])) {
        for (l, dense) in self.hidden.iter().enumerate() {
            f(format!("hidden{l}.w"), dense.weights());
            f(format!("hidden{l}.b"), dense.bias());
        }
        f("output.w".into(), self.output.weights());
        f("output.b".into(), self.output.bias());
        if let Some(bn) = &self.input_bn {
            f("bn_input.gamma".into(), bn.gamma());
            f("bn_input.beta".into(), bn.beta());
        }
        for (l, bn) in self.hidden_bn.iter().enumerate() {
            f(format!("bn_hidden{l}.gamma"), bn.gamma());
            f(format!("bn_hidden{l}.beta"), bn.beta());
        }
        f("y0".into(), std::slice::from_ref(&self.y0));
        f("z0".into(), std::slice::from_ref(&self.z0));
    }

    fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&mut [R])) {
        for dense in self.hidden.iter_mut() {
            f(dense.weights_mut());
            f(dense.bias_mut());
        }
        f(self.output.weights_mut());
        f(self.output.bias_mut());
        if let Some(bn) = &mut self.input_bn {
            f(bn.gamma_mut());
            f(bn.beta_mut());
        }
        for bn in self.hidden_bn.iter_mut() {
            f(bn.gamma_mut());
            f(bn.beta_mut());
        }
        f(std::slice::from_mut(&mut self.y0));
        f(std::slice::from_mut(&mut self.z0));
    }

    /// Number of trainable parameters.
    pub fn param_count(&self) -> usize {
        let mut count = 0;
        self.for_each_tensor(|_, t| count += t.len());
        count
    }

    /// Trainable parameters flattened in canonical order.
    pub fn params_vec(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_tensor(|_, t| out.extend_from_slice(t));
        out
    }

    /// Writes back a flat parameter vector in canonical order.
    pub fn set_params(&mut self, params: &[R]) {
        let mut offset = 0;
        self.for_each_tensor_mut(|t| {
            t.copy_from_slice(&params[offset..offset + t.len()]);
            offset += t.len();
        });
        assert_eq!(offset, params.len(), "parameter vector length mismatch");
    }

    pub(crate) fn input_bn_ref(&self) -> Option<&StepBatchNorm<R>> {
        self.input_bn.as_ref()
    }

    pub(crate) fn hidden_bn_ref(&self) -> &[StepBatchNorm<R>] {
        &self.hidden_bn
    }

    pub(crate) fn input_bn_mut(&mut self) -> Option<&mut StepBatchNorm<R>> {
        self.input_bn.as_mut()
    }

    pub(crate) fn hidden_bn_mut(&mut self, layer: usize) -> &mut StepBatchNorm<R> {
        &mut self.hidden_bn[layer]
    }
}

impl<R: Real> NetworkGrads<R> {
    pub fn zeros_for(net: &Network<R>) -> Self {
        Self {
            hidden_w: net.hidden.iter().map(|d| vec![R::zero(); d.weights().len()]).collect(),
            hidden_b: net.hidden.iter().map(|d| vec![R::zero(); d.bias().len()]).collect(),
            output_w: vec![R::zero(); net.output.weights().len()],
            output_b: vec![R::zero(); net.output.bias().len()],
            input_bn_gamma: net
                .input_bn
                .as_ref()
                .map(|bn| vec![R::zero(); bn.gamma().len()])
                .unwrap_or_default(),
            input_bn_beta: net
                .input_bn
                .as_ref()
                .map(|bn| vec![R::zero(); bn.beta().len()])
                .unwrap_or_default(),
            hidden_bn_gamma: net
                .hidden_bn
                .iter()
                .map(|bn| vec![R::zero(); bn.gamma().len()])
                .collect(),
            hidden_bn_beta: net
                .hidden_bn
                .iter()
                .map(|bn| vec![R::zero(); bn.beta().len()])
                .collect(),
            y0: R::zero(),
            z0: R::zero(),
        }
    }

    /// Flattens in the same canonical order as `Network::params_vec`.
    pub fn flatten(&self) -> Vec<R> {
        let mut out = Vec::new();
        for (w, b) in self.hidden_w.iter().zip(&self.hidden_b) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.output_w);
        out.extend_from_slice(&self.output_b);
        out.extend_from_slice(&self.input_bn_gamma);
        out.extend_from_slice(&self.input_bn_beta);
        for (g, b) in self.hidden_bn_gamma.iter().zip(&self.hidden_bn_beta) {
            out.extend_from_slice(g);
            out.extend_from_slice(b);
        }
        out.push(self.y0);
        out.push(self.z0);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(bn_mode: BnMode) -> NetworkSpec {
        NetworkSpec {
            input_dim: 2,
            hidden_layers: 1,
            hidden_width: 21,
            activation: Activation::Elu,
            bn_mode,
            n_time_steps: 4,
        }
    }

    #[test]
    fn elu_values_and_continuity() {
        assert_eq!(elu(2.5f64), 2.5);
        assert_eq!(elu(0.0f64), 0.0);
        assert!((elu(-1.0f64) - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((elu(-1.0f64) + 0.63212).abs() < 1e-5);

        assert_eq!(elu_prime(0.0f64), 1.0);
        assert!((elu_prime(-1e-12f64) - 1.0).abs() < 1e-11);
        assert!((elu(1e-12f64) - elu(-1e-12f64)).abs() < 1e-11);
    }

    #[test]
    fn zeroed_network_outputs_zero() {
        let mut net = Network::<f64>::init(spec(BnMode::None), 1.0, 0).unwrap();
        let zeros = vec![0.0; net.param_count()];
        net.set_params(&zeros);
        let (out, _) = net.forward_train(0, &[0.3, 0.7, -1.1, 0.2], 2).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn single_unit_passes_elu_through() {
        // 1 hidden unit, weights [1, 0], zero bias, unit output weight:
        // the network computes elu(x) = x for x >= 0.
        let s = NetworkSpec {
            input_dim: 2,
            hidden_layers: 1,
            hidden_width: 1,
            activation: Activation::Elu,
            bn_mode: BnMode::None,
            n_time_steps: 1,
        };
        let mut net = Network::<f64>::init(s, 1.0, 0).unwrap();
        // Order: hidden0.w, hidden0.b, output.w, output.b, y0, z0.
        net.set_params(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let (out, _) = net.forward_train(0, &[3.25, 99.0, -1.0, 42.0], 2).unwrap();
        assert!((out[0] - 3.25).abs() < 1e-15);
        assert!((out[1] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        for mode in [BnMode::None, BnMode::InputOnly, BnMode::EveryLayer] {
            let mut net = Network::<f64>::init(spec(mode), 1.0, 3).unwrap();
            let inputs: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
            let (_, cache) = net.forward_train(1, &inputs, 4).unwrap();
            let mut grads = NetworkGrads::zeros_for(&net);
            let d_input = net.backward(&cache, &[0.0; 4], &mut grads);
            assert!(grads.flatten().iter().all(|&g| g == 0.0));
            assert!(d_input.iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn training_batch_of_one_is_rejected_with_bn() {
        for mode in [BnMode::InputOnly, BnMode::EveryLayer] {
            let mut net = Network::<f64>::init(spec(mode), 1.0, 3).unwrap();
            assert!(net.forward_train(0, &[0.5, 0.5], 1).is_err());
        }
        let mut net = Network::<f64>::init(spec(BnMode::None), 1.0, 3).unwrap();
        assert!(net.forward_train(0, &[0.5, 0.5], 1).is_ok());
    }

    #[test]
    fn parameter_count_accounting() {
        // Trunk: 2*21 + 21 + 21*1 + 1 = 85 parameters, plus y0 and z0.
        let none = Network::<f64>::init(spec(BnMode::None), 1.0, 0).unwrap();
        assert_eq!(none.param_count(), 85 + 2);

        // Input BN adds n_steps * 2 * input_dim.
        let input_only = Network::<f64>::init(spec(BnMode::InputOnly), 1.0, 0).unwrap();
        assert_eq!(input_only.param_count(), 85 + 2 + 4 * 2 * 2);

        // Every-layer BN additionally has n_steps * 2 * width per hidden
        // layer.
        let every = Network::<f64>::init(spec(BnMode::EveryLayer), 1.0, 0).unwrap();
        assert_eq!(
            every.param_count() - input_only.param_count(),
            4 * 2 * 21
        );
    }

    #[test]
    fn params_round_trip_through_flat_vector() {
        let mut net = Network::<f64>::init(spec(BnMode::EveryLayer), 2.0, 9).unwrap();
        let params = net.params_vec();
        assert_eq!(params.len(), net.param_count());
        let mut perturbed = params.clone();
        perturbed[0] += 0.5;
        net.set_params(&perturbed);
        assert_eq!(net.params_vec(), perturbed);
    }

    #[test]
    fn forward_is_deterministic_across_calls() {
        let mut net = Network::<f64>::init(spec(BnMode::EveryLayer), 1.0, 5).unwrap();
        let inputs: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let (a, _) = net.forward_train(2, &inputs, 4).unwrap();
        // Running statistics moved, but batch statistics drive the output.
        let (b, _) = net.forward_train(2, &inputs, 4).unwrap();
        assert_eq!(a, b);
    }
}
