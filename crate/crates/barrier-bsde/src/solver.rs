//! Deep-BSDE training loop.
//!
//! The value process is rolled forward through the Euler recursion
//! `Y_{i+1} = Y_i + r Y_i dt + Z_i dW_i` with the initial value `y0` and the
//! step-zero control `z0` as trainable scalars and the network supplying
//! `Z` at the interior steps from `(X_i, T - t_i)`. Training minimizes the
//! mean squared terminal mismatch against the bridge-weighted payoff over a
//! fresh path batch per iteration; the learned `y0` is the price.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bridge::modified_payoff;
use crate::error::{Error, Result};
use crate::market::{build_time_grid, simulate_paths, MarketCase, PathBatch, TimeGrid};
use crate::nn::{adam_step, AdamState, Activation, BnMode, ForwardCache, Network, NetworkGrads, NetworkSpec};
use crate::rng::derive_seed;
use crate::scalar::{r64, to_f64, Real};

/// Length of the trailing window behind both the stopping statistic and the
/// reported price; the stopping rule is evaluated at this cadence.
pub const STOP_WINDOW: usize = 50;

/// Named training settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "test1")]
    Test1,
    #[serde(rename = "test2")]
    Test2,
    #[serde(rename = "test3")]
    Test3,
    #[serde(rename = "custom")]
    Custom,
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Setting::Test1 => "test1",
            Setting::Test2 => "test2",
            Setting::Test3 => "test3",
            Setting::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Training configuration. The three named settings pin the learning-rate
/// schedule, iteration bounds, stopping threshold, batch size of 512 and
/// batch-norm placement; `Custom` leaves every field to the caller.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(bound(
    serialize = "R: Serialize",
    deserialize = "R: serde::de::DeserializeOwned"
))]
pub struct TrainConfig<R: Real> {
    pub setting: Setting,
    pub initial_lr: R,
    pub lr_decay_factor: R,
    pub lr_decay_every: usize,
    pub max_iterations: usize,
    pub min_iterations: usize,
    /// `None` disables the stopping rule (the brute-force setting).
    pub stop_threshold: Option<R>,
    pub batch_size: usize,
    pub bn_mode: BnMode,
    pub seed: u64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl<R: Real> TrainConfig<R> {
    /// Brute force: 8000 iterations, no stopping, no batch norm.
    pub fn test1(seed: u64) -> Self {
        Self {
            setting: Setting::Test1,
            initial_lr: r64(0.01),
            lr_decay_factor: r64(0.5),
            lr_decay_every: 1500,
            max_iterations: 8000,
            min_iterations: 8000,
            stop_threshold: None,
            batch_size: 512,
            bn_mode: BnMode::None,
            seed,
            hidden_layers: 1,
            hidden_width: crate::nn::default_width(1),
        }
    }

    /// Batch norm at every layer, stop on price change below 0.002.
    pub fn test2(seed: u64) -> Self {
        Self {
            setting: Setting::Test2,
            initial_lr: r64(0.02),
            lr_decay_factor: r64(0.5),
            lr_decay_every: 500,
            max_iterations: 1500,
            min_iterations: 750,
            stop_threshold: Some(r64(0.002)),
            batch_size: 512,
            bn_mode: BnMode::EveryLayer,
            seed,
            hidden_layers: 1,
            hidden_width: crate::nn::default_width(1),
        }
    }

    /// Batch norm at the input layer only, stop on price change below 0.005.
    pub fn test3(seed: u64) -> Self {
        Self {
            setting: Setting::Test3,
            initial_lr: r64(0.02),
            lr_decay_factor: r64(0.5),
            lr_decay_every: 1000,
            max_iterations: 3000,
            min_iterations: 1500,
            stop_threshold: Some(r64(0.005)),
            batch_size: 512,
            bn_mode: BnMode::InputOnly,
            seed,
            hidden_layers: 1,
            hidden_width: crate::nn::default_width(1),
        }
    }

    pub fn for_setting(setting: Setting, seed: u64) -> Result<Self> {
        match setting {
            Setting::Test1 => Ok(Self::test1(seed)),
            Setting::Test2 => Ok(Self::test2(seed)),
            Setting::Test3 => Ok(Self::test3(seed)),
            Setting::Custom => Err(Error::InvalidConfig(
                "custom configurations are built field by field".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if self.min_iterations > self.max_iterations || self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "need 1 <= min_iterations <= max_iterations".into(),
            ));
        }
        if !(self.initial_lr > R::zero()) {
            return Err(Error::InvalidConfig("initial_lr must be positive".into()));
        }
        if !(self.lr_decay_factor > R::zero() && self.lr_decay_factor <= R::one()) {
            return Err(Error::InvalidConfig(
                "lr_decay_factor must lie in (0, 1]".into(),
            ));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::InvalidConfig("lr_decay_every must be positive".into()));
        }
        match self.stop_threshold {
            Some(t) if !(t > R::zero()) => {
                return Err(Error::InvalidConfig("stop_threshold must be positive".into()))
            }
            None if !matches!(self.setting, Setting::Test1 | Setting::Custom) => {
                return Err(Error::InvalidConfig(
                    "only the brute-force setting runs without a stopping rule".into(),
                ))
            }
            _ => {}
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidConfig("network dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate used at 1-based `iteration`: the initial rate decayed once
/// per completed `lr_decay_every` block.
pub fn learning_rate_at<R: Real>(cfg: &TrainConfig<R>, iteration: usize) -> R {
    let decays = (iteration - 1) / cfg.lr_decay_every;
    cfg.initial_lr * cfg.lr_decay_factor.powi(decays as i32)
}

/// Terminal values of the rolled-forward value process plus the per-step
/// forward caches needed to push gradients back through the recursion.
pub struct RollOut<R: Real> {
    pub terminal_y: Vec<R>,
    pub caches: Vec<ForwardCache<R>>,
}

/// Rolls the value process across `paths`. `y0` enters every path, `z0`
/// drives step zero, and the network (in training mode, per-step batch
/// statistics) supplies the control at steps `1..n-1` from
/// `(X_i, T - t_i)`.
pub fn roll_forward<R: Real>(
    case: &MarketCase<R>,
    grid: &TimeGrid<R>,
    paths: &PathBatch<R>,
    net: &mut Network<R>,
) -> Result<RollOut<R>> {
    let n = grid.n_steps();
    let batch = paths.batch_size();
    assert_eq!(paths.n_steps(), n, "path batch does not match the grid");

    let growth = R::one() + case.rate() * grid.dt();
    let y0 = net.y0();
    let z0 = net.z0();

    let mut y: Vec<R> = (0..batch)
        .map(|p| y0 * growth + z0 * paths.increment(p, 0))
        .collect();

    let mut caches = Vec::with_capacity(n.saturating_sub(1));
    let mut inputs = vec![R::zero(); batch * 2];
    for i in 1..n {
        let ttm = grid.time_to_maturity(i);
        for p in 0..batch {
            inputs[2 * p] = paths.value(p, i);
            inputs[2 * p + 1] = ttm;
        }
        let (z, cache) = net.forward_train(i - 1, &inputs, batch)?;
        for p in 0..batch {
            y[p] = y[p] * growth + z[p] * paths.increment(p, i);
        }
        caches.push(cache);
    }

    Ok(RollOut {
        terminal_y: y,
        caches,
    })
}

/// Mean squared mismatch between the rolled-forward terminal values and the
/// bridge-weighted payoff of the terminal underlying values.
pub fn loss<R: Real>(terminal_y: &[R], case: &MarketCase<R>, terminal_x: &[R]) -> R {
    assert_eq!(terminal_y.len(), terminal_x.len(), "batch shapes disagree");
    let mut acc = R::zero();
    for (&y, &x) in terminal_y.iter().zip(terminal_x) {
        let d = y - modified_payoff(case, x);
        acc = acc + d * d;
    }
    acc / r64(terminal_y.len() as f64)
}

/// Training outcome. `price` is the trailing-window mean of `y0`, matching
/// the statistic behind the stopping rule.
#[derive(Clone, Debug, Serialize)]
#[serde(bound(serialize = "R: Serialize"))]
pub struct TrainResult<R: Real> {
    pub price: R,
    pub z0: R,
    pub iterations_run: usize,
    pub loss_history: Vec<R>,
    pub price_history: Vec<R>,
    pub converged: bool,
    pub wall_time_secs: f64,
}

impl<R: Real> TrainResult<R> {
    /// Writes the per-iteration history as `iteration,loss,y0,lr`.
    pub fn write_history_csv(&self, cfg: &TrainConfig<R>, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("iteration,loss,y0,lr\n");
        for i in 0..self.iterations_run {
            let lr = learning_rate_at(cfg, i + 1);
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                self.loss_history[i],
                self.price_history[i],
                lr
            ));
        }
        let mut file = std::fs::File::create(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn trailing_mean<R: Real>(values: &[R], window: usize) -> R {
    let take = window.min(values.len()).max(1);
    let slice = &values[values.len() - take..];
    let sum = slice.iter().fold(R::zero(), |acc, &v| acc + v);
    sum / r64(take as f64)
}

/// One evaluation of the training objective on a fixed path batch: rolls
/// the value process forward and pushes the exact gradient of the terminal
/// mean-squared mismatch back into every trainable parameter.
///
/// The chain rule through the recursion is closed-form: with
/// `g = 1 + r dt`, the terminal value responds to the step-`i` control with
/// factor `dW_i g^(n-1-i)`, to `y0` with `g^n` and to `z0` with
/// `dW_0 g^(n-1)`.
pub fn loss_and_gradients<R: Real>(
    case: &MarketCase<R>,
    grid: &TimeGrid<R>,
    paths: &PathBatch<R>,
    net: &mut Network<R>,
) -> Result<(R, NetworkGrads<R>)> {
    let n = grid.n_steps();
    let batch = paths.batch_size();
    let rollout = roll_forward(case, grid, paths, net)?;

    let growth = R::one() + case.rate() * grid.dt();
    let mut growth_pow = Vec::with_capacity(n + 1);
    let mut acc = R::one();
    for _ in 0..=n {
        growth_pow.push(acc);
        acc = acc * growth;
    }

    let inv_b = R::one() / r64(batch as f64);
    let mut residuals = Vec::with_capacity(batch);
    let mut loss_value = R::zero();
    for p in 0..batch {
        let res = rollout.terminal_y[p] - modified_payoff(case, paths.terminal(p));
        loss_value = loss_value + res * res;
        residuals.push(res);
    }
    loss_value = loss_value * inv_b;

    let mut grads = NetworkGrads::zeros_for(net);
    let scale = r64::<R>(2.0) * inv_b;
    let mut res_sum = R::zero();
    let mut res_dw0 = R::zero();
    for p in 0..batch {
        res_sum = res_sum + residuals[p];
        res_dw0 = res_dw0 + residuals[p] * paths.increment(p, 0);
    }
    grads.y0 = scale * res_sum * growth_pow[n];
    grads.z0 = scale * res_dw0 * growth_pow[n - 1];

    let mut upstream = vec![R::zero(); batch];
    for i in 1..n {
        let factor = scale * growth_pow[n - 1 - i];
        for p in 0..batch {
            upstream[p] = factor * residuals[p] * paths.increment(p, i);
        }
        net.backward(&rollout.caches[i - 1], &upstream, &mut grads);
    }

    Ok((loss_value, grads))
}

fn l2_norm<R: Real>(xs: &[R]) -> f64 {
    xs.iter().map(|&x| to_f64(x).powi(2)).sum::<f64>().sqrt()
}

/// Trains one case. Per iteration: fresh path batch (iteration-keyed seed),
/// roll forward, terminal loss, exact gradients through the unrolled
/// recursion into the trunk, the per-step batch-norm parameters, `y0` and
/// `z0`, then one Adam step under the decayed learning rate.
///
/// The stopping statistic is the trailing 50-iteration mean of `y0`,
/// evaluated every 50 iterations; the run stops early once the change
/// between consecutive evaluations falls below the threshold and the
/// minimum iteration count has been reached.
pub fn train<R: Real>(case: &MarketCase<R>, cfg: &TrainConfig<R>) -> Result<TrainResult<R>> {
    train_full(case, cfg).map(|(result, _)| result)
}

/// Like [`train`], additionally returning the trained network (for
/// checkpointing or inspection).
pub fn train_full<R: Real>(
    case: &MarketCase<R>,
    cfg: &TrainConfig<R>,
) -> Result<(TrainResult<R>, Network<R>)> {
    cfg.validate()?;
    let start = Instant::now();
    let grid = build_time_grid(case);
    let n = grid.n_steps();

    let spec = NetworkSpec {
        input_dim: 2,
        hidden_layers: cfg.hidden_layers,
        hidden_width: cfg.hidden_width,
        activation: Activation::Elu,
        bn_mode: cfg.bn_mode,
        n_time_steps: n.saturating_sub(1).max(1),
    };
    let y0_max = (case.spot() - case.strike()).max(R::zero()) + r64(2.0);
    let mut net = Network::init(spec, y0_max, derive_seed(cfg.seed, u64::MAX))?;
    let mut params = net.params_vec();
    let mut adam = AdamState::new(params.len(), cfg.initial_lr);

    let mut loss_history = Vec::with_capacity(cfg.max_iterations);
    let mut price_history = Vec::with_capacity(cfg.max_iterations);
    let mut prev_window: Option<R> = None;
    let mut converged = false;
    let mut iterations_run = 0;

    for iter in 1..=cfg.max_iterations {
        adam.learning_rate = learning_rate_at(cfg, iter);
        let paths = simulate_paths(case, &grid, cfg.batch_size, derive_seed(cfg.seed, iter as u64));
        let (loss_value, grads) = loss_and_gradients(case, &grid, &paths, &mut net)?;
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                loss: to_f64(loss_value),
                param_norm: l2_norm(&params),
                grad_norm: l2_norm(&grads.flatten()),
            });
        }

        let flat = grads.flatten();
        adam_step(&mut adam, &mut params, &flat);
        net.set_params(&params);

        loss_history.push(loss_value);
        price_history.push(net.y0());
        iterations_run = iter;

        if iter % STOP_WINDOW == 0 {
            let window = trailing_mean(&price_history, STOP_WINDOW);
            if let (Some(prev), Some(threshold)) = (prev_window, cfg.stop_threshold) {
                if iter >= cfg.min_iterations
                    && iter < cfg.max_iterations
                    && (window - prev).abs() < threshold
                {
                    converged = true;
                    break;
                }
            }
            prev_window = Some(window);
        }
    }

    let result = TrainResult {
        price: trailing_mean(&price_history, STOP_WINDOW),
        z0: net.z0(),
        iterations_run,
        loss_history,
        price_history,
        converged,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((result, net))
}
