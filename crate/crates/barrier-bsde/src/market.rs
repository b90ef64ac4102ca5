//! Market data, the variance-based time grid, and forward-process simulation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{path_rng, standard_normal};
use crate::scalar::{r64, to_f64, Real};

/// Grid-rule floor on the number of time steps.
pub const MIN_TIME_STEPS: usize = 80;
/// Grid rule: one step per this much total variance.
pub const VARIANCE_PER_STEP: f64 = 0.025;

/// One up-and-out call pricing problem under constant coefficients.
///
/// `drift` is the drift of the underlying process and `rate` the discount
/// rate; they are independent inputs. A barrier at or below the strike is
/// accepted and prices to exactly zero, as does a spot at or above the
/// barrier (immediate knock-out).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound(serialize = "R: Serialize"))]
pub struct MarketCase<R: Real> {
    spot: R,
    strike: R,
    barrier: R,
    maturity: R,
    rate: R,
    drift: R,
    volatility: R,
}

impl<R: Real> MarketCase<R> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        spot: R,
        strike: R,
        barrier: R,
        maturity: R,
        rate: R,
        drift: R,
        volatility: R,
    ) -> Result<Self> {
        let positive = [
            ("spot", spot),
            ("strike", strike),
            ("barrier", barrier),
            ("maturity", maturity),
            ("volatility", volatility),
        ];
        for (name, value) in positive {
            if !(value > R::zero()) || !value.is_finite() {
                return Err(Error::InvalidCase(format!(
                    "{name} must be strictly positive and finite, got {value}"
                )));
            }
        }
        for (name, value) in [("rate", rate), ("drift", drift)] {
            if !value.is_finite() {
                return Err(Error::InvalidCase(format!("{name} must be finite")));
            }
        }
        Ok(Self {
            spot,
            strike,
            barrier,
            maturity,
            rate,
            drift,
            volatility,
        })
    }

    pub fn spot(&self) -> R {
        self.spot
    }
    pub fn strike(&self) -> R {
        self.strike
    }
    pub fn barrier(&self) -> R {
        self.barrier
    }
    pub fn maturity(&self) -> R {
        self.maturity
    }
    pub fn rate(&self) -> R {
        self.rate
    }
    pub fn drift(&self) -> R {
        self.drift
    }
    pub fn volatility(&self) -> R {
        self.volatility
    }

    /// Discount factor over the full horizon, `exp(-r T)`.
    pub fn discount(&self) -> R {
        (-self.rate * self.maturity).exp()
    }

    /// Total variance `sigma^2 T` driving the grid rule.
    pub fn total_variance(&self) -> R {
        self.volatility * self.volatility * self.maturity
    }
}

/// Mirror struct so deserialization runs the same validation as `new`.
#[derive(Deserialize)]
struct MarketCaseRaw<R> {
    spot: R,
    strike: R,
    barrier: R,
    maturity: R,
    rate: R,
    drift: R,
    volatility: R,
}

impl<'de, R: Real + Deserialize<'de>> Deserialize<'de> for MarketCase<R> {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let raw = MarketCaseRaw::<R>::deserialize(deserializer)?;
        MarketCase::new(
            raw.spot,
            raw.strike,
            raw.barrier,
            raw.maturity,
            raw.rate,
            raw.drift,
            raw.volatility,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Uniform discretization of `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(bound(serialize = "R: Serialize"))]
pub struct TimeGrid<R: Real> {
    n_steps: usize,
    dt: R,
    maturity: R,
}

impl<R: Real> TimeGrid<R> {
    /// Uniform grid with an explicit step count. Pricing flows normally go
    /// through [`build_time_grid`]; this exists for tiny diagnostic setups.
    pub fn with_steps(maturity: R, n_steps: usize) -> Self {
        assert!(n_steps >= 1, "a grid needs at least one step");
        Self {
            n_steps,
            dt: maturity / r64(n_steps as f64),
            maturity,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> R {
        self.dt
    }

    pub fn maturity(&self) -> R {
        self.maturity
    }

    /// `t_i = i * dt`, with the final node pinned to `T` exactly.
    pub fn time(&self, i: usize) -> R {
        debug_assert!(i <= self.n_steps);
        if i == self.n_steps {
            self.maturity
        } else {
            self.dt * r64(i as f64)
        }
    }

    /// Time to maturity at node `i`.
    pub fn time_to_maturity(&self, i: usize) -> R {
        self.maturity - self.time(i)
    }
}

/// Number of time steps from the variance rule
/// `max(80, ceil(sigma^2 T / 0.025))`.
///
/// The quotient is nudged by one part in 1e9 before the ceiling so that a
/// quotient that is mathematically an integer is not bumped up by float
/// noise.
pub fn build_time_grid<R: Real>(case: &MarketCase<R>) -> TimeGrid<R> {
    let quotient = to_f64(case.total_variance()) / VARIANCE_PER_STEP;
    let from_variance = (quotient - 1e-9).ceil() as usize;
    let n_steps = from_variance.max(MIN_TIME_STEPS);
    TimeGrid {
        n_steps,
        dt: case.maturity() / r64(n_steps as f64),
        maturity: case.maturity(),
    }
}

/// One multiplicative Euler step:
/// `x + drift * x * dt + vol * x * dw`.
#[inline]
pub fn euler_step<R: Real>(x: R, drift: R, vol: R, dt: R, dw: R) -> R {
    x + drift * x * dt + vol * x * dw
}

/// A batch of simulated forward paths together with the Brownian increments
/// that produced them. Row-major: path-by-path.
#[derive(Clone, Debug)]
pub struct PathBatch<R: Real> {
    batch_size: usize,
    n_steps: usize,
    /// `batch_size * (n_steps + 1)` values, `X_0 .. X_T` per path.
    values: Vec<R>,
    /// `batch_size * n_steps` increments `dW_i` per path.
    increments: Vec<R>,
    seed: u64,
}

impl<R: Real> PathBatch<R> {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Underlying value of path `p` at node `i`.
    #[inline]
    pub fn value(&self, p: usize, i: usize) -> R {
        self.values[p * (self.n_steps + 1) + i]
    }

    /// Brownian increment of path `p` over step `i`.
    #[inline]
    pub fn increment(&self, p: usize, i: usize) -> R {
        self.increments[p * self.n_steps + i]
    }

    pub fn terminal(&self, p: usize) -> R {
        self.value(p, self.n_steps)
    }

    pub fn path(&self, p: usize) -> &[R] {
        &self.values[p * (self.n_steps + 1)..(p + 1) * (self.n_steps + 1)]
    }
}

/// Simulates `batch_size` Euler paths of the underlying on `grid`.
///
/// Each path draws from its own RNG stream keyed by (`seed`, path index),
/// so the batch is bit-identical for a fixed seed regardless of thread
/// count. Values are free to go negative at extreme draws; downstream
/// payoffs neutralize such paths.
pub fn simulate_paths<R: Real>(
    case: &MarketCase<R>,
    grid: &TimeGrid<R>,
    batch_size: usize,
    seed: u64,
) -> PathBatch<R> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let n = grid.n_steps();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let drift = case.drift();
    let vol = case.volatility();
    let spot = case.spot();

    let mut values = vec![R::zero(); batch_size * (n + 1)];
    let mut increments = vec![R::zero(); batch_size * n];

    values
        .par_chunks_mut(n + 1)
        .zip(increments.par_chunks_mut(n))
        .enumerate()
        .for_each(|(p, (vals, incs))| {
            let mut rng = path_rng(seed, p as u64);
            let mut x = spot;
            vals[0] = x;
            for i in 0..n {
                let dw = standard_normal::<R>(&mut rng) * sqrt_dt;
                incs[i] = dw;
                x = euler_step(x, drift, vol, dt, dw);
                vals[i + 1] = x;
            }
        });

    PathBatch {
        batch_size,
        n_steps: n,
        values,
        increments,
        seed,
    }
}

/// Draws terminal values from the exact lognormal law
/// `X_T = spot * exp((b - sigma^2/2) T + sigma sqrt(T) z)`.
pub fn sample_terminal_exact<R: Real>(
    case: &MarketCase<R>,
    batch_size: usize,
    seed: u64,
) -> Vec<R> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let half = r64::<R>(0.5);
    let log_drift =
        (case.drift() - half * case.volatility() * case.volatility()) * case.maturity();
    let sig_sqrt_t = case.volatility() * case.maturity().sqrt();
    let spot = case.spot();

    let mut out = vec![R::zero(); batch_size];
    out.par_iter_mut().enumerate().for_each(|(p, slot)| {
        let mut rng = path_rng(seed, p as u64);
        let z = standard_normal::<R>(&mut rng);
        *slot = spot * (log_drift + sig_sqrt_t * z).exp();
    });
    out
}
