//! Monte-Carlo oracles for the continuously-monitored up-and-out call.
//!
//! Two unbiased estimators of the same expectation:
//!
//! * terminal-bridge — sample `X_T` from its exact lognormal law and average
//!   the discounted bridge-weighted payoff;
//! * path-bridge — sample the whole path with exact lognormal increments and
//!   weight the plain call payoff by the product of per-step bridge survival
//!   probabilities (zero as soon as a grid point touches the barrier).
//!
//! The naive discrete crossing-indicator estimator is deliberately not
//! offered: it is biased high for continuous monitoring.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{PriceEstimate, PriceMethod};
use crate::bridge::{modified_payoff, survival_probability_up, BridgeQuery};
use crate::error::{Error, Result};
use crate::market::{MarketCase, TimeGrid};
use crate::rng::{derive_seed, path_rng, standard_normal};
use crate::scalar::{r64, to_f64, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum McEstimator {
    #[serde(rename = "terminal-bridge")]
    TerminalBridge,
    #[serde(rename = "path-bridge")]
    PathBridge,
}

/// Monte-Carlo run configuration. `substeps` refines the simulation grid of
/// the path estimator (both estimators are unbiased at any resolution, so
/// this only trades variance against cost).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub estimator: McEstimator,
    pub substeps: usize,
}

impl McConfig {
    pub fn terminal(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            estimator: McEstimator::TerminalBridge,
            substeps: 1,
        }
    }

    pub fn path(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            estimator: McEstimator::PathBridge,
            substeps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1 {
            return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
        }
        if self.substeps < 1 {
            return Err(Error::InvalidConfig("substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean and standard error of discounted payoffs. Accumulation is in f64;
/// the per-payoff order is fixed, so results are bit-identical for a fixed
/// seed regardless of thread count.
fn summarize<R: Real>(payoffs: &[f64], method: PriceMethod, cfg: &McConfig) -> PriceEstimate<R> {
    let n = payoffs.len() as f64;
    let mean = payoffs.iter().sum::<f64>() / n;
    let se = if payoffs.len() > 1 {
        let var = payoffs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    PriceEstimate {
        value: r64(mean),
        method,
        std_error: r64(se),
        diagnostics: Default::default(),
    }
    .with_diag("paths", payoffs.len())
    .with_diag("seed", cfg.seed)
}

/// Averages the discounted bridge-weighted payoff over exact terminal
/// samples.
pub fn price_terminal_bridge<R: Real>(case: &MarketCase<R>, cfg: &McConfig) -> PriceEstimate<R> {
    cfg.validate().expect("valid Monte-Carlo configuration");
    let discount = to_f64(case.discount());

    let mut payoffs = vec![0.0f64; cfg.n_paths];
    payoffs.par_iter_mut().enumerate().for_each(|(p, slot)| {
        let mut rng = path_rng(cfg.seed, p as u64);
        let z = standard_normal::<R>(&mut rng);
        let half = r64::<R>(0.5);
        let log_drift =
            (case.drift() - half * case.volatility() * case.volatility()) * case.maturity();
        let terminal = case.spot() * (log_drift + case.volatility() * case.maturity().sqrt() * z).exp();
        *slot = discount * to_f64(modified_payoff(case, terminal));
    });

    summarize(&payoffs, PriceMethod::McTerminal, cfg)
}

/// Simulates full paths with exact lognormal increments on `grid` (refined
/// by `cfg.substeps`) and weights each plain call payoff by the product of
/// per-step survival probabilities.
pub fn price_path_bridge<R: Real>(
    case: &MarketCase<R>,
    grid: &TimeGrid<R>,
    cfg: &McConfig,
) -> PriceEstimate<R> {
    cfg.validate().expect("valid Monte-Carlo configuration");
    let total_steps = grid.n_steps() * cfg.substeps;
    let dt = case.maturity() / r64::<R>(total_steps as f64);
    let half = r64::<R>(0.5);
    let log_drift = (case.drift() - half * case.volatility() * case.volatility()) * dt;
    let sig_sqrt_dt = case.volatility() * dt.sqrt();
    let step_variance = case.volatility() * case.volatility() * dt;
    let barrier = case.barrier();
    let discount = to_f64(case.discount());

    let mut payoffs = vec![0.0f64; cfg.n_paths];
    payoffs.par_iter_mut().enumerate().for_each(|(p, slot)| {
        let mut rng = path_rng(cfg.seed, p as u64);
        let mut x = case.spot();
        let mut weight = R::one();
        for _ in 0..total_steps {
            let z = standard_normal::<R>(&mut rng);
            let next = x * (log_drift + sig_sqrt_dt * z).exp();
            let q = BridgeQuery::new_unchecked(x, next, barrier, step_variance);
            weight = weight * survival_probability_up(&q);
            if weight == R::zero() {
                break;
            }
            x = next;
        }
        if weight > R::zero() {
            let payoff = (x - case.strike()).max(R::zero()) * weight;
            *slot = discount * to_f64(payoff);
        }
    });

    summarize(&payoffs, PriceMethod::McPath, cfg).with_diag("substeps", cfg.substeps)
}

/// Dispatches on `cfg.estimator`.
pub fn price<R: Real>(
    case: &MarketCase<R>,
    grid: &TimeGrid<R>,
    cfg: &McConfig,
) -> PriceEstimate<R> {
    match cfg.estimator {
        McEstimator::TerminalBridge => price_terminal_bridge(case, cfg),
        McEstimator::PathBridge => price_path_bridge(case, grid, cfg),
    }
}

/// Outcome of the conditional-expectation identity check
/// `E[f(X) | A] P(A) = E[f(X) P(A | X)]` on a synthetic discrete model.
#[derive(Clone, Debug, Serialize)]
pub struct Lemma2Report {
    pub exact_lhs: f64,
    pub exact_rhs: f64,
    pub sim_lhs: f64,
    pub sim_rhs: f64,
    pub se_lhs: f64,
    pub se_rhs: f64,
    pub exact_sides_equal: bool,
    pub simulation_consistent: bool,
}

impl Lemma2Report {
    pub fn passed(&self) -> bool {
        self.exact_sides_equal && self.simulation_consistent
    }
}

/// Both sides by exhaustive enumeration over X in {1..6}.
fn enumerate_sides(f: impl Fn(u32) -> f64, p_a_given: impl Fn(u32) -> f64) -> (f64, f64) {
    let p_x = 1.0 / 6.0;
    let p_a: f64 = (1..=6).map(|k| p_x * p_a_given(k)).sum();
    let lhs = if p_a > 0.0 {
        let e_f_given_a: f64 =
            (1..=6).map(|k| f(k) * p_x * p_a_given(k) / p_a).sum();
        e_f_given_a * p_a
    } else {
        0.0
    };
    let rhs: f64 = (1..=6).map(|k| p_x * f(k) * p_a_given(k)).sum();
    (lhs, rhs)
}

/// Runs the identity on the model `X ~ U{1..6}`, `P(A | X = k) = k / 10`,
/// `f(k) = k^2`: enumeration must give 7.35 on both sides, simulation must
/// land within 4 SE of it on both sides.
pub fn lemma2_property_check(sample_size: usize, seed: u64) -> Lemma2Report {
    assert!(sample_size >= 10_000, "sample_size must be at least 1e4");
    let f = |k: u32| (k * k) as f64;
    let p_a_given = |k: u32| k as f64 / 10.0;

    let (exact_lhs, exact_rhs) = enumerate_sides(f, p_a_given);

    // One sample: draw X, flip the coin. The empirical left side
    // mean(f 1_A) factors exactly into mean(f | A) * frac(A).
    let mut lhs_terms = vec![0.0f64; sample_size];
    let mut rhs_terms = vec![0.0f64; sample_size];
    lhs_terms
        .par_iter_mut()
        .zip(rhs_terms.par_iter_mut())
        .enumerate()
        .for_each(|(i, (lhs, rhs))| {
            let mut rng = path_rng(derive_seed(seed, 0xA), i as u64);
            let k = rng.gen_range(1..=6u32);
            let heads = rng.gen::<f64>() < p_a_given(k);
            *lhs = if heads { f(k) } else { 0.0 };
            *rhs = f(k) * p_a_given(k);
        });

    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let (sim_lhs, se_lhs) = stats(&lhs_terms);
    let (sim_rhs, se_rhs) = stats(&rhs_terms);

    Lemma2Report {
        exact_lhs,
        exact_rhs,
        sim_lhs,
        sim_rhs,
        se_lhs,
        se_rhs,
        exact_sides_equal: (exact_lhs - exact_rhs).abs() <= 1e-14 * exact_rhs.abs().max(1.0),
        simulation_consistent: (sim_lhs - exact_lhs).abs() <= 4.0 * se_lhs
            && (sim_rhs - exact_rhs).abs() <= 4.0 * se_rhs,
    }
}
