//! Brownian-bridge crossing probability and the bridge-weighted terminal
//! payoff that folds the barrier condition into a vanilla-style payoff.
//!
//! For a geometric Brownian motion observed at two endpoints, the
//! probability that the path stays below a level in between is
//! `1 - xi(level)` with
//! `xi(y) = exp(-2 ln(y/X_t) ln(y/X_{t+dt}) / (sigma^2 dt))`.
//! Weighting the capped call payoff by that survival probability over the
//! full horizon gives a terminal condition whose plain expectation equals
//! the continuously-monitored knock-out price.

use crate::error::{Error, Result};
use crate::market::MarketCase;
use crate::scalar::{r64, Real};

/// Endpoints, level and variance budget for one bridge segment.
///
/// `variance` is `sigma^2 * dt` for the segment.
#[derive(Clone, Copy, Debug)]
pub struct BridgeQuery<R: Real> {
    left: R,
    right: R,
    level: R,
    variance: R,
}

impl<R: Real> BridgeQuery<R> {
    pub fn new(left: R, right: R, level: R, variance: R) -> Result<Self> {
        for (name, v) in [
            ("left", left),
            ("right", right),
            ("level", level),
            ("variance", variance),
        ] {
            if !(v > R::zero()) || !v.is_finite() {
                return Err(Error::Domain(format!(
                    "bridge query field {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(Self {
            left,
            right,
            level,
            variance,
        })
    }

    /// Hot-path constructor for callers that already guarantee positivity.
    #[inline]
    pub(crate) fn new_unchecked(left: R, right: R, level: R, variance: R) -> Self {
        debug_assert!(left > R::zero() && right > R::zero());
        debug_assert!(level > R::zero() && variance > R::zero());
        Self {
            left,
            right,
            level,
            variance,
        }
    }

    pub fn left(&self) -> R {
        self.left
    }
    pub fn right(&self) -> R {
        self.right
    }
    pub fn level(&self) -> R {
        self.level
    }
    pub fn variance(&self) -> R {
        self.variance
    }
}

/// The raw crossing factor `xi(level)`, evaluated exactly as written; no
/// clamping happens at this layer.
#[inline]
pub fn bridge_crossing_factor<R: Real>(q: &BridgeQuery<R>) -> R {
    let two = r64::<R>(2.0);
    let u = (q.level / q.left).ln();
    let v = (q.level / q.right).ln();
    (-(two * u * v) / q.variance).exp()
}

#[inline]
fn clamp01<R: Real>(x: R) -> R {
    x.max(R::zero()).min(R::one())
}

/// Probability that the bridge stays strictly below `level`.
///
/// Zero as soon as either endpoint sits at or above the level; otherwise
/// `1 - xi(level)` clamped into `[0, 1]`.
#[inline]
pub fn survival_probability_up<R: Real>(q: &BridgeQuery<R>) -> R {
    if q.left >= q.level || q.right >= q.level {
        R::zero()
    } else {
        clamp01(R::one() - bridge_crossing_factor(q))
    }
}

/// Mirrored helper: probability that the bridge stays strictly above
/// `level`. Not used by any pricer here (only up-and-out contracts are
/// priced); kept for coverage of the two-sided identity.
#[inline]
pub fn survival_probability_down<R: Real>(q: &BridgeQuery<R>) -> R {
    if q.left <= q.level || q.right <= q.level {
        R::zero()
    } else {
        clamp01(R::one() - bridge_crossing_factor(q))
    }
}

/// Bridge-weighted terminal payoff for pricing at time zero:
/// `(x - K)^+ 1{x < B}` times the survival probability of the full-horizon
/// bridge anchored at the spot.
///
/// Nonpositive terminal values (possible for raw Euler paths) return zero:
/// such a path cannot finish inside `(K, B)`.
pub fn modified_payoff<R: Real>(case: &MarketCase<R>, terminal: R) -> R {
    let spot = case.spot();
    let strike = case.strike();
    let barrier = case.barrier();
    if spot >= barrier {
        // Knocked out before the first step.
        return R::zero();
    }
    if terminal <= strike || terminal >= barrier {
        return R::zero();
    }
    let q = BridgeQuery::new_unchecked(spot, terminal, barrier, case.total_variance());
    (terminal - strike) * survival_probability_up(&q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketCase;
    use proptest::prelude::*;
    use rand::Rng;
    use rayon::prelude::*;

    fn q(left: f64, right: f64, level: f64, variance: f64) -> BridgeQuery<f64> {
        BridgeQuery::new(left, right, level, variance).unwrap()
    }

    /// Independent oracle: fraction of finely discretized bridge paths from
    /// `left` to `right` over `dt` whose maximum reaches `level`. The log
    /// path is sampled sequentially from the conditional normal law given
    /// the endpoint, so no formula under test is involved.
    fn crossing_fraction_mc(
        left: f64,
        right: f64,
        level: f64,
        sigma: f64,
        dt: f64,
        substeps: usize,
        n_paths: usize,
        seed: u64,
    ) -> (f64, f64) {
        let a = left.ln();
        let b = right.ln();
        let log_level = level.ln();
        let delta = dt / substeps as f64;

        let crossings: u64 = (0..n_paths)
            .into_par_iter()
            .map(|p| {
                let mut rng = crate::rng::path_rng(seed, p as u64);
                let mut v = a;
                let mut hit = v >= log_level || b >= log_level;
                for j in 0..substeps - 1 {
                    let remaining = dt - delta * j as f64;
                    let mean = v + (b - v) * delta / remaining;
                    let var = sigma * sigma * delta * (remaining - delta) / remaining;
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    v = mean + var.sqrt() * z;
                    if v >= log_level {
                        hit = true;
                        break;
                    }
                }
                u64::from(hit)
            })
            .sum();

        let frac = crossings as f64 / n_paths as f64;
        let se = (frac * (1.0 - frac) / n_paths as f64).sqrt();
        (frac, se)
    }

    // Crossing fraction of 1e6 bridge paths from 20 to 25 (level 40,
    // sigma = 0.4, dt = 0.5) discretized with 1e4 substeps, produced by
    // `regenerate_crossing_oracle` below. The closed form gives 2.9075e-4;
    // the tiny shortfall is the discrete-monitoring bias at 1e4 substeps.
    const FROZEN_CROSSING_FRACTION: f64 = 2.74e-4;
    const FROZEN_CROSSING_SE: f64 = 1.655e-5;

    /// Full-strength oracle run; takes about a minute. Run with
    /// `cargo test -p barrier-bsde regenerate_crossing_oracle -- --ignored --nocapture`
    /// and paste the printed values into the two constants above.
    #[test]
    #[ignore = "expensive oracle regeneration"]
    fn regenerate_crossing_oracle() {
        let (frac, se) = crossing_fraction_mc(20.0, 25.0, 40.0, 0.4, 0.5, 10_000, 1_000_000, 424242);
        println!("crossing fraction = {frac:e}, se = {se:e}");
    }

    #[test]
    fn crossing_factor_trivial_geometry() {
        // Left endpoint on the level: exponent vanishes.
        assert_eq!(bridge_crossing_factor(&q(40.0, 25.0, 40.0, 0.08)), 1.0);
        // Level far above both endpoints: factor collapses to zero.
        assert!(bridge_crossing_factor(&q(20.0, 25.0, 1e9, 0.08)) < 1e-300);
    }

    #[test]
    fn crossing_factor_matches_fine_grid_bridge_mc() {
        let xi = bridge_crossing_factor(&q(20.0, 25.0, 40.0, 0.4 * 0.4 * 0.5));
        // Direct evaluation: exp(-2 ln2 ln1.6 / 0.08) ~ 2.9e-4.
        let direct = (-2.0 * 2.0f64.ln() * 1.6f64.ln() / 0.08).exp();
        assert!((xi - direct).abs() < 1e-18, "xi = {xi:e}");
        assert!((xi - 2.90316e-4).abs() < 1e-9, "xi = {xi:e}");
        assert!(
            (xi - FROZEN_CROSSING_FRACTION).abs() <= 4.0 * FROZEN_CROSSING_SE,
            "xi = {xi:e} vs mc {FROZEN_CROSSING_FRACTION:e}"
        );
    }

    #[test]
    fn survival_examples() {
        // Either endpoint at or beyond the barrier kills the segment.
        assert_eq!(survival_probability_up(&q(40.0, 25.0, 40.0, 0.08)), 0.0);
        assert_eq!(survival_probability_up(&q(20.0, 45.0, 40.0, 0.08)), 0.0);
        // A barrier far above everything is never touched.
        assert_eq!(survival_probability_up(&q(20.0, 25.0, 1e9, 0.08)), 1.0);
        // Pinned case: survival complements the frozen crossing fraction.
        let s = survival_probability_up(&q(20.0, 25.0, 40.0, 0.08));
        assert!(
            ((1.0 - s) - FROZEN_CROSSING_FRACTION).abs() <= 4.0 * FROZEN_CROSSING_SE,
            "1 - s = {:e}",
            1.0 - s
        );
    }

    #[test]
    fn survival_matches_simulation_on_random_tuples() {
        // >= 20 random geometries, each checked against the fine-grid
        // bridge oracle within 4 SE. A tuple qualifies when the oracle can
        // actually resolve it at this resolution: the crossing probability
        // must be large enough for the binomial error bar to mean
        // something, and the discrete-monitoring shift (the barrier
        // continuity correction, beta ~ 0.5826) must sit well inside that
        // error bar.
        let substeps = 16_384usize;
        let n_paths = 4_000usize;
        let mut rng = crate::rng::path_rng(99, 0);
        let mut checked = 0;
        let mut attempt = 0;
        while checked < 20 {
            attempt += 1;
            assert!(attempt < 4000, "tuple sampling exhausted");
            let left = 15.0 + 20.0 * rng.gen::<f64>();
            let right = 15.0 + 20.0 * rng.gen::<f64>();
            let sigma = 0.3 + 0.7 * rng.gen::<f64>();
            let dt = 0.1 + 0.9 * rng.gen::<f64>();
            let level = left.max(right) * (1.1 + 0.7 * rng.gen::<f64>());
            let variance = sigma * sigma * dt;
            let query = q(left, right, level, variance);
            let p_cross = bridge_crossing_factor(&query);
            if !(0.02..=0.3).contains(&p_cross) {
                continue;
            }
            let log_sum = (level / left).ln() + (level / right).ln();
            let shift = p_cross
                * (2.0 * log_sum / variance)
                * 0.5826
                * sigma
                * (dt / substeps as f64).sqrt();
            let se_predicted = (p_cross * (1.0 - p_cross) / n_paths as f64).sqrt();
            if shift > 0.7 * se_predicted {
                continue;
            }
            checked += 1;
            let (frac, se) = crossing_fraction_mc(
                left,
                right,
                level,
                sigma,
                dt,
                substeps,
                n_paths,
                1_000 + checked as u64,
            );
            let survival = survival_probability_up(&query);
            assert!(
                ((1.0 - survival) - frac).abs() <= 4.0 * se.max(se_predicted),
                "tuple {checked}: left {left:.3} right {right:.3} level {level:.3} \
                 sigma {sigma:.3} dt {dt:.3}: xi {p_cross:.5} vs mc {frac:.5} (se {se:.2e})"
            );
        }
    }

    #[test]
    fn down_level_mirror_identity() {
        // Staying above a low level is the reciprocal geometry of staying
        // below a high one.
        let cases = [
            (20.0, 25.0, 12.0, 0.08),
            (30.0, 18.0, 15.0, 0.3),
            (22.0, 22.0, 10.0, 0.5),
        ];
        for (l, r, y, w) in cases {
            let down = survival_probability_down(&q(l, r, y, w));
            let up = survival_probability_up(&q(1.0 / l, 1.0 / r, 1.0 / y, w));
            assert!((down - up).abs() < 1e-14, "{down} vs {up}");
        }
        assert_eq!(survival_probability_down(&q(10.0, 25.0, 10.0, 0.08)), 0.0);
        assert_eq!(survival_probability_down(&q(9.0, 25.0, 10.0, 0.08)), 0.0);
    }

    fn paper_case(spot: f64) -> MarketCase<f64> {
        MarketCase::new(spot, 23.0, 40.0, 0.5, 0.0, 0.0, 0.4).unwrap()
    }

    #[test]
    fn modified_payoff_examples() {
        let case = paper_case(22.0);
        // Inside the corridor: strictly between 0 and intrinsic.
        let h = modified_payoff(&case, 30.0);
        assert!(h > 0.0 && h < 7.0, "h = {h}");
        // Direct evaluation of the weighted payoff.
        let expect = 7.0 * (1.0 - (-2.0 * (40.0f64 / 22.0).ln() * (40.0f64 / 30.0).ln() / 0.08).exp());
        assert!((h - expect).abs() < 1e-12);

        // Beyond the barrier the indicator wins.
        assert_eq!(modified_payoff(&case, 45.0), 0.0);
        assert_eq!(modified_payoff(&case, 40.0), 0.0);
        // Below the strike, and for junk Euler terminals.
        assert_eq!(modified_payoff(&case, 20.0), 0.0);
        assert_eq!(modified_payoff(&case, -3.0), 0.0);
        assert_eq!(modified_payoff(&case, 0.0), 0.0);

        // Spot at or above the barrier: knocked out immediately.
        let knocked = MarketCase::new(41.0, 23.0, 40.0, 0.5, 0.0, 0.0, 0.4).unwrap();
        assert_eq!(modified_payoff(&knocked, 30.0), 0.0);
    }

    #[test]
    fn modified_payoff_vanishes_approaching_barrier() {
        let case = paper_case(22.0);
        let mut prev = modified_payoff(&case, 39.0);
        for &x in &[39.9, 39.99, 39.999, 39.999999] {
            let h = modified_payoff(&case, x);
            assert!(h < prev, "payoff should shrink toward the barrier");
            prev = h;
        }
        assert!(modified_payoff(&case, 40.0 - 1e-9) < 1e-6);
    }

    proptest! {
        #[test]
        fn crossing_factor_symmetric_in_endpoints(
            left in 1.0f64..100.0,
            right in 1.0f64..100.0,
            level in 1.0f64..200.0,
            variance in 1e-4f64..5.0,
        ) {
            let a = bridge_crossing_factor(&q(left, right, level, variance));
            let b = bridge_crossing_factor(&q(right, left, level, variance));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn modified_payoff_bounded_by_intrinsic(
            spot in 1.0f64..60.0,
            strike in 1.0f64..60.0,
            barrier in 1.0f64..120.0,
            maturity in 0.05f64..3.0,
            vol in 0.05f64..1.5,
            terminal in -10.0f64..150.0,
        ) {
            let case = MarketCase::new(spot, strike, barrier, maturity, 0.0, 0.0, vol).unwrap();
            let h = modified_payoff(&case, terminal);
            let intrinsic = (terminal - strike).max(0.0);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= intrinsic + 1e-12);
        }
    }
}
