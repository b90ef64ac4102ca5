//! Closed-form benchmark prices.
//!
//! `up_out_call` integrates the capped call payoff against the joint law of
//! the running maximum and the terminal value of the driftful log-process,
//! using the reflection identity: the defective terminal density below a
//! log-level `c` is the free density minus `exp(2 nu c / sigma^2)` times
//! the density reflected through `2c`. The same expectation evaluated by
//! direct quadrature of the bridge-weighted payoff (`up_out_call_quadrature`)
//! serves as an independent route; the two must agree to 1e-6 relative.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bridge::{survival_probability_up, BridgeQuery};
use crate::market::MarketCase;
use crate::math::{integrate_adaptive, normal_cdf, normal_pdf};
use crate::scalar::{r64, to_f64, Real};

/// How a price was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriceMethod {
    #[serde(rename = "analytic")]
    Analytic,
    #[serde(rename = "mc-terminal")]
    McTerminal,
    #[serde(rename = "mc-path")]
    McPath,
    #[serde(rename = "bsde")]
    Bsde,
}

/// A price with its provenance, statistical error (zero for deterministic
/// methods) and free-form diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(
    serialize = "R: Serialize",
    deserialize = "R: serde::de::DeserializeOwned"
))]
pub struct PriceEstimate<R: Real = f64> {
    pub value: R,
    pub method: PriceMethod,
    pub std_error: R,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
}

impl<R: Real> PriceEstimate<R> {
    pub fn analytic(value: R) -> Self {
        Self {
            value: value.max(R::zero()),
            method: PriceMethod::Analytic,
            std_error: R::zero(),
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn with_diag(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.diagnostics.insert(key.to_string(), value.into());
        self
    }
}

/// Black-Scholes-style vanilla call under process drift `b` and discount
/// rate `r`: `exp(-rT) E[(X_T - K)^+]`.
pub fn bs_vanilla_call<R: Real>(case: &MarketCase<R>) -> PriceEstimate<R> {
    PriceEstimate::analytic(vanilla_value(case)).with_diag("formula", "lognormal-expectation")
}

fn vanilla_value<R: Real>(case: &MarketCase<R>) -> R {
    let half = r64::<R>(0.5);
    let t = case.maturity();
    let s = case.volatility() * t.sqrt();
    let forward = case.spot() * (case.drift() * t).exp();
    let d1 = ((case.spot() / case.strike()).ln()
        + (case.drift() + half * case.volatility() * case.volatility()) * t)
        / s;
    let d2 = d1 - s;
    case.discount() * (forward * normal_cdf(d1) - case.strike() * normal_cdf(d2))
}

/// Continuously-monitored up-and-out call in closed form.
///
/// Returns zero when the payoff region is empty (`B <= K`) or the spot has
/// already knocked out (`x0 >= B`).
pub fn up_out_call<R: Real>(case: &MarketCase<R>) -> PriceEstimate<R> {
    PriceEstimate::analytic(up_out_value(case)).with_diag("route", "reflection")
}

fn up_out_value<R: Real>(case: &MarketCase<R>) -> R {
    if case.barrier() <= case.strike() || case.spot() >= case.barrier() {
        return R::zero();
    }
    let half = r64::<R>(0.5);
    let two = r64::<R>(2.0);
    let t = case.maturity();
    let sigma = case.volatility();
    let s = sigma * t.sqrt();
    let nu = case.drift() - half * sigma * sigma;
    let m = nu * t;
    let growth = (case.drift() * t).exp();
    let strike = case.strike();

    let lo = (strike / case.spot()).ln();
    let hi = (case.barrier() / case.spot()).ln();

    // Integral of (x_eff e^l - K) against the N(m, s^2) log-density over
    // [lo - shift, hi - shift] after substituting the reflected argument.
    let segment = |x_eff: R, shift: R| {
        let d = |u: R| (u - shift - m) / s;
        x_eff * growth * (normal_cdf(d(hi) - s) - normal_cdf(d(lo) - s))
            - strike * (normal_cdf(d(hi)) - normal_cdf(d(lo)))
    };

    let direct = segment(case.spot(), R::zero());
    let image = segment(
        case.barrier() * case.barrier() / case.spot(),
        two * hi,
    );
    let reflected = if image == R::zero() {
        // Far-barrier regime: the image mass underflows; skip the weight,
        // which may itself overflow for large positive drift.
        R::zero()
    } else {
        (two * nu * hi / (sigma * sigma)).exp() * image
    };
    case.discount() * (direct - reflected)
}

/// The same price by 1-D adaptive quadrature of the bridge-weighted payoff
/// against the lognormal terminal density over `(K, B)`. Double-precision
/// internally regardless of `R`.
pub fn up_out_call_quadrature<R: Real>(case: &MarketCase<R>) -> PriceEstimate<R> {
    let c = case.cast::<f64>();
    if c.barrier() <= c.strike() || c.spot() >= c.barrier() {
        return PriceEstimate::analytic(R::zero()).with_diag("route", "quadrature");
    }
    let t = c.maturity();
    let s = c.volatility() * t.sqrt();
    let m = (c.drift() - 0.5 * c.volatility() * c.volatility()) * t;
    let total_var = c.total_variance();

    let integrand = |z: f64| {
        if z <= c.strike() || z >= c.barrier() {
            return 0.0;
        }
        let q = BridgeQuery::new_unchecked(c.spot(), z, c.barrier(), total_var);
        let density = normal_pdf(((z / c.spot()).ln() - m) / s) / (z * s);
        (z - c.strike()) * survival_probability_up(&q) * density
    };

    let scale = 1.0 + vanilla_value(&c);
    let integral = integrate_adaptive(&integrand, c.strike(), c.barrier(), 1e-11 * scale);
    PriceEstimate::analytic(r64(c.discount() * integral)).with_diag("route", "quadrature")
}

impl<R: Real> MarketCase<R> {
    /// Re-types the case, e.g. `f32 -> f64` for double-precision internals.
    pub fn cast<S: Real>(&self) -> MarketCase<S> {
        MarketCase::new(
            r64(to_f64(self.spot())),
            r64(to_f64(self.strike())),
            r64(to_f64(self.barrier())),
            r64(to_f64(self.maturity())),
            r64(to_f64(self.rate())),
            r64(to_f64(self.drift())),
            r64(to_f64(self.volatility())),
        )
        .expect("validated case re-types losslessly")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn case(spot: f64, strike: f64, barrier: f64, t: f64, vol: f64) -> MarketCase<f64> {
        MarketCase::new(spot, strike, barrier, t, 0.0, 0.0, vol).unwrap()
    }

    #[test]
    fn vanilla_deterministic_limits() {
        // Vanishing volatility: intrinsic value of the forward.
        let c = case(32.0, 23.0, 1e9, 0.5, 1e-9);
        assert!((bs_vanilla_call(&c).value - 9.0).abs() < 1e-9);

        // Vanishing strike: the forward itself.
        let c = case(22.0, 1e-12, 1e9, 0.5, 0.4);
        assert!((bs_vanilla_call(&c).value - 22.0).abs() < 1e-9);
    }

    #[test]
    fn vanilla_matches_exact_terminal_mc() {
        // 1e7 exact lognormal terminal samples, 3 SE gate.
        let c = case(22.0, 23.0, 1e9, 0.5, 0.4);
        let xs = crate::market::sample_terminal_exact(&c, 10_000_000, 314159);
        let payoffs: Vec<f64> = xs.iter().map(|x| (x - 23.0).max(0.0)).collect();
        let n = payoffs.len() as f64;
        let mean = payoffs.iter().sum::<f64>() / n;
        let var = payoffs
            .iter()
            .map(|p| (p - mean) * (p - mean))
            .sum::<f64>()
            / (n - 1.0);
        let se = (var / n).sqrt();
        let analytic = bs_vanilla_call(&c).value;
        assert!(
            (analytic - mean).abs() <= 3.0 * se,
            "analytic {analytic} vs mc {mean} (se {se:e})"
        );
    }

    #[test]
    fn up_out_degenerate_regions() {
        assert_eq!(up_out_call(&case(22.0, 23.0, 20.0, 0.5, 0.4)).value, 0.0);
        assert_eq!(up_out_call(&case(45.0, 23.0, 40.0, 0.5, 0.4)).value, 0.0);
    }

    #[test]
    fn up_out_approaches_vanilla_for_distant_barrier() {
        for &(spot, vol, t) in &[(22.0, 0.4, 0.5), (27.0, 0.8, 2.0), (17.0, 1.2, 2.0)] {
            let c = case(spot, 23.0, 1e6 * spot, t, vol);
            let barrier_price = up_out_call(&c).value;
            let vanilla = bs_vanilla_call(&c).value;
            assert!(
                (barrier_price - vanilla).abs() <= 1e-8 * vanilla,
                "{barrier_price} vs {vanilla}"
            );
        }
    }

    #[test]
    fn up_out_agrees_with_quadrature_route() {
        for &(spot, barrier, t, vol) in &[
            (22.0, 40.0, 0.5, 0.4),
            (27.0, 60.0, 2.0, 0.8),
            (17.0, 100.0, 0.5, 1.2),
            (32.0, 40.0, 2.0, 0.4),
        ] {
            let c = case(spot, 23.0, barrier, t, vol);
            let closed = up_out_call(&c).value;
            let quad = up_out_call_quadrature(&c).value;
            assert!(
                (closed - quad).abs() <= 1e-6 * closed.abs().max(1e-12),
                "closed {closed} vs quadrature {quad}"
            );
        }
    }

    #[test]
    fn up_out_monotone_in_barrier_and_dominated_by_vanilla() {
        for &(spot, t, vol) in &[(22.0, 0.5, 0.4), (27.0, 2.0, 1.2), (17.0, 2.0, 0.8)] {
            let vanilla = bs_vanilla_call(&case(spot, 23.0, 1e9, t, vol)).value;
            let mut prev = 0.0;
            for i in 0..12 {
                let barrier = 25.0 + 15.0 * i as f64;
                let price = up_out_call(&case(spot, 23.0, barrier, t, vol)).value;
                assert!(price >= prev - 1e-12, "not monotone at B = {barrier}");
                assert!(price <= vanilla + 1e-12);
                prev = price;
            }
        }
    }

    #[test]
    fn estimate_serializes_with_plain_keys() {
        let e = up_out_call(&case(22.0, 23.0, 40.0, 0.5, 0.4));
        let json = serde_json::to_value(&e).unwrap();
        assert!(json.get("value").is_some());
        assert_eq!(json["method"], "analytic");
        assert_eq!(json["std_error"], 0.0);
        assert!(json.get("diagnostics").is_some());
        let back: PriceEstimate<f64> = serde_json::from_value(json).unwrap();
        assert_eq!(back.value, e.value);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn dominance_holds_everywhere(
            spot in 5.0f64..60.0,
            strike in 5.0f64..60.0,
            barrier in 5.0f64..150.0,
            t in 0.1f64..3.0,
            vol in 0.1f64..1.5,
        ) {
            let c = case(spot, strike, barrier, t, vol);
            let barrier_price = up_out_call(&c).value;
            let vanilla = bs_vanilla_call(&c).value;
            prop_assert!(barrier_price >= 0.0);
            prop_assert!(barrier_price <= vanilla + 1e-9 * (1.0 + vanilla));
        }
    }
}
