//! Executable property suites, shared by the `check` CLI subcommand and the
//! test suites.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analytic::{bs_vanilla_call, up_out_call, up_out_call_quadrature};
use crate::experiment::GridSpec;
use crate::market::{build_time_grid, simulate_paths, MarketCase, TimeGrid};
use crate::mc::{lemma2_property_check, price_path_bridge, price_terminal_bridge, McConfig};
use crate::nn::{Activation, BnMode, Network, NetworkGrads, NetworkSpec};
use crate::solver::loss_and_gradients;

/// One named pass/fail observation.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// A suite of observations.
#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub suite: String,
    pub outcomes: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for o in &self.outcomes {
            let tag = if o.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("[{tag}] {}::{} {}\n", self.suite, o.name, o.detail));
        }
        let tag = if self.passed() { "PASS" } else { "FAIL" };
        out.push_str(&format!("[{tag}] suite {}\n", self.suite));
        out
    }
}

/// Central finite difference of a scalar function of a parameter vector.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    params: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for k in 0..params.len() {
        let orig = work[k];
        work[k] = orig + step;
        let up = f(&work);
        work[k] = orig - step;
        let down = f(&work);
        work[k] = orig;
        grad[k] = (up - down) / (2.0 * step);
    }
    grad
}

/// Worst relative disagreement between two gradient vectors, with a floor
/// that keeps near-zero entries from dominating.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

const FD_STEP: f64 = 1e-5;
const LAYER_TOL: f64 = 1e-4;
const END_TO_END_TOL: f64 = 1e-3;
const BN_MODES: [BnMode; 3] = [BnMode::None, BnMode::InputOnly, BnMode::EveryLayer];

fn bn_mode_name(mode: BnMode) -> &'static str {
    match mode {
        BnMode::None => "none",
        BnMode::InputOnly => "input-only",
        BnMode::EveryLayer => "every-layer",
    }
}

/// Layer-level check on the full forward map: gradients of a random linear
/// functional of the network outputs, for a 2-21-1 trunk under each BN
/// placement.
fn network_gradient_check(mode: BnMode, seed: u64) -> CheckOutcome {
    let spec = NetworkSpec {
        input_dim: 2,
        hidden_layers: 1,
        hidden_width: 21,
        activation: Activation::Elu,
        bn_mode: mode,
        n_time_steps: 3,
    };
    let template = Network::<f64>::init(spec, 1.0, seed).expect("valid spec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let batch = 8;
    let inputs: Vec<f64> = (0..batch * 2).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let weights: Vec<f64> = (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let time_index = 1;

    let mut net = template.clone();
    let (_, cache) = net.forward_train(time_index, &inputs, batch).unwrap();
    let mut grads = NetworkGrads::zeros_for(&net);
    net.backward(&cache, &weights, &mut grads);
    let analytic = grads.flatten();

    let fd = central_difference(
        |params| {
            let mut probe = template.clone();
            probe.set_params(params);
            let (out, _) = probe.forward_train(time_index, &inputs, batch).unwrap();
            out.iter().zip(&weights).map(|(o, w)| o * w).sum()
        },
        &template.params_vec(),
        FD_STEP,
    );

    // y0/z0 do not enter the plain forward map; compare the rest.
    let n = analytic.len() - 2;
    let err = max_relative_error(&analytic[..n], &fd[..n]);
    CheckOutcome::new(
        format!("net-gradient-{}-seed{}", bn_mode_name(mode), seed),
        err <= LAYER_TOL,
        format!("max rel err {err:.3e} (tol {LAYER_TOL:e})"),
    )
}

/// Batch-norm layer in isolation: gradients with respect to scale, shift
/// and inputs on a random 8x4 batch.
fn batchnorm_gradient_check(seed: u64) -> CheckOutcome {
    use crate::nn::StepBatchNorm;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, dim, step_idx, n_steps) = (8, 4, 1, 2);
    let x: Vec<f64> = (0..batch * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let weights: Vec<f64> = (0..batch * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut bn = StepBatchNorm::<f64>::identity(dim, n_steps);
    for g in bn.gamma_mut() {
        *g = rng.gen_range(0.5..1.5);
    }
    for b in bn.beta_mut() {
        *b = rng.gen_range(-0.5..0.5);
    }
    let frozen = bn.clone();

    let (_, cache) = bn.forward_train(step_idx, &x, batch).unwrap();
    let mut grad_gamma = vec![0.0; dim * n_steps];
    let mut grad_beta = vec![0.0; dim * n_steps];
    let d_in = bn.backward(step_idx, &cache, &weights, batch, &mut grad_gamma, &mut grad_beta);

    let objective = |bn: &mut StepBatchNorm<f64>, x: &[f64]| -> f64 {
        let (y, _) = bn.forward_train(step_idx, x, batch).unwrap();
        y.iter().zip(&weights).map(|(a, b)| a * b).sum()
    };

    let mut worst = 0.0f64;
    // Inputs.
    let mut xw = x.clone();
    for k in 0..xw.len() {
        let orig = xw[k];
        xw[k] = orig + FD_STEP;
        let up = objective(&mut frozen.clone(), &xw);
        xw[k] = orig - FD_STEP;
        let down = objective(&mut frozen.clone(), &xw);
        xw[k] = orig;
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max((fd - d_in[k]).abs() / fd.abs().max(d_in[k].abs()).max(1e-6));
    }
    // Scales and shifts of the addressed step.
    for k in 0..dim {
        let idx = step_idx * dim + k;
        for (param, grad) in [(true, grad_gamma[idx]), (false, grad_beta[idx])] {
            let mut probe = frozen.clone();
            let slot = if param {
                &mut probe.gamma_mut()[idx]
            } else {
                &mut probe.beta_mut()[idx]
            };
            *slot += FD_STEP;
            let up = objective(&mut probe, &x);
            let mut probe = frozen.clone();
            let slot = if param {
                &mut probe.gamma_mut()[idx]
            } else {
                &mut probe.beta_mut()[idx]
            };
            *slot -= FD_STEP;
            let down = objective(&mut probe, &x);
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max((fd - grad).abs() / fd.abs().max(grad.abs()).max(1e-6));
        }
    }

    CheckOutcome::new(
        format!("batchnorm-gradient-seed{seed}"),
        worst <= LAYER_TOL,
        format!("max rel err {worst:.3e} (tol {LAYER_TOL:e})"),
    )
}

/// End-to-end: gradient of the full unrolled training loss on a tiny
/// configuration (5 time steps, batch 4, width 4) against central
/// differences, for every trainable parameter including `y0` and `z0`.
fn end_to_end_gradient_check(mode: BnMode, seed: u64) -> CheckOutcome {
    let case = MarketCase::new(22.0, 23.0, 40.0, 0.5, 0.03, 0.01, 0.4).expect("valid case");
    let grid = TimeGrid::with_steps(0.5, 5);
    let paths = simulate_paths(&case, &grid, 4, seed ^ 0xABCD);
    let spec = NetworkSpec {
        input_dim: 2,
        hidden_layers: 1,
        hidden_width: 4,
        activation: Activation::Elu,
        bn_mode: mode,
        n_time_steps: 4,
    };
    let template = Network::<f64>::init(spec, 1.0, seed).expect("valid spec");

    let mut net = template.clone();
    let (_, grads) = loss_and_gradients(&case, &grid, &paths, &mut net).unwrap();
    let analytic = grads.flatten();

    let fd = central_difference(
        |params| {
            let mut probe = template.clone();
            probe.set_params(params);
            let (loss, _) = loss_and_gradients(&case, &grid, &paths, &mut probe).unwrap();
            loss
        },
        &template.params_vec(),
        FD_STEP,
    );

    let err = max_relative_error(&analytic, &fd);
    CheckOutcome::new(
        format!("end-to-end-{}-seed{}", bn_mode_name(mode), seed),
        err <= END_TO_END_TOL,
        format!("max rel err {err:.3e} (tol {END_TO_END_TOL:e})"),
    )
}

/// Layer and end-to-end finite-difference suites: every BN placement, five
/// seeds each.
pub fn gradient_suite(base_seed: u64) -> SuiteReport {
    let mut outcomes = Vec::new();
    for s in 0..5 {
        outcomes.push(batchnorm_gradient_check(base_seed + s));
    }
    for mode in BN_MODES {
        for s in 0..5 {
            outcomes.push(network_gradient_check(mode, base_seed + s));
            outcomes.push(end_to_end_gradient_check(mode, base_seed + s));
        }
    }
    SuiteReport {
        suite: "gradients".into(),
        outcomes,
    }
}

/// Eight grid cases spread across the axes, used for the cross-estimator
/// consistency check.
pub fn estimator_check_cases() -> Vec<MarketCase<f64>> {
    [
        (17.0, 0.5, 0.4, 40.0),
        (22.0, 0.5, 0.8, 60.0),
        (27.0, 0.5, 1.2, 100.0),
        (32.0, 0.5, 0.4, 60.0),
        (17.0, 2.0, 0.8, 100.0),
        (22.0, 2.0, 1.2, 40.0),
        (27.0, 2.0, 0.4, 60.0),
        (32.0, 2.0, 0.8, 100.0),
    ]
    .iter()
    .map(|&(spot, t, vol, barrier)| {
        MarketCase::new(spot, 23.0, barrier, t, 0.0, 0.0, vol).expect("valid case")
    })
    .collect()
}

/// Terminal-bridge vs path-bridge agreement within 3 combined standard
/// errors on each case.
pub fn estimator_equivalence(n_paths: usize, base_seed: u64) -> Vec<CheckOutcome> {
    estimator_check_cases()
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let grid = build_time_grid(case);
            let a = price_terminal_bridge(case, &McConfig::terminal(n_paths, base_seed + i as u64));
            let b = price_path_bridge(
                case,
                &grid,
                &McConfig::path(n_paths, base_seed + 1000 + i as u64),
            );
            let combined = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
            let diff = (a.value - b.value).abs();
            CheckOutcome::new(
                format!(
                    "equivalence-s{}-t{}-v{}-b{}",
                    case.spot(),
                    case.maturity(),
                    case.volatility(),
                    case.barrier()
                ),
                diff <= 3.0 * combined,
                format!(
                    "terminal {:.6} vs path {:.6}, |diff| {diff:.2e} <= 3 x {combined:.2e}",
                    a.value, b.value
                ),
            )
        })
        .collect()
}

pub fn estimator_suite(base_seed: u64) -> SuiteReport {
    let mut outcomes = estimator_equivalence(250_000, base_seed);

    let case = MarketCase::new(22.0, 23.0, 40.0, 0.5, 0.0, 0.0, 0.4).unwrap();
    let cfg = McConfig::terminal(100_000, base_seed);
    let a = price_terminal_bridge(&case, &cfg);
    let b = price_terminal_bridge(&case, &cfg);
    outcomes.push(CheckOutcome::new(
        "reproducibility",
        a.value == b.value && a.std_error == b.std_error,
        format!("repeat run both {:.10}", a.value),
    ));

    SuiteReport {
        suite: "estimators".into(),
        outcomes,
    }
}

/// Closed-form sanity: dominance, barrier monotonicity, the far-barrier
/// limit, quadrature agreement, and a Monte-Carlo spot check.
pub fn analytic_suite(base_seed: u64) -> SuiteReport {
    let mut outcomes = Vec::new();
    let grid_cases = GridSpec::paper().cases();

    let mut dominated = true;
    let mut worst = String::new();
    for case in &grid_cases {
        let barrier_price = up_out_call(case).value;
        let vanilla = bs_vanilla_call(case).value;
        if !(barrier_price >= 0.0 && barrier_price <= vanilla + 1e-10 * (1.0 + vanilla)) {
            dominated = false;
            worst = format!("violated at spot {} barrier {}", case.spot(), case.barrier());
            break;
        }
    }
    outcomes.push(CheckOutcome::new(
        "dominance-72-cases",
        dominated,
        if dominated { "0 <= price <= vanilla".into() } else { worst },
    ));

    let mut monotone = true;
    for &spot in &[17.0, 22.0, 27.0, 32.0] {
        for &(t, vol) in &[(0.5, 0.4), (0.5, 1.2), (2.0, 0.8)] {
            let mut prev = -1.0;
            for k in 0..12 {
                let barrier = 24.0 + 8.0 * k as f64;
                let case = MarketCase::new(spot, 23.0, barrier, t, 0.0, 0.0, vol).unwrap();
                let price = up_out_call(&case).value;
                if price < prev - 1e-12 {
                    monotone = false;
                }
                prev = price;
            }
        }
    }
    outcomes.push(CheckOutcome::new(
        "barrier-monotonicity",
        monotone,
        "nondecreasing over 12-point barrier sweeps",
    ));

    let mut limit_ok = true;
    for &spot in &[17.0, 22.0, 27.0, 32.0] {
        for &(t, vol) in &[(0.5, 0.4), (2.0, 1.2)] {
            let case: MarketCase<f64> =
                MarketCase::new(spot, 23.0, 1e6 * spot, t, 0.0, 0.0, vol).unwrap();
            let a = up_out_call(&case).value;
            let v = bs_vanilla_call(&case).value;
            if (a - v).abs() > 1e-8 * v {
                limit_ok = false;
            }
        }
    }
    outcomes.push(CheckOutcome::new(
        "far-barrier-limit",
        limit_ok,
        "matches the vanilla call at B = 1e6 x0 within 1e-8 relative",
    ));

    let mut quad_worst = 0.0f64;
    for case in quadrature_check_cases() {
        let closed = up_out_call(&case).value;
        let quad = up_out_call_quadrature(&case).value;
        quad_worst = quad_worst.max((closed - quad).abs() / closed.abs().max(1e-12));
    }
    outcomes.push(CheckOutcome::new(
        "quadrature-agreement-12-cases",
        quad_worst <= 1e-6,
        format!("worst rel diff {quad_worst:.3e} (tol 1e-6)"),
    ));

    let mut mc_ok = true;
    let mut detail = String::new();
    for (i, case) in grid_cases.iter().step_by(13).enumerate() {
        let mc = price_terminal_bridge(case, &McConfig::terminal(500_000, base_seed + i as u64));
        let a = up_out_call(case).value;
        let diff = (a - mc.value).abs();
        if diff > 3.0 * mc.std_error {
            mc_ok = false;
            detail = format!(
                "spot {} barrier {}: analytic {a:.6} vs mc {:.6} (se {:.2e})",
                case.spot(),
                case.barrier(),
                mc.value,
                mc.std_error
            );
            break;
        }
    }
    outcomes.push(CheckOutcome::new(
        "mc-gate-spot-checks",
        mc_ok,
        if mc_ok { "within 3 SE at 5e5 paths".into() } else { detail },
    ));

    SuiteReport {
        suite: "analytic".into(),
        outcomes,
    }
}

/// Twelve deterministic cases spanning the grid axes, used wherever the
/// closed form is cross-checked against the quadrature route.
pub fn quadrature_check_cases() -> Vec<MarketCase<f64>> {
    let spots = [17.0, 22.0, 27.0, 32.0];
    let barriers = [40.0, 60.0, 100.0];
    let mats = [0.5, 2.0];
    let vols = [0.4, 0.8, 1.2];
    let mut cases = Vec::with_capacity(12);
    for (i, &spot) in spots.iter().enumerate() {
        for (j, &barrier) in barriers.iter().enumerate() {
            let t = mats[(i + j) % 2];
            let vol = vols[(i + j) % 3];
            cases.push(MarketCase::new(spot, 23.0, barrier, t, 0.0, 0.0, vol).unwrap());
        }
    }
    cases
}

pub fn lemma2_suite(base_seed: u64) -> SuiteReport {
    let report = lemma2_property_check(200_000, base_seed);
    let outcomes = vec![
        CheckOutcome::new(
            "enumeration-exact",
            report.exact_sides_equal && (report.exact_lhs - 7.35).abs() < 1e-12,
            format!("both sides {} / {}", report.exact_lhs, report.exact_rhs),
        ),
        CheckOutcome::new(
            "simulation-consistent",
            report.simulation_consistent,
            format!(
                "lhs {:.4} (se {:.1e}), rhs {:.4} (se {:.1e}) vs 7.35",
                report.sim_lhs, report.se_lhs, report.sim_rhs, report.se_rhs
            ),
        ),
    ];
    SuiteReport {
        suite: "lemma2".into(),
        outcomes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_utilities_on_a_quadratic() {
        let f = |p: &[f64]| p[0] * p[0] + 3.0 * p[0] * p[1];
        let grad = central_difference(f, &[2.0, -1.0], 1e-6);
        assert!((grad[0] - 1.0).abs() < 1e-6);
        assert!((grad[1] - 6.0).abs() < 1e-6);
        assert!(max_relative_error(&grad, &[1.0, 6.0]) < 1e-6);
    }

    #[test]
    fn lemma2_suite_passes() {
        let report = lemma2_suite(17);
        assert!(report.passed(), "{}", report.render());
    }
}
