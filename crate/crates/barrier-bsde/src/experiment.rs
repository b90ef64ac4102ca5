//! Grid experiments: run the 72-case sweep (or any sub-product of its axes)
//! under a named training setting, collect per-case errors against the
//! closed form, and persist results.
//!
//! Results stream to `results.csv` as cases complete, written strictly in
//! case-index order so the bytes are reproducible for a fixed base seed no
//! matter how many workers run. `summary.json` mirrors the error
//! statistics.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{bs_vanilla_call, up_out_call};
use crate::error::{Error, Result};
use crate::market::MarketCase;
use crate::rng::derive_seed;
use crate::solver::{train, Setting, TrainConfig};

/// The experiment grid: the cartesian product of the axes below (one strike,
/// zero rate and drift), 72 cases in total for the published values.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub strike: f64,
    pub spots: Vec<f64>,
    pub maturities: Vec<f64>,
    pub vols: Vec<f64>,
    pub barriers: Vec<f64>,
    pub rate: f64,
    pub drift: f64,
}

impl GridSpec {
    /// The published grid: strike 23; spots 17, 22, 27, 32; maturities 0.5
    /// and 2; volatilities 0.4, 0.8, 1.2; barriers 40, 60, 100; zero rate
    /// and drift.
    pub fn paper() -> Self {
        Self {
            strike: 23.0,
            spots: vec![17.0, 22.0, 27.0, 32.0],
            maturities: vec![0.5, 2.0],
            vols: vec![0.4, 0.8, 1.2],
            barriers: vec![40.0, 60.0, 100.0],
            rate: 0.0,
            drift: 0.0,
        }
    }

    /// Cases in canonical index order: spot, then maturity, then
    /// volatility, then barrier (innermost).
    pub fn cases(&self) -> Vec<MarketCase<f64>> {
        let mut out = Vec::with_capacity(
            self.spots.len() * self.maturities.len() * self.vols.len() * self.barriers.len(),
        );
        for &spot in &self.spots {
            for &maturity in &self.maturities {
                for &vol in &self.vols {
                    for &barrier in &self.barriers {
                        out.push(
                            MarketCase::new(
                                spot,
                                self.strike,
                                barrier,
                                maturity,
                                self.rate,
                                self.drift,
                                vol,
                            )
                            .expect("grid axes are valid"),
                        );
                    }
                }
            }
        }
        out
    }
}

/// Axis filter: `None` keeps an axis unconstrained; values match within
/// 1e-9 to absorb decimal parsing.
#[derive(Clone, Debug, Default)]
pub struct CaseFilter {
    pub spots: Option<Vec<f64>>,
    pub maturities: Option<Vec<f64>>,
    pub vols: Option<Vec<f64>>,
    pub barriers: Option<Vec<f64>>,
}

impl CaseFilter {
    /// Parses `key=value,key=value,...` with keys `spot`, `maturity`,
    /// `vol`/`volatility`, `barrier`. Repeating a key widens the selection.
    pub fn parse(text: &str) -> Result<Self> {
        let mut filter = CaseFilter::default();
        for part in text.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("filter term `{part}` is not key=value")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("filter value in `{part}` is not a number")))?;
            let slot = match key.trim() {
                "spot" => &mut filter.spots,
                "maturity" => &mut filter.maturities,
                "vol" | "volatility" => &mut filter.vols,
                "barrier" => &mut filter.barriers,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown filter key `{other}` (use spot, maturity, vol, barrier)"
                    )))
                }
            };
            slot.get_or_insert_with(Vec::new).push(value);
        }
        Ok(filter)
    }

    pub fn matches(&self, case: &MarketCase<f64>) -> bool {
        let hit = |axis: &Option<Vec<f64>>, value: f64| {
            axis.as_ref()
                .map(|vs| vs.iter().any(|&v| (v - value).abs() <= 1e-9))
                .unwrap_or(true)
        };
        hit(&self.spots, case.spot())
            && hit(&self.maturities, case.maturity())
            && hit(&self.vols, case.volatility())
            && hit(&self.barriers, case.barrier())
    }
}

/// One trained case with its benchmark comparison. `bsde` is absent when
/// training failed; `rel_error` is absent when the benchmark is zero.
#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub case: MarketCase<f64>,
    pub setting: Setting,
    pub seed: u64,
    pub analytic: f64,
    pub bsde: Option<f64>,
    pub mc: Option<f64>,
    pub abs_error: Option<f64>,
    pub rel_error: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// Five summary statistics of one error kind.
#[derive(Clone, Copy, Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct StatsRow {
    pub average: f64,
    pub std: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Error statistics over a result set, for relative and absolute errors.
#[derive(Clone, Copy, Debug, Serialize, serde::Deserialize, PartialEq)]
pub struct ErrorStats {
    pub count: usize,
    pub relative: StatsRow,
    pub absolute: StatsRow,
}

/// Quantile with linear interpolation between order statistics (the
/// `(n-1)q` convention).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn stats_row(values: &[f64]) -> StatsRow {
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    let average = sorted.iter().sum::<f64>() / n;
    let std = if sorted.len() > 1 {
        (sorted.iter().map(|v| (v - average) * (v - average)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    StatsRow {
        average,
        std,
        q25: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q75: quantile(&sorted, 0.75),
    }
}

/// Statistics over every result with a defined relative error.
pub fn compute_stats(results: &[CaseResult]) -> Result<ErrorStats> {
    let rel: Vec<f64> = results.iter().filter_map(|r| r.rel_error).collect();
    let abs: Vec<f64> = results
        .iter()
        .filter(|r| r.rel_error.is_some())
        .filter_map(|r| r.abs_error)
        .collect();
    if rel.is_empty() {
        return Err(Error::EmptyInput(
            "no results with a defined relative error".into(),
        ));
    }
    Ok(ErrorStats {
        count: rel.len(),
        relative: stats_row(&rel),
        absolute: stats_row(&abs),
    })
}

/// Fixed CSV schema, one row per case.
pub const CSV_HEADER: &str = "spot,strike,barrier,maturity,rate,drift,volatility,\
setting,seed,analytic,bsde,mc,abs_error,rel_error,iterations,converged,error";

fn render_row(r: &CaseResult) -> String {
    let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.case.spot(),
        r.case.strike(),
        r.case.barrier(),
        r.case.maturity(),
        r.case.rate(),
        r.case.drift(),
        r.case.volatility(),
        r.setting,
        r.seed,
        r.analytic,
        opt(&r.bsde),
        opt(&r.mc),
        opt(&r.abs_error),
        opt(&r.rel_error),
        r.iterations,
        r.converged,
        r.error.clone().unwrap_or_default()
    )
}

/// The full CSV document for a result list.
pub fn render_csv(results: &[CaseResult]) -> String {
    let mut out = String::with_capacity(64 * (results.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&render_row(r));
        out.push('\n');
    }
    out
}

fn train_one(case: &MarketCase<f64>, setting: Setting, seed: u64) -> CaseResult {
    let analytic = up_out_call(case).value;
    let cfg = TrainConfig::<f64>::for_setting(setting, seed).expect("named setting");
    match train(case, &cfg) {
        Ok(result) => {
            let abs = (result.price - analytic).abs();
            CaseResult {
                case: *case,
                setting,
                seed,
                analytic,
                bsde: Some(result.price),
                mc: None,
                abs_error: Some(abs),
                rel_error: (analytic > 0.0).then(|| abs / analytic),
                iterations: result.iterations_run,
                converged: result.converged,
                error: None,
            }
        }
        Err(e) => CaseResult {
            case: *case,
            setting,
            seed,
            analytic,
            bsde: None,
            mc: None,
            abs_error: None,
            rel_error: None,
            iterations: 0,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

/// Cross-module re-assertion on ingestion: each analytic benchmark must sit
/// inside `[0, vanilla]`, and within any (spot, maturity, vol) group the
/// benchmark must be nondecreasing in the barrier.
fn assert_analytic_invariants(results: &[CaseResult]) -> Result<()> {
    for r in results {
        let vanilla = bs_vanilla_call(&r.case).value;
        if !(r.analytic >= 0.0 && r.analytic <= vanilla + 1e-10 * (1.0 + vanilla)) {
            return Err(Error::Domain(format!(
                "analytic price {} escapes [0, vanilla {}] at spot {} barrier {}",
                r.analytic,
                vanilla,
                r.case.spot(),
                r.case.barrier()
            )));
        }
    }
    let mut groups: std::collections::BTreeMap<(u64, u64, u64), Vec<(f64, f64)>> =
        Default::default();
    for r in results {
        let key = (
            r.case.spot().to_bits(),
            r.case.maturity().to_bits(),
            r.case.volatility().to_bits(),
        );
        groups.entry(key).or_default().push((r.case.barrier(), r.analytic));
    }
    for (_, mut rows) in groups {
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite barriers"));
        for pair in rows.windows(2) {
            if pair[1].1 < pair[0].1 - 1e-12 {
                return Err(Error::Domain(format!(
                    "analytic price not monotone in barrier: {} at B={} vs {} at B={}",
                    pair[0].1, pair[0].0, pair[1].1, pair[1].0
                )));
            }
        }
    }
    Ok(())
}

/// Runs an explicit selection of `(case index, case)` pairs. Per-case seeds
/// derive from `(base_seed, case index)`, so a filtered run reproduces the
/// corresponding rows of the full grid. With `out_dir` set, rows stream to
/// `results.csv` as they complete (in index order) and `summary.json` is
/// written at the end.
pub fn run_selected(
    selected: &[(usize, MarketCase<f64>)],
    setting: Setting,
    base_seed: u64,
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<Vec<CaseResult>> {
    if selected.is_empty() {
        return Err(Error::EmptyInput("no cases selected".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;

    let (tx, rx) = mpsc::channel::<(usize, CaseResult)>();
    let csv_path = out_dir.map(|d| d.join("results.csv"));
    let expected: Vec<usize> = (0..selected.len()).collect();

    let writer = std::thread::spawn(move || -> Result<Vec<CaseResult>> {
        let mut file = match &csv_path {
            Some(path) => {
                let mut f = std::fs::File::create(path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                f.write_all(CSV_HEADER.as_bytes())
                    .and_then(|_| f.write_all(b"\n"))
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                Some((f, path.clone()))
            }
            None => None,
        };
        let mut pending: std::collections::BTreeMap<usize, CaseResult> = Default::default();
        let mut ordered = Vec::new();
        let mut next = 0usize;
        for (slot, result) in rx {
            pending.insert(slot, result);
            while let Some(result) = pending.remove(&next) {
                if let Some((f, path)) = &mut file {
                    f.write_all(render_row(&result).as_bytes())
                        .and_then(|_| f.write_all(b"\n"))
                        .and_then(|_| f.flush())
                        .map_err(|e| Error::io(path.display().to_string(), e))?;
                }
                ordered.push(result);
                next += 1;
            }
        }
        debug_assert_eq!(next, expected.len());
        Ok(ordered)
    });

    pool.install(|| {
        selected
            .par_iter()
            .enumerate()
            .for_each_with(tx, |tx, (slot, (case_index, case))| {
                let seed = derive_seed(base_seed, *case_index as u64);
                let result = train_one(case, setting, seed);
                tx.send((slot, result)).expect("writer alive");
            });
    });

    let results = writer.join().expect("writer thread")?;
    assert_analytic_invariants(&results)?;

    if let Some(dir) = out_dir {
        let stats = compute_stats(&results);
        let summary_path = dir.join("summary.json");
        let summary = match &stats {
            Ok(s) => serde_json::to_string_pretty(&SummaryFile {
                setting,
                base_seed,
                cases: results.len(),
                failures: results.iter().filter(|r| r.error.is_some()).count(),
                stats: Some(*s),
            })?,
            Err(_) => serde_json::to_string_pretty(&SummaryFile {
                setting,
                base_seed,
                cases: results.len(),
                failures: results.iter().filter(|r| r.error.is_some()).count(),
                stats: None,
            })?,
        };
        std::fs::write(&summary_path, summary)
            .map_err(|e| Error::io(summary_path.display().to_string(), e))?;
    }

    Ok(results)
}

#[derive(Serialize)]
struct SummaryFile {
    setting: Setting,
    base_seed: u64,
    cases: usize,
    failures: usize,
    stats: Option<ErrorStats>,
}

/// Runs the filtered sub-product of the full grid under `setting`.
pub fn run_grid(
    setting: Setting,
    filter: &CaseFilter,
    base_seed: u64,
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<Vec<CaseResult>> {
    let selected: Vec<(usize, MarketCase<f64>)> = GridSpec::paper()
        .cases()
        .into_iter()
        .enumerate()
        .filter(|(_, case)| filter.matches(case))
        .collect();
    run_selected(&selected, setting, base_seed, workers, out_dir)
}

/// Writes `results.csv` and `summary.json` for an already-computed result
/// list; returns the two paths. Byte-stable for identical inputs.
pub fn report(
    results: &[CaseResult],
    stats: &ErrorStats,
    dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    if results.is_empty() {
        return Err(Error::EmptyInput("no results to report".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let csv_path = dir.join("results.csv");
    std::fs::write(&csv_path, render_csv(results))
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let json_path = dir.join("summary.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(stats)?)
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    Ok((csv_path, json_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_result(barrier: f64, rel: f64) -> CaseResult {
        let case = MarketCase::new(22.0, 23.0, barrier, 0.5, 0.0, 0.0, 0.4).unwrap();
        let analytic = up_out_call(&case).value;
        CaseResult {
            case,
            setting: Setting::Test2,
            seed: 7,
            analytic,
            bsde: Some(analytic * (1.0 + rel)),
            mc: None,
            abs_error: Some(analytic * rel),
            rel_error: Some(rel),
            iterations: 900,
            converged: true,
            error: None,
        }
    }

    #[test]
    fn paper_grid_has_72_cases() {
        let cases = GridSpec::paper().cases();
        assert_eq!(cases.len(), 72);
        // Spot-major ordering, barrier innermost.
        assert_eq!(cases[0].spot(), 17.0);
        assert_eq!(cases[0].barrier(), 40.0);
        assert_eq!(cases[1].barrier(), 60.0);
        assert_eq!(cases[2].barrier(), 100.0);
        assert_eq!(cases[3].volatility(), 0.8);
        assert_eq!(cases[71].spot(), 32.0);
        assert_eq!(cases[71].barrier(), 100.0);
    }

    #[test]
    fn filter_selects_sub_products() {
        let filter = CaseFilter::parse("barrier=40,maturity=0.5").unwrap();
        let selected: Vec<_> = GridSpec::paper()
            .cases()
            .into_iter()
            .filter(|c| filter.matches(c))
            .collect();
        assert_eq!(selected.len(), 12); // 4 spots x 3 vols

        let filter = CaseFilter::parse("barrier=40,barrier=60").unwrap();
        let count = GridSpec::paper()
            .cases()
            .iter()
            .filter(|c| filter.matches(c))
            .count();
        assert_eq!(count, 48);

        assert!(CaseFilter::parse("nope=1").is_err());
        assert!(CaseFilter::parse("spot").is_err());
        assert!(CaseFilter::parse("spot=abc").is_err());
    }

    #[test]
    fn stats_examples() {
        let single = vec![fake_result(40.0, 0.005)];
        let stats = compute_stats(&single).unwrap();
        assert_eq!(stats.count, 1);
        for v in [
            stats.relative.average,
            stats.relative.q25,
            stats.relative.median,
            stats.relative.q75,
        ] {
            assert!((v - 0.005).abs() < 1e-15);
        }
        assert_eq!(stats.relative.std, 0.0);

        let triple = vec![
            fake_result(40.0, 0.01),
            fake_result(60.0, 0.02),
            fake_result(100.0, 0.03),
        ];
        let stats = compute_stats(&triple).unwrap();
        assert!((stats.relative.median - 0.02).abs() < 1e-15);
        assert!((stats.relative.average - 0.02).abs() < 1e-15);

        assert!(compute_stats(&[]).is_err());
    }

    #[test]
    fn stats_match_independent_quantile_oracle() {
        // Brute-force oracle: sort and linearly interpolate, written out
        // long-hand.
        let rels = [0.031, 0.002, 0.017, 0.009, 0.026, 0.001, 0.044];
        let results: Vec<CaseResult> = rels
            .iter()
            .enumerate()
            .map(|(i, &r)| fake_result(40.0 + i as f64, r))
            .collect();
        let stats = compute_stats(&results).unwrap();

        let mut sorted = rels.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let oracle = |q: f64| {
            let h = (sorted.len() - 1) as f64 * q;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        };
        assert!((stats.relative.q25 - oracle(0.25)).abs() < 1e-12);
        assert!((stats.relative.median - oracle(0.5)).abs() < 1e-12);
        assert!((stats.relative.q75 - oracle(0.75)).abs() < 1e-12);
        // Spot values by hand: n = 7, so the quartiles sit at order
        // statistics 1.5 and 4.5.
        assert!((stats.relative.q25 - (0.002 + 0.5 * (0.009 - 0.002))).abs() < 1e-12);
        assert!((stats.relative.q75 - (0.026 + 0.5 * (0.031 - 0.026))).abs() < 1e-12);
    }

    #[test]
    fn stats_are_permutation_invariant() {
        let mut results = vec![
            fake_result(40.0, 0.01),
            fake_result(60.0, 0.03),
            fake_result(100.0, 0.02),
            fake_result(50.0, 0.005),
        ];
        let a = compute_stats(&results).unwrap();
        results.reverse();
        let b = compute_stats(&results).unwrap();
        results.swap(0, 2);
        let c = compute_stats(&results).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn csv_has_one_row_per_case_and_round_trips_json() {
        let results = vec![fake_result(40.0, 0.01), fake_result(60.0, 0.02)];
        let csv = render_csv(&results);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(CSV_HEADER));

        let stats = compute_stats(&results).unwrap();
        let json = serde_json::to_string(&stats).unwrap();
        let back: ErrorStats = serde_json::from_str(&json).unwrap();
        assert_eq!(back, stats);
    }

    #[test]
    fn report_writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let results = vec![fake_result(40.0, 0.01)];
        let stats = compute_stats(&results).unwrap();
        let (csv, json) = report(&results, &stats, dir.path()).unwrap();
        let csv_text = std::fs::read_to_string(csv).unwrap();
        assert_eq!(csv_text, render_csv(&results));
        let parsed: ErrorStats =
            serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
        assert_eq!(parsed, stats);
    }

    #[test]
    fn golden_csv_schema_is_frozen() {
        // Regenerate with UPDATE_GOLDEN=1 after a deliberate schema change.
        let results = vec![fake_result(40.0, 0.0125), fake_result(60.0, 0.002)];
        let rendered = render_csv(&results);
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("tests/data/golden_results.csv");
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(&path, &rendered).unwrap();
        }
        let golden = std::fs::read_to_string(&path).unwrap();
        assert_eq!(rendered, golden);
    }

    #[test]
    fn analytic_invariants_catch_corrupted_rows() {
        let mut row = fake_result(40.0, 0.01);
        row.analytic = 1e9;
        assert!(assert_analytic_invariants(&[row]).is_err());

        let good = vec![fake_result(40.0, 0.01), fake_result(60.0, 0.01)];
        assert!(assert_analytic_invariants(&good).is_ok());
    }
}
