//! Command-line front end: single-case pricing, grid experiments, and the
//! property-check suites.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use barrier_bsde::analytic::{up_out_call, PriceEstimate, PriceMethod};
use barrier_bsde::checks;
use barrier_bsde::experiment::{run_grid, CaseFilter};
use barrier_bsde::market::{build_time_grid, MarketCase};
use barrier_bsde::mc::{price_path_bridge, price_terminal_bridge, McConfig};
use barrier_bsde::solver::{train_full, Setting, TrainConfig};

#[derive(Parser)]
#[command(
    name = "barrier-bsde",
    about = "Up-and-out call pricing: closed form, Monte Carlo, and a deep-BSDE solver",
    long_about = "Prices continuously-monitored up-and-out call options. A case file is a \
JSON object {spot, strike, barrier, maturity, rate, drift, volatility} with decimal numbers.\n\
Seed and worker count resolve in order: command-line flag, environment variable \
(BARRIER_BSDE_SEED / BARRIER_BSDE_WORKERS), JSON config file (--config), built-in default."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Base random seed.
    #[arg(long, env = "BARRIER_BSDE_SEED")]
    seed: Option<u64>,

    /// Worker threads for grid runs (0 = one per core).
    #[arg(long, env = "BARRIER_BSDE_WORKERS")]
    workers: Option<usize>,

    /// JSON config file providing defaults: {"seed": ..., "workers": ...}.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
struct FileConfig {
    seed: Option<u64>,
    workers: Option<usize>,
}

impl CommonOpts {
    fn resolve(&self) -> Result<(u64, usize)> {
        let file: FileConfig = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config file {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config file {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let seed = self.seed.or(file.seed).unwrap_or(1);
        let workers = self.workers.or(file.workers).unwrap_or(0);
        Ok((seed, workers))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Analytic,
    #[value(name = "mc-terminal")]
    McTerminal,
    #[value(name = "mc-path")]
    McPath,
    Bsde,
}

#[derive(Clone, Copy, ValueEnum)]
enum SettingArg {
    Test1,
    Test2,
    Test3,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Test1 => Setting::Test1,
            SettingArg::Test2 => Setting::Test2,
            SettingArg::Test3 => Setting::Test3,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Gradients,
    Estimators,
    Analytic,
    Lemma2,
}

#[derive(Subcommand)]
enum Command {
    /// Price one case; prints a PriceEstimate JSON to stdout.
    Price {
        /// Pricing method.
        #[arg(long, value_enum)]
        method: MethodArg,

        /// Path to the case JSON file.
        #[arg(long)]
        case: PathBuf,

        /// Training setting for the bsde method.
        #[arg(long, value_enum, default_value = "test2")]
        setting: SettingArg,

        /// Monte-Carlo path count.
        #[arg(long, default_value_t = 1_000_000)]
        paths: usize,

        /// Per-grid-step refinement of the path estimator.
        #[arg(long, default_value_t = 1)]
        substeps: usize,

        /// Write the per-iteration training history CSV here (bsde only).
        #[arg(long)]
        history_out: Option<PathBuf>,

        /// Write the trained network checkpoint JSON here (bsde only).
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,

        #[command(flatten)]
        common: CommonOpts,
    },

    /// Run the experiment grid; writes results.csv and summary.json.
    Grid {
        /// Training setting.
        #[arg(long, value_enum)]
        setting: SettingArg,

        /// Axis filter, e.g. "barrier=40,maturity=0.5". Keys: spot,
        /// maturity, vol, barrier; repeat a key to widen the selection.
        #[arg(long, default_value = "")]
        filter: String,

        /// Output directory.
        #[arg(long)]
        out: PathBuf,

        #[command(flatten)]
        common: CommonOpts,
    },

    /// Run a property suite; exit code 0 when every check passes.
    Check {
        /// Which suite to run.
        #[arg(long, value_enum)]
        suite: SuiteArg,

        #[command(flatten)]
        common: CommonOpts,
    },
}

fn load_case(path: &PathBuf) -> Result<MarketCase<f64>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading case file {}", path.display()))?;
    let case = serde_json::from_str(&text)
        .with_context(|| format!("parsing case file {}", path.display()))?;
    Ok(case)
}

fn price_command(
    method: MethodArg,
    case_path: PathBuf,
    setting: SettingArg,
    paths: usize,
    substeps: usize,
    history_out: Option<PathBuf>,
    checkpoint_out: Option<PathBuf>,
    common: CommonOpts,
) -> Result<()> {
    let (seed, _) = common.resolve()?;
    let case = load_case(&case_path)?;

    let estimate: PriceEstimate<f64> = match method {
        MethodArg::Analytic => up_out_call(&case),
        MethodArg::McTerminal => price_terminal_bridge(&case, &McConfig::terminal(paths, seed)),
        MethodArg::McPath => {
            let grid = build_time_grid(&case);
            let mut cfg = McConfig::path(paths, seed);
            cfg.substeps = substeps;
            price_path_bridge(&case, &grid, &cfg)
        }
        MethodArg::Bsde => {
            let cfg = TrainConfig::<f64>::for_setting(setting.into(), seed)?;
            let (result, net) = train_full(&case, &cfg)?;
            if let Some(path) = &history_out {
                result.write_history_csv(&cfg, path)?;
            }
            if let Some(path) = &checkpoint_out {
                let json = serde_json::to_string_pretty(&net.to_checkpoint())?;
                std::fs::write(path, json)
                    .with_context(|| format!("writing checkpoint {}", path.display()))?;
            }
            PriceEstimate {
                value: result.price,
                method: PriceMethod::Bsde,
                std_error: 0.0,
                diagnostics: Default::default(),
            }
            .with_diag("iterations", result.iterations_run)
            .with_diag("converged", result.converged)
            .with_diag("setting", cfg.setting.to_string())
            .with_diag("seed", seed)
            .with_diag("z0", result.z0)
            .with_diag("wall_time_secs", result.wall_time_secs)
        }
    };

    println!("{}", serde_json::to_string_pretty(&estimate)?);
    Ok(())
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Price {
            method,
            case,
            setting,
            paths,
            substeps,
            history_out,
            checkpoint_out,
            common,
        } => {
            price_command(
                method,
                case,
                setting,
                paths,
                substeps,
                history_out,
                checkpoint_out,
                common,
            )?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Grid {
            setting,
            filter,
            out,
            common,
        } => {
            let (seed, workers) = common.resolve()?;
            let filter = CaseFilter::parse(&filter)?;
            let results = run_grid(setting.into(), &filter, seed, workers, Some(&out))?;
            let failures = results.iter().filter(|r| r.error.is_some()).count();
            eprintln!(
                "{} cases done ({} failed); results under {}",
                results.len(),
                failures,
                out.display()
            );
            if failures > 0 {
                bail!("{failures} case(s) failed to train");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { suite, common } => {
            let (seed, _) = common.resolve()?;
            let report = match suite {
                SuiteArg::Gradients => checks::gradient_suite(seed),
                SuiteArg::Estimators => checks::estimator_suite(seed),
                SuiteArg::Analytic => checks::analytic_suite(seed),
                SuiteArg::Lemma2 => checks::lemma2_suite(seed),
            };
            print!("{}", report.render());
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
