//! Argument parsing and exit codes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sparsenet::lemmas::LemmaSuite;
use sparsenet::shuffle::ShuffleMode;

use crate::commands::{self, Failures};
use crate::config::{parse_densities, parse_methods, parse_seeds, ConfigError, ExperimentConfig};

/// Exit status when every cell succeeded.
pub const EXIT_OK: u8 = 0;
/// Exit status when at least one cell or check failed.
pub const EXIT_FAILED: u8 = 1;
/// Exit status for an invalid config or argument.
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "sparsenet", version, about = "Prune networks at initialization and measure the result")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Seeds, as a list `0,1,2` or a range `0..3`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Parallel cells; SPARSENET_WORKERS takes precedence.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Grid {
    /// Comma-separated methods, overriding prune.methods.
    #[arg(long)]
    pub methods: Option<String>,
    /// Comma-separated target densities, overriding prune.densities.
    #[arg(long)]
    pub densities: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prune every (method, density, seed) cell and save masks and structure reports.
    Prune {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
    },
    /// Prune, train and evaluate every cell; aggregate over seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
    },
    /// Spread a saved mask over more units, keeping per-layer counts.
    ShuffleWidth {
        #[command(flatten)]
        common: Common,
        /// Network file written by `prune`.
        #[arg(long)]
        net: PathBuf,
        /// Width factor x in [0, 1]; defaults to shuffle.width_factor.
        #[arg(long)]
        factor: Option<f64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ShuffleMode>,
        /// Retrain the original and shuffled networks on the config's task.
        #[arg(long)]
        retrain: bool,
    },
    /// Run the structural checks and print a pass/fail table.
    VerifyLemmas {
        #[command(flatten)]
        common: Common,
        /// Total walks for the walk-distribution check.
        #[arg(long, default_value_t = 10_000)]
        walks: usize,
        /// Sampled paths per bias for the path-contribution ratio.
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
    },
    /// Path-kernel trace and path counts of saved networks, or of a pruned config grid.
    Trace {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        /// Network files; when absent the config grid is pruned instead.
        #[arg(long = "net")]
        nets: Vec<PathBuf>,
    },
    /// Train a saved network on the config's task.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        net: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<ShuffleMode, String> {
    match s {
        "incremental" => Ok(ShuffleMode::Incremental),
        "resample" => Ok(ShuffleMode::Resample),
        _ => Err(format!("unknown mode {s:?}; expected incremental or resample")),
    }
}

fn workers(common: &Common) -> Result<Option<usize>, ConfigError> {
    match std::env::var("SPARSENET_WORKERS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ConfigError(format!("SPARSENET_WORKERS: cannot parse {v:?}"))),
        Err(_) => Ok(common.workers),
    }
}

/// Loads the config and applies flag overrides.
pub fn resolve(common: &Common, grid: Option<&Grid>) -> Result<ExperimentConfig, ConfigError> {
    let path = common.config.as_ref().ok_or_else(|| ConfigError("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = &common.seeds {
        cfg.seeds = parse_seeds(s)?;
    }
    if let Some(w) = workers(common)? {
        cfg.workers = w;
    }
    if let Some(g) = grid {
        if let Some(m) = &g.methods {
            cfg.prune.methods = parse_methods(m)?;
        }
        if let Some(d) = &g.densities {
            cfg.prune.densities = parse_densities(d)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn finish<T: Failures>(result: anyhow::Result<T>, show: impl FnOnce(&T)) -> ExitCode {
    match result {
        Ok(report) => {
            show(&report);
            let failed = report.failures();
            if failed > 0 {
                eprintln!("{failed} failed");
                ExitCode::from(EXIT_FAILED)
            } else {
                ExitCode::from(EXIT_OK)
            }
        }
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("config error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}

pub fn run(cli: Cli) -> ExitCode {
    let config_err = |e: ConfigError| {
        eprintln!("config error: {e}");
        ExitCode::from(EXIT_CONFIG)
    };
    match cli.command {
        Command::Prune { common, grid } => match resolve(&common, Some(&grid)) {
            Ok(cfg) => finish(commands::run_prune(&cfg, &common.out), |r| {
                println!("{} cells written to {}", r.rows.len(), common.out.display())
            }),
            Err(e) => config_err(e),
        },
        Command::Compare { common, grid } => match resolve(&common, Some(&grid)) {
            Ok(cfg) => finish(commands::run_compare(&cfg, &common.out), |r| print!("{}", r.aggregates_csv())),
            Err(e) => config_err(e),
        },
        Command::ShuffleWidth { common, net, factor, mode, retrain } => {
            let cfg = match (&common.config, retrain) {
                (Some(_), _) => match resolve(&common, None) {
                    Ok(c) => Some(c),
                    Err(e) => return config_err(e),
                },
                (None, true) => return config_err(ConfigError("--retrain needs --config".into())),
                (None, false) => None,
            };
            let factor = factor.or(cfg.as_ref().map(|c| c.shuffle.width_factor)).unwrap_or(1.0);
            let mode = mode.or(cfg.as_ref().map(|c| c.shuffle.mode)).unwrap_or_default();
            let seed = match common.seeds.as_deref().map(parse_seeds) {
                Some(Ok(s)) => s.first().copied(),
                Some(Err(e)) => return config_err(e),
                None => None,
            };
            let retrain_cfg = if retrain { cfg.as_ref() } else { None };
            finish(commands::run_shuffle_width(&net, factor, mode, seed, retrain_cfg, &common.out), |r| {
                println!("widths {:?} -> {:?}", r.outcome.before, r.outcome.achieved);
                if let Some(t) = &r.retrain {
                    println!("test loss {:e} -> {:e}", t.test_loss_before, t.test_loss_after);
                }
            })
        }
        Command::VerifyLemmas { common, walks, paths } => {
            let mut suite = LemmaSuite { walk_count: walks, path_samples: paths, ..Default::default() };
            if let Some(s) = &common.seeds {
                match parse_seeds(s) {
                    Ok(seeds) => suite.seeds = seeds,
                    Err(e) => return config_err(e),
                }
            }
            finish(commands::run_verify_lemmas(&suite, &common.out), |r| print!("{}", r.table()))
        }
        Command::Trace { common, grid, nets } => {
            if nets.is_empty() {
                match resolve(&common, Some(&grid)) {
                    Ok(cfg) => finish(commands::run_trace_grid(&cfg, &common.out), |r| {
                        for m in &r.means {
                            println!("{} rho={} mean trace {:e}", m.method, m.density, m.mean);
                        }
                    }),
                    Err(e) => config_err(e),
                }
            } else {
                finish(commands::run_trace_files(&nets, &common.out), |r| print!("{}", r.to_csv()))
            }
        }
        Command::Train { common, net } => match resolve(&common, None) {
            Ok(cfg) => {
                let seed = match common.seeds.as_deref().map(parse_seeds) {
                    Some(Ok(s)) => s.first().copied(),
                    Some(Err(e)) => return config_err(e),
                    None => None,
                };
                finish(commands::run_train(&net, &cfg, seed, &common.out), |r| {
                    println!("final test loss {}", crate::output::cell(r.report.final_eval_loss))
                })
            }
            Err(e) => config_err(e),
        },
    }
}
