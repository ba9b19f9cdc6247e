//! Command line driver: solves single optimality systems, runs the
//! convergence, sample and level studies, the Monte Carlo baseline and the
//! univariate quadrature bound sweep.
//!
//! Exit codes: 0 on success, 1 on validation errors (arguments, config),
//! 2 on numerical failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sparseoc::experiments::{
    self, desk_preset, output, paper_preset, ExperimentConfig, ExperimentError,
};
use sparseoc::montecarlo::sample_vector;
use sparseoc::quad1d;

#[derive(Parser)]
#[command(
    name = "sparseoc",
    about = "Sparse Gauss-Hermite quadrature for elliptic optimal control \
             under lognormal diffusion",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// 257 mesh nodes / parameter dimensions, 2000 indices.
    Desk,
    /// 1025 nodes / dimensions, 10^4 quadrature points. Slow.
    Paper,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON experiment config; defaults to the selected preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV/JSON files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Built-in preset used when no config file is given.
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    preset: Preset,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Validation(format!("cannot read config {}: {e}", path.display()))
                })?;
                ExperimentConfig::from_json(&text)
                    .map_err(|e| CliError::Validation(format!("invalid config: {e}")))?
            }
            None => match self.preset {
                Preset::Desk => desk_preset(),
                Preset::Paper => paper_preset(),
            },
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
            config.mc.seed = seed;
        }
        config
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(config)
    }

    fn out_dir(&self, config: &ExperimentConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the optimality system at one parameter vector and write
    /// solution.csv (columns x, u, v, z).
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Inline parameter vector as a JSON array; shorter vectors are
        /// zero-padded to the truncation dimension. Defaults to a seeded
        /// standard-normal sample.
        #[arg(long)]
        y: Option<String>,
    },
    /// Run the adaptive constructions in both indicator modes plus the
    /// Monte Carlo baseline; write per-step CSVs and rates.json.
    Converge {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve at seeded random samples; write per-sample state and control
    /// curves with their means.
    Samples {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of samples.
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Run the adaptive construction in the configured mode and write the
    /// per-dimension maximum levels.
    Levels {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep |Q_nu[H_l]| and write the table as CSV.
    Quadcheck {
        /// Largest univariate level.
        #[arg(long, default_value_t = 20)]
        nu_max: u32,
        /// Largest Hermite degree.
        #[arg(long, default_value_t = 100)]
        l_max: u32,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the Monte Carlo study alone against a sparse reference.
    Mc {
        #[command(flatten)]
        common: CommonArgs,
    },
}

enum CliError {
    Validation(String),
    Numerical(String),
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_) | ExperimentError::Field(_) | ExperimentError::Json(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { common, y } => {
            let config = common.load()?;
            let out = common.out_dir(&config);
            let dim = config.field.dim;
            let y = match y {
                Some(text) => {
                    let mut v: Vec<f64> = serde_json::from_str(&text).map_err(|e| {
                        CliError::Validation(format!("--y must be a JSON array of numbers: {e}"))
                    })?;
                    if v.len() > dim {
                        return Err(CliError::Validation(format!(
                            "--y has {} entries but the field has {} dimensions",
                            v.len(),
                            dim
                        )));
                    }
                    v.resize(dim, 0.0);
                    v
                }
                None => sample_vector(config.seed, 0, dim),
            };
            experiments::run_solve(&config, &y, &out)?;
            println!("wrote {}", out.join("solution.csv").display());
            Ok(())
        }
        Command::Converge { common } => {
            let config = common.load()?;
            let out = common.out_dir(&config);
            let report = experiments::run_convergence(&config, &out)?;
            println!(
                "alpha = {}: slope vs indices {:.3} (apriori) / {:.3} (aposteriori), mc slope {:.3}",
                report.alpha,
                report.apriori.slope_vs_indices,
                report.aposteriori.slope_vs_indices,
                report.mc_slope,
            );
            println!(
                "wrote convergence CSVs and rates.json under {}",
                out.display()
            );
            Ok(())
        }
        Command::Samples { common, n } => {
            let config = common.load()?;
            let out = common.out_dir(&config);
            let report = experiments::run_samples(&config, n, config.seed, &out)?;
            println!(
                "{} samples; mean control is {:.4} relative L2 from z_d; files under {}",
                report.n_samples,
                report.mean_control_rel_l2,
                out.display()
            );
            Ok(())
        }
        Command::Levels { common } => {
            let config = common.load()?;
            let out = common.out_dir(&config);
            let report = experiments::run_levels(&config, &out)?;
            println!(
                "{} indices; {} dimensions active in the index set, {} in its closure; wrote {}",
                report.n_indices,
                report.active_in_lambda,
                report.active_in_lambda_bar,
                out.join("levels.csv").display()
            );
            Ok(())
        }
        Command::Quadcheck { nu_max, l_max, out } => {
            let report = quad1d::hermite_bound_report(nu_max, l_max)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            std::fs::create_dir_all(&out).map_err(|e| CliError::Numerical(e.to_string()))?;
            let path = out.join("hermite_bounds.csv");
            write_bound_csv(&path, &report)?;
            println!(
                "max |Q_nu[H_l]| over nu <= {nu_max}, l <= {l_max}: {:.12}; {} entries above 2; wrote {}",
                report.max_abs,
                report.flagged.len(),
                path.display()
            );
            Ok(())
        }
        Command::Mc { common } => {
            let config = common.load()?;
            let out = common.out_dir(&config);
            let report = experiments::run_mc(&config, &out)?;
            println!(
                "mc slope {:.3} over {} schedule points; wrote {}",
                report.slope,
                config.mc.schedule.len(),
                out.join("mc.csv").display()
            );
            Ok(())
        }
    }
}

fn write_bound_csv(path: &Path, report: &quad1d::HermiteBoundReport) -> Result<(), CliError> {
    output::write_hermite_bound_csv(path, report).map_err(|e| CliError::Numerical(e.to_string()))
}
