//! Command-line interface of the `hmc-kappa` binary.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde_json::json;

use hmc_kappa::spectra::{kappa, kappa_spd, nu};
use hmc_kappa::{GeneratorParams, SpdMatrix, Spectrum};

use crate::error::{LabError, Result};
use crate::experiments::{self, HmcRunSpec, StepChoice};
use crate::output::{self, ExperimentConfig, ExperimentRecord, DEFAULT_OUT, OUT_ENV};

#[derive(Debug, Parser)]
#[command(name = "hmc-kappa", version, about = "Condition numbers, step sizes and preconditioners for HMC on Gaussian targets")]
pub struct Cli {
    /// Output directory for CSV/JSON files.
    #[arg(long, global = true, env = OUT_ENV, default_value = DEFAULT_OUT)]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// κ and ν of a spectrum or covariance matrix.
    Kappa(KappaCmd),
    /// Spectrum generator.
    Spectrum {
        #[command(subcommand)]
        command: SpectrumCmd,
    },
    /// HMC chains.
    Hmc {
        #[command(subcommand)]
        command: HmcCmd,
    },
    /// Inverse-Wishart ensembles.
    Wishart {
        #[command(subcommand)]
        command: WishartCmd,
    },
    /// Burn-in planning for sample-covariance preconditioning.
    Burnin {
        #[command(subcommand)]
        command: BurninCmd,
    },
    /// Diagonal preconditioners.
    Precond {
        #[command(subcommand)]
        command: PrecondCmd,
    },
    /// Diagonal plus low-rank preconditioners.
    Lowrank {
        #[command(subcommand)]
        command: LowrankCmd,
    },
}

#[derive(Debug, Args)]
#[command(args_conflicts_with_subcommands = true)]
pub struct KappaCmd {
    /// Comma-separated scale lengths σ.
    #[arg(long, value_delimiter = ',', conflicts_with = "matrix")]
    pub sigmas: Option<Vec<f64>>,
    /// File with a symmetric positive definite covariance, one row per line.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Option<KappaSub>,
}

#[derive(Debug, Subcommand)]
pub enum KappaSub {
    /// Infer κ from tuned chains on random spectra and compare with the truth.
    Infer {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Run the full grid (N up to 512, six oversampling ratios).
        #[arg(long)]
        full_grid: bool,
        /// Override the dimensions.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
        /// Override the spectra per (dimension, generator) cell.
        #[arg(long)]
        spectra: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum SpectrumCmd {
    /// Draw a generator spectrum on uniform random points.
    Gen {
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        min: f64,
        #[arg(long, default_value_t = 5.0)]
        max: f64,
        #[arg(long, default_value_t = 0.25)]
        cutoff: f64,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum HmcCmd {
    /// Run one chain on diag(σ²).
    Run {
        /// Comma-separated scale lengths; otherwise a generator spectrum drawn
        /// from `derive_seed(seed, 0)`.
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        min: f64,
        #[arg(long, default_value_t = 5.0)]
        max: f64,
        #[arg(long, default_value_t = 0.25)]
        cutoff: f64,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        /// Target acceptance for the step-size law.
        #[arg(long, default_value_t = 0.8)]
        accept: f64,
        /// Fixed step size (overrides --accept).
        #[arg(long)]
        step_size: Option<f64>,
        /// Tune the step size on pilot chains instead of using the law.
        #[arg(long, conflicts_with = "step_size")]
        tune: bool,
        #[arg(long, default_value_t = 20_000)]
        proposals: usize,
        /// Integrate with leapfrog instead of the per-mode closed form.
        #[arg(long)]
        leapfrog: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum WishartCmd {
    /// κ of inverse-Wishart draws against the large-N formula.
    Kappa {
        #[arg(long, value_delimiter = ',', default_value = "64")]
        dims: Vec<usize>,
        /// Oversampling ratios S/N.
        #[arg(long, value_delimiter = ',', default_value = "4")]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        draws: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum BurninCmd {
    /// Optimal burn-in size and predicted speedup.
    Plan {
        /// κ₀ / N^{1/4}.
        #[arg(long)]
        kappa0_ratio: f64,
        #[arg(long)]
        dim: usize,
        /// S_f / N.
        #[arg(long)]
        final_ratio: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum PrecondCmd {
    /// Nothing vs forward-KL vs reverse-KL diagonals on random ensembles.
    Compare {
        #[arg(long, default_value_t = 100)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// κ curves of 2×2 block models as ρ₁ varies.
    Blocks {
        /// Correlations of the other blocks.
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        rest: Vec<f64>,
        #[arg(long, default_value_t = 99)]
        points: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum LowrankCmd {
    /// Fit D + UUᵀ to a circulant target by reverse KL.
    Train {
        #[arg(long, default_value_t = 128)]
        dim: usize,
        /// Generator cutoff; sets how many eigenvalues are large.
        #[arg(long, default_value_t = 0.08)]
        cutoff: f64,
        #[arg(long, default_value_t = 20)]
        rank: usize,
        /// Use the Monte Carlo loss with this many draws.
        #[arg(long, default_value_t = 0)]
        mc_draws: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Parses `argv` and runs the command. Returns the process exit code:
/// 0 on success, 1 on a runtime error, 2 on a usage error.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 {
                write!(stdout, "{}", e.render())
            } else {
                write!(stderr, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            let _ = writeln!(stderr, "error: kind={} message={}", e.kind(), message);
            1
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let out = cli.out;
    match cli.command {
        Command::Kappa(k) => match k.command {
            Some(KappaSub::Infer {
                seed,
                full_grid,
                dims,
                spectra,
            }) => {
                let mut c = experiments::inference_config(full_grid, seed);
                if let Some(d) = dims {
                    c.dims = d;
                }
                if let Some(s) = spectra {
                    c.trials = s;
                }
                finish(c, out, experiments::kappa_inference, stdout)
            }
            None => kappa_command(k.sigmas, k.matrix, out, stdout),
        },
        Command::Spectrum {
            command:
                SpectrumCmd::Gen {
                    n,
                    min,
                    max,
                    cutoff,
                    beta,
                    seed,
                },
        } => {
            let params = GeneratorParams::new(min, max, cutoff, beta)?;
            finish(experiments::spectrum_config(n, params, seed), out, experiments::spectrum_gen, stdout)
        }
        Command::Hmc {
            command:
                HmcCmd::Run {
                    sigmas,
                    n,
                    min,
                    max,
                    cutoff,
                    beta,
                    accept,
                    step_size,
                    tune,
                    proposals,
                    leapfrog,
                    seed,
                },
        } => {
            let sigmas = match sigmas {
                Some(s) => s,
                None => {
                    let params = GeneratorParams::new(min, max, cutoff, beta)?;
                    let mut rng = hmc_kappa::rng::seeded(hmc_kappa::rng::derive_seed(seed, 0));
                    hmc_kappa::spectra::random_spectrum(n, &params, &mut rng)?.sigmas().to_vec()
                }
            };
            let step = match (step_size, tune) {
                (Some(h), _) => StepChoice::Fixed { h },
                (None, true) => StepChoice::Tuned { accept },
                (None, false) => StepChoice::Theory { accept },
            };
            let spec = HmcRunSpec {
                sigmas,
                step,
                proposals,
                leapfrog,
                law_lo: hmc_kappa::integrator::IntegrationTimeLaw::DEFAULT_LO,
                law_hi: hmc_kappa::integrator::IntegrationTimeLaw::DEFAULT_HI,
            };
            let mut config = spec.config(seed)?;
            config.out = out;
            let run = experiments::hmc_run(&config, &spec)?;
            let mut paths = output::write_record(&config, &run.record)?;
            let result_path = config.out.join("hmc_run.chain.json");
            output::write_json(&result_path, &run.result)?;
            paths.push(result_path);
            report(&run.record, &paths, stdout)
        }
        Command::Wishart {
            command: WishartCmd::Kappa {
                dims,
                ratios,
                draws,
                seed,
            },
        } => finish(experiments::wishart_config(&dims, &ratios, draws, seed), out, experiments::wishart_kappa, stdout),
        Command::Burnin {
            command:
                BurninCmd::Plan {
                    kappa0_ratio,
                    dim,
                    final_ratio,
                },
        } => {
            let mut config = experiments::burnin_config(kappa0_ratio, dim, final_ratio);
            config.out = out;
            let rec = experiments::burnin_plan(&config)?;
            output::write_record(&config, &rec)?;
            for key in ["omega_star", "s_star", "s_star_ratio", "speedup"] {
                writeln!(stdout, "{key}={}", rec.summary[key])?;
            }
            Ok(())
        }
        Command::Precond {
            command: PrecondCmd::Compare { dim, trials, seed },
        } => finish(experiments::table1_config(dim, trials, seed), out, experiments::table1, stdout),
        Command::Precond {
            command: PrecondCmd::Blocks { rest, points },
        } => finish(experiments::blocks_config(&rest, points), out, experiments::precond_blocks, stdout),
        Command::Lowrank {
            command:
                LowrankCmd::Train {
                    dim,
                    cutoff,
                    rank,
                    mc_draws,
                    seed,
                },
        } => {
            let config = experiments::lowrank_config(dim, cutoff, rank, seed).with_extra("mc_draws", mc_draws);
            finish(config, out, experiments::lowrank_train, stdout)
        }
    }
}

fn finish(
    mut config: ExperimentConfig,
    out: PathBuf,
    experiment: fn(&ExperimentConfig) -> Result<ExperimentRecord>,
    stdout: &mut dyn Write,
) -> Result<()> {
    config.out = out;
    let rec = experiment(&config)?;
    let paths = output::write_record(&config, &rec)?;
    report(&rec, &paths, stdout)
}

fn report(rec: &ExperimentRecord, paths: &[PathBuf], stdout: &mut dyn Write) -> Result<()> {
    writeln!(stdout, "{}", serde_json::to_string_pretty(&rec.summary)?)?;
    if !rec.failures.is_empty() {
        writeln!(stdout, "failed trials: {}", rec.failures.len())?;
    }
    for p in paths {
        writeln!(stdout, "wrote {}", p.display())?;
    }
    Ok(())
}

fn kappa_command(
    sigmas: Option<Vec<f64>>,
    matrix: Option<PathBuf>,
    out: PathBuf,
    stdout: &mut dyn Write,
) -> Result<()> {
    let mut config = ExperimentConfig::new("kappa", 0);
    config.out = out;
    let (k, nu_value, n) = match (sigmas, matrix) {
        (Some(s), None) => {
            let spectrum = Spectrum::new(s.clone())?;
            config.extra.insert("sigmas".into(), json!(s));
            (kappa(&spectrum), nu(&spectrum), spectrum.dim())
        }
        (None, Some(path)) => {
            let m = read_matrix(&path)?;
            config.extra.insert("matrix".into(), json!(path.display().to_string()));
            let spd = SpdMatrix::new(m)?;
            let k = kappa_spd(&spd)?;
            (k, k / spd.eigenvalues()?[0].sqrt(), spd.dim())
        }
        _ => {
            return Err(LabError::InvalidConfig("give exactly one of --sigmas or --matrix".into()));
        }
    };
    writeln!(stdout, "kappa={k:.5}")?;
    writeln!(stdout, "nu={nu_value:.5}")?;
    fs::create_dir_all(&config.out)?;
    let path = config.out.join("kappa.json");
    output::write_json(
        &path,
        &json!({ "n": n, "kappa": k, "nu": nu_value, "config_hash": config.hash() }),
    )?;
    output::write_manifest(&config, &[&path])?;
    Ok(())
}

/// Reads a square matrix: one row per line, entries separated by commas or
/// whitespace. Blank lines and lines starting with `#` are skipped.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>().map_err(|e| LabError::Parse {
                    what: format!("{} line {}", path.display(), lineno + 1),
                    detail: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(LabError::Parse {
            what: path.display().to_string(),
            detail: format!("expected a square matrix, got {n} rows"),
        });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}
