//! Command-line front end.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dendrogram::{build_dendrogram, Dendrogram};
use crate::em::{fit_em, EmConfig, FitResult, Init};
use crate::error::{Error, Result};
use crate::harness::{
    builtin_g0, favorable_init_any, provenance, run_convergence, run_selection, Estimator,
    ExperimentConfig, Method, OmegaRule,
};
use crate::io::{
    dataset_to_csv, read_dataset, read_json, responsibilities_to_csv, to_json, write_text,
};
use crate::model::MixingMeasure;
use crate::selection::{criteria_csv, default_omega, dsc_select, information_criteria};

#[derive(Debug, Parser)]
#[command(
    name = "ggmoe",
    version,
    about = "Gaussian-gated mixture of experts: fitting, merging and order selection"
)]
struct Cli {
    /// Random seed (base seed for experiments).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file, or output directory for experiments. Defaults to stdout for single artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress and summary messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    /// Worker threads for experiment replications.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a dataset from a mixing measure and write it as CSV.
    Gen {
        #[arg(long)]
        n: usize,
        /// Measure JSON; the built-in three-expert reference when omitted.
        #[arg(long)]
        measure: Option<PathBuf>,
        /// Append the latent expert label as a `z` column.
        #[arg(long)]
        labels: bool,
    },
    /// Fit a K-expert model to a CSV dataset by EM and write the FitResult JSON.
    Fit(FitArgs),
    /// Build the merge dendrogram of a measure (or of a FitResult's measure).
    Dendro {
        #[arg(long)]
        input: PathBuf,
    },
    /// Score the dendrogram levels on a dataset and write the criterion table.
    Select {
        #[arg(long)]
        dendro: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// DSC weight; defaults to log N.
        #[arg(long)]
        omega: Option<f64>,
        /// FitResult JSONs for orders 1..K, enabling the AIC/BIC/ICL columns.
        #[arg(long, num_args = 1..)]
        fits: Vec<PathBuf>,
    },
    /// Convergence-rate study of the exact, overfitted and merged estimators.
    ExpConvergence(ExpArgs),
    /// Order-selection study comparing DSC with AIC, BIC and ICL.
    ExpSelection(ExpArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitKind {
    Random,
    Favorable,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "random")]
    init: InitKind,
    /// Reference measure for favorable initialization; the built-in one when omitted.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 0.02)]
    spread: f64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    cov_floor: f64,
    /// Also write the final responsibilities as CSV.
    #[arg(long)]
    responsibilities: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExpArgs {
    /// TOML config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_min: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    n_num: Option<usize>,
    #[arg(long)]
    n_rep: Option<usize>,
    #[arg(long)]
    k_fit: Option<usize>,
    /// Constant DSC weight instead of log N.
    #[arg(long)]
    omega: Option<f64>,
}

/// Runs the CLI on `args` (including the program name) and returns the exit code:
/// 0 on success, 1 on usage or input errors, 2 on numerical failure.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let out = cli.out.as_deref();
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Gen { n, measure, labels } => {
            let g = match measure {
                Some(p) => read_json::<MixingMeasure>(p)?,
                None => builtin_g0(),
            };
            let mut data = g.sample_dataset(*n, seed)?;
            if !labels {
                data = crate::model::Dataset::new(
                    data.dim(),
                    data.xs().to_vec(),
                    data.ys().to_vec(),
                    None,
                )?;
            }
            emit(
                out,
                &dataset_to_csv(&data, Some(&format!("seed={seed} n={n}"))),
            )
        }
        Command::Fit(args) => {
            let data = read_dataset(&args.data)?;
            let init = match args.init {
                InitKind::Random => Init::RandomSubset,
                InitKind::Favorable => {
                    let reference = match &args.reference {
                        Some(p) => read_json::<MixingMeasure>(p)?,
                        None => builtin_g0(),
                    };
                    Init::FromMeasure(favorable_init_any(&reference, args.k, args.spread, seed)?)
                }
            };
            let cfg = EmConfig {
                n_components: args.k,
                tol: args.tol,
                max_iter: args.max_iter,
                cov_floor: args.cov_floor,
                init,
                seed,
            };
            let fit = fit_em(&data, &cfg)?;
            if let Some(p) = &args.responsibilities {
                if let Some(r) = &fit.responsibilities {
                    write_text(p, &responsibilities_to_csv(r))?;
                }
            }
            if !cli.quiet {
                eprintln!(
                    "fit K={} iterations={} converged={} avg_loglik={:.6}",
                    args.k, fit.n_iter, fit.converged, fit.avg_loglik
                );
            }
            emit(out, &(to_json(&fit)? + "\n"))
        }
        Command::Dendro { input } => {
            let g = read_measure_or_fit(input)?;
            let tree = build_dendrogram(&g)?;
            emit(out, &(to_json(&tree)? + "\n"))
        }
        Command::Select {
            dendro,
            data,
            omega,
            fits,
        } => {
            let tree: Dendrogram = read_json(dendro)?;
            let data = read_dataset(data)?;
            let omega = match omega {
                Some(w) => *w,
                None => default_omega(data.len())?,
            };
            let dsc = dsc_select(&tree, &data, omega)?;
            let ic = if fits.is_empty() {
                None
            } else {
                let fits: Vec<FitResult> =
                    fits.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
                Some(information_criteria(&fits, &data)?)
            };
            if !cli.quiet {
                let mut msg = format!("selected_k dsc={}", dsc.selected_k);
                if let Some(ic) = &ic {
                    msg += &format!(
                        " aic={} bic={} icl={}",
                        ic.selected_aic, ic.selected_bic, ic.selected_icl
                    );
                }
                eprintln!("{msg}");
            }
            let preamble = format!("omega={omega:?} selected_k={}", dsc.selected_k);
            emit(out, &criteria_csv(Some(&dsc), ic.as_ref(), Some(&preamble)))
        }
        Command::ExpConvergence(args) => {
            let cfg = experiment_config(cli, args, ExperimentConfig::desk_convergence())?;
            let table = run_convergence(&cfg)?;
            let path = cfg.out_dir.join("convergence.csv");
            write_text(&path, &table.to_csv(&provenance(&cfg)))?;
            if !cli.quiet {
                for est in Estimator::ALL {
                    let slope = table
                        .rate_slope(est)
                        .map_or("n/a".into(), |s| format!("{s:.3}"));
                    eprintln!(
                        "{:<8} log-log slope of mean Voronoi loss: {slope}",
                        est.name()
                    );
                }
                let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
                eprintln!(
                    "{} rows ({failed} failed) -> {}",
                    table.rows.len(),
                    path.display()
                );
            }
            Ok(())
        }
        Command::ExpSelection(args) => {
            let cfg = experiment_config(cli, args, ExperimentConfig::desk_selection())?;
            let table = run_selection(&cfg)?;
            let path = cfg.out_dir.join("selection.csv");
            write_text(&path, &table.to_csv(&provenance(&cfg)))?;
            if !cli.quiet {
                for m in Method::ALL {
                    eprintln!(
                        "{:<4} proportion correct {:.3}, mean selected order {:.2}",
                        m.name(),
                        table.proportion_correct(m, None),
                        table.mean_selected(m, None)
                    );
                }
                eprintln!("{} rows -> {}", table.rows.len(), path.display());
            }
            Ok(())
        }
    }
}

/// Accepts either a bare measure or a FitResult wrapping one.
fn read_measure_or_fit(path: &Path) -> Result<MixingMeasure> {
    let value: serde_json::Value = read_json(path)?;
    let inner = match value.get("measure") {
        Some(m) => m.clone(),
        None => value,
    };
    serde_json::from_value(inner).map_err(|e| Error::input(path, None, e.to_string()))
}

fn experiment_config(
    cli: &Cli,
    args: &ExpArgs,
    defaults: ExperimentConfig,
) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let base = p.parent().unwrap_or(Path::new("."));
            defaults.apply_toml(&text, p, base)?
        }
        None => defaults,
    };
    if let Some(v) = args.n_min {
        cfg.n_min = v;
    }
    if let Some(v) = args.n_max {
        cfg.n_max = v;
    }
    if let Some(v) = args.n_num {
        cfg.n_num = v;
    }
    if let Some(v) = args.n_rep {
        cfg.n_rep = v;
    }
    if let Some(v) = args.k_fit {
        cfg.k_fit = v;
    }
    if let Some(w) = args.omega {
        cfg.omega_rule = OmegaRule::Constant(w);
    }
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}
