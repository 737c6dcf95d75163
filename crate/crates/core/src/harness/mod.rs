//! Seeded simulation studies: convergence rates of the exact-fitted, overfitted
//! and merged estimators, and order selection by DSC against AIC / BIC / ICL.

mod config;

pub use config::{ExperimentConfig, OmegaRule};

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dendrogram::build_dendrogram;
use crate::em::{fit_em, init_favorable, EmConfig, FitResult, Init};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::metrics::{matched_param_errors, voronoi_loss, ParamErrors, RBarTable};
use crate::model::{Dataset, ExpertAtom, MixingMeasure};
use crate::selection::{dsc_select, information_criteria};

/// The three-expert, one-dimensional reference measure of the simulation studies.
/// Atom fields are listed as `(c, Γ, a, b, σ)`.
pub fn builtin_g0() -> MixingMeasure {
    let atoms = [
        (0.3, -0.1, 0.04, 0.40, 0.34, 0.01),
        (0.4, 0.1, 0.02, -0.71, -0.33, 0.03),
        (0.3, 0.5, 0.01, 0.0, 0.2, 0.02),
    ]
    .iter()
    .map(|&(w, c, g, a, b, s)| {
        ExpertAtom::scalar(w, c, g, a, b, s).expect("reference atoms are valid")
    })
    .collect();
    MixingMeasure::new(atoms).expect("reference weights sum to one")
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replication `rep` at sample size `n`: `base_seed XOR hash(n, rep)`.
/// Depends only on its arguments, so any sub-grid reproduces the full run's rows.
pub fn replication_seed(base_seed: u64, n: usize, rep: usize) -> u64 {
    base_seed ^ mix64(mix64(n as u64) ^ rep as u64)
}

/// Independent stream for a purpose tag inside one replication.
fn sub_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag.wrapping_add(0x5151)))
}

/// Provenance comment line carried by every CSV the harness writes.
pub fn provenance(cfg: &ExperimentConfig) -> String {
    format!(
        "git={} config_hash={} seed={}",
        env!("GGMOE_GIT_DESCRIBE"),
        cfg.hash(),
        cfg.base_seed
    )
}

fn em_config(cfg: &ExperimentConfig, k: usize, init: Init, seed: u64) -> EmConfig {
    EmConfig {
        n_components: k,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        cov_floor: cfg.cov_floor,
        init,
        seed,
    }
}

/// Favorable initialization for any order: perturbs `g0` directly when
/// `k ≥ K₀`, otherwise perturbs the `k`-atom level of `g0`'s own dendrogram.
pub fn favorable_init_any(
    g0: &MixingMeasure,
    k: usize,
    spread: f64,
    seed: u64,
) -> Result<MixingMeasure> {
    if k >= g0.len() {
        return init_favorable(g0, k, spread, seed);
    }
    let tree = build_dendrogram(g0)?;
    let level = tree
        .level(k)
        .ok_or_else(|| Error::InvalidConfig(format!("order {k} is not available")))?;
    init_favorable(level, k, spread, seed)
}

fn fit_favorable(cfg: &ExperimentConfig, data: &Dataset, k: usize, seed: u64) -> Result<FitResult> {
    let init = favorable_init_any(&cfg.g0, k, cfg.spread, seed)?;
    fit_em(data, &em_config(cfg, k, Init::FromMeasure(init), seed))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

fn grid_tasks(cfg: &ExperimentConfig) -> Vec<(usize, usize)> {
    cfg.n_grid()
        .into_iter()
        .flat_map(|n| (0..cfg.n_rep).map(move |rep| (n, rep)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    ExactFit,
    Overfit,
    Merged,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::ExactFit, Estimator::Overfit, Estimator::Merged];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::ExactFit => "exact",
            Estimator::Overfit => "overfit",
            Estimator::Merged => "merged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub n_atoms: Option<usize>,
    pub voronoi_loss: Option<f64>,
    pub avg_loglik: Option<f64>,
    pub n_iter: Option<usize>,
    pub converged: Option<bool>,
    pub param_errors: Vec<Option<ParamErrors>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub k0: usize,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    /// Mean Voronoi loss per sample size for one estimator, skipping failed rows.
    pub fn mean_loss(&self, estimator: Estimator) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for row in self.rows.iter().filter(|r| r.estimator == estimator) {
            let Some(v) = row.voronoi_loss else { continue };
            match out.last_mut() {
                Some(last) if last.0 == row.n => {
                    last.1 += v;
                    last.2 += 1;
                }
                _ => out.push((row.n, v, 1)),
            }
        }
        out.into_iter().map(|(n, s, c)| (n, s / c as f64)).collect()
    }

    /// Least-squares slope of `log(mean loss)` against `log N`.
    pub fn rate_slope(&self, estimator: Estimator) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .mean_loss(estimator)
            .into_iter()
            .filter(|&(_, v)| v > 0.0)
            .map(|(n, v)| ((n as f64).ln(), v.ln()))
            .collect();
        least_squares_slope(&pts)
    }

    pub fn to_csv(&self, preamble: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {preamble}");
        let mut header = vec![
            "n",
            "rep",
            "seed",
            "estimator",
            "n_atoms",
            "voronoi_loss",
            "avg_loglik",
            "n_iter",
            "converged",
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        for k in 1..=self.k0 {
            for f in ["c", "gamma", "a", "b", "sigma"] {
                header.push(format!("err_{f}_{k}"));
            }
        }
        header.push("error".into());
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.rows {
            let mut cells = vec![
                r.n.to_string(),
                r.rep.to_string(),
                r.seed.to_string(),
                r.estimator.name().to_string(),
                opt(r.n_atoms.map(|v| v.to_string())),
                opt(r.voronoi_loss.map(fmt_f64)),
                opt(r.avg_loglik.map(fmt_f64)),
                opt(r.n_iter.map(|v| v.to_string())),
                opt(r.converged.map(|v| v.to_string())),
            ];
            for k in 0..self.k0 {
                match r.param_errors.get(k).copied().flatten() {
                    Some(e) => cells.extend([e.c, e.gamma, e.a, e.b, e.sigma].map(fmt_f64)),
                    None => cells.extend(std::iter::repeat_n(String::new(), 5)),
                }
            }
            cells.push(csv_escape(r.error.as_deref().unwrap_or("")));
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn opt(v: Option<String>) -> String {
    v.unwrap_or_default()
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn failed_row(
    n: usize,
    rep: usize,
    seed: u64,
    estimator: Estimator,
    err: &Error,
) -> ConvergenceRow {
    ConvergenceRow {
        n,
        rep,
        seed,
        estimator,
        n_atoms: None,
        voronoi_loss: None,
        avg_loglik: None,
        n_iter: None,
        converged: None,
        param_errors: Vec::new(),
        error: Some(err.to_string()),
    }
}

fn measure_row(
    cfg: &ExperimentConfig,
    base: (usize, usize, u64),
    estimator: Estimator,
    measure: &MixingMeasure,
    avg_loglik: f64,
    fit: &FitResult,
) -> Result<ConvergenceRow> {
    let rbar = RBarTable::default();
    Ok(ConvergenceRow {
        n: base.0,
        rep: base.1,
        seed: base.2,
        estimator,
        n_atoms: Some(measure.len()),
        voronoi_loss: Some(voronoi_loss(measure, &cfg.g0, &rbar)?),
        avg_loglik: Some(avg_loglik),
        n_iter: Some(fit.n_iter),
        converged: Some(fit.converged),
        param_errors: matched_param_errors(measure, &cfg.g0)?,
        error: None,
    })
}

fn convergence_replication(cfg: &ExperimentConfig, n: usize, rep: usize) -> Vec<ConvergenceRow> {
    let seed = replication_seed(cfg.base_seed, n, rep);
    let k0 = cfg.g0.len();
    let base = (n, rep, seed);
    let data = match cfg.g0.sample_dataset(n, seed) {
        Ok(d) => d,
        Err(e) => {
            return Estimator::ALL
                .iter()
                .map(|&est| failed_row(n, rep, seed, est, &e))
                .collect()
        }
    };

    let exact = fit_favorable(cfg, &data, k0, sub_seed(seed, k0 as u64))
        .and_then(|fit| {
            measure_row(
                cfg,
                base,
                Estimator::ExactFit,
                &fit.measure,
                fit.avg_loglik,
                &fit,
            )
        })
        .unwrap_or_else(|e| failed_row(n, rep, seed, Estimator::ExactFit, &e));

    let over = fit_favorable(cfg, &data, cfg.k_fit, sub_seed(seed, cfg.k_fit as u64));
    let (over_row, merged_row) = match over {
        Ok(fit) => {
            let over_row = measure_row(
                cfg,
                base,
                Estimator::Overfit,
                &fit.measure,
                fit.avg_loglik,
                &fit,
            )
            .unwrap_or_else(|e| failed_row(n, rep, seed, Estimator::Overfit, &e));
            let merged_row = build_dendrogram(&fit.measure)
                .and_then(|tree| {
                    let level = tree.level(k0).cloned().ok_or_else(|| {
                        Error::InvalidConfig("dendrogram lacks the reference order".into())
                    })?;
                    let ll = level.avg_log_likelihood(&data)?;
                    measure_row(cfg, base, Estimator::Merged, &level, ll, &fit)
                })
                .unwrap_or_else(|e| failed_row(n, rep, seed, Estimator::Merged, &e));
            (over_row, merged_row)
        }
        Err(e) => (
            failed_row(n, rep, seed, Estimator::Overfit, &e),
            failed_row(n, rep, seed, Estimator::Merged, &e),
        ),
    };
    vec![exact, over_row, merged_row]
}

/// Convergence-rate study: one row per `(N, rep, estimator)`, in grid order.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceTable> {
    cfg.validate()?;
    let tasks = grid_tasks(cfg);
    let rows: Vec<Vec<ConvergenceRow>> = pool(cfg.jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(n, rep)| convergence_replication(cfg, n, rep))
            .collect()
    });
    Ok(ConvergenceTable {
        k0: cfg.g0.len(),
        rows: rows.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dsc,
    Aic,
    Bic,
    Icl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Dsc, Method::Aic, Method::Bic, Method::Icl];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Dsc => "dsc",
            Method::Aic => "aic",
            Method::Bic => "bic",
            Method::Icl => "icl",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub method: Method,
    pub selected_k: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTable {
    pub k0: usize,
    pub rows: Vec<SelectionRow>,
}

impl SelectionTable {
    fn selections(&self, method: Method, n: Option<usize>) -> Vec<usize> {
        self.rows
            .iter()
            .filter(|r| r.method == method && n.is_none_or(|n| r.n == n))
            .filter_map(|r| r.selected_k)
            .collect()
    }

    /// Fraction of successful replications selecting the reference order.
    pub fn proportion_correct(&self, method: Method, n: Option<usize>) -> f64 {
        let s = self.selections(method, n);
        if s.is_empty() {
            return f64::NAN;
        }
        s.iter().filter(|&&k| k == self.k0).count() as f64 / s.len() as f64
    }

    pub fn mean_selected(&self, method: Method, n: Option<usize>) -> f64 {
        let s = self.selections(method, n);
        if s.is_empty() {
            return f64::NAN;
        }
        s.iter().sum::<usize>() as f64 / s.len() as f64
    }

    pub fn to_csv(&self, preamble: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {preamble}");
        out.push_str("n,rep,seed,method,selected_k,correct,error\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.n,
                r.rep,
                r.seed,
                r.method.name(),
                opt(r.selected_k.map(|k| k.to_string())),
                opt(r.selected_k.map(|k| u8::from(k == self.k0).to_string())),
                csv_escape(r.error.as_deref().unwrap_or(""))
            );
        }
        out
    }
}

fn selection_replication(cfg: &ExperimentConfig, n: usize, rep: usize) -> Vec<SelectionRow> {
    let seed = replication_seed(cfg.base_seed, n, rep);
    let row = |method: Method, res: Result<usize>| SelectionRow {
        n,
        rep,
        seed,
        method,
        selected_k: res.as_ref().ok().copied(),
        error: res.err().map(|e| e.to_string()),
    };
    let data = match cfg.g0.sample_dataset(n, seed) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return Method::ALL
                .iter()
                .map(|&m| row(m, Err(Error::Numerical(msg.clone()))))
                .collect();
        }
    };

    // fits for every order; the largest one doubles as the DSC input
    let fits: Vec<Result<FitResult>> = (1..=cfg.k_fit)
        .map(|k| fit_favorable(cfg, &data, k, sub_seed(seed, k as u64)))
        .collect();

    let dsc = match &fits[cfg.k_fit - 1] {
        Ok(fit) => cfg
            .omega_rule
            .omega(n)
            .and_then(|omega| dsc_select(&build_dendrogram(&fit.measure)?, &data, omega))
            .map(|s| s.selected_k),
        Err(e) => Err(Error::Numerical(e.to_string())),
    };

    let baseline: Result<Vec<FitResult>> = fits
        .into_iter()
        .map(|f| f.map_err(|e| Error::Numerical(format!("baseline fit failed: {e}"))))
        .collect();
    let ic = baseline.and_then(|fits| information_criteria(&fits, &data));
    let (aic, bic, icl) = match ic {
        Ok(ic) => (
            Ok(ic.selected_aic),
            Ok(ic.selected_bic),
            Ok(ic.selected_icl),
        ),
        Err(e) => {
            let msg = e.to_string();
            (
                Err(Error::Numerical(msg.clone())),
                Err(Error::Numerical(msg.clone())),
                Err(Error::Numerical(msg)),
            )
        }
    };
    vec![
        row(Method::Dsc, dsc),
        row(Method::Aic, aic),
        row(Method::Bic, bic),
        row(Method::Icl, icl),
    ]
}

/// Order-selection study: one row per `(N, rep, method)`, in grid order.
pub fn run_selection(cfg: &ExperimentConfig) -> Result<SelectionTable> {
    cfg.validate()?;
    let tasks = grid_tasks(cfg);
    let rows: Vec<Vec<SelectionRow>> = pool(cfg.jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(n, rep)| selection_replication(cfg, n, rep))
            .collect()
    });
    Ok(SelectionTable {
        k0: cfg.g0.len(),
        rows: rows.into_iter().flatten().collect(),
    })
}
