//! Maximum-likelihood fitting by expectation-maximization.
//!
//! The M-step is the closed-form maximizer of the complete-data likelihood:
//! weighted Gaussian moments for the gates and weighted least squares for the
//! affine experts.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::model::{Dataset, ExpertAtom, MixingMeasure};

/// How the first EM iterate is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Gate means at distinct data rows, global moments for everything else.
    RandomSubset,
    /// Small perturbations of a reference measure's atoms.
    Favorable {
        reference: MixingMeasure,
        spread: f64,
    },
    FromMeasure(MixingMeasure),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub n_components: usize,
    /// Threshold on the relative change of the total log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
    /// Additive covariance regularization, as a fraction of the data's average variance.
    pub cov_floor: f64,
    pub init: Init,
    pub seed: u64,
}

impl EmConfig {
    pub fn new(n_components: usize) -> Self {
        Self {
            n_components,
            tol: 1e-5,
            max_iter: 2000,
            cov_floor: 1e-8,
            init: Init::RandomSubset,
            seed: 0,
        }
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(Error::InvalidConfig(
                "n_components must be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.cov_floor) {
            return Err(Error::InvalidConfig("cov_floor must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Row-major `N × K` matrix of posterior component probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    n_rows: usize,
    n_components: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    pub fn from_rows(n_components: usize, values: Vec<f64>) -> Result<Self> {
        if n_components == 0 || values.len() % n_components != 0 {
            return Err(Error::InvalidDataset(
                "responsibility matrix has ragged rows".into(),
            ));
        }
        Ok(Self {
            n_rows: values.len() / n_components,
            n_components,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }
    pub fn n_components(&self) -> usize {
        self.n_components
    }
    #[inline]
    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.n_components..(n + 1) * self.n_components]
    }
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_components];
        for row in self.values.chunks_exact(self.n_components) {
            for (s, t) in sums.iter_mut().zip(row) {
                *s += t;
            }
        }
        sums
    }

    /// Classification entropy `-Σ_n Σ_k τ log τ`, with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        -self
            .values
            .iter()
            .filter(|&&t| t > 0.0)
            .map(|t| t * t.ln())
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub measure: MixingMeasure,
    pub loglik_trace: Vec<f64>,
    pub avg_loglik: f64,
    #[serde(skip)]
    pub responsibilities: Option<Responsibilities>,
    pub n_iter: usize,
    pub converged: bool,
}

/// Posterior responsibilities and total log-likelihood of `data` under `g`.
pub fn e_step(g: &MixingMeasure, data: &Dataset) -> Result<(Responsibilities, f64)> {
    if g.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: g.dim(),
            found: data.dim(),
        });
    }
    let k = g.len();
    let mut values = vec![0.0; data.len() * k];
    let mut total = 0.0;
    for (n, row) in values.chunks_exact_mut(k).enumerate() {
        g.log_terms_into(data.x_row(n), data.y(n), row);
        let lse = log_sum_exp(row);
        if !lse.is_finite() {
            return Err(Error::Underflow { row: n });
        }
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
        total += lse;
    }
    Ok((
        Responsibilities {
            n_rows: data.len(),
            n_components: k,
            values,
        },
        total,
    ))
}

/// Data-level scales used by the covariance and noise floors.
#[derive(Debug, Clone, Copy)]
struct Floors {
    gate: f64,
    noise: f64,
}

impl Floors {
    fn new(data: &Dataset, cov_floor: f64) -> Self {
        let (cov, _) = global_moments(data);
        let d = data.dim() as f64;
        let y_var = sample_var(data.ys());
        let gate_scale = if cov.trace() > 0.0 {
            cov.trace() / d
        } else {
            1.0
        };
        let noise_scale = if y_var > 0.0 { y_var } else { 1.0 };
        Self {
            gate: cov_floor * gate_scale,
            noise: cov_floor * noise_scale,
        }
    }
}

fn sample_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

/// Population covariance and mean of the covariates.
fn global_moments(data: &Dataset) -> (DMatrix<f64>, DVector<f64>) {
    let d = data.dim();
    let n = data.len() as f64;
    let mut mean = DVector::zeros(d);
    for i in 0..data.len() {
        for (m, x) in mean.iter_mut().zip(data.x_row(i)) {
            *m += x;
        }
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..data.len() {
        let x = data.x_row(i);
        for p in 0..d {
            let dp = x[p] - mean[p];
            for q in 0..=p {
                cov[(p, q)] += dp * (x[q] - mean[q]);
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            cov[(q, p)] = cov[(p, q)];
        }
    }
    (cov / n, mean)
}

/// Closed-form M-step. `previous` supplies parameters for components whose
/// responsibility mass vanished; without it such components are an error.
pub fn m_step(
    data: &Dataset,
    resp: &Responsibilities,
    cov_floor: f64,
    previous: Option<&MixingMeasure>,
) -> Result<MixingMeasure> {
    m_step_with(data, resp, Floors::new(data, cov_floor), previous)
}

fn m_step_with(
    data: &Dataset,
    resp: &Responsibilities,
    floors: Floors,
    previous: Option<&MixingMeasure>,
) -> Result<MixingMeasure> {
    if resp.n_rows() != data.len() {
        return Err(Error::InvalidDataset(format!(
            "responsibilities have {} rows, data has {}",
            resp.n_rows(),
            data.len()
        )));
    }
    let k = resp.n_components();
    if let Some(prev) = previous {
        if prev.len() != k {
            return Err(Error::InvalidMeasure(
                "previous measure has a different atom count".into(),
            ));
        }
    }
    let n = data.len();
    let empty_threshold = 10.0 * f64::EPSILON * n as f64;
    let column_sums = resp.column_sums();

    let mut atoms = Vec::with_capacity(k);
    for (j, &w) in column_sums.iter().enumerate() {
        if w < empty_threshold {
            let prev = previous.ok_or(Error::EmptyComponent { component: j })?;
            atoms.push(prev.atoms()[j].with_weight(1e-10 / k as f64)?);
            continue;
        }
        let mut atom = weighted_expert(data, resp, j, w, floors)?;
        atom = atom.with_weight((w / n as f64).min(1.0))?;
        atoms.push(atom);
    }
    MixingMeasure::normalized(atoms)
}

/// Weighted Gaussian moments of x and weighted least squares of y on x for component `j`.
fn weighted_expert(
    data: &Dataset,
    resp: &Responsibilities,
    j: usize,
    w: f64,
    floors: Floors,
) -> Result<ExpertAtom> {
    let d = data.dim();
    let n = data.len();

    let mut mean = DVector::zeros(d);
    let mut y_mean = 0.0;
    for i in 0..n {
        let t = resp.row(i)[j];
        for (m, x) in mean.iter_mut().zip(data.x_row(i)) {
            *m += t * x;
        }
        y_mean += t * data.y(i);
    }
    mean /= w;
    y_mean /= w;

    let mut scatter = DMatrix::zeros(d, d);
    let mut cross = DVector::zeros(d);
    let mut dx = vec![0.0; d];
    for i in 0..n {
        let t = resp.row(i)[j];
        if t == 0.0 {
            continue;
        }
        for (p, x) in data.x_row(i).iter().enumerate() {
            dx[p] = x - mean[p];
        }
        let dy = data.y(i) - y_mean;
        for p in 0..d {
            cross[p] += t * dx[p] * dy;
            for q in 0..=p {
                scatter[(p, q)] += t * dx[p] * dx[q];
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            scatter[(q, p)] = scatter[(p, q)];
        }
    }

    let slope = solve_spd(&scatter, &cross, floors.gate * w)?;
    let intercept = y_mean - slope.dot(&mean);

    let mut rss = 0.0;
    for i in 0..n {
        let t = resp.row(i)[j];
        let x = data.x_row(i);
        let r = data.y(i) - intercept - slope.iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
        rss += t * r * r;
    }

    let mut cov = scatter / w;
    for p in 0..d {
        cov[(p, p)] += floors.gate;
    }
    let noise_var = rss / w + floors.noise;

    ExpertAtom::new(1.0, mean, cov, slope, intercept, noise_var).map_err(|e| {
        Error::Numerical(format!(
            "M-step produced an invalid atom for component {j}: {e}"
        ))
    })
}

/// Solves `A v = b` for symmetric PSD `A`, falling back to a ridge of `ridge` when singular.
fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let v = ch.solve(b);
        if v.iter().all(|x| x.is_finite()) {
            return Ok(v);
        }
    }
    let mut reg = a.clone();
    let bump = if ridge > 0.0 {
        ridge
    } else {
        f64::EPSILON * (1.0 + a.trace())
    };
    for p in 0..a.nrows() {
        reg[(p, p)] += bump;
    }
    reg.cholesky()
        .map(|ch| ch.solve(b))
        .ok_or_else(|| Error::Numerical("weighted least squares system is singular".into()))
}

/// Splits `[k]` into `k0` non-empty groups; entry `i` is the group of index `i`.
pub fn random_partition<R: Rng + ?Sized>(k: usize, k0: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k0 == 0 || k < k0 {
        return Err(Error::InvalidConfig(format!(
            "cannot partition {k} indices into {k0} non-empty groups"
        )));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng);
    let mut assignment = vec![0; k];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = if pos < k0 {
            pos
        } else {
            rng.random_range(0..k0)
        };
    }
    Ok(assignment)
}

/// Favorable initialization: each of `k` atoms perturbs one reference atom, and
/// every reference atom seeds at least one of them. Locations get additive
/// Gaussian noise of scale `spread`; covariances and noise variances get
/// multiplicative log-normal noise of the same scale. Weights are uniform.
pub fn init_favorable(
    reference: &MixingMeasure,
    k: usize,
    spread: f64,
    seed: u64,
) -> Result<MixingMeasure> {
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidConfig("spread must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment = random_partition(k, reference.len(), &mut rng)?;
    let d = reference.dim();
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let atoms = assignment
        .iter()
        .map(|&t| {
            let src = &reference.atoms()[t];
            let c = src.gate_mean().map(|v| v + spread * normal());
            let gamma = src.gate_cov() * (spread * normal()).exp();
            let a = src.slope().map(|v| v + spread * normal());
            let b = src.intercept() + spread * normal();
            let sigma = src.noise_var() * (spread * normal()).exp();
            debug_assert_eq!(c.len(), d);
            ExpertAtom::new(1.0 / k as f64, c, gamma, a, b, sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    MixingMeasure::normalized(atoms)
}

fn init_random_subset(
    data: &Dataset,
    k: usize,
    floors: Floors,
    seed: u64,
) -> Result<MixingMeasure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rand::seq::index::sample(&mut rng, data.len(), k);
    let all = Responsibilities {
        n_rows: data.len(),
        n_components: 1,
        values: vec![1.0; data.len()],
    };
    let global = weighted_expert(data, &all, 0, data.len() as f64, floors)?;
    let atoms = rows
        .iter()
        .map(|r| {
            ExpertAtom::new(
                1.0 / k as f64,
                DVector::from_column_slice(data.x_row(r)),
                global.gate_cov().clone(),
                global.slope().clone(),
                global.intercept(),
                global.noise_var(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MixingMeasure::normalized(atoms)
}

fn relative_change(prev: f64, next: f64) -> f64 {
    let scale = prev.abs().max(f64::MIN_POSITIVE);
    (next - prev).abs() / scale
}

/// Runs EM until the relative log-likelihood change drops below `tol` or
/// `max_iter` M-steps have been taken.
pub fn fit_em(data: &Dataset, cfg: &EmConfig) -> Result<FitResult> {
    cfg.validate()?;
    let k = cfg.n_components;
    if data.len() < k {
        return Err(Error::InvalidConfig(format!(
            "{} rows cannot support {k} components",
            data.len()
        )));
    }
    let floors = Floors::new(data, cfg.cov_floor);
    let mut g = match &cfg.init {
        Init::RandomSubset => init_random_subset(data, k, floors, cfg.seed)?,
        Init::Favorable { reference, spread } => init_favorable(reference, k, *spread, cfg.seed)?,
        Init::FromMeasure(m) => m.clone(),
    };
    if g.len() != k {
        return Err(Error::InvalidConfig(format!(
            "initial measure has {} atoms, expected {k}",
            g.len()
        )));
    }
    if g.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: g.dim(),
        });
    }

    let mut trace = Vec::new();
    let mut n_iter = 0;
    let mut converged = false;
    let resp = loop {
        let (resp, ll) = e_step(&g, data)?;
        let prev = trace.last().copied();
        trace.push(ll);
        if let Some(prev) = prev {
            if relative_change(prev, ll) < cfg.tol {
                converged = true;
                break resp;
            }
        }
        if n_iter == cfg.max_iter {
            break resp;
        }
        g = m_step_with(data, &resp, floors, Some(&g))?;
        n_iter += 1;
    };
    let avg_loglik = trace.last().copied().unwrap_or(f64::NAN) / data.len() as f64;
    Ok(FitResult {
        measure: g,
        loglik_trace: trace,
        avg_loglik,
        responsibilities: Some(resp),
        n_iter,
        converged,
    })
}
