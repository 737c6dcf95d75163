//! Gaussian-gated Gaussian mixture of experts: parameters, densities and sampling.
//!
//! The joint density of an input `x ∈ R^D` and a scalar response `y` is
//!
//! ```text
//! p_G(x, y) = Σ_k π_k N(x; c_k, Γ_k) N(y; a_k x + b_k, σ_k)
//! ```
//!
//! where `Γ_k` is the gate covariance and `σ_k` the expert noise *variance*.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_spd, log_normal_pdf, log_sum_exp, GaussianFactor};

/// One weighted expert `π δ_(c, Γ, a, b, σ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AtomRecord", into = "AtomRecord")]
pub struct ExpertAtom {
    weight: f64,
    gate_mean: DVector<f64>,
    gate_cov: DMatrix<f64>,
    slope: DVector<f64>,
    intercept: f64,
    noise_var: f64,
    gate: GaussianFactor,
    log_weight: f64,
    expert_log_norm: f64,
}

impl ExpertAtom {
    pub fn new(
        weight: f64,
        gate_mean: DVector<f64>,
        gate_cov: DMatrix<f64>,
        slope: DVector<f64>,
        intercept: f64,
        noise_var: f64,
    ) -> Result<Self> {
        let dim = gate_mean.len();
        if dim == 0 {
            return Err(Error::InvalidAtom(
                "input dimension must be at least 1".into(),
            ));
        }
        if gate_cov.nrows() != dim || gate_cov.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: gate_cov.nrows(),
            });
        }
        if slope.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: slope.len(),
            });
        }
        if !(weight > 0.0 && weight <= 1.0 + 1e-12) {
            return Err(Error::InvalidAtom(format!(
                "weight {weight} outside (0, 1]"
            )));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidAtom(format!(
                "noise variance {noise_var} must be positive"
            )));
        }
        if gate_mean.iter().chain(slope.iter()).any(|v| !v.is_finite()) || !intercept.is_finite() {
            return Err(Error::InvalidAtom("non-finite location parameters".into()));
        }
        check_spd(&gate_cov, "gate covariance")?;
        let gate_cov = (&gate_cov + gate_cov.transpose()) * 0.5;
        let gate = GaussianFactor::new(&gate_mean, &gate_cov)?;
        Ok(Self {
            weight,
            gate_mean,
            gate_cov,
            slope,
            intercept,
            noise_var,
            gate,
            log_weight: weight.ln(),
            expert_log_norm: log_normal_pdf(0.0, 0.0, noise_var),
        })
    }

    /// Scalar convenience constructor for `D = 1`.
    pub fn scalar(weight: f64, c: f64, gamma: f64, a: f64, b: f64, sigma: f64) -> Result<Self> {
        Self::new(
            weight,
            DVector::from_element(1, c),
            DMatrix::from_element(1, 1, gamma),
            DVector::from_element(1, a),
            b,
            sigma,
        )
    }

    pub fn dim(&self) -> usize {
        self.gate_mean.len()
    }
    pub fn weight(&self) -> f64 {
        self.weight
    }
    pub fn gate_mean(&self) -> &DVector<f64> {
        &self.gate_mean
    }
    pub fn gate_cov(&self) -> &DMatrix<f64> {
        &self.gate_cov
    }
    /// Slope row vector `a`, stored as a column.
    pub fn slope(&self) -> &DVector<f64> {
        &self.slope
    }
    pub fn intercept(&self) -> f64 {
        self.intercept
    }
    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Same parameters with a different weight. The factorization is reused.
    pub fn with_weight(&self, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0 + 1e-12) {
            return Err(Error::InvalidAtom(format!(
                "weight {weight} outside (0, 1]"
            )));
        }
        Ok(Self {
            weight,
            log_weight: weight.ln(),
            ..self.clone()
        })
    }

    /// Parameters stacked as `(c, vec Γ, a, b, σ)` with Γ in row-major order.
    pub fn stacked_params(&self) -> Vec<f64> {
        let d = self.dim();
        let mut v = Vec::with_capacity(2 * d + d * d + 2);
        v.extend(self.gate_mean.iter());
        for i in 0..d {
            for j in 0..d {
                v.push(self.gate_cov[(i, j)]);
            }
        }
        v.extend(self.slope.iter());
        v.push(self.intercept);
        v.push(self.noise_var);
        v
    }

    #[inline]
    pub fn expert_mean(&self, x: &[f64]) -> f64 {
        self.slope.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.intercept
    }

    #[inline]
    pub fn log_gate(&self, x: &[f64]) -> f64 {
        self.gate.log_pdf(x)
    }

    #[inline]
    pub fn log_expert(&self, x: &[f64], y: f64) -> f64 {
        let r = y - self.expert_mean(x);
        self.expert_log_norm - 0.5 * r * r / self.noise_var
    }

    /// `log π + log N(x; c, Γ) + log N(y; a x + b, σ)`.
    #[inline]
    pub fn log_joint_term(&self, x: &[f64], y: f64) -> f64 {
        self.log_weight + self.log_gate(x) + self.log_expert(x, y)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AtomRecord {
    weight: f64,
    gate_mean: Vec<f64>,
    gate_cov: Vec<f64>,
    slope: Vec<f64>,
    intercept: f64,
    noise_var: f64,
}

impl TryFrom<AtomRecord> for ExpertAtom {
    type Error = Error;

    fn try_from(r: AtomRecord) -> Result<Self> {
        let d = r.gate_mean.len();
        if r.gate_cov.len() != d * d {
            return Err(Error::InvalidAtom(format!(
                "gate_cov has {} entries, expected {}",
                r.gate_cov.len(),
                d * d
            )));
        }
        ExpertAtom::new(
            r.weight,
            DVector::from_vec(r.gate_mean),
            DMatrix::from_row_slice(d, d, &r.gate_cov),
            DVector::from_vec(r.slope),
            r.intercept,
            r.noise_var,
        )
    }
}

impl From<ExpertAtom> for AtomRecord {
    fn from(a: ExpertAtom) -> Self {
        let d = a.dim();
        let mut cov = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                cov.push(a.gate_cov[(i, j)]);
            }
        }
        AtomRecord {
            weight: a.weight,
            gate_mean: a.gate_mean.iter().copied().collect(),
            gate_cov: cov,
            slope: a.slope.iter().copied().collect(),
            intercept: a.intercept,
            noise_var: a.noise_var,
        }
    }
}

/// Finite discrete probability measure over expert atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRecord", into = "MeasureRecord")]
pub struct MixingMeasure {
    dim: usize,
    atoms: Vec<ExpertAtom>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeasureRecord {
    dim: usize,
    atoms: Vec<ExpertAtom>,
}

impl TryFrom<MeasureRecord> for MixingMeasure {
    type Error = Error;

    fn try_from(r: MeasureRecord) -> Result<Self> {
        let m = MixingMeasure::new(r.atoms)?;
        if m.dim != r.dim {
            return Err(Error::DimensionMismatch {
                expected: r.dim,
                found: m.dim,
            });
        }
        Ok(m)
    }
}

impl From<MixingMeasure> for MeasureRecord {
    fn from(m: MixingMeasure) -> Self {
        MeasureRecord {
            dim: m.dim,
            atoms: m.atoms,
        }
    }
}

pub const WEIGHT_SUM_TOL: f64 = 1e-10;

impl MixingMeasure {
    pub fn new(atoms: Vec<ExpertAtom>) -> Result<Self> {
        let first = atoms.first().ok_or_else(|| {
            Error::InvalidMeasure("a mixing measure needs at least one atom".into())
        })?;
        let dim = first.dim();
        if let Some(bad) = atoms.iter().find(|a| a.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(Self { dim, atoms })
    }

    /// Builds a measure after rescaling the atom weights to sum to one.
    pub fn normalized(atoms: Vec<ExpertAtom>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidMeasure(format!(
                "cannot normalize total weight {total}"
            )));
        }
        let atoms = atoms
            .iter()
            .map(|a| a.with_weight(a.weight / total))
            .collect::<Result<Vec<_>>>()?;
        Self::new(atoms)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn atoms(&self) -> &[ExpertAtom] {
        &self.atoms
    }
    pub fn len(&self) -> usize {
        self.atoms.len()
    }
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
    pub fn weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight).collect()
    }
    pub fn into_atoms(self) -> Vec<ExpertAtom> {
        self.atoms
    }

    /// Reorders atoms so that output atom `i` is input atom `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() {
            return Err(Error::InvalidMeasure("permutation length mismatch".into()));
        }
        for &i in order {
            if i >= self.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidMeasure("not a permutation".into()));
            }
        }
        Ok(Self {
            dim: self.dim,
            atoms: order.iter().map(|&i| self.atoms[i].clone()).collect(),
        })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Per-atom log terms `log π_k + log N(x; c_k, Γ_k) + log N(y; a_k x + b_k, σ_k)` into `out`.
    #[inline]
    pub(crate) fn log_terms_into(&self, x: &[f64], y: f64, out: &mut [f64]) {
        for (o, a) in out.iter_mut().zip(&self.atoms) {
            *o = a.log_joint_term(x, y);
        }
    }

    pub fn log_density_joint(&self, x: &[f64], y: f64) -> Result<f64> {
        self.check_dim(x)?;
        let mut terms = vec![0.0; self.len()];
        self.log_terms_into(x, y, &mut terms);
        Ok(log_sum_exp(&terms))
    }

    pub fn density_joint(&self, x: &[f64], y: f64) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self
            .atoms
            .iter()
            .map(|a| a.weight * (a.log_gate(x) + a.log_expert(x, y)).exp())
            .sum())
    }

    /// Input-conditional expert probabilities `π_k N(x; c_k, Γ_k) / Σ_j π_j N(x; c_j, Γ_j)`.
    pub fn gating_posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let logs: Vec<f64> = self
            .atoms
            .iter()
            .map(|a| a.weight.ln() + a.log_gate(x))
            .collect();
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            return Err(Error::Numerical(
                "gate densities underflow at every component".into(),
            ));
        }
        Ok(logs.iter().map(|l| (l - lse).exp()).collect())
    }

    pub fn predict_conditional_mean(&self, x: &[f64]) -> Result<f64> {
        let post = self.gating_posterior(x)?;
        Ok(post
            .iter()
            .zip(&self.atoms)
            .map(|(p, a)| p * a.expert_mean(x))
            .sum())
    }

    /// `(1/N) Σ_n log p_G(x_n, y_n)`.
    pub fn avg_log_likelihood(&self, data: &Dataset) -> Result<f64> {
        Ok(self.total_log_likelihood(data)? / data.len() as f64)
    }

    pub fn total_log_likelihood(&self, data: &Dataset) -> Result<f64> {
        if data.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: data.dim(),
            });
        }
        let mut terms = vec![0.0; self.len()];
        let mut total = 0.0;
        for n in 0..data.len() {
            self.log_terms_into(data.x_row(n), data.y(n), &mut terms);
            let l = log_sum_exp(&terms);
            if !l.is_finite() {
                return Err(Error::Underflow { row: n });
            }
            total += l;
        }
        Ok(total)
    }

    /// Draws `n` i.i.d. rows: `z ~ Cat(π)`, `x ~ N(c_z, Γ_z)`, `y ~ N(a_z x + b_z, σ_z)`.
    pub fn sample_dataset(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::InvalidDataset(
                "sample size must be at least 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picker = WeightedIndex::new(self.weights())
            .map_err(|e| Error::InvalidMeasure(format!("bad weights: {e}")))?;
        let d = self.dim;
        let mut x = vec![0.0; n * d];
        let mut y = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut xi = vec![0.0; d];
        for row in 0..n {
            let z = picker.sample(&mut rng);
            let atom = &self.atoms[z];
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let xr = &mut x[row * d..(row + 1) * d];
            atom.gate.transform_standard(&xi, xr);
            let e: f64 = rng.sample(StandardNormal);
            y.push(atom.expert_mean(xr) + atom.noise_var.sqrt() * e);
            labels.push(z);
        }
        Dataset::new(d, x, y, Some(labels))
    }
}

/// Observed covariates and responses, optionally with the generating labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    /// `x` is row-major with `dim` columns.
    pub fn new(dim: usize, x: Vec<f64>, y: Vec<f64>, labels: Option<Vec<usize>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDataset("dimension must be at least 1".into()));
        }
        if y.is_empty() {
            return Err(Error::InvalidDataset(
                "dataset must contain at least one row".into(),
            ));
        }
        if x.len() != y.len() * dim {
            return Err(Error::InvalidDataset(format!(
                "x has {} values, expected {} rows x {} columns",
                x.len(),
                y.len(),
                dim
            )));
        }
        if let Some(l) = &labels {
            if l.len() != y.len() {
                return Err(Error::InvalidDataset(
                    "label count differs from row count".into(),
                ));
            }
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite value".into()));
        }
        Ok(Self { dim, x, y, labels })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    #[inline]
    pub fn x_row(&self, n: usize) -> &[f64] {
        &self.x[n * self.dim..(n + 1) * self.dim]
    }
    #[inline]
    pub fn y(&self, n: usize) -> f64 {
        self.y[n]
    }
    pub fn ys(&self) -> &[f64] {
        &self.y
    }
    pub fn xs(&self) -> &[f64] {
        &self.x
    }
    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }
}
