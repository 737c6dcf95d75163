//! Parameter-space diagnostics comparing an estimate against a reference measure.

mod transport;

pub use transport::{atom_distance, solve_transport, wasserstein_r, TransportPlan};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::frobenius;
use crate::model::{ExpertAtom, MixingMeasure};

/// Exponents `(s_c, s_Γ, s_a, s_b, s_σ)` of the per-atom loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents(pub [f64; 5]);

impl Exponents {
    /// Exponents used to assign fitted atoms to Voronoi cells.
    pub const CELL: Exponents = Exponents([2.0, 1.0, 1.0, 2.0, 1.0]);
    pub const UNIT: Exponents = Exponents([1.0; 5]);

    /// Exponents for an over-populated cell: `(r, r/2, r/2, r, r/2)`.
    pub fn overfit(r: f64) -> Self {
        Exponents([r, r / 2.0, r / 2.0, r, r / 2.0])
    }
}

/// Per-field parameter gaps `(‖Δc‖, ‖ΔΓ‖_F, ‖Δa‖, |Δb|, |Δσ|)`.
pub fn param_gaps(fitted: &ExpertAtom, reference: &ExpertAtom) -> [f64; 5] {
    [
        (fitted.gate_mean() - reference.gate_mean()).norm(),
        frobenius(&(fitted.gate_cov() - reference.gate_cov())),
        (fitted.slope() - reference.slope()).norm(),
        (fitted.intercept() - reference.intercept()).abs(),
        (fitted.noise_var() - reference.noise_var()).abs(),
    ]
}

/// `‖Δc‖^s₁ + ‖ΔΓ‖_F^s₂ + ‖Δa‖^s₃ + |Δb|^s₄ + |Δσ|^s₅`.
pub fn s_loss(fitted: &ExpertAtom, reference: &ExpertAtom, s: Exponents) -> f64 {
    param_gaps(fitted, reference)
        .iter()
        .zip(s.0)
        .map(|(g, e)| g.powf(e))
        .sum()
}

/// Rate exponents `r̄(M)` indexed by Voronoi cell size.
#[derive(Debug, Clone, PartialEq)]
pub struct RBarTable {
    /// `explicit[M - 1] = r̄(M)`.
    explicit: Vec<f64>,
    /// Used for every `M` past the explicit entries.
    tail: f64,
}

impl Default for RBarTable {
    fn default() -> Self {
        Self {
            explicit: vec![1.0, 4.0, 6.0],
            tail: 7.0,
        }
    }
}

impl RBarTable {
    pub fn new(explicit: Vec<f64>, tail: f64) -> Result<Self> {
        if explicit.first() != Some(&1.0) {
            return Err(Error::InvalidConfig("r̄(1) must be 1".into()));
        }
        let all: Vec<f64> = explicit.iter().copied().chain([tail]).collect();
        if all.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidConfig("r̄ must be non-decreasing".into()));
        }
        Ok(Self { explicit, tail })
    }

    pub fn get(&self, cell_size: usize) -> f64 {
        match cell_size {
            0 => 1.0,
            m => self.explicit.get(m - 1).copied().unwrap_or(self.tail),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoronoiAssignment {
    /// `cells[k]` lists the fitted atoms closest to reference atom `k`.
    pub cells: Vec<Vec<usize>>,
}

fn check_dims(g: &MixingMeasure, g0: &MixingMeasure) -> Result<()> {
    if g.dim() != g0.dim() {
        return Err(Error::DimensionMismatch {
            expected: g0.dim(),
            found: g.dim(),
        });
    }
    Ok(())
}

/// Assigns each fitted atom to the reference atom minimizing the `(2,1,1,2,1)`
/// loss; ties go to the smallest reference index.
pub fn voronoi_cells(g: &MixingMeasure, g0: &MixingMeasure) -> Result<VoronoiAssignment> {
    check_dims(g, g0)?;
    let mut cells = vec![Vec::new(); g0.len()];
    for (l, atom) in g.atoms().iter().enumerate() {
        let mut best = 0;
        let mut best_loss = f64::INFINITY;
        for (k, truth) in g0.atoms().iter().enumerate() {
            let loss = s_loss(atom, truth, Exponents::CELL);
            if loss < best_loss {
                best_loss = loss;
                best = k;
            }
        }
        cells[best].push(l);
    }
    Ok(VoronoiAssignment { cells })
}

/// Voronoi loss between an estimate `g` and the reference `g0`.
///
/// Cells holding one fitted atom contribute their first-order parameter gaps;
/// over-populated cells contribute powered per-atom gaps plus first-order gaps
/// of the aggregated moments of the cell. Every cell contributes its weight gap.
pub fn voronoi_loss(g: &MixingMeasure, g0: &MixingMeasure, rbar: &RBarTable) -> Result<f64> {
    let cells = voronoi_cells(g, g0)?;
    let d = g.dim();
    let mut total = 0.0;
    for (k, cell) in cells.cells.iter().enumerate() {
        let truth = &g0.atoms()[k];
        let mass: f64 = cell.iter().map(|&l| g.atoms()[l].weight()).sum();
        total += (mass - truth.weight()).abs();
        match cell.len() {
            0 => {}
            1 => {
                let atom = &g.atoms()[cell[0]];
                total += atom.weight() * s_loss(atom, truth, Exponents::UNIT);
            }
            size => {
                let exps = Exponents::overfit(rbar.get(size));
                let mut sum_dc = DVector::zeros(d);
                let mut sum_db = 0.0;
                let mut sum_gamma = DMatrix::zeros(d, d);
                let mut sum_a = DVector::zeros(d);
                let mut sum_sigma = 0.0;
                for &l in cell {
                    let atom = &g.atoms()[l];
                    let w = atom.weight();
                    total += w * s_loss(atom, truth, exps);
                    let dc = atom.gate_mean() - truth.gate_mean();
                    let db = atom.intercept() - truth.intercept();
                    sum_gamma += (atom.gate_cov() - truth.gate_cov() + &dc * dc.transpose()) * w;
                    sum_a += (atom.slope() - truth.slope() + &dc * db) * w;
                    sum_sigma += w * (atom.noise_var() - truth.noise_var() + db * db);
                    sum_dc += dc * w;
                    sum_db += w * db;
                }
                total += sum_dc.norm()
                    + sum_db.abs()
                    + frobenius(&sum_gamma)
                    + sum_a.norm()
                    + sum_sigma.abs();
            }
        }
    }
    Ok(total)
}

/// Largest per-field gaps within one Voronoi cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamErrors {
    pub c: f64,
    pub gamma: f64,
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

/// For each reference atom, the maximum gap of each field over its Voronoi cell;
/// `None` for empty cells.
pub fn matched_param_errors(
    g: &MixingMeasure,
    g0: &MixingMeasure,
) -> Result<Vec<Option<ParamErrors>>> {
    let cells = voronoi_cells(g, g0)?;
    Ok(cells
        .cells
        .iter()
        .enumerate()
        .map(|(k, cell)| {
            if cell.is_empty() {
                return None;
            }
            let mut worst = [0.0f64; 5];
            for &l in cell {
                let gaps = param_gaps(&g.atoms()[l], &g0.atoms()[k]);
                for (w, gap) in worst.iter_mut().zip(gaps) {
                    *w = w.max(gap);
                }
            }
            Some(ParamErrors {
                c: worst[0],
                gamma: worst[1],
                a: worst[2],
                b: worst[3],
                sigma: worst[4],
            })
        })
        .collect())
}
