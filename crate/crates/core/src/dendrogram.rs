//! Dendrogram of mixing measures: repeatedly merge the least dissimilar pair of
//! atoms and record the merge heights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::frobenius;
use crate::model::{ExpertAtom, MixingMeasure};

/// Weighted dissimilarity between two atoms:
///
/// ```text
/// π_i π_j / (π_i + π_j) · (‖Δc‖² + ‖ΔΓ‖_F + ‖Δa‖ + |Δb|² + |Δσ|)
/// ```
pub fn dissimilarity(i: &ExpertAtom, j: &ExpertAtom) -> f64 {
    let (pi, pj) = (i.weight(), j.weight());
    let dc2 = (i.gate_mean() - j.gate_mean()).norm_squared();
    let dgamma = frobenius(&(i.gate_cov() - j.gate_cov()));
    let da = (i.slope() - j.slope()).norm();
    let db = i.intercept() - j.intercept();
    let dsigma = (i.noise_var() - j.noise_var()).abs();
    pi * pj / (pi + pj) * (dc2 + dgamma + da + db * db + dsigma)
}

/// The pair `(i, j)`, `i < j`, with the smallest dissimilarity. Ties go to the
/// lexicographically smallest pair.
pub fn argmin_pair(g: &MixingMeasure) -> Result<(usize, usize)> {
    let atoms = g.atoms();
    if atoms.len() < 2 {
        return Err(Error::InvalidMeasure(
            "need at least two atoms to select a pair".into(),
        ));
    }
    let mut best = (0, 1);
    let mut best_d = f64::INFINITY;
    for i in 0..atoms.len() {
        for j in i + 1..atoms.len() {
            let d = dissimilarity(&atoms[i], &atoms[j]);
            if d < best_d {
                best_d = d;
                best = (i, j);
            }
        }
    }
    Ok(best)
}

/// Moment-matching merge of two atoms into one carrying their combined weight.
pub fn merge_atoms(p: &ExpertAtom, q: &ExpertAtom) -> Result<ExpertAtom> {
    let w = p.weight() + q.weight();
    let (wp, wq) = (p.weight() / w, q.weight() / w);
    let c = p.gate_mean() * wp + q.gate_mean() * wq;
    let b = wp * p.intercept() + wq * q.intercept();
    let (dcp, dcq) = (p.gate_mean() - &c, q.gate_mean() - &c);
    let (dbp, dbq) = (p.intercept() - b, q.intercept() - b);
    let gamma =
        (p.gate_cov() + &dcp * dcp.transpose()) * wp + (q.gate_cov() + &dcq * dcq.transpose()) * wq;
    let a = (p.slope() + &dcp * dbp) * wp + (q.slope() + &dcq * dbq) * wq;
    let sigma = wp * (p.noise_var() + dbp * dbp) + wq * (q.noise_var() + dbq * dbq);
    ExpertAtom::new(w.min(1.0), c, gamma, a, b, sigma)
}

/// Merges atoms `l1` and `l2`. The merged atom takes position `min(l1, l2)`;
/// the remaining atoms keep their relative order.
pub fn merge_pair(g: &MixingMeasure, l1: usize, l2: usize) -> Result<MixingMeasure> {
    let k = g.len();
    if k < 2 {
        return Err(Error::InvalidMeasure(
            "cannot merge a single-atom measure".into(),
        ));
    }
    for l in [l1, l2] {
        if l >= k {
            return Err(Error::IndexOutOfRange { index: l, len: k });
        }
    }
    if l1 == l2 {
        return Err(Error::InvalidMeasure(
            "cannot merge an atom with itself".into(),
        ));
    }
    let (lo, hi) = (l1.min(l2), l1.max(l2));
    let merged = merge_atoms(&g.atoms()[lo], &g.atoms()[hi])?;
    let atoms = g
        .atoms()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != hi)
        .map(|(i, a)| if i == lo { merged.clone() } else { a.clone() })
        .collect();
    MixingMeasure::new(atoms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    /// Atom count before the merge.
    pub level: usize,
    pub left_idx: usize,
    pub right_idx: usize,
    /// Index of the merged atom at level `level - 1`.
    pub merged_idx: usize,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    /// `G^(K), G^(K-1), …, G^(1)`.
    pub levels: Vec<MixingMeasure>,
    pub merges: Vec<MergeRecord>,
    /// `(h^(K), …, h^(2))`.
    pub heights: Vec<f64>,
}

impl Dendrogram {
    /// Atom count of the starting measure.
    pub fn top_order(&self) -> usize {
        self.levels.first().map_or(0, MixingMeasure::len)
    }

    /// The measure with exactly `kappa` atoms.
    pub fn level(&self, kappa: usize) -> Option<&MixingMeasure> {
        let k = self.top_order();
        if kappa == 0 || kappa > k {
            return None;
        }
        self.levels.get(k - kappa)
    }

    /// Height recorded when merging level `kappa` down to `kappa - 1`.
    pub fn height(&self, kappa: usize) -> Option<f64> {
        let k = self.top_order();
        if kappa < 2 || kappa > k {
            return None;
        }
        self.heights.get(k - kappa).copied()
    }
}

pub fn build_dendrogram(g: &MixingMeasure) -> Result<Dendrogram> {
    let mut levels = vec![g.clone()];
    let mut merges = Vec::with_capacity(g.len().saturating_sub(1));
    let mut heights = Vec::with_capacity(g.len().saturating_sub(1));
    let mut current = g.clone();
    while current.len() > 1 {
        let (i, j) = argmin_pair(&current)?;
        let height = dissimilarity(&current.atoms()[i], &current.atoms()[j]);
        let next = merge_pair(&current, i, j)?;
        merges.push(MergeRecord {
            level: current.len(),
            left_idx: i,
            right_idx: j,
            merged_idx: i,
            height,
        });
        heights.push(height);
        levels.push(next.clone());
        current = next;
    }
    Ok(Dendrogram {
        levels,
        merges,
        heights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(w: f64, c: f64) -> ExpertAtom {
        ExpertAtom::scalar(w, c, 1.0, 0.5, -0.2, 0.3).unwrap()
    }

    #[test]
    fn identical_atoms_have_zero_dissimilarity() {
        assert_eq!(dissimilarity(&atom(0.3, 1.0), &atom(0.7, 1.0)), 0.0);
    }

    #[test]
    fn mean_gap_dissimilarity() {
        let d = dissimilarity(&atom(0.5, 0.0), &atom(0.5, 2.0));
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dissimilarity_vanishes_linearly_in_small_weight() {
        let far = atom(0.5, 2.0);
        let gap = 4.0;
        for &eps in &[1e-3, 1e-6, 1e-9] {
            let d = dissimilarity(&atom(eps, 0.0), &far);
            let expected = eps * 0.5 / (eps + 0.5) * gap;
            assert!((d - expected).abs() < 1e-15);
            assert!((d / eps - gap).abs() < 1e-2);
        }
    }

    #[test]
    fn merging_copies_restores_atom() {
        let g = MixingMeasure::new(vec![atom(0.25, 1.0), atom(0.75, 1.0)]).unwrap();
        let m = merge_pair(&g, 0, 1).unwrap();
        let a = &m.atoms()[0];
        assert_eq!(m.len(), 1);
        assert!((a.weight() - 1.0).abs() < 1e-15);
        assert!((a.gate_mean()[0] - 1.0).abs() < 1e-15);
        assert!((a.gate_cov()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((a.slope()[0] - 0.5).abs() < 1e-15);
        assert!((a.noise_var() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn symmetric_merge_arithmetic() {
        let g = MixingMeasure::new(vec![atom(0.5, 0.0), atom(0.5, 2.0)]).unwrap();
        let m = merge_pair(&g, 1, 0).unwrap();
        let a = &m.atoms()[0];
        assert!((a.gate_mean()[0] - 1.0).abs() < 1e-15);
        assert!((a.gate_cov()[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn merge_errors() {
        let g = MixingMeasure::new(vec![atom(0.5, 0.0), atom(0.5, 2.0)]).unwrap();
        assert!(matches!(
            merge_pair(&g, 0, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert!(merge_pair(&g, 1, 1).is_err());
        let one = MixingMeasure::new(vec![atom(1.0, 0.0)]).unwrap();
        assert!(merge_pair(&one, 0, 1).is_err());
        assert!(argmin_pair(&one).is_err());
    }

    #[test]
    fn merge_keeps_order_and_places_at_lower_index() {
        let g = MixingMeasure::new(vec![
            atom(0.2, 0.0),
            atom(0.3, 5.0),
            atom(0.1, 9.0),
            atom(0.4, 0.1),
        ])
        .unwrap();
        let m = merge_pair(&g, 3, 0).unwrap();
        assert_eq!(m.len(), 3);
        assert!((m.atoms()[0].weight() - 0.6).abs() < 1e-15);
        assert_eq!(m.atoms()[1].gate_mean()[0], 5.0);
        assert_eq!(m.atoms()[2].gate_mean()[0], 9.0);
    }

    #[test]
    fn argmin_examples() {
        let g = MixingMeasure::new(vec![atom(0.5, 0.0), atom(0.5, 2.0)]).unwrap();
        assert_eq!(argmin_pair(&g).unwrap(), (0, 1));
        let g = MixingMeasure::new(vec![atom(0.3, 0.0), atom(0.3, 4.0), atom(0.4, 4.0)]).unwrap();
        assert_eq!(argmin_pair(&g).unwrap(), (1, 2));
        // all pairs tie at zero
        let g = MixingMeasure::new(vec![atom(0.3, 1.0), atom(0.3, 1.0), atom(0.4, 1.0)]).unwrap();
        assert_eq!(argmin_pair(&g).unwrap(), (0, 1));
    }

    #[test]
    fn trivial_dendrograms() {
        let one = MixingMeasure::new(vec![atom(1.0, 0.0)]).unwrap();
        let d = build_dendrogram(&one).unwrap();
        assert_eq!(d.levels.len(), 1);
        assert!(d.merges.is_empty() && d.heights.is_empty());

        let two = MixingMeasure::new(vec![atom(0.4, 0.0), atom(0.6, 1.0)]).unwrap();
        let d = build_dendrogram(&two).unwrap();
        assert_eq!(d.merges.len(), 1);
        assert_eq!(
            d.heights[0],
            dissimilarity(&two.atoms()[0], &two.atoms()[1])
        );
        assert_eq!(d.level(1).unwrap().len(), 1);
        assert_eq!(d.height(2), Some(d.heights[0]));
        assert_eq!(d.height(1), None);
    }

    #[test]
    fn json_round_trip() {
        let g = MixingMeasure::new(vec![atom(0.2, 0.0), atom(0.3, 5.0), atom(0.5, 9.0)]).unwrap();
        let d = build_dendrogram(&g).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        let back: Dendrogram = serde_json::from_str(&s).unwrap();
        assert_eq!(back, d);
    }
}
