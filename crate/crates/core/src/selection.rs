//! Choosing the number of experts: the dendrogram criterion and the classical
//! AIC / BIC / ICL baselines.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dendrogram::Dendrogram;
use crate::em::FitResult;
use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScores {
    pub kappa: Vec<usize>,
    pub dsc: Vec<f64>,
    pub heights: Vec<f64>,
    pub avg_loglik: Vec<f64>,
    pub omega: f64,
    pub selected_k: usize,
}

/// Index of the smallest value; ties go to the earliest entry.
fn argmin_first(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .fold(None, |best, (i, &v)| match best {
            Some((_, b)) if v >= b => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// `dsc(κ) = -(h(κ) + ω l̄(κ))` for already-computed heights and average log-likelihoods.
/// `kappa` must be increasing so that ties resolve to the smallest order.
pub fn dsc_from_parts(
    kappa: Vec<usize>,
    heights: Vec<f64>,
    avg_loglik: Vec<f64>,
    omega: f64,
) -> Result<CriterionScores> {
    if kappa.is_empty() || heights.len() != kappa.len() || avg_loglik.len() != kappa.len() {
        return Err(Error::InvalidConfig(
            "criterion inputs must be non-empty and of equal length".into(),
        ));
    }
    if kappa.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "candidate orders must be strictly increasing".into(),
        ));
    }
    if !(omega > 0.0) {
        return Err(Error::InvalidConfig("omega must be positive".into()));
    }
    let dsc: Vec<f64> = heights
        .iter()
        .zip(&avg_loglik)
        .map(|(h, l)| -(h + omega * l))
        .collect();
    let best =
        argmin_first(&dsc).ok_or_else(|| Error::Numerical("every DSC value is NaN".into()))?;
    Ok(CriterionScores {
        selected_k: kappa[best],
        kappa,
        dsc,
        heights,
        avg_loglik,
        omega,
    })
}

/// Evaluates the dendrogram selection criterion for every `κ ∈ [2, K]`.
///
/// Each level is scored by its merge height and by the average log-likelihood
/// of `data` under the merged measure itself, without refitting.
pub fn dsc_select(dendro: &Dendrogram, data: &Dataset, omega: f64) -> Result<CriterionScores> {
    let k = dendro.top_order();
    if k < 2 {
        return Err(Error::InvalidMeasure(
            "DSC needs a dendrogram with at least two atoms".into(),
        ));
    }
    let kappa: Vec<usize> = (2..=k).collect();
    let mut heights = Vec::with_capacity(kappa.len());
    let mut avg = Vec::with_capacity(kappa.len());
    for &kp in &kappa {
        heights.push(
            dendro
                .height(kp)
                .ok_or_else(|| Error::InvalidMeasure(format!("missing height at level {kp}")))?,
        );
        let level = dendro
            .level(kp)
            .ok_or_else(|| Error::InvalidMeasure(format!("missing level {kp}")))?;
        avg.push(level.avg_log_likelihood(data)?);
    }
    dsc_from_parts(kappa, heights, avg, omega)
}

/// `ω_N = log N`.
pub fn default_omega(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "default omega needs N >= 2, got {n}"
        )));
    }
    Ok((n as f64).ln())
}

/// Free parameters of a `k`-expert model on `d` inputs: weights, gate means,
/// symmetric gate covariances, slopes, intercepts and noise variances.
pub fn count_free_params(k: usize, d: usize) -> usize {
    (k - 1) + k * (d + d * (d + 1) / 2 + d + 1 + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub kappa: Vec<usize>,
    pub loglik: Vec<f64>,
    pub aic: Vec<f64>,
    pub bic: Vec<f64>,
    pub icl: Vec<f64>,
    pub selected_aic: usize,
    pub selected_bic: usize,
    pub selected_icl: usize,
}

/// AIC, BIC and ICL for one fit per order `κ = 1..=K`, in that order.
///
/// ICL is BIC plus twice the classification entropy of the fit's responsibilities.
pub fn information_criteria(fits: &[FitResult], data: &Dataset) -> Result<InformationCriteria> {
    if fits.is_empty() {
        return Err(Error::InvalidConfig("no fits supplied".into()));
    }
    let n = data.len() as f64;
    let d = data.dim();
    let mut out = InformationCriteria {
        kappa: Vec::new(),
        loglik: Vec::new(),
        aic: Vec::new(),
        bic: Vec::new(),
        icl: Vec::new(),
        selected_aic: 0,
        selected_bic: 0,
        selected_icl: 0,
    };
    for (i, fit) in fits.iter().enumerate() {
        let kappa = i + 1;
        if fit.measure.len() != kappa {
            return Err(Error::InvalidConfig(format!(
                "missing fit for order {kappa} (found a fit with {} atoms)",
                fit.measure.len()
            )));
        }
        let entropy = match &fit.responsibilities {
            Some(r) if r.n_rows() == data.len() => r.entropy(),
            _ => crate::em::e_step(&fit.measure, data)?.0.entropy(),
        };
        let ll = fit.avg_loglik * n;
        let p = count_free_params(kappa, d) as f64;
        let bic = p * n.ln() - 2.0 * ll;
        out.kappa.push(kappa);
        out.loglik.push(ll);
        out.aic.push(2.0 * p - 2.0 * ll);
        out.bic.push(bic);
        out.icl.push(bic + 2.0 * entropy);
    }
    let pick = |v: &[f64]| {
        argmin_first(v)
            .map(|i| i + 1)
            .ok_or_else(|| Error::Numerical("criterion is NaN".into()))
    };
    out.selected_aic = pick(&out.aic)?;
    out.selected_bic = pick(&out.bic)?;
    out.selected_icl = pick(&out.icl)?;
    Ok(out)
}

/// Criterion table as CSV with columns `kappa,height,avg_loglik,dsc,aic,bic,icl`.
/// Cells for criteria that were not computed at a given order are left empty.
pub fn criteria_csv(
    dsc: Option<&CriterionScores>,
    ic: Option<&InformationCriteria>,
    preamble: Option<&str>,
) -> String {
    let mut orders: Vec<usize> = Vec::new();
    if let Some(s) = dsc {
        orders.extend(&s.kappa);
    }
    if let Some(c) = ic {
        orders.extend(&c.kappa);
    }
    orders.sort_unstable();
    orders.dedup();

    let mut out = String::new();
    if let Some(p) = preamble {
        let _ = writeln!(out, "# {p}");
    }
    out.push_str("kappa,height,avg_loglik,dsc,aic,bic,icl\n");
    let cell = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
    for kp in orders {
        let di = dsc.and_then(|s| s.kappa.iter().position(|&k| k == kp));
        let ci = ic.and_then(|c| c.kappa.iter().position(|&k| k == kp));
        let height = di.map(|i| dsc.unwrap().heights[i]);
        let avg = di.map(|i| dsc.unwrap().avg_loglik[i]);
        let score = di.map(|i| dsc.unwrap().dsc[i]);
        let aic = ci.map(|i| ic.unwrap().aic[i]);
        let bic = ci.map(|i| ic.unwrap().bic[i]);
        let icl = ci.map(|i| ic.unwrap().icl[i]);
        let _ = writeln!(
            out,
            "{kp},{},{},{},{},{},{}",
            cell(height),
            cell(avg),
            cell(score),
            cell(aic),
            cell(bic),
            cell(icl)
        );
    }
    out
}
