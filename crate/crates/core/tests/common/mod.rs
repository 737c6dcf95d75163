//! Test-only oracles, kept independent of the library's numerical paths.
#![allow(dead_code, clippy::excessive_precision)]

use ggmoe::{ExpertAtom, MixingMeasure};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Reference atoms as `(π, c, Γ, a, b, σ)`.
pub const G0_ATOMS: [(f64, f64, f64, f64, f64, f64); 3] = [
    (0.3, -0.1, 0.04, 0.40, 0.34, 0.01),
    (0.4, 0.1, 0.02, -0.71, -0.33, 0.03),
    (0.3, 0.5, 0.01, 0.0, 0.2, 0.02),
];

fn normal_pdf(v: f64, mean: f64, var: f64) -> f64 {
    (-(v - mean) * (v - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Term-by-term scalar evaluation of the reference joint density.
pub fn g0_density(x: f64, y: f64) -> f64 {
    G0_ATOMS
        .iter()
        .map(|&(w, c, g, a, b, s)| w * normal_pdf(x, c, g) * normal_pdf(y, a * x + b, s))
        .sum()
}

pub fn g0_gates(x: f64) -> Vec<f64> {
    let raw: Vec<f64> = G0_ATOMS
        .iter()
        .map(|&(w, c, g, ..)| w * normal_pdf(x, c, g))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

pub fn g0_conditional_mean(x: f64) -> f64 {
    g0_gates(x)
        .iter()
        .zip(G0_ATOMS.iter())
        .map(|(p, &(_, _, _, a, b, _))| p * (a * x + b))
        .sum()
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod quadrature by recursive bisection.
pub fn integrate(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        if err <= tol || depth >= 40 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, 0.5 * tol, depth + 1) + rec(f, m, b, 0.5 * tol, depth + 1)
    }
    rec(f, a, b, tol, 0)
}

/// Minimum transport cost by enumerating every basic solution of the
/// transportation polytope.
pub fn brute_force_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let (m, n) = (supply.len(), demand.len());
    let cells = m * n;
    let basis = m + n - 1;
    let mut best = f64::INFINITY;
    let mut subset: Vec<usize> = (0..basis).collect();
    loop {
        // equality system restricted to the chosen cells, last demand row dropped
        let mut a = DMatrix::<f64>::zeros(basis, basis);
        let mut rhs = DVector::<f64>::zeros(basis);
        for (col, &cell) in subset.iter().enumerate() {
            let (i, j) = (cell / n, cell % n);
            a[(i, col)] = 1.0;
            if j + 1 < n {
                a[(m + j, col)] = 1.0;
            }
        }
        for i in 0..m {
            rhs[i] = supply[i];
        }
        for j in 0..n - 1 {
            rhs[m + j] = demand[j];
        }
        let lu = a.clone().lu();
        if lu.determinant().abs() > 1e-9 {
            if let Some(q) = lu.solve(&rhs) {
                if q.iter().all(|&v| v >= -1e-12) {
                    let c: f64 = subset
                        .iter()
                        .zip(q.iter())
                        .map(|(&cell, &v)| v * cost[cell])
                        .sum();
                    best = best.min(c);
                }
            }
        }
        // next combination in lexicographic order
        let Some(i) = (0..basis).rev().find(|&i| subset[i] < i + cells - basis) else {
            return best;
        };
        subset[i] += 1;
        for k in i + 1..basis {
            subset[k] = subset[k - 1] + 1;
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let l = DMatrix::from_fn(d, d, |_, _| 0.5 * normal(rng));
    &l * l.transpose() + DMatrix::identity(d, d) * 0.1
}

pub fn random_atom(rng: &mut ChaCha8Rng, d: usize, weight: f64) -> ExpertAtom {
    let c = DVector::from_fn(d, |_, _| normal(rng));
    let a = DVector::from_fn(d, |_, _| normal(rng));
    let gamma = random_spd(rng, d);
    let b = normal(rng);
    let sigma = 0.05 + rng.random::<f64>();
    ExpertAtom::new(weight, c, gamma, a, b, sigma).unwrap()
}

pub fn random_measure(rng: &mut ChaCha8Rng, k: usize, d: usize) -> MixingMeasure {
    let raw: Vec<f64> = (0..k).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let atoms = raw.iter().map(|w| random_atom(rng, d, w / total)).collect();
    MixingMeasure::normalized(atoms).unwrap()
}

/// Every permutation of `0..k`.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn stacked(a: &ExpertAtom) -> Vec<f64> {
    let mut v: Vec<f64> = a.gate_mean().iter().copied().collect();
    v.extend(a.gate_cov().transpose().iter());
    v.extend(a.slope().iter());
    v.push(a.intercept());
    v.push(a.noise_var());
    v
}

/// Largest Euclidean parameter distance under the best one-to-one matching of
/// equally sized measures.
pub fn matched_max_distance(g: &MixingMeasure, h: &MixingMeasure) -> f64 {
    assert_eq!(g.len(), h.len());
    let sg: Vec<Vec<f64>> = g.atoms().iter().map(stacked).collect();
    let sh: Vec<Vec<f64>> = h.atoms().iter().map(stacked).collect();
    permutations(g.len())
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .map(|(i, &j)| {
                    sg[i]
                        .iter()
                        .zip(&sh[j])
                        .map(|(u, v)| (u - v) * (u - v))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Largest violation of the five moment identities of a two-atom merge:
/// weight, `πc`, `πb`, `π(Γ + ccᵀ)`, `π(a + b c)` and `π(σ + b²)`.
pub fn merge_moment_gap(p: &ExpertAtom, q: &ExpertAtom, merged: &ExpertAtom) -> f64 {
    let parts = [p, q];
    let sum = |f: &dyn Fn(&ExpertAtom) -> DMatrix<f64>| -> DMatrix<f64> {
        parts
            .iter()
            .map(|a| f(a) * a.weight())
            .fold(f(p) * 0.0, |acc, m| acc + m)
    };
    let c = |a: &ExpertAtom| DMatrix::from_column_slice(a.dim(), 1, a.gate_mean().as_slice());
    let b = |a: &ExpertAtom| DMatrix::from_element(1, 1, a.intercept());
    let second_c = |a: &ExpertAtom| a.gate_cov() + c(a) * c(a).transpose();
    let cross = |a: &ExpertAtom| {
        DMatrix::from_column_slice(a.dim(), 1, a.slope().as_slice()) + c(a) * a.intercept()
    };
    let second_b =
        |a: &ExpertAtom| DMatrix::from_element(1, 1, a.noise_var() + a.intercept() * a.intercept());
    let w = merged.weight();
    let checks: [(&dyn Fn(&ExpertAtom) -> DMatrix<f64>, &str); 5] = [
        (&c, "c"),
        (&b, "b"),
        (&second_c, "gamma"),
        (&cross, "a"),
        (&second_b, "sigma"),
    ];
    let mut gap = (w - p.weight() - q.weight()).abs();
    for (f, _) in checks.iter() {
        gap = gap.max((f(merged) * w - sum(*f)).amax());
    }
    gap
}
