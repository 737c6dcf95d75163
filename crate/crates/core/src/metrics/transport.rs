//! Exact discrete optimal transport by the transportation simplex (MODI method).
//!
//! The basis is kept as an explicit spanning tree of the bipartite supply/demand
//! graph, so degenerate (zero-flow) basic cells are handled without
//! perturbation. Entering and leaving cells follow Bland's smallest-index rule.

use crate::error::{Error, Result};
use crate::model::MixingMeasure;

const MARGINAL_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows × cols` coupling.
    pub flow: Vec<f64>,
    pub cost: f64,
}

/// Minimizes `Σ Q_ij C_ij` over couplings with the given marginals.
/// `cost` is row-major `supply.len() × demand.len()`.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::InvalidMeasure(
            "transport marginals must be non-empty".into(),
        ));
    }
    if cost.len() != m * n {
        return Err(Error::InvalidMeasure(format!(
            "cost matrix has {} entries, expected {}",
            cost.len(),
            m * n
        )));
    }
    if supply
        .iter()
        .chain(demand)
        .any(|&v| !(v >= 0.0 && v.is_finite()))
    {
        return Err(Error::InvalidMeasure(
            "transport marginals must be non-negative".into(),
        ));
    }
    let (ts, td): (f64, f64) = (supply.iter().sum(), demand.iter().sum());
    if (ts - td).abs() > MARGINAL_TOL * ts.max(td).max(1.0) {
        return Err(Error::InvalidMeasure(format!(
            "marginals do not match: {ts} vs {td}"
        )));
    }

    let mut flow = vec![0.0; m * n];
    let mut basic = vec![false; m * n];
    northwest_corner(supply, demand, &mut flow, &mut basic);

    let scale = cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let eps = 1e-12 * (1.0 + scale);
    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];

    for _ in 0..MAX_PIVOTS {
        potentials(m, n, cost, &basic, &mut u, &mut v);
        let entering = (0..m * n).find(|&c| !basic[c] && cost[c] - u[c / n] - v[c % n] < -eps);
        let Some(entering) = entering else {
            let total = flow.iter().zip(cost).map(|(f, c)| f * c).sum();
            return Ok(TransportPlan {
                rows: m,
                cols: n,
                flow,
                cost: total,
            });
        };
        let path = tree_path(m, n, &basic, entering / n, entering % n);
        // path runs column -> row; odd positions from the column end lose flow
        let minus: Vec<usize> = path.iter().step_by(2).copied().collect();
        let plus: Vec<usize> = path.iter().skip(1).step_by(2).copied().collect();
        let leaving = *minus
            .iter()
            .min_by(|&&a, &&b| flow[a].total_cmp(&flow[b]).then(a.cmp(&b)))
            .expect("cycle has at least one minus cell");
        let theta = flow[leaving];
        flow[entering] += theta;
        for &c in &plus {
            flow[c] += theta;
        }
        for &c in &minus {
            flow[c] -= theta;
        }
        flow[leaving] = 0.0;
        basic[leaving] = false;
        basic[entering] = true;
    }
    Err(Error::Numerical(
        "transportation simplex did not terminate".into(),
    ))
}

fn northwest_corner(supply: &[f64], demand: &[f64], flow: &mut [f64], basic: &mut [bool]) {
    let (m, n) = (supply.len(), demand.len());
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let q = s[i].min(d[j]).max(0.0);
        flow[i * n + j] = q;
        basic[i * n + j] = true;
        s[i] -= q;
        d[j] -= q;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if i == m - 1 {
            j += 1;
        } else if j == n - 1 || s[i] <= d[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
}

/// Dual potentials with `u_0 = 0` and `u_i + v_j = C_ij` on every basic cell.
fn potentials(m: usize, n: usize, cost: &[f64], basic: &[bool], u: &mut [f64], v: &mut [f64]) {
    let mut row_set = vec![false; m];
    let mut col_set = vec![false; n];
    row_set[0] = true;
    u[0] = 0.0;
    let mut stack = vec![(true, 0usize)];
    while let Some((is_row, idx)) = stack.pop() {
        if is_row {
            for j in 0..n {
                if basic[idx * n + j] && !col_set[j] {
                    v[j] = cost[idx * n + j] - u[idx];
                    col_set[j] = true;
                    stack.push((false, j));
                }
            }
        } else {
            for i in 0..m {
                if basic[i * n + idx] && !row_set[i] {
                    u[i] = cost[i * n + idx] - v[idx];
                    row_set[i] = true;
                    stack.push((true, i));
                }
            }
        }
    }
}

/// Basic cells on the tree path from column `col` to row `row`, in order.
fn tree_path(m: usize, n: usize, basic: &[bool], row: usize, col: usize) -> Vec<usize> {
    // nodes: rows 0..m, columns m..m+n; parent[node] = (parent node, cell)
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + n];
    let mut visited = vec![false; m + n];
    let start = m + col;
    visited[start] = true;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == row {
            break;
        }
        if node < m {
            for j in 0..n {
                let cell = node * n + j;
                if basic[cell] && !visited[m + j] {
                    visited[m + j] = true;
                    parent[m + j] = Some((node, cell));
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                let cell = i * n + j;
                if basic[cell] && !visited[i] {
                    visited[i] = true;
                    parent[i] = Some((node, cell));
                    queue.push_back(i);
                }
            }
        }
    }
    let mut cells = Vec::new();
    let mut node = row;
    while let Some((p, cell)) = parent[node] {
        cells.push(cell);
        node = p;
    }
    cells.reverse();
    cells
}

/// Ground cost between atoms: Euclidean distance of stacked `(c, vec Γ, a, b, σ)`.
pub fn atom_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Wasserstein-`r` distance between two mixing measures.
pub fn wasserstein_r(g: &MixingMeasure, g0: &MixingMeasure, r: f64) -> Result<f64> {
    if !(r >= 1.0 && r.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "Wasserstein order must be >= 1, got {r}"
        )));
    }
    if g.dim() != g0.dim() {
        return Err(Error::DimensionMismatch {
            expected: g0.dim(),
            found: g.dim(),
        });
    }
    let p: Vec<Vec<f64>> = g.atoms().iter().map(|a| a.stacked_params()).collect();
    let q: Vec<Vec<f64>> = g0.atoms().iter().map(|a| a.stacked_params()).collect();
    let cost: Vec<f64> = p
        .iter()
        .flat_map(|pk| q.iter().map(move |ql| atom_distance(pk, ql).powf(r)))
        .collect();
    let plan = solve_transport(&g.weights(), &g0.weights(), &cost)?;
    Ok(plan.cost.max(0.0).powf(1.0 / r))
}
