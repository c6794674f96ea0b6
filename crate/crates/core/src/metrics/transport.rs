//! Exact discrete optimal transport by the transportation simplex.
//!
//! Start from the northwest-corner basis, price it with MODI potentials,
//! pivot around the unique basis cycle, and use Bland's smallest-index rule
//! for both entering and leaving cells so degenerate problems cannot cycle.

use super::MetricError;

/// Reduced costs above `-PRICE_TOL` count as optimal.
const PRICE_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    /// Row-major `[m, n]` flows.
    pub flow: Vec<f64>,
    pub cost: f64,
    /// Dual potentials at optimality: `cost = Σ supply·u + Σ demand·v`.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Minimum-cost transport between `supply` (m) and `demand` (n) under the
/// row-major `cost` matrix. Masses must be nonnegative with equal totals.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan, MetricError> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(MetricError::Empty);
    }
    if cost.len() != m * n {
        return Err(MetricError::DimensionMismatch { expected: m * n, found: cost.len() });
    }
    if supply.iter().chain(demand).any(|x| !(x.is_finite() && *x >= 0.0)) || cost.iter().any(|c| !c.is_finite()) {
        return Err(MetricError::Invalid("transport masses must be finite and nonnegative".into()));
    }
    let (ts, td) = (supply.iter().sum::<f64>(), demand.iter().sum::<f64>());
    if (ts - td).abs() > MASS_TOL * ts.max(td).max(1.0) {
        return Err(MetricError::Invalid(format!("supply {ts} and demand {td} differ")));
    }

    // Northwest corner: m + n - 1 basic cells, each step advancing one index.
    let mut flow = vec![0.0; m * n];
    let mut basic = vec![false; m * n];
    let (mut s, mut d) = (supply.to_vec(), demand.to_vec());
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].min(d[j]).max(0.0);
        flow[i * n + j] = x;
        basic[i * n + j] = true;
        s[i] -= x;
        d[j] -= x;
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

    let (mut u, mut v) = (vec![0.0; m], vec![0.0; n]);
    // Every basis change removes one cell, so this bound is never reached on
    // a well-posed problem; it guards against numerical stalls.
    let max_pivots = 50 * (m * n).max(16);
    for _ in 0..max_pivots {
        potentials(&basic, cost, m, n, &mut u, &mut v);
        let entering = (0..m * n).find(|&c| !basic[c] && cost[c] - u[c / n] - v[c % n] < -PRICE_TOL);
        let Some(enter) = entering else {
            let total = flow.iter().zip(cost).map(|(f, c)| f * c).sum();
            return Ok(TransportPlan { flow, cost: total, u, v });
        };
        let cycle = basis_cycle(&basic, m, n, enter);
        // cycle[0] is the entering cell (+); signs alternate.
        let leave = cycle
            .iter()
            .skip(1)
            .step_by(2)
            .copied()
            .min_by(|a, b| flow[*a].partial_cmp(&flow[*b]).unwrap().then(a.cmp(b)))
            .expect("cycle has a donor cell");
        let theta = flow[leave];
        for (k, &c) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                flow[c] += theta;
            } else {
                flow[c] = (flow[c] - theta).max(0.0);
            }
        }
        flow[leave] = 0.0;
        basic[enter] = true;
        basic[leave] = false;
    }
    Err(MetricError::Invalid("transportation simplex did not converge".into()))
}

/// Solve `u_i + v_j = c_ij` over the basis tree with `u_0 = 0`.
fn potentials(basic: &[bool], cost: &[f64], m: usize, n: usize, u: &mut [f64], v: &mut [f64]) {
    let mut row_set = vec![false; m];
    let mut col_set = vec![false; n];
    row_set[0] = true;
    u[0] = 0.0;
    let mut stack = vec![(true, 0usize)];
    while let Some((is_row, k)) = stack.pop() {
        if is_row {
            for j in 0..n {
                if basic[k * n + j] && !col_set[j] {
                    v[j] = cost[k * n + j] - u[k];
                    col_set[j] = true;
                    stack.push((false, j));
                }
            }
        } else {
            for i in 0..m {
                if basic[i * n + k] && !row_set[i] {
                    u[i] = cost[i * n + k] - v[k];
                    row_set[i] = true;
                    stack.push((true, i));
                }
            }
        }
    }
}

/// The cycle formed by adding `enter` to the basis tree, as cell indices
/// starting with `enter` and alternating row and column moves.
fn basis_cycle(basic: &[bool], m: usize, n: usize, enter: usize) -> Vec<usize> {
    let (ei, ej) = (enter / n, enter % n);
    // Tree nodes: rows 0..m, columns m..m+n. Search from column ej to row ei.
    let nodes = m + n;
    let mut parent = vec![usize::MAX; nodes];
    let start = m + ej;
    parent[start] = start;
    let mut queue = std::collections::VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        if node == ei {
            break;
        }
        if node < m {
            for j in 0..n {
                if basic[node * n + j] && parent[m + j] == usize::MAX {
                    parent[m + j] = node;
                    queue.push_back(m + j);
                }
            }
        } else {
            let j = node - m;
            for i in 0..m {
                if basic[i * n + j] && parent[i] == usize::MAX {
                    parent[i] = node;
                    queue.push_back(i);
                }
            }
        }
    }
    // Walk back from row ei to column ej, emitting the tree edges as cells.
    let mut cycle = vec![enter];
    let mut node = ei;
    while node != start {
        let p = parent[node];
        let cell = if node < m { node * n + (p - m) } else { p * n + (node - m) };
        cycle.push(cell);
        node = p;
    }
    cycle
}
