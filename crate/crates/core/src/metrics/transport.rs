//! Exact balanced transportation problem.
//!
//! Transportation simplex: a northwest-corner basis of `m + n - 1` cells,
//! node potentials from the basis tree, and pivots on the cell of most
//! negative reduced cost around its unique tree cycle. After a run of
//! degenerate pivots the entering and leaving choices switch to lowest
//! index (Bland), which cannot cycle.

use std::collections::VecDeque;

use super::MetricError;

/// Mass tolerance for the balance check.
pub const BALANCE_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    /// Row-major `m x n` flows.
    pub flow: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub objective: f64,
}

impl TransportPlan {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.flow[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.flow.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self.at(i, j)).sum()).collect()
    }
}

/// Minimum-cost plan moving `supply` onto `demand` under the row-major
/// `cost` matrix.
pub fn transport_solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan, MetricError> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(MetricError::Transport("empty supply or demand".into()));
    }
    if cost.len() != m * n {
        return Err(MetricError::Transport(format!("cost has {} entries for {m}x{n}", cost.len())));
    }
    if supply.iter().chain(demand).any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(MetricError::Transport("masses must be finite and non-negative".into()));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(MetricError::Transport("costs must be finite".into()));
    }
    let (ts, td) = (supply.iter().sum::<f64>(), demand.iter().sum::<f64>());
    if (ts - td).abs() > BALANCE_TOL {
        return Err(MetricError::Unbalanced { supply: ts, demand: td });
    }

    let mut s = Simplex::northwest(supply, demand, cost);
    s.optimize();
    let objective = s.flow.iter().zip(cost).map(|(f, c)| f * c).sum();
    Ok(TransportPlan { flow: s.flow, rows: m, cols: n, objective })
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    flow: Vec<f64>,
    /// Basic cells as flat indices.
    basis: Vec<usize>,
    in_basis: Vec<bool>,
}

impl<'a> Simplex<'a> {
    fn northwest(supply: &[f64], demand: &[f64], cost: &'a [f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let mut flow = vec![0.0; m * n];
        let mut basis = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]);
            flow[i * n + j] = x;
            basis.push(i * n + j);
            if i == m - 1 && j == n - 1 {
                break;
            }
            let row_done = j == n - 1 || (i < m - 1 && s[i] <= d[j]);
            s[i] -= x;
            d[j] -= x;
            if row_done {
                i += 1;
            } else {
                j += 1;
            }
        }
        let mut in_basis = vec![false; m * n];
        basis.iter().for_each(|&c| in_basis[c] = true);
        Self { m, n, cost, flow, basis, in_basis }
    }

    /// Adjacency of the basis tree over row nodes `0..m` and column nodes
    /// `m..m+n`, each edge labelled with its cell.
    fn tree(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for &c in &self.basis {
            let (i, j) = (c / self.n, c % self.n);
            adj[i].push((self.m + j, c));
            adj[self.m + j].push((i, c));
        }
        adj
    }

    fn potentials(&self, adj: &[Vec<(usize, usize)>]) -> Vec<f64> {
        let mut pot = vec![f64::NAN; self.m + self.n];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0]);
        while let Some(u) = queue.pop_front() {
            for &(w, c) in &adj[u] {
                if pot[w].is_nan() {
                    pot[w] = self.cost[c] - pot[u];
                    queue.push_back(w);
                }
            }
        }
        pot
    }

    /// Basis cells on the tree path from column node of `j` to row `i`.
    fn path(&self, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
        let start = self.m + j;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.m + self.n];
        let mut seen = vec![false; self.m + self.n];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            if u == i {
                break;
            }
            for &(w, c) in &adj[u] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some((u, c));
                    queue.push_back(w);
                }
            }
        }
        let mut cells = Vec::new();
        let mut u = i;
        while let Some((p, c)) = parent[u] {
            cells.push(c);
            u = p;
        }
        cells.reverse();
        cells
    }

    fn optimize(&mut self) {
        let scale = self.cost.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1.0);
        let tol = 1e-12 * scale;
        let mut degenerate = 0;
        loop {
            let adj = self.tree();
            let pot = self.potentials(&adj);
            let bland = degenerate >= DEGENERATE_RUN;
            let mut entering = None;
            let mut best = -tol;
            for c in 0..self.m * self.n {
                if self.in_basis[c] {
                    continue;
                }
                let rc = self.cost[c] - pot[c / self.n] - pot[self.m + c % self.n];
                if rc < best {
                    entering = Some(c);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(enter) = entering else { return };

            // cycle: entering cell gains, then the path alternates lose/gain
            let path = self.path(&adj, enter / self.n, enter % self.n);
            let losers: Vec<usize> = path.iter().copied().step_by(2).collect();
            let theta = losers.iter().map(|&c| self.flow[c]).fold(f64::INFINITY, f64::min);
            let leave = *losers
                .iter()
                .filter(|&&c| self.flow[c] == theta)
                .min_by_key(|&&c| if bland { c } else { 0 })
                .expect("cycle has a losing cell");

            self.flow[enter] += theta;
            for (k, &c) in path.iter().enumerate() {
                if k % 2 == 0 {
                    self.flow[c] -= theta;
                } else {
                    self.flow[c] += theta;
                }
            }
            self.flow[leave] = 0.0;
            let pos = self.basis.iter().position(|&c| c == leave).expect("leaving cell is basic");
            self.basis[pos] = enter;
            self.in_basis[leave] = false;
            self.in_basis[enter] = true;
            degenerate = if theta == 0.0 { degenerate + 1 } else { 0 };
        }
    }
}
