//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Solves `maximize c.x  s.t.  A_eq x = b_eq,  A_le x <= b_le,  x >= 0`.
//! The pivot rule is fully deterministic: lowest-index improving column enters,
//! and ratio-test ties leave by lowest basic-variable index. The returned point
//! is always a basic (vertex) solution.

use alloc::vec;
use alloc::vec::Vec;

const PIVOT_EPS: f64 = 1e-11;
const FEAS_EPS: f64 = 1e-9;
const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Le,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Vec<f64>,
    rows: Vec<(Vec<f64>, RowKind, f64)>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex iteration limit reached")]
    IterationLimit,
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self { num_vars: objective.len(), objective, rows: Vec::new() }
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, kind: RowKind, rhs: f64) {
        assert_eq!(coeffs.len(), self.num_vars, "row width must match variable count");
        self.rows.push((coeffs, kind, rhs));
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn solve(&self) -> Result<LpSolution, LpError> {
        Tableau::build(self).run(&self.objective)
    }
}

struct Tableau {
    /// `m x width` coefficient block, already premultiplied by `B^-1`.
    t: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    num_original: usize,
    /// Columns at or beyond this index are artificial.
    first_artificial: usize,
    width: usize,
    iterations: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let m = lp.rows.len();
        let n = lp.num_vars;
        let num_le = lp.rows.iter().filter(|r| r.1 == RowKind::Le).count();

        // Normalize to nonnegative right-hand sides. A Le row with rhs >= 0 can
        // start with its slack in the basis; everything else gets an artificial.
        let mut needs_artificial = vec![false; m];
        let mut signs = vec![1.0; m];
        for (r, (_, kind, b)) in lp.rows.iter().enumerate() {
            if *b < 0.0 {
                signs[r] = -1.0;
            }
            needs_artificial[r] = *kind == RowKind::Eq || *b < 0.0;
        }
        let num_art = needs_artificial.iter().filter(|&&x| x).count();
        let first_artificial = n + num_le;
        let width = first_artificial + num_art;

        let mut t = vec![vec![0.0; width]; m];
        let mut rhs = vec![0.0; m];
        let mut basis = vec![0; m];
        let (mut slack, mut art) = (n, first_artificial);
        for (r, (coeffs, kind, b)) in lp.rows.iter().enumerate() {
            let s = signs[r];
            for (dst, &c) in t[r].iter_mut().zip(coeffs) {
                *dst = s * c;
            }
            rhs[r] = s * b;
            if *kind == RowKind::Le {
                t[r][slack] = s;
                if !needs_artificial[r] {
                    basis[r] = slack;
                }
                slack += 1;
            }
            if needs_artificial[r] {
                t[r][art] = 1.0;
                basis[r] = art;
                art += 1;
            }
        }
        Self { t, rhs, basis, num_original: n, first_artificial, width, iterations: 0 }
    }

    fn run(mut self, objective: &[f64]) -> Result<LpSolution, LpError> {
        if self.first_artificial < self.width {
            let mut phase_one = vec![0.0; self.width];
            for c in &mut phase_one[self.first_artificial..] {
                *c = -1.0;
            }
            self.optimize(&phase_one, self.width)?;
            let infeasibility: f64 =
                self.basis.iter().zip(&self.rhs).filter(|(&b, _)| b >= self.first_artificial).map(|(_, &v)| v).sum();
            if infeasibility > FEAS_EPS {
                return Err(LpError::Infeasible);
            }
            self.evict_artificials();
        }

        let mut costs = vec![0.0; self.width];
        costs[..self.num_original].copy_from_slice(objective);
        self.optimize(&costs, self.first_artificial)?;

        let mut x = vec![0.0; self.num_original];
        for (&b, &v) in self.basis.iter().zip(&self.rhs) {
            if b < self.num_original {
                x[b] = if v.abs() < 1e-13 { 0.0 } else { v.max(0.0) };
            }
        }
        let value = x.iter().zip(objective).map(|(a, b)| a * b).sum();
        Ok(LpSolution { x, objective: value, iterations: self.iterations })
    }

    /// Pivots remaining zero-level artificials out of the basis; rows where no
    /// structural column is available are linearly dependent and get dropped.
    fn evict_artificials(&mut self) {
        let mut r = 0;
        while r < self.basis.len() {
            if self.basis[r] < self.first_artificial {
                r += 1;
                continue;
            }
            let col = (0..self.first_artificial).find(|&j| self.t[r][j].abs() > 1e-9);
            match col {
                Some(j) => {
                    self.pivot(r, j);
                    r += 1;
                }
                None => {
                    self.t.remove(r);
                    self.rhs.remove(r);
                    self.basis.remove(r);
                }
            }
        }
    }

    /// Maximizes `costs` over columns `< allowed`, Bland's rule throughout.
    fn optimize(&mut self, costs: &[f64], allowed: usize) -> Result<(), LpError> {
        loop {
            if self.iterations >= MAX_ITERATIONS {
                return Err(LpError::IterationLimit);
            }
            let Some(enter) = (0..allowed).find(|&j| self.reduced_cost(costs, j) > PIVOT_EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.t.len() {
                let a = self.t[r][enter];
                if a <= PIVOT_EPS {
                    continue;
                }
                let ratio = self.rhs[r] / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((best, best_ratio)) => {
                        let tie = (ratio - best_ratio).abs() <= 1e-12 * (1.0 + best_ratio.abs());
                        if ratio < best_ratio && !tie || tie && self.basis[r] < self.basis[best] {
                            Some((r, ratio))
                        } else {
                            Some((best, best_ratio))
                        }
                    }
                };
            }
            let Some((row, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            self.pivot(row, enter);
            self.iterations += 1;
        }
    }

    fn reduced_cost(&self, costs: &[f64], j: usize) -> f64 {
        if self.basis.contains(&j) {
            return 0.0;
        }
        let mut d = costs[j];
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = costs[b];
            if cb != 0.0 {
                d -= cb * self.t[r][j];
            }
        }
        d
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[row][col];
        for v in &mut self.t[row] {
            *v /= p;
        }
        self.rhs[row] /= p;
        self.t[row][col] = 1.0;
        let pivot_row = self.t[row].clone();
        let pivot_rhs = self.rhs[row];
        for r in 0..self.t.len() {
            if r == row {
                continue;
            }
            let f = self.t[r][col];
            if f == 0.0 {
                continue;
            }
            for (v, &pv) in self.t[r].iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.t[r][col] = 0.0;
            self.rhs[r] -= f * pivot_rhs;
            if self.rhs[r].abs() < 1e-14 {
                self.rhs[r] = 0.0;
            }
        }
        self.basis[row] = col;
    }
}
