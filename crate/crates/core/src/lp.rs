//! Dense two-phase tableau simplex for small standard-form programs
//!
//! ```text
//! minimize c^T x   subject to   A x = b,  x >= 0
//! ```
//!
//! Problems solved here have at most a few hundred rows and columns, so the
//! tableau is stored densely. Entering columns are chosen by Dantzig's rule;
//! after a run of degenerate pivots the solver switches to Bland's rule, which
//! cannot cycle.

/// Pivot elements with magnitude at or below this are treated as zero.
pub const PIVOT_TOL: f64 = 1e-10;

/// Reduced costs above `-OPT_TOL` count as non-improving.
const OPT_TOL: f64 = 1e-11;

/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 50;

#[derive(Debug, Clone)]
pub struct StandardForm {
    /// Row-major constraint matrix, `rows x cols`.
    pub a: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl StandardForm {
    pub fn new(rows: usize, cols: usize) -> Self {
        StandardForm {
            a: vec![0.0; rows * cols],
            rows,
            cols,
            b: vec![0.0; rows],
            c: vec![0.0; cols],
        }
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.a[r * self.cols + c] = v;
    }
}

/// Result of phase 1 alone: the minimum total constraint violation
/// `sum |A x - b|` over `x >= 0`.
#[derive(Debug, Clone)]
pub struct Phase1 {
    /// The minimizing `x`.
    pub x: Vec<f64>,
    /// Minimum of the summed artificial variables.
    pub residual: f64,
    /// Dual multipliers `y` for the original rows at the phase-1 optimum.
    /// They satisfy `y . A_j <= 0` for every column and `y . b = residual`,
    /// which makes them a Farkas certificate when the residual is positive.
    pub farkas: Vec<f64>,
    pub pivots: usize,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible { residual: f64 },
    Unbounded,
}

struct Tableau {
    rows: usize,
    /// Total columns excluding rhs: original + artificials.
    width: usize,
    original: usize,
    /// `rows x (width + 1)` with the rhs in the last column.
    t: Vec<f64>,
    /// Objective row of reduced costs, `width + 1` entries; last is `-z`.
    obj: Vec<f64>,
    basis: Vec<usize>,
    /// Columns allowed to enter.
    allowed: Vec<bool>,
    pivots: usize,
}

impl Tableau {
    fn stride(&self) -> usize {
        self.width + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.stride() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width)
    }

    /// Builds the phase-1 tableau with one artificial per row and a sign flip
    /// on rows whose rhs is negative. Returns the flip signs.
    fn phase1(lp: &StandardForm) -> (Self, Vec<f64>) {
        let rows = lp.rows;
        let original = lp.cols;
        let width = original + rows;
        let stride = width + 1;
        let mut t = vec![0.0; rows * stride];
        let mut signs = vec![1.0; rows];
        for r in 0..rows {
            let s = if lp.b[r] < 0.0 { -1.0 } else { 1.0 };
            signs[r] = s;
            for c in 0..original {
                t[r * stride + c] = s * lp.a[r * original + c];
            }
            t[r * stride + original + r] = 1.0;
            t[r * stride + width] = s * lp.b[r];
        }
        // Reduced costs for min sum(artificials) with artificial basis:
        // r_j = -sum_i t[i][j] for original columns, 0 for artificials.
        let mut obj = vec![0.0; stride];
        for r in 0..rows {
            for c in 0..original {
                obj[c] -= t[r * stride + c];
            }
            obj[width] -= t[r * stride + width];
        }
        let basis = (original..width).collect();
        let mut allowed = vec![true; width];
        allowed[original..].iter_mut().for_each(|a| *a = false);
        (
            Tableau {
                rows,
                width,
                original,
                t,
                obj,
                basis,
                allowed,
                pivots: 0,
            },
            signs,
        )
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let stride = self.stride();
        let pv = self.t[pr * stride + pc];
        {
            let row = &mut self.t[pr * stride..(pr + 1) * stride];
            row.iter_mut().for_each(|v| *v /= pv);
            row[pc] = 1.0;
        }
        let pivot_row: Vec<f64> = self.t[pr * stride..(pr + 1) * stride].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.t[r * stride + pc];
            if f != 0.0 {
                let row = &mut self.t[r * stride..(r + 1) * stride];
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        let f = self.obj[pc];
        if f != 0.0 {
            for (v, p) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
            self.obj[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Runs simplex iterations on the current objective row. Returns `false`
    /// if the objective is unbounded below.
    fn optimize(&mut self) -> bool {
        let mut degenerate_run = 0usize;
        let limit = 50 * (self.rows + self.width) + 1000;
        for _ in 0..limit {
            let bland = degenerate_run >= DEGENERATE_SWITCH;
            let mut enter = None;
            let mut best = -OPT_TOL;
            for c in 0..self.width {
                if !self.allowed[c] {
                    continue;
                }
                let rc = self.obj[c];
                if rc < best {
                    enter = Some(c);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(pc) = enter else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    match leave {
                        None => leave = Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-15
                                || (ratio <= lratio + 1e-15 && self.basis[r] < self.basis[lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                    }
                }
            }
            let Some((pr, ratio)) = leave else {
                return false;
            };
            degenerate_run = if ratio <= 1e-15 { degenerate_run + 1 } else { 0 };
            self.pivot(pr, pc);
        }
        // Iteration cap: report the current basis, which is still feasible.
        true
    }

    fn solution(&self, cols: usize) -> Vec<f64> {
        let mut x = vec![0.0; cols];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < cols {
                x[b] = self.rhs(r).max(0.0);
            }
        }
        x
    }

    fn phase1_residual(&self) -> f64 {
        (-self.obj[self.width]).max(0.0)
    }
}

/// Minimizes the total violation of `A x = b` over `x >= 0`.
pub fn phase1(lp: &StandardForm) -> Phase1 {
    let (mut tab, signs) = Tableau::phase1(lp);
    tab.optimize();
    let residual = tab.phase1_residual();
    // Reduced cost of artificial k is 1 - y'_k; undo the row sign flips.
    let farkas = (0..lp.rows)
        .map(|k| signs[k] * (1.0 - tab.obj[tab.original + k]))
        .collect();
    Phase1 {
        x: tab.solution(lp.cols),
        residual,
        farkas,
        pivots: tab.pivots,
    }
}

/// Full two-phase solve. The program is declared infeasible when the phase-1
/// residual exceeds `feas_tol`.
pub fn solve(lp: &StandardForm, feas_tol: f64) -> Outcome {
    let (mut tab, _) = Tableau::phase1(lp);
    tab.optimize();
    let residual = tab.phase1_residual();
    if residual > feas_tol {
        return Outcome::Infeasible { residual };
    }

    // Drive artificials out of the basis where possible; rows that cannot be
    // pivoted are redundant and keep a zero-level artificial.
    for r in 0..tab.rows {
        if tab.basis[r] >= tab.original {
            if let Some(c) = (0..tab.original).find(|&c| tab.at(r, c).abs() > PIVOT_TOL) {
                tab.pivot(r, c);
            }
        }
    }

    // Phase-2 reduced costs: r = c - c_B B^-1 A, read off the tableau.
    let stride = tab.stride();
    let mut obj = vec![0.0; stride];
    obj[..lp.cols].copy_from_slice(&lp.c);
    for r in 0..tab.rows {
        let b = tab.basis[r];
        let cb = if b < lp.cols { lp.c[b] } else { 0.0 };
        if cb != 0.0 {
            for c in 0..stride {
                obj[c] -= cb * tab.t[r * stride + c];
            }
        }
    }
    tab.obj = obj;
    if !tab.optimize() {
        return Outcome::Unbounded;
    }
    let x = tab.solution(lp.cols);
    let objective = x.iter().zip(&lp.c).map(|(a, b)| a * b).sum();
    Outcome::Optimal { x, objective }
}
