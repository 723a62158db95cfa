//! Dense two-phase simplex for small standard-form linear programs
//!
//! ```text
//!     minimize    cᵀx
//!     subject to  A x = b,  x ≥ 0
//! ```
//!
//! Problems here have at most a few hundred columns, so a dense tableau with
//! Dantzig pricing (falling back to Bland's rule on degenerate stalls) is
//! plenty.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-10;
const HARRIS_TOL: f64 = 1e-10;
/// Phase-one objective (relative to the right-hand-side scale) below which
/// the program is declared feasible.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: DVector<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

struct Tableau {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }

    #[inline]
    fn rhs(&self, r: usize) -> f64 {
        self.data[r * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize, cost: &mut [f64]) {
        let w = self.cols + 1;
        let inv = 1.0 / self.data[pr * w + pc];
        for v in &mut self.data[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        let pivot_row: Vec<f64> = self.data[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let factor = self.data[r * w + pc];
            if factor != 0.0 {
                for (v, p) in self.data[r * w..(r + 1) * w].iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
            }
        }
        let factor = cost[pc];
        if factor != 0.0 {
            for (v, p) in cost.iter_mut().zip(&pivot_row) {
                *v -= factor * p;
            }
        }
        self.basis[pr] = pc;
    }

    /// Runs simplex iterations on the reduced-cost row `cost` (length
    /// `cols + 1`, last entry is minus the objective). Columns with
    /// `allowed[c] == false` never enter.
    fn optimize(&mut self, cost: &mut [f64], allowed: &[bool]) -> Result<bool> {
        let max_iter = 50 * (self.rows + self.cols) + 100;
        let mut degenerate_streak = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate_streak > self.rows;
            let mut enter = None;
            let mut best = -COST_TOL;
            for c in 0..self.cols {
                if !allowed[c] || cost[c] >= -COST_TOL {
                    continue;
                }
                if bland {
                    enter = Some(c);
                    break;
                }
                if cost[c] < best {
                    best = cost[c];
                    enter = Some(c);
                }
            }
            let Some(pc) = enter else {
                return Ok(true);
            };
            // Harris two-pass ratio test: bound the step with a small
            // feasibility tolerance, then take the largest pivot under it
            let mut bound = f64::INFINITY;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    bound = bound.min((self.rhs(r).max(0.0) + HARRIS_TOL) / a);
                }
            }
            let mut leave: Option<(usize, f64)> = None;
            let mut best_pivot = 0.0;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    if ratio <= bound && (a > best_pivot || (bland && a == best_pivot)) {
                        best_pivot = a;
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((pr, ratio)) = leave else {
                return Ok(false);
            };
            degenerate_streak = if ratio.abs() < 1e-14 { degenerate_streak + 1 } else { 0 };
            self.pivot(pr, pc, cost);
        }
        Err(Error::LpFailure("simplex iteration limit reached".into()))
    }
}

/// Solves the standard-form LP. Passing `c = None` only searches for a
/// feasible point (phase one).
pub fn solve(c: Option<&DVector<f64>>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LpOutcome> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            what: "LP right-hand side",
            expected: m,
            found: b.len(),
        });
    }
    if let Some(c) = c {
        if c.len() != n {
            return Err(Error::DimensionMismatch {
                what: "LP cost",
                expected: n,
                found: c.len(),
            });
        }
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("LP data"));
    }

    let cols = n + m;
    let w = cols + 1;
    let mut t = Tableau {
        rows: m,
        cols,
        data: vec![0.0; m * w],
        basis: (n..n + m).collect(),
    };
    for r in 0..m {
        let sign = if b[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t.data[r * w + j] = sign * a[(r, j)];
        }
        t.data[r * w + n + r] = 1.0;
        t.data[r * w + cols] = sign * b[r];
    }

    // phase one: minimize the sum of artificials
    let mut cost = vec![0.0; w];
    for r in 0..m {
        for j in 0..n {
            cost[j] -= t.at(r, j);
        }
        cost[cols] -= t.rhs(r);
    }
    let all = vec![true; cols];
    t.optimize(&mut cost, &all)?;
    let scale = b.amax().max(1.0);
    if -cost[cols] > FEASIBILITY_TOL * scale {
        return Ok(LpOutcome::Infeasible);
    }
    // drive remaining artificials out of the basis
    for r in 0..m {
        if t.basis[r] >= n {
            let best = (0..n).max_by(|&i, &j| t.at(r, i).abs().total_cmp(&t.at(r, j).abs()));
            if let Some(pc) = best.filter(|&j| t.at(r, j).abs() > 1e-7) {
                t.pivot(r, pc, &mut cost);
            }
        }
    }

    let mut allowed = vec![true; cols];
    for v in allowed.iter_mut().skip(n) {
        *v = false;
    }
    let objective_cost = match c {
        None => None,
        Some(c) => {
            let mut cost = vec![0.0; w];
            cost[..n].copy_from_slice(c.as_slice());
            for r in 0..m {
                let bc = if t.basis[r] < n { c[t.basis[r]] } else { 0.0 };
                if bc != 0.0 {
                    for j in 0..w {
                        cost[j] -= bc * t.at(r, j);
                    }
                }
            }
            if !t.optimize(&mut cost, &allowed)? {
                return Ok(LpOutcome::Unbounded);
            }
            Some(cost)
        }
    };

    let mut x = DVector::zeros(n);
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = t.rhs(r).max(0.0);
        }
    }
    if (a * &x - b).amax() > 1e-6 * scale {
        return Err(Error::LpFailure("simplex lost accuracy".into()));
    }
    let objective = match (c, objective_cost) {
        (Some(c), Some(_)) => c.dot(&x),
        _ => 0.0,
    };
    Ok(LpOutcome::Optimal { x, objective })
}

/// Returns a point of `{x ≥ 0 : A x = b}` or `None` when it is empty.
pub fn feasible_point(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    match solve(None, a, b)? {
        LpOutcome::Optimal { x, .. } => Ok(Some(x)),
        LpOutcome::Infeasible => Ok(None),
        LpOutcome::Unbounded => Err(Error::LpFailure("phase one reported unbounded".into())),
    }
}
