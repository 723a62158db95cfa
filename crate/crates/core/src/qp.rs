//! Quadratic programs with optimal-control structure.
//!
//! ```text
//!   minimize    Σₖ ½ zₖᵀ Hₖ zₖ + hₖᵀ zₖ  +  Σ_soft w sᵢ²
//!   subject to  x₀ = x̂
//!               xₖ₊₁ = Aₖ xₖ + Bₖ wₖ + cₖ
//!               aᵢᵀ zₖ + oᵢ ≥ 0          (hard rows)
//!               aᵢᵀ zₖ + oᵢ + sᵢ ≥ 0,  sᵢ ≥ 0   (soft rows)
//! ```
//!
//! with `zₖ = [xₖ; wₖ]` and `Hₖ = [[Q, Sᵀ], [S, R]]`. Stages may have
//! different input sizes; the last stage has no dynamics.
//!
//! The solver is a Mehrotra predictor-corrector interior-point method. Slack
//! variables of the soft rows are eliminated row by row, so every Newton
//! system is an equality-constrained LQ problem solved by one Riccati
//! recursion (factorized once per iteration, back-substituted twice).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// One inequality row `Σ values[j] z[indices[j]] + offset ≥ 0` over the
/// stage vector `z = [x; w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub offset: f64,
    /// Penalty weight `w` of the slack term `w s²`; `None` for a hard row.
    pub weight: Option<f64>,
}

impl Row {
    pub fn new(indices: Vec<usize>, values: Vec<f64>, offset: f64, weight: Option<f64>) -> Self {
        Self {
            indices,
            values,
            offset,
            weight,
        }
    }

    /// `z[index] + offset ≥ 0` scaled by `sign`.
    pub fn single(index: usize, sign: f64, offset: f64, weight: Option<f64>) -> Self {
        Self::new(vec![index], vec![sign], offset, weight)
    }

    #[inline]
    fn dot(&self, z: &DVector<f64>) -> f64 {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| v * z[i]).sum()
    }

    #[inline]
    fn eval(&self, z: &DVector<f64>) -> f64 {
        self.dot(z) + self.offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub q: DMatrix<f64>,
    /// Cross term, `nu × nx`.
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qv: DVector<f64>,
    pub rv: DVector<f64>,
    pub rows: Vec<Row>,
}

impl Stage {
    pub fn zeros(nx: usize, nu: usize) -> Self {
        Self {
            q: DMatrix::zeros(nx, nx),
            s: DMatrix::zeros(nu, nx),
            r: DMatrix::zeros(nu, nu),
            qv: DVector::zeros(nx),
            rv: DVector::zeros(nu),
            rows: Vec::new(),
        }
    }

    pub fn nx(&self) -> usize {
        self.q.nrows()
    }

    pub fn nu(&self) -> usize {
        self.r.nrows()
    }

    fn value(&self, x: &DVector<f64>, w: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x))
            + w.dot(&(&self.s * x))
            + 0.5 * w.dot(&(&self.r * w))
            + self.qv.dot(x)
            + self.rv.dot(w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructuredQp {
    pub x0: DVector<f64>,
    pub stages: Vec<Stage>,
    /// `dynamics[k]` maps stage `k` to stage `k + 1`.
    pub dynamics: Vec<Dynamics>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            tolerance: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    /// Multipliers of the inequality rows (`≥ 0`), per stage.
    pub row_multipliers: Vec<DVector<f64>>,
    /// Slack values of the rows (zero for hard rows), per stage.
    pub slacks: Vec<DVector<f64>>,
    /// Riccati feedback `wₖ = Kₖ xₖ + kₖ` of the last Newton system.
    pub gains: Vec<DMatrix<f64>>,
    pub feedforward: Vec<DVector<f64>>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl StructuredQp {
    fn validate(&self) -> Result<()> {
        let n = self.stages.len();
        if n == 0 {
            return Err(Error::InvalidArgument("QP needs at least one stage".into()));
        }
        if self.dynamics.len() + 1 != n {
            return Err(Error::DimensionMismatch {
                what: "QP dynamics blocks",
                expected: n - 1,
                found: self.dynamics.len(),
            });
        }
        if self.x0.len() != self.stages[0].nx() {
            return Err(Error::DimensionMismatch {
                what: "QP initial state",
                expected: self.stages[0].nx(),
                found: self.x0.len(),
            });
        }
        for (k, st) in self.stages.iter().enumerate() {
            let (nx, nu) = (st.nx(), st.nu());
            let ok = st.q.ncols() == nx
                && st.s.shape() == (nu, nx)
                && st.r.ncols() == nu
                && st.qv.len() == nx
                && st.rv.len() == nu;
            if !ok {
                return Err(Error::InvalidArgument(alloc::format!(
                    "stage {k} blocks are inconsistent"
                )));
            }
            for row in &st.rows {
                if row.indices.len() != row.values.len() || row.indices.iter().any(|&i| i >= nx + nu) {
                    return Err(Error::InvalidArgument(alloc::format!("stage {k} has a malformed row")));
                }
                if matches!(row.weight, Some(w) if !(w > 0.0)) {
                    return Err(Error::InvalidArgument("slack weights must be positive".into()));
                }
            }
            if k + 1 < n {
                let d = &self.dynamics[k];
                let nx1 = self.stages[k + 1].nx();
                if d.a.shape() != (nx1, nx) || d.b.shape() != (nx1, nu) || d.c.len() != nx1 {
                    return Err(Error::InvalidArgument(alloc::format!(
                        "dynamics block {k} is inconsistent"
                    )));
                }
            }
        }
        Ok(())
    }
}

struct Factor {
    p: Vec<DMatrix<f64>>,
    chol: Vec<Option<Cholesky<f64, Dyn>>>,
    gain: Vec<DMatrix<f64>>,
    st: Vec<DMatrix<f64>>,
}

/// Stage Hessians `(Q, S, R)` used by one factorization.
type Hessians = Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>;

fn factorize(qp: &StructuredQp, hess: &Hessians) -> Result<Factor> {
    let n = qp.stages.len();
    let mut p = vec![DMatrix::zeros(0, 0); n];
    let mut chol = Vec::with_capacity(n);
    let mut gain = vec![DMatrix::zeros(0, 0); n];
    let mut stv = vec![DMatrix::zeros(0, 0); n];
    chol.resize_with(n, || None);
    for k in (0..n).rev() {
        let (q, s, r) = &hess[k];
        let (mut qt, mut st, mut rt) = (q.clone(), s.clone(), r.clone());
        if k + 1 < n {
            let d = &qp.dynamics[k];
            let pa = &p[k + 1] * &d.a;
            let pb = &p[k + 1] * &d.b;
            qt += d.a.transpose() * &pa;
            st += d.b.transpose() * &pa;
            rt += d.b.transpose() * &pb;
        }
        let nu = rt.nrows();
        let (pk, kk) = if nu == 0 {
            (qt, DMatrix::zeros(0, q.nrows()))
        } else {
            let rt = 0.5 * (&rt + rt.transpose());
            let c = Cholesky::new(rt).ok_or(Error::NonConvex(k))?;
            let kk = -c.solve(&st);
            let pk = &qt + st.transpose() * &kk;
            chol[k] = Some(c);
            (pk, kk)
        };
        p[k] = 0.5 * (&pk + pk.transpose());
        gain[k] = kk;
        stv[k] = st;
    }
    Ok(Factor { p, chol, gain, st: stv })
}

struct LqSolution {
    x: Vec<DVector<f64>>,
    w: Vec<DVector<f64>>,
    feedforward: Vec<DVector<f64>>,
}

/// Solves the LQ problem with the factorized Hessians, linear terms `lin`,
/// initial state `x0` and dynamics offsets `c`.
fn back_substitute(
    qp: &StructuredQp,
    f: &Factor,
    lin: &[(DVector<f64>, DVector<f64>)],
    x0: &DVector<f64>,
    c: &[DVector<f64>],
) -> LqSolution {
    let n = qp.stages.len();
    let mut pv: Vec<DVector<f64>> = vec![DVector::zeros(0); n];
    let mut kff: Vec<DVector<f64>> = vec![DVector::zeros(0); n];
    for k in (0..n).rev() {
        let (q, r) = &lin[k];
        let (mut qt, mut rt) = (q.clone(), r.clone());
        if k + 1 < n {
            let d = &qp.dynamics[k];
            let next = &f.p[k + 1] * &c[k] + &pv[k + 1];
            qt += d.a.transpose() * &next;
            rt += d.b.transpose() * &next;
        }
        let kk = match &f.chol[k] {
            Some(c) => -c.solve(&rt),
            None => DVector::zeros(0),
        };
        pv[k] = qt + f.st[k].transpose() * &kk;
        kff[k] = kk;
    }
    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut xk = x0.clone();
    for k in 0..n {
        let wk = &f.gain[k] * &xk + &kff[k];
        let next = if k + 1 < n {
            let d = &qp.dynamics[k];
            Some(&d.a * &xk + &d.b * &wk + &c[k])
        } else {
            None
        };
        x.push(core::mem::replace(&mut xk, next.unwrap_or_else(|| DVector::zeros(0))));
        w.push(wk);
    }
    LqSolution { x, w, feedforward: kff }
}

fn stack(x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + w.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), w.len()).copy_from(w);
    z
}

/// Adds `scale · a aᵀ` of a sparse row to the stage Hessian blocks.
fn add_outer(h: &mut (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>), row: &Row, scale: f64, nx: usize) {
    for (&i, &vi) in row.indices.iter().zip(&row.values) {
        for (&j, &vj) in row.indices.iter().zip(&row.values) {
            let v = scale * vi * vj;
            match (i < nx, j < nx) {
                (true, true) => h.0[(i, j)] += v,
                (false, true) => h.1[(i - nx, j)] += v,
                (false, false) => h.2[(i - nx, j - nx)] += v,
                (true, false) => {}
            }
        }
    }
}

fn add_row(lin: &mut (DVector<f64>, DVector<f64>), row: &Row, scale: f64, nx: usize) {
    for (&i, &v) in row.indices.iter().zip(&row.values) {
        if i < nx {
            lin.0[i] += scale * v;
        } else {
            lin.1[i - nx] += scale * v;
        }
    }
}

/// Interior-point iterate for the rows of one stage.
#[derive(Clone)]
struct RowState {
    t: DVector<f64>,
    lam: DVector<f64>,
    s: DVector<f64>,
    lam_s: DVector<f64>,
}

/// Solves the structured QP.
pub fn solve(qp: &StructuredQp, settings: &QpSettings) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.stages.len();
    let base: Hessians = qp
        .stages
        .iter()
        .map(|s| (s.q.clone(), s.s.clone(), s.r.clone()))
        .collect();
    let base_lin: Vec<(DVector<f64>, DVector<f64>)> = qp.stages.iter().map(|s| (s.qv.clone(), s.rv.clone())).collect();
    let m_total: usize = qp.stages.iter().map(|s| s.rows.len()).sum::<usize>()
        + qp.stages
            .iter()
            .flat_map(|s| &s.rows)
            .filter(|r| r.weight.is_some())
            .count();

    let f0 = factorize(qp, &base)?;
    let offsets: Vec<DVector<f64>> = qp.dynamics.iter().map(|d| d.c.clone()).collect();
    let sol0 = back_substitute(qp, &f0, &base_lin, &qp.x0, &offsets);
    if m_total == 0 {
        let kkt = kkt_residual(qp, &sol0.x, &sol0.w, &vec![DVector::zeros(0); n]);
        let objective = objective(qp, &sol0.x, &sol0.w, &vec![DVector::zeros(0); n]);
        return Ok(QpSolution {
            row_multipliers: vec![DVector::zeros(0); n],
            slacks: vec![DVector::zeros(0); n],
            gains: f0.gain,
            feedforward: sol0.feedforward,
            x: sol0.x,
            w: sol0.w,
            objective,
            kkt_residual: kkt,
            iterations: 0,
        });
    }

    let mut x = sol0.x;
    let mut w = sol0.w;
    let mut rs: Vec<RowState> = Vec::with_capacity(n);
    for k in 0..n {
        let z = stack(&x[k], &w[k]);
        let rows = &qp.stages[k].rows;
        let m = rows.len();
        let mut st = RowState {
            t: DVector::zeros(m),
            lam: DVector::from_element(m, 1.0),
            s: DVector::zeros(m),
            lam_s: DVector::zeros(m),
        };
        for (i, row) in rows.iter().enumerate() {
            let g = row.eval(&z);
            if row.weight.is_some() {
                st.s[i] = (-g).max(0.0) + 1.0;
                st.t[i] = g + st.s[i];
                st.lam_s[i] = 1.0;
            } else {
                st.t[i] = g.max(1.0);
            }
        }
        rs.push(st);
    }

    let mut gains = f0.gain;
    let mut feedforward = sol0.feedforward;
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;
    for it in 0..settings.max_iterations {
        let mu = complementarity(qp, &rs) / m_total as f64;
        let (rp_max, rs_max) = primal_residuals(qp, &x, &w, &rs);
        kkt = kkt_residual(qp, &x, &w, &rs.iter().map(|r| r.lam.clone()).collect::<Vec<_>>())
            .max(rp_max)
            .max(rs_max)
            .max(mu);
        iterations = it;
        if !kkt.is_finite() || !mu.is_finite() || !rp_max.is_finite() || !rs_max.is_finite() {
            return Err(Error::QpFailure("interior-point iterates diverged".into()));
        }
        if kkt <= settings.tolerance {
            break;
        }

        // per-row diagonal terms
        let mut hess = base.clone();
        let mut diag: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)> = Vec::with_capacity(n);
        for k in 0..n {
            let nx = qp.stages[k].nx();
            let rows = &qp.stages[k].rows;
            let st = &rs[k];
            let m = rows.len();
            let mut d1 = DVector::zeros(m);
            let mut ds = DVector::zeros(m);
            let mut deff = DVector::zeros(m);
            for (i, row) in rows.iter().enumerate() {
                d1[i] = st.lam[i] / st.t[i];
                match row.weight {
                    Some(wt) => {
                        ds[i] = 2.0 * wt + d1[i] + st.lam_s[i] / st.s[i];
                        deff[i] = d1[i] * (1.0 - d1[i] / ds[i]);
                    }
                    None => deff[i] = d1[i],
                }
                add_outer(&mut hess[k], row, deff[i], nx);
            }
            diag.push((d1, ds, deff));
        }
        let fac = factorize(qp, &hess)?;

        // Newton systems are solved for the step; the linear terms are the
        // cost gradient at the iterate plus the row contributions
        let rhs = |rc1: &[DVector<f64>], rc2: &[DVector<f64>]| -> Vec<(DVector<f64>, DVector<f64>)> {
            let mut lin = Vec::with_capacity(n);
            for k in 0..n {
                let stage = &qp.stages[k];
                let nx = stage.nx();
                let z = stack(&x[k], &w[k]);
                let st = &rs[k];
                let (d1, ds, _) = &diag[k];
                let mut grad = (
                    &stage.q * &x[k] + stage.s.transpose() * &w[k] + &stage.qv,
                    &stage.s * &x[k] + &stage.r * &w[k] + &stage.rv,
                );
                for (i, row) in stage.rows.iter().enumerate() {
                    let g = row.eval(&z);
                    let rp = g + st.s[i] - st.t[i];
                    let rc1t = rc1[k][i] + st.lam[i] * rp;
                    let mut coef = -st.lam[i] + rc1t / st.t[i];
                    if let Some(wt) = row.weight {
                        let r_s = 2.0 * wt * st.s[i] - st.lam[i] - st.lam_s[i];
                        let num = -r_s - rc1t / st.t[i] - rc2[k][i] / st.s[i];
                        coef += d1[i] * num / ds[i];
                    }
                    add_row(&mut grad, row, coef, nx);
                }
                lin.push(grad);
            }
            lin
        };
        let dx0 = &qp.x0 - &x[0];
        let dc: Vec<DVector<f64>> = qp
            .dynamics
            .iter()
            .enumerate()
            .map(|(k, d)| &d.a * &x[k] + &d.b * &w[k] + &d.c - &x[k + 1])
            .collect();

        let recover = |sol: &LqSolution, rc1: &[DVector<f64>], rc2: &[DVector<f64>]| -> Vec<RowState> {
            (0..n)
                .map(|k| {
                    let z = stack(&x[k], &w[k]);
                    let dz = stack(&sol.x[k], &sol.w[k]);
                    let st = &rs[k];
                    let (d1, ds, _) = &diag[k];
                    let m = st.t.len();
                    let mut d = RowState {
                        t: DVector::zeros(m),
                        lam: DVector::zeros(m),
                        s: DVector::zeros(m),
                        lam_s: DVector::zeros(m),
                    };
                    for (i, row) in qp.stages[k].rows.iter().enumerate() {
                        let g = row.eval(&z);
                        let rp = g + st.s[i] - st.t[i];
                        let dg = row.dot(&dz);
                        if let Some(wt) = row.weight {
                            let rc1t = rc1[k][i] + st.lam[i] * rp;
                            let r_s = 2.0 * wt * st.s[i] - st.lam[i] - st.lam_s[i];
                            let num = -r_s - rc1t / st.t[i] - rc2[k][i] / st.s[i];
                            d.s[i] = (num - d1[i] * dg) / ds[i];
                            d.lam_s[i] = (-rc2[k][i] - st.lam_s[i] * d.s[i]) / st.s[i];
                        }
                        d.t[i] = dg + d.s[i] + rp;
                        d.lam[i] = (-rc1[k][i] - st.lam[i] * d.t[i]) / st.t[i];
                    }
                    d
                })
                .collect()
        };

        // predictor
        let rc1_aff: Vec<DVector<f64>> = rs.iter().map(|r| r.t.component_mul(&r.lam)).collect();
        let rc2_aff: Vec<DVector<f64>> = rs.iter().map(|r| r.s.component_mul(&r.lam_s)).collect();
        let sol_aff = back_substitute(qp, &fac, &rhs(&rc1_aff, &rc2_aff), &dx0, &dc);
        let d_aff = recover(&sol_aff, &rc1_aff, &rc2_aff);
        let a_aff = max_step(qp, &rs, &d_aff);
        let mut mu_aff = 0.0;
        for k in 0..n {
            for (i, row) in qp.stages[k].rows.iter().enumerate() {
                let (st, d) = (&rs[k], &d_aff[k]);
                mu_aff += (st.t[i] + a_aff * d.t[i]) * (st.lam[i] + a_aff * d.lam[i]);
                if row.weight.is_some() {
                    mu_aff += (st.s[i] + a_aff * d.s[i]) * (st.lam_s[i] + a_aff * d.lam_s[i]);
                }
            }
        }
        mu_aff /= m_total as f64;
        let sigma = crate::math::powi(mu_aff / mu, 3).min(1.0);
        let target = (sigma * mu).max(0.1 * settings.tolerance);

        // corrector
        let rc1: Vec<DVector<f64>> = (0..n)
            .map(|k| {
                let (st, d) = (&rs[k], &d_aff[k]);
                (st.t.component_mul(&st.lam) + d.t.component_mul(&d.lam)).add_scalar(-target)
            })
            .collect();
        let rc2: Vec<DVector<f64>> = (0..n)
            .map(|k| {
                let (st, d) = (&rs[k], &d_aff[k]);
                let mut v = st.s.component_mul(&st.lam_s) + d.s.component_mul(&d.lam_s);
                for (i, row) in qp.stages[k].rows.iter().enumerate() {
                    v[i] = if row.weight.is_some() { v[i] - target } else { 0.0 };
                }
                v
            })
            .collect();
        let sol = back_substitute(qp, &fac, &rhs(&rc1, &rc2), &dx0, &dc);
        let d = recover(&sol, &rc1, &rc2);
        let alpha = (0.99 * max_step(qp, &rs, &d)).min(1.0);

        // feedforward of the full Newton step in absolute coordinates
        feedforward = (0..n)
            .map(|k| &w[k] + &sol.feedforward[k] - &fac.gain[k] * &x[k])
            .collect();
        for k in 0..n {
            x[k] += alpha * &sol.x[k];
            w[k] += alpha * &sol.w[k];
            let st = &mut rs[k];
            st.t += alpha * &d[k].t;
            st.lam += alpha * &d[k].lam;
            st.s += alpha * &d[k].s;
            st.lam_s += alpha * &d[k].lam_s;
        }
        gains = fac.gain;
        iterations = it + 1;
    }
    if !kkt.is_finite() || kkt > settings.tolerance.max(1e-6) * 1e3 {
        return Err(Error::QpFailure(alloc::format!(
            "interior-point method stalled with KKT residual {kkt:.3e}"
        )));
    }
    let row_multipliers: Vec<DVector<f64>> = rs.iter().map(|r| r.lam.clone()).collect();
    let slacks: Vec<DVector<f64>> = rs.iter().map(|r| r.s.clone()).collect();
    let objective = objective(qp, &x, &w, &slacks);
    Ok(QpSolution {
        x,
        w,
        row_multipliers,
        slacks,
        gains,
        feedforward,
        objective,
        kkt_residual: kkt,
        iterations,
    })
}

/// Solution of a dense QP.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSolution {
    pub z: DVector<f64>,
    /// Equality multipliers (`H z + g = Aᵀ y + Cᵀ λ` at the optimum).
    pub y: DVector<f64>,
    pub lambda: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Primal, equality-dual, slack and inequality-dual Newton steps.
type Direction = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

/// Small dense QP
///
/// ```text
///   minimize ½ zᵀ H z + gᵀ z   s.t.  A z = b,  C z + d ≥ 0
/// ```
///
/// by a Mehrotra predictor-corrector method on the full KKT matrix.
pub fn solve_dense(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    settings: &QpSettings,
) -> Result<DenseSolution> {
    let n = g.len();
    let (p, m) = (b.len(), d.len());
    if h.shape() != (n, n) || a.shape() != (p, n) || c.shape() != (m, n) {
        return Err(Error::InvalidArgument("dense QP blocks are inconsistent".into()));
    }
    let mut z = DVector::zeros(n);
    let mut y = DVector::zeros(p);
    let mut t = (c * &z + d).map(|v| v.max(1.0));
    let mut lam = DVector::from_element(m, 1.0);
    let reg = 1e-12 * (1.0 + h.amax());
    let ct = c.transpose();
    let at = a.transpose();
    let mut residual = f64::INFINITY;
    for it in 0..settings.max_iterations {
        let rd = h * &z + g - &at * &y - &ct * &lam;
        let re = a * &z - b;
        let ri = c * &z + d - &t;
        let mu = if m > 0 { t.dot(&lam) / m as f64 } else { 0.0 };
        residual = rd
            .amax()
            .max(if p > 0 { re.amax() } else { 0.0 })
            .max(if m > 0 { ri.amax() } else { 0.0 })
            .max(mu);
        if residual <= settings.tolerance {
            return Ok(DenseSolution {
                z,
                y,
                lambda: lam,
                iterations: it,
                residual,
            });
        }
        let dvec = lam.component_div(&t);
        let mut kkt = DMatrix::zeros(n + p, n + p);
        let mut hm = h.clone();
        for (i, &di) in dvec.iter().enumerate() {
            let row = c.row(i);
            hm += di * row.transpose() * row;
        }
        for i in 0..n {
            hm[(i, i)] += reg;
        }
        kkt.view_mut((0, 0), (n, n)).copy_from(&hm);
        kkt.view_mut((0, n), (n, p)).copy_from(&(-&at));
        kkt.view_mut((n, 0), (p, n)).copy_from(a);
        for i in 0..p {
            kkt[(n + i, n + i)] = -reg;
        }
        let lu = kkt.lu();
        let newton = |rc: &DVector<f64>| -> Option<Direction> {
            let corr = (-rc - lam.component_mul(&ri)).component_div(&t);
            let mut rhs = DVector::zeros(n + p);
            rhs.rows_mut(0, n).copy_from(&(-&rd + &ct * &corr));
            rhs.rows_mut(n, p).copy_from(&(-&re));
            let sol = lu.solve(&rhs)?;
            let dz = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, p).into_owned();
            let dt = c * &dz + &ri;
            let dl = corr - dvec.component_mul(&(c * &dz));
            Some((dz, dy, dt, dl))
        };
        let step = |dt: &DVector<f64>, dl: &DVector<f64>| -> f64 {
            let mut s = 1.0f64;
            for i in 0..m {
                if dt[i] < 0.0 {
                    s = s.min(-t[i] / dt[i]);
                }
                if dl[i] < 0.0 {
                    s = s.min(-lam[i] / dl[i]);
                }
            }
            s
        };
        let fail = || Error::QpFailure("singular KKT matrix".into());
        let (_, _, dt_a, dl_a) = newton(&t.component_mul(&lam)).ok_or_else(fail)?;
        let a_aff = step(&dt_a, &dl_a);
        let sigma = if m > 0 {
            let mu_aff = (&t + a_aff * &dt_a).dot(&(&lam + a_aff * &dl_a)) / m as f64;
            crate::math::powi(mu_aff / mu, 3).min(1.0)
        } else {
            0.0
        };
        // keeping the centring target above the tolerance avoids the
        // ill-conditioning of complementarity racing ahead of feasibility
        let target = (sigma * mu).max(0.1 * settings.tolerance);
        let rc = (t.component_mul(&lam) + dt_a.component_mul(&dl_a)).add_scalar(-target);
        let (dz, dy, dt, dl) = newton(&rc).ok_or_else(fail)?;
        let alpha = (0.99 * step(&dt, &dl)).min(1.0);
        z += alpha * dz;
        y += alpha * dy;
        t += alpha * dt;
        lam += alpha * dl;
    }
    Err(Error::QpFailure(alloc::format!(
        "dense QP did not converge (residual {residual:.3e})"
    )))
}

fn complementarity(qp: &StructuredQp, rs: &[RowState]) -> f64 {
    let mut c = 0.0;
    for (k, st) in rs.iter().enumerate() {
        c += st.t.dot(&st.lam);
        for (i, row) in qp.stages[k].rows.iter().enumerate() {
            if row.weight.is_some() {
                c += st.s[i] * st.lam_s[i];
            }
        }
    }
    c
}

fn primal_residuals(qp: &StructuredQp, x: &[DVector<f64>], w: &[DVector<f64>], rs: &[RowState]) -> (f64, f64) {
    let (mut rp, mut rsl) = (0.0f64, 0.0f64);
    for (k, st) in rs.iter().enumerate() {
        let z = stack(&x[k], &w[k]);
        for (i, row) in qp.stages[k].rows.iter().enumerate() {
            rp = rp.max((row.eval(&z) + st.s[i] - st.t[i]).abs());
            if let Some(wt) = row.weight {
                rsl = rsl.max((2.0 * wt * st.s[i] - st.lam[i] - st.lam_s[i]).abs());
            }
        }
    }
    (rp, rsl)
}

fn max_step(qp: &StructuredQp, rs: &[RowState], d: &[RowState]) -> f64 {
    let mut a = 1.0f64;
    let mut limit = |v: f64, dv: f64| {
        if dv < 0.0 {
            a = a.min(-v / dv);
        }
    };
    for k in 0..rs.len() {
        for (i, row) in qp.stages[k].rows.iter().enumerate() {
            limit(rs[k].t[i], d[k].t[i]);
            limit(rs[k].lam[i], d[k].lam[i]);
            if row.weight.is_some() {
                limit(rs[k].s[i], d[k].s[i]);
                limit(rs[k].lam_s[i], d[k].lam_s[i]);
            }
        }
    }
    a
}

fn objective(qp: &StructuredQp, x: &[DVector<f64>], w: &[DVector<f64>], slacks: &[DVector<f64>]) -> f64 {
    let mut j = 0.0;
    for (k, st) in qp.stages.iter().enumerate() {
        j += st.value(&x[k], &w[k]);
        for (i, row) in st.rows.iter().enumerate() {
            if let Some(wt) = row.weight {
                j += wt * slacks[k][i] * slacks[k][i];
            }
        }
    }
    j
}

/// Stationarity residual `‖∇ℒ‖∞` of the original problem, with the
/// dynamics multipliers recovered by backward substitution.
fn kkt_residual(qp: &StructuredQp, x: &[DVector<f64>], w: &[DVector<f64>], lam: &[DVector<f64>]) -> f64 {
    let n = qp.stages.len();
    let mut res = 0.0f64;
    let mut nu_next: Option<DVector<f64>> = None;
    for k in (0..n).rev() {
        let st = &qp.stages[k];
        let nx = st.nx();
        let mut gx = &st.q * &x[k] + st.s.transpose() * &w[k] + &st.qv;
        let mut gw = &st.s * &x[k] + &st.r * &w[k] + &st.rv;
        if lam[k].len() == st.rows.len() {
            for (i, row) in st.rows.iter().enumerate() {
                for (&j, &v) in row.indices.iter().zip(&row.values) {
                    if j < nx {
                        gx[j] -= v * lam[k][i];
                    } else {
                        gw[j - nx] -= v * lam[k][i];
                    }
                }
            }
        }
        if let Some(nu) = &nu_next {
            let d = &qp.dynamics[k];
            gx += d.a.transpose() * nu;
            gw += d.b.transpose() * nu;
        }
        if !gw.is_empty() {
            res = res.max(gw.amax());
        }
        nu_next = Some(gx);
    }
    res
}
