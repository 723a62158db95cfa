//! Dense oracles for the structured QP solver.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waiter_core::qp::{solve, solve_dense, Dynamics, QpSettings, Stage, StructuredQp};

pub const TIGHT: QpSettings = QpSettings {
    max_iterations: 100,
    tolerance: 1e-11,
};

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random convex instance; the last stage has no input.
pub fn random_instance(rng: &mut ChaCha8Rng, nx: usize, nu: usize, horizon: usize) -> StructuredQp {
    let mut stages = Vec::new();
    let mut dynamics = Vec::new();
    for k in 0..horizon {
        let m = if k + 1 < horizon { nu } else { 0 };
        let l = random_matrix(rng, nx + m, nx + m, 1.0);
        let h = &l * l.transpose() + DMatrix::identity(nx + m, nx + m) * 0.1;
        let mut st = Stage::zeros(nx, m);
        st.q.copy_from(&h.view((0, 0), (nx, nx)));
        st.s.copy_from(&h.view((nx, 0), (m, nx)));
        st.r.copy_from(&h.view((nx, nx), (m, m)));
        st.qv = random_vector(rng, nx, 1.0);
        st.rv = random_vector(rng, m, 1.0);
        stages.push(st);
        if k + 1 < horizon {
            dynamics.push(Dynamics {
                a: DMatrix::identity(nx, nx) + random_matrix(rng, nx, nx, 0.3),
                b: random_matrix(rng, nx, m, 1.0),
                c: random_vector(rng, nx, 0.5),
            });
        }
    }
    StructuredQp {
        x0: random_vector(rng, nx, 1.0),
        stages,
        dynamics,
    }
}

/// Offsets of `[x_k; w_k]` in the stacked dense vector.
pub fn offsets(qp: &StructuredQp) -> Vec<usize> {
    let mut out = Vec::new();
    let mut o = 0;
    for st in &qp.stages {
        out.push(o);
        o += st.nx() + st.nu();
    }
    out.push(o);
    out
}

pub struct Dense {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

/// Dense form of the structured problem; soft rows get explicit slack
/// variables after the stage variables.
pub fn densify(qp: &StructuredQp) -> Dense {
    let off = offsets(qp);
    let nz = *off.last().unwrap();
    let soft: usize = qp
        .stages
        .iter()
        .flat_map(|s| &s.rows)
        .filter(|r| r.weight.is_some())
        .count();
    let rows: usize = qp.stages.iter().map(|s| s.rows.len()).sum();
    let n = nz + soft;
    let nx0 = qp.stages[0].nx();
    let neq = nx0 + qp.dynamics.iter().map(|d| d.a.nrows()).sum::<usize>();
    let mut h = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);
    let mut a = DMatrix::zeros(neq, n);
    let mut b = DVector::zeros(neq);
    let mut c = DMatrix::zeros(rows + soft, n);
    let mut d = DVector::zeros(rows + soft);
    for (k, st) in qp.stages.iter().enumerate() {
        let (nx, nu, o) = (st.nx(), st.nu(), off[k]);
        h.view_mut((o, o), (nx, nx)).copy_from(&st.q);
        h.view_mut((o + nx, o), (nu, nx)).copy_from(&st.s);
        h.view_mut((o, o + nx), (nx, nu)).copy_from(&st.s.transpose());
        h.view_mut((o + nx, o + nx), (nu, nu)).copy_from(&st.r);
        g.rows_mut(o, nx).copy_from(&st.qv);
        g.rows_mut(o + nx, nu).copy_from(&st.rv);
    }
    a.view_mut((0, 0), (nx0, nx0)).fill_with_identity();
    b.rows_mut(0, nx0).copy_from(&qp.x0);
    let mut r = nx0;
    for (k, dy) in qp.dynamics.iter().enumerate() {
        let (nx, nx1) = (qp.stages[k].nx(), dy.a.nrows());
        let nu = qp.stages[k].nu();
        a.view_mut((r, off[k + 1]), (nx1, nx1)).fill_with_identity();
        a.view_mut((r, off[k]), (nx1, nx)).copy_from(&(-&dy.a));
        a.view_mut((r, off[k] + nx), (nx1, nu)).copy_from(&(-&dy.b));
        b.rows_mut(r, nx1).copy_from(&dy.c);
        r += nx1;
    }
    let (mut i, mut s) = (0, 0);
    for (k, st) in qp.stages.iter().enumerate() {
        for row in &st.rows {
            for (&j, &v) in row.indices.iter().zip(&row.values) {
                c[(i, off[k] + j)] = v;
            }
            d[i] = row.offset;
            if let Some(w) = row.weight {
                let col = nz + s;
                c[(i, col)] = 1.0;
                h[(col, col)] = 2.0 * w;
                c[(rows + s, col)] = 1.0;
                s += 1;
            }
            i += 1;
        }
    }
    Dense { h, g, a, b, c, d }
}

pub fn structured_vector(qp: &StructuredQp, x: &[DVector<f64>], w: &[DVector<f64>]) -> DVector<f64> {
    let off = offsets(qp);
    let mut z = DVector::zeros(*off.last().unwrap());
    for k in 0..qp.stages.len() {
        z.rows_mut(off[k], x[k].len()).copy_from(&x[k]);
        z.rows_mut(off[k] + x[k].len(), w[k].len()).copy_from(&w[k]);
    }
    z
}

/// Largest deviation between the structured solver and the dense KKT
/// solution over `cases` random equality-constrained instances.
pub fn equality_instances_error(seed: u64, cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (nx, nu, n) = (rng.random_range(1..6), rng.random_range(1..4), rng.random_range(2..8));
        let qp = random_instance(&mut rng, nx, nu, n);
        let sol = solve(&qp, &TIGHT).unwrap();
        let dense = densify(&qp);
        let oracle = solve_dense(&dense.h, &dense.g, &dense.a, &dense.b, &dense.c, &dense.d, &TIGHT).unwrap();
        let z = structured_vector(&qp, &sol.x, &sol.w);
        worst = worst.max((&z - &oracle.z).amax());
    }
    worst
}

/// Backward Riccati recursion for `Σ ½(xᵀQx + uᵀRu) + ½ x_Nᵀ Q_N x_N`.
pub fn textbook_gains(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qn: &DMatrix<f64>,
    n: usize,
) -> Vec<DMatrix<f64>> {
    let mut p = qn.clone();
    let mut gains = vec![DMatrix::zeros(0, 0); n];
    for k in (0..n).rev() {
        let m = r + b.transpose() * &p * b;
        let k_gain = -m.try_inverse().unwrap() * b.transpose() * &p * a;
        p = q + a.transpose() * &p * a + a.transpose() * &p * b * &k_gain;
        gains[k] = k_gain;
    }
    gains
}

pub struct LqrCheck {
    /// Largest gain error relative to `1 + |K|∞`.
    pub gain_error: f64,
    /// Largest deviation of the optimal input from `K x`.
    pub input_error: f64,
}

/// Time-invariant LQR instances solved by the structured solver against the
/// textbook recursion.
pub fn riccati_error(seed: u64, cases: usize) -> LqrCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = LqrCheck {
        gain_error: 0.0,
        input_error: 0.0,
    };
    for _ in 0..cases {
        let (nx, nu, n) = (rng.random_range(2..6), rng.random_range(1..4), rng.random_range(2..15));
        let a = DMatrix::identity(nx, nx) + random_matrix(&mut rng, nx, nx, 0.2);
        let b = random_matrix(&mut rng, nx, nu, 1.0);
        let lq = random_matrix(&mut rng, nx, nx, 1.0);
        let q = &lq * lq.transpose() + DMatrix::identity(nx, nx) * 0.01;
        let lr = random_matrix(&mut rng, nu, nu, 1.0);
        let r = &lr * lr.transpose() + DMatrix::identity(nu, nu) * 0.1;
        let qn = q.clone() * 2.0;
        let mut stages = Vec::new();
        for k in 0..=n {
            let m = if k < n { nu } else { 0 };
            let mut st = Stage::zeros(nx, m);
            st.q = if k < n { q.clone() } else { qn.clone() };
            if k < n {
                st.r = r.clone();
            }
            stages.push(st);
        }
        let dynamics = (0..n)
            .map(|_| Dynamics {
                a: a.clone(),
                b: b.clone(),
                c: DVector::zeros(nx),
            })
            .collect();
        let qp = StructuredQp {
            x0: random_vector(&mut rng, nx, 1.0),
            stages,
            dynamics,
        };
        let sol = solve(&qp, &TIGHT).unwrap();
        let expected = textbook_gains(&a, &b, &q, &r, &qn, n);
        for (k, gain) in expected.iter().enumerate() {
            let err = (&sol.gains[k] - gain).amax() / (1.0 + gain.amax());
            out.gain_error = out.gain_error.max(err);
            // the unconstrained optimum is the closed loop itself
            let u = gain * &sol.x[k];
            out.input_error = out.input_error.max((&sol.w[k] - u).amax());
        }
    }
    out
}
