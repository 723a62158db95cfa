//! Minimum statically-feasible friction coefficients.
//!
//! Finds the tray orientation, contact forces and friction coefficients that
//! minimize `½ Σᵢ αᵢ μᵢ²` while every object is balanced with the end
//! effector at rest. The orientation is parametrized by roll and pitch; yaw
//! does not change the objective and is fixed to zero.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::autodiff::Dual;
use crate::balance::{self, Arrangement, Body, ContactForces, ForceMode, ResidualScale};
use crate::error::{Error, Result};
use crate::kinematics::EEState;
use crate::qp::{self, QpSettings};
use crate::spatial;

#[derive(Clone, Debug, PartialEq)]
pub struct MinMuProblem {
    pub arrangement: Arrangement,
    /// Weight `αᵢ` of every contact.
    pub weights: Vec<f64>,
    /// Contacts sharing one coefficient; every contact is in exactly one group.
    pub groups: Vec<Vec<usize>>,
}

impl MinMuProblem {
    /// Unit weights and one group per pair of touching bodies.
    pub fn new(arrangement: Arrangement) -> Result<Self> {
        let mut by_pair: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, c) in arrangement.contacts.iter().enumerate() {
            let below = match c.supporting {
                Body::Tray => 0,
                Body::Object(j) => j + 1,
            };
            by_pair.entry((below, c.supported)).or_default().push(i);
        }
        let groups = by_pair.into_values().collect();
        let weights = vec![1.0; arrangement.num_contacts()];
        Self::with_groups(arrangement, groups, weights)
    }

    pub fn with_groups(arrangement: Arrangement, groups: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        let n = arrangement.num_contacts();
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                what: "contact weights",
                expected: n,
                found: weights.len(),
            });
        }
        if weights.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidArgument("contact weights must be positive".into()));
        }
        let mut seen = vec![0usize; n];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::InvalidArgument("empty coefficient group".into()));
            }
            for &i in g {
                if i >= n {
                    return Err(Error::InvalidArgument(alloc::format!("group references contact {i}")));
                }
                seen[i] += 1;
            }
        }
        if seen.iter().any(|&s| s != 1) {
            return Err(Error::InvalidArgument(
                "every contact must be in exactly one group".into(),
            ));
        }
        arrangement.validate()?;
        Ok(Self {
            arrangement,
            weights,
            groups,
        })
    }

    /// Replaces the weights by `1 / μ̄ᵢ` from the nominal coefficients.
    pub fn with_nominal_weights(mut self) -> Result<Self> {
        for (a, c) in self.weights.iter_mut().zip(&self.arrangement.contacts) {
            if !(c.mu_nominal > 0.0) {
                return Err(Error::InvalidArgument(
                    "nominal weights need positive nominal coefficients".into(),
                ));
            }
            *a = 1.0 / c.mu_nominal;
        }
        Ok(self)
    }

    fn group_weights(&self) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| g.iter().map(|&i| self.weights[i]).sum())
            .collect()
    }

    fn group_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.arrangement.num_contacts()];
        for (gi, g) in self.groups.iter().enumerate() {
            for &i in g {
                out[i] = gi;
            }
        }
        out
    }

    /// Arrangement with the coefficient of every contact set from `mu`
    /// (one value per group).
    pub fn arrangement_with(&self, mu: &[f64]) -> Result<Arrangement> {
        let g = self.group_of();
        let per_contact: Vec<f64> = g.iter().map(|&k| mu[k]).collect();
        self.arrangement.with_mu(&per_contact)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinMuSolution {
    /// One coefficient per group.
    pub mu: Vec<f64>,
    /// The group coefficient of every contact.
    pub contact_mu: Vec<f64>,
    /// Roll, pitch, yaw of the tray.
    pub theta: [f64; 3],
    pub rotation: Matrix3<f64>,
    /// Witness forces (physical, full mode).
    pub forces: ContactForces,
    pub objective: f64,
    pub kkt_residual: f64,
    pub converged: bool,
}

impl MinMuSolution {
    pub fn tilt(&self) -> f64 {
        crate::kinematics::tilt_angle(&self.rotation)
    }

    /// Stationary end-effector state with the optimal orientation.
    pub fn ee_state(&self) -> EEState {
        EEState::at_rest(self.rotation, Vector3::zeros())
    }
}

fn rotation(roll: f64, pitch: f64) -> Matrix3<f64> {
    spatial::m_value(&spatial::rpy(roll, pitch, 0.0))
}

/// Body-frame gravity `Rᵀ g` and its Jacobian with respect to roll, pitch.
fn body_gravity(roll: f64, pitch: f64, g: &Vector3<f64>) -> (Vector3<f64>, DMatrix<f64>) {
    let [r, p] = Dual::<2>::seed(&[roll, pitch]);
    let rot = spatial::rpy(r, p, Dual::constant(0.0));
    let gb = spatial::mat_t_vec(&rot, &spatial::v_cst(g));
    let value = spatial::v_value(&gb);
    let jac = DMatrix::from_fn(3, 2, |i, j| gb[i].eps[j]);
    (value, jac)
}

struct Layout {
    groups: usize,
    contacts: usize,
}

impl Layout {
    fn n(&self) -> usize {
        2 + self.groups + 3 * self.contacts
    }
    fn mu(&self, g: usize) -> usize {
        2 + g
    }
    fn f(&self, i: usize) -> usize {
        2 + self.groups + 3 * i
    }
}

struct Model<'a> {
    problem: &'a MinMuProblem,
    layout: Layout,
    wrench: Vec<DMatrix<f64>>,
    group_of: Vec<usize>,
    group_weights: Vec<f64>,
}

impl<'a> Model<'a> {
    fn new(problem: &'a MinMuProblem) -> Result<Self> {
        let arr = &problem.arrangement;
        let wrench = (0..arr.objects.len())
            .map(|o| balance::contact_wrench_matrix(arr, o, ForceMode::Full))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            problem,
            layout: Layout {
                groups: problem.groups.len(),
                contacts: arr.num_contacts(),
            },
            wrench,
            group_of: problem.group_of(),
            group_weights: problem.group_weights(),
        })
    }

    fn forces(&self, z: &DVector<f64>) -> DVector<f64> {
        z.rows(self.layout.f(0), 3 * self.layout.contacts).into_owned()
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        (0..self.layout.groups)
            .map(|g| 0.5 * self.group_weights[g] * z[self.layout.mu(g)] * z[self.layout.mu(g)])
            .sum()
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.layout.n());
        for k in 0..self.layout.groups {
            g[self.layout.mu(k)] = self.group_weights[k] * z[self.layout.mu(k)];
        }
        g
    }

    /// Newton-Euler residuals at rest and their Jacobian.
    fn equalities(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let arr = &self.problem.arrangement;
        let (gb, jg) = body_gravity(z[0], z[1], &arr.gravity);
        let xi = self.forces(z);
        let n_obj = arr.objects.len();
        let mut c = DVector::zeros(6 * n_obj);
        let mut j = DMatrix::zeros(6 * n_obj, self.layout.n());
        for (o, obj) in arr.objects.iter().enumerate() {
            let w = &self.wrench[o];
            let mut r = w * &xi;
            for k in 0..3 {
                r[k] += obj.mass * gb[k];
            }
            c.rows_mut(6 * o, 6).copy_from(&r);
            j.view_mut((6 * o, 0), (3, 2)).copy_from(&(obj.mass * &jg));
            j.view_mut((6 * o, self.layout.f(0)), (6, 3 * self.layout.contacts))
                .copy_from(w);
        }
        (c, j)
    }

    /// Pyramid rows (bilinear in μ and f) and `μ ≥ 0`, with Jacobian.
    fn inequalities(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let arr = &self.problem.arrangement;
        let nc = self.layout.contacts;
        let rows = 5 * nc + self.layout.groups;
        let mut c = DVector::zeros(rows);
        let mut j = DMatrix::zeros(rows, self.layout.n());
        for (i, cp) in arr.contacts.iter().enumerate() {
            let fi = self.layout.f(i);
            let f = Vector3::new(z[fi], z[fi + 1], z[fi + 2]);
            let gcol = self.layout.mu(self.group_of[i]);
            let mu = z[gcol];
            let n = cp.normal;
            let s1 = cp.tangent.column(0).into_owned();
            let s2 = cp.tangent.column(1).into_owned();
            let fnorm = n.dot(&f);
            let (t1, t2) = (s1.dot(&f), s2.dot(&f));
            c[5 * i] = fnorm;
            for k in 0..3 {
                j[(5 * i, fi + k)] = n[k];
            }
            for (r, (a, b)) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)].iter().enumerate() {
                let row = 5 * i + 1 + r;
                c[row] = mu * fnorm + a * t1 + b * t2;
                j[(row, gcol)] = fnorm;
                for k in 0..3 {
                    j[(row, fi + k)] = mu * n[k] + a * s1[k] + b * s2[k];
                }
            }
        }
        for g in 0..self.layout.groups {
            c[5 * nc + g] = z[self.layout.mu(g)];
            j[(5 * nc + g, self.layout.mu(g))] = 1.0;
        }
        (c, j)
    }

    fn violation(&self, z: &DVector<f64>) -> f64 {
        let (e, _) = self.equalities(z);
        let (i, _) = self.inequalities(z);
        e.iter().map(|v| v.abs()).sum::<f64>() + i.iter().map(|v| (-v).max(0.0)).sum::<f64>()
    }
}

const TRUST_RADIUS: f64 = 0.1;
const MAX_SQP_ITERATIONS: usize = 300;

struct LocalResult {
    z: DVector<f64>,
    kkt: f64,
    violation: f64,
    converged: bool,
}

fn sqp(model: &Model, z0: DVector<f64>) -> Result<LocalResult> {
    let n = model.layout.n();
    let mut z = z0;
    let mut rho = 10.0;
    let settings = QpSettings {
        max_iterations: 80,
        tolerance: 1e-10,
    };
    let mut kkt = f64::INFINITY;
    let mut converged = false;
    for _ in 0..MAX_SQP_ITERATIONS {
        let (ce, je) = model.equalities(&z);
        let (ci, ji) = model.inequalities(&z);
        let grad = model.gradient(&z);
        let mut h = DMatrix::zeros(n, n);
        for k in 0..n {
            h[(k, k)] = if k < 2 { 1e-4 } else { 1e-6 };
        }
        for g in 0..model.layout.groups {
            let k = model.layout.mu(g);
            h[(k, k)] += model.group_weights[g];
        }
        // trust region on the orientation step
        let mut c = DMatrix::zeros(ci.len() + 4, n);
        c.view_mut((0, 0), ji.shape()).copy_from(&ji);
        let mut d = DVector::zeros(ci.len() + 4);
        d.rows_mut(0, ci.len()).copy_from(&ci);
        for k in 0..2 {
            c[(ci.len() + 2 * k, k)] = 1.0;
            c[(ci.len() + 2 * k + 1, k)] = -1.0;
            d[ci.len() + 2 * k] = TRUST_RADIUS;
            d[ci.len() + 2 * k + 1] = TRUST_RADIUS;
        }
        let sol = qp::solve_dense(&h, &grad, &je, &(-&ce), &c, &d, &settings)?;
        let step = sol.z;
        let lam = sol.lambda.rows(0, ci.len()).into_owned();

        let stationarity = (&grad - je.transpose() * &sol.y - ji.transpose() * &lam).amax();
        let viol = ce.amax().max(ci.iter().fold(0.0f64, |m, &v| m.max(-v)));
        let compl = lam
            .iter()
            .zip(ci.iter())
            .fold(0.0f64, |m, (&l, &v)| m.max((l * v).abs()));
        kkt = stationarity.max(viol).max(compl);
        if kkt <= 1e-9 || step.amax() <= 1e-12 {
            converged = kkt <= 1e-6;
            break;
        }

        rho = f64::max(rho, 2.0 * sol.y.amax().max(lam.amax()) + 1e-3);
        let merit = |z: &DVector<f64>| model.objective(z) + rho * model.violation(z);
        let phi0 = merit(&z);
        let slope = grad.dot(&step) - rho * model.violation(&z);
        let mut alpha = 1.0;
        loop {
            let trial = &z + alpha * &step;
            if merit(&trial) <= phi0 + 1e-4 * alpha * slope.min(0.0) {
                z = trial;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-8 {
                z += alpha * &step;
                break;
            }
        }
    }
    let violation = {
        let (ce, _) = model.equalities(&z);
        let (ci, _) = model.inequalities(&z);
        ce.amax().max(ci.iter().fold(0.0f64, |m, &v| m.max(-v)))
    };
    Ok(LocalResult {
        z,
        kkt,
        violation,
        converged: converged || kkt <= 1e-6,
    })
}

fn initial_point(model: &Model, roll: f64, pitch: f64) -> Result<DVector<f64>> {
    let problem = model.problem;
    let mut z = DVector::zeros(model.layout.n());
    z[0] = roll;
    z[1] = pitch;
    let mut mu0 = Vec::with_capacity(model.layout.groups);
    for (g, members) in problem.groups.iter().enumerate() {
        let nominal = members
            .iter()
            .map(|&i| problem.arrangement.contacts[i].mu_nominal)
            .sum::<f64>()
            / members.len() as f64;
        let m = nominal.max(0.1);
        z[model.layout.mu(g)] = m;
        mu0.push(m);
    }
    let e = EEState::at_rest(rotation(roll, pitch), Vector3::zeros());
    let generous: Vec<f64> = mu0.iter().map(|m| 10.0 * m + 1.0).collect();
    let arr = problem.arrangement_with(&generous)?;
    if let Some(f) = balance::feasibility_oracle(&e, &arr, ForceMode::Full)?.forces {
        z.rows_mut(model.layout.f(0), 3 * model.layout.contacts)
            .copy_from(&f.values);
    }
    Ok(z)
}

/// Solves the minimum-friction problem by SQP from several starting tilts.
pub fn solve_min_mu(problem: &MinMuProblem) -> Result<MinMuSolution> {
    let model = Model::new(problem)?;
    let starts = [(0.0, 0.0), (0.15, 0.0), (-0.15, 0.0), (0.0, 0.15), (0.0, -0.15)];
    let mut best: Option<(f64, LocalResult)> = None;
    let mut last_violation = f64::INFINITY;
    for &(r, p) in &starts {
        let z0 = initial_point(&model, r, p)?;
        let local = sqp(&model, z0)?;
        last_violation = last_violation.min(local.violation);
        if local.violation > 1e-6 {
            continue;
        }
        let obj = model.objective(&local.z);
        let better = match &best {
            None => true,
            Some((b, cur)) => {
                obj < b - 1e-9
                    || ((obj - b).abs() <= 1e-9
                        && (local.z[0], local.z[1]).partial_cmp(&(cur.z[0], cur.z[1]))
                            == Some(core::cmp::Ordering::Less))
            }
        };
        if better {
            best = Some((obj, local));
        }
    }
    let Some((objective, local)) = best else {
        return Err(Error::InfeasibleArrangement(alloc::format!(
            "no balanced orientation found (constraint violation {last_violation:.3e})"
        )));
    };
    let z = local.z;
    let mu: Vec<f64> = (0..model.layout.groups)
        .map(|g| z[model.layout.mu(g)].max(0.0))
        .collect();
    let polished = polish(problem, [z[0], z[1]], &mu)?;
    let (mu, forces, objective, certified) = match polished {
        Some((mu, forces)) => {
            let w = problem.group_weights();
            let obj = 0.5 * mu.iter().zip(&w).map(|(m, w)| w * m * m).sum::<f64>();
            (mu, forces, obj, true)
        }
        None => (
            mu,
            ContactForces {
                mode: ForceMode::Full,
                values: model.forces(&z),
            },
            objective,
            false,
        ),
    };
    let contact_mu = model.group_of.iter().map(|&g| mu[g]).collect();
    Ok(MinMuSolution {
        objective,
        contact_mu,
        mu,
        theta: [z[0], z[1], 0.0],
        rotation: rotation(z[0], z[1]),
        forces,
        kkt_residual: local.kkt,
        converged: local.converged || (certified && local.kkt <= 1e-3),
    })
}

/// Shrinks the coefficients along their own ray at a fixed orientation
/// until the LP oracle stops certifying balance. The interior-point
/// subproblems leave the coefficients slightly off their bound, which
/// matters when the true minimum is zero.
fn polish(problem: &MinMuProblem, th: [f64; 2], mu: &[f64]) -> Result<Option<(Vec<f64>, ContactForces)>> {
    let e = EEState::at_rest(rotation(th[0], th[1]), Vector3::zeros());
    let scaled = |s: f64| -> Vec<f64> { mu.iter().map(|m| s * m).collect() };
    let witness = |s: f64| -> Result<Option<ContactForces>> {
        Ok(balance::feasibility_oracle(&e, &problem.arrangement_with(&scaled(s))?, ForceMode::Full)?.forces)
    };
    if let Some(f) = witness(0.0)? {
        return Ok(Some((scaled(0.0), f)));
    }
    let mut hi = 1.0;
    let mut best = witness(hi)?;
    while best.is_none() {
        hi *= 1.001;
        if hi > 1.01 {
            return Ok(None);
        }
        best = witness(hi)?;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        match witness(mid)? {
            Some(f) => {
                hi = mid;
                best = Some(f);
            }
            None => lo = mid,
        }
    }
    Ok(best.map(|f| (scaled(hi), f)))
}

const BRUTE_FORCE_MAX_TILT: f64 = 30.0 * core::f64::consts::PI / 180.0;
const BRUTE_FORCE_MU_CAP: f64 = 2.0;

/// Grid search over roll and pitch with bisection on the coefficients,
/// using the LP feasibility oracle. The grid is refined around the best
/// point until its spacing reaches `resolution` (radians). At most two
/// groups are supported.
pub fn min_mu_bruteforce(problem: &MinMuProblem, resolution: f64) -> Result<MinMuSolution> {
    if problem.groups.len() > 2 {
        return Err(Error::InvalidArgument(
            "brute force supports at most two coefficient groups".into(),
        ));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidArgument("grid resolution must be positive".into()));
    }
    let weights = problem.group_weights();
    let mut best: Option<(f64, [f64; 2], Vec<f64>)> = None;

    let mut step = resolution.max(BRUTE_FORCE_MAX_TILT / 15.0);
    let mut center = [0.0, 0.0];
    let mut half_span = BRUTE_FORCE_MAX_TILT;
    loop {
        let n = libm::round(half_span / step) as i64;
        for i in -n..=n {
            for j in -n..=n {
                let th = [center[0] + i as f64 * step, center[1] + j as f64 * step];
                let budget = best.as_ref().map_or(f64::INFINITY, |b| b.0);
                if let Some((obj, mu)) = best_mu_at(problem, &weights, th, budget)? {
                    let better = match &best {
                        None => true,
                        Some((b, bt, _)) => obj < *b - 1e-12 || ((obj - b).abs() <= 1e-12 && th < *bt),
                    };
                    if better {
                        best = Some((obj, th, mu));
                    }
                }
            }
        }
        if step <= resolution * (1.0 + 1e-9) {
            break;
        }
        let Some((_, th, _)) = &best else { break };
        center = *th;
        half_span = 2.0 * step;
        step = (step / 4.0).max(resolution);
    }
    let Some((objective, th, mu)) = best else {
        return Err(Error::InfeasibleArrangement(
            "no grid orientation balances the arrangement".into(),
        ));
    };
    let rot = rotation(th[0], th[1]);
    let arr = problem.arrangement_with(&mu)?;
    let e = EEState::at_rest(rot, Vector3::zeros());
    let forces = balance::feasibility_oracle(&e, &arr, ForceMode::Full)?
        .forces
        .ok_or_else(|| Error::LpFailure("grid optimum lost feasibility".into()))?;
    let contact_mu = problem.group_of().iter().map(|&g| mu[g]).collect();
    Ok(MinMuSolution {
        mu,
        contact_mu,
        theta: [th[0], th[1], 0.0],
        rotation: rot,
        forces,
        objective,
        kkt_residual: 0.0,
        converged: true,
    })
}

/// Smallest objective at a fixed orientation, if below `budget`.
fn best_mu_at(problem: &MinMuProblem, weights: &[f64], th: [f64; 2], budget: f64) -> Result<Option<(f64, Vec<f64>)>> {
    let e = EEState::at_rest(rotation(th[0], th[1]), Vector3::zeros());
    let ng = weights.len();
    let feasible = |mu: &[f64]| -> Result<bool> {
        Ok(balance::feasibility_oracle(&e, &problem.arrangement_with(mu)?, ForceMode::Full)?.feasible)
    };
    let cap = |w: f64, remaining: f64| -> f64 {
        if remaining.is_finite() {
            libm::sqrt(2.0 * remaining.max(0.0) / w).min(BRUTE_FORCE_MU_CAP)
        } else {
            BRUTE_FORCE_MU_CAP
        }
    };
    // smallest value for group `g` with the others at `others`
    let bisect = |g: usize, others: &[f64], hi: f64| -> Result<Option<f64>> {
        let mut mu = others.to_vec();
        mu[g] = hi;
        if !feasible(&mu)? {
            return Ok(None);
        }
        mu[g] = 0.0;
        if feasible(&mu)? {
            return Ok(Some(0.0));
        }
        let (mut lo, mut up) = (0.0, hi);
        while up - lo > 1e-6 {
            let mid = 0.5 * (lo + up);
            mu[g] = mid;
            if feasible(&mu)? {
                up = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Some(up))
    };
    if ng == 1 {
        return Ok(bisect(0, &[0.0], cap(weights[0], budget))?.map(|m| (0.5 * weights[0] * m * m, vec![m])));
    }
    let big = [BRUTE_FORCE_MU_CAP; 2];
    let Some(m0) = bisect(0, &big, cap(weights[0], budget))? else {
        return Ok(None);
    };
    let rest = budget - 0.5 * weights[0] * m0 * m0;
    let Some(m1) = bisect(1, &big, cap(weights[1], rest))? else {
        return Ok(None);
    };
    if feasible(&[m0, m1])? {
        let obj = 0.5 * (weights[0] * m0 * m0 + weights[1] * m1 * m1);
        return Ok((obj < budget).then(|| (obj, vec![m0, m1])));
    }
    // coupled groups: search along directions in the (μ₀, μ₁) plane
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 0..=32 {
        let phi = k as f64 / 32.0 * core::f64::consts::FRAC_PI_2;
        let dir = [
            libm::cos(phi) / libm::sqrt(weights[0]),
            libm::sin(phi) / libm::sqrt(weights[1]),
        ];
        let scaled = |s: f64| [s * dir[0], s * dir[1]];
        let (mut lo, mut hi) = (0.0, 4.0 * BRUTE_FORCE_MU_CAP);
        if !feasible(&scaled(hi))? {
            continue;
        }
        while hi - lo > 1e-6 {
            let mid = 0.5 * (lo + hi);
            if feasible(&scaled(mid))? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mu = scaled(hi).to_vec();
        let obj = 0.5 * (weights[0] * mu[0] * mu[0] + weights[1] * mu[1] * mu[1]);
        if obj < budget && best.as_ref().is_none_or(|b| obj < b.0) {
            best = Some((obj, mu));
        }
    }
    Ok(best)
}

/// Largest unscaled Newton-Euler residual of a solution's witness.
pub fn witness_residual(problem: &MinMuProblem, sol: &MinMuSolution) -> Result<f64> {
    let arr = problem.arrangement_with(&sol.mu)?;
    Ok(balance::balance_residual(&sol.ee_state(), &sol.forces, &arr, ResidualScale::Unscaled)?.amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::{rectangle_patch, RigidObject};

    fn flat_box() -> MinMuProblem {
        let obj = RigidObject::uniform_box("box", 0.5, Vector3::new(0.0, 0.0, 0.1), [0.06, 0.06, 0.2]);
        let contacts = rectangle_patch([0.0, 0.0], [0.03, 0.03], 0.0, 0.2, Body::Tray, 0, 0);
        MinMuProblem::new(Arrangement::new(vec![obj], contacts).unwrap()).unwrap()
    }

    #[test]
    fn flat_support_needs_no_friction() {
        let p = flat_box();
        let sol = solve_min_mu(&p).unwrap();
        assert!(sol.converged);
        assert!(sol.mu[0] <= 1e-6, "{:?}", sol.mu);
        assert!(sol.tilt() < 1e-4);
        assert!(witness_residual(&p, &sol).unwrap() < 1e-6);
    }

    #[test]
    fn groups_default_to_body_pairs() {
        let p = flat_box();
        assert_eq!(p.groups, vec![vec![0, 1, 2, 3]]);
        assert!(
            MinMuProblem::with_groups(p.arrangement.clone(), vec![vec![0, 1], vec![1, 2, 3]], vec![1.0; 4]).is_err()
        );
    }

    #[test]
    fn tilted_patch_needs_tilt() {
        // a single box on a plane inclined by 10 degrees about the tray y axis
        let a = 10f64.to_radians();
        let n = Vector3::new(-libm::sin(a), 0.0, libm::cos(a));
        let obj = RigidObject::uniform_box("b", 1.0, n * 0.05, [0.05; 3]);
        let u = Vector3::new(libm::cos(a), 0.0, libm::sin(a));
        let contacts = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .iter()
            .map(|&(s, t)| {
                balance::ContactPoint::new(u * (0.02 * s) + Vector3::y() * (0.02 * t), n, 0.5, Body::Tray, 0, 0)
            })
            .collect();
        let p = MinMuProblem::new(Arrangement::new(vec![obj], contacts).unwrap()).unwrap();
        let sol = solve_min_mu(&p).unwrap();
        assert!(sol.mu[0] < 1e-6, "{:?}", sol.mu);
        assert!((sol.tilt() - a).abs() < 1e-4, "{}", sol.tilt());
    }

    /// A wedge on the tray with a box on its inclined face.
    pub(crate) fn wedge(incline_deg: f64) -> MinMuProblem {
        let phi = incline_deg.to_radians();
        let n = Vector3::new(-libm::sin(phi), 0.0, libm::cos(phi));
        let u = Vector3::new(libm::cos(phi), 0.0, libm::sin(phi));
        let top = Vector3::new(0.0, 0.0, 0.02 + 0.1 * libm::tan(phi));
        let wedge = RigidObject::uniform_box("wedge", 1.0, Vector3::new(0.02, 0.0, 0.02), [0.2, 0.2, 0.04]);
        let boxed = RigidObject::uniform_box("box", 0.5, top + n * 0.05, [0.1; 3]);
        let mut contacts = rectangle_patch([0.0, 0.0], [0.1, 0.1], 0.0, 0.2, Body::Tray, 0, 0);
        for &(s, t) in &[(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            let r = top + u * (0.04 * s) + Vector3::y() * (0.04 * t);
            contacts.push(balance::ContactPoint::new(r, n, 0.2, Body::Object(0), 1, 1));
        }
        MinMuProblem::new(Arrangement::new(vec![wedge, boxed], contacts).unwrap()).unwrap()
    }

    #[test]
    fn wedge_splits_the_incline() {
        let p = wedge(15.0);
        assert_eq!(p.groups.len(), 2);
        let sol = solve_min_mu(&p).unwrap();
        let expected = libm::tan(7.5f64.to_radians());
        for m in &sol.mu {
            assert!((m - expected).abs() < 1e-4, "{:?}", sol.mu);
        }
        assert!((sol.tilt() - 7.5f64.to_radians()).abs() < 1e-3, "{}", sol.tilt());
        let r = witness_residual(&p, &sol).unwrap();
        assert!(r < 1e-6, "{r:e} {:?}", sol.forces.values.as_slice());
    }

    #[test]
    fn steep_wedge_matches_grid_search() {
        let p = wedge(30.0);
        let sol = solve_min_mu(&p).unwrap();
        let grid = min_mu_bruteforce(&p, 0.1f64.to_radians()).unwrap();
        let expected = libm::tan(15f64.to_radians());
        assert!((sol.mu[0] - expected).abs() < 1e-3, "{:?}", sol.mu);
        assert!((grid.mu[0] - expected).abs() < 3e-3, "{:?}", grid.mu);
        assert!(sol.objective <= grid.objective + 1e-4);
    }
}
