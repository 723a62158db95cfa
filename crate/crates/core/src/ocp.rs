//! Whole-body MPC with balancing constraints.
//!
//! The horizon is transcribed with multiple shooting on the exact
//! triple-integrator model. Every constraint other than the dynamics is soft:
//! equalities enter the cost as `w g²`, inequalities as rows with a slack
//! penalised by `w s²`. One Gauss-Newton SQP step is taken per update and the
//! affine feedback policy is read off the Riccati factorization of the final
//! interior-point iteration.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::autodiff::{Dual, Real};
use crate::balance::{self, Arrangement, ForceMode};
use crate::error::{Error, Result};
use crate::kinematics::{discrete_model, FrameJet, JerkInput, KinematicChain, RobotState};
use crate::math;
use crate::minmu::MinMuSolution;
use crate::qp::{self, Dynamics, QpSettings, Row, Stage, StructuredQp};
use crate::spatial::{self, V3};

/// Generalized coordinates of the platform the controller is written for.
pub const DOF: usize = 9;
/// State dimension `[q; v; v̇]`.
pub const NX: usize = 3 * DOF;

type D = Dual<NX>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintMode {
    None,
    Upward,
    Full,
    Robust,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 4] = [Self::None, Self::Upward, Self::Full, Self::Robust];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Upward => "upward",
            Self::Full => "full",
            Self::Robust => "robust",
        }
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "upward" => Ok(Self::Upward),
            "full" => Ok(Self::Full),
            "robust" => Ok(Self::Robust),
            other => Err(Error::InvalidArgument(alloc::format!(
                "unknown constraint mode `{other}`"
            ))),
        }
    }
}

/// Diagonal cost weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CostWeights {
    /// End-effector position error.
    pub position: Vector3<f64>,
    /// `[q; v; v̇]`, length 27.
    pub state: DVector<f64>,
    /// Jerk, length 9.
    pub input: DVector<f64>,
    /// Every contact-force variable.
    pub force: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        let state = DVector::from_fn(NX, |i, _| match i / DOF {
            0 => 0.0,
            1 => 0.1,
            _ => 0.01,
        });
        Self {
            position: Vector3::repeat(1.0),
            state,
            input: DVector::from_element(DOF, 0.001),
            force: 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OcpDefinition {
    pub horizon: f64,
    pub dt: f64,
    pub weights: CostWeights,
    /// Desired end-effector position, world frame.
    pub goal: Vector3<f64>,
    pub slack_weight: f64,
    /// Minimum distance `d` between the end effector and a predicted
    /// projectile trajectory.
    pub projectile_clearance: f64,
    pub projectile_slack_weight: f64,
    /// Soft state and input limits from the chain.
    pub use_limits: bool,
    pub sqp_iterations: usize,
    pub qp: QpSettings,
}

impl Default for OcpDefinition {
    fn default() -> Self {
        let d = 0.35;
        Self {
            horizon: 2.0,
            dt: 0.1,
            weights: CostWeights::default(),
            goal: Vector3::zeros(),
            slack_weight: 100.0,
            projectile_clearance: d,
            projectile_slack_weight: 4.0 / (d * d),
            use_limits: true,
            sqp_iterations: 1,
            qp: QpSettings {
                max_iterations: 50,
                tolerance: 1e-7,
            },
        }
    }
}

impl OcpDefinition {
    /// Number of shooting nodes `T/Δt + 1`.
    pub fn nodes(&self) -> usize {
        libm::round(self.horizon / self.dt) as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return bad("horizon and step must be positive");
        }
        let steps = self.horizon / self.dt;
        if (steps - libm::round(steps)).abs() > 1e-9 || steps < 1.0 - 1e-9 {
            return bad("the step must divide the horizon");
        }
        let w = &self.weights;
        if w.state.len() != NX || w.input.len() != DOF {
            return bad("cost weight dimensions do not match the platform");
        }
        if w.position.iter().chain(w.state.iter()).any(|&v| !(v >= 0.0)) {
            return bad("position and state weights must be non-negative");
        }
        if w.input.iter().any(|&v| !(v > 0.0)) || !(w.force > 0.0) {
            return bad("input and force weights must be positive");
        }
        if !(self.slack_weight > 0.0 && self.projectile_slack_weight > 0.0) {
            return bad("slack weights must be positive");
        }
        if self.sqp_iterations == 0 {
            return bad("at least one SQP iteration is required");
        }
        Ok(())
    }
}

/// Balancing constraints as seen by the controller.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceConstraints {
    pub mode: ConstraintMode,
    /// Controller model of the arrangement (scaled μ, inset supports);
    /// `None` for the modes without contact forces.
    pub arrangement: Option<Arrangement>,
    pub force_mode: ForceMode,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintOptions {
    /// Fraction of the true μ used by [`ConstraintMode::Full`].
    pub full_mu_factor: f64,
    /// Inward offset of every support polygon.
    pub support_margin: f64,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        Self {
            full_mu_factor: 0.9,
            support_margin: 0.005,
        }
    }
}

/// Builds the controller's balancing constraints for `mode`.
pub fn build_constraints(
    mode: ConstraintMode,
    arrangement: &Arrangement,
    minmu: Option<&MinMuSolution>,
    options: &ConstraintOptions,
) -> Result<BalanceConstraints> {
    let inset = |arr: &Arrangement| {
        if options.support_margin > 0.0 {
            arr.with_support_margin(options.support_margin)
        } else {
            Ok(arr.clone())
        }
    };
    let (arr, force_mode) = match mode {
        ConstraintMode::None | ConstraintMode::Upward => {
            return Ok(BalanceConstraints {
                mode,
                arrangement: None,
                force_mode: ForceMode::Full,
            })
        }
        ConstraintMode::Full => (
            inset(&arrangement.with_mu_scaled(options.full_mu_factor))?,
            ForceMode::Full,
        ),
        ConstraintMode::Robust => {
            let sol = minmu.ok_or(Error::MissingMinMu)?;
            if sol.contact_mu.len() != arrangement.num_contacts() {
                return Err(Error::DimensionMismatch {
                    what: "minimum-friction coefficients",
                    expected: arrangement.num_contacts(),
                    found: sol.contact_mu.len(),
                });
            }
            let arr = inset(&arrangement.with_mu(&sol.contact_mu)?)?;
            let zero = sol.contact_mu.iter().all(|&m| m <= 1e-9);
            (arr, if zero { ForceMode::Scalar } else { ForceMode::Full })
        }
    };
    Ok(BalanceConstraints {
        mode,
        arrangement: Some(arr),
        force_mode,
    })
}

impl BalanceConstraints {
    pub fn none() -> Self {
        Self {
            mode: ConstraintMode::None,
            arrangement: None,
            force_mode: ForceMode::Full,
        }
    }

    /// Contact-force decision variables per node.
    pub fn force_variables(&self) -> usize {
        self.arrangement
            .as_ref()
            .map_or(0, |a| a.num_contacts() * self.force_mode.vars_per_contact())
    }

    /// Friction-pyramid (or `fⁿ ≥ 0`) rows per node.
    pub fn pyramid_rows(&self) -> usize {
        match (&self.arrangement, self.force_mode) {
            (None, _) => 0,
            (Some(a), ForceMode::Full) => 5 * a.num_contacts(),
            (Some(a), ForceMode::Scalar) => a.num_contacts(),
        }
    }

    /// Newton-Euler equality rows per node.
    pub fn balance_rows(&self) -> usize {
        self.arrangement.as_ref().map_or(0, |a| 6 * a.objects.len())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

/// Collision sphere fixed to a frame of the chain (`frame == dof` is the end
/// effector).
#[derive(Clone, Debug, PartialEq)]
pub struct RobotSphere {
    pub name: String,
    pub frame: usize,
    pub offset: Vector3<f64>,
    pub radius: f64,
}

/// Predicted projectile trajectory the end effector must keep clear of.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectileTube {
    /// Densely sampled future positions.
    pub polyline: Vec<Vector3<f64>>,
    /// Predicted position and velocity at each shooting node.
    pub node_positions: Vec<Vector3<f64>>,
    pub node_velocities: Vec<Vector3<f64>>,
    pub ball_radius: f64,
    pub clearance: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneModel {
    pub obstacles: Vec<Sphere>,
    pub robot_spheres: Vec<RobotSphere>,
    /// Index into `robot_spheres` of the sphere kept clear of projectiles.
    pub tube_anchor: Option<usize>,
    pub tube: Option<ProjectileTube>,
}

impl SceneModel {
    pub fn validate(&self, chain: &KinematicChain) -> Result<()> {
        let radii = self
            .obstacles
            .iter()
            .map(|s| s.radius)
            .chain(self.robot_spheres.iter().map(|s| s.radius));
        for r in radii {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument("sphere radii must be positive".into()));
            }
        }
        if self.robot_spheres.iter().any(|s| s.frame > chain.dof()) {
            return Err(Error::InvalidArgument(
                "robot sphere attached to an unknown frame".into(),
            ));
        }
        if matches!(self.tube_anchor, Some(i) if i >= self.robot_spheres.len()) {
            return Err(Error::InvalidArgument("tube anchor is not a robot sphere".into()));
        }
        Ok(())
    }

    fn anchor(&self) -> Option<&RobotSphere> {
        self.tube_anchor.map(|i| &self.robot_spheres[i])
    }
}

/// Ballistic state of a projectile at the time of the update.
#[derive(Clone, Debug, PartialEq)]
pub struct BallPrediction {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub radius: f64,
    pub gravity: Vector3<f64>,
}

impl BallPrediction {
    pub fn at(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        (
            self.position + self.velocity * t + self.gravity * (0.5 * t * t),
            self.velocity + self.gravity * t,
        )
    }
}

/// Rolls the projectile out over the horizon and attaches the tube
/// constraint to the scene. Nodes at which the ball has already passed the
/// end effector carry no row (see [`collision_distances`]).
pub fn augment_dynamic_obstacle(scene: &SceneModel, ocp: &OcpDefinition, ball: &BallPrediction) -> SceneModel {
    const SUBSAMPLES: usize = 5;
    let nodes = ocp.nodes();
    let fine = (nodes - 1) * SUBSAMPLES + 1;
    let polyline = (0..fine)
        .map(|i| ball.at(i as f64 * ocp.dt / SUBSAMPLES as f64).0)
        .collect();
    let (node_positions, node_velocities) = (0..nodes).map(|k| ball.at(k as f64 * ocp.dt)).unzip();
    let mut out = scene.clone();
    out.tube = Some(ProjectileTube {
        polyline,
        node_positions,
        node_velocities,
        ball_radius: ball.radius,
        clearance: ocp.projectile_clearance,
    });
    out
}

/// Closest point of a polyline to `p`.
fn closest_on_polyline(p: &Vector3<f64>, line: &[Vector3<f64>]) -> Vector3<f64> {
    if line.len() == 1 {
        return line[0];
    }
    let mut best = line[0];
    let mut best_d = f64::INFINITY;
    for seg in line.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let ab = b - a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let c = a + ab * t;
        let d = (p - c).norm_squared();
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn sphere_center<T: Real>(frame: &FrameJet<T>, offset: &Vector3<f64>) -> V3<T> {
    spatial::add(
        &frame.position,
        &spatial::mat_vec(&frame.rotation, &spatial::v_cst(offset)),
    )
}

/// World-frame centres of the robot spheres at configuration `q`.
pub fn robot_sphere_centers(chain: &KinematicChain, q: &DVector<f64>, scene: &SceneModel) -> Result<Vec<Vector3<f64>>> {
    if q.len() != chain.dof() {
        return Err(Error::DimensionMismatch {
            what: "joint positions",
            expected: chain.dof(),
            found: q.len(),
        });
    }
    let zeros = vec![0.0; chain.dof()];
    let jet = chain.jet(q.as_slice(), &zeros, &zeros);
    Ok(scene
        .robot_spheres
        .iter()
        .map(|s| spatial::v_value(&sphere_center(jet.frame(s.frame), &s.offset)))
        .collect())
}

/// Signed distances: every (robot sphere, obstacle) pair in robot-sphere
/// order, then the projectile tube entry when a tube is present.
pub fn collision_distances(chain: &KinematicChain, x: &RobotState, scene: &SceneModel) -> Result<Vec<f64>> {
    x.validate()?;
    if x.dof() != chain.dof() {
        return Err(Error::DimensionMismatch {
            what: "robot state",
            expected: chain.dof(),
            found: x.dof(),
        });
    }
    let zeros = vec![0.0; chain.dof()];
    let jet = chain.jet(x.q.as_slice(), &zeros, &zeros);
    let mut out = Vec::new();
    for s in &scene.robot_spheres {
        let c = spatial::v_value(&sphere_center(jet.frame(s.frame), &s.offset));
        for o in &scene.obstacles {
            out.push((c - o.center).norm() - s.radius - o.radius);
        }
    }
    if let (Some(tube), Some(anchor)) = (&scene.tube, scene.anchor()) {
        let c = spatial::v_value(&sphere_center(jet.frame(anchor.frame), &anchor.offset));
        let n = closest_on_polyline(&c, &tube.polyline);
        out.push((c - n).norm() - tube.ball_radius - tube.clearance);
    }
    Ok(out)
}

/// Nominal trajectories on the shooting grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    /// `nodes` states.
    pub x: Vec<DVector<f64>>,
    /// `nodes - 1` inputs.
    pub u: Vec<DVector<f64>>,
    /// `nodes` force vectors.
    pub xi: Vec<DVector<f64>>,
}

impl Trajectory {
    /// Cold start: the state held constant with zero input.
    pub fn constant(t0: f64, x0: &DVector<f64>, nodes: usize, dt: f64, force_variables: usize) -> Self {
        Self {
            t0,
            dt,
            x: vec![x0.clone(); nodes],
            u: vec![DVector::zeros(x0.len() / 3); nodes - 1],
            xi: vec![DVector::zeros(force_variables); nodes],
        }
    }

    pub fn nodes(&self) -> usize {
        self.x.len()
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.dt * (self.nodes() - 1) as f64
    }

    /// State at `t` under the piecewise-constant input; the last node is
    /// held beyond the end.
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        let s = (t - self.t0).max(0.0);
        let j = libm::floor(s / self.dt) as usize;
        if j + 1 >= self.nodes() {
            return self.x[self.nodes() - 1].clone();
        }
        step(&self.x[j], &self.u[j], s - j as f64 * self.dt)
    }

    /// Warm start for an update at `t0`: the previous solution shifted by
    /// the elapsed time. Force guesses are reset when their size changes.
    pub fn shifted(&self, t0: f64, force_variables: usize) -> Self {
        let n = self.nodes();
        let mut out = Self {
            t0,
            dt: self.dt,
            x: Vec::with_capacity(n),
            u: Vec::with_capacity(n - 1),
            xi: Vec::with_capacity(n),
        };
        let same_forces = self
            .xi
            .first()
            .map_or(force_variables == 0, |v| v.len() == force_variables);
        for k in 0..n {
            let t = t0 + k as f64 * self.dt;
            out.x.push(self.state_at(t));
            let s = ((t - self.t0) / self.dt).max(0.0);
            let j = libm::floor(s) as usize;
            if k + 1 < n {
                out.u.push(if j + 1 < n {
                    self.u[j].clone()
                } else {
                    DVector::zeros(self.u[0].len())
                });
            }
            let xi = if !same_forces {
                DVector::zeros(force_variables)
            } else if j + 1 < n {
                let a = s - j as f64;
                &self.xi[j] * (1.0 - a) + &self.xi[j + 1] * a
            } else {
                self.xi[n - 1].clone()
            };
            out.xi.push(xi);
        }
        out
    }
}

/// Exact triple-integrator step on stacked vectors.
fn step(x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> DVector<f64> {
    let n = u.len();
    let mut out = x.clone();
    let (dt2, dt3) = (dt * dt, dt * dt * dt);
    for i in 0..n {
        let (q, v, a) = (x[i], x[n + i], x[2 * n + i]);
        out[i] = q + v * dt + 0.5 * a * dt2 + u[i] * dt3 / 6.0;
        out[n + i] = v + a * dt + 0.5 * u[i] * dt2;
        out[2 * n + i] = a + u[i] * dt;
    }
    out
}

/// Time-varying affine feedback `u = K (x* − x) + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub stamp: f64,
    pub dt: f64,
    /// Optimal states at the nodes.
    pub x: Vec<DVector<f64>>,
    /// Feedforward `k`, one per interval.
    pub feedforward: Vec<DVector<f64>>,
    /// Gains `K` (9 × 27), one per interval.
    pub gains: Vec<DMatrix<f64>>,
}

impl Policy {
    pub fn horizon(&self) -> f64 {
        self.dt * self.feedforward.len() as f64
    }

    pub fn valid_at(&self, t: f64) -> bool {
        let eps = 1e-9 * (1.0 + t.abs());
        t >= self.stamp - eps && t <= self.stamp + self.horizon() + eps
    }
}

/// Evaluates the policy: linear interpolation of `x*`, zero-order hold on
/// `K` and `k`.
pub fn policy_input(policy: &Policy, t: f64, x: &RobotState) -> Result<JerkInput> {
    if !policy.valid_at(t) {
        return Err(Error::StalePolicy {
            stamp: policy.stamp,
            time: t,
        });
    }
    let xv = x.to_vector();
    let nx = policy.x[0].len();
    if xv.len() != nx {
        return Err(Error::DimensionMismatch {
            what: "policy state",
            expected: nx,
            found: xv.len(),
        });
    }
    let intervals = policy.feedforward.len();
    let mut s = ((t - policy.stamp) / policy.dt).max(0.0);
    // node times land exactly on the node despite rounding in t
    let node = libm::round(s);
    if (s - node).abs() <= 1e-9 * node.max(1.0) {
        s = node;
    }
    let j = (libm::floor(s) as usize).min(intervals - 1);
    let a = (s - j as f64).clamp(0.0, 1.0);
    let x_star = &policy.x[j] * (1.0 - a) + &policy.x[j + 1] * a;
    Ok(JerkInput(&policy.gains[j] * (x_star - xv) + &policy.feedforward[j]))
}

/// One linearized constraint: `value + gradᵀ δz`, with `δz = [δx; δu; δξ]`.
struct Term {
    value: f64,
    grad: DVector<f64>,
    weight: f64,
    equality: bool,
}

/// Linearization of one shooting node.
struct NodeModel {
    /// `½ δzᵀ H δz + hᵀ δz + c` of the tracking cost.
    hessian: DMatrix<f64>,
    gradient: DVector<f64>,
    cost: f64,
    terms: Vec<Term>,
}

/// Everything that stays fixed within one update.
pub struct Problem<'a> {
    pub ocp: &'a OcpDefinition,
    pub chain: &'a KinematicChain,
    pub constraints: &'a BalanceConstraints,
    pub scene: &'a SceneModel,
}

struct Layout {
    nu: usize,
    nf: usize,
}

impl Layout {
    fn nz(&self) -> usize {
        NX + self.nu + self.nf
    }

    fn xi(&self) -> usize {
        NX + self.nu
    }
}

impl<'a> Problem<'a> {
    pub fn new(
        ocp: &'a OcpDefinition,
        chain: &'a KinematicChain,
        constraints: &'a BalanceConstraints,
        scene: &'a SceneModel,
    ) -> Result<Self> {
        ocp.validate()?;
        if chain.dof() != DOF {
            return Err(Error::DimensionMismatch {
                what: "controller degrees of freedom",
                expected: DOF,
                found: chain.dof(),
            });
        }
        scene.validate(chain)?;
        Ok(Self {
            ocp,
            chain,
            constraints,
            scene,
        })
    }

    fn node(&self, k: usize, x: &DVector<f64>, u: Option<&DVector<f64>>, xi: &DVector<f64>) -> Result<NodeModel> {
        let ocp = self.ocp;
        let w = &ocp.weights;
        let lay = Layout {
            nu: if u.is_some() { DOF } else { 0 },
            nf: self.constraints.force_variables(),
        };
        if xi.len() != lay.nf {
            return Err(Error::DimensionMismatch {
                what: "force variables",
                expected: lay.nf,
                found: xi.len(),
            });
        }
        let nz = lay.nz();
        let mut hessian = DMatrix::zeros(nz, nz);
        let mut gradient = DVector::zeros(nz);
        let mut cost = 0.0;
        let mut terms = Vec::new();

        let seeds = D::seed(x.as_slice());
        let jet = self.chain.jet(&seeds[..DOF], &seeds[DOF..2 * DOF], &seeds[2 * DOF..]);
        let x_grad = |d: &D| {
            let mut g = DVector::zeros(nz);
            g.rows_mut(0, NX).copy_from_slice(&d.eps);
            g
        };

        // tracking cost
        for i in 0..3 {
            let p = jet.ee.position[i];
            let e = p.re - ocp.goal[i];
            let g = x_grad(&p);
            hessian.ger(w.position[i], &g, &g, 1.0);
            gradient.axpy(w.position[i] * e, &g, 1.0);
            cost += 0.5 * w.position[i] * e * e;
        }
        for i in 0..NX {
            hessian[(i, i)] += w.state[i];
            gradient[i] += w.state[i] * x[i];
            cost += 0.5 * w.state[i] * x[i] * x[i];
        }
        if let Some(u) = u {
            for i in 0..DOF {
                hessian[(NX + i, NX + i)] += w.input[i];
                gradient[NX + i] += w.input[i] * u[i];
                cost += 0.5 * w.input[i] * u[i] * u[i];
            }
        }
        for i in 0..lay.nf {
            let j = lay.xi() + i;
            hessian[(j, j)] += w.force;
            gradient[j] += w.force * xi[i];
            cost += 0.5 * w.force * xi[i] * xi[i];
        }

        let ws = ocp.slack_weight;
        let mut push = |value: f64, grad: DVector<f64>, weight: f64, equality: bool| {
            terms.push(Term {
                value,
                grad,
                weight,
                equality,
            })
        };

        // balancing
        match self.constraints.mode {
            ConstraintMode::None => {}
            ConstraintMode::Upward => {
                let r = &jet.ee.rotation;
                for d in [r[0][2], r[1][2]] {
                    push(d.re, x_grad(&d), ws, true);
                }
            }
            ConstraintMode::Full | ConstraintMode::Robust => {
                let arr = self.constraints.arrangement.as_ref().ok_or(Error::MissingMinMu)?;
                let mode = self.constraints.force_mode;
                let (vel, acc) = jet.ee.body_twist();
                let inv_sqrt_n = 1.0 / math::sqrt(arr.num_contacts() as f64);
                for (o, obj) in arr.objects.iter().enumerate() {
                    let wgi = balance::gi_wrench(&jet.ee.rotation, &vel, &acc, obj, &arr.gravity);
                    let wc = balance::contact_wrench_matrix(arr, o, mode)?;
                    let wc_xi = &wc * xi;
                    let inv_m = 1.0 / obj.mass;
                    for j in 0..6 {
                        let mut g = x_grad(&wgi[j]) * (inv_m * inv_sqrt_n);
                        for c in 0..lay.nf {
                            g[lay.xi() + c] = wc[(j, c)] * inv_m;
                        }
                        push(inv_m * (wc_xi[j] + wgi[j].re * inv_sqrt_n), g, ws, true);
                    }
                }
                match mode {
                    ForceMode::Full => {
                        for (i, cp) in arr.contacts.iter().enumerate() {
                            let f = balance::friction_pyramid_matrix(cp, cp.mu);
                            let fi = Vector3::new(xi[3 * i], xi[3 * i + 1], xi[3 * i + 2]);
                            let val = f * fi;
                            for r in 0..5 {
                                let mut g = DVector::zeros(nz);
                                for c in 0..3 {
                                    g[lay.xi() + 3 * i + c] = f[(r, c)];
                                }
                                push(val[r], g, ws, false);
                            }
                        }
                    }
                    ForceMode::Scalar => {
                        for i in 0..arr.num_contacts() {
                            let mut g = DVector::zeros(nz);
                            g[lay.xi() + i] = 1.0;
                            push(xi[i], g, ws, false);
                        }
                    }
                }
            }
        }

        // collisions
        for s in &self.scene.robot_spheres {
            let c = sphere_center(jet.frame(s.frame), &s.offset);
            for o in &self.scene.obstacles {
                let diff = spatial::sub(&c, &spatial::v_cst(&o.center));
                let dist = spatial::dot(&diff, &diff).sqrt();
                push(dist.re - s.radius - o.radius, x_grad(&dist), ws, false);
            }
        }
        if let (Some(tube), Some(anchor)) = (&self.scene.tube, self.scene.anchor()) {
            let c = sphere_center(jet.frame(anchor.frame), &anchor.offset);
            let cv = spatial::v_value(&c);
            let ahead = (cv - tube.node_positions[k]).dot(&tube.node_velocities[k]) > 0.0;
            if ahead {
                let near = closest_on_polyline(&cv, &tube.polyline);
                let diff = cv - near;
                let dist = diff.norm();
                let mut g = DVector::zeros(nz);
                if dist > 1e-12 {
                    for i in 0..3 {
                        g.axpy(diff[i] / dist, &x_grad(&c[i]), 1.0);
                    }
                }
                push(
                    dist - tube.ball_radius - tube.clearance,
                    g,
                    ocp.projectile_slack_weight,
                    false,
                );
            }
        }

        // limits; the initial state is fixed, so its rows are omitted
        if ocp.use_limits {
            let lim = self.chain.limits();
            if k > 0 {
                for i in 0..NX {
                    let mut g = DVector::zeros(nz);
                    g[i] = 1.0;
                    push(x[i] - lim.state_lower[i], g.clone(), ws, false);
                    push(lim.state_upper[i] - x[i], -g, ws, false);
                }
            }
            if let Some(u) = u {
                for i in 0..DOF {
                    let mut g = DVector::zeros(nz);
                    g[NX + i] = 1.0;
                    push(u[i] - lim.input_lower[i], g.clone(), ws, false);
                    push(lim.input_upper[i] - u[i], -g, ws, false);
                }
            }
        }

        Ok(NodeModel {
            hessian,
            gradient,
            cost,
            terms,
        })
    }

    /// Constraint values and their Jacobian with respect to `[x; u; ξ]` at
    /// node `k`, in the order used by the transcription. Equalities come
    /// first within each group exactly as generated.
    pub fn node_constraints(
        &self,
        k: usize,
        x: &DVector<f64>,
        u: Option<&DVector<f64>>,
        xi: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let node = self.node(k, x, u, xi)?;
        let n = node.terms.len();
        let nz = node.gradient.len();
        let mut values = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, nz);
        for (i, t) in node.terms.iter().enumerate() {
            values[i] = t.value;
            jac.set_row(i, &t.grad.transpose());
        }
        Ok((values, jac))
    }
}

/// Cost of a trajectory split into tracking and slack-penalty parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveTerms {
    /// `Σ ½ L` over the nodes.
    pub tracking: f64,
    /// `Σ w s²` with the smallest feasible slacks.
    pub penalty: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.tracking + self.penalty
    }
}

pub fn evaluate_objective(problem: &Problem<'_>, traj: &Trajectory) -> Result<ObjectiveTerms> {
    let mut out = ObjectiveTerms {
        tracking: 0.0,
        penalty: 0.0,
    };
    let n = traj.nodes();
    for k in 0..n {
        let node = problem.node(k, &traj.x[k], traj.u.get(k).filter(|_| k + 1 < n), &traj.xi[k])?;
        out.tracking += node.cost;
        for t in &node.terms {
            let s = if t.equality { t.value } else { (-t.value).max(0.0) };
            out.penalty += t.weight * s * s;
        }
    }
    Ok(out)
}

/// The Gauss-Newton QP of one SQP iteration about `guess`.
#[derive(Clone, Debug)]
pub struct TranscribedNlp {
    pub qp: StructuredQp,
    pub guess: Trajectory,
    /// Inequality rows per node.
    pub rows_per_node: Vec<usize>,
    /// Soft equality residuals per node.
    pub equalities_per_node: Vec<usize>,
    pub force_variables: usize,
}

impl TranscribedNlp {
    pub fn nodes(&self) -> usize {
        self.guess.nodes()
    }
}

/// Linearizes the problem about `guess` with the initial node pinned to `x0`.
pub fn transcribe(problem: &Problem<'_>, x0: &RobotState, guess: &Trajectory) -> Result<TranscribedNlp> {
    x0.validate()?;
    let x0v = x0.to_vector();
    let nodes = problem.ocp.nodes();
    let nf = problem.constraints.force_variables();
    if x0v.len() != NX {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: NX,
            found: x0v.len(),
        });
    }
    if guess.nodes() != nodes || guess.u.len() + 1 != nodes || guess.xi.iter().any(|v| v.len() != nf) {
        return Err(Error::InvalidArgument(
            "warm start does not match the transcription".into(),
        ));
    }
    let dt = problem.ocp.dt;
    let (a, bu) = discrete_model(DOF, dt);
    let mut stages = Vec::with_capacity(nodes);
    let mut dynamics = Vec::with_capacity(nodes - 1);
    let mut rows_per_node = Vec::with_capacity(nodes);
    let mut equalities_per_node = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let u = (k + 1 < nodes).then(|| &guess.u[k]);
        let node = problem.node(k, &guess.x[k], u, &guess.xi[k])?;
        let nz = node.gradient.len();
        let nw = nz - NX;
        let mut h = node.hessian;
        let mut g = node.gradient;
        let mut rows = Vec::new();
        let mut eqs = 0;
        for t in node.terms {
            if t.equality {
                h.ger(2.0 * t.weight, &t.grad, &t.grad, 1.0);
                g.axpy(2.0 * t.weight * t.value, &t.grad, 1.0);
                eqs += 1;
            } else {
                let (idx, vals): (Vec<usize>, Vec<f64>) = t
                    .grad
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, v)| (i, *v))
                    .unzip();
                rows.push(Row::new(idx, vals, t.value, Some(t.weight)));
            }
        }
        rows_per_node.push(rows.len());
        equalities_per_node.push(eqs);
        let mut st = Stage::zeros(NX, nw);
        st.q.copy_from(&h.view((0, 0), (NX, NX)));
        st.s.copy_from(&h.view((NX, 0), (nw, NX)));
        st.r.copy_from(&h.view((NX, NX), (nw, nw)));
        st.qv.copy_from(&g.rows(0, NX));
        st.rv.copy_from(&g.rows(NX, nw));
        st.rows = rows;
        stages.push(st);
        if let Some(u) = u {
            let mut b = DMatrix::zeros(NX, nw);
            b.view_mut((0, 0), (NX, DOF)).copy_from(&bu);
            dynamics.push(Dynamics {
                a: a.clone(),
                b,
                c: step(&guess.x[k], u, dt) - &guess.x[k + 1],
            });
        }
    }
    Ok(TranscribedNlp {
        qp: StructuredQp {
            x0: &x0v - &guess.x[0],
            stages,
            dynamics,
        },
        guess: guess.clone(),
        rows_per_node,
        equalities_per_node,
        force_variables: nf,
    })
}

/// Summary of one update.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateInfo {
    pub qp_iterations: usize,
    pub kkt_residual: f64,
    pub qp_objective: f64,
}

/// Runs the configured number of full-step Gauss-Newton SQP iterations from
/// `warm_start` and extracts the feedback policy of the last QP.
pub fn sqp_update(
    problem: &Problem<'_>,
    x0: &RobotState,
    warm_start: Trajectory,
) -> Result<(Trajectory, Policy, UpdateInfo)> {
    let mut traj = warm_start;
    let mut last = None;
    for _ in 0..problem.ocp.sqp_iterations {
        let nlp = transcribe(problem, x0, &traj)?;
        let sol = qp::solve(&nlp.qp, &problem.ocp.qp)?;
        let n = traj.nodes();
        for k in 0..n {
            traj.x[k] += &sol.x[k];
            if k + 1 < n {
                traj.u[k] += sol.w[k].rows(0, DOF);
                let dxi = sol.w[k].rows(DOF, nlp.force_variables).into_owned();
                traj.xi[k] += dxi;
            } else {
                traj.xi[k] += &sol.w[k];
            }
        }
        last = Some(sol);
    }
    let sol = last.expect("at least one iteration");
    let n = traj.nodes();
    let policy = Policy {
        stamp: traj.t0,
        dt: traj.dt,
        x: traj.x.clone(),
        feedforward: traj.u.clone(),
        gains: (0..n - 1).map(|k| -sol.gains[k].rows(0, DOF).into_owned()).collect(),
    };
    let info = UpdateInfo {
        qp_iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
        qp_objective: sol.objective,
    };
    Ok((traj, policy, info))
}

/// Receding-horizon controller: owns the problem data and the last
/// solution used as warm start.
#[derive(Clone, Debug)]
pub struct Mpc {
    pub ocp: OcpDefinition,
    pub chain: KinematicChain,
    pub constraints: BalanceConstraints,
    pub scene: SceneModel,
    trajectory: Option<Trajectory>,
}

impl Mpc {
    pub fn new(
        ocp: OcpDefinition,
        chain: KinematicChain,
        constraints: BalanceConstraints,
        scene: SceneModel,
    ) -> Result<Self> {
        Problem::new(&ocp, &chain, &constraints, &scene)?;
        Ok(Self {
            ocp,
            chain,
            constraints,
            scene,
            trajectory: None,
        })
    }

    pub fn problem(&self) -> Problem<'_> {
        Problem {
            ocp: &self.ocp,
            chain: &self.chain,
            constraints: &self.constraints,
            scene: &self.scene,
        }
    }

    pub fn trajectory(&self) -> Option<&Trajectory> {
        self.trajectory.as_ref()
    }

    pub fn warm_start(&self, t: f64, x0: &RobotState) -> Trajectory {
        let nf = self.constraints.force_variables();
        match &self.trajectory {
            Some(prev) => prev.shifted(t, nf),
            None => Trajectory::constant(t, &x0.to_vector(), self.ocp.nodes(), self.ocp.dt, nf),
        }
    }

    /// One policy update at time `t` from the state estimate `x0`. On
    /// failure the stored warm start is left untouched.
    pub fn update(&mut self, t: f64, x0: &RobotState) -> Result<(Policy, UpdateInfo)> {
        let warm = self.warm_start(t, x0);
        let (traj, policy, info) = sqp_update(&self.problem(), x0, warm)?;
        self.trajectory = Some(traj);
        Ok((policy, info))
    }
}
