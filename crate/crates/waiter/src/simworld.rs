//! Closed-loop simulation.
//!
//! The robot follows the triple-integrator model exactly. Every step the
//! joint positions are measured (optionally with noise) and filtered, the
//! active policy produces the jerk input, and the balance of the objects is
//! checked against the true friction coefficients. A new policy is computed
//! every `policy_period`. There is no contact physics: an object counts as
//! dropped once no admissible contact forces exist for `drop_window`.

use std::io::Write;
use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::{DVector, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use waiter_core::balance::{
    diagnose_infeasibility, feasibility_oracle, gravito_inertial_wrench, required_friction_scale, zmp_from_wrench,
    Arrangement, Body, ContactForces, DropMechanism, ForceMode, SupportPlane,
};
use waiter_core::estimation::{BallFilter, RobotFilter};
use waiter_core::kinematics::{ee_state, integrate_state, tilt_angle, EEState, JerkInput, RobotState};
use waiter_core::minmu::{solve_min_mu, MinMuProblem, MinMuSolution};
use waiter_core::ocp::{
    augment_dynamic_obstacle, build_constraints, collision_distances, policy_input, robot_sphere_centers,
    BalanceConstraints, BallPrediction, ConstraintMode, Mpc, Policy, Sphere,
};

use crate::scenario::{Event, Scenario};

/// Frozen CSV column order.
pub fn csv_header(dof: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["q", "v", "a", "u"] {
        h.extend((0..dof).map(|i| format!("{prefix}{i}")));
    }
    h.extend(["r_e_x", "r_e_y", "r_e_z"].map(String::from));
    h.extend(
        [
            "tilt",
            "goal_dist",
            "fric_util",
            "zmp_margin",
            "min_coll_dist",
            "compute_ms",
        ]
        .map(String::from),
    );
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub state: RobotState,
    pub input: DVector<f64>,
    pub ee_position: Vector3<f64>,
    pub ee_speed: f64,
    pub ee_acceleration: f64,
    pub tilt: f64,
    pub goal_dist: f64,
    /// Smallest common scale of the true friction coefficients that still
    /// admits balance; above 1 the objects cannot be held.
    pub fric_util: f64,
    /// Smallest distance of a zero-moment point to its support polygon
    /// boundary, positive inside.
    pub zmp_margin: f64,
    pub min_coll_dist: f64,
    pub compute_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UpdateRecord {
    pub t: f64,
    pub compute_ms: f64,
    pub ok: bool,
    pub qp_iterations: usize,
    pub kkt_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Slip,
    Tip,
    Separation,
}

impl From<DropMechanism> for Mechanism {
    fn from(m: DropMechanism) -> Self {
        match m {
            DropMechanism::Slip => Mechanism::Slip,
            DropMechanism::Tip => Mechanism::Tip,
            DropMechanism::Separation => Mechanism::Separation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DropEvent {
    /// Start of the infeasible interval.
    pub time: f64,
    pub object: String,
    pub object_id: usize,
    pub mechanism: Mechanism,
    /// Length of the infeasible interval (until feasibility returned or the
    /// run ended).
    pub duration: f64,
}

/// Infeasibility present from the first step that later cleared. It is a
/// property of the initial condition, not of the controller, and is not a
/// drop; if it never clears it is reported as one.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InitialInfeasibility {
    pub object: String,
    pub mechanism: Mechanism,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Aborted { time: f64, reason: String },
}

/// Clearance between a thrown ball and the tube-anchor sphere.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallRecord {
    pub launch_time: f64,
    /// Minimum clearance the ball would have had if the robot had stayed
    /// where it was at launch.
    pub static_clearance: f64,
    /// Time from launch until that static clearance first became negative.
    pub static_impact_time: Option<f64>,
    /// Minimum clearance during the run.
    pub min_clearance: f64,
    /// Time from launch until the filter produced its first estimate.
    pub detection_delay: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObjectTilt {
    pub object: String,
    pub tilt_deg: f64,
}

#[derive(Clone, Debug)]
pub struct RunLog {
    pub name: String,
    pub mode: ConstraintMode,
    pub seed: u64,
    pub goal: Vector3<f64>,
    pub goal_tolerance: f64,
    pub timestep: f64,
    pub controller_mu: Vec<f64>,
    pub rows: Vec<LogRow>,
    pub updates: Vec<UpdateRecord>,
    pub drops: Vec<DropEvent>,
    pub initial_infeasibility: Option<InitialInfeasibility>,
    pub balls: Vec<BallRecord>,
    /// Support-plane tilt of every object at the end of the run.
    pub final_tilts: Vec<ObjectTilt>,
    pub status: RunStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] waiter_core::Error),
}

/// Balancing constraints of the controller and the coefficients they use.
pub fn controller_constraints(s: &Scenario) -> Result<(BalanceConstraints, Vec<f64>), SimError> {
    let arr = &s.arrangement;
    match s.mode {
        ConstraintMode::Robust => {
            let sol = match s.robust_mu {
                Some(mu) => fixed_mu_solution(arr, mu)?,
                None => solve_min_mu(&MinMuProblem::new(arr.clone())?)?,
            };
            let cons = build_constraints(s.mode, arr, Some(&sol), &s.options)?;
            Ok((cons, sol.contact_mu))
        }
        ConstraintMode::Full => {
            let cons = build_constraints(s.mode, arr, None, &s.options)?;
            let mu = arr.contacts.iter().map(|c| c.mu * s.options.full_mu_factor).collect();
            Ok((cons, mu))
        }
        _ => Ok((build_constraints(s.mode, arr, None, &s.options)?, Vec::new())),
    }
}

fn fixed_mu_solution(arr: &Arrangement, mu: f64) -> Result<MinMuSolution, SimError> {
    let n = arr.num_contacts();
    let forces = ContactForces::new(ForceMode::Full, DVector::zeros(3 * n), arr)?;
    Ok(MinMuSolution {
        mu: vec![mu],
        contact_mu: vec![mu; n],
        theta: [0.0; 3],
        rotation: Matrix3::identity(),
        forces,
        objective: 0.0,
        kkt_residual: 0.0,
        converged: true,
    })
}

/// Angle between the main support normal of every object and the vertical
/// when the tray has orientation `rotation`.
pub fn object_tilts(arr: &Arrangement, rotation: &Matrix3<f64>) -> Vec<ObjectTilt> {
    SupportModel::new(arr)
        .tilts(rotation, &arr.gravity)
        .into_iter()
        .zip(&arr.objects)
        .map(|(tilt, o)| ObjectTilt {
            object: o.name.clone(),
            tilt_deg: tilt.to_degrees(),
        })
        .collect()
}

/// Objects resting on `k`, directly or through other objects, including `k`.
fn stack_above(arr: &Arrangement, k: usize) -> Vec<usize> {
    let mut out = vec![k];
    let mut i = 0;
    while i < out.len() {
        let below = out[i];
        for c in &arr.contacts {
            if c.supporting == Body::Object(below) && !out.contains(&c.supported) {
                out.push(c.supported);
            }
        }
        i += 1;
    }
    out
}

/// Largest contact patch under each object; used for tilt and ZMP reports.
struct SupportModel {
    /// Unit normal of the main patch per object, end-effector frame.
    normals: Vec<Vector3<f64>>,
    /// Objects resting directly on the tray, with the stack they carry and
    /// the plane of their main patch.
    bases: Vec<(Vec<usize>, SupportPlane)>,
}

impl SupportModel {
    fn new(arr: &Arrangement) -> Self {
        let mut normals = Vec::new();
        let mut bases = Vec::new();
        for k in 0..arr.objects.len() {
            let mut patches: Vec<(usize, usize)> = Vec::new();
            for c in arr.contacts.iter().filter(|c| c.supported == k) {
                match patches.iter_mut().find(|(p, _)| *p == c.patch) {
                    Some((_, n)) => *n += 1,
                    None => patches.push((c.patch, 1)),
                }
            }
            let main = patches
                .iter()
                .max_by_key(|(p, n)| (*n, std::cmp::Reverse(*p)))
                .map(|(p, _)| *p);
            let cs: Vec<_> = arr
                .contacts
                .iter()
                .filter(|c| c.supported == k && Some(c.patch) == main)
                .cloned()
                .collect();
            normals.push(cs.first().map_or(Vector3::z(), |c| c.normal));
            if cs.first().is_some_and(|c| c.supporting == Body::Tray) {
                let sub = Arrangement {
                    objects: arr.objects.clone(),
                    contacts: cs,
                    gravity: arr.gravity,
                };
                if let Ok(plane) = SupportPlane::for_objects(&sub, &[k]) {
                    bases.push((stack_above(arr, k), plane));
                }
            }
        }
        Self { normals, bases }
    }

    fn tilts(&self, rotation: &Matrix3<f64>, gravity: &Vector3<f64>) -> Vec<f64> {
        let up = -gravity.normalize();
        self.normals
            .iter()
            .map(|n| (rotation * n).dot(&up).clamp(-1.0, 1.0).acos())
            .collect()
    }

    fn zmp_margin(&self, e: &EEState, arr: &Arrangement) -> f64 {
        let mut margin = f64::INFINITY;
        for (stack, plane) in &self.bases {
            let mut f = Vector3::zeros();
            let mut tau = Vector3::zeros();
            for &j in stack {
                let obj = &arr.objects[j];
                let w = gravito_inertial_wrench(e, obj, &arr.gravity);
                let fj = -w.fixed_rows::<3>(0).into_owned();
                tau += -w.fixed_rows::<3>(3).into_owned() + obj.com.cross(&fj);
                f += fj;
            }
            let m = zmp_from_wrench(&f, &tau, plane).map_or(f64::NEG_INFINITY, |p: Vector2<f64>| plane.margin(&p));
            margin = margin.min(m);
        }
        margin
    }
}

struct Ball {
    launch: f64,
    position: Vector3<f64>,
    velocity: Vector3<f64>,
    filter: BallFilter,
    anchor_at_launch: Vector3<f64>,
    record: BallRecord,
    landed: bool,
}

impl Ball {
    fn at(&self, t: f64, g: &Vector3<f64>) -> Vector3<f64> {
        let s = t - self.launch;
        self.position + self.velocity * s + g * (0.5 * s * s)
    }
}

struct DropTracker {
    window_steps: usize,
    run: usize,
    start: Option<(f64, usize, Mechanism)>,
    dropped: Vec<bool>,
    open: Option<usize>,
    /// The current infeasible interval began at the first step.
    initial: bool,
}

impl DropTracker {
    fn new(window_steps: usize, objects: usize) -> Self {
        Self {
            window_steps: window_steps.max(1),
            run: 0,
            start: None,
            dropped: vec![false; objects],
            open: None,
            initial: false,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        log: &mut RunLog,
        feasible: bool,
        k: usize,
        t: f64,
        h: f64,
        e: &EEState,
        arr: &Arrangement,
    ) -> Result<(), SimError> {
        if feasible {
            if self.initial {
                let (_, obj, mech) = self.start.expect("set with the interval");
                log.initial_infeasibility = Some(InitialInfeasibility {
                    object: arr.objects[obj].name.clone(),
                    mechanism: mech,
                    duration: self.run as f64 * h,
                });
            }
            self.run = 0;
            self.start = None;
            self.open = None;
            self.initial = false;
            return Ok(());
        }
        if self.run == 0 {
            let (obj, mech) = diagnose_infeasibility(e, arr)?.map_or((0, Mechanism::Slip), |(o, m)| (o, m.into()));
            self.start = Some((t, obj, mech));
            self.initial = k == 0;
        }
        self.run += 1;
        if self.initial {
            return Ok(());
        }
        let (start, obj, mech) = self.start.expect("set with the interval");
        match self.open {
            Some(i) => log.drops[i].duration = self.run as f64 * h,
            None if self.run >= self.window_steps && !self.dropped[obj] => {
                self.dropped[obj] = true;
                info!("t={start:.3}: {} dropped ({mech:?})", arr.objects[obj].name);
                log.drops.push(DropEvent {
                    time: start,
                    object: arr.objects[obj].name.clone(),
                    object_id: obj,
                    mechanism: mech,
                    duration: self.run as f64 * h,
                });
                self.open = Some(log.drops.len() - 1);
            }
            None => {}
        }
        Ok(())
    }

    /// An initial infeasible interval that never cleared is a drop.
    fn finish(&mut self, log: &mut RunLog, h: f64, arr: &Arrangement) {
        if let (true, Some((start, obj, mech))) = (self.initial, self.start) {
            log.drops.push(DropEvent {
                time: start,
                object: arr.objects[obj].name.clone(),
                object_id: obj,
                mechanism: mech,
                duration: self.run as f64 * h,
            });
        }
    }
}

/// Runs the scenario to completion or until the controller can no longer
/// produce an input.
pub fn run_scenario(s: &Scenario) -> Result<RunLog, SimError> {
    let sim = &s.sim;
    let h = sim.timestep;
    let steps = sim.steps();
    let per_update = sim.steps_per_update();
    let ball_every = ((BallFilter::DT / h).round() as usize).max(1);
    let gravity = s.arrangement.gravity;
    let arr = &s.arrangement;

    let (constraints, controller_mu) = controller_constraints(s)?;
    info!(
        "{}: mode {}, {} force variables per node",
        s.name,
        s.mode,
        constraints.force_variables()
    );
    let mut mpc = Mpc::new(s.ocp.clone(), s.chain.clone(), constraints, s.scene.clone())?;
    let mut scene = s.scene.clone();
    let support = SupportModel::new(arr);

    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let noise = Normal::new(0.0, sim.q_noise).expect("noise level validated");
    let mut x = s.initial.clone();
    let mut filter = sim
        .estimator
        .then(|| RobotFilter::with_settings(&x, h, 10.0, 0.001, 0.1));
    let mut fired = vec![false; s.events.len()];
    let mut balls: Vec<Ball> = Vec::new();
    let mut policy: Option<Policy> = None;
    let mut last_u: Option<JerkInput> = None;
    let mut drops = DropTracker::new((sim.drop_window / h).round() as usize, arr.objects.len());
    let mut log = RunLog {
        name: s.name.clone(),
        mode: s.mode,
        seed: sim.seed,
        goal: s.ocp.goal,
        goal_tolerance: sim.goal_tolerance,
        timestep: h,
        controller_mu,
        rows: Vec::with_capacity(steps),
        updates: Vec::new(),
        drops: Vec::new(),
        initial_infeasibility: None,
        balls: Vec::new(),
        final_tilts: Vec::new(),
        status: RunStatus::Completed,
    };
    let anchor = scene.tube_anchor;
    let ball_radius = s.ball_radius;

    for k in 0..steps {
        let t = k as f64 * h;

        for (i, ev) in s.events.iter().enumerate() {
            if fired[i] || ev.time() > t + 1e-9 {
                continue;
            }
            fired[i] = true;
            match ev {
                Event::Obstacle { center, radius, .. } => {
                    info!("t={t:.3}: obstacle appears at {center:?}");
                    scene.obstacles.push(Sphere {
                        center: Vector3::from(*center),
                        radius: *radius,
                    });
                }
                Event::Throw { position, velocity, .. } => {
                    info!("t={t:.3}: ball thrown from {position:?}");
                    let centers = robot_sphere_centers(&s.chain, &x.q, &scene)?;
                    let anchor_at_launch = anchor.map_or(Vector3::zeros(), |a| centers[a]);
                    balls.push(Ball {
                        launch: t,
                        position: Vector3::from(*position),
                        velocity: Vector3::from(*velocity),
                        filter: BallFilter::new(gravity),
                        anchor_at_launch,
                        record: BallRecord {
                            launch_time: t,
                            static_clearance: f64::INFINITY,
                            static_impact_time: None,
                            min_clearance: f64::INFINITY,
                            detection_delay: None,
                        },
                        landed: false,
                    });
                }
            }
        }

        // state estimate
        let estimate = match &mut filter {
            Some(f) => {
                if let Some(u) = &last_u {
                    f.predict(u)?;
                }
                let q =
                    x.q.map(|qi| qi + if sim.q_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 });
                f.update(&q)?;
                f.state()
            }
            None => x.clone(),
        };

        for b in balls.iter_mut().filter(|b| !b.landed) {
            let r = b.at(t, &gravity);
            if r.z < 0.0 {
                b.landed = true;
                continue;
            }
            if k % ball_every == 0 {
                if b.filter.is_active() {
                    b.filter.predict()?;
                }
                b.filter.observe(t, &r)?;
                if b.filter.is_active() && b.record.detection_delay.is_none() {
                    b.record.detection_delay = Some(t - b.launch);
                }
            }
        }

        if k % per_update == 0 {
            let mut current = scene.clone();
            let tracked = balls.iter().rev().find(|b| !b.landed && b.filter.is_active());
            if let Some(est) = tracked.and_then(|b| b.filter.estimate()) {
                let prediction = BallPrediction {
                    position: est.position,
                    velocity: est.velocity,
                    radius: ball_radius,
                    gravity,
                };
                current = augment_dynamic_obstacle(&current, &s.ocp, &prediction);
            }
            mpc.scene = current;
            let clock = Instant::now();
            let result = mpc.update(t, &estimate);
            let compute_ms = 1e3 * clock.elapsed().as_secs_f64();
            match result {
                Ok((p, info)) => {
                    debug!(
                        "t={t:.3}: update {compute_ms:.1} ms, {} QP iterations, residual {:.1e}",
                        info.qp_iterations, info.kkt_residual
                    );
                    log.updates.push(UpdateRecord {
                        t,
                        compute_ms,
                        ok: true,
                        qp_iterations: info.qp_iterations,
                        kkt_residual: info.kkt_residual,
                    });
                    policy = Some(p);
                }
                Err(err) => {
                    warn!("t={t:.3}: policy update failed: {err}");
                    log.updates.push(UpdateRecord {
                        t,
                        compute_ms,
                        ok: false,
                        qp_iterations: 0,
                        kkt_residual: f64::NAN,
                    });
                }
            }
        }

        let u = match policy.as_ref().map(|p| policy_input(p, t, &estimate)) {
            Some(Ok(u)) if u.0.iter().all(|v| v.is_finite()) => u,
            Some(Ok(_)) => {
                log.status = aborted(t, "policy produced a non-finite input".into());
                break;
            }
            Some(Err(err)) => {
                log.status = aborted(t, err.to_string());
                break;
            }
            None => {
                log.status = aborted(t, "no policy available".into());
                break;
            }
        };

        let e = ee_state(&s.chain, &x)?;
        let fric_util = required_friction_scale(&e, arr)?;
        let feasible = feasibility_oracle(&e, arr, ForceMode::Full)?.feasible;
        drops.step(&mut log, feasible, k, t, h, &e, arr)?;

        let mut min_coll = collision_distances(&s.chain, &x, &scene)?
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if let Some(a) = anchor {
            let centers = robot_sphere_centers(&s.chain, &x.q, &scene)?;
            let ra = scene.robot_spheres[a].radius;
            for b in balls.iter_mut().filter(|b| !b.landed) {
                let r = b.at(t, &gravity);
                let gap = (r - centers[a]).norm() - ball_radius - ra;
                let still = (r - b.anchor_at_launch).norm() - ball_radius - ra;
                b.record.min_clearance = b.record.min_clearance.min(gap);
                b.record.static_clearance = b.record.static_clearance.min(still);
                if still < 0.0 && b.record.static_impact_time.is_none() {
                    b.record.static_impact_time = Some(t - b.launch);
                }
                min_coll = min_coll.min(gap);
            }
        }

        let compute_ms = match log.updates.last() {
            Some(r) if sim.log_compute_time && k % per_update == 0 => r.compute_ms,
            _ => 0.0,
        };
        log.rows.push(LogRow {
            t,
            state: x.clone(),
            input: u.0.clone(),
            ee_position: e.position,
            ee_speed: e.velocity.fixed_rows::<3>(0).norm(),
            ee_acceleration: e.linear_acceleration().norm(),
            tilt: tilt_angle(&e.rotation),
            goal_dist: (e.position - s.ocp.goal).norm(),
            fric_util,
            zmp_margin: support.zmp_margin(&e, arr),
            min_coll_dist: min_coll,
            compute_ms,
        });

        x = integrate_state(&x, &u, h)?;
        last_u = Some(u);
    }

    drops.finish(&mut log, h, arr);
    if let Some(last) = log.rows.last() {
        let e = ee_state(&s.chain, &last.state)?;
        log.final_tilts = object_tilts(arr, &e.rotation);
    }
    log.balls = balls.into_iter().map(|b| b.record).collect();
    if !log.drops.is_empty() {
        info!("{}: {} object(s) dropped", s.name, log.drops.len());
    }
    Ok(log)
}

fn aborted(t: f64, reason: String) -> RunStatus {
    warn!("t={t:.3}: aborting: {reason}");
    RunStatus::Aborted { time: t, reason }
}

impl RunLog {
    pub fn dropped(&self) -> bool {
        !self.drops.is_empty()
    }

    pub fn aborted(&self) -> bool {
        matches!(self.status, RunStatus::Aborted { .. })
    }

    /// First time after which the goal distance stays within tolerance.
    pub fn convergence_time(&self) -> Option<f64> {
        let last_out = self.rows.iter().rposition(|r| r.goal_dist > self.goal_tolerance);
        match last_out {
            None => self.rows.first().map(|r| r.t),
            Some(i) if i + 1 < self.rows.len() => Some(self.rows[i + 1].t),
            Some(_) => None,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let dof = self.rows.first().map_or(0, |r| r.state.dof());
        let mut out = csv::Writer::from_writer(w);
        out.write_record(csv_header(dof))?;
        for r in &self.rows {
            let mut rec = Vec::with_capacity(5 + 4 * dof + 6);
            rec.push(r.t);
            rec.extend(r.state.q.iter().chain(r.state.v.iter()).chain(r.state.vdot.iter()));
            rec.extend(r.input.iter());
            rec.extend(r.ee_position.iter());
            rec.extend([
                r.tilt,
                r.goal_dist,
                r.fric_util,
                r.zmp_margin,
                r.min_coll_dist,
                r.compute_ms,
            ]);
            out.write_record(rec.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        let ok: Vec<&UpdateRecord> = self.updates.iter().filter(|u| u.ok).collect();
        let times: Vec<f64> = ok.iter().map(|u| u.compute_ms).collect();
        let fold =
            |f: &dyn Fn(&LogRow) -> f64, init: f64, op: fn(f64, f64) -> f64| self.rows.iter().map(f).fold(init, op);
        let finite = |v: f64| v.is_finite().then_some(v);
        let n = self.rows.len().max(1) as f64;
        RunSummary {
            name: self.name.clone(),
            mode: self.mode.to_string(),
            seed: self.seed,
            status: self.status.clone(),
            simulated_time: self.rows.last().map_or(0.0, |r| r.t + self.timestep),
            dropped: self.dropped(),
            drops: self.drops.clone(),
            initial_infeasibility: self.initial_infeasibility.clone(),
            converged: self.convergence_time().is_some(),
            convergence_time: self.convergence_time(),
            final_goal_distance: self.rows.last().map(|r| r.goal_dist),
            max_ee_speed: fold(&|r| r.ee_speed, 0.0, f64::max),
            max_ee_acceleration: fold(&|r| r.ee_acceleration, 0.0, f64::max),
            max_tilt_deg: fold(&|r| r.tilt, 0.0, f64::max).to_degrees(),
            updates: self.updates.len(),
            failed_updates: self.updates.len() - ok.len(),
            mean_compute_ms: finite(times.iter().sum::<f64>() / times.len().max(1) as f64),
            max_compute_ms: finite(times.iter().copied().fold(0.0, f64::max)),
            max_fric_util: finite(fold(&|r| r.fric_util, 0.0, f64::max)),
            mean_fric_util: finite(fold(&|r| r.fric_util, 0.0, |a, b| a + b) / n),
            min_zmp_margin: finite(fold(&|r| r.zmp_margin, f64::INFINITY, f64::min)),
            min_collision_distance: finite(fold(&|r| r.min_coll_dist, f64::INFINITY, f64::min)),
            controller_mu: self.controller_mu.clone(),
            final_tilts: self.final_tilts.clone(),
            balls: self.balls.clone(),
        }
    }
}

/// Machine-readable run summary. Non-finite quantities are `null`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub mode: String,
    pub seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    pub simulated_time: f64,
    pub dropped: bool,
    pub drops: Vec<DropEvent>,
    pub initial_infeasibility: Option<InitialInfeasibility>,
    pub converged: bool,
    pub convergence_time: Option<f64>,
    pub final_goal_distance: Option<f64>,
    pub max_ee_speed: f64,
    pub max_ee_acceleration: f64,
    pub max_tilt_deg: f64,
    pub updates: usize,
    pub failed_updates: usize,
    pub mean_compute_ms: Option<f64>,
    pub max_compute_ms: Option<f64>,
    pub max_fric_util: Option<f64>,
    pub mean_fric_util: Option<f64>,
    pub min_zmp_margin: Option<f64>,
    pub min_collision_distance: Option<f64>,
    pub controller_mu: Vec<f64>,
    pub final_tilts: Vec<ObjectTilt>,
    pub balls: Vec<BallRecord>,
}

/// Result of one mode in a comparison; setup errors are kept as text.
#[derive(Clone, Debug)]
pub struct ModeRun {
    pub mode: ConstraintMode,
    pub result: Result<RunLog, String>,
}

/// Runs `scenario` once per mode, optionally on one thread per mode. The
/// output is in the order of `modes`.
pub fn compare_modes(scenario: &Scenario, modes: &[ConstraintMode], parallel: bool) -> Vec<ModeRun> {
    let run = |mode: ConstraintMode| {
        let mut s = scenario.clone();
        s.mode = mode;
        ModeRun {
            mode,
            result: run_scenario(&s).map_err(|e| e.to_string()),
        }
    };
    if !parallel {
        return modes.iter().map(|&m| run(m)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = modes.iter().map(|&m| scope.spawn(move || run(m))).collect();
        handles
            .into_iter()
            .zip(modes)
            .map(|(h, &mode)| {
                h.join().unwrap_or_else(|_| ModeRun {
                    mode,
                    result: Err("simulation thread panicked".into()),
                })
            })
            .collect()
    })
}

/// State `x` re-integrated from `rows[0]` with the logged inputs.
pub fn replay(rows: &[LogRow], h: f64) -> waiter_core::Result<Vec<RobotState>> {
    let mut out = Vec::with_capacity(rows.len());
    let Some(first) = rows.first() else {
        return Ok(out);
    };
    let mut x = first.state.clone();
    for r in rows {
        out.push(x.clone());
        x = integrate_state(&x, &JerkInput(r.input.clone()), h)?;
    }
    Ok(out)
}
