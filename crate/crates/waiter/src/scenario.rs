//! Scenario files.
//!
//! A scenario is a versioned TOML document with the sections `robot`,
//! `arrangement`, `controller`, `scene`, `events` and `sim`. All quantities
//! are SI. Object and contact geometry is given in the end-effector frame,
//! obstacles and throws in the world frame, and the goal relative to the
//! initial end-effector position.

use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use waiter_core::balance::{Arrangement, Body, ContactPoint, RigidObject, STANDARD_GRAVITY};
use waiter_core::kinematics::{Joint, JointKind, KinematicChain, Limits, RobotState, REFERENCE_HOME_Q};
use waiter_core::ocp::{
    ConstraintMode, ConstraintOptions, CostWeights, OcpDefinition, RobotSphere, SceneModel, Sphere, DOF,
};
use waiter_core::qp::QpSettings;
use waiter_core::spatial::RigidTransform;

pub const FORMAT_VERSION: u32 = 1;

/// Goal displacements of the experiments, relative to the initial end
/// effector position.
pub const GOAL_1: [f64; 3] = [-2.0, 1.0, 0.0];
pub const GOAL_2: [f64; 3] = [2.0, 0.0, -0.25];
pub const GOAL_3: [f64; 3] = [0.0, 2.0, 0.25];

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("unsupported scenario version {0} (this build reads version {FORMAT_VERSION})")]
    Version(u32),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] waiter_core::Error),
}

type Result<T> = std::result::Result<T, ScenarioError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(ScenarioError::Invalid(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub robot: RobotSection,
    pub arrangement: ArrangementSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
    #[serde(default)]
    pub sim: SimSettings,
}

/// Robot description. Without `joints` the built-in reference chain is used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotSection {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub joints: Vec<JointSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ee: Option<FrameSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limits: Option<LimitSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_q: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Prismatic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub joint_type: JointType,
    pub axis: [f64; 3],
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSpec {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

/// Symmetric bounds, one entry per joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSpec {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub jerk: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrangementSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<[f64; 3]>,
    pub objects: Vec<ObjectSpec>,
    /// One entry per contact patch.
    pub contacts: Vec<PatchSpec>,
}

/// Rigid object; exactly one of `box`, `cylinder` (radius, height) or
/// `inertia` gives the inertia about the centre of mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub mass: f64,
    pub com: [f64; 3],
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub cuboid: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cylinder: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<[[f64; 3]; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub supported: String,
    /// `"tray"` or the name of another object.
    pub supporting: String,
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_nominal: Option<f64>,
    /// Normal pointing into the supported object; defaults to `+z`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 3]>,
    /// Reference direction for the first tangent axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tangent: Option<[f64; 3]>,
    pub points: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    #[serde(with = "mode_serde")]
    pub mode: ConstraintMode,
    pub goal: [f64; 3],
    pub horizon: f64,
    pub timestep: f64,
    pub full_mu_factor: f64,
    pub support_margin: f64,
    /// Replaces the minimum-friction coefficients in robust mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub robust_mu: Option<f64>,
    pub slack_weight: f64,
    pub projectile_clearance: f64,
    /// Defaults to `4 / clearance²`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projectile_slack_weight: Option<f64>,
    pub use_limits: bool,
    pub sqp_iterations: usize,
    pub qp_iterations: usize,
    pub qp_tolerance: f64,
    pub weights: WeightSpec,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let ocp = OcpDefinition::default();
        let opts = ConstraintOptions::default();
        Self {
            mode: ConstraintMode::Robust,
            goal: GOAL_1,
            horizon: ocp.horizon,
            timestep: ocp.dt,
            full_mu_factor: opts.full_mu_factor,
            support_margin: opts.support_margin,
            robust_mu: None,
            slack_weight: ocp.slack_weight,
            projectile_clearance: ocp.projectile_clearance,
            projectile_slack_weight: None,
            use_limits: ocp.use_limits,
            sqp_iterations: ocp.sqp_iterations,
            qp_iterations: ocp.qp.max_iterations,
            qp_tolerance: ocp.qp.tolerance,
            weights: WeightSpec::default(),
        }
    }
}

/// Diagonal cost weights; joint entries are shared by all joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSpec {
    pub ee_position: f64,
    pub joint_position: f64,
    pub joint_velocity: f64,
    pub joint_acceleration: f64,
    pub jerk: f64,
    pub force: f64,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            ee_position: 1.0,
            joint_position: 0.0,
            joint_velocity: 0.1,
            joint_acceleration: 0.01,
            jerk: 0.001,
            force: 0.001,
        }
    }
}

mod mode_serde {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};
    use waiter_core::ocp::ConstraintMode;

    pub fn serialize<S: Serializer>(mode: &ConstraintMode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(mode.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ConstraintMode, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(|_| {
            D::Error::custom(format!(
                "unknown mode `{s}`, expected one of none, upward, full, robust"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSphereSpec {
    pub name: String,
    /// Joint name, or `"ee"`.
    pub frame: String,
    #[serde(default)]
    pub offset: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSection {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub obstacles: Vec<SphereSpec>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub robot_spheres: Vec<RobotSphereSpec>,
    /// Robot sphere kept clear of thrown balls.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tube_anchor: Option<String>,
    pub ball_radius: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            obstacles: Vec::new(),
            robot_spheres: Vec::new(),
            tube_anchor: None,
            ball_radius: 0.11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Event {
    /// A static sphere that appears at `time` and stays.
    Obstacle { time: f64, center: [f64; 3], radius: f64 },
    /// A ball released at `time` from `position` with `velocity`.
    Throw {
        time: f64,
        position: [f64; 3],
        velocity: [f64; 3],
    },
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::Obstacle { time, .. } | Event::Throw { time, .. } => *time,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    pub duration: f64,
    pub timestep: f64,
    pub policy_period: f64,
    pub seed: u64,
    /// Standard deviation of the joint position measurement noise.
    pub q_noise: f64,
    /// Sustained infeasibility that counts as a drop.
    pub drop_window: f64,
    pub goal_tolerance: f64,
    /// Run the robot state estimator between measurements and controller.
    pub estimator: bool,
    /// Write wall-clock update times into the CSV (makes it non-reproducible).
    pub log_compute_time: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            duration: 8.0,
            timestep: 0.001,
            policy_period: 0.01,
            seed: 0,
            q_noise: 0.0,
            drop_window: 0.02,
            goal_tolerance: 0.01,
            estimator: true,
            log_compute_time: false,
        }
    }
}

impl SimSettings {
    /// Simulation steps per policy update.
    pub fn steps_per_update(&self) -> usize {
        (self.policy_period / self.timestep).round() as usize
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.timestep).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timestep > 0.0 && self.duration > 0.0 && self.policy_period > 0.0) {
            return invalid("sim durations must be positive");
        }
        let ratio = self.policy_period / self.timestep;
        if ratio < 0.5 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return invalid("sim.timestep must divide sim.policy_period");
        }
        if !(self.q_noise >= 0.0 && self.drop_window >= 0.0 && self.goal_tolerance > 0.0) {
            return invalid("sim noise, drop window and goal tolerance must be non-negative");
        }
        Ok(())
    }
}

impl ScenarioFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if file.version != FORMAT_VERSION {
            return Err(ScenarioError::Version(file.version));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn resolve(&self) -> Result<Scenario> {
        let chain = self.robot.chain()?;
        let q0 = match &self.robot.initial_q {
            Some(q) => q.clone(),
            None if self.robot.joints.is_empty() => REFERENCE_HOME_Q.to_vec(),
            None => vec![0.0; chain.dof()],
        };
        if q0.len() != chain.dof() {
            return invalid(format!(
                "robot.initial_q has {} entries, the chain has {} joints",
                q0.len(),
                chain.dof()
            ));
        }
        if chain.dof() != DOF {
            return invalid(format!("the controller needs a {DOF}-joint chain"));
        }
        let initial = RobotState::at_rest(DVector::from_vec(q0));
        initial.validate()?;
        let (_, r0) = chain.forward_kinematics(&initial.q)?;

        let arrangement = self.arrangement.build()?;
        let c = &self.controller;
        let weights = &c.weights;
        let ocp = OcpDefinition {
            horizon: c.horizon,
            dt: c.timestep,
            weights: CostWeights {
                position: Vector3::repeat(weights.ee_position),
                state: DVector::from_iterator(
                    3 * DOF,
                    [
                        weights.joint_position,
                        weights.joint_velocity,
                        weights.joint_acceleration,
                    ]
                    .into_iter()
                    .flat_map(|w| std::iter::repeat_n(w, DOF)),
                ),
                input: DVector::repeat(DOF, weights.jerk),
                force: weights.force,
            },
            goal: r0 + Vector3::from(c.goal),
            slack_weight: c.slack_weight,
            projectile_clearance: c.projectile_clearance,
            projectile_slack_weight: c
                .projectile_slack_weight
                .unwrap_or(4.0 / (c.projectile_clearance * c.projectile_clearance)),
            use_limits: c.use_limits,
            sqp_iterations: c.sqp_iterations,
            qp: QpSettings {
                max_iterations: c.qp_iterations,
                tolerance: c.qp_tolerance,
            },
        };
        ocp.validate()?;
        if matches!(c.robust_mu, Some(m) if !(m >= 0.0)) {
            return invalid("controller.robust_mu must be non-negative");
        }
        let options = ConstraintOptions {
            full_mu_factor: c.full_mu_factor,
            support_margin: c.support_margin,
        };
        if !(options.full_mu_factor > 0.0 && options.support_margin >= 0.0) {
            return invalid("controller.full_mu_factor must be positive and support_margin non-negative");
        }

        let scene = self.scene.build(&chain)?;
        if !(self.scene.ball_radius > 0.0) {
            return invalid("scene.ball_radius must be positive");
        }
        for e in &self.events {
            let ok = match e {
                Event::Obstacle { time, radius, center } => *time >= 0.0 && *radius > 0.0 && finite(center),
                Event::Throw {
                    time,
                    position,
                    velocity,
                } => *time >= 0.0 && finite(position) && finite(velocity),
            };
            if !ok {
                return invalid("events need a non-negative time, finite vectors and positive radii");
            }
        }
        if self.events.iter().any(|e| matches!(e, Event::Throw { .. })) && scene.tube_anchor.is_none() {
            return invalid("throw events need scene.tube_anchor");
        }
        self.sim.validate()?;
        Ok(Scenario {
            name: self.name.clone(),
            chain,
            initial,
            arrangement,
            mode: c.mode,
            ocp,
            options,
            robust_mu: c.robust_mu,
            scene,
            ball_radius: self.scene.ball_radius,
            events: self.events.clone(),
            sim: self.sim.clone(),
        })
    }
}

fn finite(v: &[f64; 3]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl RobotSection {
    pub fn chain(&self) -> Result<KinematicChain> {
        if self.joints.is_empty() {
            let reference = KinematicChain::reference();
            if self.ee.is_none() && self.limits.is_none() {
                return Ok(reference);
            }
            let ee = self
                .ee
                .as_ref()
                .map_or_else(|| reference.ee_offset().clone(), FrameSpec::transform);
            let limits = match &self.limits {
                Some(l) => l.build(reference.dof())?,
                None => reference.limits().clone(),
            };
            return Ok(KinematicChain::new(reference.joints().to_vec(), ee, limits)?);
        }
        let joints = self
            .joints
            .iter()
            .map(|j| Joint {
                name: j.name.clone(),
                kind: match j.joint_type {
                    JointType::Revolute => JointKind::Revolute,
                    JointType::Prismatic => JointKind::Prismatic,
                },
                axis: Vector3::from(j.axis),
                origin: RigidTransform::from_xyz_rpy(j.xyz, j.rpy),
            })
            .collect::<Vec<_>>();
        let ee = self
            .ee
            .as_ref()
            .map_or_else(RigidTransform::identity, FrameSpec::transform);
        let Some(limits) = &self.limits else {
            return invalid("a custom robot chain needs robot.limits");
        };
        let limits = limits.build(joints.len())?;
        Ok(KinematicChain::new(joints, ee, limits)?)
    }
}

impl FrameSpec {
    fn transform(&self) -> RigidTransform {
        RigidTransform::from_xyz_rpy(self.xyz, self.rpy)
    }
}

impl LimitSpec {
    fn build(&self, dof: usize) -> Result<Limits> {
        for (name, v) in [
            ("position", &self.position),
            ("velocity", &self.velocity),
            ("acceleration", &self.acceleration),
            ("jerk", &self.jerk),
        ] {
            if v.len() != dof {
                return invalid(format!("robot.limits.{name} has {} entries, expected {dof}", v.len()));
            }
        }
        Ok(Limits::symmetric(
            &self.position,
            &self.velocity,
            &self.acceleration,
            &self.jerk,
        ))
    }
}

impl ObjectSpec {
    fn build(&self) -> Result<RigidObject> {
        let com = Vector3::from(self.com);
        let shapes = [self.cuboid.is_some(), self.cylinder.is_some(), self.inertia.is_some()];
        if shapes.iter().filter(|&&s| s).count() != 1 {
            return invalid(format!(
                "object {}: give exactly one of box, cylinder or inertia",
                self.name
            ));
        }
        if let Some(dims) = self.cuboid {
            return Ok(RigidObject::uniform_box(&self.name, self.mass, com, dims));
        }
        let inertia = if let Some([r, h]) = self.cylinder {
            let side = self.mass * (3.0 * r * r + h * h) / 12.0;
            Matrix3::from_diagonal(&Vector3::new(side, side, 0.5 * self.mass * r * r))
        } else {
            let m = self.inertia.unwrap();
            Matrix3::from_fn(|i, j| m[i][j])
        };
        Ok(RigidObject {
            name: self.name.clone(),
            mass: self.mass,
            com,
            inertia,
        })
    }
}

impl ArrangementSection {
    pub fn build(&self) -> Result<Arrangement> {
        let objects = self.objects.iter().map(ObjectSpec::build).collect::<Result<Vec<_>>>()?;
        let index = |name: &str| self.objects.iter().position(|o| o.name == name);
        for (i, o) in self.objects.iter().enumerate() {
            if o.name == "tray" || index(&o.name) != Some(i) {
                return invalid(format!("object name `{}` is reserved or repeated", o.name));
            }
        }
        let mut contacts = Vec::new();
        for (patch, p) in self.contacts.iter().enumerate() {
            let Some(supported) = index(&p.supported) else {
                return invalid(format!("contacts[{patch}].supported: unknown object `{}`", p.supported));
            };
            let supporting = if p.supporting == "tray" {
                Body::Tray
            } else {
                match index(&p.supporting) {
                    Some(j) => Body::Object(j),
                    None => {
                        return invalid(format!(
                            "contacts[{patch}].supporting: unknown object `{}`",
                            p.supporting
                        ));
                    }
                }
            };
            if p.points.is_empty() {
                return invalid(format!("contacts[{patch}] has no points"));
            }
            let normal = Vector3::from(p.normal.unwrap_or([0.0, 0.0, 1.0]));
            if !(normal.norm() > 1e-9) {
                return invalid(format!("contacts[{patch}].normal is zero"));
            }
            for pt in &p.points {
                let mut c = match p.tangent {
                    Some(t) => ContactPoint::with_tangent(
                        Vector3::from(*pt),
                        normal,
                        Vector3::from(t),
                        p.mu,
                        supporting,
                        supported,
                        patch,
                    ),
                    None => ContactPoint::new(Vector3::from(*pt), normal, p.mu, supporting, supported, patch),
                };
                c.mu_nominal = p.mu_nominal.unwrap_or(p.mu);
                contacts.push(c);
            }
        }
        let gravity = Vector3::from(self.gravity.unwrap_or([0.0, 0.0, -STANDARD_GRAVITY]));
        Ok(Arrangement::with_gravity(objects, contacts, gravity)?)
    }
}

impl SceneSection {
    fn build(&self, chain: &KinematicChain) -> Result<SceneModel> {
        let mut robot_spheres = Vec::new();
        for s in &self.robot_spheres {
            let Some(frame) = chain.frame_index(&s.frame) else {
                return invalid(format!("robot sphere {}: unknown frame `{}`", s.name, s.frame));
            };
            robot_spheres.push(RobotSphere {
                name: s.name.clone(),
                frame,
                offset: Vector3::from(s.offset),
                radius: s.radius,
            });
        }
        let tube_anchor = match &self.tube_anchor {
            None => None,
            Some(name) => match robot_spheres.iter().position(|s| &s.name == name) {
                Some(i) => Some(i),
                None => return invalid(format!("scene.tube_anchor: unknown robot sphere `{name}`")),
            },
        };
        let scene = SceneModel {
            obstacles: self
                .obstacles
                .iter()
                .map(|o| Sphere {
                    center: Vector3::from(o.center),
                    radius: o.radius,
                })
                .collect(),
            robot_spheres,
            tube_anchor,
            tube: None,
        };
        scene.validate(chain)?;
        Ok(scene)
    }
}

/// A validated scenario in model types.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub chain: KinematicChain,
    pub initial: RobotState,
    /// Arrangement with the true friction coefficients.
    pub arrangement: Arrangement,
    pub mode: ConstraintMode,
    /// Controller definition; the goal is in the world frame.
    pub ocp: OcpDefinition,
    pub options: ConstraintOptions,
    pub robust_mu: Option<f64>,
    /// Static environment.
    pub scene: SceneModel,
    pub ball_radius: f64,
    pub events: Vec<Event>,
    pub sim: SimSettings,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        ScenarioFile::load(path)?.resolve()
    }
}
