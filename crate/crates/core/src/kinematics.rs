//! Robot state, exact triple-integrator dynamics and forward kinematics.
//!
//! The platform is purely kinematic: the input is generalized jerk and the
//! state stacks position, velocity and acceleration. Forward kinematics is a
//! single recursive pass that propagates pose, twist and twist derivative
//! from the world frame to the end effector, so the end-effector
//! acceleration includes the `J̇ v` term exactly.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::spatial::{self, RigidTransform, M3, V3};

/// Generalized position, velocity and acceleration.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub vdot: DVector<f64>,
}

impl RobotState {
    pub fn new(q: DVector<f64>, v: DVector<f64>, vdot: DVector<f64>) -> Result<Self> {
        let s = Self { q, v, vdot };
        s.validate()?;
        Ok(s)
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            v: DVector::zeros(n),
            vdot: DVector::zeros(n),
        }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        for (what, len) in [("velocity", self.v.len()), ("acceleration", self.vdot.len())] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found: len,
                });
            }
        }
        if !self.as_slices().iter().all(|s| s.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("robot state"));
        }
        Ok(())
    }

    fn as_slices(&self) -> [&[f64]; 3] {
        [self.q.as_slice(), self.v.as_slice(), self.vdot.as_slice()]
    }

    /// Stacked `[q; v; v̇]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dof();
        let mut x = DVector::zeros(3 * n);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.v);
        x.rows_mut(2 * n, n).copy_from(&self.vdot);
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Result<Self> {
        if !x.len().is_multiple_of(3) {
            return Err(Error::DimensionMismatch {
                what: "stacked state",
                expected: 3 * (x.len() / 3 + 1),
                found: x.len(),
            });
        }
        let n = x.len() / 3;
        Ok(Self {
            q: x.rows(0, n).into_owned(),
            v: x.rows(n, n).into_owned(),
            vdot: x.rows(2 * n, n).into_owned(),
        })
    }
}

/// Generalized jerk.
#[derive(Clone, Debug, PartialEq)]
pub struct JerkInput(pub DVector<f64>);

/// Advances the triple integrator by `dt` under constant jerk; exact.
pub fn integrate_state(x: &RobotState, u: &JerkInput, dt: f64) -> Result<RobotState> {
    x.validate()?;
    if u.0.len() != x.dof() {
        return Err(Error::DimensionMismatch {
            what: "jerk input",
            expected: x.dof(),
            found: u.0.len(),
        });
    }
    if !u.0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("jerk input"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(alloc::format!(
            "integration step must be positive, got {dt}"
        )));
    }
    Ok(integrate_unchecked(x, &u.0, dt))
}

pub(crate) fn integrate_unchecked(x: &RobotState, u: &DVector<f64>, dt: f64) -> RobotState {
    let (dt2, dt3) = (dt * dt, dt * dt * dt);
    RobotState {
        q: &x.q + &x.v * dt + &x.vdot * (0.5 * dt2) + u * (dt3 / 6.0),
        v: &x.v + &x.vdot * dt + u * (0.5 * dt2),
        vdot: &x.vdot + u * dt,
    }
}

/// Discrete triple-integrator matrices `(Ā, B̄)` for `dof` coordinates:
/// `x⁺ = Ā x + B̄ u` with `x = [q; v; v̇]`.
pub fn discrete_model(dof: usize, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = dof;
    let mut a = DMatrix::identity(3 * n, 3 * n);
    let mut b = DMatrix::zeros(3 * n, n);
    for i in 0..n {
        a[(i, n + i)] = dt;
        a[(i, 2 * n + i)] = 0.5 * dt * dt;
        a[(n + i, 2 * n + i)] = dt;
        b[(i, i)] = dt * dt * dt / 6.0;
        b[(n + i, i)] = 0.5 * dt * dt;
        b[(2 * n + i, i)] = dt;
    }
    (a, b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointKind {
    Prismatic,
    Revolute,
}

/// One actuated joint: fixed parent-to-joint transform followed by motion
/// along or about `axis` (expressed in the joint frame).
#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub origin: RigidTransform,
}

/// Box limits on the stacked state and on the jerk input.
#[derive(Clone, Debug, PartialEq)]
pub struct Limits {
    pub state_lower: DVector<f64>,
    pub state_upper: DVector<f64>,
    pub input_lower: DVector<f64>,
    pub input_upper: DVector<f64>,
}

impl Limits {
    /// Symmetric limits built from upper bounds on position, velocity,
    /// acceleration and jerk.
    pub fn symmetric(q: &[f64], v: &[f64], vdot: &[f64], u: &[f64]) -> Self {
        let upper: Vec<f64> = q.iter().chain(v).chain(vdot).copied().collect();
        let state_upper = DVector::from_vec(upper);
        let input_upper = DVector::from_column_slice(u);
        Self {
            state_lower: -&state_upper,
            state_upper,
            input_lower: -&input_upper,
            input_upper,
        }
    }

    /// Limits of the reference omnidirectional base + 6-DOF arm.
    pub fn reference() -> Self {
        let two_pi = 2.0 * PI;
        Self::symmetric(
            &[10.0, 10.0, 10.0, two_pi, two_pi, two_pi, two_pi, two_pi, two_pi],
            &[1.1, 1.1, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0],
            &[2.5, 2.5, 1.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0],
            &[20.0, 20.0, 20.0, 80.0, 80.0, 80.0, 80.0, 80.0, 80.0],
        )
    }

    fn validate(&self, dof: usize) -> Result<()> {
        let dims = [
            ("state lower limit", self.state_lower.len(), 3 * dof),
            ("state upper limit", self.state_upper.len(), 3 * dof),
            ("input lower limit", self.input_lower.len(), dof),
            ("input upper limit", self.input_upper.len(), dof),
        ];
        for (what, found, expected) in dims {
            if found != expected {
                return Err(Error::DimensionMismatch { what, expected, found });
            }
        }
        let ordered = self
            .state_lower
            .iter()
            .zip(self.state_upper.iter())
            .chain(self.input_lower.iter().zip(self.input_upper.iter()))
            .all(|(lo, hi)| lo < hi);
        if !ordered {
            return Err(Error::InvalidChain("limits must satisfy lower < upper".into()));
        }
        Ok(())
    }
}

/// Serial chain from the world frame to the end effector.
#[derive(Clone, Debug, PartialEq)]
pub struct KinematicChain {
    joints: Vec<Joint>,
    ee_offset: RigidTransform,
    limits: Limits,
}

/// Home arm configuration of the reference chain; the tray is level there.
pub const REFERENCE_HOME_Q: [f64; 9] = [0.0, 0.0, 0.0, PI, -0.25 * PI, 0.5 * PI, -0.25 * PI, 0.5 * PI, 0.0];

impl KinematicChain {
    pub fn new(joints: Vec<Joint>, ee_offset: RigidTransform, limits: Limits) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidChain("chain has no joints".into()));
        }
        for j in &joints {
            j.origin.validate()?;
            let n = j.axis.norm();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidChain(alloc::format!(
                    "joint {} axis is not unit length",
                    j.name
                )));
            }
        }
        ee_offset.validate()?;
        limits.validate(joints.len())?;
        Ok(Self {
            joints,
            ee_offset,
            limits,
        })
    }

    /// Omnidirectional base (x, y, yaw) carrying a UR10-like arm with the
    /// published Denavit-Hartenberg offsets and a level tray at
    /// [`REFERENCE_HOME_Q`].
    pub fn reference() -> Self {
        let x = Vector3::x();
        let y = Vector3::y();
        let z = Vector3::z();
        let t = |xyz: [f64; 3], rpy: [f64; 3]| RigidTransform::from_xyz_rpy(xyz, rpy);
        let joint = |name: &str, kind, axis, origin| Joint {
            name: name.into(),
            kind,
            axis,
            origin,
        };
        let h = 0.5 * PI;
        let joints = alloc::vec![
            joint("base_x", JointKind::Prismatic, x, RigidTransform::identity()),
            joint("base_y", JointKind::Prismatic, y, RigidTransform::identity()),
            joint("base_yaw", JointKind::Revolute, z, RigidTransform::identity()),
            joint("shoulder_pan", JointKind::Revolute, z, t([0.27, 0.01, 0.653], [0.0; 3])),
            joint(
                "shoulder_lift",
                JointKind::Revolute,
                z,
                t([0.0, 0.0, 0.1273], [h, 0.0, 0.0])
            ),
            joint("elbow", JointKind::Revolute, z, t([-0.612, 0.0, 0.0], [0.0; 3])),
            joint("wrist_1", JointKind::Revolute, z, t([-0.5723, 0.0, 0.0], [0.0; 3])),
            joint(
                "wrist_2",
                JointKind::Revolute,
                z,
                t([0.0, 0.0, 0.163941], [h, 0.0, 0.0])
            ),
            joint("wrist_3", JointKind::Revolute, z, t([0.0, 0.0, 0.1157], [-h, 0.0, 0.0])),
        ];
        let ee = t([0.0, 0.0, 0.0922], [-h, -h, 0.0]);
        Self::new(joints, ee, Limits::reference()).expect("reference chain is valid")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn ee_offset(&self) -> &RigidTransform {
        &self.ee_offset
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    /// Index of the frame named `name`; the end effector is `"ee"` and has
    /// index [`Self::dof`].
    pub fn frame_index(&self, name: &str) -> Option<usize> {
        if name == "ee" {
            return Some(self.dof());
        }
        self.joints.iter().position(|j| j.name == name)
    }

    fn check_dim(&self, len: usize, what: &'static str) -> Result<()> {
        if len != self.dof() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.dof(),
                found: len,
            });
        }
        Ok(())
    }

    /// World pose `(R_e, r_e)` of the end effector.
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<(Matrix3<f64>, Vector3<f64>)> {
        self.check_dim(q.len(), "joint positions")?;
        let zeros = alloc::vec![0.0; self.dof()];
        let jet = self.jet(q.as_slice(), &zeros, &zeros);
        Ok((spatial::m_value(&jet.ee.rotation), spatial::v_value(&jet.ee.position)))
    }

    /// Pose, twist and twist derivative of every link frame and of the end
    /// effector. All quantities are expressed in the world frame.
    pub fn jet<T: Real>(&self, q: &[T], v: &[T], vdot: &[T]) -> ChainJet<T> {
        let mut f = FrameJet::<T>::world();
        let mut links = Vec::with_capacity(self.dof() + 1);
        for (i, joint) in self.joints.iter().enumerate() {
            f.apply_fixed(&joint.origin);
            let axis = [joint.axis[0], joint.axis[1], joint.axis[2]];
            match joint.kind {
                JointKind::Revolute => f.apply_revolute(&axis, q[i], v[i], vdot[i]),
                JointKind::Prismatic => f.apply_prismatic(&axis, q[i], v[i], vdot[i]),
            }
            links.push(f.clone());
        }
        f.apply_fixed(&self.ee_offset);
        ChainJet { links, ee: f }
    }
}

/// Pose, world twist and its derivative of one frame.
#[derive(Clone, Debug)]
pub struct FrameJet<T> {
    pub rotation: M3<T>,
    pub position: V3<T>,
    pub angular_velocity: V3<T>,
    pub linear_velocity: V3<T>,
    pub angular_acceleration: V3<T>,
    pub linear_acceleration: V3<T>,
}

impl<T: Real> FrameJet<T> {
    fn world() -> Self {
        let z = T::zero();
        let o = T::cst(1.0);
        Self {
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            position: [z; 3],
            angular_velocity: [z; 3],
            linear_velocity: [z; 3],
            angular_acceleration: [z; 3],
            linear_acceleration: [z; 3],
        }
    }

    fn apply_fixed(&mut self, t: &RigidTransform) {
        let r = spatial::mat_vec(&self.rotation, &spatial::v_cst(&t.translation));
        self.advance_origin(&r);
        self.rotation = spatial::mat_mul(&self.rotation, &spatial::m_cst(&t.rotation));
    }

    /// Moves the origin by the world-frame lever `r` fixed to the current frame.
    fn advance_origin(&mut self, r: &V3<T>) {
        let w = self.angular_velocity;
        let w_r = spatial::cross(&w, r);
        self.position = spatial::add(&self.position, r);
        self.linear_velocity = spatial::add(&self.linear_velocity, &w_r);
        let tangential = spatial::cross(&self.angular_acceleration, r);
        let centripetal = spatial::cross(&w, &w_r);
        self.linear_acceleration = spatial::add(&self.linear_acceleration, &spatial::add(&tangential, &centripetal));
    }

    fn apply_revolute(&mut self, axis: &V3<f64>, q: T, qd: T, qdd: T) {
        let s = spatial::mat_vec(&self.rotation, &[T::cst(axis[0]), T::cst(axis[1]), T::cst(axis[2])]);
        let s_qd = spatial::scale(&s, qd);
        let coriolis = spatial::cross(&self.angular_velocity, &s_qd);
        self.angular_acceleration = spatial::add(
            &self.angular_acceleration,
            &spatial::add(&spatial::scale(&s, qdd), &coriolis),
        );
        self.angular_velocity = spatial::add(&self.angular_velocity, &s_qd);
        self.rotation = spatial::mat_mul(&self.rotation, &spatial::axis_angle(axis, q));
    }

    fn apply_prismatic(&mut self, axis: &V3<f64>, q: T, qd: T, qdd: T) {
        let s = spatial::mat_vec(&self.rotation, &[T::cst(axis[0]), T::cst(axis[1]), T::cst(axis[2])]);
        let d = spatial::scale(&s, q);
        self.advance_origin(&d);
        let s_qd = spatial::scale(&s, qd);
        let coriolis = spatial::cross(&self.angular_velocity, &s_qd);
        self.linear_velocity = spatial::add(&self.linear_velocity, &s_qd);
        self.linear_acceleration = spatial::add(
            &self.linear_acceleration,
            &spatial::add(&spatial::scale(&s, qdd), &spatial::scale(&coriolis, T::cst(2.0))),
        );
    }

    /// Twist and twist derivative expressed in this frame:
    /// `([v; ω], [v̇; ω̇])` where `v̇` is the frame origin's acceleration.
    pub fn body_twist(&self) -> ([T; 6], [T; 6]) {
        let r = &self.rotation;
        let v = spatial::mat_t_vec(r, &self.linear_velocity);
        let w = spatial::mat_t_vec(r, &self.angular_velocity);
        let a = spatial::mat_t_vec(r, &self.linear_acceleration);
        let al = spatial::mat_t_vec(r, &self.angular_acceleration);
        (
            [v[0], v[1], v[2], w[0], w[1], w[2]],
            [a[0], a[1], a[2], al[0], al[1], al[2]],
        )
    }
}

#[derive(Clone, Debug)]
pub struct ChainJet<T> {
    /// Frame after each joint, in chain order.
    pub links: Vec<FrameJet<T>>,
    pub ee: FrameJet<T>,
}

impl<T: Real> ChainJet<T> {
    /// Frame `index`: link frames first, the end effector last.
    pub fn frame(&self, index: usize) -> &FrameJet<T> {
        self.links.get(index).unwrap_or(&self.ee)
    }
}

/// End-effector state `(R_e, r_e, ϖ_e, ϖ̇_e)`.
///
/// `velocity = [v_e; ω_e]` and `acceleration = [v̇_e; ω̇_e]` are expressed in
/// the end-effector frame; `v̇_e` is the acceleration of the frame origin
/// (not the derivative of the body-frame velocity coordinates).
#[derive(Clone, Debug, PartialEq)]
pub struct EEState {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub velocity: Vector6<f64>,
    pub acceleration: Vector6<f64>,
}

impl EEState {
    /// Stationary end effector with orientation `rotation` at `position`.
    pub fn at_rest(rotation: Matrix3<f64>, position: Vector3<f64>) -> Self {
        Self {
            rotation,
            position,
            velocity: Vector6::zeros(),
            acceleration: Vector6::zeros(),
        }
    }

    pub fn linear_acceleration(&self) -> Vector3<f64> {
        self.acceleration.fixed_rows::<3>(0).into_owned()
    }

    pub fn angular_velocity(&self) -> Vector3<f64> {
        self.velocity.fixed_rows::<3>(3).into_owned()
    }

    pub fn angular_acceleration(&self) -> Vector3<f64> {
        self.acceleration.fixed_rows::<3>(3).into_owned()
    }
}

/// End-effector state of the robot in state `x`.
pub fn ee_state(chain: &KinematicChain, x: &RobotState) -> Result<EEState> {
    x.validate()?;
    chain.check_dim(x.dof(), "robot state")?;
    let jet = chain.jet(x.q.as_slice(), x.v.as_slice(), x.vdot.as_slice());
    Ok(ee_state_from_jet(&jet.ee))
}

pub(crate) fn ee_state_from_jet(f: &FrameJet<f64>) -> EEState {
    let (vel, acc) = f.body_twist();
    EEState {
        rotation: spatial::m_value(&f.rotation),
        position: spatial::v_value(&f.position),
        velocity: Vector6::from(vel),
        acceleration: Vector6::from(acc),
    }
}

/// Angle between the end-effector z axis (tray normal) and the world
/// vertical.
pub fn tilt_angle(rotation: &Matrix3<f64>) -> f64 {
    crate::math::acos(rotation[(2, 2)])
}
