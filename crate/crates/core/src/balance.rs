//! Rigid objects resting on the tray, their contact points, and the
//! balancing (sticking-contact) constraints.
//!
//! All geometry is expressed in the end-effector frame. The force stored for
//! a contact acts on its *supported* object; the supporting body receives the
//! opposite force.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix3x2, SMatrix, SymmetricEigen, Vector2, Vector3, Vector6};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::kinematics::EEState;
use crate::lp;
use crate::math;
use crate::spatial::{self, M3};

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Body {
    Tray,
    Object(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigidObject {
    pub name: String,
    pub mass: f64,
    /// Centre of mass in the end-effector frame.
    pub com: Vector3<f64>,
    /// Inertia about the centre of mass, body frame.
    pub inertia: Matrix3<f64>,
}

impl RigidObject {
    /// Uniform-density cuboid with side lengths `dims`.
    pub fn uniform_box(name: &str, mass: f64, com: Vector3<f64>, dims: [f64; 3]) -> Self {
        let [x, y, z] = dims;
        let k = mass / 12.0;
        Self {
            name: name.into(),
            mass,
            com,
            inertia: Matrix3::from_diagonal(&Vector3::new(
                k * (y * y + z * z),
                k * (x * x + z * z),
                k * (x * x + y * y),
            )),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArrangement(alloc::format!("object {}: {msg}", self.name)));
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad("mass must be positive");
        }
        if !self.com.iter().chain(self.inertia.iter()).all(|v| v.is_finite()) {
            return bad("non-finite centre of mass or inertia");
        }
        if (self.inertia - self.inertia.transpose()).amax() > 1e-9 {
            return bad("inertia is not symmetric");
        }
        let eig = SymmetricEigen::new(self.inertia).eigenvalues;
        let tol = 1e-9 * eig.amax().max(1e-12);
        if eig.iter().any(|&l| l < -tol) {
            return bad("inertia is not positive semidefinite");
        }
        for i in 0..3 {
            if eig[i] > eig[(i + 1) % 3] + eig[(i + 2) % 3] + tol {
                return bad("inertia eigenvalues violate the triangle inequality");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactPoint {
    /// Contact location in the end-effector frame.
    pub position: Vector3<f64>,
    /// Unit normal pointing into the supported object.
    pub normal: Vector3<f64>,
    /// Orthonormal tangent basis with `s₁ × s₂ = n`.
    pub tangent: Matrix3x2<f64>,
    pub mu: f64,
    pub mu_nominal: f64,
    pub supporting: Body,
    pub supported: usize,
    /// Contact patch this point belongs to (points of one patch share a plane).
    pub patch: usize,
}

impl ContactPoint {
    /// Contact with a tangent basis whose first axis is the projection of the
    /// end-effector x axis (or y axis when x is nearly normal).
    pub fn new(
        position: Vector3<f64>,
        normal: Vector3<f64>,
        mu: f64,
        supporting: Body,
        supported: usize,
        patch: usize,
    ) -> Self {
        let reference = if normal.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        Self::with_tangent(position, normal, reference, mu, supporting, supported, patch)
    }

    /// Contact whose first tangent axis is `reference` projected onto the
    /// contact plane.
    pub fn with_tangent(
        position: Vector3<f64>,
        normal: Vector3<f64>,
        reference: Vector3<f64>,
        mu: f64,
        supporting: Body,
        supported: usize,
        patch: usize,
    ) -> Self {
        let n = normal.normalize();
        let s1 = (reference - n * reference.dot(&n)).normalize();
        let s2 = n.cross(&s1);
        Self {
            position,
            normal: n,
            tangent: Matrix3x2::from_columns(&[s1, s2]),
            mu,
            mu_nominal: mu,
            supporting,
            supported,
            patch,
        }
    }

    fn validate(&self, index: usize, n_objects: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArrangement(alloc::format!("contact {index}: {msg}")));
        if (self.normal.norm() - 1.0).abs() > 1e-9 {
            return bad("normal is not unit length");
        }
        let sts = self.tangent.transpose() * self.tangent;
        if (sts - Matrix2::identity()).amax() > 1e-9 || (self.tangent.transpose() * self.normal).amax() > 1e-9 {
            return bad("tangent basis is not orthonormal and orthogonal to the normal");
        }
        if !(self.mu >= 0.0 && self.mu.is_finite() && self.mu_nominal >= 0.0) {
            return bad("friction coefficients must be non-negative");
        }
        if self.supported >= n_objects {
            return bad("supported object does not exist");
        }
        if let Body::Object(j) = self.supporting {
            if j >= n_objects || j == self.supported {
                return bad("supporting object is invalid");
            }
        }
        Ok(())
    }

    /// `+1` when `obj` is the supported body, `-1` when it is the supporting
    /// body, `None` when not involved.
    pub fn sign_for(&self, obj: usize) -> Option<f64> {
        if self.supported == obj {
            Some(1.0)
        } else if self.supporting == Body::Object(obj) {
            Some(-1.0)
        } else {
            None
        }
    }
}

/// Objects and contact points balanced on the tray.
#[derive(Clone, Debug, PartialEq)]
pub struct Arrangement {
    pub objects: Vec<RigidObject>,
    pub contacts: Vec<ContactPoint>,
    pub gravity: Vector3<f64>,
}

impl Arrangement {
    pub fn new(objects: Vec<RigidObject>, contacts: Vec<ContactPoint>) -> Result<Self> {
        Self::with_gravity(objects, contacts, Vector3::new(0.0, 0.0, -STANDARD_GRAVITY))
    }

    pub fn with_gravity(objects: Vec<RigidObject>, contacts: Vec<ContactPoint>, gravity: Vector3<f64>) -> Result<Self> {
        let arr = Self {
            objects,
            contacts,
            gravity,
        };
        arr.validate()?;
        Ok(arr)
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::InvalidArrangement("no objects".into()));
        }
        if !self.gravity.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gravity"));
        }
        for o in &self.objects {
            o.validate()?;
        }
        for (i, c) in self.contacts.iter().enumerate() {
            c.validate(i, self.objects.len())?;
        }
        for (k, o) in self.objects.iter().enumerate() {
            let pts: Vec<Vector3<f64>> = self
                .contacts
                .iter()
                .filter(|c| c.sign_for(k).is_some())
                .map(|c| c.position)
                .collect();
            if !spans_plane(&pts) {
                return Err(Error::InvalidArrangement(alloc::format!(
                    "object {} needs at least three non-collinear contact points",
                    o.name
                )));
            }
        }
        Ok(())
    }

    pub fn num_contacts(&self) -> usize {
        self.contacts.len()
    }

    /// Copy with every friction coefficient multiplied by `factor`.
    pub fn with_mu_scaled(&self, factor: f64) -> Self {
        let mut a = self.clone();
        for c in &mut a.contacts {
            c.mu *= factor;
        }
        a
    }

    /// Copy with per-contact friction coefficients `mu`.
    pub fn with_mu(&self, mu: &[f64]) -> Result<Self> {
        if mu.len() != self.contacts.len() {
            return Err(Error::DimensionMismatch {
                what: "friction coefficients",
                expected: self.contacts.len(),
                found: mu.len(),
            });
        }
        let mut a = self.clone();
        for (c, &m) in a.contacts.iter_mut().zip(mu) {
            c.mu = m;
        }
        Ok(a)
    }

    /// Copy with each contact patch shrunk by `margin` inside its own plane.
    pub fn with_support_margin(&self, margin: f64) -> Result<Self> {
        if margin == 0.0 {
            return Ok(self.clone());
        }
        let mut a = self.clone();
        let mut patches: Vec<usize> = self.contacts.iter().map(|c| c.patch).collect();
        patches.sort_unstable();
        patches.dedup();
        for p in patches {
            let idx: Vec<usize> = (0..self.contacts.len())
                .filter(|&i| self.contacts[i].patch == p)
                .collect();
            if idx.len() < 3 {
                continue;
            }
            let pts: Vec<Vector3<f64>> = idx.iter().map(|&i| self.contacts[i].position).collect();
            let normal = self.contacts[idx[0]].normal;
            let inset = inset_polygon(&pts, &normal, margin)?;
            for (k, &i) in idx.iter().enumerate() {
                a.contacts[i].position = inset[k];
            }
        }
        Ok(a)
    }

    /// Indices of contacts touching `obj` with the sign of their force on it.
    pub fn object_contacts(&self, obj: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.contacts
            .iter()
            .enumerate()
            .filter_map(move |(i, c)| c.sign_for(obj).map(|s| (i, s)))
    }

    fn check_object(&self, obj: usize) -> Result<&RigidObject> {
        self.objects.get(obj).ok_or(Error::UnknownObject(obj))
    }
}

fn spans_plane(pts: &[Vector3<f64>]) -> bool {
    if pts.len() < 3 {
        return false;
    }
    let scale = pts.iter().map(|p| (p - pts[0]).norm()).fold(0.0, f64::max);
    if scale <= 0.0 {
        return false;
    }
    pts.iter().any(|a| {
        pts.iter()
            .any(|b| (a - pts[0]).cross(&(b - pts[0])).norm() > 1e-9 * scale * scale)
    })
}

/// Orthonormal in-plane basis `[s₁ s₂]` for `normal`.
pub fn plane_basis(normal: &Vector3<f64>) -> Matrix3x2<f64> {
    let reference = if normal.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let s1 = (reference - normal * reference.dot(normal)).normalize();
    Matrix3x2::from_columns(&[s1, normal.cross(&s1)])
}

/// Moves each vertex of the convex planar polygon `pts` inward so every edge
/// shifts by `margin`. Output order matches input order.
fn inset_polygon(pts: &[Vector3<f64>], normal: &Vector3<f64>, margin: f64) -> Result<Vec<Vector3<f64>>> {
    let n = pts.len();
    let centroid = pts.iter().sum::<Vector3<f64>>() / n as f64;
    let basis = plane_basis(normal);
    let flat: Vec<Vector2<f64>> = pts.iter().map(|p| basis.transpose() * (p - centroid)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let ta = math::atan2(flat[a].y, flat[a].x);
        let tb = math::atan2(flat[b].y, flat[b].x);
        ta.partial_cmp(&tb).unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut out = pts.to_vec();
    for k in 0..n {
        let prev = flat[order[(k + n - 1) % n]];
        let cur = flat[order[k]];
        let next = flat[order[(k + 1) % n]];
        // inward normals of the two edges meeting at `cur` (counter-clockwise order)
        let inward = |a: Vector2<f64>, b: Vector2<f64>| {
            let d = (b - a).normalize();
            Vector2::new(-d.y, d.x)
        };
        let n1 = inward(prev, cur);
        let n2 = inward(cur, next);
        // solve n1·p = n1·cur + m, n2·p = n2·cur + m
        let m = Matrix2::new(n1.x, n1.y, n2.x, n2.y);
        let rhs = Vector2::new(n1.dot(&cur) + margin, n2.dot(&cur) + margin);
        let p = m
            .try_inverse()
            .ok_or_else(|| Error::InvalidArrangement("degenerate contact patch".into()))?
            * rhs;
        if (p - cur).norm() >= cur.norm() {
            return Err(Error::InvalidArrangement(alloc::format!(
                "support margin {margin} m collapses a contact patch"
            )));
        }
        out[order[k]] = centroid + basis * p;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForceMode {
    /// One 3-vector per contact, constrained to the friction pyramid.
    Full,
    /// One non-negative scalar per contact along its normal (zero friction).
    Scalar,
}

impl ForceMode {
    pub fn vars_per_contact(self) -> usize {
        match self {
            ForceMode::Full => 3,
            ForceMode::Scalar => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactForces {
    pub mode: ForceMode,
    pub values: DVector<f64>,
}

impl ContactForces {
    pub fn new(mode: ForceMode, values: DVector<f64>, arr: &Arrangement) -> Result<Self> {
        let expected = mode.vars_per_contact() * arr.num_contacts();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "contact forces",
                expected,
                found: values.len(),
            });
        }
        if mode == ForceMode::Scalar && values.iter().any(|&f| f < 0.0) {
            return Err(Error::InvalidArgument(
                "scalar contact forces must be non-negative".into(),
            ));
        }
        Ok(Self { mode, values })
    }

    /// Force vector of contact `i`, end-effector frame.
    pub fn force(&self, i: usize, arr: &Arrangement) -> Vector3<f64> {
        match self.mode {
            ForceMode::Full => self.values.fixed_rows::<3>(3 * i).into_owned(),
            ForceMode::Scalar => arr.contacts[i].normal * self.values[i],
        }
    }
}

/// Gravito-inertial wrench `[f; τ]` of `obj` (torque about its centre of
/// mass) when rigidly attached to an end effector in state `e`.
pub fn gravito_inertial_wrench(e: &EEState, obj: &RigidObject, gravity: &Vector3<f64>) -> Vector6<f64> {
    let rot = spatial::m_cst::<f64>(&e.rotation);
    let vel: [f64; 6] = core::array::from_fn(|i| e.velocity[i]);
    let acc: [f64; 6] = core::array::from_fn(|i| e.acceleration[i]);
    Vector6::from(gi_wrench(&rot, &vel, &acc, obj, gravity))
}

/// Generic form of [`gravito_inertial_wrench`] on raw body-frame twists.
pub fn gi_wrench<T: Real>(
    rot: &M3<T>,
    vel: &[T; 6],
    acc: &[T; 6],
    obj: &RigidObject,
    gravity: &Vector3<f64>,
) -> [T; 6] {
    let g_body = spatial::mat_t_vec(rot, &spatial::v_cst(gravity));
    let a = [acc[0], acc[1], acc[2]];
    let w = [vel[3], vel[4], vel[5]];
    let al = [acc[3], acc[4], acc[5]];
    let c = spatial::v_cst::<T>(&obj.com);
    let wxc = spatial::cross(&w, &c);
    let lin = spatial::add(
        &spatial::sub(&a, &g_body),
        &spatial::add(&spatial::cross(&al, &c), &spatial::cross(&w, &wxc)),
    );
    let m = obj.mass;
    let inertia = spatial::m_cst::<T>(&obj.inertia);
    let jw = spatial::mat_vec(&inertia, &w);
    let tau = spatial::add(&spatial::mat_vec(&inertia, &al), &spatial::cross(&w, &jw));
    [
        lin[0].scale(-m),
        lin[1].scale(-m),
        lin[2].scale(-m),
        -tau[0],
        -tau[1],
        -tau[2],
    ]
}

/// Linear map from the stacked force variables to the contact wrench on
/// `obj` (6 × `vars_per_contact · N`). Torques are about the object's
/// centre of mass.
pub fn contact_wrench_matrix(arr: &Arrangement, obj: usize, mode: ForceMode) -> Result<DMatrix<f64>> {
    let o = arr.check_object(obj)?;
    let k = mode.vars_per_contact();
    let mut m = DMatrix::zeros(6, k * arr.num_contacts());
    for (i, sign) in arr.object_contacts(obj) {
        let c = &arr.contacts[i];
        let r = c.position - o.com;
        match mode {
            ForceMode::Full => {
                m.view_mut((0, 3 * i), (3, 3)).copy_from(&(Matrix3::identity() * sign));
                m.view_mut((3, 3 * i), (3, 3)).copy_from(&(spatial::skew(&r) * sign));
            }
            ForceMode::Scalar => {
                m.view_mut((0, i), (3, 1)).copy_from(&(c.normal * sign));
                m.view_mut((3, i), (3, 1)).copy_from(&(r.cross(&c.normal) * sign));
            }
        }
    }
    Ok(m)
}

/// Total contact wrench `Σ [f_j; r_j × f_j]` acting on `obj`.
pub fn contact_wrench(forces: &ContactForces, arr: &Arrangement, obj: usize) -> Result<Vector6<f64>> {
    let expected = forces.mode.vars_per_contact() * arr.num_contacts();
    if forces.values.len() != expected {
        return Err(Error::DimensionMismatch {
            what: "contact forces",
            expected,
            found: forces.values.len(),
        });
    }
    let m = contact_wrench_matrix(arr, obj, forces.mode)?;
    let w = m * &forces.values;
    Ok(Vector6::from_column_slice(w.as_slice()))
}

/// The 5×3 matrix `F` with `F f ≥ 0` ⇔ `f` inside the friction pyramid of
/// coefficient `mu`.
pub fn friction_pyramid_matrix(cp: &ContactPoint, mu: f64) -> SMatrix<f64, 5, 3> {
    let signs = SMatrix::<f64, 5, 3>::from_row_slice(&[
        1.0, 0.0, 0.0, //
        mu, -1.0, -1.0, //
        mu, -1.0, 1.0, //
        mu, 1.0, -1.0, //
        mu, 1.0, 1.0,
    ]);
    let mut frame = Matrix3::zeros();
    frame.set_row(0, &cp.normal.transpose());
    frame.set_row(1, &cp.tangent.column(0).transpose());
    frame.set_row(2, &cp.tangent.column(1).transpose());
    signs * frame
}

/// `F f` for the contact's own coefficient; all entries ≥ 0 ⇔ feasible.
pub fn friction_pyramid_residual(f: &Vector3<f64>, cp: &ContactPoint) -> SMatrix<f64, 5, 1> {
    friction_pyramid_matrix(cp, cp.mu) * f
}

/// `‖fᵗ‖₁ / (μ fⁿ)`; zero force gives zero, and an unloaded or frictionless
/// contact with tangential force gives infinity.
pub fn friction_utilization(f: &Vector3<f64>, cp: &ContactPoint) -> f64 {
    let fn_ = cp.normal.dot(f);
    let ft = (cp.tangent.transpose() * f).abs().sum();
    if ft == 0.0 {
        return 0.0;
    }
    let cap = cp.mu * fn_;
    if cap <= 0.0 {
        f64::INFINITY
    } else {
        ft / cap
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualScale {
    /// `w_C + w_GI` per object.
    Unscaled,
    /// `m⁻¹ (w_C + w_GI / √N)`: force variables are the physical forces
    /// divided by `√N`.
    Scaled,
}

/// Stacked Newton-Euler residual of every object (6 rows per object).
pub fn balance_residual(
    e: &EEState,
    forces: &ContactForces,
    arr: &Arrangement,
    scale: ResidualScale,
) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(6 * arr.objects.len());
    let sqrt_n = math::sqrt(arr.num_contacts() as f64);
    for (k, obj) in arr.objects.iter().enumerate() {
        let wc = contact_wrench(forces, arr, k)?;
        let wgi = gravito_inertial_wrench(e, obj, &arr.gravity);
        let r = match scale {
            ResidualScale::Unscaled => wc + wgi,
            ResidualScale::Scaled => (wc + wgi / sqrt_n) / obj.mass,
        };
        out.rows_mut(6 * k, 6).copy_from(&r);
    }
    Ok(out)
}

/// Planar support region of an object, end-effector frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportPlane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub basis: Matrix3x2<f64>,
    /// Convex support polygon in plane coordinates relative to `point`,
    /// counter-clockwise.
    pub polygon: Vec<Vector2<f64>>,
}

impl SupportPlane {
    /// Plane through the contacts at which any object of `objects` is
    /// supported by a body outside the set, with `point` at their centroid.
    pub fn for_objects(arr: &Arrangement, objects: &[usize]) -> Result<Self> {
        let outside = |b: Body| match b {
            Body::Tray => true,
            Body::Object(j) => !objects.contains(&j),
        };
        let cs: Vec<&ContactPoint> = arr
            .contacts
            .iter()
            .filter(|c| objects.contains(&c.supported) && outside(c.supporting))
            .collect();
        if cs.len() < 3 {
            return Err(Error::InvalidArrangement(
                "support needs at least three contacts".into(),
            ));
        }
        let point = cs.iter().map(|c| c.position).sum::<Vector3<f64>>() / cs.len() as f64;
        let normal = cs.iter().map(|c| c.normal).sum::<Vector3<f64>>().normalize();
        let basis = plane_basis(&normal);
        let mut polygon: Vec<Vector2<f64>> = cs.iter().map(|c| basis.transpose() * (c.position - point)).collect();
        polygon = convex_hull(polygon);
        Ok(Self {
            point,
            normal,
            basis,
            polygon,
        })
    }

    /// Signed distance from `p` (plane coordinates) to the polygon boundary,
    /// positive inside.
    pub fn margin(&self, p: &Vector2<f64>) -> f64 {
        let n = self.polygon.len();
        (0..n)
            .map(|k| {
                let a = self.polygon[k];
                let b = self.polygon[(k + 1) % n];
                let d = (b - a).normalize();
                let inward = Vector2::new(-d.y, d.x);
                inward.dot(&(p - a))
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn convex_hull(mut pts: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    pts.sort_by(|a, b| a.x.partial_cmp(&b.x).unwrap().then(a.y.partial_cmp(&b.y).unwrap()));
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| (a - o).perp(&(b - o));
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let floor = hull.len() + 1;
        let iter: alloc::boxed::Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            alloc::boxed::Box::new(pts.iter())
        } else {
            alloc::boxed::Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() > floor && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 1e-15 {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Zero-moment point of a contact wrench in the support plane.
///
/// `force` and `torque_about_origin` are the required contact force and its
/// moment about the end-effector origin.
pub fn zmp_from_wrench(
    force: &Vector3<f64>,
    torque_about_origin: &Vector3<f64>,
    plane: &SupportPlane,
) -> Option<Vector2<f64>> {
    let fn_ = plane.normal.dot(force);
    if !(fn_ > 0.0) {
        return None;
    }
    let s = &plane.basis;
    let tau0 = torque_about_origin - plane.point.cross(force);
    let rhs = s.transpose() * tau0;
    // Sᵀ[f]ₓS = [[0, -fn], [fn, 0]]
    Some(Vector2::new(-rhs.y / fn_, rhs.x / fn_))
}

/// Zero-moment point of a single object in `plane`, relative to the plane's
/// reference point.
pub fn zmp(
    e: &EEState,
    obj_id: usize,
    obj: &RigidObject,
    gravity: &Vector3<f64>,
    plane: &SupportPlane,
) -> Result<Vector2<f64>> {
    let w = gravito_inertial_wrench(e, obj, gravity);
    let f = -w.fixed_rows::<3>(0).into_owned();
    let tau = -w.fixed_rows::<3>(3).into_owned() + obj.com.cross(&f);
    zmp_from_wrench(&f, &tau, plane).ok_or(Error::ObjectUnloaded(obj_id))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    pub forces: Option<ContactForces>,
}

/// Decides whether contact forces exist that balance every object for the
/// end-effector state `e` (hard constraints, the arrangement's own μ).
///
/// In [`ForceMode::Full`] each force is `fⁿ n + t₁ s₁ + t₂ s₂` with
/// `fⁿ ≥ 0` and `|t₁| + |t₂| ≤ μ fⁿ`; in [`ForceMode::Scalar`] only `fⁿ ≥ 0`
/// is used.
pub fn feasibility_oracle(e: &EEState, arr: &Arrangement, mode: ForceMode) -> Result<Feasibility> {
    feasibility_with(e, arr, mode, None)
}

fn feasibility_with(
    e: &EEState,
    arr: &Arrangement,
    mode: ForceMode,
    skip_object: Option<usize>,
) -> Result<Feasibility> {
    let n = arr.num_contacts();
    let objs: Vec<usize> = (0..arr.objects.len()).filter(|&k| Some(k) != skip_object).collect();
    let per = match mode {
        ForceMode::Full => 6,
        ForceMode::Scalar => 1,
    };
    let friction_rows = if mode == ForceMode::Full { n } else { 0 };
    let rows = 6 * objs.len() + friction_rows;
    let mut a = DMatrix::zeros(rows, per * n);
    let mut b = DVector::zeros(rows);
    for (r, &k) in objs.iter().enumerate() {
        let obj = &arr.objects[k];
        let wgi = gravito_inertial_wrench(e, obj, &arr.gravity);
        b.rows_mut(6 * r, 6).copy_from(&(-wgi));
        for (i, sign) in arr.object_contacts(k) {
            let c = &arr.contacts[i];
            let lever = c.position - obj.com;
            let mut put = |col: usize, dir: Vector3<f64>| {
                let d = dir * sign;
                a.view_mut((6 * r, col), (3, 1)).copy_from(&d);
                a.view_mut((6 * r + 3, col), (3, 1)).copy_from(&lever.cross(&d));
            };
            match mode {
                ForceMode::Scalar => put(i, c.normal),
                ForceMode::Full => {
                    let s1 = c.tangent.column(0).into_owned();
                    let s2 = c.tangent.column(1).into_owned();
                    put(per * i, c.normal);
                    put(per * i + 1, s1);
                    put(per * i + 2, -s1);
                    put(per * i + 3, s2);
                    put(per * i + 4, -s2);
                }
            }
        }
    }
    if mode == ForceMode::Full {
        for (i, c) in arr.contacts.iter().enumerate() {
            let row = 6 * objs.len() + i;
            a[(row, per * i)] = -c.mu;
            for k in 1..5 {
                a[(row, per * i + k)] = 1.0;
            }
            a[(row, per * i + 5)] = 1.0;
        }
    }
    let Some(x) = lp::feasible_point(&a, &b)? else {
        return Ok(Feasibility {
            feasible: false,
            forces: None,
        });
    };
    let values = match mode {
        ForceMode::Scalar => x,
        ForceMode::Full => {
            let mut f = DVector::zeros(3 * n);
            for (i, c) in arr.contacts.iter().enumerate() {
                let s = &c.tangent;
                let v = c.normal * x[per * i]
                    + s.column(0) * (x[per * i + 1] - x[per * i + 2])
                    + s.column(1) * (x[per * i + 3] - x[per * i + 4]);
                f.rows_mut(3 * i, 3).copy_from(&v);
            }
            f
        }
    };
    Ok(Feasibility {
        feasible: true,
        forces: Some(ContactForces { mode, values }),
    })
}

/// Smallest common factor `s` such that the arrangement with every μ
/// multiplied by `s` balances at `e`; `∞` when no friction suffices (tipping
/// or separation). Resolution `1e-4`.
pub fn required_friction_scale(e: &EEState, arr: &Arrangement) -> Result<f64> {
    let feasible =
        |s: f64| -> Result<bool> { Ok(feasibility_oracle(e, &arr.with_mu_scaled(s), ForceMode::Full)?.feasible) };
    if feasible(0.0)? {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while !feasible(hi)? {
        hi *= 4.0;
        if hi > 1e3 {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = if hi > 1.0 { hi / 4.0 } else { 0.0 };
    while hi - lo > 1e-4 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DropMechanism {
    Slip,
    Tip,
    Separation,
}

/// For an infeasible state, names an object whose balance fails and how.
/// Returns `None` when the state is feasible.
pub fn diagnose_infeasibility(e: &EEState, arr: &Arrangement) -> Result<Option<(usize, DropMechanism)>> {
    if feasibility_oracle(e, arr, ForceMode::Full)?.feasible {
        return Ok(None);
    }
    let mut culprit = 0;
    if arr.objects.len() > 1 {
        for k in 0..arr.objects.len() {
            if feasibility_with(e, arr, ForceMode::Full, Some(k))?.feasible {
                culprit = k;
                break;
            }
        }
    }
    let obj = &arr.objects[culprit];
    let wgi = gravito_inertial_wrench(e, obj, &arr.gravity);
    let required = -wgi.fixed_rows::<3>(0).into_owned();
    let normals: Vector3<f64> = arr
        .contacts
        .iter()
        .filter(|c| c.supported == culprit)
        .map(|c| c.normal)
        .sum();
    if normals.norm() == 0.0 || required.dot(&normals) <= 0.0 {
        return Ok(Some((culprit, DropMechanism::Separation)));
    }
    let sticky = arr.with_mu_scaled(1e3);
    let mechanism = if feasibility_oracle(e, &sticky, ForceMode::Full)?.feasible {
        DropMechanism::Slip
    } else {
        DropMechanism::Tip
    };
    Ok(Some((culprit, mechanism)))
}

/// Four contacts at the corners of an axis-aligned rectangle in the plane
/// `z = height` of the end-effector frame, centred at `(cx, cy)`.
pub fn rectangle_patch(
    center: [f64; 2],
    half_extents: [f64; 2],
    height: f64,
    mu: f64,
    supporting: Body,
    supported: usize,
    patch: usize,
) -> Vec<ContactPoint> {
    let [cx, cy] = center;
    let [hx, hy] = half_extents;
    [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .map(|&(sx, sy)| {
            ContactPoint::new(
                Vector3::new(cx + sx * hx, cy + sy * hy, height),
                Vector3::z(),
                mu,
                supporting,
                supported,
                patch,
            )
        })
        .collect()
}
