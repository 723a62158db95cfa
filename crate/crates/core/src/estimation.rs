//! Linear Kalman filters for the robot state and for a thrown ball.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::{discrete_model, JerkInput, RobotState};

/// Discrete linear model `x⁺ = A x + B u`, `y = C x` with Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanFilter {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub process_cov: DMatrix<f64>,
    pub measurement_cov: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl KalmanFilter {
    pub fn predict(&mut self, input: &DVector<f64>) -> Result<()> {
        if input.len() != self.b.ncols() {
            return Err(Error::DimensionMismatch {
                what: "filter input",
                expected: self.b.ncols(),
                found: input.len(),
            });
        }
        self.mean = &self.a * &self.mean + &self.b * input;
        let p = &self.a * &self.cov * self.a.transpose() + &self.process_cov;
        self.cov = 0.5 * (&p + p.transpose());
        Ok(())
    }

    /// Innovation update with the Joseph-form covariance. A non-finite
    /// measurement is rejected and leaves the filter unchanged.
    pub fn update(&mut self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.c.nrows() {
            return Err(Error::DimensionMismatch {
                what: "measurement",
                expected: self.c.nrows(),
                found: y.len(),
            });
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("measurement"));
        }
        let pct = &self.cov * self.c.transpose();
        let s = &self.c * &pct + &self.measurement_cov;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("innovation covariance is not positive definite".into()))?;
        let gain = chol.solve(&pct.transpose()).transpose();
        self.mean += &gain * (y - &self.c * &self.mean);
        let n = self.mean.len();
        let ikc = DMatrix::identity(n, n) - &gain * &self.c;
        let p = &ikc * &self.cov * ikc.transpose() + &gain * &self.measurement_cov * gain.transpose();
        self.cov = 0.5 * (&p + p.transpose());
        Ok(())
    }
}

/// Robot filter on the triple-integrator model, measuring `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotFilter {
    pub filter: KalmanFilter,
    pub dt: f64,
}

impl RobotFilter {
    pub const DT: f64 = 0.008;

    /// Filter with the reference noise settings: `Q̄ = B̄ (10 I) B̄ᵀ`,
    /// `R̄ = 0.001 I`, `P₀ = 0.1 I`.
    pub fn new(initial: &RobotState) -> Self {
        Self::with_settings(initial, Self::DT, 10.0, 0.001, 0.1)
    }

    pub fn with_settings(initial: &RobotState, dt: f64, jerk_var: f64, meas_var: f64, init_var: f64) -> Self {
        let n = initial.dof();
        let (a, b) = discrete_model(n, dt);
        let mut c = DMatrix::zeros(n, 3 * n);
        c.view_mut((0, 0), (n, n)).fill_with_identity();
        let process_cov = &b * (jerk_var * b.transpose());
        Self {
            filter: KalmanFilter {
                a,
                b,
                c,
                process_cov,
                measurement_cov: DMatrix::identity(n, n) * meas_var,
                mean: initial.to_vector(),
                cov: DMatrix::identity(3 * n, 3 * n) * init_var,
            },
            dt,
        }
    }

    pub fn predict(&mut self, u: &JerkInput) -> Result<()> {
        self.filter.predict(&u.0)
    }

    pub fn update(&mut self, q: &DVector<f64>) -> Result<()> {
        self.filter.update(q)
    }

    pub fn state(&self) -> RobotState {
        RobotState::from_vector(&self.filter.mean).expect("filter state has 3·dof entries")
    }
}

/// Position and velocity estimate of the ball.
#[derive(Clone, Debug, PartialEq)]
pub struct BallState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub covariance: DMatrix<f64>,
}

/// Projectile filter. It stays inactive until the ball is first seen above
/// the activation height; the second such sample initializes the mean.
#[derive(Clone, Debug, PartialEq)]
pub struct BallFilter {
    pub gravity: Vector3<f64>,
    pub dt: f64,
    pub activation_height: f64,
    pub accel_var: f64,
    pub meas_var: f64,
    pub init_var: f64,
    first: Option<(f64, Vector3<f64>)>,
    filter: Option<KalmanFilter>,
}

impl BallFilter {
    pub const DT: f64 = 0.01;

    pub fn new(gravity: Vector3<f64>) -> Self {
        Self {
            gravity,
            dt: Self::DT,
            activation_height: 1.0,
            accel_var: 1000.0,
            meas_var: 0.001,
            init_var: 1.0,
            first: None,
            filter: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.filter.is_some()
    }

    /// `(Ā_b, B̄_b)` for the configured step.
    pub fn model(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let dt = self.dt;
        let mut a = DMatrix::identity(6, 6);
        let mut b = DMatrix::zeros(6, 3);
        for i in 0..3 {
            a[(i, 3 + i)] = dt;
            b[(i, i)] = 0.5 * dt * dt;
            b[(3 + i, i)] = dt;
        }
        (a, b)
    }

    /// Advances an active filter by one step; no-op otherwise.
    pub fn predict(&mut self) -> Result<()> {
        let g = DVector::from_column_slice(self.gravity.as_slice());
        match &mut self.filter {
            Some(f) => f.predict(&g),
            None => Ok(()),
        }
    }

    /// Feeds a position measurement taken at time `t`. Returns whether the
    /// measurement was used.
    pub fn observe(&mut self, t: f64, r: &Vector3<f64>) -> Result<bool> {
        if !r.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("ball measurement"));
        }
        if let Some(f) = &mut self.filter {
            f.update(&DVector::from_column_slice(r.as_slice()))?;
            return Ok(true);
        }
        if r.z <= self.activation_height {
            return Ok(false);
        }
        match self.first {
            None => {
                self.first = Some((t, *r));
            }
            Some((t0, r0)) => {
                let h = t - t0;
                if !(h > 0.0) {
                    return Ok(false);
                }
                // finite difference is the mid-interval velocity under gravity
                let v = (r - r0) / h + self.gravity * (0.5 * h);
                let (a, b) = self.model();
                let process_cov = &b * (self.accel_var * b.transpose());
                let mut mean = DVector::zeros(6);
                mean.rows_mut(0, 3).copy_from(r);
                mean.rows_mut(3, 3).copy_from(&v);
                let mut c = DMatrix::zeros(3, 6);
                c.view_mut((0, 0), (3, 3)).fill_with_identity();
                self.filter = Some(KalmanFilter {
                    a,
                    b,
                    c,
                    process_cov,
                    measurement_cov: DMatrix::identity(3, 3) * self.meas_var,
                    mean,
                    cov: DMatrix::identity(6, 6) * self.init_var,
                });
            }
        }
        Ok(true)
    }

    pub fn estimate(&self) -> Option<BallState> {
        self.filter.as_ref().map(|f| BallState {
            position: Vector3::new(f.mean[0], f.mean[1], f.mean[2]),
            velocity: Vector3::new(f.mean[3], f.mean[4], f.mean[5]),
            covariance: f.cov.clone(),
        })
    }
}

/// Closed-form ballistic samples `r + ṙ t + ½ g t²` at `t = 0, step, …,
/// horizon`.
pub fn predict_ball_tube(
    ball: &BallState,
    gravity: &Vector3<f64>,
    horizon: f64,
    step: f64,
) -> Result<Vec<Vector3<f64>>> {
    if !(step > 0.0 && horizon >= 0.0) {
        return Err(Error::InvalidArgument("tube sampling needs a positive step".into()));
    }
    let n = libm::floor(horizon / step + 1e-9) as usize;
    Ok((0..=n)
        .map(|i| {
            let t = i as f64 * step;
            ball.position + ball.velocity * t + gravity * (0.5 * t * t)
        })
        .collect())
}
