//! Noiseless synthetic runs of the robot and ball filters.
#![allow(dead_code)]

use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waiter_core::estimation::{predict_ball_tube, BallFilter, RobotFilter};
use waiter_core::kinematics::{integrate_state, JerkInput, RobotState};

pub fn gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -9.81)
}

pub fn random_state(rng: &mut ChaCha8Rng) -> RobotState {
    let mut v = |s: f64| DVector::from_fn(9, |_, _| rng.random_range(-s..s));
    RobotState::new(v(1.0), v(0.5), v(0.5)).unwrap()
}

/// State error of the robot filter after `steps` exact position
/// measurements under random jerk inputs.
pub fn robot_tracking_error(seed: u64, steps: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = random_state(&mut rng);
    let mut truth = x0.clone();
    let mut kf = RobotFilter::new(&x0);
    for _ in 0..steps {
        let u = JerkInput(DVector::from_fn(9, |_, _| rng.random_range(-2.0..2.0)));
        truth = integrate_state(&truth, &u, RobotFilter::DT).unwrap();
        kf.predict(&u).unwrap();
        kf.update(&truth.q).unwrap();
    }
    (kf.state().to_vector() - truth.to_vector()).amax()
}

/// Error of the ball position predicted `horizon` ahead after `updates`
/// exact measurements of a ballistic throw.
pub fn ball_prediction_error(p0: Vector3<f64>, v0: Vector3<f64>, updates: usize, horizon: f64) -> f64 {
    let g = gravity();
    let at = |t: f64| p0 + v0 * t + g * (0.5 * t * t);
    let mut bf = BallFilter::new(g);
    let mut t = 0.0;
    let mut done = 0;
    loop {
        if bf.is_active() {
            bf.predict().unwrap();
            bf.observe(t, &at(t)).unwrap();
            done += 1;
        } else {
            bf.observe(t, &at(t)).unwrap();
        }
        if done == updates {
            break;
        }
        t += BallFilter::DT;
    }
    let est = bf.estimate().unwrap();
    let tube = predict_ball_tube(&est, &g, horizon, 0.01).unwrap();
    (tube.last().unwrap() - at(t + horizon)).norm()
}
