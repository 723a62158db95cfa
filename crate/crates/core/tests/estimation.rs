#[path = "common/estimation_oracle.rs"]
mod estimation_oracle;

use estimation_oracle::*;
use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use waiter_core::estimation::{predict_ball_tube, BallFilter, KalmanFilter, RobotFilter};
use waiter_core::kinematics::{integrate_state, JerkInput};

#[test]
fn noiseless_robot_tracking() {
    let err = robot_tracking_error(3, 100);
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn robot_filter_recovers_from_a_wrong_start() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth0 = random_state(&mut rng);
    let mut guess = truth0.clone();
    guess.v.add_scalar_mut(0.2);
    guess.vdot.add_scalar_mut(-0.3);
    let mut kf = RobotFilter::new(&guess);
    let initial = (guess.to_vector() - truth0.to_vector()).amax();
    let mut truth = truth0;
    for _ in 0..500 {
        let u = JerkInput(DVector::zeros(9));
        truth = integrate_state(&truth, &u, RobotFilter::DT).unwrap();
        kf.predict(&u).unwrap();
        kf.update(&truth.q).unwrap();
    }
    let err = (kf.state().to_vector() - truth.to_vector()).amax();
    assert!(err < 1e-2 * initial, "{err:e}");
}

#[test]
fn ball_prediction_after_ten_updates() {
    let err = ball_prediction_error(Vector3::new(3.0, 0.2, 1.3), Vector3::new(-5.0, 0.1, 2.0), 10, 0.5);
    assert!(err <= 1e-3, "{err:e}");
}

#[test]
fn ball_filter_waits_for_activation_height() {
    let mut bf = BallFilter::new(gravity());
    assert!(!bf.observe(0.0, &Vector3::new(1.0, 0.0, 0.5)).unwrap());
    assert!(!bf.is_active());
    assert!(bf.observe(0.01, &Vector3::new(1.0, 0.0, 1.2)).unwrap());
    assert!(!bf.is_active());
    assert!(bf.observe(0.02, &Vector3::new(0.95, 0.0, 1.25)).unwrap());
    assert!(bf.is_active());
    assert!(bf.observe(0.03, &Vector3::new(f64::NAN, 0.0, 1.0)).is_err());
}

#[test]
fn tube_samples_are_closed_form() {
    let est = waiter_core::estimation::BallState {
        position: Vector3::new(1.0, 2.0, 3.0),
        velocity: Vector3::new(0.5, 0.0, 1.0),
        covariance: DMatrix::identity(6, 6),
    };
    let tube = predict_ball_tube(&est, &gravity(), 1.0, 0.25).unwrap();
    assert_eq!(tube.len(), 5);
    assert!((tube[4] - Vector3::new(1.5, 2.0, 3.0 + 1.0 - 4.905)).norm() < 1e-12);
    assert!(predict_ball_tube(&est, &gravity(), 1.0, 0.0).is_err());
}

fn scalar_filter(p0: f64, q: f64, r: f64) -> KalmanFilter {
    KalmanFilter {
        a: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
        b: DMatrix::from_row_slice(2, 1, &[0.005, 0.1]),
        c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        process_cov: DMatrix::from_row_slice(2, 2, &[q * 2.5e-5, q * 5e-4, q * 5e-4, q * 1e-2]),
        measurement_cov: DMatrix::from_element(1, 1, r),
        mean: DVector::zeros(2),
        cov: DMatrix::identity(2, 2) * p0,
    }
}

proptest! {
    #[test]
    fn covariance_stays_symmetric_positive(
        p0 in 1e-3f64..10.0,
        q in 1e-3f64..100.0,
        r in 1e-6f64..1.0,
        ys in prop::collection::vec(-5.0f64..5.0, 1..40),
    ) {
        let mut kf = scalar_filter(p0, q, r);
        for y in ys {
            kf.predict(&DVector::from_element(1, 0.3)).unwrap();
            let predicted = kf.cov.trace();
            kf.update(&DVector::from_element(1, y)).unwrap();
            prop_assert!((&kf.cov - kf.cov.transpose()).amax() == 0.0);
            let eig = kf.cov.clone().symmetric_eigen().eigenvalues;
            prop_assert!(eig.iter().all(|&l| l > 0.0), "{eig:?}");
            // a measurement never increases the uncertainty
            prop_assert!(kf.cov.trace() <= predicted + 1e-12);
        }
    }

    #[test]
    fn update_at_the_mean_keeps_the_mean(p0 in 1e-3f64..10.0, m in -3.0f64..3.0) {
        let mut kf = scalar_filter(p0, 1.0, 0.01);
        kf.mean[0] = m;
        kf.update(&DVector::from_element(1, m)).unwrap();
        prop_assert!((kf.mean[0] - m).abs() < 1e-12 && kf.mean[1].abs() < 1e-12);
    }
}
