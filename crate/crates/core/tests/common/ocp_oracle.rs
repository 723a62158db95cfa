//! Fixtures and finite-difference checks for the trajectory problem.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waiter_core::balance::{rectangle_patch, Arrangement, Body, ContactPoint, ForceMode, RigidObject};
use waiter_core::kinematics::{KinematicChain, RobotState, REFERENCE_HOME_Q};
use waiter_core::ocp::*;

pub fn home() -> RobotState {
    RobotState::at_rest(DVector::from_column_slice(&REFERENCE_HOME_Q))
}

pub fn box_arrangement(mu: f64) -> Arrangement {
    let obj = RigidObject::uniform_box("box", 0.5, Vector3::new(0.0, 0.0, 0.1), [0.06, 0.06, 0.2]);
    let contacts = rectangle_patch([0.0, 0.0], [0.03, 0.03], 0.0, mu, Body::Tray, 0, 0);
    Arrangement::new(vec![obj], contacts).unwrap()
}

/// A box on a 15 degree wedge.
pub fn wedge_arrangement() -> Arrangement {
    let phi = 15f64.to_radians();
    let n = Vector3::new(-phi.sin(), 0.0, phi.cos());
    let u = Vector3::new(phi.cos(), 0.0, phi.sin());
    let top = Vector3::new(0.0, 0.0, 0.02 + 0.1 * phi.tan());
    let wedge = RigidObject::uniform_box("wedge", 1.0, Vector3::new(0.02, 0.0, 0.02), [0.2, 0.2, 0.04]);
    let boxed = RigidObject::uniform_box("box", 0.5, top + n * 0.05, [0.1; 3]);
    let mut contacts = rectangle_patch([0.0, 0.0], [0.1, 0.1], 0.0, 0.2, Body::Tray, 0, 0);
    for &(s, t) in &[(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
        let r = top + u * (0.04 * s) + Vector3::y() * (0.04 * t);
        contacts.push(ContactPoint::new(r, n, 0.2, Body::Object(0), 1, 1));
    }
    Arrangement::new(vec![wedge, boxed], contacts).unwrap()
}

pub fn scene(chain: &KinematicChain) -> SceneModel {
    let sphere = |name: &str, frame: &str, z: f64, radius: f64| RobotSphere {
        name: name.into(),
        frame: chain.frame_index(frame).unwrap(),
        offset: Vector3::new(0.0, 0.0, z),
        radius,
    };
    SceneModel {
        obstacles: vec![
            Sphere {
                center: Vector3::new(0.3, 1.0, 0.8),
                radius: 0.15,
            },
            Sphere {
                center: Vector3::new(-1.5, -0.2, 0.3),
                radius: 0.3,
            },
        ],
        robot_spheres: vec![
            sphere("tray", "ee", 0.1, 0.2),
            sphere("forearm", "wrist_1", 0.0, 0.15),
            sphere("base", "base_yaw", 0.25, 0.55),
        ],
        tube_anchor: Some(0),
        tube: None,
    }
}

pub fn full_constraints(arr: &Arrangement) -> BalanceConstraints {
    build_constraints(ConstraintMode::Full, arr, None, &ConstraintOptions::default()).unwrap()
}

pub fn scalar_constraints(arr: &Arrangement) -> BalanceConstraints {
    BalanceConstraints {
        mode: ConstraintMode::Robust,
        arrangement: Some(arr.with_mu(&vec![0.0; arr.num_contacts()]).unwrap()),
        force_mode: ForceMode::Scalar,
    }
}

pub fn sample_policy(rng: &mut ChaCha8Rng) -> Policy {
    let intervals = 4;
    Policy {
        stamp: 1.3,
        dt: 0.1,
        x: (0..=intervals)
            .map(|_| DVector::from_fn(27, |_, _| rng.random_range(-1.0..1.0)))
            .collect(),
        feedforward: (0..intervals)
            .map(|_| DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0)))
            .collect(),
        gains: (0..intervals)
            .map(|_| DMatrix::from_fn(9, 27, |_, _| rng.random_range(-5.0..5.0)))
            .collect(),
    }
}

/// Central-difference Jacobian of the node constraints.
pub fn fd_jacobian(
    problem: &Problem<'_>,
    k: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
    xi: &DVector<f64>,
) -> DMatrix<f64> {
    let (nx, nu, nf) = (x.len(), u.len(), xi.len());
    let eval = |z: &DVector<f64>| {
        let xx = z.rows(0, nx).into_owned();
        let uu = z.rows(nx, nu).into_owned();
        let ff = z.rows(nx + nu, nf).into_owned();
        problem.node_constraints(k, &xx, Some(&uu), &ff).unwrap().0
    };
    let mut z = DVector::zeros(nx + nu + nf);
    z.rows_mut(0, nx).copy_from(x);
    z.rows_mut(nx, nu).copy_from(u);
    z.rows_mut(nx + nu, nf).copy_from(xi);
    let m = eval(&z).len();
    let mut jac = DMatrix::zeros(m, z.len());
    let h = 1e-6;
    for i in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[i] += h;
        zm[i] -= h;
        jac.set_column(i, &((eval(&zp) - eval(&zm)) / (2.0 * h)));
    }
    jac
}

/// Largest row-wise relative error of `jac` against finite differences.
pub fn jacobian_error(problem: &Problem<'_>, k: usize, x: &DVector<f64>, u: &DVector<f64>, xi: &DVector<f64>) -> f64 {
    let (_, jac) = problem.node_constraints(k, x, Some(u), xi).unwrap();
    let fd = fd_jacobian(problem, k, x, u, xi);
    let mut worst = 0.0f64;
    for r in 0..jac.nrows() {
        let scale = jac.row(r).amax().max(1.0);
        worst = worst.max((jac.row(r) - fd.row(r)).amax() / scale);
    }
    worst
}

/// Largest row-wise relative Jacobian error over `cases` random states,
/// cycling through the constraint modes and both force parameterizations.
pub fn max_jacobian_error(seed: u64, cases: usize) -> f64 {
    let chain = KinematicChain::reference();
    let ocp = OcpDefinition::default();
    let box_arr = box_arrangement(0.2);
    let wedge = wedge_arrangement();
    let sets = [
        BalanceConstraints::none(),
        BalanceConstraints {
            mode: ConstraintMode::Upward,
            arrangement: None,
            force_mode: ForceMode::Full,
        },
        full_constraints(&box_arr),
        full_constraints(&wedge),
        scalar_constraints(&box_arr),
    ];
    let base_scene = scene(&chain);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let constraints = &sets[case % sets.len()];
        let q = DVector::from_fn(9, |i, _| REFERENCE_HOME_Q[i] + rng.random_range(-0.5..0.5));
        let v = DVector::from_fn(9, |_, _| rng.random_range(-0.5..0.5));
        let a = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0));
        let x = RobotState::new(q, v, a).unwrap();
        let anchor = robot_sphere_centers(&chain, &x.q, &base_scene).unwrap()[0];
        let ball = BallPrediction {
            position: anchor + Vector3::new(3.0, rng.random_range(-0.3..0.3), rng.random_range(0.2..0.6)),
            velocity: Vector3::new(-5.0, 0.0, 2.0),
            radius: 0.11,
            gravity: Vector3::new(0.0, 0.0, -9.81),
        };
        let sc = augment_dynamic_obstacle(&base_scene, &ocp, &ball);
        let problem = Problem::new(&ocp, &chain, constraints, &sc).unwrap();
        let k = 1 + case % 3;
        let u = DVector::from_fn(9, |_, _| rng.random_range(-1.0..1.0));
        let xi = DVector::from_fn(constraints.force_variables(), |_, _| rng.random_range(-2.0..2.0));
        worst = worst.max(jacobian_error(&problem, k, &x.to_vector(), &u, &xi));
    }
    worst
}

/// Whether the policy returns exactly the feedforward at every node state.
pub fn policy_is_exact_at_nodes(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = sample_policy(&mut rng);
    (0..p.feedforward.len()).all(|j| {
        let t = p.stamp + j as f64 * p.dt;
        let x = RobotState::from_vector(&p.x[j]).unwrap();
        policy_input(&p, t, &x).unwrap().0 == p.feedforward[j]
    })
}
