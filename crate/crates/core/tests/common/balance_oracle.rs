//! Frictionless random arrangements and a dense minimum-norm force oracle.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Rotation3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waiter_core::balance::*;
use waiter_core::kinematics::EEState;
use waiter_core::qp::{solve_dense, QpSettings};

/// One to three boxes, each either on the tray or stacked on the previous
/// one, with frictionless square patches.
pub fn random_arrangement(rng: &mut ChaCha8Rng) -> Arrangement {
    let n = rng.random_range(1..4);
    let mut objects = Vec::new();
    let mut contacts = Vec::new();
    let mut base = 0.0;
    let mut x = rng.random_range(-0.15..0.15);
    for k in 0..n {
        let (w, h) = (rng.random_range(0.04..0.12), rng.random_range(0.05..0.25));
        let stacked = k > 0 && rng.random_bool(0.5);
        if !stacked {
            base = 0.0;
            x = rng.random_range(-0.15..0.15);
        }
        let com = Vector3::new(x, 0.0, base + rng.random_range(0.3..0.7) * h);
        objects.push(RigidObject::uniform_box(
            &format!("o{k}"),
            rng.random_range(0.1..1.5),
            com,
            [w, w, h],
        ));
        let supporting = if stacked { Body::Object(k - 1) } else { Body::Tray };
        contacts.extend(rectangle_patch(
            [x, 0.0],
            [0.45 * w, 0.45 * w],
            base,
            0.0,
            supporting,
            k,
            k,
        ));
        base += h;
    }
    Arrangement::new(objects, contacts).unwrap()
}

/// Mostly static or gently moving states so both outcomes occur.
pub fn random_state(rng: &mut ChaCha8Rng) -> EEState {
    let tilt = if rng.random_bool(0.4) {
        0.0
    } else {
        rng.random_range(-0.4..0.4)
    };
    let rotation = Rotation3::from_euler_angles(tilt, rng.random_range(-0.2..0.2) * tilt, 0.0).into_inner();
    let mut e = EEState::at_rest(rotation, Vector3::zeros());
    if rng.random_bool(0.5) {
        e.acceleration = Vector6::from_fn(|i, _| {
            if i == 2 {
                rng.random_range(-3.0..3.0)
            } else {
                rng.random_range(-0.5..0.5)
            }
        });
        e.velocity = Vector6::from_fn(|_, _| rng.random_range(-0.3..0.3));
    }
    e
}

/// Row-reduced equality constraints `A z = b`; `None` if inconsistent.
pub fn reduce(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let svd = a.clone().svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let tol = 1e-10 * svd.singular_values.max().max(1.0);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > tol)
        .collect();
    let mut ar = DMatrix::zeros(keep.len(), a.ncols());
    let mut br = DVector::zeros(keep.len());
    // least-squares solution from the factors; nalgebra's pseudo-inverse is
    // unreliable on wide matrices
    let mut z = DVector::zeros(a.ncols());
    for (r, &i) in keep.iter().enumerate() {
        ar.set_row(r, &(vt.row(i) * svd.singular_values[i]));
        br[r] = u.column(i).dot(b);
        z += vt.row(i).transpose() * (br[r] / svd.singular_values[i]);
    }
    ((a * z - b).amax() <= 1e-8 * (1.0 + b.amax())).then_some((ar, br))
}

/// `min ½‖f‖²` over balancing contact forces in the given parameterization.
pub fn min_norm_cost(e: &EEState, arr: &Arrangement, mode: ForceMode) -> f64 {
    let nv = mode.vars_per_contact() * arr.num_contacts();
    let mut a = DMatrix::zeros(6 * arr.objects.len(), nv);
    let mut b = DVector::zeros(6 * arr.objects.len());
    for (k, obj) in arr.objects.iter().enumerate() {
        a.view_mut((6 * k, 0), (6, nv))
            .copy_from(&contact_wrench_matrix(arr, k, mode).unwrap());
        b.rows_mut(6 * k, 6)
            .copy_from(&(-gravito_inertial_wrench(e, obj, &arr.gravity)));
    }
    let (ar, br) = reduce(&a, &b).expect("feasible instance has consistent equations");
    let c = match mode {
        ForceMode::Scalar => DMatrix::identity(nv, nv),
        ForceMode::Full => {
            let mut c = DMatrix::zeros(5 * arr.num_contacts(), nv);
            for (i, cp) in arr.contacts.iter().enumerate() {
                c.view_mut((5 * i, 3 * i), (5, 3))
                    .copy_from(&friction_pyramid_matrix(cp, cp.mu));
            }
            c
        }
    };
    let settings = QpSettings {
        max_iterations: 200,
        tolerance: 1e-10,
    };
    let d = DVector::zeros(c.nrows());
    let sol = solve_dense(
        &DMatrix::identity(nv, nv),
        &DVector::zeros(nv),
        &ar,
        &br,
        &c,
        &d,
        &settings,
    )
    .unwrap();
    0.5 * sol.z.norm_squared()
}

pub struct Agreement {
    pub cases: usize,
    pub feasible: usize,
    /// Cases whose feasibility decision differs between the two
    /// parameterizations.
    pub mismatches: usize,
    /// Largest cost difference relative to `1 + cost`.
    pub cost_gap: f64,
}

/// Feasibility and minimum-norm cost of full and scalar contact forces on
/// frictionless random instances.
pub fn scalar_vector_agreement(seed: u64, cases: usize) -> Agreement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Agreement {
        cases,
        feasible: 0,
        mismatches: 0,
        cost_gap: 0.0,
    };
    for _ in 0..cases {
        let arr = random_arrangement(&mut rng);
        let e = random_state(&mut rng);
        let full = feasibility_oracle(&e, &arr, ForceMode::Full).unwrap().feasible;
        let scalar = feasibility_oracle(&e, &arr, ForceMode::Scalar).unwrap().feasible;
        if full != scalar {
            out.mismatches += 1;
        } else if full {
            out.feasible += 1;
            let (cf, cs) = (
                min_norm_cost(&e, &arr, ForceMode::Full),
                min_norm_cost(&e, &arr, ForceMode::Scalar),
            );
            out.cost_gap = out.cost_gap.max((cf - cs).abs() / (1.0 + cs));
        }
    }
    out
}
