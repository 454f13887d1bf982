//! Shared fixtures and independent reference computations for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use contactplan::detection::ResidualSample;
use contactplan::planner::ReferencePath;
use contactplan::robot::{JointFriction, JointSpec, LinkSpec, RobotModel, ResolvedRateConfig};
use contactplan::sim::{load_scenario, Scenario};
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use rand::Rng;

pub const FIXTURES: [&str; 5] = [
    "push_link4",
    "lateral_push",
    "vertical_push",
    "multi_contact",
    "free_motion",
];

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(format!("{name}.json"))
}

pub fn fixture(name: &str) -> Scenario {
    load_scenario(fixture_path(name)).unwrap()
}

pub fn arm7() -> RobotModel {
    RobotModel::load(fixture_path("arm7")).unwrap()
}

fn unit(rng: &mut impl Rng) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
}

pub fn random_direction(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = unit(rng);
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

/// Spatial chain with random axes, offsets and inertial parameters, no friction.
pub fn random_chain(n: usize, rng: &mut impl Rng) -> RobotModel {
    let mut joints = Vec::new();
    let mut links = Vec::new();
    let mut prev_tip = Vector3::zeros();
    for _ in 0..n {
        let axis = unit(rng).normalize();
        joints.push(JointSpec::from_xyz_rpy(axis, prev_tip, unit(rng)));
        let tip = 0.3 * unit(rng) + Vector3::new(0.1, 0.0, 0.0);
        let a = Matrix3::from_fn(|_, _| rng.random_range(-0.1..0.1));
        links.push(LinkSpec {
            mass: rng.random_range(0.5..3.0),
            com: 0.5 * tip + 0.02 * unit(rng),
            inertia: a * a.transpose() + Matrix3::identity() * 0.01,
            base: Vector3::zeros(),
            tip,
        });
        prev_tip = tip;
    }
    RobotModel::new(
        joints,
        links,
        vec![JointFriction::default(); n],
        Vector3::new(0.3, -1.2, -9.81),
    )
    .unwrap()
}

pub fn random_q(n: usize, scale: f64, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// World center of mass and orientation of every link, from the link poses only.
fn link_states(model: &RobotModel, q: &DVector<f64>) -> Vec<(Vector3<f64>, Rotation3<f64>)> {
    let frames = model.forward_kinematics(q).unwrap();
    model
        .links()
        .iter()
        .enumerate()
        .map(|(i, link)| {
            let pose = frames.link_poses[i];
            (
                pose.transform_point(&link.com.into()).coords,
                pose.rotation.to_rotation_matrix(),
            )
        })
        .collect()
}

/// Fourth-order derivative estimate: Richardson extrapolation of two central differences.
fn richardson<T>(f: impl Fn(f64) -> T, h: f64) -> T
where
    T: std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let central = |e: f64| (f(e) - f(-e)) * (0.5 / e);
    (central(h / 2.0) * 4.0 - central(h)) * (1.0 / 3.0)
}

fn shifted(q: &DVector<f64>, j: usize, e: f64) -> DVector<f64> {
    let mut q = q.clone();
    q[j] += e;
    q
}

/// Joint-space inertia from kinetic energy `½ Σ m‖v‖² + ωᵀ R I Rᵀ ω`, with every
/// link velocity Jacobian taken by finite differences of the poses.
pub fn energy_mass_matrix(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    let n = model.dof();
    let h = 1e-3;
    let states = link_states(model, q);
    let mut jv = vec![DMatrix::<f64>::zeros(3, n); n];
    let mut jw = vec![DMatrix::<f64>::zeros(3, n); n];
    for j in 0..n {
        for i in 0..n {
            let v = richardson(|e| link_states(model, &shifted(q, j, e))[i].0, h);
            // skew part of the relative rotation; acos-based angles lose digits here
            let w = richardson(
                |e| {
                    let d = (link_states(model, &shifted(q, j, e))[i].1 * states[i].1.inverse()).into_inner();
                    Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]) * 0.5
                },
                h,
            );
            jv[i].set_column(j, &v);
            jw[i].set_column(j, &w);
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for (i, link) in model.links().iter().enumerate() {
        let r = states[i].1.matrix();
        let inertia = r * link.inertia * r.transpose();
        let inertia = DMatrix::from_fn(3, 3, |a, b| inertia[(a, b)]);
        m += jv[i].transpose() * &jv[i] * link.mass + jw[i].transpose() * inertia * &jw[i];
    }
    m
}

fn potential(model: &RobotModel, q: &DVector<f64>) -> f64 {
    link_states(model, q)
        .iter()
        .zip(model.links())
        .map(|((c, _), link)| -link.mass * model.gravity().dot(c))
        .sum()
}

/// Euler–Lagrange torques `M q̈ + Σ (∂M_ij/∂q_k − ½∂M_jk/∂q_i) q̇_j q̇_k + ∂V/∂q`.
pub fn lagrangian_torque(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
) -> DVector<f64> {
    let n = model.dof();
    let h = 1e-2;
    let dm: Vec<DMatrix<f64>> = (0..n)
        .map(|k| richardson(|e| energy_mass_matrix(model, &shifted(q, k, e)), h))
        .collect();
    let dv: Vec<f64> = (0..n)
        .map(|k| richardson(|e| potential(model, &shifted(q, k, e)), h))
        .collect();
    let mut tau = energy_mass_matrix(model, q) * qdd;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                tau[i] += (dm[k][(i, j)] - 0.5 * dm[i][(j, k)]) * qd[j] * qd[k];
            }
        }
        tau[i] += dv[i];
    }
    tau
}

/// Directional derivative of the contact point, Richardson-extrapolated central differences.
pub fn contact_point_derivative(
    model: &RobotModel,
    q: &DVector<f64>,
    link: usize,
    s: f64,
    dq: &DVector<f64>,
) -> Vector3<f64> {
    let point = |e: f64| {
        model
            .forward_kinematics(&(q + dq * e))
            .unwrap()
            .contact_point(link, s)
            .unwrap()
    };
    let central = |e: f64| (point(e) - point(-e)) / (2.0 * e);
    let e = 1e-3;
    (central(e / 2.0) * 4.0 - central(e)) / 3.0
}

/// Joint trajectory that follows `path` from `q0` at `speed` m/s, one entry per tick.
pub fn configurations_along(
    model: &RobotModel,
    path: &ReferencePath,
    q0: &DVector<f64>,
    speed: f64,
    sample_rate: f64,
) -> Vec<DVector<f64>> {
    let dt = 1.0 / sample_rate;
    let length = path.length();
    let tracking = ResolvedRateConfig::default();
    let mut q = q0.clone();
    let mut s = 0.0;
    let mut out = vec![q.clone()];
    while s < 1.0 {
        let tangent = path.tangent(s);
        let ff = tangent * (speed / length);
        q = model
            .track_point(&q, &path.position(s), &ff, &tracking, dt)
            .unwrap();
        out.push(q.clone());
        s += speed * dt / length;
    }
    out
}

/// Window of exact residuals from a force held on `link` while the arm moves through `qs`.
pub fn contact_window(
    model: &RobotModel,
    qs: &[DVector<f64>],
    link: usize,
    s: f64,
    force: &Vector3<f64>,
    sample_rate: f64,
) -> Vec<ResidualSample> {
    qs.iter()
        .enumerate()
        .map(|(k, q)| {
            let tau = model.external_torque_from_force(q, link, s, force).unwrap();
            ResidualSample::new(k as f64 / sample_rate, q.clone(), tau)
        })
        .collect()
}

/// Stacked `J_kᵀ` blocks at arc length `s`.
pub fn stacked_transpose(model: &RobotModel, samples: &[ResidualSample], link: usize, s: f64) -> DMatrix<f64> {
    let n = model.dof();
    let mut rows = DMatrix::zeros(n * samples.len(), 3);
    for (k, sample) in samples.iter().enumerate() {
        let jac = model.point_jacobian(&sample.q, link, s).unwrap();
        rows.view_mut((n * k, 0), (n, 3)).copy_from(&jac.transpose());
    }
    rows
}

pub fn stacked_residual(samples: &[ResidualSample]) -> DVector<f64> {
    DVector::from_iterator(
        samples.iter().map(|s| s.tau_hat.len()).sum(),
        samples.iter().flat_map(|s| s.tau_hat.iter().copied()),
    )
}

/// Ridge solution from the augmented system `[A; λI] F ≈ [b; 0]` by SVD, then the
/// magnitude bound applied by rescaling.
pub fn ridge_by_svd(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64, f_max: f64) -> Vector3<f64> {
    let m = a.nrows();
    let mut aug = DMatrix::zeros(m + 3, 3);
    aug.view_mut((0, 0), (m, 3)).copy_from(a);
    aug.view_mut((m, 0), (3, 3))
        .copy_from(&(DMatrix::<f64>::identity(3, 3) * lambda));
    let mut rhs = DVector::zeros(m + 3);
    rhs.rows_mut(0, m).copy_from(b);
    let x = aug.svd(true, true).solve(&rhs, 1e-14).unwrap();
    let f = Vector3::new(x[0], x[1], x[2]);
    if f.norm() > f_max {
        f * (f_max / f.norm())
    } else {
        f
    }
}

pub fn half_misfit(a: &DMatrix<f64>, b: &DVector<f64>, f: &Vector3<f64>) -> f64 {
    let f = DVector::from_column_slice(f.as_slice());
    0.5 * (b - a * f).norm_squared()
}

/// Dense grid over a box followed by a shrinking compass search.
pub fn dense_minimize(cost: impl Fn(&Vector3<f64>) -> f64, radius: f64) -> Vector3<f64> {
    let steps = 24;
    let mut best = Vector3::zeros();
    let mut best_cost = cost(&best);
    for i in 0..=steps {
        for j in 0..=steps {
            for k in 0..=steps {
                let x = Vector3::new(i as f64, j as f64, k as f64) * (2.0 * radius / steps as f64)
                    - Vector3::repeat(radius);
                let c = cost(&x);
                if c < best_cost {
                    best = x;
                    best_cost = c;
                }
            }
        }
    }
    let mut directions = Vec::new();
    for a in -1i32..=1 {
        for b in -1i32..=1 {
            for c in -1i32..=1 {
                if (a, b, c) != (0, 0, 0) {
                    directions.push(Vector3::new(a as f64, b as f64, c as f64).normalize());
                }
            }
        }
    }
    let mut step = radius / steps as f64;
    while step > radius * 1e-13 {
        let mut moved = false;
        for d in &directions {
            let x = best + d * step;
            let c = cost(&x);
            if c < best_cost {
                best = x;
                best_cost = c;
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best
}
