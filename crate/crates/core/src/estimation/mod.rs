//! Contact location and force on an identified link.
//!
//! For a fixed arc length `s` the force enters the torque residual linearly,
//! so it is eliminated by a damped least-squares solve over the whole window.
//! What remains is a one-dimensional cost in `s`, scanned on a uniform grid and
//! refined with Brent's method around the best grid point.

mod brent;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};

use crate::detection::ResidualSample;
use crate::error::{Error, Result};
use crate::robot::RobotModel;

pub use brent::{brent_minimize, BrentResult, MAX_ITERATIONS as BRENT_MAX_ITERATIONS};

/// Relative singular-value floor below which the stacked Jacobian counts as rank deficient.
pub const OBSERVABILITY_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    /// Damping of the force solve.
    pub lambda: f64,
    /// Force magnitude bound, N.
    #[serde(rename = "F_max")]
    pub f_max: f64,
    pub grid_points: usize,
    /// Brent tolerance in arc-length units.
    pub brent_tol: f64,
    /// Most recent in-contact samples used per estimate.
    #[serde(rename = "window_N")]
    pub window_n: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            f_max: 60.0,
            grid_points: 21,
            brent_tol: 1e-4,
            window_n: 50,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(format!("estimation: {msg}")));
        if !(self.lambda > 0.0) {
            return fail("lambda must be positive");
        }
        if !(self.f_max > 0.0) {
            return fail("F_max must be positive");
        }
        if self.grid_points < 2 {
            return fail("grid_points must be at least 2");
        }
        if !(self.brent_tol > 0.0) {
            return fail("brent_tol must be positive");
        }
        if self.window_n == 0 {
            return fail("window_N must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateDiagnostics {
    /// Every grid cost was identical; `s_hat` is the midpoint by convention.
    pub unidentifiable: bool,
    /// The stacked Jacobian at `s_hat` has numerical rank below 3.
    pub low_observability: bool,
    /// The localization that picked the link saw a gap in the proximal residuals.
    #[serde(default)]
    pub non_contiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEstimate {
    /// 1-based link index.
    pub link: usize,
    pub s_hat: f64,
    /// N
    pub force: Vector3<f64>,
    /// Half the summed squared torque misfit, (N·m)².
    pub cost: f64,
    /// The force was scaled back onto the magnitude bound.
    pub clamped: bool,
    /// World contact point at the last sample of the window, m.
    pub p_hat: Vector3<f64>,
    pub samples: usize,
    pub diagnostics: EstimateDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceSolution {
    pub force: Vector3<f64>,
    pub clamped: bool,
}

/// Accumulated `Σ J_k J_kᵀ` and `Σ J_k τ_k` of the stacked force fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalEquations {
    pub gram: Matrix3<f64>,
    pub rhs: Vector3<f64>,
}

impl NormalEquations {
    pub fn new() -> Self {
        Self {
            gram: Matrix3::zeros(),
            rhs: Vector3::zeros(),
        }
    }

    pub fn add(&mut self, jac: &Matrix3xX<f64>, tau: &DVector<f64>) {
        self.gram += jac * jac.transpose();
        self.rhs += jac * tau;
    }

    /// Damped solution projected onto the ball of radius `f_max`.
    pub fn solve(&self, lambda: f64, f_max: f64) -> ForceSolution {
        let damped = self.gram + Matrix3::identity() * (lambda * lambda);
        let force = damped
            .cholesky()
            .map(|c| c.solve(&self.rhs))
            .unwrap_or_else(Vector3::zeros);
        project(force, f_max)
    }

    /// True when the smallest singular value of the stacked Jacobian falls below
    /// [`OBSERVABILITY_RATIO`] times the largest.
    pub fn is_rank_deficient(&self) -> bool {
        let eig = self.gram.symmetric_eigenvalues();
        let max = eig.max();
        let min = eig.min().max(0.0);
        !(max > 0.0) || min.sqrt() < OBSERVABILITY_RATIO * max.sqrt()
    }
}

impl Default for NormalEquations {
    fn default() -> Self {
        Self::new()
    }
}

fn project(force: Vector3<f64>, f_max: f64) -> ForceSolution {
    let norm = force.norm();
    if norm > f_max {
        ForceSolution {
            force: force * (f_max / norm),
            clamped: true,
        }
    } else {
        ForceSolution {
            force,
            clamped: false,
        }
    }
}

/// Damped least-squares force for stacked transposed Jacobians `jt_stack` (`nN×3`,
/// one `J_c(q_k, s)ᵀ` block per sample) and stacked residuals `tau_stack`.
pub fn closed_form_force(
    jt_stack: &DMatrix<f64>,
    tau_stack: &DVector<f64>,
    lambda: f64,
    f_max: f64,
) -> Result<ForceSolution> {
    if jt_stack.ncols() != 3 {
        return Err(Error::dim("stacked Jacobian columns", 3, jt_stack.ncols()));
    }
    if jt_stack.nrows() == 0 {
        return Err(Error::Argument("at least one sample is required".into()));
    }
    if tau_stack.len() != jt_stack.nrows() {
        return Err(Error::dim("stacked residual", jt_stack.nrows(), tau_stack.len()));
    }
    if !(lambda > 0.0) || !(f_max > 0.0) {
        return Err(Error::Argument("lambda and F_max must be positive".into()));
    }
    if !jt_stack.iter().chain(tau_stack.iter()).all(|v| v.is_finite()) {
        return Err(Error::Argument("non-finite Jacobian or residual".into()));
    }
    let gram = jt_stack.transpose() * jt_stack;
    let rhs = jt_stack.transpose() * tau_stack;
    let normal = NormalEquations {
        gram: Matrix3::from_fn(|i, j| gram[(i, j)]),
        rhs: Vector3::new(rhs[0], rhs[1], rhs[2]),
    };
    Ok(normal.solve(lambda, f_max))
}

/// Per-sample Jacobians at both centerline endpoints of one link.
///
/// Columns are `axis_j × (p − o_j)`, affine in the point, so the Jacobian at any
/// arc length is the matching blend of the two endpoint Jacobians.
#[derive(Debug, Clone)]
pub struct LinkFit<'a> {
    base: Vec<Matrix3xX<f64>>,
    tip: Vec<Matrix3xX<f64>>,
    residuals: Vec<&'a DVector<f64>>,
    last_endpoints: (Vector3<f64>, Vector3<f64>),
    link: usize,
}

impl<'a> LinkFit<'a> {
    pub fn new(model: &RobotModel, link: usize, samples: &'a [ResidualSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("estimation window is empty".into()));
        }
        let index = model.link_index(link)?;
        let mut base = Vec::with_capacity(samples.len());
        let mut tip = Vec::with_capacity(samples.len());
        let mut last_endpoints = (Vector3::zeros(), Vector3::zeros());
        for sample in samples {
            if sample.tau_hat.len() != model.dof() {
                return Err(Error::dim("tau_hat", model.dof(), sample.tau_hat.len()));
            }
            if !sample.tau_hat.iter().all(|t| t.is_finite()) {
                return Err(Error::Argument("residual contains non-finite values".into()));
            }
            let frames = model.forward_kinematics(&sample.q)?;
            let (p0, p1) = (frames.link_base[index], frames.link_tip[index]);
            base.push(frames.jacobian_of_point(link, &p0)?);
            tip.push(frames.jacobian_of_point(link, &p1)?);
            last_endpoints = (p0, p1);
        }
        Ok(Self {
            base,
            tip,
            residuals: samples.iter().map(|s| &s.tau_hat).collect(),
            last_endpoints,
            link,
        })
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn jacobian(&self, k: usize, s: f64) -> Matrix3xX<f64> {
        &self.base[k] * (1.0 - s) + &self.tip[k] * s
    }

    pub fn normal_equations(&self, s: f64) -> NormalEquations {
        let mut normal = NormalEquations::new();
        for (k, tau) in self.residuals.iter().enumerate() {
            normal.add(&self.jacobian(k, s), tau);
        }
        normal
    }

    /// `½ Σ‖τ̂_k − J_kᵀ F‖²`, evaluated from explicit residuals.
    pub fn misfit(&self, s: f64, force: &Vector3<f64>) -> f64 {
        self.residuals
            .iter()
            .enumerate()
            .map(|(k, tau)| (*tau - self.jacobian(k, s).transpose() * force).norm_squared())
            .sum::<f64>()
            * 0.5
    }

    /// Reduced cost at `s` with the projected force, and that force.
    pub fn evaluate(&self, s: f64, config: &EstimationConfig) -> (f64, ForceSolution) {
        let solution = self.normal_equations(s).solve(config.lambda, config.f_max);
        (self.misfit(s, &solution.force), solution)
    }

    pub fn contact_point(&self, s: f64) -> Vector3<f64> {
        let (p0, p1) = self.last_endpoints;
        p0 + (p1 - p0) * s
    }
}

/// Reduced cost `f(s)` for a window of samples on `link`.
pub fn reduced_cost(
    s: f64,
    samples: &[ResidualSample],
    model: &RobotModel,
    link: usize,
    config: &EstimationConfig,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Argument(format!("s = {s} outside [0, 1]")));
    }
    let fit = LinkFit::new(model, link, samples)?;
    Ok(fit.evaluate(s, config).0)
}

/// Grid scan plus Brent refinement of the reduced cost over `s ∈ [0, 1]`.
pub fn estimate_contact(
    samples: &[ResidualSample],
    link: usize,
    model: &RobotModel,
    config: &EstimationConfig,
) -> Result<ContactEstimate> {
    config.validate()?;
    let fit = LinkFit::new(model, link, samples)?;
    Ok(estimate_with_fit(&fit, config))
}

pub fn estimate_with_fit(fit: &LinkFit<'_>, config: &EstimationConfig) -> ContactEstimate {
    let g = config.grid_points;
    let grid: Vec<f64> = (0..g).map(|i| i as f64 / (g - 1) as f64).collect();
    let costs: Vec<f64> = grid.iter().map(|&s| fit.evaluate(s, config).0).collect();

    let (best, best_cost) = costs
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("grid has at least two points");
    let worst_cost = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut diagnostics = EstimateDiagnostics::default();
    let s_hat = if worst_cost - best_cost <= 4.0 * f64::EPSILON * worst_cost.abs() {
        diagnostics.unidentifiable = true;
        0.5
    } else {
        let lower = grid[best.saturating_sub(1)];
        let upper = grid[(best + 1).min(g - 1)];
        let cost = |s: f64| fit.evaluate(s, config).0;
        let refined = if best > 0 && best < g - 1 {
            brent_minimize(cost, lower, grid[best], upper, config.brent_tol)
                .expect("grid minimum brackets itself")
        } else {
            brent::brent_bounded(cost, lower, upper, grid[best], best_cost, config.brent_tol)
        };
        if refined.fx <= best_cost {
            refined.x.clamp(0.0, 1.0)
        } else {
            grid[best]
        }
    };

    let normal = fit.normal_equations(s_hat);
    let solution = normal.solve(config.lambda, config.f_max);
    diagnostics.low_observability = normal.is_rank_deficient();
    ContactEstimate {
        link: fit.link,
        s_hat,
        force: solution.force,
        cost: fit.misfit(s_hat, &solution.force),
        clamped: solution.clamped,
        p_hat: fit.contact_point(s_hat),
        samples: fit.len(),
        diagnostics,
    }
}
