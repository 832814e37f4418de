//! Numerical verification of the quantitative interior estimates that hold
//! along the flow: the Jacobi inequality Lb + 2|grad_g b|^2 / b <= 0 for the
//! volume element of convex solutions, the interior height bound through its
//! explicit supersolution, the oscillation-to-gradient bound, the Korevaar
//! test-function machinery with its explicit Hessian-bound constants, and
//! the monotonicity of convex solutions under the Theta_0 = 0 flow.

use crate::flow::Trajectory;
use crate::geometry::{
    apply_l, b_field, covariant_grad_sq, eigen_sym_unchecked, grad_norm_sq_field, induced_metric,
};
use crate::grid::{fd_gradient, fd_hessian, make_ball_mask, BallMask, ScalarField};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Convexity threshold: a trajectory counts as convex when the interior
/// minimum Hessian eigenvalue stays above -EPS_CONVEX on every snapshot.
/// Exact nodewise positive semidefiniteness is too brittle under round-off.
pub const EPS_CONVEX: f64 = 1e-8;

/// Discretization budget for inequality checks: tol = C1 h^2 + C2 dt_snap.
/// The inequalities hold exactly in the continuum; the budget absorbs the
/// O(h^2) stencil and O(dt) snapshot-derivative noise. Calibrated once by
/// the refinement acceptance run.
pub const TOL_C1: f64 = 10.0;
pub const TOL_C2: f64 = 10.0;

pub fn tolerance_schedule(h: f64, dt_snap: f64) -> f64 {
    TOL_C1 * h * h + TOL_C2 * dt_snap
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimateError {
    Range(String),
    Config(String),
    Hypothesis(String),
}

impl fmt::Display for EstimateError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimateError::Range(m) => write!(f, "range error: {m}"),
            EstimateError::Config(m) => write!(f, "configuration error: {m}"),
            EstimateError::Hypothesis(m) => write!(f, "hypothesis error: {m}"),
        }
    }
}

impl std::error::Error for EstimateError {}

/// Parameters of the Korevaar test function phi = [alpha |Du|^2 - alpha gamma
/// + n t (1 - |x|^2)]^+ and its exponential weight.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KorevaarParams {
    pub alpha: f64,
    pub gamma: f64,
    pub k: f64,
}

impl KorevaarParams {
    /// The hypotheses of the Hessian-bound proposition: alpha > 3n/2,
    /// alpha gamma < 1, K > 0.
    pub fn validate(&self, n: usize) -> Result<(), EstimateError> {
        if !(self.alpha > 1.5 * n as f64) {
            return Err(EstimateError::Hypothesis(format!(
                "alpha = {} must exceed 3n/2 = {}",
                self.alpha,
                1.5 * n as f64
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(EstimateError::Hypothesis(format!(
                "gamma = {} must be positive",
                self.gamma
            )));
        }
        if !(self.alpha * self.gamma < 1.0) {
            return Err(EstimateError::Hypothesis(format!(
                "alpha * gamma = {} must be below 1",
                self.alpha * self.gamma
            )));
        }
        if !(self.k > 0.0) {
            return Err(EstimateError::Hypothesis(format!("K = {} must be positive", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorstLocation {
    pub node: usize,
    pub coords: Vec<f64>,
    pub time: f64,
}

/// Outcome of one inequality check. `worst_margin` is the inequality slack
/// (positive = satisfied); status is `fail` iff it drops below
/// -tolerance_used, and `not_applicable` iff a hypothesis failed, in which
/// case `hypothesis_log` records every failed precondition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub check_name: String,
    pub status: CheckStatus,
    pub worst_margin: f64,
    pub worst_location: Option<WorstLocation>,
    pub tolerance_used: f64,
    pub hypothesis_log: Vec<String>,
}

impl EstimateReport {
    pub fn from_margin(
        check_name: &str,
        margin: f64,
        tolerance: f64,
        location: Option<WorstLocation>,
    ) -> Self {
        let status = if margin >= -tolerance { CheckStatus::Pass } else { CheckStatus::Fail };
        EstimateReport {
            check_name: check_name.to_string(),
            status,
            worst_margin: margin,
            worst_location: location,
            tolerance_used: tolerance,
            hypothesis_log: Vec::new(),
        }
    }

    pub fn not_applicable(check_name: &str, failed_hypotheses: Vec<String>) -> Self {
        assert!(
            !failed_hypotheses.is_empty(),
            "a not_applicable report must record the failed hypothesis"
        );
        EstimateReport {
            check_name: check_name.to_string(),
            status: CheckStatus::NotApplicable,
            worst_margin: f64::NAN,
            worst_location: None,
            tolerance_used: 0.0,
            hypothesis_log: failed_hypotheses,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }

    pub fn csv_header() -> &'static str {
        "check,status,worst_margin,tolerance,node,time,hypothesis_log"
    }

    pub fn csv_row(&self) -> String {
        let status = match self.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::NotApplicable => "not_applicable",
        };
        let (node, time) = match &self.worst_location {
            Some(loc) => (loc.node.to_string(), format!("{:.9}", loc.time)),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{:.6e},{:.6e},{},{},{}",
            self.check_name,
            status,
            self.worst_margin,
            self.tolerance_used,
            node,
            time,
            self.hypothesis_log.join("; ")
        )
    }
}

/// Minimum interior Hessian eigenvalue over every snapshot of a trajectory.
pub fn trajectory_convexity(traj: &Trajectory) -> f64 {
    let grid = traj.grid();
    let d = grid.dim();
    let mut min = f64::INFINITY;
    for snap in traj.snapshots() {
        let hess = fd_hessian(snap);
        for node in 0..grid.node_count() {
            if !grid.is_interior(node) {
                continue;
            }
            let spec = eigen_sym_unchecked(&hess.full_at(node), d);
            min = min.min(spec.lambda_min());
        }
    }
    min
}

fn location_at(traj: &Trajectory, node: usize, time: f64) -> WorstLocation {
    let grid = traj.grid();
    let coords = grid.node_coords(node)[..grid.dim()].to_vec();
    WorstLocation { node, coords, time }
}

/// Check the Jacobi inequality Lb + 2 |grad_g b|^2 / b <= 0 at every
/// grid-interior mask node and interior time index of a convex trajectory.
pub fn check_jacobi(traj: &Trajectory, mask: &BallMask) -> Result<EstimateReport, EstimateError> {
    let name = "jacobi";
    if traj.len() < 3 {
        return Err(EstimateError::Range(format!(
            "jacobi check needs >= 3 snapshots, trajectory has {}",
            traj.len()
        )));
    }
    if mask.grid() != traj.grid() {
        return Err(EstimateError::Config("mask grid does not match trajectory grid".into()));
    }
    let convexity = trajectory_convexity(traj);
    if convexity < -EPS_CONVEX {
        return Ok(EstimateReport::not_applicable(
            name,
            vec![format!(
                "convexity: interior min Hessian eigenvalue {convexity:.3e} < -{EPS_CONVEX:.0e}"
            )],
        ));
    }

    let grid = traj.grid();
    let d = grid.dim();
    let h = grid.spacing();
    let dt_snap = traj.snapshot_dt();
    let tol = tolerance_schedule(h, dt_snap);

    let eval_nodes: Vec<usize> =
        mask.members().iter().copied().filter(|&p| grid.is_interior(p)).collect();
    if eval_nodes.is_empty() {
        return Err(EstimateError::Config("mask has no grid-interior nodes".into()));
    }

    let mut worst_slack = f64::NEG_INFINITY;
    let mut worst: Option<WorstLocation> = None;
    for k in 1..traj.len() - 1 {
        let lb = apply_l(traj, b_field, k)
            .map_err(|e| EstimateError::Range(format!("apply_L failed: {e}")))?;
        let b_k = b_field(traj.snapshot(k));
        let grad_b = fd_gradient(&b_k);
        let hess_u = fd_hessian(traj.snapshot(k));
        for &node in &eval_nodes {
            let spec = eigen_sym_unchecked(&hess_u.full_at(node), d);
            let metric = induced_metric(&spec);
            let grad_sq = covariant_grad_sq(&metric, grad_b.at(node));
            let slack = lb.at(node) + 2.0 * grad_sq / b_k.at(node);
            if slack > worst_slack {
                worst_slack = slack;
                worst = Some(location_at(traj, node, traj.times()[k]));
            }
        }
    }
    Ok(EstimateReport::from_margin(name, -worst_slack, tol, worst))
}

/// The interior height bound u(0, 1/n) <= arctan(pi/R^2) + max_{B_R x {0}} u
/// for trajectories of the Theta_0 = 0 flow.
pub fn height_bound_check(traj: &Trajectory, radius: f64) -> Result<EstimateReport, EstimateError> {
    let name = "height_bound";
    let grid = traj.grid();
    let n = grid.dim() as f64;
    let t_final = 1.0 / n;
    let mask = make_ball_mask(*grid, &[0.0; 3][..grid.dim()], radius)
        .map_err(|e| EstimateError::Config(format!("B_R mask: {e}")))?;
    if !mask.fits_in_cube() {
        return Err(EstimateError::Config(format!(
            "ball of radius {radius} does not fit inside the cube of half-width {}",
            grid.half_width()
        )));
    }
    if (traj.times()[0]).abs() > 1e-12 {
        return Err(EstimateError::Range(format!(
            "trajectory must start at t = 0, starts at {}",
            traj.times()[0]
        )));
    }
    let dt_snap = traj.snapshot_dt();
    let final_idx = traj.index_at_time(t_final, dt_snap.max(1e-12)).ok_or_else(|| {
        EstimateError::Range(format!(
            "no snapshot within one snapshot spacing of t = 1/n = {t_final}"
        ))
    })?;
    if traj.theta0() != 0.0 {
        return Ok(EstimateReport::not_applicable(
            name,
            vec![format!("flow phase: theta0 = {} is not 0 (Eq 1.1 flow required)", traj.theta0())],
        ));
    }

    let u0 = traj.snapshot(0);
    let mut max_initial = f64::NEG_INFINITY;
    for &node in mask.members() {
        max_initial = max_initial.max(u0.at(node));
    }
    let origin = grid.origin_node();
    let u_final = traj.snapshot(final_idx).at(origin);
    let margin = (std::f64::consts::PI / (radius * radius)).atan() + max_initial - u_final;
    let tol = tolerance_schedule(grid.spacing(), dt_snap);
    Ok(EstimateReport::from_margin(
        name,
        margin,
        tol,
        Some(location_at(traj, origin, traj.times()[final_idx])),
    ))
}

/// The explicit supersolution of the height-bound proof.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub radius: f64,
    pub n: usize,
}

impl BarrierSpec {
    pub fn new(radius: f64, n: usize) -> Result<Self, EstimateError> {
        if !(radius > 0.0) {
            return Err(EstimateError::Config(format!(
                "barrier radius must be positive: {radius}"
            )));
        }
        if !(1..=3).contains(&n) {
            return Err(EstimateError::Config(format!("barrier dimension must be 1..=3: {n}")));
        }
        Ok(BarrierSpec { radius, n })
    }

    /// w = (t n pi / 2)(|x|/R)^2 + n t arctan(t n pi / R^2).
    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        let n = self.n as f64;
        let r2 = self.radius * self.radius;
        let xsq: f64 = x.iter().map(|v| v * v).sum();
        t * n * std::f64::consts::PI / 2.0 * xsq / r2
            + n * t * (t * n * std::f64::consts::PI / r2).atan()
    }

    /// The supersolution residual w_t - sum_i arctan(lambda_i(D^2 w)),
    /// evaluated in closed form. D^2 w = (t n pi / R^2) I, so the angle term
    /// is n arctan(t n pi / R^2) and cancels the matching part of w_t,
    /// leaving
    ///   (n pi / 2)(|x|/R)^2 + (n^2 pi t / R^2) / (1 + (t n pi / R^2)^2),
    /// which is nonnegative for every t >= 0.
    pub fn residual_at(&self, x: &[f64], t: f64) -> f64 {
        let n = self.n as f64;
        let r2 = self.radius * self.radius;
        let pi = std::f64::consts::PI;
        let xsq: f64 = x.iter().map(|v| v * v).sum();
        let s = t * n * pi / r2;
        n * pi / 2.0 * xsq / r2 + n * s / (1.0 + s * s)
    }

    /// Residuals over a batch of sample points.
    pub fn residuals(&self, points: &[(Vec<f64>, f64)]) -> Vec<f64> {
        points.iter().map(|(x, t)| self.residual_at(x, *t)).collect()
    }
}

/// The oscillation-to-gradient bound: for convex solutions on
/// B_{2R+1} x [0, 1/n] with oscillation at most M at t = 0,
/// max_{B_1 x [0, 1/n]} |Du| <= (1/R)(M + arctan(pi/R^2)).
pub fn gradient_bound_check(
    traj: &Trajectory,
    radius: f64,
    oscillation: f64,
) -> Result<EstimateReport, EstimateError> {
    let name = "gradient_bound";
    let grid = traj.grid();
    let n = grid.dim() as f64;
    let outer = make_ball_mask(*grid, &[0.0; 3][..grid.dim()], 2.0 * radius + 1.0)
        .map_err(|e| EstimateError::Config(format!("B_{{2R+1}} mask: {e}")))?;
    if !outer.fits_in_cube() {
        return Err(EstimateError::Config(format!(
            "ball of radius 2R+1 = {} does not fit inside the cube of half-width {}",
            2.0 * radius + 1.0,
            grid.half_width()
        )));
    }
    let unit = make_ball_mask(*grid, &[0.0; 3][..grid.dim()], 1.0)
        .map_err(|e| EstimateError::Config(format!("B_1 mask: {e}")))?;

    let mut failed = Vec::new();
    let convexity = trajectory_convexity(traj);
    if convexity < -EPS_CONVEX {
        failed.push(format!(
            "convexity: interior min Hessian eigenvalue {convexity:.3e} < -{EPS_CONVEX:.0e}"
        ));
    }
    let initial_osc = traj.snapshot(0).oscillation_over(outer.members());
    if initial_osc > oscillation * (1.0 + 1e-12) {
        failed.push(format!(
            "oscillation: initial slice oscillates by {initial_osc:.6} > M = {oscillation}"
        ));
    }
    if !failed.is_empty() {
        return Ok(EstimateReport::not_applicable(name, failed));
    }

    let t_final = 1.0 / n;
    let mut max_grad = 0.0f64;
    let mut worst: Option<WorstLocation> = None;
    for (k, &t) in traj.times().iter().enumerate() {
        if t > t_final + 1e-12 {
            break;
        }
        let grad = fd_gradient(traj.snapshot(k));
        for &node in unit.members() {
            let g = grad.norm_sq_at(node).sqrt();
            if g > max_grad {
                max_grad = g;
                worst = Some(location_at(traj, node, t));
            }
        }
    }
    let bound = (oscillation + (std::f64::consts::PI / (radius * radius)).atan()) / radius;
    let margin = bound - max_grad;
    let tol = tolerance_schedule(grid.spacing(), traj.snapshot_dt());
    Ok(EstimateReport::from_margin(name, margin, tol, worst))
}

/// The Korevaar fields phi, eta = e^{K phi} - 1, and h = eta b of one
/// snapshot, plus the argmax of h over the unit-ball mask.
#[derive(Debug, Clone)]
pub struct KorevaarFields {
    pub phi: ScalarField,
    pub eta: ScalarField,
    pub h: ScalarField,
    pub argmax_h: usize,
    pub max_h: f64,
}

pub fn korevaar_fields(
    u: &ScalarField,
    params: &KorevaarParams,
    t: f64,
) -> Result<KorevaarFields, EstimateError> {
    let grid = *u.grid();
    if grid.half_width() < 1.0 {
        return Err(EstimateError::Config(format!(
            "grid half-width {} does not contain the unit ball",
            grid.half_width()
        )));
    }
    let n = grid.dim() as f64;
    let grad_sq = grad_norm_sq_field(u);
    let b = b_field(u);
    let mut phi = ScalarField::zeros(grid);
    let mut eta = ScalarField::zeros(grid);
    let mut h = ScalarField::zeros(grid);
    for node in 0..grid.node_count() {
        let x = grid.node_coords(node);
        let xsq: f64 = x[..grid.dim()].iter().map(|v| v * v).sum();
        let raw =
            params.alpha * grad_sq.at(node) - params.alpha * params.gamma + n * t * (1.0 - xsq);
        let p = raw.max(0.0);
        let e = (params.k * p).exp_m1();
        phi.values_mut()[node] = p;
        eta.values_mut()[node] = e;
        h.values_mut()[node] = e * b.at(node);
    }
    let unit = make_ball_mask(grid, &[0.0; 3][..grid.dim()], 1.0)
        .map_err(|e| EstimateError::Config(format!("B_1 mask: {e}")))?;
    let (argmax_h, max_h) = unit
        .members()
        .iter()
        .map(|&p| (p, h.at(p)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite h"))
        .expect("unit mask nonempty");
    Ok(KorevaarFields { phi, eta, h, argmax_h, max_h })
}

/// The right-hand side of the Hessian-bound proposition:
/// lambda_max^2 <= e^{2nK} (2 alpha / (2 alpha - 3n))^n
///                 / (e^{K(1 - alpha gamma)} - 1)^{2n}.
pub fn hessian_bound_constant(n: usize, params: &KorevaarParams) -> Result<f64, EstimateError> {
    params.validate(n)?;
    let nf = n as f64;
    let factor = (2.0 * params.alpha / (2.0 * params.alpha - 3.0 * nf)).powi(n as i32);
    let denom = (params.k * (1.0 - params.alpha * params.gamma)).exp_m1().powi(2 * n as i32);
    Ok((2.0 * nf * params.k).exp() * factor / denom)
}

/// The explicit constants of the oscillation-normalized Hessian bound.
///
/// gamma(n) = (1/(9n)) (2 + arctan(pi/(9n)))^2, always below 0.61/n;
/// `c_hb` substitutes alpha = 1.6n, gamma(n), K = 1 into the Hessian-bound
/// constant (prefactor e^{2n}); `c_tight` is the variant with prefactor e.
/// The two differ by exactly e^{2n-1}; both are reported and the weaker
/// (larger) one backs the checks, so the ambiguity cannot fail a run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MainConstants {
    pub n: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub c_hb: f64,
    pub c_tight: f64,
}

pub fn main_constant(n: usize) -> Result<MainConstants, EstimateError> {
    if n == 0 {
        return Err(EstimateError::Config("dimension must be >= 1".into()));
    }
    let nf = n as f64;
    let gamma = (2.0 + (std::f64::consts::PI / (9.0 * nf)).atan()).powi(2) / (9.0 * nf);
    if !(gamma < 0.61 / nf) {
        return Err(EstimateError::Hypothesis(format!(
            "gamma({n}) = {gamma} is not below 0.61/n"
        )));
    }
    let alpha = 1.6 * nf;
    let params = KorevaarParams { alpha, gamma, k: 1.0 };
    let c_hb = hessian_bound_constant(n, &params)?;
    let denom = (1.0 - alpha * gamma).exp_m1().powi(2 * n as i32);
    let c_tight = 1.0f64.exp() * 16.0f64.powi(n as i32) / denom;
    Ok(MainConstants { n, gamma, alpha, c_hb, c_tight })
}

/// Check lambda_max^2(origin, 1/n) against the Hessian-bound constant, with
/// the hypotheses (convexity and |Du|^2 < gamma on B_1 x [0, 1/n])
/// machine-verified. The proposition's terminal time T is taken as 1/n.
pub fn hessian_bound_check(
    traj: &Trajectory,
    params: &KorevaarParams,
) -> Result<EstimateReport, EstimateError> {
    let name = "hessian_bound";
    let grid = traj.grid();
    let n = grid.dim();
    params.validate(n)?;
    let unit = make_ball_mask(*grid, &[0.0; 3][..grid.dim()], 1.0)
        .map_err(|e| EstimateError::Config(format!("B_1 mask: {e}")))?;
    let t_final = 1.0 / n as f64;
    let final_idx = traj.index_at_time(t_final, traj.snapshot_dt().max(1e-12)).ok_or_else(|| {
        EstimateError::Range(format!("no snapshot within one snapshot spacing of t = {t_final}"))
    })?;

    let mut failed = Vec::new();
    let convexity = trajectory_convexity(traj);
    if convexity < -EPS_CONVEX {
        failed.push(format!(
            "convexity: interior min Hessian eigenvalue {convexity:.3e} < -{EPS_CONVEX:.0e}"
        ));
    }
    let mut max_grad_sq = 0.0f64;
    for (k, &t) in traj.times().iter().enumerate() {
        if t > t_final + 1e-12 {
            break;
        }
        let grad = grad_norm_sq_field(traj.snapshot(k));
        for &node in unit.members() {
            max_grad_sq = max_grad_sq.max(grad.at(node));
        }
    }
    if !(max_grad_sq < params.gamma) {
        failed.push(format!(
            "gradient smallness: sup |Du|^2 = {max_grad_sq:.6} over B_1 x [0, 1/n] is not below gamma = {}",
            params.gamma
        ));
    }
    if !failed.is_empty() {
        return Ok(EstimateReport::not_applicable(name, failed));
    }

    let origin = grid.origin_node();
    let hess = fd_hessian(traj.snapshot(final_idx));
    let spec = eigen_sym_unchecked(&hess.full_at(origin), n);
    let lambda_max_sq = spec.lambda_max().powi(2);
    let constant = hessian_bound_constant(n, params)?;
    let margin = constant - lambda_max_sq;
    Ok(EstimateReport::from_margin(
        name,
        margin,
        0.0,
        Some(location_at(traj, origin, traj.times()[final_idx])),
    ))
}

/// Largest Hessian eigenvalue at the origin node of the snapshot nearest
/// t = 1/n (the quantity bounded by the Hessian-bound constants).
pub fn lambda_max_at_origin(traj: &Trajectory) -> Result<f64, EstimateError> {
    let grid = traj.grid();
    let t_final = 1.0 / grid.dim() as f64;
    let idx = traj.index_at_time(t_final, traj.snapshot_dt().max(1e-12)).ok_or_else(|| {
        EstimateError::Range(format!("no snapshot within one snapshot spacing of t = {t_final}"))
    })?;
    let hess = fd_hessian(traj.snapshot(idx));
    let spec = eigen_sym_unchecked(&hess.full_at(grid.origin_node()), grid.dim());
    Ok(spec.lambda_max())
}

/// Monotonicity of convex solutions under the Theta_0 = 0 flow: every node
/// value is nondecreasing between consecutive snapshots. The tolerance is
/// 10 machine epsilons per snapshot.
pub fn theta_monotonicity_check(traj: &Trajectory) -> Result<EstimateReport, EstimateError> {
    let name = "theta_monotonicity";
    if traj.len() < 2 {
        return Err(EstimateError::Range("monotonicity needs >= 2 snapshots".into()));
    }
    let mut failed = Vec::new();
    if traj.theta0() != 0.0 {
        failed.push(format!(
            "flow phase: theta0 = {} is not 0 (Eq 1.1 flow required)",
            traj.theta0()
        ));
    }
    let convexity = trajectory_convexity(traj);
    if convexity < -EPS_CONVEX {
        failed.push(format!(
            "convexity: interior min Hessian eigenvalue {convexity:.3e} < -{EPS_CONVEX:.0e}"
        ));
    }
    if !failed.is_empty() {
        return Ok(EstimateReport::not_applicable(name, failed));
    }

    let grid = traj.grid();
    let mut margin = f64::INFINITY;
    let mut worst: Option<WorstLocation> = None;
    for k in 0..traj.len() - 1 {
        let now = traj.snapshot(k);
        let next = traj.snapshot(k + 1);
        for node in 0..grid.node_count() {
            let inc = next.at(node) - now.at(node);
            if inc < margin {
                margin = inc;
                worst = Some(location_at(traj, node, traj.times()[k + 1]));
            }
        }
    }
    let tol = 10.0 * f64::EPSILON * traj.len() as f64;
    Ok(EstimateReport::from_margin(name, margin, tol, worst))
}
