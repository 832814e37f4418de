//! Run orchestration: JSON configuration, seeded convex initial data,
//! validation, simulation, persistence, and the check battery with its
//! exit-status contract.

use crate::estimates::{
    check_jacobi, gradient_bound_check, height_bound_check, hessian_bound_check,
    theta_monotonicity_check, BarrierSpec, CheckStatus, EstimateReport, KorevaarParams,
};
use crate::flow::{evolve, BoundaryMode, FlowState, Scheme, SolverConfig, Trajectory};
use crate::geometry::{eigen_sym, lagrangian_angle};
use crate::grid::{make_ball_mask, GridSpec, ScalarField};
use crate::io::{save_trajectory, trajectory_dir, GridDescriptor, IoError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::path::Path;

#[derive(Debug)]
pub enum RunnerError {
    Validation(String),
    Io(IoError),
    Flow(crate::flow::FlowError),
    Estimate(crate::estimates::EstimateError),
}

impl fmt::Display for RunnerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunnerError::Validation(m) => write!(f, "validation error: {m}"),
            RunnerError::Io(e) => write!(f, "{e}"),
            RunnerError::Flow(e) => write!(f, "{e}"),
            RunnerError::Estimate(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunnerError {}

impl From<IoError> for RunnerError {
    fn from(e: IoError) -> Self {
        RunnerError::Io(e)
    }
}

impl From<crate::flow::FlowError> for RunnerError {
    fn from(e: crate::flow::FlowError) -> Self {
        RunnerError::Flow(e)
    }
}

impl From<crate::estimates::EstimateError> for RunnerError {
    fn from(e: crate::estimates::EstimateError) -> Self {
        RunnerError::Estimate(e)
    }
}

/// splitmix64: a small deterministic generator, fixed forever so seeded
/// runs stay bit-identical across platforms and releases.
#[derive(Debug, Clone)]
pub struct SeededRng(u64);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialData {
    /// u = (1/2) x^T A x for a symmetric positive semidefinite A.
    Quadratic { matrix: Vec<Vec<f64>> },
    /// u = (1/2) x^T (Q^T D Q) x + epsilon sqrt(1 + |x - c|^2) with a seeded
    /// rotation Q, seeded diagonal D in [d_min, d_max], and a seeded center
    /// c; a sum of convex functions, hence convex. `d_min` defaults to 0.
    SeededConvex {
        seed: u64,
        #[serde(default)]
        d_min: f64,
        d_max: f64,
        epsilon: f64,
        #[serde(default)]
        center_range: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        normalize_oscillation: Option<NormalizeOscillation>,
    },
    /// A raw little-endian f64 snapshot file matching the grid.
    File { path: String },
}

/// Rescale the generated field so its oscillation over B_radius at t = 0
/// equals `target` (positive rescaling preserves convexity).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormalizeOscillation {
    pub target: f64,
    pub radius: f64,
}

/// The symmetric PSD matrix of a seeded convex instance (before the bump).
pub fn seeded_matrix(seed: u64, dim: usize, d_min: f64, d_max: f64) -> [[f64; 3]; 3] {
    let mut rng = SeededRng::new(seed);
    let mut diag = [0.0f64; 3];
    for d in diag.iter_mut().take(dim) {
        *d = rng.range(d_min, d_max);
    }
    // Seeded rotation: dim 1 is trivial, dim 2 one plane rotation, dim 3
    // a composition of three plane rotations.
    let mut q = [[0.0f64; 3]; 3];
    for (i, row) in q.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let planes: &[(usize, usize)] = match dim {
        1 => &[],
        2 => &[(0, 1)],
        _ => &[(0, 1), (0, 2), (1, 2)],
    };
    for &(i, j) in planes {
        let angle = rng.range(0.0, std::f64::consts::TAU);
        let (s, c) = angle.sin_cos();
        for row in q.iter_mut().take(3) {
            let a = row[i];
            let b = row[j];
            row[i] = c * a - s * b;
            row[j] = s * a + c * b;
        }
    }
    // A = Q^T D Q.
    let mut a = [[0.0f64; 3]; 3];
    for r in 0..dim {
        for ccol in 0..dim {
            let mut acc = 0.0;
            for k in 0..dim {
                acc += q[k][r] * diag[k] * q[k][ccol];
            }
            a[r][ccol] = acc;
        }
    }
    // Exact symmetry.
    for r in 0..dim {
        for ccol in (r + 1)..dim {
            let v = 0.5 * (a[r][ccol] + a[ccol][r]);
            a[r][ccol] = v;
            a[ccol][r] = v;
        }
    }
    a
}

/// Deterministic initial data. Quadratic matrices must be symmetric PSD;
/// seeded convex data is convex by construction.
pub fn generate_initial_data(
    data: &InitialData,
    grid: GridSpec,
) -> Result<ScalarField, RunnerError> {
    let dim = grid.dim();
    match data {
        InitialData::Quadratic { matrix } => {
            if matrix.len() != dim || matrix.iter().any(|row| row.len() != dim) {
                return Err(RunnerError::Validation(format!(
                    "quadratic matrix must be {dim}x{dim}"
                )));
            }
            let mut a = [[0.0f64; 3]; 3];
            for i in 0..dim {
                for j in 0..dim {
                    a[i][j] = matrix[i][j];
                }
            }
            let spec = eigen_sym(&a, dim).map_err(|e| {
                RunnerError::Validation(format!("quadratic matrix must be symmetric: {e}"))
            })?;
            if spec.lambda_min() < -1e-12 {
                return Err(RunnerError::Validation(format!(
                    "quadratic matrix must be positive semidefinite (lambda_min = {})",
                    spec.lambda_min()
                )));
            }
            Ok(ScalarField::from_fn(grid, |x| {
                let mut s = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        s += 0.5 * a[i][j] * x[i] * x[j];
                    }
                }
                s
            }))
        }
        InitialData::SeededConvex {
            seed,
            d_min,
            d_max,
            epsilon,
            center_range,
            normalize_oscillation,
        } => {
            if !(*d_min >= 0.0 && *d_max >= *d_min) {
                return Err(RunnerError::Validation(format!(
                    "seeded_convex needs 0 <= d_min <= d_max, got [{d_min}, {d_max}]"
                )));
            }
            if *epsilon < 0.0 {
                return Err(RunnerError::Validation(format!(
                    "seeded_convex bump amplitude must be nonnegative, got {epsilon}"
                )));
            }
            let a = seeded_matrix(*seed, dim, *d_min, *d_max);
            // The center draw follows the matrix draws so both depend only
            // on the seed.
            let mut rng = SeededRng::new(seed.wrapping_add(0x5eed));
            let mut center = [0.0f64; 3];
            for c in center.iter_mut().take(dim) {
                *c = rng.range(-center_range, *center_range);
            }
            let eps = *epsilon;
            let mut field = ScalarField::from_fn(grid, |x| {
                let mut s = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        s += 0.5 * a[i][j] * x[i] * x[j];
                    }
                }
                let shift_sq: f64 =
                    (0..dim).map(|i| (x[i] - center[i]) * (x[i] - center[i])).sum();
                s + eps * (1.0 + shift_sq).sqrt()
            });
            if let Some(norm) = normalize_oscillation {
                if !(norm.target > 0.0 && norm.radius > 0.0) {
                    return Err(RunnerError::Validation(
                        "normalize_oscillation needs positive target and radius".into(),
                    ));
                }
                let mask = make_ball_mask(grid, &[0.0; 3][..dim], norm.radius)
                    .map_err(|e| RunnerError::Validation(format!("normalization mask: {e}")))?;
                let osc = field.oscillation_over(mask.members());
                if osc <= 0.0 {
                    return Err(RunnerError::Validation(
                        "cannot normalize a constant field to a positive oscillation".into(),
                    ));
                }
                field.scale(norm.target / osc);
            }
            Ok(field)
        }
        InitialData::File { path } => {
            let bytes = fs::read(path).map_err(|e| {
                RunnerError::Validation(format!("initial data file {path}: {e}"))
            })?;
            if bytes.len() != grid.node_count() * 8 {
                return Err(RunnerError::Validation(format!(
                    "initial data file {path} holds {} bytes, grid needs {}",
                    bytes.len(),
                    grid.node_count() * 8
                )));
            }
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            ScalarField::from_values(grid, values)
                .map_err(|e| RunnerError::Validation(format!("initial data file {path}: {e}")))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta0Config {
    /// Explicit phase.
    Value(f64),
    /// The string "matched": Theta_0 = sum arctan lambda_i(A) of quadratic
    /// initial data, which makes that data stationary.
    Matched(String),
}

impl Default for Theta0Config {
    fn default() -> Self {
        Theta0Config::Value(0.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    #[serde(default)]
    pub theta0: Theta0Config,
    pub t_end: f64,
    #[serde(default = "default_dt_safety")]
    pub dt_safety: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_boundary")]
    pub boundary_mode: String,
}

fn default_dt_safety() -> f64 {
    0.4
}

fn default_scheme() -> Scheme {
    Scheme::Rk2
}

fn default_stride() -> usize {
    1
}

fn default_boundary() -> String {
    "free".into()
}

/// One requested check with its parameters. `expect_not_applicable` makes a
/// hypothesis-violation outcome count as expected for the exit status.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum CheckRequest {
    Jacobi {
        mask_radius: f64,
        #[serde(default)]
        expect_not_applicable: bool,
    },
    Height {
        radius: f64,
        #[serde(default)]
        expect_not_applicable: bool,
    },
    Gradient {
        radius: f64,
        oscillation: f64,
        #[serde(default)]
        expect_not_applicable: bool,
    },
    Hessian {
        alpha: f64,
        gamma: f64,
        k: f64,
        #[serde(default)]
        expect_not_applicable: bool,
    },
    Barrier {
        radius: f64,
        samples: usize,
        #[serde(default)]
        seed: u64,
    },
    Monotonicity {
        #[serde(default)]
        expect_not_applicable: bool,
    },
    /// Max nodewise change from the initial snapshot stays below `tolerance`.
    Stationarity {
        #[serde(default = "default_stationarity_tol")]
        tolerance: f64,
    },
}

fn default_stationarity_tol() -> f64 {
    1e-9
}

impl CheckRequest {
    fn expects_not_applicable(&self) -> bool {
        match self {
            CheckRequest::Jacobi { expect_not_applicable, .. }
            | CheckRequest::Height { expect_not_applicable, .. }
            | CheckRequest::Gradient { expect_not_applicable, .. }
            | CheckRequest::Hessian { expect_not_applicable, .. }
            | CheckRequest::Monotonicity { expect_not_applicable } => *expect_not_applicable,
            CheckRequest::Barrier { .. } | CheckRequest::Stationarity { .. } => false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub grid: GridDescriptor,
    pub flow: FlowConfig,
    pub initial_data: InitialData,
    #[serde(default)]
    pub checks: Vec<CheckRequest>,
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self, RunnerError> {
        serde_json::from_str(json).map_err(|e| RunnerError::Validation(format!("config: {e}")))
    }
}

/// Resolve theta0, producing the matched phase for quadratic data.
fn resolve_theta0(config: &RunConfig, grid: GridSpec) -> Result<f64, RunnerError> {
    match &config.flow.theta0 {
        Theta0Config::Value(v) => Ok(*v),
        Theta0Config::Matched(tag) => {
            if tag != "matched" {
                return Err(RunnerError::Validation(format!(
                    "theta0 must be a number or the string \"matched\", got \"{tag}\""
                )));
            }
            match &config.initial_data {
                InitialData::Quadratic { matrix } => {
                    let dim = grid.dim();
                    let mut a = [[0.0f64; 3]; 3];
                    for i in 0..dim {
                        for j in 0..dim {
                            a[i][j] = matrix[i][j];
                        }
                    }
                    let spec = eigen_sym(&a, dim)
                        .map_err(|e| RunnerError::Validation(format!("matched theta0: {e}")))?;
                    Ok(lagrangian_angle(&spec))
                }
                _ => Err(RunnerError::Validation(
                    "theta0 = \"matched\" requires quadratic initial data".into(),
                )),
            }
        }
    }
}

/// Validate every check's parameters against the grid before any
/// simulation work happens.
fn validate_checks(config: &RunConfig, grid: GridSpec) -> Result<(), RunnerError> {
    let n = grid.dim();
    for check in &config.checks {
        match check {
            CheckRequest::Jacobi { mask_radius, .. } => {
                if !(*mask_radius > 0.0) {
                    return Err(RunnerError::Validation(format!(
                        "jacobi mask radius must be positive, got {mask_radius}"
                    )));
                }
                make_ball_mask(grid, &[0.0; 3][..n], *mask_radius)
                    .map_err(|e| RunnerError::Validation(format!("jacobi mask: {e}")))?;
            }
            CheckRequest::Height { radius, .. } => {
                let mask = make_ball_mask(grid, &[0.0; 3][..n], *radius)
                    .map_err(|e| RunnerError::Validation(format!("height mask: {e}")))?;
                if !mask.fits_in_cube() {
                    return Err(RunnerError::Validation(format!(
                        "height-bound ball of radius {radius} does not fit the grid"
                    )));
                }
            }
            CheckRequest::Gradient { radius, oscillation, .. } => {
                if !(*oscillation > 0.0) {
                    return Err(RunnerError::Validation(
                        "gradient-bound oscillation must be positive".into(),
                    ));
                }
                let mask = make_ball_mask(grid, &[0.0; 3][..n], 2.0 * radius + 1.0)
                    .map_err(|e| RunnerError::Validation(format!("gradient mask: {e}")))?;
                if !mask.fits_in_cube() {
                    return Err(RunnerError::Validation(format!(
                        "gradient-bound ball of radius 2R+1 = {} does not fit the grid",
                        2.0 * radius + 1.0
                    )));
                }
            }
            CheckRequest::Hessian { alpha, gamma, k, .. } => {
                KorevaarParams { alpha: *alpha, gamma: *gamma, k: *k }
                    .validate(n)
                    .map_err(|e| RunnerError::Validation(e.to_string()))?;
                if grid.half_width() < 1.0 {
                    return Err(RunnerError::Validation(
                        "hessian-bound check needs the grid to contain B_1".into(),
                    ));
                }
            }
            CheckRequest::Barrier { radius, samples, .. } => {
                BarrierSpec::new(*radius, n)
                    .map_err(|e| RunnerError::Validation(e.to_string()))?;
                if *samples == 0 {
                    return Err(RunnerError::Validation(
                        "barrier check needs at least one sample".into(),
                    ));
                }
            }
            CheckRequest::Monotonicity { .. } | CheckRequest::Stationarity { .. } => {}
        }
    }
    Ok(())
}

/// Barrier check over seeded samples of B_R x [0, 1/n]: closed-form
/// residual, no discretization, tolerance 1e-12 of round-off.
pub fn barrier_check(
    n: usize,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<EstimateReport, RunnerError> {
    let spec = BarrierSpec::new(radius, n)?;
    let mut rng = SeededRng::new(seed);
    let mut worst = f64::INFINITY;
    let mut worst_point: Option<(Vec<f64>, f64)> = None;
    let mut drawn = 0usize;
    while drawn < samples {
        // Rejection-sample x in the ball.
        let x: Vec<f64> = (0..n).map(|_| rng.range(-radius, radius)).collect();
        if x.iter().map(|v| v * v).sum::<f64>() > radius * radius {
            continue;
        }
        let t = rng.range(0.0, 1.0 / n as f64);
        let r = spec.residual_at(&x, t);
        if r < worst {
            worst = r;
            worst_point = Some((x, t));
        }
        drawn += 1;
    }
    let location = worst_point.map(|(coords, time)| crate::estimates::WorstLocation {
        node: 0,
        coords,
        time,
    });
    Ok(EstimateReport::from_margin("barrier", worst, 1e-12, location))
}

/// Max nodewise change from the first snapshot.
pub fn stationarity_check(traj: &Trajectory, tolerance: f64) -> EstimateReport {
    let first = traj.snapshot(0);
    let mut max_change = 0.0f64;
    let mut worst: Option<crate::estimates::WorstLocation> = None;
    let grid = traj.grid();
    for k in 1..traj.len() {
        let snap = traj.snapshot(k);
        for node in 0..grid.node_count() {
            let change = (snap.at(node) - first.at(node)).abs();
            if change > max_change {
                max_change = change;
                worst = Some(crate::estimates::WorstLocation {
                    node,
                    coords: grid.node_coords(node)[..grid.dim()].to_vec(),
                    time: traj.times()[k],
                });
            }
        }
    }
    EstimateReport::from_margin("stationarity", tolerance - max_change, 0.0, worst)
}

fn run_check(check: &CheckRequest, traj: &Trajectory) -> Result<EstimateReport, RunnerError> {
    let grid = traj.grid();
    let n = grid.dim();
    Ok(match check {
        CheckRequest::Jacobi { mask_radius, .. } => {
            let mask = make_ball_mask(*grid, &[0.0; 3][..n], *mask_radius)
                .map_err(|e| RunnerError::Validation(format!("jacobi mask: {e}")))?;
            check_jacobi(traj, &mask)?
        }
        CheckRequest::Height { radius, .. } => height_bound_check(traj, *radius)?,
        CheckRequest::Gradient { radius, oscillation, .. } => {
            gradient_bound_check(traj, *radius, *oscillation)?
        }
        CheckRequest::Hessian { alpha, gamma, k, .. } => {
            hessian_bound_check(traj, &KorevaarParams { alpha: *alpha, gamma: *gamma, k: *k })?
        }
        CheckRequest::Barrier { radius, samples, seed } => {
            barrier_check(n, *radius, *samples, *seed)?
        }
        CheckRequest::Monotonicity { .. } => theta_monotonicity_check(traj)?,
        CheckRequest::Stationarity { tolerance } => stationarity_check(traj, *tolerance),
    })
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub reports: Vec<EstimateReport>,
    pub failures: Vec<String>,
    pub exit_code: i32,
}

#[derive(Debug, Serialize)]
pub struct StationarySummary {
    pub theta0: f64,
    pub residual_sup: f64,
    pub newton_iterations_limit: usize,
}

/// Solve the stationary equation F(D^2 u) = Theta_0 with Dirichlet data
/// taken from the configured initial-data field on the cube boundary, and
/// persist the solution as a single-snapshot trajectory.
pub fn stationary_run(config: &RunConfig, out_dir: &Path) -> Result<StationarySummary, RunnerError> {
    let grid = config
        .grid
        .to_spec()
        .map_err(|e| RunnerError::Validation(format!("grid: {e}")))?;
    let theta0 = resolve_theta0(config, grid)?;
    let data_field = generate_initial_data(&config.initial_data, grid)?;
    let boundary = |x: &[f64]| {
        let h = grid.spacing();
        let mut idx = [0usize; 3];
        for (axis, xi) in x.iter().enumerate() {
            idx[axis] = ((xi + grid.half_width()) / h).round() as usize;
        }
        data_field.at(grid.flat_index(&idx[..grid.dim()]))
    };
    let options = crate::flow::StationaryOptions::default();
    let u = crate::flow::solve_stationary(theta0, &boundary, grid, &options)
        .map_err(|e| RunnerError::Validation(format!("stationary solve: {e}")))?;

    let theta = crate::geometry::theta_field(&u);
    let mut residual_sup = 0.0f64;
    for node in 0..grid.node_count() {
        if grid.is_interior(node) {
            residual_sup = residual_sup.max((theta.at(node) - theta0).abs());
        }
    }

    let provenance = crate::flow::Provenance {
        scheme: "newton".into(),
        dt_safety: 0.0,
        dt: 0.0,
        snapshot_stride: 1,
        boundary: "dirichlet_from_initial_data".into(),
        seed: None,
        note: Some("stationary solve".into()),
    };
    let traj = Trajectory::new(grid, theta0, vec![0.0], vec![u], provenance)?;
    fs::create_dir_all(out_dir).map_err(IoError::Io)?;
    save_trajectory(&traj, &trajectory_dir(out_dir))?;
    Ok(StationarySummary {
        theta0,
        residual_sup,
        newton_iterations_limit: options.max_iters,
    })
}

/// Validate, generate data, evolve, persist, and run the requested checks.
/// Exit code 0 iff every check passed or was not_applicable where the
/// config expects it.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunSummary, RunnerError> {
    let grid = config
        .grid
        .to_spec()
        .map_err(|e| RunnerError::Validation(format!("grid: {e}")))?;
    if config.flow.boundary_mode != "free" {
        return Err(RunnerError::Validation(format!(
            "config boundary_mode must be \"free\" (dirichlet_function boundaries take a \
             programmatic function), got \"{}\"",
            config.flow.boundary_mode
        )));
    }
    if !(config.flow.dt_safety > 0.0 && config.flow.dt_safety <= 0.5) {
        return Err(RunnerError::Validation(format!(
            "dt_safety must lie in (0, 0.5], got {}",
            config.flow.dt_safety
        )));
    }
    validate_checks(config, grid)?;
    let theta0 = resolve_theta0(config, grid)?;
    let u0 = generate_initial_data(&config.initial_data, grid)?;

    let solver = SolverConfig {
        dt_safety: config.flow.dt_safety,
        scheme: config.flow.scheme,
        t_end: config.flow.t_end,
        snapshot_stride: config.flow.snapshot_stride,
        boundary: BoundaryMode::Free,
    };
    let state = FlowState::new(u0, 0.0, theta0)?;
    let mut traj = evolve(state, &solver)?;
    if let InitialData::SeededConvex { seed, .. } = &config.initial_data {
        traj.provenance_mut().seed = Some(*seed);
    }
    fs::create_dir_all(out_dir).map_err(IoError::Io)?;
    save_trajectory(&traj, &trajectory_dir(out_dir))?;

    let mut reports = Vec::with_capacity(config.checks.len());
    let mut failures = Vec::new();
    for check in &config.checks {
        let report = run_check(check, &traj)?;
        let ok = match report.status {
            CheckStatus::Pass => !check.expects_not_applicable(),
            CheckStatus::NotApplicable => check.expects_not_applicable(),
            CheckStatus::Fail => false,
        };
        if !ok {
            failures.push(format!(
                "{}: status {:?}, margin {:.6e}",
                report.check_name, report.status, report.worst_margin
            ));
        }
        reports.push(report);
    }

    let summary = RunSummary {
        exit_code: if failures.is_empty() { 0 } else { 1 },
        reports,
        failures,
    };
    let report_json = serde_json::to_string_pretty(&summary.reports).map_err(IoError::Json)?;
    fs::write(out_dir.join("report.json"), report_json).map_err(IoError::Io)?;
    let mut csv = String::from(EstimateReport::csv_header());
    csv.push('\n');
    for r in &summary.reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    fs::write(out_dir.join("report.csv"), csv).map_err(IoError::Io)?;
    if !summary.failures.is_empty() {
        let failures_json =
            serde_json::to_string_pretty(&summary.failures).map_err(IoError::Json)?;
        fs::write(out_dir.join("failures.json"), failures_json).map_err(IoError::Io)?;
    }
    Ok(summary)
}
