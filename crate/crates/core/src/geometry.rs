//! Pointwise differential geometry of the gradient graph (x, Du): Hessian
//! eigen-decomposition, Lagrangian angle, induced metric g = I + (D^2 u)^2,
//! volume element b = V^{1/n}, covariant gradient, and the parabolic
//! operator L = d/dt - g^{ij} d_ij.

use crate::flow::Trajectory;
use crate::grid::{fd_gradient, fd_hessian, ScalarField};
use std::fmt;

/// Absolute symmetry tolerance accepted by `eigen_sym`.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    Asymmetric { max_deviation: f64 },
    BadDim(usize),
    TimeIndexAtEnd { index: usize, len: usize },
    NonUniformTimes { index: usize },
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::Asymmetric { max_deviation } => {
                write!(f, "matrix is not symmetric (max |S_ij - S_ji| = {max_deviation:.3e})")
            }
            GeometryError::BadDim(d) => write!(f, "matrix dimension must be 1..=3, got {d}"),
            GeometryError::TimeIndexAtEnd { index, len } => write!(
                f,
                "time index {index} needs both temporal neighbors in a trajectory of {len} snapshots"
            ),
            GeometryError::NonUniformTimes { index } => {
                write!(f, "snapshot times are not uniformly spaced near index {index}")
            }
        }
    }
}

impl std::error::Error for GeometryError {}

/// Eigenvalues (ascending) and orthonormal eigenvector frame of a symmetric
/// matrix. `frame` holds the eigenvectors as columns; only the leading
/// `dim` rows/columns are meaningful.
#[derive(Debug, Clone, Copy)]
pub struct HessianSpectrum {
    dim: usize,
    eigenvalues: [f64; 3],
    frame: [[f64; 3]; 3],
}

impl HessianSpectrum {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues[..self.dim]
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues[self.dim - 1]
    }

    /// Column k of the frame.
    pub fn eigenvector(&self, k: usize) -> [f64; 3] {
        [self.frame[0][k], self.frame[1][k], self.frame[2][k]]
    }

    /// Q * diag(w(lambda)) * Q^T for a scalar function of the eigenvalues.
    fn conjugate_diag(&self, w: impl Fn(f64) -> f64) -> [[f64; 3]; 3] {
        let d = self.dim;
        let mut out = [[0.0; 3]; 3];
        for k in 0..d {
            let wk = w(self.eigenvalues[k]);
            for i in 0..d {
                for j in 0..d {
                    out[i][j] += wk * self.frame[i][k] * self.frame[j][k];
                }
            }
        }
        out
    }
}

/// Symmetrize-check + eigen-decompose. Closed form for dim 1 and 2, cyclic
/// Jacobi rotations for dim 3. Eigenvalues ascend; each eigenvector's
/// largest-magnitude entry is made positive (first such entry on ties).
pub fn eigen_sym(matrix: &[[f64; 3]; 3], dim: usize) -> Result<HessianSpectrum, GeometryError> {
    if !(1..=3).contains(&dim) {
        return Err(GeometryError::BadDim(dim));
    }
    let mut max_dev = 0.0f64;
    for i in 0..dim {
        for j in (i + 1)..dim {
            max_dev = max_dev.max((matrix[i][j] - matrix[j][i]).abs());
        }
    }
    if max_dev > SYMMETRY_TOL {
        return Err(GeometryError::Asymmetric { max_deviation: max_dev });
    }
    Ok(eigen_sym_unchecked(matrix, dim))
}

/// Eigen-decomposition assuming exact symmetry of the leading block.
pub fn eigen_sym_unchecked(matrix: &[[f64; 3]; 3], dim: usize) -> HessianSpectrum {
    let mut spec = match dim {
        1 => HessianSpectrum {
            dim: 1,
            eigenvalues: [matrix[0][0], 0.0, 0.0],
            frame: identity3(),
        },
        2 => eigen2(matrix),
        _ => eigen3_jacobi(matrix),
    };
    sort_and_orient(&mut spec);
    spec
}

fn identity3() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn eigen2(m: &[[f64; 3]; 3]) -> HessianSpectrum {
    let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
    if b == 0.0 {
        return HessianSpectrum { dim: 2, eigenvalues: [a, c, 0.0], frame: identity3() };
    }
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (s, co) = theta.sin_cos();
    // Columns of the rotation are the eigenvectors.
    let v0 = [co, s];
    let v1 = [-s, co];
    let ray = |v: &[f64; 2]| {
        let sv0 = a * v[0] + b * v[1];
        let sv1 = b * v[0] + c * v[1];
        v[0] * sv0 + v[1] * sv1
    };
    let frame = [[v0[0], v1[0], 0.0], [v0[1], v1[1], 0.0], [0.0, 0.0, 1.0]];
    HessianSpectrum { dim: 2, eigenvalues: [ray(&v0), ray(&v1), 0.0], frame }
}

fn off_norm(m: &[[f64; 3]; 3]) -> f64 {
    (m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2]).sqrt()
}

fn frobenius(m: &[[f64; 3]; 3]) -> f64 {
    let mut s = 0.0;
    for row in m.iter().take(3) {
        for v in row.iter().take(3) {
            s += v * v;
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi sweeps; converged when the off-diagonal norm drops below
/// 1e-14 times the Frobenius norm of the input.
fn eigen3_jacobi(m: &[[f64; 3]; 3]) -> HessianSpectrum {
    let mut a = *m;
    let mut q = identity3();
    let scale = frobenius(m);
    if scale == 0.0 {
        return HessianSpectrum { dim: 3, eigenvalues: [0.0; 3], frame: q };
    }
    let target = 1e-14 * scale;
    for _sweep in 0..64 {
        if off_norm(&a) < target {
            break;
        }
        for &(p, r) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apr = a[p][r];
            if apr == 0.0 {
                continue;
            }
            let tau = (a[r][r] - a[p][p]) / (2.0 * apr);
            let t = if tau >= 0.0 {
                1.0 / (tau + (1.0 + tau * tau).sqrt())
            } else {
                -1.0 / (-tau + (1.0 + tau * tau).sqrt())
            };
            let cth = 1.0 / (1.0 + t * t).sqrt();
            let sth = t * cth;
            // A <- J^T A J with the rotation in the (p, r) plane.
            for k in 0..3 {
                let akp = a[k][p];
                let akr = a[k][r];
                a[k][p] = cth * akp - sth * akr;
                a[k][r] = sth * akp + cth * akr;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let ark = a[r][k];
                a[p][k] = cth * apk - sth * ark;
                a[r][k] = sth * apk + cth * ark;
            }
            // Re-symmetrize the rotated pair exactly.
            a[p][r] = 0.5 * (a[p][r] + a[r][p]);
            a[r][p] = a[p][r];
            for k in 0..3 {
                let qkp = q[k][p];
                let qkr = q[k][r];
                q[k][p] = cth * qkp - sth * qkr;
                q[k][r] = sth * qkp + cth * qkr;
            }
        }
    }
    HessianSpectrum { dim: 3, eigenvalues: [a[0][0], a[1][1], a[2][2]], frame: q }
}

fn sort_and_orient(spec: &mut HessianSpectrum) {
    let d = spec.dim;
    // Insertion sort of eigenvalue/column pairs (d <= 3).
    for i in 1..d {
        let mut j = i;
        while j > 0 && spec.eigenvalues[j - 1] > spec.eigenvalues[j] {
            spec.eigenvalues.swap(j - 1, j);
            for row in 0..d {
                spec.frame[row].swap(j - 1, j);
            }
            j -= 1;
        }
    }
    // Deterministic sign: the first entry within round-off of the largest
    // magnitude decides the orientation (plain argmax would let a 1-ulp
    // difference flip the convention on symmetric ties).
    for k in 0..d {
        let max_mag = (0..d).map(|i| spec.frame[i][k].abs()).fold(0.0f64, f64::max);
        let best = (0..d)
            .find(|&i| spec.frame[i][k].abs() >= max_mag * (1.0 - 1e-12))
            .unwrap_or(0);
        if spec.frame[best][k] < 0.0 {
            for row in spec.frame.iter_mut().take(d) {
                row[k] = -row[k];
            }
        }
    }
}

/// The Lagrangian angle: sum of arctan of the Hessian eigenvalues.
pub fn lagrangian_angle(spectrum: &HessianSpectrum) -> f64 {
    spectrum.eigenvalues().iter().map(|l| l.atan()).sum()
}

/// Induced metric data of the gradient graph at a point.
#[derive(Debug, Clone, Copy)]
pub struct MetricData {
    dim: usize,
    g: [[f64; 3]; 3],
    g_inv: [[f64; 3]; 3],
    volume: f64,
    b: f64,
}

impl MetricData {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn g(&self) -> &[[f64; 3]; 3] {
        &self.g
    }

    pub fn g_inv(&self) -> &[[f64; 3]; 3] {
        &self.g_inv
    }

    /// V = prod (1 + lambda_i^2)^{1/2} = sqrt(det g), always >= 1.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// b = V^{1/n}, always >= 1.
    pub fn b(&self) -> f64 {
        self.b
    }
}

/// g = Q diag(1 + lambda^2) Q^T, its inverse, and the volume element.
/// V and b are computed through log1p sums so large eigenvalues cannot
/// overflow the product.
pub fn induced_metric(spectrum: &HessianSpectrum) -> MetricData {
    let n = spectrum.dim();
    let g = spectrum.conjugate_diag(|l| 1.0 + l * l);
    let g_inv = spectrum.conjugate_diag(|l| 1.0 / (1.0 + l * l));
    let log_det: f64 = spectrum.eigenvalues().iter().map(|l| (l * l).ln_1p()).sum();
    let volume = (0.5 * log_det).exp();
    let b = (0.5 * log_det / n as f64).exp();
    MetricData { dim: n, g, g_inv, volume, b }
}

/// The squared covariant gradient g^{ij} f_i f_j.
pub fn covariant_grad_sq(metric: &MetricData, grad_f: &[f64]) -> f64 {
    let d = metric.dim;
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += metric.g_inv[i][j] * grad_f[i] * grad_f[j];
        }
    }
    s
}

/// b = V^{1/n} of the discrete Hessian, as a field.
pub fn b_field(u: &ScalarField) -> ScalarField {
    let grid = *u.grid();
    let d = grid.dim();
    let hess = fd_hessian(u);
    let mut out = ScalarField::zeros(grid);
    for node in 0..grid.node_count() {
        let spec = eigen_sym_unchecked(&hess.full_at(node), d);
        let log_det: f64 = spec.eigenvalues().iter().map(|l| (l * l).ln_1p()).sum();
        out.values_mut()[node] = (0.5 * log_det / d as f64).exp();
    }
    out
}

/// The Lagrangian angle of the discrete Hessian, as a field.
pub fn theta_field(u: &ScalarField) -> ScalarField {
    let grid = *u.grid();
    let d = grid.dim();
    let hess = fd_hessian(u);
    let mut out = ScalarField::zeros(grid);
    for node in 0..grid.node_count() {
        let spec = eigen_sym_unchecked(&hess.full_at(node), d);
        out.values_mut()[node] = lagrangian_angle(&spec);
    }
    out
}

/// Apply L = d/dt - g^{ij} d_ij to a derived field along a trajectory.
///
/// The derived field is recomputed from the snapshots at `time_index - 1`,
/// `time_index`, and `time_index + 1`; the time derivative is the central
/// difference over those snapshots and the metric comes from the Hessian of
/// the middle snapshot of u itself.
pub fn apply_l<F>(
    traj: &Trajectory,
    derive: F,
    time_index: usize,
) -> Result<ScalarField, GeometryError>
where
    F: Fn(&ScalarField) -> ScalarField,
{
    let len = traj.times().len();
    if time_index == 0 || time_index + 1 >= len {
        return Err(GeometryError::TimeIndexAtEnd { index: time_index, len });
    }
    let dt_fwd = traj.times()[time_index + 1] - traj.times()[time_index];
    let dt_bwd = traj.times()[time_index] - traj.times()[time_index - 1];
    if (dt_fwd - dt_bwd).abs() > 1e-9 * dt_fwd.max(dt_bwd) {
        return Err(GeometryError::NonUniformTimes { index: time_index });
    }
    let f_prev = derive(traj.snapshot(time_index - 1));
    let f_mid = derive(traj.snapshot(time_index));
    let f_next = derive(traj.snapshot(time_index + 1));

    let u_mid = traj.snapshot(time_index);
    let grid = *u_mid.grid();
    let d = grid.dim();
    let hess_u = fd_hessian(u_mid);
    let hess_f = fd_hessian(&f_mid);

    let mut out = ScalarField::zeros(grid);
    for node in 0..grid.node_count() {
        let spec = eigen_sym_unchecked(&hess_u.full_at(node), d);
        let metric = induced_metric(&spec);
        let mut contraction = 0.0;
        for i in 0..d {
            for j in 0..d {
                contraction += metric.g_inv[i][j] * hess_f.entry(node, i, j);
            }
        }
        let dt_f = (f_next.at(node) - f_prev.at(node)) / (dt_fwd + dt_bwd);
        out.values_mut()[node] = dt_f - contraction;
    }
    Ok(out)
}

/// Squared-gradient field |Du|^2 (Euclidean), a common hypothesis quantity.
pub fn grad_norm_sq_field(u: &ScalarField) -> ScalarField {
    let grid = *u.grid();
    let grad = fd_gradient(u);
    let mut out = ScalarField::zeros(grid);
    for node in 0..grid.node_count() {
        out.values_mut()[node] = grad.norm_sq_at(node);
    }
    out
}
