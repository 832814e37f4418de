//! Parabolic rescaling u_lambda(x, t) = u(lambda (x - x0), lambda^2 t) /
//! lambda^2, the growth-at-antiquity ratio against its smallness threshold
//! 1/(6 sqrt(n) + 2)^2, and least-squares quadratic fitting to quantify the
//! distance to the rigidity conclusion.

use crate::flow::{FlowError, Provenance, Trajectory};
use crate::grid::{BallMask, GridSpec, ScalarField};
use crate::linsolve::solve_dense_spd;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug)]
pub enum LiouvilleError {
    BadLambda(f64),
    Coverage { node: usize, coords: Vec<f64>, time: f64 },
    NodeCount { needed: usize, got: usize },
    RankDeficient(String),
    BadParameter(String),
    Flow(FlowError),
}

impl fmt::Display for LiouvilleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LiouvilleError::BadLambda(l) => write!(f, "rescale factor must be positive, got {l}"),
            LiouvilleError::Coverage { node, coords, time } => write!(
                f,
                "preimage of target node {node} at {coords:?}, t = {time} escapes the source domain"
            ),
            LiouvilleError::NodeCount { needed, got } => write!(
                f,
                "quadratic fit needs at least {needed} mask nodes, got {got}"
            ),
            LiouvilleError::RankDeficient(detail) => {
                write!(f, "quadratic fit design is rank-deficient: {detail}")
            }
            LiouvilleError::BadParameter(m) => write!(f, "{m}"),
            LiouvilleError::Flow(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for LiouvilleError {}

impl From<FlowError> for LiouvilleError {
    fn from(e: FlowError) -> Self {
        LiouvilleError::Flow(e)
    }
}

/// Parameters of one parabolic rescaling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RescaleSpec {
    pub lambda: f64,
    pub x0: Vec<f64>,
}

impl RescaleSpec {
    pub fn new(lambda: f64, x0: Vec<f64>) -> Result<Self, LiouvilleError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(LiouvilleError::BadLambda(lambda));
        }
        Ok(RescaleSpec { lambda, x0 })
    }
}

// Snap tolerance for interpolation coordinates: an offset within this
// fraction of a cell collapses onto the node, which keeps aligned rescales
// bit-exact.
const SNAP: f64 = 1e-9;

fn interp_weights(s: f64, max_index: usize) -> Result<(usize, f64), ()> {
    if s < -SNAP || s > max_index as f64 + SNAP {
        return Err(());
    }
    let i0 = s.floor().clamp(0.0, (max_index - 1) as f64);
    let mut base = i0 as usize;
    let mut frac = s - i0;
    if frac < SNAP {
        frac = 0.0;
    } else if frac > 1.0 - SNAP {
        base += 1;
        frac = 0.0;
        if base == max_index {
            return Ok((base - 1, 1.0));
        }
    }
    Ok((base, frac))
}

/// Sample a trajectory at an arbitrary space-time point: multilinear in
/// space, linear in time. Offsets within 1e-9 of a node/snapshot collapse
/// onto it exactly.
pub fn sample_trajectory(traj: &Trajectory, x: &[f64], t: f64) -> Result<f64, ()> {
    let grid = traj.grid();
    let d = grid.dim();
    let h = grid.spacing();
    let m = grid.nodes_per_axis();

    let mut bases = [0usize; 3];
    let mut fracs = [0.0f64; 3];
    for axis in 0..d {
        let s = (x[axis] + grid.half_width()) / h;
        let (base, frac) = interp_weights(s, m - 1)?;
        bases[axis] = base;
        fracs[axis] = frac;
    }

    let (k, tau) = if traj.len() == 1 {
        if (t - traj.times()[0]).abs() > SNAP * traj.times()[0].abs().max(1.0) {
            return Err(());
        }
        (0usize, 0.0f64)
    } else {
        let dt = traj.snapshot_dt();
        let s = (t - traj.times()[0]) / dt;
        interp_weights(s, traj.len() - 1)?
    };

    let spatial = |field: &ScalarField| -> f64 {
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut idx = [0usize; 3];
            for axis in 0..d {
                if corner & (1 << axis) != 0 {
                    weight *= fracs[axis];
                    idx[axis] = bases[axis] + 1;
                } else {
                    weight *= 1.0 - fracs[axis];
                    idx[axis] = bases[axis];
                }
            }
            if weight != 0.0 {
                acc += weight * field.at(grid.flat_index(&idx[..d]));
            }
        }
        acc
    };

    let v0 = spatial(traj.snapshot(k));
    if tau == 0.0 {
        Ok(v0)
    } else {
        let v1 = spatial(traj.snapshot(k + 1));
        Ok((1.0 - tau) * v0 + tau * v1)
    }
}

/// Rescale a trajectory: the target carries times t_k / lambda^2 and values
/// u(lambda (x - x0), t_k) / lambda^2, with multilinear space interpolation
/// and exact time mapping. Theta_0 is carried over unchanged. Every
/// preimage must lie inside the source cube.
pub fn rescale(
    traj: &Trajectory,
    spec: &RescaleSpec,
    target_grid: GridSpec,
) -> Result<Trajectory, LiouvilleError> {
    if !(spec.lambda.is_finite() && spec.lambda > 0.0) {
        return Err(LiouvilleError::BadLambda(spec.lambda));
    }
    let d = traj.grid().dim();
    if target_grid.dim() != d {
        return Err(LiouvilleError::BadParameter(format!(
            "target grid dimension {} does not match source dimension {d}",
            target_grid.dim()
        )));
    }
    let lambda = spec.lambda;
    let lam_sq = lambda * lambda;
    let inv_sq = 1.0 / lam_sq;

    let times: Vec<f64> = traj.times().iter().map(|t| t * inv_sq).collect();
    let mut snapshots = Vec::with_capacity(times.len());
    for (k, &t_src) in traj.times().iter().enumerate() {
        let mut values = Vec::with_capacity(target_grid.node_count());
        for node in 0..target_grid.node_count() {
            let x = target_grid.node_coords(node);
            let mut pre = [0.0f64; 3];
            for axis in 0..d {
                let x0 = spec.x0.get(axis).copied().unwrap_or(0.0);
                pre[axis] = lambda * (x[axis] - x0);
            }
            let v = sample_trajectory(traj, &pre[..d], t_src).map_err(|_| {
                LiouvilleError::Coverage {
                    node,
                    coords: x[..d].to_vec(),
                    time: times[k],
                }
            })?;
            values.push(inv_sq * v);
        }
        snapshots.push(
            ScalarField::from_values(target_grid, values)
                .map_err(|e| LiouvilleError::BadParameter(format!("rescaled snapshot: {e}")))?,
        );
    }
    let provenance = Provenance {
        note: Some(format!(
            "rescaled from source (lambda = {lambda}, x0 = {:?})",
            &spec.x0
        )),
        ..traj.provenance().clone()
    };
    Ok(Trajectory::new(target_grid, traj.theta0(), times, snapshots, provenance)?)
}

/// The growth-condition threshold 1/(6 sqrt(n) + 2)^2.
pub fn growth_threshold(n: usize) -> f64 {
    (6.0 * (n as f64).sqrt() + 2.0).powi(-2)
}

/// Per-snapshot growth ratios sup_mask |u| / (|x|^2 + R0), with the
/// theorem's smallness threshold attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthReport {
    pub r0: f64,
    pub threshold: f64,
    pub ratios: Vec<GrowthSample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthSample {
    pub t: f64,
    pub ratio: f64,
}

impl GrowthReport {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().fold(0.0f64, |m, s| m.max(s.ratio))
    }

    pub fn csv_header() -> &'static str {
        "t,ratio,threshold"
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::csv_header());
        out.push('\n');
        for s in &self.ratios {
            out.push_str(&format!("{:.9},{:.12e},{:.12e}\n", s.t, s.ratio, self.threshold));
        }
        out
    }
}

pub fn growth_ratio(
    traj: &Trajectory,
    r0: f64,
    mask: &BallMask,
) -> Result<GrowthReport, LiouvilleError> {
    if !(r0 > 0.0) {
        return Err(LiouvilleError::BadParameter(format!("R0 must be positive, got {r0}")));
    }
    if mask.grid() != traj.grid() {
        return Err(LiouvilleError::BadParameter(
            "mask grid does not match trajectory grid".into(),
        ));
    }
    let grid = traj.grid();
    let d = grid.dim();
    let ratios = traj
        .times()
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let snap = traj.snapshot(k);
            let mut sup = 0.0f64;
            for &node in mask.members() {
                let x = grid.node_coords(node);
                let xsq: f64 = x[..d].iter().map(|v| v * v).sum();
                sup = sup.max(snap.at(node).abs() / (xsq + r0));
            }
            GrowthSample { t, ratio: sup }
        })
        .collect();
    Ok(GrowthReport { r0, threshold: growth_threshold(d), ratios })
}

/// Least-squares fit of a field by (1/2) x^T A x + b.x + c over a mask.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub a: Vec<Vec<f64>>,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub residual_sup: f64,
}

impl QuadraticFit {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.linear.len();
        let mut s = self.constant;
        for i in 0..d {
            s += self.linear[i] * x[i];
            for j in 0..d {
                s += 0.5 * self.a[i][j] * x[i] * x[j];
            }
        }
        s
    }
}

/// Number of quadratic coefficients in dimension d: 1 + d + d(d+1)/2.
pub fn quadratic_coeff_count(d: usize) -> usize {
    1 + d + d * (d + 1) / 2
}

pub fn quadratic_fit(field: &ScalarField, mask: &BallMask) -> Result<QuadraticFit, LiouvilleError> {
    let grid = field.grid();
    if mask.grid() != grid {
        return Err(LiouvilleError::BadParameter("mask grid does not match field grid".into()));
    }
    let d = grid.dim();
    let p = quadratic_coeff_count(d);
    let nodes = mask.members();
    if nodes.len() < p {
        return Err(LiouvilleError::NodeCount { needed: p, got: nodes.len() });
    }

    // Basis: 1, x_i, x_i^2 / 2 (diagonal), x_i x_j for i < j (off-diagonal).
    let basis_row = |x: &[f64], row: &mut [f64]| {
        row[0] = 1.0;
        for i in 0..d {
            row[1 + i] = x[i];
        }
        let mut slot = 1 + d;
        for i in 0..d {
            row[slot] = 0.5 * x[i] * x[i];
            slot += 1;
        }
        for i in 0..d {
            for j in (i + 1)..d {
                row[slot] = x[i] * x[j];
                slot += 1;
            }
        }
    };

    let mut ata = vec![0.0f64; p * p];
    let mut atb = vec![0.0f64; p];
    let mut row = vec![0.0f64; p];
    for &node in nodes {
        let x = grid.node_coords(node);
        basis_row(&x[..d], &mut row);
        let y = field.at(node);
        for i in 0..p {
            atb[i] += row[i] * y;
            for j in 0..p {
                ata[i * p + j] += row[i] * row[j];
            }
        }
    }
    let sol = solve_dense_spd(&mut ata, &mut atb, p).map_err(LiouvilleError::RankDeficient)?;

    let constant = sol[0];
    let linear = sol[1..1 + d].to_vec();
    let mut a = vec![vec![0.0f64; d]; d];
    let mut slot = 1 + d;
    for (i, row_a) in a.iter_mut().enumerate().take(d) {
        row_a[i] = sol[slot];
        slot += 1;
    }
    for i in 0..d {
        for j in (i + 1)..d {
            a[i][j] = sol[slot];
            a[j][i] = sol[slot];
            slot += 1;
        }
    }
    let fit = QuadraticFit { a, linear, constant, residual_sup: 0.0 };
    let mut residual_sup = 0.0f64;
    for &node in nodes {
        let x = grid.node_coords(node);
        residual_sup = residual_sup.max((field.at(node) - fit.eval(&x[..d])).abs());
    }
    Ok(QuadraticFit { residual_sup, ..fit })
}
