//! Rectangular grid descriptors, sampled fields, finite-difference stencils,
//! and ball masks for dimensions 1-3.
//!
//! Node ordering is row-major with axis 1 slowest: for dim 3 the flat index
//! of node (i1, i2, i3) is `(i1 * m + i2) * m + i3` where `m` is
//! `nodes_per_axis`. The persistence format relies on this ordering.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Errors from grid construction and stencil configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum GridError {
    BadDim(usize),
    BadNodeCount(usize),
    BadHalfWidth(f64),
    BadRadius(f64),
    EmptyMask,
    NonFiniteValue { node: usize },
    LengthMismatch { expected: usize, got: usize },
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridError::BadDim(d) => write!(f, "grid dimension must be 1, 2 or 3, got {d}"),
            GridError::BadNodeCount(m) => {
                write!(f, "nodes_per_axis must be an odd integer >= 5, got {m}")
            }
            GridError::BadHalfWidth(a) => write!(f, "half_width must be positive, got {a}"),
            GridError::BadRadius(r) => write!(f, "ball radius must be positive, got {r}"),
            GridError::EmptyMask => write!(f, "ball mask contains no grid nodes"),
            GridError::NonFiniteValue { node } => {
                write!(f, "field value at node {node} is not finite")
            }
            GridError::LengthMismatch { expected, got } => {
                write!(f, "value array length {got} does not match grid size {expected}")
            }
        }
    }
}

impl std::error::Error for GridError {}

/// Descriptor of a uniform grid on the cube `[-a, a]^dim`.
///
/// `nodes_per_axis` is odd so the origin is always a grid node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    half_width: f64,
    nodes_per_axis: usize,
}

impl GridSpec {
    pub fn new(dim: usize, half_width: f64, nodes_per_axis: usize) -> Result<Self, GridError> {
        if !(1..=3).contains(&dim) {
            return Err(GridError::BadDim(dim));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(GridError::BadHalfWidth(half_width));
        }
        if nodes_per_axis < 5 || nodes_per_axis % 2 == 0 {
            return Err(GridError::BadNodeCount(nodes_per_axis));
        }
        Ok(GridSpec { dim, half_width, nodes_per_axis })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    /// Grid spacing h = 2a / (m - 1).
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.nodes_per_axis - 1) as f64
    }

    /// Total number of nodes, m^dim.
    pub fn node_count(&self) -> usize {
        self.nodes_per_axis.pow(self.dim as u32)
    }

    /// Coordinate of axis index i: -a + i*h.
    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Multi-index of a flat node index, axis 1 slowest.
    pub fn multi_index(&self, node: usize) -> [usize; 3] {
        let m = self.nodes_per_axis;
        let mut idx = [0usize; 3];
        let mut rest = node;
        for axis in (0..self.dim).rev() {
            idx[axis] = rest % m;
            rest /= m;
        }
        idx
    }

    /// Flat index of a multi-index.
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let m = self.nodes_per_axis;
        let mut flat = 0usize;
        for axis in 0..self.dim {
            flat = flat * m + idx[axis];
        }
        flat
    }

    /// Cartesian coordinates of a node.
    pub fn node_coords(&self, node: usize) -> [f64; 3] {
        let idx = self.multi_index(node);
        let mut x = [0.0f64; 3];
        for axis in 0..self.dim {
            x[axis] = self.axis_coord(idx[axis]);
        }
        x
    }

    /// Flat index of the origin node (center of the grid).
    pub fn origin_node(&self) -> usize {
        let mid = (self.nodes_per_axis - 1) / 2;
        let idx = [mid; 3];
        self.flat_index(&idx[..self.dim])
    }

    /// True when the node touches no face of the cube.
    pub fn is_interior(&self, node: usize) -> bool {
        let idx = self.multi_index(node);
        (0..self.dim).all(|a| idx[a] > 0 && idx[a] < self.nodes_per_axis - 1)
    }

    /// Flat indices of all nodes on the cube faces.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&p| !self.is_interior(p)).collect()
    }

    /// Axis-adjacent neighbors of a node that exist in the grid.
    pub fn neighbors(&self, node: usize) -> Vec<usize> {
        let idx = self.multi_index(node);
        let mut out = Vec::with_capacity(2 * self.dim);
        for axis in 0..self.dim {
            if idx[axis] > 0 {
                let mut j = idx;
                j[axis] -= 1;
                out.push(self.flat_index(&j[..self.dim]));
            }
            if idx[axis] < self.nodes_per_axis - 1 {
                let mut j = idx;
                j[axis] += 1;
                out.push(self.flat_index(&j[..self.dim]));
            }
        }
        out
    }

    /// Stride between consecutive indices along an axis in the flat layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.nodes_per_axis.pow((self.dim - 1 - axis) as u32)
    }
}

/// A scalar function sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    /// Field with all values zero.
    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField { grid, values: vec![0.0; grid.node_count()] }
    }

    /// Build from a value array, validating length and finiteness.
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.node_count() {
            return Err(GridError::LengthMismatch {
                expected: grid.node_count(),
                got: values.len(),
            });
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFiniteValue { node });
        }
        Ok(ScalarField { grid, values })
    }

    /// Sample a function of the node coordinates.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|p| {
                let x = grid.node_coords(p);
                f(&x[..grid.dim()])
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Index of the first non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// max - min over a set of nodes.
    pub fn oscillation_over(&self, nodes: &[usize]) -> f64 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &p in nodes {
            lo = lo.min(self.values[p]);
            hi = hi.max(self.values[p]);
        }
        hi - lo
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }
}

/// A vector-valued function sampled on a grid; layout is node-major,
/// `values[node * dim + component]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        VectorField { grid, values: vec![0.0; grid.node_count() * grid.dim()] }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[node * d..(node + 1) * d]
    }

    pub fn set(&mut self, node: usize, component: usize, value: f64) {
        let d = self.grid.dim();
        self.values[node * d + component] = value;
    }

    pub fn norm_sq_at(&self, node: usize) -> f64 {
        self.at(node).iter().map(|v| v * v).sum()
    }

    /// One component as a scalar field.
    pub fn component(&self, c: usize) -> ScalarField {
        let d = self.grid.dim();
        let values = (0..self.grid.node_count()).map(|p| self.values[p * d + c]).collect();
        ScalarField { grid: self.grid, values }
    }
}

/// A symmetric-matrix-valued function sampled on a grid. Entries are stored
/// packed (upper triangle, row order), so H_ij == H_ji holds bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrixField {
    grid: GridSpec,
    values: Vec<f64>,
}

/// Packed length of a symmetric dim x dim matrix.
pub fn sym_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Packed offset of entry (i, j), i <= j, for the given dimension.
fn sym_offset(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    // Row i starts after rows 0..i: sum of (dim - k) for k < i.
    i * dim - i * (i + 1) / 2 + j
}

impl SymMatrixField {
    pub fn zeros(grid: GridSpec) -> Self {
        SymMatrixField { grid, values: vec![0.0; grid.node_count() * sym_len(grid.dim())] }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn entry(&self, node: usize, i: usize, j: usize) -> f64 {
        let s = sym_len(self.grid.dim());
        self.values[node * s + sym_offset(self.grid.dim(), i, j)]
    }

    pub fn set_entry(&mut self, node: usize, i: usize, j: usize, value: f64) {
        let s = sym_len(self.grid.dim());
        self.values[node * s + sym_offset(self.grid.dim(), i, j)] = value;
    }

    /// Full 3x3-padded matrix at a node (unused rows/cols zero).
    pub fn full_at(&self, node: usize) -> [[f64; 3]; 3] {
        let d = self.grid.dim();
        let mut m = [[0.0; 3]; 3];
        for i in 0..d {
            for j in 0..d {
                m[i][j] = self.entry(node, i, j);
            }
        }
        m
    }
}

// --- finite-difference stencils -------------------------------------------
//
// First derivative: central (f[i+1] - f[i-1]) / 2h at interior indices,
// one-sided (-3 f[i] + 4 f[i+1] - f[i+2]) / 2h at the faces. Second
// derivative: (f[i-1] - 2 f[i] + f[i+1]) / h^2 interior, four-point
// (2 f[i] - 5 f[i+1] + 4 f[i+2] - f[i+3]) / h^2 at the faces. All are
// second-order and exact on quadratics. Mixed second derivatives compose
// two first-derivative stencils along distinct axes in a fixed order.

fn d1_along(values: &[f64], grid: &GridSpec, axis: usize, node: usize, idx: &[usize; 3]) -> f64 {
    let m = grid.nodes_per_axis();
    let h = grid.spacing();
    let s = grid.stride(axis);
    let i = idx[axis];
    if i == 0 {
        (-3.0 * values[node] + 4.0 * values[node + s] - values[node + 2 * s]) / (2.0 * h)
    } else if i == m - 1 {
        (3.0 * values[node] - 4.0 * values[node - s] + values[node - 2 * s]) / (2.0 * h)
    } else {
        (values[node + s] - values[node - s]) / (2.0 * h)
    }
}

fn d2_along(values: &[f64], grid: &GridSpec, axis: usize, node: usize, idx: &[usize; 3]) -> f64 {
    let m = grid.nodes_per_axis();
    let h = grid.spacing();
    let s = grid.stride(axis);
    let i = idx[axis];
    let h2 = h * h;
    if i == 0 {
        (2.0 * values[node] - 5.0 * values[node + s] + 4.0 * values[node + 2 * s]
            - values[node + 3 * s])
            / h2
    } else if i == m - 1 {
        (2.0 * values[node] - 5.0 * values[node - s] + 4.0 * values[node - 2 * s]
            - values[node - 3 * s])
            / h2
    } else {
        (values[node - s] - 2.0 * values[node] + values[node + s]) / h2
    }
}

/// Gradient of a scalar field: second-order central differences at interior
/// nodes, second-order one-sided differences at the faces.
pub fn fd_gradient(field: &ScalarField) -> VectorField {
    let grid = *field.grid();
    let d = grid.dim();
    let mut out = VectorField::zeros(grid);
    for node in 0..grid.node_count() {
        let idx = grid.multi_index(node);
        for axis in 0..d {
            out.set(node, axis, d1_along(field.values(), &grid, axis, node, &idx));
        }
    }
    out
}

/// Hessian of a scalar field. Pure second derivatives use the dedicated
/// stencils; mixed entries compose the first-derivative stencils along the
/// two axes (lower axis applied last). Each entry is computed once, so the
/// output is symmetric bit-exactly.
pub fn fd_hessian(field: &ScalarField) -> SymMatrixField {
    let grid = *field.grid();
    let d = grid.dim();
    let mut out = SymMatrixField::zeros(grid);
    // First derivatives along each axis, reused by the mixed entries.
    let mut first: Vec<Vec<f64>> = Vec::with_capacity(d);
    if d > 1 {
        for axis in 0..d {
            let mut comp = vec![0.0; grid.node_count()];
            for node in 0..grid.node_count() {
                let idx = grid.multi_index(node);
                comp[node] = d1_along(field.values(), &grid, axis, node, &idx);
            }
            first.push(comp);
        }
    }
    for node in 0..grid.node_count() {
        let idx = grid.multi_index(node);
        for i in 0..d {
            out.set_entry(node, i, i, d2_along(field.values(), &grid, i, node, &idx));
            for j in (i + 1)..d {
                let v = d1_along(&first[j], &grid, i, node, &idx);
                out.set_entry(node, i, j, v);
            }
        }
    }
    out
}

/// The set of grid nodes inside a Euclidean ball.
#[derive(Debug, Clone)]
pub struct BallMask {
    grid: GridSpec,
    center: [f64; 3],
    radius: f64,
    members: Vec<usize>,
    boundary: Vec<usize>,
}

impl BallMask {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn center(&self) -> &[f64] {
        &self.center[..self.grid.dim()]
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Member nodes (distance to center <= radius).
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Members with at least one existing non-member neighbor.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn contains(&self, node: usize) -> bool {
        self.members.binary_search(&node).is_ok()
    }

    /// Members all of whose existing neighbors are also members.
    pub fn interior_members(&self) -> Vec<usize> {
        self.members.iter().copied().filter(|p| !self.boundary.contains(p)).collect()
    }

    /// True when the ball lies inside the cube: `|center_i| + radius <= a`
    /// on every axis.
    pub fn fits_in_cube(&self) -> bool {
        let a = self.grid.half_width();
        (0..self.grid.dim()).all(|i| self.center[i].abs() + self.radius <= a + 1e-12)
    }
}

/// Build the node-membership set of the ball `|x - center| <= radius`, and
/// its discrete boundary.
pub fn make_ball_mask(grid: GridSpec, center: &[f64], radius: f64) -> Result<BallMask, GridError> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(GridError::BadRadius(radius));
    }
    let d = grid.dim();
    let mut c = [0.0f64; 3];
    c[..d].copy_from_slice(&center[..d]);
    let r2 = radius * radius;
    let mut members = Vec::new();
    for node in 0..grid.node_count() {
        let x = grid.node_coords(node);
        let dist2: f64 = (0..d).map(|i| (x[i] - c[i]) * (x[i] - c[i])).sum();
        if dist2 <= r2 {
            members.push(node);
        }
    }
    if members.is_empty() {
        return Err(GridError::EmptyMask);
    }
    let is_member = {
        let mut flags = vec![false; grid.node_count()];
        for &p in &members {
            flags[p] = true;
        }
        flags
    };
    let boundary = members
        .iter()
        .copied()
        .filter(|&p| grid.neighbors(p).iter().any(|&q| !is_member[q]))
        .collect();
    Ok(BallMask { grid, center: c, radius, members, boundary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(a: f64, m: usize) -> GridSpec {
        GridSpec::new(2, a, m).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(GridSpec::new(0, 1.0, 5).is_err());
        assert!(GridSpec::new(4, 1.0, 5).is_err());
        assert!(GridSpec::new(2, -1.0, 5).is_err());
        assert!(GridSpec::new(2, 1.0, 4).is_err());
        assert!(GridSpec::new(2, 1.0, 3).is_err());
        let g = GridSpec::new(3, 2.0, 9).unwrap();
        assert_eq!(g.node_count(), 729);
        assert_eq!(g.spacing(), 0.5);
    }

    #[test]
    fn spacing_times_intervals_is_diameter() {
        for (dim, a, m) in [(1, 1.0, 65), (2, 3.2, 65), (3, 10.0, 21)] {
            let g = GridSpec::new(dim, a, m).unwrap();
            let lhs = g.spacing() * (m - 1) as f64;
            assert!((lhs - 2.0 * a).abs() <= f64::EPSILON * 2.0 * a);
        }
    }

    #[test]
    fn origin_is_a_node() {
        let g = GridSpec::new(3, 1.5, 7).unwrap();
        let o = g.origin_node();
        let x = g.node_coords(o);
        assert_eq!(&x[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn flat_and_multi_index_round_trip() {
        let g = GridSpec::new(3, 1.0, 5).unwrap();
        for node in 0..g.node_count() {
            let idx = g.multi_index(node);
            assert_eq!(g.flat_index(&idx[..3]), node);
        }
        // Axis 1 slowest: stepping the last axis steps the flat index by 1.
        assert_eq!(g.flat_index(&[0, 0, 1]), 1);
        assert_eq!(g.flat_index(&[0, 1, 0]), 5);
        assert_eq!(g.flat_index(&[1, 0, 0]), 25);
    }

    #[test]
    fn gradient_exact_on_linear() {
        // u = 2 x1 - x2: gradient is (2, -1) at every node including faces.
        let g = grid2(1.0, 9);
        let u = ScalarField::from_fn(g, |x| 2.0 * x[0] - x[1]);
        let grad = fd_gradient(&u);
        for node in 0..g.node_count() {
            let v = grad.at(node);
            assert!((v[0] - 2.0).abs() < 1e-12, "node {node}: {v:?}");
            assert!((v[1] + 1.0).abs() < 1e-12, "node {node}: {v:?}");
        }
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = grid2(1.0, 7);
        let u = ScalarField::from_fn(g, |_| 7.0);
        let grad = fd_gradient(&u);
        for node in 0..g.node_count() {
            assert_eq!(grad.at(node), &[0.0, 0.0]);
        }
    }

    #[test]
    fn gradient_cubic_matches_rational_stencil_oracle() {
        // u(x) = x^3 on [-1, 1], h = 1/10, at the node x = 1/2. The exact
        // stencil value in rational arithmetic is
        // ((3/5)^3 - (2/5)^3) / (2/10) = 19/25 = 0.76, i.e. the analytic
        // derivative 3/4 plus the full truncation term h^2 * f'''/6 = h^2.
        let g = GridSpec::new(1, 1.0, 21).unwrap();
        let u = ScalarField::from_fn(g, |x| x[0] * x[0] * x[0]);
        let grad = fd_gradient(&u);
        let node = 15; // x = -1 + 15 * 0.1 = 0.5
        assert!((g.node_coords(node)[0] - 0.5).abs() < 1e-14);
        let oracle = 0.76; // frozen from the exact rational evaluation
        assert!((grad.at(node)[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn hessian_exact_on_quadratics() {
        // u = |x|^2 / 2 -> identity Hessian everywhere.
        let g = grid2(1.0, 9);
        let u = ScalarField::from_fn(g, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let hess = fd_hessian(&u);
        for node in 0..g.node_count() {
            assert!((hess.entry(node, 0, 0) - 1.0).abs() < 1e-11);
            assert!((hess.entry(node, 1, 1) - 1.0).abs() < 1e-11);
            assert!(hess.entry(node, 0, 1).abs() < 1e-11);
        }
    }

    #[test]
    fn hessian_mixed_term_exact() {
        let g = grid2(1.0, 9);
        let u = ScalarField::from_fn(g, |x| x[0] * x[1]);
        let hess = fd_hessian(&u);
        for node in 0..g.node_count() {
            if g.is_interior(node) {
                assert!(hess.entry(node, 0, 0).abs() < 1e-12);
                assert!(hess.entry(node, 1, 1).abs() < 1e-12);
                assert!((hess.entry(node, 0, 1) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hessian_symmetry_is_bit_exact() {
        let g = GridSpec::new(3, 1.0, 5).unwrap();
        let u = ScalarField::from_fn(g, |x| (x[0] * 1.3).sin() * (x[1] - 0.2).cos() * x[2].exp());
        let hess = fd_hessian(&u);
        for node in 0..g.node_count() {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(hess.entry(node, i, j).to_bits(), hess.entry(node, j, i).to_bits());
                }
            }
        }
    }

    #[test]
    fn hessian_second_order_convergence() {
        // u = sin(x1) sin(x2); max-norm interior error of the Hessian must
        // drop by a factor in [3.5, 4.5] per halving of h.
        let analytic = |x: &[f64], i: usize, j: usize| -> f64 {
            match (i, j) {
                (0, 0) | (1, 1) => -(x[0].sin() * x[1].sin()),
                _ => x[0].cos() * x[1].cos(),
            }
        };
        let mut errors = Vec::new();
        for m in [17usize, 33, 65] {
            let g = grid2(1.0, m);
            let u = ScalarField::from_fn(g, |x| x[0].sin() * x[1].sin());
            let hess = fd_hessian(&u);
            let mut err = 0.0f64;
            for node in 0..g.node_count() {
                if !g.is_interior(node) {
                    continue;
                }
                let x = g.node_coords(node);
                for i in 0..2 {
                    for j in i..2 {
                        err = err.max((hess.entry(node, i, j) - analytic(&x[..2], i, j)).abs());
                    }
                }
            }
            errors.push(err);
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..=4.5).contains(&ratio), "convergence ratio {ratio}");
        }
    }

    #[test]
    fn stencils_exact_on_random_quadratics() {
        // Total-degree-2 polynomials with seeded coefficients are
        // reproduced to round-off at every node, faces included.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for dim in 1..=3usize {
            let g = GridSpec::new(dim, 1.0, 9).unwrap();
            let mut a = [[0.0; 3]; 3];
            let mut b = [0.0; 3];
            for i in 0..dim {
                b[i] = next();
                for j in i..dim {
                    let v = next();
                    a[i][j] = v;
                    a[j][i] = v;
                }
            }
            let c = next();
            let u = ScalarField::from_fn(g, |x| {
                let mut s = c;
                for i in 0..dim {
                    s += b[i] * x[i];
                    for j in 0..dim {
                        s += 0.5 * a[i][j] * x[i] * x[j];
                    }
                }
                s
            });
            let grad = fd_gradient(&u);
            let hess = fd_hessian(&u);
            for node in 0..g.node_count() {
                let x = g.node_coords(node);
                for i in 0..dim {
                    let gi: f64 = b[i] + (0..dim).map(|j| a[i][j] * x[j]).sum::<f64>();
                    assert!((grad.at(node)[i] - gi).abs() < 1e-12);
                    for j in i..dim {
                        assert!((hess.entry(node, i, j) - a[i][j]).abs() < 1e-11);
                    }
                }
            }
        }
    }

    #[test]
    fn ball_mask_covers_all_nodes_when_radius_large() {
        let g = grid2(1.0, 5);
        let mask = make_ball_mask(g, &[0.0, 0.0], 2.0f64.sqrt() + 1e-9).unwrap();
        assert_eq!(mask.members().len(), g.node_count());
        assert!(mask.boundary().is_empty());
    }

    #[test]
    fn ball_mask_tiny_radius_is_origin_only() {
        let g = grid2(1.0, 5);
        let mask = make_ball_mask(g, &[0.0, 0.0], 0.2).unwrap();
        assert_eq!(mask.members(), &[g.origin_node()]);
    }

    #[test]
    fn ball_mask_count_matches_brute_force() {
        // 5x5 grid on [-1,1]^2, radius 1: brute-force distance test gives 13.
        let g = grid2(1.0, 5);
        let mask = make_ball_mask(g, &[0.0, 0.0], 1.0).unwrap();
        let brute: Vec<usize> = (0..g.node_count())
            .filter(|&p| {
                let x = g.node_coords(p);
                x[0] * x[0] + x[1] * x[1] <= 1.0
            })
            .collect();
        assert_eq!(mask.members(), &brute[..]);
        assert_eq!(mask.members().len(), 13);
    }

    #[test]
    fn ball_mask_boundary_consistency() {
        for radius in [0.4, 0.8, 1.3] {
            let g = grid2(1.5, 13);
            let mask = make_ball_mask(g, &[0.1, -0.2], radius).unwrap();
            let member = |p: usize| mask.contains(p);
            for &b in mask.boundary() {
                assert!(member(b));
                assert!(g.neighbors(b).iter().any(|&q| !member(q)));
            }
            for p in mask.interior_members() {
                assert!(g.neighbors(p).iter().all(|&q| member(q)));
            }
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        let g = grid2(1.0, 5);
        // Ball far outside the cube.
        let err = make_ball_mask(g, &[50.0, 50.0], 0.5).unwrap_err();
        assert_eq!(err, GridError::EmptyMask);
    }

    #[test]
    fn from_values_validates() {
        let g = grid2(1.0, 5);
        assert!(matches!(
            ScalarField::from_values(g, vec![0.0; 7]),
            Err(GridError::LengthMismatch { .. })
        ));
        let mut vals = vec![0.0; g.node_count()];
        vals[3] = f64::NAN;
        assert!(matches!(
            ScalarField::from_values(g, vals),
            Err(GridError::NonFiniteValue { node: 3 })
        ));
    }
}
