//! Numerical laboratory for the graphical Lagrangian mean curvature flow
//! u_t = sum_i arctan(lambda_i(D^2 u)) - Theta_0 on grids in dimensions 1-3,
//! with checks for the quantitative interior estimates that hold along it:
//! the Jacobi inequality of the volume element, interior height and gradient
//! bounds, Korevaar-style Hessian bounds with explicit constants, and the
//! rescaling structure behind quadratic rigidity.

pub mod estimates;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod io;
mod linsolve;
pub mod liouville;
pub mod runner;
