//! Small dense linear solves shared by the stationary solver and the
//! least-squares fits.

/// Gaussian elimination with partial pivoting for small dense systems
/// (stored row-major in `a`, right-hand side in `b`). Errors on pivots
/// below the rank threshold.
pub(crate) fn solve_dense_spd(a: &mut [f64], b: &mut [f64], n: usize) -> Result<Vec<f64>, String> {
    // Rank threshold relative to the largest initial diagonal entry.
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0f64, f64::max).max(1e-300);
    let threshold = 1e-12 * scale;
    for col in 0..n {
        let mut pivot = col;
        for row in (col + 1)..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * n + col].abs() < threshold {
            return Err(format!("rank-deficient at column {col}"));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let inv = 1.0 / a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Ok(x)
}
