//! Small dense least-squares solver shared by the AR and ADF fitters.
//!
//! Normal equations with Gauss-Jordan elimination; designs here have at most
//! a handful of columns, so this is both fast and accurate enough.

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum OlsError {
    /// X'X is singular (collinear or constant regressors).
    Singular,
    /// Fewer observations than parameters.
    TooFewObservations,
}

#[derive(Debug, Clone)]
pub(crate) struct Ols {
    /// Fitted coefficients, one per design column.
    pub coeffs: Vec<f64>,
    /// Standard errors of the coefficients.
    pub std_errors: Vec<f64>,
    /// RSS / (n - k).
    pub residual_variance: f64,
    pub n_obs: usize,
}

/// Least squares on an explicit design matrix. Rows must already contain the
/// intercept column if one is wanted.
pub(crate) fn fit_ols(rows: &[Vec<f64>], targets: &[f64]) -> Result<Ols, OlsError> {
    let n = rows.len();
    assert_eq!(n, targets.len(), "design/target length mismatch");
    let k = if n == 0 { 0 } else { rows[0].len() };
    if k == 0 || n <= k {
        return Err(OlsError::TooFewObservations);
    }

    let mut xtx = vec![vec![0.0_f64; k]; k];
    let mut xty = vec![0.0_f64; k];
    for (row, &y) in rows.iter().zip(targets) {
        debug_assert_eq!(row.len(), k);
        for i in 0..k {
            xty[i] += row[i] * y;
            for j in i..k {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            xtx[i][j] = xtx[j][i];
        }
    }

    let inv = invert(&xtx).ok_or(OlsError::Singular)?;
    let coeffs: Vec<f64> = (0..k)
        .map(|i| (0..k).map(|j| inv[i][j] * xty[j]).sum())
        .collect();

    let mut rss = 0.0;
    for (row, &y) in rows.iter().zip(targets) {
        let fitted: f64 = row.iter().zip(&coeffs).map(|(x, c)| x * c).sum();
        let e = y - fitted;
        rss += e * e;
    }
    let residual_variance = rss / (n - k) as f64;
    let std_errors = (0..k)
        .map(|i| (residual_variance * inv[i][i]).max(0.0).sqrt())
        .collect();

    Ok(Ols { coeffs, std_errors, residual_variance, n_obs: n })
}

/// Gauss-Jordan inverse with partial pivoting. Returns `None` when a pivot
/// collapses relative to the matrix scale.
fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let k = m.len();
    let scale = m
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |a, &v| a.max(v.abs()))
        .max(1.0);
    let tol = scale * 1e-12;

    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv = vec![vec![0.0; k]; k];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    for col in 0..k {
        let pivot_row = (col..k).max_by(|&r, &s| {
            a[r][col].abs().partial_cmp(&a[s][col].abs()).unwrap()
        })?;
        if a[pivot_row][col].abs() <= tol {
            return None;
        }
        a.swap(col, pivot_row);
        inv.swap(col, pivot_row);

        let pivot = a[col][col];
        for j in 0..k {
            a[col][j] /= pivot;
            inv[col][j] /= pivot;
        }
        for r in 0..k {
            if r == col {
                continue;
            }
            let f = a[r][col];
            if f == 0.0 {
                continue;
            }
            for j in 0..k {
                a[r][j] -= f * a[col][j];
                inv[r][j] -= f * inv[col][j];
            }
        }
    }
    Some(inv)
}
