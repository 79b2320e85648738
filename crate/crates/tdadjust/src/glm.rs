// SPDX-License-Identifier: MIT
//! Small dense GLM fitting: ordinary least squares and logistic regression via
//! iteratively reweighted least squares. Design matrices here have at most a
//! handful of columns, so plain Gaussian elimination is all that is needed.

use crate::error::{Error, Result};

/// Condition-number threshold on the normal equations beyond which a design
/// is treated as rank deficient.
pub const CONDITION_LIMIT: f64 = 1e10;
/// IRLS stops when the largest coefficient change drops below this.
pub const IRLS_TOLERANCE: f64 = 1e-8;
/// IRLS iteration cap; exceeding it is reported as non-convergence/separation.
pub const IRLS_MAX_ITER: usize = 100;

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Column-major design matrix with an implicit leading intercept column.
#[derive(Clone, Debug)]
pub struct Design {
    cols: Vec<Vec<f64>>,
    n: usize,
}

impl Design {
    /// `cols` are the non-intercept columns, all of length `n`.
    pub fn new(n: usize, cols: Vec<Vec<f64>>) -> Result<Self> {
        if cols.iter().any(|c| c.len() != n) {
            return Err(Error::Numeric("design columns have unequal lengths".into()));
        }
        Ok(Design { cols, n })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    /// Number of coefficients including the intercept.
    pub fn width(&self) -> usize {
        self.cols.len() + 1
    }

    #[inline]
    fn value(&self, row: usize, coef: usize) -> f64 {
        if coef == 0 {
            1.0
        } else {
            self.cols[coef - 1][row]
        }
    }

    /// Linear predictor for one row.
    pub fn predict_row(&self, row: usize, beta: &[f64]) -> f64 {
        let mut acc = beta[0];
        for (c, col) in self.cols.iter().enumerate() {
            acc += beta[c + 1] * col[row];
        }
        acc
    }

    /// Linear predictor for all rows.
    pub fn predict(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.predict_row(i, beta)).collect()
    }
}

/// Solves `a x = b` in place by Gauss-Jordan with partial pivoting and returns
/// `(solution, inverse)`; errors if a pivot collapses.
fn solve_with_inverse(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let k = b.len();
    let mut inv: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for col in 0..k {
        let (pivot, pmax) = (col..k)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if pmax == 0.0 || !pmax.is_finite() {
            return Err(Error::Numeric("rank-deficient design".into()));
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        for j in 0..k {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        b[col] /= d;
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
            b[r] -= f * b[col];
        }
    }
    Ok((b, inv))
}

fn one_norm(m: &[Vec<f64>]) -> f64 {
    let k = m.len();
    (0..k)
        .map(|j| (0..k).map(|i| m[i][j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Ordinary least squares of `y` on the design (intercept first in the output).
///
/// Errors when the 1-norm condition estimate of the normal equations exceeds
/// [`CONDITION_LIMIT`] or when there are not more rows than coefficients.
pub fn fit_linear(design: &Design, y: &[f64]) -> Result<Vec<f64>> {
    let n = design.rows();
    let k = design.width();
    if y.len() != n {
        return Err(Error::Numeric("response length mismatch".into()));
    }
    if n <= k {
        return Err(Error::Numeric(format!(
            "need more than {k} rows to fit {k} coefficients, got {n}"
        )));
    }
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for row in 0..n {
        for a in 0..k {
            let va = design.value(row, a);
            xty[a] += va * y[row];
            for b in a..k {
                xtx[a][b] += va * design.value(row, b);
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[a][b] = xtx[b][a];
        }
    }
    let norm_a = one_norm(&xtx);
    let (beta, inv) = solve_with_inverse(xtx, xty)?;
    if norm_a * one_norm(&inv) > CONDITION_LIMIT {
        return Err(Error::Numeric("rank-deficient design (condition estimate too large)".into()));
    }
    Ok(beta)
}

/// Logistic regression by IRLS; `y` must be 0/1 with both classes present.
pub fn fit_logistic(design: &Design, y: &[f64]) -> Result<Vec<f64>> {
    let n = design.rows();
    let k = design.width();
    if y.len() != n {
        return Err(Error::Numeric("response length mismatch".into()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Numeric("logistic response must be 0/1".into()));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::Numeric("logistic response has a single class".into()));
    }
    let mut beta = vec![0.0; k];
    for _ in 0..IRLS_MAX_ITER {
        let mut xtwx = vec![vec![0.0; k]; k];
        let mut score = vec![0.0; k];
        for row in 0..n {
            let p = expit(design.predict_row(row, &beta));
            let w = (p * (1.0 - p)).max(1e-12);
            let r = y[row] - p;
            for a in 0..k {
                let va = design.value(row, a);
                score[a] += va * r;
                for b in a..k {
                    xtwx[a][b] += w * va * design.value(row, b);
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                xtwx[a][b] = xtwx[b][a];
            }
        }
        let (step, _) = solve_with_inverse(xtwx, score)?;
        let mut max_change: f64 = 0.0;
        for a in 0..k {
            beta[a] += step[a];
            max_change = max_change.max(step[a].abs());
        }
        if !max_change.is_finite() {
            return Err(Error::Numeric("logistic fit diverged".into()));
        }
        if max_change < IRLS_TOLERANCE {
            return Ok(beta);
        }
    }
    Err(Error::Numeric(
        "logistic fit did not converge (possible separation)".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn exact_line_recovered() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let d = Design::new(50, vec![x]).unwrap();
        let beta = fit_linear(&d, &y).unwrap();
        assert!(beta[0].abs() < 1e-10);
        assert!((beta[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn collinear_column_rejected() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let d = Design::new(50, vec![x.clone(), x.clone()]).unwrap();
        let y: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        assert!(fit_linear(&d, &y).is_err());
    }

    #[test]
    fn logistic_null_model() {
        let mut rng = crate::rng::substream(1, 9, 0, 0);
        let n = 4000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
        let y: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 }).collect();
        let d = Design::new(n, vec![x]).unwrap();
        let beta = fit_logistic(&d, &y).unwrap();
        assert!(beta[0].abs() < 0.1, "{beta:?}");
        assert!(beta[1].abs() < 0.3, "{beta:?}");
    }

    #[test]
    fn logistic_recovers_slope() {
        let mut rng = crate::rng::substream(2, 9, 0, 0);
        let n = 20000;
        let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| if rng.gen::<f64>() < expit(0.5 + 1.5 * v) { 1.0 } else { 0.0 })
            .collect();
        let d = Design::new(n, vec![x]).unwrap();
        let beta = fit_logistic(&d, &y).unwrap();
        assert!((beta[0] - 0.5).abs() < 0.1, "{beta:?}");
        assert!((beta[1] - 1.5).abs() < 0.15, "{beta:?}");
    }

    #[test]
    fn separation_errors() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 - 20.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let d = Design::new(40, vec![x]).unwrap();
        assert!(fit_logistic(&d, &y).is_err());
    }

    #[test]
    fn single_class_errors() {
        let d = Design::new(10, vec![(0..10).map(|i| i as f64).collect()]).unwrap();
        assert!(fit_logistic(&d, &vec![1.0; 10]).is_err());
    }
}
