//! Weighted least squares through Householder QR.

use crate::error::{Error, Result};

const RANK_TOL: f64 = 1e-10;

/// Reduces row-major `a` (`n × p`) in place to `R` in its top rows and
/// applies the same reflections to `b` (`n × m`). Returns the diagonal of `R`.
fn householder(a: &mut [f64], n: usize, p: usize, b: &mut [f64], m: usize) -> Vec<f64> {
    let mut diag = Vec::with_capacity(p);
    for j in 0..p.min(n) {
        let norm = (j..n).map(|i| a[i * p + j] * a[i * p + j]).sum::<f64>().sqrt();
        if norm == 0.0 {
            diag.push(0.0);
            continue;
        }
        let alpha = if a[j * p + j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (j..n).map(|i| a[i * p + j]).collect();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            diag.push(alpha);
            continue;
        }
        let reflect = |cols: usize, mat: &mut [f64], from: usize| {
            for c in from..cols {
                let dot: f64 = (j..n).map(|i| v[i - j] * mat[i * cols + c]).sum();
                let f = 2.0 * dot / vv;
                for i in j..n {
                    mat[i * cols + c] -= f * v[i - j];
                }
            }
        };
        reflect(p, a, j);
        reflect(m, b, 0);
        diag.push(a[j * p + j]);
    }
    diag
}

fn count_rank(diag: &[f64], scale: f64) -> usize {
    diag.iter().filter(|d| d.abs() > RANK_TOL * scale.max(1e-300)).count()
}

fn max_col_norm(a: &[f64], n: usize, p: usize) -> f64 {
    (0..p)
        .map(|j| (0..n).map(|i| a[i * p + j] * a[i * p + j]).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Numerical column rank of row-major `a` (`n × p`).
pub fn rank(a: &[f64], n: usize, p: usize) -> usize {
    let mut work = a.to_vec();
    let scale = max_col_norm(a, n, p);
    count_rank(&householder(&mut work, n, p, &mut [], 0), scale)
}

/// Minimizes `Σ_i w_i ‖y_i − x_i B‖²` for `B` (`p × m`, row-major).
/// Returns `B` and the minimal weighted residual.
pub fn weighted_lstsq(x: &[f64], n: usize, p: usize, y: &[f64], m: usize, w: &[f64]) -> Result<(Vec<f64>, f64)> {
    assert_eq!(x.len(), n * p);
    assert_eq!(y.len(), n * m);
    assert_eq!(w.len(), n);
    if let Some(bad) = w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("regression weights must be positive, got {bad}")));
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    for i in 0..n {
        let s = w[i].sqrt();
        a[i * p..(i + 1) * p].iter_mut().for_each(|v| *v *= s);
        b[i * m..(i + 1) * m].iter_mut().for_each(|v| *v *= s);
    }
    let scale = max_col_norm(&a, n, p);
    let diag = householder(&mut a, n, p, &mut b, m);
    let r = count_rank(&diag, scale);
    if n < p || r < p {
        return Err(Error::RankDeficient { rank: r, needed: p });
    }
    let mut coef = vec![0.0; p * m];
    for c in 0..m {
        for j in (0..p).rev() {
            let mut s = b[j * m + c];
            for k in j + 1..p {
                s -= a[j * p + k] * coef[k * m + c];
            }
            coef[j * m + c] = s / a[j * p + j];
        }
    }
    let residual = b[p * m..].iter().map(|v| v * v).sum();
    Ok((coef, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn matches_normal_equations_oracle() {
        let (n, p, m) = (9, 4, 2);
        let x: Vec<f64> = (0..n * p).map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0).collect();
        let y: Vec<f64> = (0..n * m).map(|i| ((i * 5 + 1) % 13) as f64 / 3.0).collect();
        let w: Vec<f64> = (0..n).map(|i| 0.5 + i as f64 / 4.0).collect();
        let (coef, res) = weighted_lstsq(&x, n, p, &y, m, &w).unwrap();

        let xm = DMatrix::from_row_slice(n, p, &x);
        let ym = DMatrix::from_row_slice(n, m, &y);
        let wm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(w.clone()));
        let xtw = xm.transpose() * &wm;
        let oracle = (&xtw * &xm).try_inverse().unwrap() * (&xtw * &ym);
        for j in 0..p {
            for c in 0..m {
                assert!((coef[j * m + c] - oracle[(j, c)]).abs() < 1e-10);
            }
        }
        let fit = &xm * &oracle;
        let oracle_res: f64 = (0..n).map(|i| w[i] * (0..m).map(|c| (ym[(i, c)] - fit[(i, c)]).powi(2)).sum::<f64>()).sum();
        assert!((res - oracle_res).abs() < 1e-9);
    }

    #[test]
    fn rank_deficiency_is_detected() {
        let x = [1.0, 2.0, 2.0, 4.0, 3.0, 6.0];
        assert_eq!(rank(&x, 3, 2), 1);
        let err = weighted_lstsq(&x, 3, 2, &[1.0, 2.0, 3.0], 1, &[1.0; 3]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { rank: 1, needed: 2 }));
    }
}
