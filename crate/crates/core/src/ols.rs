//! Least squares through a Householder QR factorization.

use nalgebra::{DMatrix, DVector};

/// Relative size below which a column's QR pivot counts as collinear with
/// the columns before it.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    pub residuals: Vec<f64>,
    pub ssr: f64,
}

/// The design column that is (numerically) a combination of earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankDeficient {
    pub column: usize,
}

/// Minimizes `‖y − Xβ‖²`. Fails with the first dependent column when `X`
/// lacks full column rank or has no more rows than columns.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, RankDeficient> {
    let (n, p) = x.shape();
    if n <= p {
        return Err(RankDeficient { column: p.saturating_sub(1) });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    for k in 0..p {
        let scale = x.column(k).norm();
        if scale == 0.0 || r[(k, k)].abs() <= RANK_TOL * scale {
            return Err(RankDeficient { column: k });
        }
    }
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or(RankDeficient { column: p - 1 })?;
    let residuals: Vec<f64> = (y - x * &coef).iter().copied().collect();
    let ssr = residuals.iter().map(|e| e * e).sum();
    Ok(OlsFit {
        coef: coef.iter().copied().collect(),
        residuals,
        ssr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = DMatrix::from_row_slice(4, 2, &[1., 1., 1., 2., 1., 3., 1., 4.]);
        let y = DVector::from_row_slice(&[3., 5., 7., 9.]);
        let f = ols(&x, &y).unwrap();
        assert!((f.coef[0] - 1.0).abs() < 1e-12);
        assert!((f.coef[1] - 2.0).abs() < 1e-12);
        assert!(f.ssr < 1e-20);
    }

    #[test]
    fn constant_column_is_flagged() {
        let x = DMatrix::from_row_slice(4, 3, &[1., 1., 2., 1., 2., 2., 1., 3., 2., 1., 5., 2.]);
        let y = DVector::from_row_slice(&[1., 2., 3., 4.]);
        assert_eq!(ols(&x, &y), Err(RankDeficient { column: 2 }));
    }

    #[test]
    fn too_few_rows() {
        let x = DMatrix::from_row_slice(2, 2, &[1., 0., 1., 1.]);
        let y = DVector::from_row_slice(&[1., 2.]);
        assert!(ols(&x, &y).is_err());
    }
}
