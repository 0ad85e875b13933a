//! Per-country series transforms: linear trend with a slope t-test, first
//! differences and sign strings of the differences.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Level used for the `significant` flag of a fresh [`TrendFit`].
pub const DEFAULT_ALPHA: f64 = 0.05;

/// OLS fit of `y_t = a + b·t + e_t` with `t = 1..T`.
///
/// Standard errors are the classical homoskedastic ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub t_stat: f64,
    /// Two-sided p-value from Student's t with `T − 2` degrees of freedom.
    pub p_value: f64,
    /// `p_value < DEFAULT_ALPHA`.
    pub significant: bool,
    pub n: usize,
}

pub fn fit_linear_trend(series: &[f64]) -> Result<TrendFit> {
    let n = series.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "trend fit needs at least 3 observations, got {n}"
        )));
    }
    let nf = n as f64;
    let t_mean = (nf + 1.0) / 2.0;
    let y_mean = series.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (k, y) in series.iter().enumerate() {
        let dt = (k + 1) as f64 - t_mean;
        sxx += dt * dt;
        sxy += dt * (y - y_mean);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let ssr: f64 = series
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let e = y - intercept - slope * (k + 1) as f64;
            e * e
        })
        .sum();
    let df = nf - 2.0;
    let slope_se = (ssr / df / sxx).sqrt();
    let (t_stat, p_value) = if slope_se > 0.0 {
        let t = slope / slope_se;
        (t, student_t_two_sided(t, df))
    } else if slope != 0.0 {
        (slope.signum() * f64::INFINITY, 0.0)
    } else {
        (0.0, 1.0)
    };
    if !(slope.is_finite() && intercept.is_finite()) {
        return Err(Error::NonFinite("trend fit".into()));
    }
    Ok(TrendFit {
        intercept,
        slope,
        slope_se,
        t_stat,
        p_value,
        significant: p_value < DEFAULT_ALPHA,
        n,
    })
}

/// True when the slope is significantly different from zero at `alpha`.
pub fn slope_significance(fit: &TrendFit, alpha: f64) -> bool {
    fit.p_value < alpha
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom, through the
/// regularized incomplete beta function `I_{df/(df+t²)}(df/2, 1/2)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Writes `country,intercept,slope,se,t,p,significant`.
pub fn write_trend_csv(path: impl AsRef<Path>, ids: &[String], fits: &[TrendFit], alpha: f64) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["country", "intercept", "slope", "se", "t", "p", "significant"])
        .map_err(|e| Error::csv(path, e))?;
    for (id, f) in ids.iter().zip(fits) {
        w.write_record([
            id.clone(),
            f.intercept.to_string(),
            f.slope.to_string(),
            f.slope_se.to_string(),
            f.t_stat.to_string(),
            f.p_value.to_string(),
            slope_significance(f, alpha).to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `Δy_t = y_{t+1} − y_t`, length `T − 1`.
pub fn first_differences(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "differencing needs at least 2 observations, got {}",
            series.len()
        )));
    }
    Ok(series.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Packed binary string of annual change signs: bit set ⇔ strict increase.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignString {
    words: Vec<u64>,
    len: usize,
}

impl SignString {
    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for b in bits {
            if len % 64 == 0 {
                words.push(0);
            }
            if b {
                words[len / 64] |= 1 << (len % 64);
            }
            len += 1;
        }
        SignString { words, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, k: usize) -> bool {
        assert!(k < self.len, "bit {k} out of range {}", self.len);
        self.words[k / 64] >> (k % 64) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|k| self.get(k))
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Number of differing positions. Panics on unequal lengths.
    pub fn hamming(&self, other: &SignString) -> u32 {
        assert_eq!(self.len, other.len, "sign strings differ in length");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// Bit 1 for a strictly positive change; zero change maps to 0.
pub fn sign_sequence(diffs: &[f64]) -> SignString {
    SignString::from_bits(diffs.iter().map(|&d| d > 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_line() {
        let y: Vec<f64> = (1..=50).map(|t| 10.0 + 0.5 * t as f64).collect();
        let f = fit_linear_trend(&y).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
        assert!((f.intercept - 10.0).abs() < 1e-10);
        assert!(f.slope_se < 1e-12);
        assert!(f.p_value < 1e-12);
        assert!(slope_significance(&f, 0.05));
    }

    #[test]
    fn constant_series_not_significant() {
        let f = fit_linear_trend(&[2.0; 10]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.p_value, 1.0);
        assert!(!f.significant);
    }

    #[test]
    fn short_series_rejected() {
        assert!(fit_linear_trend(&[1.0, 2.0]).is_err());
        assert!(first_differences(&[1.0]).is_err());
    }

    #[test]
    fn differences_and_signs() {
        assert_eq!(first_differences(&[1.0, 3.0, 2.0]).unwrap(), vec![2.0, -1.0]);
        assert_eq!(first_differences(&[4.0; 5]).unwrap(), vec![0.0; 4]);
        let s = sign_sequence(&[2.0, -1.0, 0.5]);
        assert_eq!(s.bits().collect::<Vec<_>>(), vec![true, false, true]);
        assert_eq!(sign_sequence(&[-1.0, -2.0]).count_ones(), 0);
        assert_eq!(sign_sequence(&[0.0]).bits().collect::<Vec<_>>(), vec![false]);
    }

    #[test]
    fn packed_bits_cross_word_boundary() {
        let bits: Vec<bool> = (0..130).map(|k| k % 3 == 0).collect();
        let s = SignString::from_bits(bits.iter().copied());
        assert_eq!(s.len(), 130);
        assert_eq!(s.bits().collect::<Vec<_>>(), bits);
        let flipped = SignString::from_bits(bits.iter().map(|b| !b));
        assert_eq!(s.hamming(&flipped), 130);
    }

    #[test]
    fn t_tail_known_values() {
        // df = 1 is Cauchy: P(|T| > 1) = 1/2
        assert!((student_t_two_sided(1.0, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(student_t_two_sided(0.0, 10.0), 1.0);
    }
}
