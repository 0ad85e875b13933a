//! Dissimilarity matrices between countries.
//!
//! * slope: `|b_i − b_j|` between fitted warming rates,
//! * diff: Euclidean distance between first-difference series,
//! * hamming: number of years in which the signs of the changes disagree.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{first_differences, SignString, TrendFit};
use crate::panel::{index_map, TemperaturePanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Slope,
    Diff,
    Hamming,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Slope => "slope",
            Metric::Diff => "diff",
            Metric::Hamming => "hamming",
        })
    }
}

/// Symmetric K × K dissimilarities over a labelled subset of countries.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    metric: Metric,
    labels: Vec<String>,
    values: DMatrix<f64>,
}

impl DistanceMatrix {
    /// Wraps a square matrix after checking symmetry, a zero diagonal and
    /// nonnegativity. Non-finite entries pass through; clustering rejects
    /// them.
    pub fn new(metric: Metric, labels: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let k = labels.len();
        if values.nrows() != k || values.ncols() != k {
            return Err(Error::ShapeMismatch {
                expected: format!("{k}x{k}"),
                found: format!("{}x{}", values.nrows(), values.ncols()),
            });
        }
        for i in 0..k {
            if values[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!("nonzero diagonal at {:?}", labels[i])));
            }
            for j in 0..i {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if !(a == b || (a.is_nan() && b.is_nan())) {
                    return Err(Error::InvalidArgument(format!(
                        "asymmetric distance between {:?} and {:?}",
                        labels[i], labels[j]
                    )));
                }
                if a < 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "negative distance between {:?} and {:?}",
                        labels[i], labels[j]
                    )));
                }
            }
        }
        Ok(DistanceMatrix {
            metric,
            labels,
            values,
        })
    }

    fn from_fn(metric: Metric, labels: Vec<String>, f: impl Fn(usize, usize) -> f64) -> Self {
        let k = labels.len();
        let mut values = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..i {
                let d = f(i, j);
                values[(i, j)] = d;
                values[(j, i)] = d;
            }
        }
        DistanceMatrix {
            metric,
            labels,
            values,
        }
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == id)
    }

    /// Largest off-diagonal entry (0 for fewer than two labels).
    pub fn max_distance(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Restricts to `ids`, in the given order.
    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let pos = index_map(&self.labels);
        let idx = ids
            .iter()
            .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| Error::UnknownCountry(id.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_fn(self.metric, ids.to_vec(), |i, j| {
            self.values[(idx[i], idx[j])]
        }))
    }

    /// Square CSV with an id header row and id first column.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_square_csv(path.as_ref(), &self.labels, &self.values)
    }
}

pub(crate) fn write_square_csv(path: &Path, labels: &[String], values: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (i, id) in labels.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(values.row(i).iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `|b_i − b_j|` over the countries in `ids`.
pub fn slope_distance(trends: &[TrendFit], ids: &[String]) -> Result<DistanceMatrix> {
    if trends.len() != ids.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} trend fits", ids.len()),
            found: format!("{}", trends.len()),
        });
    }
    Ok(DistanceMatrix::from_fn(Metric::Slope, ids.to_vec(), |i, j| {
        (trends[i].slope - trends[j].slope).abs()
    }))
}

/// Euclidean distance between the first-difference series of every pair of
/// panel countries.
pub fn diff_distance(panel: &TemperaturePanel) -> Result<DistanceMatrix> {
    let diffs = (0..panel.n_countries())
        .map(|i| first_differences(panel.series(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DistanceMatrix::from_fn(Metric::Diff, panel.ids(), |i, j| {
        diffs[i]
            .iter()
            .zip(&diffs[j])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }))
}

/// Hamming distance between sign strings, stored as exact integers.
pub fn hamming_distance(signs: &[SignString], ids: &[String]) -> Result<DistanceMatrix> {
    if signs.len() != ids.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} sign strings", ids.len()),
            found: format!("{}", signs.len()),
        });
    }
    if let Some(s) = signs.iter().find(|s| s.len() != signs[0].len()) {
        return Err(Error::ShapeMismatch {
            expected: format!("sign strings of length {}", signs[0].len()),
            found: format!("length {}", s.len()),
        });
    }
    Ok(DistanceMatrix::from_fn(Metric::Hamming, ids.to_vec(), |i, j| {
        f64::from(signs[i].hamming(&signs[j]))
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::sign_sequence;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn trend(slope: f64) -> TrendFit {
        TrendFit {
            intercept: 0.0,
            slope,
            slope_se: 1.0,
            t_stat: slope,
            p_value: 0.5,
            significant: false,
            n: 10,
        }
    }

    #[test]
    fn slope_gap() {
        let d = slope_distance(&[trend(0.016), trend(0.012), trend(0.012)], &ids(3)).unwrap();
        assert!((d.get(0, 1) - 0.004).abs() < 1e-15);
        assert_eq!(d.get(1, 2), 0.0);
        assert_eq!(d.get(1, 0), d.get(0, 1));
    }

    #[test]
    fn diff_distance_small() {
        let p = TemperaturePanel::from_rows(&["a", "b", "c"], 2000, &[
            vec![0.0, 1.0, 2.0],
            vec![5.0, 5.0, 5.0],
            vec![10.0, 11.0, 12.0],
        ])
        .unwrap();
        let d = diff_distance(&p).unwrap();
        assert!((d.get(0, 1) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(d.get(0, 2), 0.0);
    }

    #[test]
    fn hamming_extremes_and_mismatch() {
        let a = sign_sequence(&vec![1.0; 121]);
        let b = sign_sequence(&vec![-1.0; 121]);
        let d = hamming_distance(&[a.clone(), b.clone(), a.clone()], &ids(3)).unwrap();
        assert_eq!(d.get(0, 1), 121.0);
        assert_eq!(d.get(0, 2), 0.0);
        let short = sign_sequence(&[1.0]);
        assert!(hamming_distance(&[a, short], &ids(2)).is_err());
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(DistanceMatrix::new(Metric::Diff, ids(2), m).is_err());
    }

    #[test]
    fn subset_keeps_entries() {
        let d = slope_distance(&[trend(1.0), trend(2.0), trend(4.0)], &ids(3)).unwrap();
        let s = d.subset(&["c2".into(), "c0".into()]).unwrap();
        assert_eq!(s.get(0, 1), 3.0);
        assert!(d.subset(&["zz".into()]).is_err());
    }
}
