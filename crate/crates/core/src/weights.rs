//! Row-normalized spatial weight matrices.
//!
//! Seven kinds are built: contiguity (`NN`), distance weights restricted to
//! same-cluster pairs (`cA`, `cB`, `cC`) and full distance weights (`dA`,
//! `dB`, `dC`). Distances become similarities through `(N − d)/N`, with `N`
//! the number of panel countries, before each row is scaled to sum to one.
//! Rows with nothing to normalize stay identically zero.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterAssignment, CutRecord, Scheme};
use crate::distance::{write_square_csv, DistanceMatrix, Metric};
use crate::error::{Error, Result};
use crate::panel::{index_map, AdjacencyList, TemperaturePanel};

/// Tolerance for the row-sum check.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WeightKind {
    #[serde(rename = "NN")]
    Nn,
    #[serde(rename = "cA")]
    ClusterA,
    #[serde(rename = "cB")]
    ClusterB,
    #[serde(rename = "cC")]
    ClusterC,
    #[serde(rename = "dA")]
    DistanceA,
    #[serde(rename = "dB")]
    DistanceB,
    #[serde(rename = "dC")]
    DistanceC,
}

impl WeightKind {
    pub const ALL: [WeightKind; 7] = [
        WeightKind::Nn,
        WeightKind::ClusterA,
        WeightKind::ClusterB,
        WeightKind::ClusterC,
        WeightKind::DistanceA,
        WeightKind::DistanceB,
        WeightKind::DistanceC,
    ];

    pub fn code(self) -> &'static str {
        match self {
            WeightKind::Nn => "NN",
            WeightKind::ClusterA => "cA",
            WeightKind::ClusterB => "cB",
            WeightKind::ClusterC => "cC",
            WeightKind::DistanceA => "dA",
            WeightKind::DistanceB => "dB",
            WeightKind::DistanceC => "dC",
        }
    }

    /// Model name, e.g. `STAR_dC`.
    pub fn model_name(self) -> String {
        format!("STAR_{}", self.code())
    }

    /// Clustering scheme behind a cluster or distance kind.
    pub fn scheme(self) -> Option<Scheme> {
        match self {
            WeightKind::Nn => None,
            WeightKind::ClusterA | WeightKind::DistanceA => Some(Scheme::A),
            WeightKind::ClusterB | WeightKind::DistanceB => Some(Scheme::B),
            WeightKind::ClusterC | WeightKind::DistanceC => Some(Scheme::C),
        }
    }

    pub fn is_cluster_restricted(self) -> bool {
        matches!(self, WeightKind::ClusterA | WeightKind::ClusterB | WeightKind::ClusterC)
    }

    pub fn cluster_kind(scheme: Scheme) -> Self {
        match scheme {
            Scheme::A => WeightKind::ClusterA,
            Scheme::B => WeightKind::ClusterB,
            Scheme::C => WeightKind::ClusterC,
        }
    }

    pub fn distance_kind(scheme: Scheme) -> Self {
        match scheme {
            Scheme::A => WeightKind::DistanceA,
            Scheme::B => WeightKind::DistanceB,
            Scheme::C => WeightKind::DistanceC,
        }
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches("STAR_");
        WeightKind::ALL
            .into_iter()
            .find(|k| k.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown weight kind {s:?}")))
    }
}

/// How raw distances are brought under the `d ≤ N` bound.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ScaleMode {
    /// Use distances as they are; any `d > N` is an error.
    #[default]
    Raw,
    /// Multiply distances so the largest equals `N · rho`.
    Rescale { rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMeta {
    pub kind: WeightKind,
    pub source_metric: Option<Metric>,
    pub cut: Option<CutRecord>,
    pub scale: ScaleMode,
    pub zero_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    labels: Vec<String>,
    values: DMatrix<f64>,
    meta: WeightMeta,
}

impl WeightMatrix {
    /// Wraps an arbitrary matrix, checking the row-stochastic-or-zero
    /// invariant.
    pub fn from_values(kind: WeightKind, labels: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        let w = Self::assemble(
            WeightMeta {
                kind,
                source_metric: None,
                cut: None,
                scale: ScaleMode::Raw,
                zero_rows: 0,
            },
            labels,
            values,
        );
        w.validate()?;
        Ok(w)
    }

    fn assemble(mut meta: WeightMeta, labels: Vec<String>, values: DMatrix<f64>) -> Self {
        meta.zero_rows = (0..values.nrows())
            .filter(|&i| values.row(i).iter().all(|&v| v == 0.0))
            .count();
        WeightMatrix { labels, values, meta }
    }

    pub fn kind(&self) -> WeightKind {
        self.meta.kind
    }

    pub fn meta(&self) -> &WeightMeta {
        &self.meta
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
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

    /// True when row `i` has no weight at all.
    pub fn is_zero_row(&self, i: usize) -> bool {
        self.values.row(i).iter().all(|&v| v == 0.0)
    }

    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_zero_row(i)).collect()
    }

    /// `Σ_j w_ij x_j` for every `i`.
    pub fn spatial_lag(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.values.row(i).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// Checks shape, the zero diagonal, nonnegativity and that each row sums
    /// to 1 or is identically zero.
    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.values.nrows() != n || self.values.ncols() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n}x{n}"),
                found: format!("{}x{}", self.values.nrows(), self.values.ncols()),
            });
        }
        for i in 0..n {
            let row = self.values.row(i);
            if self.values[(i, i)] != 0.0 {
                return Err(Error::InvalidArgument(format!("nonzero diagonal weight at {:?}", self.labels[i])));
            }
            if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::InvalidArgument(format!("negative or non-finite weight in row {:?}", self.labels[i])));
            }
            let s: f64 = row.iter().sum();
            if s != 0.0 && (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!(
                    "row {:?} sums to {s}, expected 1 or 0",
                    self.labels[i]
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_square_csv(path.as_ref(), &self.labels, &self.values)
    }

    pub fn meta_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.meta)?)
    }
}

fn row_normalize(values: &mut DMatrix<f64>) {
    for i in 0..values.nrows() {
        let s: f64 = values.row(i).iter().sum();
        if s > 0.0 {
            values.row_mut(i).iter_mut().for_each(|v| *v /= s);
        }
    }
}

/// `1/m` on each of a country's `m` neighbours; zero rows for countries
/// without neighbours.
pub fn contiguity_weights(adj: &AdjacencyList, panel: &TemperaturePanel) -> Result<WeightMatrix> {
    let ids = panel.ids();
    let pos = index_map(&ids);
    let n = ids.len();
    let mut values = DMatrix::zeros(n, n);
    for (i, id) in ids.iter().enumerate() {
        let Some(nb) = adj.neighbors(id) else { continue };
        let m = nb.len() as f64;
        for j_id in nb {
            let j = *pos
                .get(j_id.as_str())
                .ok_or_else(|| Error::UnknownCountry(j_id.clone()))?;
            values[(i, j)] = 1.0 / m;
        }
    }
    Ok(WeightMatrix::assemble(
        WeightMeta {
            kind: WeightKind::Nn,
            source_metric: None,
            cut: None,
            scale: ScaleMode::Raw,
            zero_rows: 0,
        },
        ids,
        values,
    ))
}

/// Unnormalized similarities `(N − d_ij)/N` laid out in panel order, with
/// `keep(i, j)` deciding which off-diagonal pairs survive. Countries absent
/// from `dist` get nothing.
fn similarities(
    dist: &DistanceMatrix,
    panel: &TemperaturePanel,
    scale: ScaleMode,
    keep: impl Fn(&str, &str) -> bool,
) -> Result<DMatrix<f64>> {
    let n = panel.n_countries();
    let nf = n as f64;
    let ids = panel.ids();
    let pos = index_map(&ids);
    let rows = dist
        .labels()
        .iter()
        .map(|l| pos.get(l.as_str()).copied().ok_or_else(|| Error::UnknownCountry(l.clone())))
        .collect::<Result<Vec<_>>>()?;
    // (divisor, multiplier): dividing first keeps the largest distance at
    // exactly `N · rho`
    let (divisor, multiplier) = match scale {
        ScaleMode::Raw => (1.0, 1.0),
        ScaleMode::Rescale { rho } => {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::InvalidArgument(format!("rescale factor {rho} outside (0, 1]")));
            }
            let max = dist.max_distance();
            if max > 0.0 {
                (max, nf * rho)
            } else {
                (1.0, 1.0)
            }
        }
    };
    let mut values = DMatrix::zeros(n, n);
    for (a, &i) in rows.iter().enumerate() {
        for (b, &j) in rows.iter().enumerate() {
            if a == b {
                continue;
            }
            let d = dist.get(a, b) / divisor * multiplier;
            if !d.is_finite() {
                return Err(Error::NonFinite(format!("{} distance", dist.metric())));
            }
            if d > nf {
                return Err(Error::DistanceExceedsN {
                    a: ids[i].clone(),
                    b: ids[j].clone(),
                    value: d,
                    n,
                });
            }
            if keep(&ids[i], &ids[j]) {
                values[(i, j)] = (nf - d) / nf;
            }
        }
    }
    Ok(values)
}

/// Full distance weights: `(N − d_ij)/N` off the diagonal, row-normalized.
pub fn distance_weights(
    dist: &DistanceMatrix,
    panel: &TemperaturePanel,
    kind: WeightKind,
    scale: ScaleMode,
) -> Result<WeightMatrix> {
    let mut values = similarities(dist, panel, scale, |_, _| true)?;
    row_normalize(&mut values);
    Ok(WeightMatrix::assemble(
        WeightMeta {
            kind,
            source_metric: Some(dist.metric()),
            cut: None,
            scale,
            zero_rows: 0,
        },
        panel.ids(),
        values,
    ))
}

/// Distance weights kept only between members of the same cluster.
/// Idiosyncratic, excluded and unlisted countries get zero rows.
pub fn cluster_restricted_weights(
    dist: &DistanceMatrix,
    assign: &ClusterAssignment,
    panel: &TemperaturePanel,
    kind: WeightKind,
    scale: ScaleMode,
) -> Result<WeightMatrix> {
    let same = |a: &str, b: &str| match (assign.cluster_of(a), assign.cluster_of(b)) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    };
    let mut values = similarities(dist, panel, scale, same)?;
    row_normalize(&mut values);
    Ok(WeightMatrix::assemble(
        WeightMeta {
            kind,
            source_metric: Some(dist.metric()),
            cut: assign.cut,
            scale,
            zero_rows: 0,
        },
        panel.ids(),
        values,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::Metric;

    fn panel(n: usize) -> TemperaturePanel {
        let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, 1.0, 2.0]).collect();
        TemperaturePanel::from_rows(&refs, 2000, &rows).unwrap()
    }

    #[test]
    fn contiguity_quarter_weights_and_island() {
        let p = panel(6);
        let ids = p.ids();
        let adj = AdjacencyList::from_edges(&ids, [("c0", "c1"), ("c0", "c2"), ("c0", "c3"), ("c0", "c4")]).unwrap();
        let w = contiguity_weights(&adj, &p).unwrap();
        for j in 1..5 {
            assert_eq!(w.get(0, j), 0.25);
            assert_eq!(w.get(j, 0), 1.0);
        }
        assert!(w.is_zero_row(5));
        assert_eq!(w.meta().zero_rows, 1);
        w.validate().unwrap();
    }

    #[test]
    fn similarity_formula() {
        let p = panel(3);
        let d = DistanceMatrix::new(
            Metric::Hamming,
            p.ids(),
            DMatrix::from_row_slice(3, 3, &[0., 0., 3., 0., 0., 3., 3., 3., 0.]),
        )
        .unwrap();
        let w = distance_weights(&d, &p, WeightKind::DistanceC, ScaleMode::Raw).unwrap();
        // row 0: w* = (1, 0) -> normalized (1, 0)
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(0, 2), 0.0);
        // row 2: d = N for both neighbours, nothing to normalize
        assert!(w.is_zero_row(2));
    }

    #[test]
    fn exceeding_n_needs_rescale() {
        let p = panel(3);
        let d = DistanceMatrix::new(
            Metric::Diff,
            p.ids(),
            DMatrix::from_row_slice(3, 3, &[0., 10., 1., 10., 0., 2., 1., 2., 0.]),
        )
        .unwrap();
        assert!(matches!(
            distance_weights(&d, &p, WeightKind::DistanceB, ScaleMode::Raw),
            Err(Error::DistanceExceedsN { .. })
        ));
        let w = distance_weights(&d, &p, WeightKind::DistanceB, ScaleMode::Rescale { rho: 0.95 }).unwrap();
        w.validate().unwrap();
        assert!(w.get(0, 2) > w.get(0, 1));
    }

    #[test]
    fn pair_cluster_gets_unit_weight() {
        let p = panel(4);
        let vals: Vec<f64> = (0..16).map(|k| if k / 4 == k % 4 { 0.0 } else { 1.0 }).collect();
        let d = DistanceMatrix::new(Metric::Diff, p.ids(), DMatrix::from_row_slice(4, 4, &vals)).unwrap();
        let groups = vec![vec!["c0".to_string(), "c1".to_string()], vec!["c2".to_string()], vec!["c3".to_string()]];
        let a = ClusterAssignment::from_groups(&groups, 2).unwrap();
        let w = cluster_restricted_weights(&d, &a, &p, WeightKind::ClusterB, ScaleMode::Raw).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(1, 0), 1.0);
        assert_eq!(w.zero_rows(), vec![2, 3]);
    }

    #[test]
    fn kind_codes_round_trip() {
        for k in WeightKind::ALL {
            assert_eq!(k.code().parse::<WeightKind>().unwrap(), k);
            assert_eq!(k.model_name().parse::<WeightKind>().unwrap(), k);
        }
    }
}
