//! Test-only oracles and simulators. Nothing here calls into the code paths
//! it is used to check.
#![allow(dead_code)]

use std::collections::BTreeSet;

use climstar::{TemperaturePanel, WeightKind, WeightMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i:03}")).collect()
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Solves `(X'X) β = X'y` by Gaussian elimination with partial pivoting.
pub fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (r, &yv) in rows.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += r[i] * r[j];
            }
            a[i][p] += r[i] * yv;
        }
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for row in 0..p {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..=p {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

/// Average-linkage agglomeration that recomputes every inter-cluster mean
/// from the raw matrix at each step. Returns the merged leaf sets and the
/// merge heights.
pub fn naive_average_linkage(d: &DMatrix<f64>) -> Vec<(BTreeSet<usize>, f64)> {
    let k = d.nrows();
    let mut clusters: Vec<BTreeSet<usize>> = (0..k).map(|i| BTreeSet::from([i])).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut total = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        total += d[(i, j)];
                    }
                }
                let avg = total / (clusters[a].len() * clusters[b].len()) as f64;
                let (ra, rb) = (*clusters[a].first().unwrap(), *clusters[b].first().unwrap());
                let key = (ra.min(rb), ra.max(rb));
                let better = match best {
                    None => true,
                    Some((h, bk, _, _)) => avg < h || (avg == h && key < bk),
                };
                if better {
                    best = Some((avg, key, a, b));
                }
            }
        }
        let (h, _, a, b) = best.unwrap();
        let merged: BTreeSet<usize> = clusters[a].union(&clusters[b]).copied().collect();
        clusters.remove(b);
        clusters.remove(a);
        clusters.push(merged.clone());
        out.push((merged, h));
    }
    out
}

/// Student-t density.
pub fn t_density(x: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

/// Two-sided tail `1 − 2∫₀^|t| f` by composite Simpson's rule.
pub fn t_two_sided_quadrature(t: f64, df: f64) -> f64 {
    let steps = 200_000;
    let h = t.abs() / steps as f64;
    let mut s = t_density(0.0, df) + t_density(t.abs(), df);
    for k in 1..steps {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * t_density(k as f64 * h, df);
    }
    1.0 - 2.0 * s * h / 3.0
}

/// Ring contiguity: each unit neighbours `i ± 1`.
pub fn ring_weights(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, (i + 1) % n)] = 0.5;
        w[(i, (i + n - 1) % n)] = 0.5;
    }
    w
}

/// Directed cycle: each unit's only neighbour is `i + 1`.
pub fn cycle_weights(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, (i + 1) % n)] = 1.0;
    }
    w
}

/// Dense random row-stochastic weights with a zero diagonal.
pub fn random_weights<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random::<f64>() });
    for i in 0..n {
        let s: f64 = w.row(i).sum();
        w.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    w
}

pub struct StarDgp {
    pub c: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub sigma: f64,
}

/// Simulates levels whose differences follow the STAR(1,1) recursion with
/// weights `w`. The first `burn` differences are discarded.
pub fn simulate_star<R: Rng>(rng: &mut R, dgp: &StarDgp, w: &DMatrix<f64>, years: usize, burn: usize) -> TemperaturePanel {
    let n = w.nrows();
    let total = years - 1 + burn;
    let mut x = vec![vec![0.0; total]; n];
    for t in 1..total {
        for i in 0..n {
            let lag: f64 = (0..n).map(|j| w[(i, j)] * x[j][t - 1]).sum();
            x[i][t] = dgp.c[i] + dgp.phi[i] * x[i][t - 1] + dgp.psi[i] * lag + dgp.sigma * normal(rng);
        }
    }
    let rows: Vec<Vec<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, xi)| {
            let mut level = 10.0 + i as f64;
            let mut row = vec![level];
            for v in &xi[burn..] {
                level += v;
                row.push(level);
            }
            row
        })
        .collect();
    let names = ids(n);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    TemperaturePanel::from_rows(&refs, 1901, &rows).unwrap()
}

pub fn weight_matrix(kind: WeightKind, panel: &TemperaturePanel, w: DMatrix<f64>) -> WeightMatrix {
    WeightMatrix::from_values(kind, panel.ids(), w).unwrap()
}

/// Random panel of trending noisy temperature series.
pub fn random_panel<R: Rng>(rng: &mut R, n: usize, years: usize) -> TemperaturePanel {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let slope = 0.02 * rng.random::<f64>();
            (0..years)
                .map(|t| 10.0 + i as f64 + slope * t as f64 + 0.5 * normal(rng))
                .collect()
        })
        .collect();
    let names = ids(n);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    TemperaturePanel::from_rows(&refs, 1901, &rows).unwrap()
}
