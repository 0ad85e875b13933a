//! Synthetic inputs sized like the country panel (168 × 122) for the
//! benchmarks.

use climstar::eval::LossSeries;
use climstar::{DistanceMatrix, Metric, TemperaturePanel, WeightKind, WeightMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const COUNTRIES: usize = 168;
pub const YEARS: usize = 122;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i:03}")).collect()
}

/// Trending series with uniform noise.
pub fn panel(n: usize, years: usize, seed: u64) -> TemperaturePanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let slope = 0.02 * rng.random::<f64>();
            (0..years)
                .map(|t| 5.0 + 0.1 * i as f64 + slope * t as f64 + rng.random::<f64>() - 0.5)
                .collect()
        })
        .collect();
    let names = ids(n);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    TemperaturePanel::from_rows(&refs, 1901, &rows).expect("valid synthetic panel")
}

/// Symmetric matrix of uniform distances.
pub fn distances(k: usize, seed: u64) -> DistanceMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..i {
            let v = rng.random::<f64>();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    DistanceMatrix::new(Metric::Diff, ids(k), m).expect("valid synthetic distances")
}

/// Dense row-normalized weights.
pub fn weights(panel: &TemperaturePanel, seed: u64) -> WeightMatrix {
    let n = panel.n_countries();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random::<f64>() });
    for mut row in w.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    WeightMatrix::from_values(WeightKind::DistanceC, panel.ids(), w).expect("valid synthetic weights")
}

/// `models` loss series of length `periods`.
pub fn losses(models: usize, periods: usize, seed: u64) -> Vec<LossSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..models)
        .map(|m| LossSeries {
            model: format!("m{m}"),
            losses: (0..periods).map(|_| 30.0 + 0.1 * m as f64 + rng.random::<f64>()).collect(),
        })
        .collect()
}
