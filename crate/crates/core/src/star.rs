//! STAR(1,1) on first differences, estimated equation by equation:
//!
//! ```text
//! x_it = c_i + φ_i x_i,t−1 + ψ_i Σ_j w_ij x_j,t−1 + e_it,    x_it = y_it − y_i,t−1
//! ```
//!
//! Differencing costs the first year and the lag the second, so each
//! equation uses `T − 2` rows. A country with a zero weight row has no
//! spatial regressor and reduces to an AR(1) on differences.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ols::ols;
use crate::panel::TemperaturePanel;
use crate::weights::WeightMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regressor {
    Temporal,
    Spatial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equation {
    pub country: String,
    pub c: f64,
    pub phi: Option<f64>,
    pub psi: Option<f64>,
    /// `SSR / (n − p)`.
    pub sigma2: f64,
    pub n_obs: usize,
    /// Regressors removed because they were collinear with the rest.
    pub dropped: Vec<Regressor>,
}

impl Equation {
    fn predict(&self, own_lag: f64, spatial_lag: f64) -> f64 {
        self.c + self.phi.unwrap_or(0.0) * own_lag + self.psi.unwrap_or(0.0) * spatial_lag
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarModel {
    pub equations: Vec<Equation>,
    pub weights: WeightMatrix,
    pub train_span: (i32, i32),
}

/// Row-major N × (T − 1) matrix of first differences.
fn differences(panel: &TemperaturePanel) -> Vec<Vec<f64>> {
    (0..panel.n_countries())
        .map(|i| panel.series(i).windows(2).map(|w| w[1] - w[0]).collect())
        .collect()
}

fn check_labels(panel: &TemperaturePanel, w: &WeightMatrix) -> Result<()> {
    if w.labels() != panel.ids().as_slice() {
        return Err(Error::ShapeMismatch {
            expected: "weight matrix labels in panel order".into(),
            found: format!("{} labels not matching the panel", w.len()),
        });
    }
    Ok(())
}

/// Spatial lags `Σ_j w_ij x_j,s` for every country and difference period.
fn spatial_lags(w: &WeightMatrix, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = x.len();
    let periods = x.first().map_or(0, Vec::len);
    let mut lag = vec![vec![0.0; periods]; n];
    for s in 0..periods {
        let col: Vec<f64> = x.iter().map(|r| r[s]).collect();
        for (i, v) in w.spatial_lag(&col).into_iter().enumerate() {
            lag[i][s] = v;
        }
    }
    lag
}

fn fit_equation(country: &str, y: &[f64], own: &[f64], spatial: Option<&[f64]>) -> Result<Equation> {
    let n = y.len();
    let mut included: Vec<(Option<Regressor>, &[f64])> = vec![(Some(Regressor::Temporal), own)];
    if let Some(s) = spatial {
        included.push((Some(Regressor::Spatial), s));
    }
    let mut dropped = Vec::new();
    let yv = DVector::from_column_slice(y);
    loop {
        let p = included.len() + 1;
        let x = DMatrix::from_fn(n, p, |r, k| if k == 0 { 1.0 } else { included[k - 1].1[r] });
        match ols(&x, &yv) {
            Ok(fit) => {
                let mut eq = Equation {
                    country: country.to_string(),
                    c: fit.coef[0],
                    phi: None,
                    psi: None,
                    sigma2: fit.ssr / (n - p) as f64,
                    n_obs: n,
                    dropped,
                };
                for ((reg, _), b) in included.iter().zip(&fit.coef[1..]) {
                    match reg {
                        Some(Regressor::Temporal) => eq.phi = Some(*b),
                        Some(Regressor::Spatial) => eq.psi = Some(*b),
                        None => {}
                    }
                }
                if !(eq.c.is_finite() && eq.sigma2.is_finite()) {
                    return Err(Error::NonFinite(format!("STAR equation for {country}")));
                }
                return Ok(eq);
            }
            Err(def) if def.column > 0 && def.column <= included.len() => {
                let (reg, _) = included.remove(def.column - 1);
                log::warn!("{country}: dropping collinear {reg:?} regressor");
                dropped.extend(reg);
            }
            Err(_) => {
                return Err(Error::Numerical(format!(
                    "STAR equation for {country} cannot be estimated from {n} observations"
                )))
            }
        }
    }
}

/// Fits every equation of a STAR(1,1) on the differenced panel.
pub fn fit_star(panel: &TemperaturePanel, weights: &WeightMatrix) -> Result<StarModel> {
    check_labels(panel, weights)?;
    let t = panel.n_years();
    if t < 4 {
        return Err(Error::InvalidArgument(format!("STAR fit needs at least 4 years, got {t}")));
    }
    let x = differences(panel);
    let lag = spatial_lags(weights, &x);
    let ids = panel.ids();
    let equations = (0..panel.n_countries())
        .into_par_iter()
        .map(|i| {
            let periods = x[i].len();
            let spatial = (!weights.is_zero_row(i)).then(|| &lag[i][..periods - 1]);
            fit_equation(&ids[i], &x[i][1..], &x[i][..periods - 1], spatial)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StarModel {
        equations,
        weights: weights.clone(),
        train_span: (panel.first_year(), panel.last_year()),
    })
}

impl StarModel {
    /// Countries whose equation has `|φ| + |ψ| ≥ 1`.
    pub fn nonstationary(&self) -> Vec<&str> {
        self.equations
            .iter()
            .filter(|e| e.phi.unwrap_or(0.0).abs() + e.psi.unwrap_or(0.0).abs() >= 1.0)
            .map(|e| e.country.as_str())
            .collect()
    }

    /// One-step prediction of every country's difference from last period's
    /// differences.
    pub fn step(&self, x_prev: &[f64]) -> Vec<f64> {
        let lag = self.weights.spatial_lag(x_prev);
        self.equations
            .iter()
            .zip(x_prev.iter().zip(&lag))
            .map(|(eq, (&own, &sp))| eq.predict(own, sp))
            .collect()
    }

    /// Writes `country,c,phi,psi,sigma2`; absent coefficients are empty.
    pub fn write_coefficients_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["country", "c", "phi", "psi", "sigma2"])
            .map_err(|e| Error::csv(path, e))?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.equations {
            w.write_record([e.country.clone(), e.c.to_string(), opt(e.phi), opt(e.psi), e.sigma2.to_string()])
                .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Country × year panel of model output (fitted or forecast levels).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPanel {
    pub countries: Vec<String>,
    pub years: Vec<i32>,
    /// N × H levels.
    pub levels: DMatrix<f64>,
    /// N × H predicted differences behind the levels.
    pub diffs: DMatrix<f64>,
}

/// In-sample fitted levels, spanning the third through last panel year.
pub type FittedPanel = LevelPanel;
/// Out-of-sample levels for the years after the panel's last year.
pub type ForecastPanel = LevelPanel;

impl LevelPanel {
    /// Long-format `country,year,value`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["country", "year", "value"])
            .map_err(|e| Error::csv(path, e))?;
        for (i, c) in self.countries.iter().enumerate() {
            for (h, y) in self.years.iter().enumerate() {
                w.write_record([c.clone(), y.to_string(), self.levels[(i, h)].to_string()])
                    .map_err(|e| Error::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn check_model_panel(model: &StarModel, panel: &TemperaturePanel) -> Result<()> {
    check_labels(panel, &model.weights)?;
    if model.equations.len() != panel.n_countries() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} equations", panel.n_countries()),
            found: model.equations.len().to_string(),
        });
    }
    Ok(())
}

/// `ŷ_it = y_i,t−1 + x̂_it` with `x̂` the one-step in-sample prediction.
pub fn fitted_levels(model: &StarModel, panel: &TemperaturePanel) -> Result<FittedPanel> {
    check_model_panel(model, panel)?;
    let t = panel.n_years();
    if t < 3 {
        return Err(Error::InvalidArgument("fitted levels need at least 3 years".into()));
    }
    let n = panel.n_countries();
    let x = differences(panel);
    let span = t - 2;
    let mut levels = DMatrix::zeros(n, span);
    let mut diffs = DMatrix::zeros(n, span);
    for s in 0..span {
        let prev: Vec<f64> = x.iter().map(|r| r[s]).collect();
        for (i, d) in model.step(&prev).into_iter().enumerate() {
            diffs[(i, s)] = d;
            levels[(i, s)] = panel.value(i, s + 1) + d;
        }
    }
    Ok(LevelPanel {
        countries: panel.ids(),
        years: panel.years()[2..].to_vec(),
        levels,
        diffs,
    })
}

/// Iterated `horizon`-step forecast from the panel's last year. Forecast
/// differences feed both lag terms; levels are anchored at the last
/// observed temperature.
pub fn forecast(model: &StarModel, panel: &TemperaturePanel, horizon: usize) -> Result<ForecastPanel> {
    check_model_panel(model, panel)?;
    if horizon < 1 {
        return Err(Error::InvalidArgument("forecast horizon must be at least 1".into()));
    }
    let t = panel.n_years();
    if t < 2 {
        return Err(Error::InvalidArgument("forecast needs at least 2 observed years".into()));
    }
    let n = panel.n_countries();
    let mut prev: Vec<f64> = (0..n).map(|i| panel.value(i, t - 1) - panel.value(i, t - 2)).collect();
    let mut level: Vec<f64> = (0..n).map(|i| panel.value(i, t - 1)).collect();
    let mut levels = DMatrix::zeros(n, horizon);
    let mut diffs = DMatrix::zeros(n, horizon);
    for h in 0..horizon {
        let next = model.step(&prev);
        for i in 0..n {
            level[i] += next[i];
            diffs[(i, h)] = next[i];
            levels[(i, h)] = level[i];
        }
        prev = next;
    }
    let last = panel.last_year();
    Ok(LevelPanel {
        countries: panel.ids(),
        years: (1..=horizon as i32).map(|h| last + h).collect(),
        levels,
        diffs,
    })
}
