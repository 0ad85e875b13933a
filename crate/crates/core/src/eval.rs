//! Frobenius-norm losses and the in-sample / out-of-sample comparisons.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{split_panel, TemperaturePanel};
use crate::star::{fit_star, fitted_levels, forecast, StarModel};
use crate::weights::{WeightKind, WeightMatrix};

/// `trace[(Y − Ŷ)'(Y − Ŷ)]`, the total squared error.
pub fn frobenius_norm(observed: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<f64> {
    check_shape(observed, predicted)?;
    Ok(observed.iter().zip(predicted.iter()).map(|(y, f)| (y - f) * (y - f)).sum())
}

fn check_shape(observed: &DMatrix<f64>, predicted: &DMatrix<f64>) -> Result<()> {
    if observed.shape() != predicted.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", observed.shape()),
            found: format!("{:?}", predicted.shape()),
        });
    }
    Ok(())
}

/// Unit of one loss observation handed to the confidence-set procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossGranularity {
    /// One loss per year, summed over countries.
    #[default]
    PerPeriod,
    /// One loss per country-year, ordered year by year.
    PerObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSeries {
    pub model: String,
    pub losses: Vec<f64>,
}

impl LossSeries {
    pub fn total(&self) -> f64 {
        self.losses.iter().sum()
    }
}

/// Squared errors of an N × H prediction grouped by `granularity`.
pub fn loss_series(
    model: impl Into<String>,
    observed: &DMatrix<f64>,
    predicted: &DMatrix<f64>,
    granularity: LossGranularity,
) -> Result<LossSeries> {
    check_shape(observed, predicted)?;
    let sq = observed.zip_map(predicted, |y, f| (y - f) * (y - f));
    // column-major storage: iterating a column walks the countries of one year
    let losses = match granularity {
        LossGranularity::PerPeriod => sq.column_iter().map(|c| c.sum()).collect(),
        LossGranularity::PerObservation => sq.iter().copied().collect(),
    };
    Ok(LossSeries {
        model: model.into(),
        losses,
    })
}

/// Observed levels aligned with [`fitted_levels`]: the third year onwards.
pub fn in_sample_observed(panel: &TemperaturePanel) -> Result<DMatrix<f64>> {
    Ok(panel.slice_years(2, panel.n_years())?.matrix())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelScore {
    pub kind: WeightKind,
    pub fn_loss: f64,
    pub losses: LossSeries,
}

impl ModelScore {
    pub fn name(&self) -> String {
        self.kind.model_name()
    }
}

/// Fits each model on the whole panel and scores fitted against observed
/// levels.
pub fn in_sample(panel: &TemperaturePanel, weights: &[WeightMatrix]) -> Result<Vec<(ModelScore, StarModel)>> {
    let observed = in_sample_observed(panel)?;
    weights
        .par_iter()
        .map(|w| {
            let model = fit_star(panel, w)?;
            let fitted = fitted_levels(&model, panel)?;
            let losses = loss_series(w.kind().model_name(), &observed, &fitted.levels, LossGranularity::PerPeriod)?;
            Ok((
                ModelScore {
                    kind: w.kind(),
                    fn_loss: losses.total(),
                    losses,
                },
                model,
            ))
        })
        .collect()
}

/// Result of fitting on years up to `origin` and forecasting `horizon`
/// years ahead.
#[derive(Debug, Clone, PartialEq)]
pub struct OosTable {
    pub origin: i32,
    pub horizon: usize,
    /// Sorted by increasing loss.
    pub scores: Vec<ModelScore>,
}

impl OosTable {
    pub fn loss_series(&self) -> Vec<LossSeries> {
        self.scores.iter().map(|s| s.losses.clone()).collect()
    }

    pub fn best(&self) -> &ModelScore {
        &self.scores[0]
    }

    pub fn get(&self, kind: WeightKind) -> Option<&ModelScore> {
        self.scores.iter().find(|s| s.kind == kind)
    }
}

/// Fits every model on years up to `origin`, forecasts `horizon` years and
/// scores the forecasts against the held-out observations.
pub fn oos_experiment(
    panel: &TemperaturePanel,
    weights: &[WeightMatrix],
    origin: i32,
    horizon: usize,
    granularity: LossGranularity,
) -> Result<OosTable> {
    if horizon < 1 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if origin + horizon as i32 > panel.last_year() {
        return Err(Error::InvalidArgument(format!(
            "origin {origin} + horizon {horizon} runs past the last year {}",
            panel.last_year()
        )));
    }
    let (train, test) = split_panel(panel, origin)?;
    let observed = test.slice_years(0, horizon)?.matrix();
    let mut scores = weights
        .par_iter()
        .map(|w| {
            let model = fit_star(&train, w)?;
            let fc = forecast(&model, &train, horizon)?;
            let fn_loss = frobenius_norm(&observed, &fc.levels)?;
            let losses = loss_series(w.kind().model_name(), &observed, &fc.levels, granularity)?;
            Ok(ModelScore {
                kind: w.kind(),
                fn_loss,
                losses,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| a.fn_loss.total_cmp(&b.fn_loss).then(a.kind.cmp(&b.kind)));
    Ok(OosTable {
        origin,
        horizon,
        scores,
    })
}
