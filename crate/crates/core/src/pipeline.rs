//! End-to-end analysis: trends, the three clusterings, the seven weight
//! matrices and the in-sample / out-of-sample comparison.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::{agglomerate, cut, ClusterAssignment, CutRule, Dendrogram, Scheme};
use crate::distance::{diff_distance, hamming_distance, slope_distance, DistanceMatrix};
use crate::error::{Error, Result};
use crate::eval::{in_sample, oos_experiment, LossGranularity};
use crate::features::{first_differences, fit_linear_trend, sign_sequence, slope_significance, TrendFit};
use crate::mcs::{mcs, McsConfig, McsReport};
use crate::panel::{split_panel, AdjacencyList, TemperaturePanel};
use crate::weights::{
    cluster_restricted_weights, contiguity_weights, distance_weights, ScaleMode, WeightKind, WeightMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeOptions {
    pub cut: CutRule,
    #[serde(default = "default_min_size")]
    pub min_size: usize,
}

fn default_min_size() -> usize {
    2
}

/// Which panel the out-of-sample weight matrices are derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    /// Clusters and distances from the complete panel.
    #[default]
    Full,
    /// Clusters and distances re-derived from the training years only.
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    /// Level of the slope significance screen for scheme A.
    pub alpha: f64,
    pub scheme_a: SchemeOptions,
    pub scheme_b: SchemeOptions,
    pub scheme_c: SchemeOptions,
    pub scale: ScaleMode,
    /// Keep countries with insignificant slopes in the full slope-distance
    /// weights (`dA`). They never enter `cA`.
    pub da_include_null: bool,
    pub weights_from: WeightSource,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        let scheme = |k| SchemeOptions {
            cut: CutRule::Clusters(k),
            min_size: 2,
        };
        PipelineOptions {
            alpha: 0.05,
            scheme_a: scheme(4),
            scheme_b: scheme(5),
            scheme_c: scheme(12),
            scale: ScaleMode::Raw,
            da_include_null: true,
            weights_from: WeightSource::Full,
        }
    }
}

impl PipelineOptions {
    pub fn scheme(&self, s: Scheme) -> SchemeOptions {
        match s {
            Scheme::A => self.scheme_a,
            Scheme::B => self.scheme_b,
            Scheme::C => self.scheme_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("significance level {} outside (0, 1)", self.alpha)));
        }
        if let ScaleMode::Rescale { rho } = self.scale {
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(Error::InvalidArgument(format!("rescale factor {rho} outside (0, 1]")));
            }
        }
        for s in [Scheme::A, Scheme::B, Scheme::C] {
            match self.scheme(s).cut {
                CutRule::Groups(0) | CutRule::Clusters(0) => {
                    return Err(Error::InvalidArgument(format!("scheme {s}: cluster count must be positive")))
                }
                CutRule::Height(h) if !h.is_finite() => {
                    return Err(Error::InvalidArgument(format!("scheme {s}: cut height must be finite")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

const A_NAMES: [&str; 4] = ["very high", "high", "medium", "low"];

/// Everything derived from a panel before any STAR model is fitted.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub options: PipelineOptions,
    pub ids: Vec<String>,
    pub trends: Vec<TrendFit>,
    /// Slope distances over every country.
    pub slope_all: DistanceMatrix,
    /// Slope distances over countries with significant slopes.
    pub slope_significant: DistanceMatrix,
    pub diff: DistanceMatrix,
    pub hamming: DistanceMatrix,
    pub dendrograms: BTreeMap<Scheme, Dendrogram>,
    pub assignments: BTreeMap<Scheme, ClusterAssignment>,
}

impl Analysis {
    /// Trends, distances and all three clusterings.
    pub fn run(panel: &TemperaturePanel, options: PipelineOptions) -> Result<Self> {
        let mut analysis = Self::prepare(panel, options)?;
        for scheme in [Scheme::A, Scheme::B, Scheme::C] {
            analysis.cluster(scheme)?;
        }
        Ok(analysis)
    }

    /// Trends and distances only; schemes are clustered on demand with
    /// [`Analysis::cluster`].
    pub fn prepare(panel: &TemperaturePanel, options: PipelineOptions) -> Result<Self> {
        options.validate()?;
        let ids = panel.ids();
        let trends = (0..panel.n_countries())
            .map(|i| fit_linear_trend(panel.series(i)))
            .collect::<Result<Vec<_>>>()?;
        let significant: Vec<usize> = (0..ids.len())
            .filter(|&i| slope_significance(&trends[i], options.alpha))
            .collect();
        let sig_ids: Vec<String> = significant.iter().map(|&i| ids[i].clone()).collect();
        let sig_trends: Vec<TrendFit> = significant.iter().map(|&i| trends[i]).collect();

        let slope_all = slope_distance(&trends, &ids)?;
        let slope_significant = slope_distance(&sig_trends, &sig_ids)?;
        let diff = diff_distance(panel)?;
        let signs = (0..ids.len())
            .map(|i| first_differences(panel.series(i)).map(|d| sign_sequence(&d)))
            .collect::<Result<Vec<_>>>()?;
        let hamming = hamming_distance(&signs, &ids)?;
        Ok(Analysis {
            options,
            ids,
            trends,
            slope_all,
            slope_significant,
            diff,
            hamming,
            dendrograms: BTreeMap::new(),
            assignments: BTreeMap::new(),
        })
    }

    /// Clusters `scheme` unless already done.
    pub fn cluster(&mut self, scheme: Scheme) -> Result<&ClusterAssignment> {
        if !self.assignments.contains_key(&scheme) {
            let assign = self.build_assignment(scheme)?;
            self.assignments.insert(scheme, assign);
        }
        Ok(&self.assignments[&scheme])
    }

    fn build_assignment(&mut self, scheme: Scheme) -> Result<ClusterAssignment> {
        let opts = self.options.scheme(scheme);
        let dist = match scheme {
            Scheme::A => &self.slope_significant,
            Scheme::B => &self.diff,
            Scheme::C => &self.hamming,
        };
        let mut assign = if dist.len() < 2 {
            // nothing to merge: any lone country is idiosyncratic
            log::warn!("scheme {scheme}: {} countries to cluster, no clusters formed", dist.len());
            let lone: Vec<Vec<String>> = dist.labels().iter().map(|l| vec![l.clone()]).collect();
            ClusterAssignment::from_groups(&lone, opts.min_size.max(2))?.with_scheme(scheme)
        } else {
            let den = agglomerate(dist)?;
            let assign = cut(&den, opts.cut, opts.min_size)?.with_scheme(scheme);
            self.dendrograms.insert(scheme, den);
            assign
        };
        if scheme == Scheme::A {
            assign = assign.with_null_excluded(self.null_ids())?;
            let slope_of = |id: &str| self.trends[self.ids.iter().position(|x| x == id).unwrap()].slope;
            assign.relabel_by_mean_desc(slope_of);
            if assign.n_clusters() == A_NAMES.len() {
                for (k, name) in A_NAMES.iter().enumerate() {
                    assign.set_name(k + 1, *name);
                }
            }
        }
        Ok(assign)
    }

    /// # Panics
    /// If `scheme` has not been clustered.
    pub fn assignment(&self, scheme: Scheme) -> &ClusterAssignment {
        self.assignments
            .get(&scheme)
            .unwrap_or_else(|| panic!("scheme {scheme} has not been clustered"))
    }

    /// Countries whose slopes are not significant at the configured level.
    pub fn null_ids(&self) -> Vec<String> {
        self.ids
            .iter()
            .filter(|id| self.slope_significant.index_of(id).is_none())
            .cloned()
            .collect()
    }

    /// Distance matrix behind a scheme's weights.
    pub fn distance(&self, kind: WeightKind) -> Option<&DistanceMatrix> {
        match kind {
            WeightKind::Nn => None,
            WeightKind::ClusterA => Some(&self.slope_significant),
            WeightKind::DistanceA if self.options.da_include_null => Some(&self.slope_all),
            WeightKind::DistanceA => Some(&self.slope_significant),
            WeightKind::ClusterB | WeightKind::DistanceB => Some(&self.diff),
            WeightKind::ClusterC | WeightKind::DistanceC => Some(&self.hamming),
        }
    }

    pub fn weights(
        &self,
        kind: WeightKind,
        panel: &TemperaturePanel,
        adjacency: Option<&AdjacencyList>,
    ) -> Result<WeightMatrix> {
        let scale = self.options.scale;
        match kind {
            WeightKind::Nn => {
                let adj = adjacency.ok_or_else(|| {
                    Error::InvalidArgument("contiguity weights need an adjacency file".into())
                })?;
                contiguity_weights(adj, panel)
            }
            k if k.is_cluster_restricted() => {
                let scheme = k.scheme().unwrap();
                let assign = self.assignments.get(&scheme).ok_or_else(|| {
                    Error::InvalidArgument(format!("scheme {scheme} has not been clustered"))
                })?;
                cluster_restricted_weights(self.distance(k).unwrap(), assign, panel, k, scale)
            }
            k => distance_weights(self.distance(k).unwrap(), panel, k, scale),
        }
    }

    /// All seven matrices, or six when no adjacency is supplied.
    pub fn all_weights(&self, panel: &TemperaturePanel, adjacency: Option<&AdjacencyList>) -> Result<Vec<WeightMatrix>> {
        WeightKind::ALL
            .into_iter()
            .filter(|k| *k != WeightKind::Nn || adjacency.is_some())
            .map(|k| self.weights(k, panel, adjacency))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationOptions {
    /// Last training year.
    pub origin: i32,
    pub horizon: usize,
    pub granularity: LossGranularity,
    pub mcs: McsConfig,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        EvaluationOptions {
            origin: 2000,
            horizon: 22,
            granularity: LossGranularity::PerPeriod,
            mcs: McsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelLoss {
    pub model: String,
    pub fn_loss: f64,
    pub p_value: Option<f64>,
}

/// Table-shaped comparison: in-sample losses in the canonical model order,
/// out-of-sample losses in MCS elimination order with their p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub in_sample: Vec<ModelLoss>,
    pub out_of_sample: Vec<ModelLoss>,
    pub origin: i32,
    pub horizon: usize,
    pub granularity: LossGranularity,
    pub mcs: McsReport,
}

impl EvaluationReport {
    pub fn in_sample_fn(&self, kind: WeightKind) -> Option<f64> {
        let name = kind.model_name();
        self.in_sample.iter().find(|m| m.model == name).map(|m| m.fn_loss)
    }

    pub fn out_of_sample_fn(&self, kind: WeightKind) -> Option<f64> {
        let name = kind.model_name();
        self.out_of_sample.iter().find(|m| m.model == name).map(|m| m.fn_loss)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Long CSV `section,model,fn,p_value`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["section", "model", "fn", "p_value"])
            .map_err(|e| Error::csv(path, e))?;
        for (section, rows) in [("in_sample", &self.in_sample), ("out_of_sample", &self.out_of_sample)] {
            for r in rows {
                w.write_record([
                    section.to_string(),
                    r.model.clone(),
                    format!("{:.4}", r.fn_loss),
                    r.p_value.map(|p| format!("{p:.4}")).unwrap_or_default(),
                ])
                .map_err(|e| Error::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Runs the in-sample fit, the out-of-sample experiment and the MCS.
pub fn evaluate(
    panel: &TemperaturePanel,
    adjacency: Option<&AdjacencyList>,
    options: PipelineOptions,
    eval: &EvaluationOptions,
) -> Result<EvaluationReport> {
    eval.mcs.validate()?;
    if eval.horizon < 1 || eval.origin + eval.horizon as i32 > panel.last_year() {
        return Err(Error::InvalidArgument(format!(
            "origin {} with horizon {} does not fit in {}..={}",
            eval.origin,
            eval.horizon,
            panel.first_year(),
            panel.last_year()
        )));
    }
    let analysis = Analysis::run(panel, options)?;
    let full_weights = analysis.all_weights(panel, adjacency)?;
    let in_sample_rows = in_sample(panel, &full_weights)?
        .into_iter()
        .map(|(s, _)| ModelLoss {
            model: s.name(),
            fn_loss: s.fn_loss,
            p_value: None,
        })
        .collect();

    let oos_weights = match options.weights_from {
        WeightSource::Full => full_weights,
        WeightSource::Train => {
            let (train, _) = split_panel(panel, eval.origin)?;
            Analysis::run(&train, options)?.all_weights(&train, adjacency)?
        }
    };
    let table = oos_experiment(panel, &oos_weights, eval.origin, eval.horizon, eval.granularity)?;
    let report = mcs(&table.loss_series(), &eval.mcs)?;
    let out_of_sample = report
        .steps
        .iter()
        .map(|step| {
            let score = table.scores.iter().find(|s| s.name() == step.model).unwrap();
            ModelLoss {
                model: step.model.clone(),
                fn_loss: score.fn_loss,
                p_value: Some(step.p_value),
            }
        })
        .collect();
    Ok(EvaluationReport {
        in_sample: in_sample_rows,
        out_of_sample,
        origin: eval.origin,
        horizon: eval.horizon,
        granularity: eval.granularity,
        mcs: report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(k: usize) -> SchemeOptions {
        SchemeOptions {
            cut: CutRule::Groups(k),
            min_size: 2,
        }
    }

    fn opts() -> PipelineOptions {
        PipelineOptions {
            scheme_a: groups(2),
            scheme_b: groups(2),
            scheme_c: groups(2),
            scale: ScaleMode::Rescale { rho: 1.0 },
            ..PipelineOptions::default()
        }
    }

    #[test]
    fn flat_series_leave_scheme_a_empty() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..12).map(|t| i as f64 + if t % 2 == 0 { 0.5 } else { -0.5 }).collect())
            .collect();
        let p = TemperaturePanel::from_rows(&["a", "b", "c", "d"], 2000, &rows).unwrap();
        let an = Analysis::run(&p, opts()).unwrap();
        let a = an.assignment(Scheme::A);
        assert_eq!(a.n_clusters(), 0);
        assert_eq!(a.null_excluded().len(), 4);
        assert!(!an.dendrograms.contains_key(&Scheme::A));
        let w = an.weights(WeightKind::ClusterA, &p, None).unwrap();
        assert_eq!(w.zero_rows().len(), 4);
    }

    #[test]
    fn scheme_a_named_by_warming_rate() {
        let slopes = [0.05, 0.051, 0.03, 0.031, 0.01, 0.011, 0.002, 0.0021];
        let ids: Vec<String> = (0..8).map(|i| format!("k{i}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = slopes
            .iter()
            .map(|b| (0..100).map(|t| b * t as f64 + 1e-4 * ((t * 7919) % 13) as f64).collect())
            .collect();
        let p = TemperaturePanel::from_rows(&refs, 1901, &rows).unwrap();
        let mut o = opts();
        o.scheme_a = SchemeOptions {
            cut: CutRule::Clusters(4),
            min_size: 2,
        };
        let an = Analysis::run(&p, o).unwrap();
        let a = an.assignment(Scheme::A);
        assert_eq!(a.name(1), "very high");
        assert_eq!(a.members(1), vec!["k0".to_string(), "k1".to_string()]);
        assert_eq!(a.name(4), "low");
        assert_eq!(a.members(4), vec!["k6".to_string(), "k7".to_string()]);
    }

    #[test]
    fn options_reject_bad_values() {
        let o = PipelineOptions {
            alpha: 1.0,
            ..PipelineOptions::default()
        };
        assert!(o.validate().is_err());
        let o = PipelineOptions {
            scheme_b: groups(0),
            ..PipelineOptions::default()
        };
        assert!(o.validate().is_err());
        let parsed: PipelineOptions = serde_json::from_str(r#"{"scheme_c": {"cut": {"rule": "auto"}}}"#).unwrap();
        assert_eq!(parsed.scheme_c.cut, CutRule::Auto);
        assert_eq!(parsed.scheme_c.min_size, 2);
        assert!(serde_json::from_str::<PipelineOptions>(r#"{"bogus": 1}"#).is_err());
    }
}
