//! Clustering countries by the similarity of their temperature dynamics and
//! using the resulting distances and clusters as spatial weights in STAR(1,1)
//! models.
//!
//! The crate is organized along the analysis:
//!
//! * [`panel`]: loading and splitting the country × year panel,
//! * [`features`]: linear trends, first differences, sign strings,
//! * [`distance`]: slope, difference and Hamming dissimilarities,
//! * [`cluster`]: average-linkage dendrograms, cuts and contingency tables,
//! * [`weights`]: contiguity, cluster-restricted and distance weights,
//! * [`star`]: equation-by-equation STAR(1,1) fits and forecasts,
//! * [`eval`] and [`mcs`]: Frobenius losses and the Model Confidence Set,
//! * [`pipeline`]: the whole comparison wired together.

pub mod cluster;
pub mod distance;
pub mod error;
pub mod eval;
pub mod features;
pub mod mcs;
pub mod ols;
pub mod panel;
pub mod pipeline;
pub mod star;
pub mod weights;

pub use cluster::{agglomerate, cut, ClusterAssignment, ContingencyTable, CutRule, Dendrogram, Scheme};
pub use distance::{DistanceMatrix, Metric};
pub use error::{Error, Result};
pub use eval::{frobenius_norm, LossGranularity, LossSeries};
pub use features::{SignString, TrendFit};
pub use mcs::{mcs, McsConfig, McsReport, McsStatistic};
pub use panel::{load_adjacency, load_panel, split_panel, AdjacencyList, CountryMeta, PanelFormat, TemperaturePanel, Zone};
pub use pipeline::{Analysis, EvaluationOptions, EvaluationReport, PipelineOptions};
pub use star::{fit_star, fitted_levels, forecast, StarModel};
pub use weights::{ScaleMode, WeightKind, WeightMatrix};
