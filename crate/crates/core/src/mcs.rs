//! Model Confidence Set with a moving-block bootstrap.
//!
//! Every replication resamples blocks of periods once and the same draws are
//! reused at each elimination step. Replications run in parallel, each on its
//! own stream of a seeded ChaCha generator, and are stored in a preallocated
//! slot, so a fixed seed reproduces the report bit for bit.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LossSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McsStatistic {
    /// `Σ_{i<j} t_ij²`
    #[default]
    SemiQuadratic,
    /// `max_{i,j} |t_ij|`
    Range,
}

impl fmt::Display for McsStatistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            McsStatistic::SemiQuadratic => "semi_quadratic",
            McsStatistic::Range => "range",
        })
    }
}

impl FromStr for McsStatistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sq" | "semi_quadratic" | "semiquadratic" => Ok(McsStatistic::SemiQuadratic),
            "r" | "range" => Ok(McsStatistic::Range),
            _ => Err(Error::InvalidArgument(format!("unknown MCS statistic {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McsConfig {
    pub alpha: f64,
    pub replications: usize,
    pub block_length: usize,
    pub statistic: McsStatistic,
    pub seed: u64,
}

impl Default for McsConfig {
    fn default() -> Self {
        McsConfig {
            alpha: 0.01,
            replications: 10_000,
            block_length: 2,
            statistic: McsStatistic::SemiQuadratic,
            seed: 20_250_101,
        }
    }
}

impl McsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("MCS alpha {} outside [0, 1)", self.alpha)));
        }
        if self.replications < 100 {
            return Err(Error::InvalidArgument(format!(
                "MCS needs at least 100 bootstrap replications, got {}",
                self.replications
            )));
        }
        if self.block_length == 0 {
            return Err(Error::InvalidArgument("MCS block length must be positive".into()));
        }
        Ok(())
    }
}

/// One model leaving the candidate set (or the final survivor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsStep {
    pub model: String,
    /// Max-adjusted MCS p-value.
    pub p_value: f64,
    /// p-value of the equivalence test at this step, before adjustment.
    pub test_p_value: f64,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsReport {
    pub statistic: McsStatistic,
    pub alpha: f64,
    pub replications: usize,
    pub block_length: usize,
    pub seed: u64,
    /// Elimination order; the last entry is the final survivor with p = 1.
    pub steps: Vec<McsStep>,
    /// Models with p-value ≥ alpha, in elimination order.
    pub survivors: Vec<String>,
    pub warnings: Vec<String>,
}

impl McsReport {
    pub fn p_value(&self, model: &str) -> Option<f64> {
        self.steps.iter().find(|s| s.model == model).map(|s| s.p_value)
    }

    pub fn order(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.model.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Period indices of one moving-block bootstrap sample.
pub fn block_indices<R: Rng>(rng: &mut R, n: usize, block: usize) -> Vec<usize> {
    let block = block.clamp(1, n);
    let mut idx = Vec::with_capacity(n + block);
    while idx.len() < n {
        let start = rng.random_range(0..=n - block);
        idx.extend(start..start + block);
    }
    idx.truncate(n);
    idx
}

fn replication_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// `mean / sd`, with the degenerate zero-variance cases spelled out.
fn studentize(mean: f64, var: f64) -> f64 {
    if var > 0.0 {
        mean / var.sqrt()
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    }
}

fn bootstrap_variance(center: f64, draws: impl Iterator<Item = f64>, count: usize) -> f64 {
    draws.map(|d| (d - center) * (d - center)).sum::<f64>() / count as f64
}

/// Runs the full elimination sequence on equal-length loss series.
pub fn mcs(losses: &[LossSeries], cfg: &McsConfig) -> Result<McsReport> {
    cfg.validate()?;
    let m = losses.len();
    if m == 0 {
        return Err(Error::InvalidArgument("MCS needs at least one model".into()));
    }
    let n = losses[0].losses.len();
    if n == 0 || losses.iter().any(|l| l.losses.len() != n) {
        return Err(Error::ShapeMismatch {
            expected: format!("{m} loss series of equal, positive length"),
            found: losses
                .iter()
                .map(|l| l.losses.len().to_string())
                .collect::<Vec<_>>()
                .join("/"),
        });
    }
    if losses.iter().flat_map(|l| &l.losses).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss series".into()));
    }
    let mut report = McsReport {
        statistic: cfg.statistic,
        alpha: cfg.alpha,
        replications: cfg.replications,
        block_length: cfg.block_length,
        seed: cfg.seed,
        steps: Vec::new(),
        survivors: Vec::new(),
        warnings: Vec::new(),
    };
    if m == 1 {
        report.steps.push(McsStep {
            model: losses[0].model.clone(),
            p_value: 1.0,
            test_p_value: 1.0,
            statistic: 0.0,
        });
        report.survivors.push(losses[0].model.clone());
        return Ok(report);
    }

    let means: Vec<f64> = losses.iter().map(|l| l.losses.iter().sum::<f64>() / n as f64).collect();
    let b_count = cfg.replications;
    // boot[b][i]: resampled mean loss of model i in replication b
    let boot: Vec<Vec<f64>> = (0..b_count)
        .into_par_iter()
        .map(|b| {
            let mut rng = replication_rng(cfg.seed, b);
            let idx = block_indices(&mut rng, n, cfg.block_length);
            losses
                .iter()
                .map(|l| idx.iter().map(|&t| l.losses[t]).sum::<f64>() / n as f64)
                .collect()
        })
        .collect();

    let mut warnings = BTreeSet::new();
    let mut active: Vec<usize> = (0..m).collect();
    let mut running_max = 0.0f64;
    while active.len() > 1 {
        let (stat, test_p, worst) = elimination_step(&active, &means, &boot, cfg.statistic, losses, &mut warnings);
        running_max = running_max.max(test_p);
        report.steps.push(McsStep {
            model: losses[worst].model.clone(),
            p_value: running_max,
            test_p_value: test_p,
            statistic: stat,
        });
        active.retain(|&i| i != worst);
    }
    report.steps.push(McsStep {
        model: losses[active[0]].model.clone(),
        p_value: 1.0,
        test_p_value: 1.0,
        statistic: 0.0,
    });
    report.survivors = report
        .steps
        .iter()
        .filter(|s| s.p_value >= cfg.alpha)
        .map(|s| s.model.clone())
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    report.warnings = warnings.into_iter().collect();
    Ok(report)
}

/// Equivalence test on `active`; returns the statistic, its bootstrap
/// p-value and the model to eliminate.
fn elimination_step(
    active: &[usize],
    means: &[f64],
    boot: &[Vec<f64>],
    statistic: McsStatistic,
    losses: &[LossSeries],
    warnings: &mut BTreeSet<String>,
) -> (f64, f64, usize) {
    let b_count = boot.len();
    let pairs: Vec<(usize, usize)> = active
        .iter()
        .enumerate()
        .flat_map(|(a, &i)| active[a + 1..].iter().map(move |&j| (i, j)))
        .collect();

    // studentized pairwise differentials and their bootstrap scale
    let mut t_pair = Vec::with_capacity(pairs.len());
    let mut sd_pair = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        let d = means[i] - means[j];
        let var = bootstrap_variance(d, boot.iter().map(|r| r[i] - r[j]), b_count);
        if var == 0.0 {
            warnings.insert(format!(
                "zero bootstrap variance for {} vs {}; pair contributes {}",
                losses[i].model,
                losses[j].model,
                if d == 0.0 { "0" } else { "an infinite statistic" }
            ));
        }
        t_pair.push(studentize(d, var));
        sd_pair.push(var.sqrt());
    }

    let combine = |ts: &mut dyn Iterator<Item = f64>| -> f64 {
        match statistic {
            McsStatistic::SemiQuadratic => ts.map(|t| t * t).sum(),
            McsStatistic::Range => ts.map(f64::abs).fold(0.0, f64::max),
        }
    };
    let stat = combine(&mut t_pair.iter().copied());
    let exceed = boot
        .iter()
        .filter(|r| {
            let mut centered = pairs.iter().zip(&sd_pair).map(|(&(i, j), &sd)| {
                if sd > 0.0 {
                    ((r[i] - r[j]) - (means[i] - means[j])) / sd
                } else {
                    0.0
                }
            });
            combine(&mut centered) >= stat
        })
        .count();
    let p = exceed as f64 / b_count as f64;

    let worst = match statistic {
        McsStatistic::SemiQuadratic => {
            // loss of each model relative to the average of the active set
            let k = active.len() as f64;
            let avg = active.iter().map(|&i| means[i]).sum::<f64>() / k;
            let boot_avg: Vec<f64> = boot.iter().map(|r| active.iter().map(|&i| r[i]).sum::<f64>() / k).collect();
            argmax(active.iter().map(|&i| {
                let d = means[i] - avg;
                let var = bootstrap_variance(d, boot.iter().zip(&boot_avg).map(|(r, a)| r[i] - a), b_count);
                (i, studentize(d, var))
            }))
        }
        McsStatistic::Range => argmax(active.iter().map(|&i| {
            let worst_t = pairs
                .iter()
                .zip(&t_pair)
                .filter_map(|(&(a, b), &t)| {
                    if a == i {
                        Some(t)
                    } else if b == i {
                        Some(-t)
                    } else {
                        None
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max);
            (i, worst_t)
        })),
    };
    (stat, p, worst)
}

/// First index attaining the maximum score.
fn argmax(scores: impl Iterator<Item = (usize, f64)>) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.expect("non-empty candidate set").0
}
