//! Run configuration: a TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use climstar::panel::PanelFormat;
use climstar::pipeline::{EvaluationOptions, PipelineOptions};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub panel: Option<PathBuf>,
    pub format: PanelFormat,
    /// Edge list `country_a,country_b`; without it STAR_NN is skipped.
    pub adjacency: Option<PathBuf>,
    /// `country,name,zone,area` metadata.
    pub countries: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub pipeline: PipelineOptions,
    pub evaluation: EvaluationOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            out: PathBuf::from("results"),
            workers: 0,
            pipeline: PipelineOptions::default(),
            evaluation: EvaluationOptions::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.data.panel, &mut cfg.data.adjacency, &mut cfg.data.countries]
            .into_iter()
            .flatten()
        {
            rebase(p);
        }
        rebase(&mut cfg.out);
        Ok(cfg)
    }

    /// Checks everything that can be checked before loading data.
    pub fn validate(&self) -> Result<(), CliError> {
        let panel = self
            .data
            .panel
            .as_ref()
            .ok_or_else(|| CliError::config("no panel file given (use --panel or data.panel)"))?;
        require_file(panel)?;
        if let Some(p) = &self.data.adjacency {
            require_file(p)?;
        }
        if let Some(p) = &self.data.countries {
            require_file(p)?;
        }
        self.pipeline.validate()?;
        self.evaluation.mcs.validate()?;
        if self.evaluation.horizon < 1 {
            return Err(CliError::config("horizon must be at least 1"));
        }
        Ok(())
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::config(format!("file not found: {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use climstar::CutRule;

    #[test]
    fn empty_config_is_default() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn nested_keys_parse() {
        let cfg: RunConfig = toml::from_str(
            r#"
            out = "res"
            workers = 2
            [data]
            panel = "t.csv"
            format = "wide"
            [pipeline.scheme_c]
            cut = { rule = "groups", value = 7 }
            [evaluation]
            origin = 1990
            [evaluation.mcs]
            seed = 9
            statistic = "range"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.data.format, PanelFormat::Wide);
        assert_eq!(cfg.pipeline.scheme_c.cut, CutRule::Groups(7));
        assert_eq!(cfg.pipeline.scheme_a.cut, CutRule::Clusters(4));
        assert_eq!(cfg.evaluation.origin, 1990);
        assert_eq!(cfg.evaluation.horizon, 22);
        assert_eq!(cfg.evaluation.mcs.seed, 9);
        assert_eq!(cfg.evaluation.mcs.replications, 10_000);
    }

    #[test]
    fn example_config_is_the_default() {
        let mut cfg: RunConfig = toml::from_str(include_str!("../../../climstar.example.toml")).unwrap();
        cfg.data = DataConfig::default();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("colour = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[evaluation.mcs]\nreps = 5").is_err());
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "out = \"o\"\n[data]\npanel = \"p.csv\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.data.panel.unwrap(), dir.path().join("p.csv"));
        assert_eq!(cfg.out, dir.path().join("o"));
    }
}
