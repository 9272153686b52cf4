use std::path::PathBuf;

use anyhow::{Context, Result};
use lclogit::{AttributeSchema, CovariateSpec, FitOptions, ProfileMode};
use serde::{Deserialize, Serialize};

/// Everything a run needs besides the command line. Paths are relative to
/// the working directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub data: DataSection,
    pub model: ModelSection,
    pub fit: FitOptions,
    pub design: DesignSection,
    pub simulate: SimulateSection,
    pub wtp: WtpSection,
    pub recover: RecoverSection,
    /// Attribute schema; the heritage referendum attributes when absent.
    pub attributes: Option<AttributeSchema>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub observations: Option<PathBuf>,
    pub respondents: Option<PathBuf>,
    /// Declared covariates; empty means every respondents-file column.
    pub covariates: Vec<CovariateSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub spec: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignSection {
    pub tasks: usize,
    pub blocks: usize,
    pub iterations: usize,
    pub restarts: usize,
    pub threshold: f64,
    /// Existing design CSV for `simulate` and `recover`.
    pub file: Option<PathBuf>,
    pub levy: Option<LevyRule>,
}

impl Default for DesignSection {
    fn default() -> Self {
        let d = lclogit::DesignConfig::default();
        Self {
            tasks: d.tasks,
            blocks: d.blocks,
            iterations: d.iterations,
            restarts: d.restarts,
            threshold: d.threshold,
            file: None,
            levy: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevyRule {
    pub target_npv: f64,
    pub households: f64,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default = "default_years")]
    pub years: u32,
    #[serde(default = "default_adjustment")]
    pub adjustment: f64,
}

fn default_rate() -> f64 {
    0.03
}
fn default_years() -> u32 {
    50
}
fn default_adjustment() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub respondents: usize,
    /// Covariate generator file; no covariates when absent.
    pub covariates: Option<PathBuf>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            respondents: 489,
            covariates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WtpSection {
    /// Fit artifact written by `estimate`.
    pub fit: Option<PathBuf>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub profiles: ProfileMode,
    pub curve_points: usize,
}

impl Default for WtpSection {
    fn default() -> Self {
        Self {
            fit: None,
            lower: None,
            upper: None,
            profiles: ProfileMode::Empirical,
            curve_points: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoverSection {
    pub respondents: usize,
    pub naysayer_demo: bool,
}

impl Default for RecoverSection {
    fn default() -> Self {
        Self {
            respondents: 2000,
            naysayer_demo: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&s).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn attributes(&self) -> AttributeSchema {
        self.attributes.clone().unwrap_or_else(AttributeSchema::table1)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
