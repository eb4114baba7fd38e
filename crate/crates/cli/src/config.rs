//! Run configuration shared by all subcommands.

use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use skillform::mc::{Aggregation, Figure, FigureConfig};
use skillform::model::{fixtures, ModelSpec};
use skillform::pipeline::PipelineConfig;
use skillform::secondstep::Variant;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorChoice {
    Invariant,
    Fixed,
    #[default]
    Both,
}

impl EstimatorChoice {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            EstimatorChoice::Invariant => vec![Variant::Invariant],
            EstimatorChoice::Fixed => vec![Variant::FixedScale],
            EstimatorChoice::Both => vec![Variant::Invariant, Variant::FixedScale],
        }
    }
}

/// Where the model comes from: a built-in preset or a TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecSource {
    pub preset: Option<String>,
    pub file: Option<PathBuf>,
}

pub const PRESETS: [&str; 3] = ["mc_default", "example1", "ces_example"];

impl SpecSource {
    pub fn load(&self, base: &Path) -> CliResult<ModelSpec> {
        match (&self.preset, &self.file) {
            (Some(_), Some(_)) => Err(CliError::config(
                "spec",
                "give either `preset` or `file`, not both",
            )),
            (None, Some(f)) => {
                let path = base.join(f);
                let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
                Ok(ModelSpec::from_toml(&text)?)
            }
            (Some(p), None) => match p.as_str() {
                "mc_default" => Ok(fixtures::mc_default()),
                "example1" => Ok(fixtures::example1()),
                "ces_example" => Ok(fixtures::ces_example()),
                other => Err(CliError::config(
                    "spec.preset",
                    format!(
                        "unknown preset `{other}`; choose one of {}",
                        PRESETS.join(", ")
                    ),
                )),
            },
            (None, None) => Ok(fixtures::mc_default()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n: Option<usize>,
    /// Write the compact binary format instead of CSV.
    pub binary: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub panel: Option<PathBuf>,
    pub pipeline: PipelineConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactSection {
    /// Estimate files; empty means the ones written by `estimate` into the output directory.
    pub inputs: Vec<PathBuf>,
    /// Add the series of the configured spec itself.
    pub truth: bool,
    pub figures: Vec<Figure>,
    pub figure: FigureConfig,
}

impl Default for CounterfactSection {
    fn default() -> Self {
        CounterfactSection {
            inputs: Vec::new(),
            truth: false,
            figures: Figure::ALL.to_vec(),
            figure: FigureConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquivSection {
    pub target: Option<String>,
    /// Simulated individuals when moments have no closed form.
    pub draws: usize,
    /// Allowed moment gap in standard errors.
    pub max_se: f64,
}

impl Default for EquivSection {
    fn default() -> Self {
        EquivSection {
            target: None,
            draws: 1_000_000,
            max_se: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum McPreset {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub preset: McPreset,
    pub replications: Option<usize>,
    pub n: Option<usize>,
    /// Skill scale grid; the investment scale stays 1.
    pub scales: Option<Vec<f64>>,
    pub figures: Option<Vec<Figure>>,
    pub aggregation: Aggregation,
    pub pipeline: Option<PipelineConfig>,
    pub figure: Option<FigureConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub out: PathBuf,
    pub scale_theta: f64,
    pub scale_invest: f64,
    pub estimator: EstimatorChoice,
    /// Comma-separated restriction names.
    pub restrictions: Option<String>,
    pub spec: SpecSource,
    pub simulate: SimulateSection,
    pub estimate: EstimateSection,
    pub counterfact: CounterfactSection,
    pub equiv: EquivSection,
    pub mc: McSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: 0,
            out: PathBuf::from("out"),
            scale_theta: 1.0,
            scale_invest: 1.0,
            estimator: EstimatorChoice::Both,
            restrictions: None,
            spec: SpecSource::default(),
            simulate: SimulateSection::default(),
            estimate: EstimateSection::default(),
            counterfact: CounterfactSection::default(),
            equiv: EquivSection::default(),
            mc: McSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }
}
