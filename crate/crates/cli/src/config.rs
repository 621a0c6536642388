//! Declarative TOML config for the `pipeline` subcommand.
//!
//! ```toml
//! [input]
//! model_dirs = ["data/m0", "data/m1"]
//! train_labels = "data/m0/train_labels.csv"   # optional
//! ground_truth = "data/m0/test_gt.csv"        # optional
//!
//! [params]
//! k_neighbors = 3
//! k_train_penalty = 5
//! k_test_penalty = 10
//! apply_c = true
//!
//! [transform]
//! n_quantiles = 1000
//! mode = "all-roles"        # or "train-and-nonlandmark"
//!
//! [ensemble]
//! mode = "concat"           # or "topk-sum"
//!
//! [output]
//! predictions = "predictions.csv"
//! report = "report.json"    # optional
//! ```
//!
//! Paths are interpreted relative to the working directory. Missing
//! sections and fields fall back to the CLI defaults.

use std::path::PathBuf;

use landmark_rerank::pipeline::{EnsembleMode, PipelineConfig};
use landmark_rerank::{RerankParams, TransformMode};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub input: InputSection,
    #[serde(default)]
    pub params: ParamsSection,
    #[serde(default)]
    pub transform: TransformSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub model_dirs: Vec<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamsSection {
    pub k_neighbors: usize,
    pub k_train_penalty: usize,
    pub k_test_penalty: usize,
    pub apply_c: bool,
}

impl Default for ParamsSection {
    fn default() -> Self {
        let p = RerankParams::default();
        Self {
            k_neighbors: p.k_neighbors,
            k_train_penalty: p.k_train_penalty,
            k_test_penalty: p.k_test_penalty,
            apply_c: p.apply_c,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformSection {
    pub n_quantiles: usize,
    pub mode: TransformModeArg,
}

impl Default for TransformSection {
    fn default() -> Self {
        Self {
            n_quantiles: 1000,
            mode: TransformModeArg::AllRoles,
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub mode: EnsembleModeArg,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub predictions: PathBuf,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TransformModeArg {
    #[default]
    AllRoles,
    TrainAndNonlandmark,
}

impl From<TransformModeArg> for TransformMode {
    fn from(v: TransformModeArg) -> Self {
        match v {
            TransformModeArg::AllRoles => TransformMode::AllRoles,
            TransformModeArg::TrainAndNonlandmark => TransformMode::TrainAndNonlandmarkOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleModeArg {
    #[default]
    Concat,
    TopkSum,
}

impl From<EnsembleModeArg> for EnsembleMode {
    fn from(v: EnsembleModeArg) -> Self {
        match v {
            EnsembleModeArg::Concat => EnsembleMode::Concat,
            EnsembleModeArg::TopkSum => EnsembleMode::TopkSum,
        }
    }
}

impl FileConfig {
    pub fn into_pipeline_config(self, penalize: bool) -> (PipelineConfig, Option<PathBuf>) {
        let mut config = PipelineConfig::new(self.input.model_dirs, self.output.predictions);
        config.train_labels = self.input.train_labels;
        config.ground_truth = self.input.ground_truth;
        config.params = RerankParams {
            k_neighbors: self.params.k_neighbors,
            k_train_penalty: self.params.k_train_penalty,
            k_test_penalty: self.params.k_test_penalty,
            apply_c: self.params.apply_c,
        };
        config.n_quantiles = self.transform.n_quantiles;
        config.transform_mode = self.transform.mode.into();
        config.ensemble_mode = self.ensemble.mode.into();
        config.penalize = penalize;
        (config, self.output.report)
    }
}
