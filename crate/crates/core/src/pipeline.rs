//! End-to-end driver: ingest -> filter -> normalize/transform ->
//! ensemble -> rank -> write -> score.
//!
//! Each stage's failure is wrapped with the stage name and aborts the run
//! before the predictions file is (re)placed; predictions are written to a
//! temporary sibling and renamed, so a failed run never leaves a partial
//! file behind. Given identical inputs the run is byte-identical,
//! regardless of thread count.

use std::path::{Path, PathBuf};

use crate::ensemble::{
    concat_ensemble_with_mode, preprocess_per_model, topk_sum_ensemble, ModelBundle, ModelSets,
};
use crate::error::{Error, Result};
use crate::metrics::{gap, GapReport};
use crate::normalize::TransformMode;
use crate::rerank::{rerank, write_predictions, RankedPrediction, RerankParams};
use crate::store::{
    filter_train_to_test_classes, load_embeddings, load_labels, EmbeddingSet, FileFormat,
    LabelTable, Role,
};
use crate::synth;

/// Which ensembling scheme combines multi-model inputs. With a single
/// model both schemes reduce to the plain pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnsembleMode {
    #[default]
    Concat,
    TopkSum,
}

/// Everything a pipeline run needs.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Model directories, each holding `test.emb`, `train.emb` and
    /// (when penalization is on) `nonlandmark.emb`.
    pub model_dirs: Vec<PathBuf>,
    /// Train label CSV. Defaults to `train_labels.csv` in the first model
    /// directory.
    pub train_labels: Option<PathBuf>,
    /// Ground-truth CSV for the test set. When present, the train set is
    /// filtered to ground-truth classes (the host's validation protocol)
    /// and the predictions are scored.
    pub ground_truth: Option<PathBuf>,
    /// Where the predictions CSV goes.
    pub predictions_out: PathBuf,
    pub params: RerankParams,
    /// Requested quantile count; the effective count is
    /// `min(n_quantiles, n_test)`.
    pub n_quantiles: usize,
    pub transform_mode: TransformMode,
    pub ensemble_mode: EnsembleMode,
    /// When false, the non-landmark pool is replaced by an empty set and
    /// the run is the unpenalized baseline (`rank`).
    pub penalize: bool,
}

impl PipelineConfig {
    pub fn new(model_dirs: Vec<PathBuf>, predictions_out: PathBuf) -> Self {
        Self {
            model_dirs,
            train_labels: None,
            ground_truth: None,
            predictions_out,
            params: RerankParams::default(),
            n_quantiles: 1000,
            transform_mode: TransformMode::default(),
            ensemble_mode: EnsembleMode::default(),
            penalize: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dirs.is_empty() {
            return Err(Error::InvalidParameter {
                detail: "at least one model directory is required".into(),
            });
        }
        if self.n_quantiles < 2 {
            return Err(Error::InvalidParameter {
                detail: "n_quantiles must be >= 2".into(),
            });
        }
        self.params.validate()
    }
}

/// Result of a pipeline run.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub predictions: Vec<RankedPrediction>,
    /// Present when ground truth was provided.
    pub report: Option<GapReport>,
}

fn load_model_dir(dir: &Path, penalize: bool) -> Result<ModelSets> {
    let test = load_embeddings(&dir.join(synth::TEST_FILE), FileFormat::Binary, Role::Test)?;
    let train = load_embeddings(
        &dir.join(synth::TRAIN_FILE),
        FileFormat::Binary,
        Role::Train,
    )?;
    let nonlandmark = if penalize {
        load_embeddings(
            &dir.join(synth::NONLANDMARK_FILE),
            FileFormat::Binary,
            Role::Nonlandmark,
        )?
    } else {
        EmbeddingSet::empty(test.dim(), Role::Nonlandmark)
    };
    Ok(ModelSets {
        test,
        train,
        nonlandmark,
    })
}

/// Load inputs described by `config`: the model bundle, train labels and
/// optional ground truth.
pub fn load_inputs(
    config: &PipelineConfig,
) -> Result<(ModelBundle, LabelTable, Option<LabelTable>)> {
    let mut models = Vec::with_capacity(config.model_dirs.len());
    for dir in &config.model_dirs {
        models.push(load_model_dir(dir, config.penalize)?);
    }
    let bundle = ModelBundle::new(models)?;
    let labels_path = config
        .train_labels
        .clone()
        .unwrap_or_else(|| config.model_dirs[0].join(synth::TRAIN_LABELS_FILE));
    let train_labels = load_labels(&labels_path)?;
    let ground_truth = match &config.ground_truth {
        Some(path) => Some(load_labels(path)?),
        None => None,
    };
    Ok((bundle, train_labels, ground_truth))
}

fn filter_bundle(
    bundle: ModelBundle,
    train_labels: &LabelTable,
    gt: &LabelTable,
) -> Result<(ModelBundle, LabelTable)> {
    let mut filtered_labels = None;
    let mut models = Vec::with_capacity(bundle.len());
    for sets in bundle.models() {
        let (train, labels) = filter_train_to_test_classes(&sets.train, train_labels, gt)?;
        filtered_labels.get_or_insert(labels);
        models.push(ModelSets {
            test: sets.test.clone(),
            train,
            nonlandmark: sets.nonlandmark.clone(),
        });
    }
    Ok((ModelBundle::new(models)?, filtered_labels.unwrap()))
}

/// Run the full pipeline, write the predictions file, and score it when
/// ground truth is available.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate().map_err(|e| e.at_stage("config"))?;
    let (bundle, train_labels, ground_truth) =
        load_inputs(config).map_err(|e| e.at_stage("load"))?;

    let (bundle, train_labels) = match &ground_truth {
        Some(gt) => filter_bundle(bundle, &train_labels, gt).map_err(|e| e.at_stage("filter"))?,
        None => (bundle, train_labels),
    };

    let n_test = bundle.models()[0].test.len();
    let q_eff = config.n_quantiles.min(n_test.max(2));

    let predictions = match config.ensemble_mode {
        EnsembleMode::Concat => {
            let (test, train, pool) =
                concat_ensemble_with_mode(&bundle, q_eff, config.transform_mode)
                    .map_err(|e| e.at_stage("transform"))?;
            rerank(&test, &train, &train_labels, &pool, &config.params)
                .map_err(|e| e.at_stage("rank"))?
        }
        EnsembleMode::TopkSum => {
            let pre = preprocess_per_model(&bundle, q_eff, config.transform_mode)
                .map_err(|e| e.at_stage("transform"))?;
            topk_sum_ensemble(&pre, &train_labels, &config.params)
                .map_err(|e| e.at_stage("rank"))?
        }
    };

    write_atomic(&predictions, &config.predictions_out).map_err(|e| e.at_stage("write"))?;

    let report = match &ground_truth {
        Some(gt) => Some(gap(&predictions, gt).map_err(|e| e.at_stage("score"))?),
        None => None,
    };
    Ok(PipelineOutcome {
        predictions,
        report,
    })
}

fn write_atomic(predictions: &[RankedPrediction], path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    write_predictions(predictions, &tmp)?;
    std::fs::rename(&tmp, path).map_err(crate::error::io_err(path))
}
