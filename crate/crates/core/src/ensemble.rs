//! Combining embeddings from multiple models.
//!
//! Two schemes:
//!
//! 1. Concatenation: L2-normalize each model's sets separately,
//!    concatenate along the feature axis, then fit a quantile transform on
//!    the concatenated test set and apply it. The concatenated vectors are
//!    deliberately not re-normalized; the transform sees raw concatenated
//!    dimensions.
//! 2. Top-k score summation: rank each (already preprocessed) model
//!    separately, pool every model's penalized top-k candidates per test
//!    image, sum scores per landmark label across the pool, and subtract
//!    the mean of the per-model C penalties.
//!
//! Both schemes reduce exactly to the single-model pipeline when the
//! bundle holds one model.

use crate::error::{Error, Result};
use crate::normalize::{l2_normalize, QuantileTransform, TransformMode};
use crate::rerank::{
    aggregate_label, penalized_topk, train_penalty, RankedPrediction, RerankParams,
};
use crate::similarity::{mean_topk_similarity, Neighbor};
use crate::store::{EmbeddingSet, LabelTable};

/// One model's three embedding sets. They share a dimension; different
/// models may have different dimensions.
#[derive(Debug, Clone)]
pub struct ModelSets {
    pub test: EmbeddingSet,
    pub train: EmbeddingSet,
    pub nonlandmark: EmbeddingSet,
}

/// Per-model embedding sets for the same images: every model's test,
/// train and non-landmark id lists must be identical to model 0's.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    models: Vec<ModelSets>,
}

impl ModelBundle {
    pub fn new(models: Vec<ModelSets>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidParameter {
                detail: "bundle needs at least one model".into(),
            });
        }
        for (m, sets) in models.iter().enumerate() {
            let dim = sets.test.dim();
            if sets.train.dim() != dim || sets.nonlandmark.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: if sets.train.dim() != dim {
                        sets.train.dim()
                    } else {
                        sets.nonlandmark.dim()
                    },
                });
            }
            if m > 0 {
                if sets.test.ids() != models[0].test.ids() {
                    return Err(Error::IdListMismatch {
                        model: m,
                        role: "test",
                    });
                }
                if sets.train.ids() != models[0].train.ids() {
                    return Err(Error::IdListMismatch {
                        model: m,
                        role: "train",
                    });
                }
                if sets.nonlandmark.ids() != models[0].nonlandmark.ids() {
                    return Err(Error::IdListMismatch {
                        model: m,
                        role: "nonlandmark",
                    });
                }
            }
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[ModelSets] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

fn concat_sets(sets: Vec<&EmbeddingSet>) -> Result<EmbeddingSet> {
    let n = sets[0].len();
    let dim: usize = sets.iter().map(|s| s.dim()).sum();
    let mut vectors = Vec::with_capacity(n * dim);
    for row in 0..n {
        for s in &sets {
            vectors.extend_from_slice(s.row(row));
        }
    }
    EmbeddingSet::new(sets[0].ids().to_vec(), dim, vectors, sets[0].role())
}

/// Concatenation ensemble with an explicit transform mode. The quantile
/// transform is always fitted on the concatenated test set.
pub fn concat_ensemble_with_mode(
    bundle: &ModelBundle,
    n_quantiles: usize,
    mode: TransformMode,
) -> Result<(EmbeddingSet, EmbeddingSet, EmbeddingSet)> {
    let mut norm_test = Vec::new();
    let mut norm_train = Vec::new();
    let mut norm_pool = Vec::new();
    for sets in bundle.models() {
        norm_test.push(l2_normalize(&sets.test)?);
        norm_train.push(l2_normalize(&sets.train)?);
        norm_pool.push(l2_normalize(&sets.nonlandmark)?);
    }
    let test = concat_sets(norm_test.iter().collect())?;
    let train = concat_sets(norm_train.iter().collect())?;
    let pool = concat_sets(norm_pool.iter().collect())?;

    let qt = QuantileTransform::fit(&test, n_quantiles)?;
    let train = qt.apply(&train)?;
    let pool = qt.apply(&pool)?;
    let test = match mode {
        TransformMode::AllRoles => qt.apply(&test)?,
        TransformMode::TrainAndNonlandmarkOnly => test,
    };
    Ok((test, train, pool))
}

/// Concatenation ensemble: normalized per model, concatenated, transform
/// fitted on the concatenated test set and applied to all three roles.
pub fn concat_ensemble(
    bundle: &ModelBundle,
    n_quantiles: usize,
) -> Result<(EmbeddingSet, EmbeddingSet, EmbeddingSet)> {
    concat_ensemble_with_mode(bundle, n_quantiles, TransformMode::AllRoles)
}

/// Normalize and quantile-transform each model independently (fit on that
/// model's test set), without concatenation. This is the preprocessing the
/// top-k sum scheme expects.
pub fn preprocess_per_model(
    bundle: &ModelBundle,
    n_quantiles: usize,
    mode: TransformMode,
) -> Result<ModelBundle> {
    let mut models = Vec::with_capacity(bundle.len());
    for sets in bundle.models() {
        let test = l2_normalize(&sets.test)?;
        let train = l2_normalize(&sets.train)?;
        let pool = l2_normalize(&sets.nonlandmark)?;
        let qt = QuantileTransform::fit(&test, n_quantiles)?;
        let train = qt.apply(&train)?;
        let pool = qt.apply(&pool)?;
        let test = match mode {
            TransformMode::AllRoles => qt.apply(&test)?,
            TransformMode::TrainAndNonlandmarkOnly => test,
        };
        models.push(ModelSets {
            test,
            train,
            nonlandmark: pool,
        });
    }
    ModelBundle::new(models)
}

/// Each model's penalized top-k candidates per test image, pooled. The
/// pooled list for a test image holds exactly `sum_m min(k, |train|)`
/// entries.
pub(crate) fn pooled_candidates(
    bundle: &ModelBundle,
    params: &RerankParams,
) -> Result<Vec<Vec<Neighbor>>> {
    let n_test = bundle.models()[0].test.len();
    let mut pooled: Vec<Vec<Neighbor>> = vec![Vec::new(); n_test];
    for sets in bundle.models() {
        let b = if sets.nonlandmark.is_empty() {
            vec![0.0f32; sets.train.len()]
        } else {
            train_penalty(&sets.train, &sets.nonlandmark, params.k_train_penalty)?
        };
        let topk = penalized_topk(&sets.test, &sets.train, &b, params.k_neighbors)?;
        for (slot, list) in pooled.iter_mut().zip(topk.lists) {
            slot.extend(list);
        }
    }
    Ok(pooled)
}

/// Top-k score summation ensemble over an already preprocessed bundle
/// (see [`preprocess_per_model`]). Pools all models' penalized top-k
/// candidates per test image, sums scores per landmark label, and
/// subtracts the mean of the per-model C penalties when `apply_c` is set.
pub fn topk_sum_ensemble(
    bundle: &ModelBundle,
    train_labels: &LabelTable,
    params: &RerankParams,
) -> Result<Vec<RankedPrediction>> {
    params.validate()?;
    let first = &bundle.models()[0];
    if first.train.is_empty() {
        return Err(Error::EmptyTrain);
    }
    let pooled = pooled_candidates(bundle, params)?;

    let n_test = first.test.len();
    let mut c_pooled = vec![0.0f64; n_test];
    if params.apply_c {
        let mut any = false;
        for sets in bundle.models() {
            if sets.nonlandmark.is_empty() {
                continue;
            }
            any = true;
            let c = mean_topk_similarity(&sets.test, &sets.nonlandmark, params.k_test_penalty)?;
            for (acc, v) in c_pooled.iter_mut().zip(c) {
                *acc += v as f64;
            }
        }
        if any {
            for acc in &mut c_pooled {
                *acc /= bundle.len() as f64;
            }
        }
    }

    let train_ids = first.train.ids();
    let mut predictions = Vec::with_capacity(n_test);
    for (i, candidates) in pooled.iter().enumerate() {
        let (landmark_id, score) = aggregate_label(candidates, train_labels, train_ids)?;
        predictions.push(RankedPrediction {
            image_id: first.test.id(i).to_string(),
            landmark_id,
            confidence: score - c_pooled[i] as f32,
        });
    }
    Ok(predictions)
}
