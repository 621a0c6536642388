//! Global Average Precision (micro-AP) scoring and the baseline-vs-rerank
//! comparison harness.
//!
//! Definition used here: sort all predictions by confidence descending
//! (ties broken by ascending image id), then
//! `GAP = (1/M) * sum_i P(i) * rel(i)` where `M` is the number of test
//! images with a ground-truth landmark, `P(i)` is the precision among the
//! first `i` predictions, and `rel(i)` is 1 iff prediction `i` matches its
//! image's ground truth. Predictions for images absent from the ground
//! truth are always incorrect; landmark images with no prediction
//! contribute nothing to the sum but still count in `M`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rerank::{rerank, RankedPrediction, RerankParams};
use crate::store::{EmbeddingSet, LabelTable, Role};

/// GAP score plus the counts that went into it.
#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub gap: f64,
    pub m_landmarks: usize,
    pub n_predictions: usize,
    /// Per-rank correctness in scoring order, for diagnostics.
    #[serde(skip)]
    pub correct_at_rank: Vec<bool>,
}

/// Score a prediction list against ground truth.
///
/// Errors on duplicate predictions for one image id and on an empty
/// ground truth (M = 0).
pub fn gap(predictions: &[RankedPrediction], ground_truth: &LabelTable) -> Result<GapReport> {
    let m = ground_truth.len();
    if m == 0 {
        return Err(Error::EmptyGroundTruth);
    }
    let mut seen = std::collections::HashSet::with_capacity(predictions.len());
    for p in predictions {
        if !seen.insert(p.image_id.as_str()) {
            return Err(Error::DuplicatePrediction {
                id: p.image_id.clone(),
            });
        }
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .confidence
            .total_cmp(&predictions[a].confidence)
            .then_with(|| predictions[a].image_id.cmp(&predictions[b].image_id))
    });

    let mut correct_at_rank = Vec::with_capacity(predictions.len());
    let mut hits = 0usize;
    let mut sum = 0f64;
    for (rank, &idx) in order.iter().enumerate() {
        let p = &predictions[idx];
        let correct = ground_truth.get(&p.image_id) == Some(p.landmark_id);
        correct_at_rank.push(correct);
        if correct {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(GapReport {
        gap: sum / m as f64,
        m_landmarks: m,
        n_predictions: predictions.len(),
        correct_at_rank,
    })
}

/// Paired GAP reports for the unpenalized baseline and the full rerank on
/// identical inputs.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineComparison {
    pub baseline: GapReport,
    pub reranked: GapReport,
    /// `reranked.gap - baseline.gap`
    pub gap_delta: f64,
}

/// Run both pipelines on the same (already preprocessed) inputs and score
/// them against `ground_truth`.
pub fn compare_pipelines(
    test: &EmbeddingSet,
    train: &EmbeddingSet,
    train_labels: &LabelTable,
    nonlandmark: &EmbeddingSet,
    ground_truth: &LabelTable,
    params: &RerankParams,
) -> Result<PipelineComparison> {
    let empty = EmbeddingSet::empty(test.dim(), Role::Nonlandmark);
    let baseline_preds = rerank(test, train, train_labels, &empty, params)?;
    let reranked_preds = rerank(test, train, train_labels, nonlandmark, params)?;
    let baseline = gap(&baseline_preds, ground_truth)?;
    let reranked = gap(&reranked_preds, ground_truth)?;
    let gap_delta = reranked.gap - baseline.gap;
    Ok(PipelineComparison {
        baseline,
        reranked,
        gap_delta,
    })
}
