//! Re-ranking of test images against a labeled train corpus with
//! penalization by similarity to a pool of known out-of-domain images.
//!
//! The procedure, per test image: compute cosine similarities to the train
//! corpus, subtract from each train column the per-train-image penalty `B`
//! (mean similarity of that train image to its top-k nearest pool images),
//! take the top-k entries of the penalized matrix, sum scores per landmark
//! label, pick the argmax label, and optionally subtract the per-test
//! penalty `C` (mean similarity of the test image to its top-k nearest
//! pool images) from the final confidence.
//!
//! With an empty pool both penalties are zero and the output reduces
//! exactly to plain top-k label aggregation. Inputs are expected to be
//! normalized/transformed by the caller; this module is a pure ranking
//! kernel.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::similarity::{
    mean_topk_similarity, scored_topk, Neighbor, TopKResult, DEFAULT_BLOCK_SIZE,
};
use crate::store::{EmbeddingSet, LabelTable};

/// Knobs for the re-ranking procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RerankParams {
    /// Top-k of the penalized test-train matrix used for label aggregation.
    pub k_neighbors: usize,
    /// Top-k over the pool for the per-train-image penalty B.
    pub k_train_penalty: usize,
    /// Top-k over the pool for the per-test-image penalty C.
    pub k_test_penalty: usize,
    /// Whether to subtract C from final confidences. B alone captures most
    /// of the effect; C is kept on by default.
    pub apply_c: bool,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k_neighbors: 3,
            k_train_penalty: 5,
            k_test_penalty: 10,
            apply_c: true,
        }
    }
}

impl RerankParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 || self.k_train_penalty == 0 || self.k_test_penalty == 0 {
            return Err(Error::InvalidParameter {
                detail: "all k parameters must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// One (image, landmark, confidence) prediction; the unit of GAP scoring.
/// Confidences may be negative.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPrediction {
    pub image_id: String,
    pub landmark_id: u32,
    pub confidence: f32,
}

/// Per-train-image penalty B: mean of the `k` highest cosine similarities
/// between each train row and the non-landmark pool.
pub fn train_penalty(
    train: &EmbeddingSet,
    nonlandmark: &EmbeddingSet,
    k: usize,
) -> Result<Vec<f32>> {
    mean_topk_similarity(train, nonlandmark, k)
}

/// Per-test-row top-k of the penalized similarity matrix
/// `A'[i][j] = cos(test[i], train[j]) - b[j]`. The selection is over the
/// penalized scores, not the raw cosines.
pub fn penalized_topk(
    test: &EmbeddingSet,
    train: &EmbeddingSet,
    b: &[f32],
    k: usize,
) -> Result<TopKResult> {
    if b.len() != train.len() {
        return Err(Error::LengthMismatch {
            expected: train.len(),
            found: b.len(),
        });
    }
    scored_topk(test, train, k, Some(b), DEFAULT_BLOCK_SIZE)
}

/// Group one query's neighbor scores by landmark label, sum per label
/// (negative scores included), and return the argmax label with its sum.
/// Equal sums break toward the smaller landmark id.
pub fn aggregate_label(
    neighbors: &[Neighbor],
    train_labels: &LabelTable,
    train_ids: &[String],
) -> Result<(u32, f32)> {
    if neighbors.is_empty() {
        return Err(Error::Internal {
            detail: "aggregate_label called with no neighbors".into(),
        });
    }
    let mut sums: BTreeMap<u32, f64> = BTreeMap::new();
    for n in neighbors {
        let id = &train_ids[n.index];
        let label = train_labels
            .get(id)
            .ok_or_else(|| Error::MissingLabel { id: id.clone() })?;
        *sums.entry(label).or_insert(0.0) += n.score as f64;
    }
    let mut best: Option<(u32, f64)> = None;
    for (&label, &sum) in &sums {
        // strict '>' keeps the smallest label on ties (BTreeMap ascending)
        if best.is_none_or(|(_, bs)| sum > bs) {
            best = Some((label, sum));
        }
    }
    let (label, sum) = best.unwrap();
    Ok((label, sum as f32))
}

/// Full re-ranking: one prediction per test image, in test row order.
///
/// `test`, `train` and `nonlandmark` must share a dimension and already be
/// normalized/transformed. An empty `nonlandmark` pool zeroes both
/// penalties; an empty `train` set is an error.
pub fn rerank(
    test: &EmbeddingSet,
    train: &EmbeddingSet,
    train_labels: &LabelTable,
    nonlandmark: &EmbeddingSet,
    params: &RerankParams,
) -> Result<Vec<RankedPrediction>> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTrain);
    }
    if test.dim() != train.dim() {
        return Err(Error::DimensionMismatch {
            expected: test.dim(),
            found: train.dim(),
        });
    }
    if !nonlandmark.is_empty() && nonlandmark.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: test.dim(),
            found: nonlandmark.dim(),
        });
    }

    let b = if nonlandmark.is_empty() {
        vec![0.0f32; train.len()]
    } else {
        train_penalty(train, nonlandmark, params.k_train_penalty)?
    };
    let topk = penalized_topk(test, train, &b, params.k_neighbors)?;
    let c = if params.apply_c && !nonlandmark.is_empty() {
        mean_topk_similarity(test, nonlandmark, params.k_test_penalty)?
    } else {
        vec![0.0f32; test.len()]
    };

    let mut predictions = Vec::with_capacity(test.len());
    for (i, list) in topk.lists.iter().enumerate() {
        let (landmark_id, score) = aggregate_label(list, train_labels, train.ids())?;
        predictions.push(RankedPrediction {
            image_id: test.id(i).to_string(),
            landmark_id,
            confidence: score - c[i],
        });
    }
    Ok(predictions)
}

/// Write predictions as header-free `image_id,landmark_id,confidence`
/// rows. Confidence is printed in scientific notation with 9 significant
/// digits, which round-trips f32 exactly.
pub fn write_predictions(predictions: &[RankedPrediction], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for p in predictions {
        writeln!(
            w,
            "{},{},{}",
            p.image_id,
            p.landmark_id,
            format_confidence(p.confidence)
        )
        .map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Read a predictions CSV written by [`write_predictions`].
pub fn read_predictions(path: &Path) -> Result<Vec<RankedPrediction>> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Csv {
                line: idx + 1,
                detail: format!(
                    "expected 'image_id,landmark_id,confidence', found {} fields",
                    parts.len()
                ),
            }
            .at_path(path));
        }
        let landmark_id: u32 = parts[1].trim().parse().map_err(|_| {
            Error::Csv {
                line: idx + 1,
                detail: format!("invalid landmark id '{}'", parts[1]),
            }
            .at_path(path)
        })?;
        let confidence: f32 = parts[2].trim().parse().map_err(|_| {
            Error::Csv {
                line: idx + 1,
                detail: format!("invalid confidence '{}'", parts[2]),
            }
            .at_path(path)
        })?;
        if !confidence.is_finite() {
            return Err(Error::NonFinite { row: idx, col: 2 }.at_path(path));
        }
        out.push(RankedPrediction {
            image_id: parts[0].to_string(),
            landmark_id,
            confidence,
        });
    }
    Ok(out)
}

pub(crate) fn format_confidence(c: f32) -> String {
    format!("{c:.8e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::cosine_topk;
    use crate::store::Role;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize, tag: &str) -> EmbeddingSet {
        let ids = (0..n).map(|i| format!("{tag}{i}")).collect();
        let vectors = (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        EmbeddingSet::new(ids, d, vectors, Role::Test).unwrap()
    }

    fn labels_for(set: &EmbeddingSet, f: impl Fn(usize) -> u32) -> LabelTable {
        LabelTable::from_entries(
            set.ids()
                .iter()
                .enumerate()
                .map(|(i, id)| (id.clone(), f(i)))
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn train_penalty_identical_row_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pool = random_set(&mut rng, 10, 6, "z");
        let train =
            EmbeddingSet::new(vec!["t".into()], 6, pool.row(4).to_vec(), Role::Train).unwrap();
        let b = train_penalty(&train, &pool, 1).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn train_penalty_orthogonal_pool_is_zero() {
        let train = EmbeddingSet::new(
            vec!["t1".into(), "t2".into()],
            4,
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            Role::Train,
        )
        .unwrap();
        let pool = EmbeddingSet::new(
            vec!["z1".into(), "z2".into()],
            4,
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
            Role::Nonlandmark,
        )
        .unwrap();
        let b = train_penalty(&train, &pool, 2).unwrap();
        assert!(b.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn train_penalty_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train = random_set(&mut rng, 100, 12, "t");
        let pool = random_set(&mut rng, 50, 12, "z");
        let k = 5;
        let b = train_penalty(&train, &pool, k).unwrap();
        for (j, &bj) in b.iter().enumerate() {
            let t = train.row(j);
            let tn: f64 = t.iter().map(|v| *v as f64 * *v as f64).sum::<f64>().sqrt();
            let mut sims: Vec<f64> = (0..pool.len())
                .map(|p| {
                    let z = pool.row(p);
                    let dot: f64 = t.iter().zip(z).map(|(a, b)| *a as f64 * *b as f64).sum();
                    let zn: f64 = z.iter().map(|v| *v as f64 * *v as f64).sum::<f64>().sqrt();
                    dot / (tn * zn)
                })
                .collect();
            sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let expect = sims[..k].iter().sum::<f64>() / k as f64;
            assert!((bj as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn penalized_topk_zero_penalty_equals_cosine_topk() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let test = random_set(&mut rng, 10, 8, "x");
        let train = random_set(&mut rng, 40, 8, "y");
        let b = vec![0.0f32; train.len()];
        let penalized = penalized_topk(&test, &train, &b, 4).unwrap();
        let plain = cosine_topk(&test, &train, 4).unwrap();
        for (a, p) in penalized.lists.iter().zip(&plain.lists) {
            assert_eq!(a.len(), p.len());
            for (x, y) in a.iter().zip(p) {
                assert_eq!(x.index, y.index);
                assert_eq!(x.score.to_bits(), y.score.to_bits());
            }
        }
    }

    #[test]
    fn penalized_topk_dominated_candidate_never_appears() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let test = random_set(&mut rng, 8, 6, "x");
        let train = random_set(&mut rng, 30, 6, "y");
        let mut b = vec![0.0f32; train.len()];
        b[13] = 100.0;
        let res = penalized_topk(&test, &train, &b, 5).unwrap();
        assert!(res.lists.iter().all(|l| l.iter().all(|n| n.index != 13)));
    }

    #[test]
    fn penalized_topk_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let test = random_set(&mut rng, 20, 10, "x");
        let train = random_set(&mut rng, 100, 10, "y");
        let b: Vec<f32> = (0..train.len())
            .map(|_| rng.gen_range(0.0f32..0.5))
            .collect();
        let res = penalized_topk(&test, &train, &b, 3).unwrap();
        for (i, list) in res.lists.iter().enumerate() {
            let q = test.row(i);
            let qn: f64 = q.iter().map(|v| *v as f64 * *v as f64).sum::<f64>().sqrt();
            let mut scored: Vec<(usize, f64)> = (0..train.len())
                .map(|j| {
                    let t = train.row(j);
                    let dot: f64 = q.iter().zip(t).map(|(a, b)| *a as f64 * *b as f64).sum();
                    let tn: f64 = t.iter().map(|v| *v as f64 * *v as f64).sum::<f64>().sqrt();
                    (j, dot / (qn * tn) - b[j] as f64)
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            for (n, (idx, score)) in list.iter().zip(&scored[..3]) {
                assert_eq!(n.index, *idx);
                assert!((n.score as f64 - score).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn penalty_length_mismatch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let test = random_set(&mut rng, 2, 4, "x");
        let train = random_set(&mut rng, 5, 4, "y");
        let b = vec![0.0f32; 4];
        assert!(matches!(
            penalized_topk(&test, &train, &b, 2).unwrap_err(),
            Error::LengthMismatch {
                expected: 5,
                found: 4
            }
        ));
    }

    #[test]
    fn aggregate_hand_case() {
        let train_ids: Vec<String> = vec!["y1".into(), "y2".into(), "y3".into()];
        let labels =
            LabelTable::from_entries(vec![("y1".into(), 5), ("y2".into(), 5), ("y3".into(), 9)])
                .unwrap();
        let neighbors = [
            Neighbor {
                index: 0,
                score: 0.9,
            },
            Neighbor {
                index: 1,
                score: 0.8,
            },
            Neighbor {
                index: 2,
                score: 0.7,
            },
        ];
        let (label, conf) = aggregate_label(&neighbors, &labels, &train_ids).unwrap();
        assert_eq!(label, 5);
        assert!((conf - 1.7).abs() < 1e-6);
    }

    #[test]
    fn aggregate_single_neighbor() {
        let train_ids: Vec<String> = vec!["y1".into()];
        let labels = LabelTable::from_entries(vec![("y1".into(), 2)]).unwrap();
        let neighbors = [Neighbor {
            index: 0,
            score: 0.4,
        }];
        let (label, conf) = aggregate_label(&neighbors, &labels, &train_ids).unwrap();
        assert_eq!(label, 2);
        assert!((conf - 0.4).abs() < 1e-6);
    }

    #[test]
    fn aggregate_tie_breaks_to_smaller_label() {
        let train_ids: Vec<String> = vec!["a".into(), "b".into(), "c".into(), "d".into()];
        let labels = LabelTable::from_entries(vec![
            ("a".into(), 7),
            ("b".into(), 7),
            ("c".into(), 3),
            ("d".into(), 3),
        ])
        .unwrap();
        let neighbors = [
            Neighbor {
                index: 0,
                score: 0.3,
            },
            Neighbor {
                index: 1,
                score: 0.3,
            },
            Neighbor {
                index: 2,
                score: 0.3,
            },
            Neighbor {
                index: 3,
                score: 0.3,
            },
        ];
        let (label, _) = aggregate_label(&neighbors, &labels, &train_ids).unwrap();
        assert_eq!(label, 3);
    }

    #[test]
    fn aggregate_unlabeled_neighbor_is_error() {
        let train_ids: Vec<String> = vec!["y1".into()];
        let labels = LabelTable::default();
        let neighbors = [Neighbor {
            index: 0,
            score: 0.4,
        }];
        assert!(matches!(
            aggregate_label(&neighbors, &labels, &train_ids).unwrap_err(),
            Error::MissingLabel { .. }
        ));
    }

    #[test]
    fn rerank_empty_pool_reduces_to_baseline_aggregation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let test = random_set(&mut rng, 15, 8, "x");
        let train = random_set(&mut rng, 60, 8, "y");
        let labels = labels_for(&train, |i| (i % 7) as u32);
        let params = RerankParams::default();
        let empty = EmbeddingSet::empty(8, Role::Nonlandmark);
        let got = rerank(&test, &train, &labels, &empty, &params).unwrap();

        let topk = cosine_topk(&test, &train, params.k_neighbors).unwrap();
        for (i, p) in got.iter().enumerate() {
            let (label, conf) = aggregate_label(&topk.lists[i], &labels, train.ids()).unwrap();
            assert_eq!(p.landmark_id, label);
            assert_eq!(p.confidence.to_bits(), conf.to_bits());
            assert_eq!(p.image_id, test.id(i));
        }
    }

    #[test]
    fn rerank_c_shift_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let test = random_set(&mut rng, 12, 8, "x");
        let train = random_set(&mut rng, 50, 8, "y");
        let pool = random_set(&mut rng, 25, 8, "z");
        let labels = labels_for(&train, |i| (i % 5) as u32);
        let with_c = rerank(&test, &train, &labels, &pool, &RerankParams::default()).unwrap();
        let without_c = rerank(
            &test,
            &train,
            &labels,
            &pool,
            &RerankParams {
                apply_c: false,
                ..RerankParams::default()
            },
        )
        .unwrap();
        let c = mean_topk_similarity(&test, &pool, 10).unwrap();
        for i in 0..test.len() {
            assert_eq!(with_c[i].landmark_id, without_c[i].landmark_id);
            let shift = without_c[i].confidence - with_c[i].confidence;
            assert!((shift - c[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn rerank_penalty_rank_monotonicity() {
        // increasing B for one train image never improves its rank
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let test = random_set(&mut rng, 10, 8, "x");
        let train = random_set(&mut rng, 30, 8, "y");
        let mut b = vec![0.0f32; train.len()];
        let before = penalized_topk(&test, &train, &b, 5).unwrap();
        let target = 17usize;
        b[target] = 0.4;
        let after = penalized_topk(&test, &train, &b, 5).unwrap();
        for (lb, la) in before.lists.iter().zip(&after.lists) {
            let rank_before = lb.iter().position(|n| n.index == target);
            let rank_after = la.iter().position(|n| n.index == target);
            match (rank_before, rank_after) {
                (None, Some(_)) => panic!("penalized image entered a top-k list"),
                (Some(rb), Some(ra)) => assert!(ra >= rb),
                _ => {}
            }
        }
    }

    #[test]
    fn rerank_empty_train_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let test = random_set(&mut rng, 2, 4, "x");
        let train = EmbeddingSet::empty(4, Role::Train);
        let pool = EmbeddingSet::empty(4, Role::Nonlandmark);
        assert!(matches!(
            rerank(
                &test,
                &train,
                &LabelTable::default(),
                &pool,
                &RerankParams::default()
            )
            .unwrap_err(),
            Error::EmptyTrain
        ));
    }

    #[test]
    fn predictions_csv_round_trip() {
        let preds = vec![
            RankedPrediction {
                image_id: "a".into(),
                landmark_id: 12,
                confidence: 2.6999998,
            },
            RankedPrediction {
                image_id: "b".into(),
                landmark_id: 0,
                confidence: -0.12345,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("preds.csv");
        write_predictions(&preds, &path).unwrap();
        let loaded = read_predictions(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in preds.iter().zip(&loaded) {
            assert_eq!(a.image_id, b.image_id);
            assert_eq!(a.landmark_id, b.landmark_id);
            assert_eq!(a.confidence.to_bits(), b.confidence.to_bits());
        }
    }
}
