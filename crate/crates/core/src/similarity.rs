//! Brute-force cosine similarity kernels: blocked all-pairs computation,
//! bounded top-k selection, and mean-of-top-k scores.
//!
//! Dot products accumulate in f32 within fixed-width lanes and are reduced
//! across lanes in f64; the contract is 1e-6 agreement with a pure f64
//! oracle at desk scale. Candidates are scanned in ascending corpus index
//! order, so results are deterministic and independent of how query blocks
//! are partitioned across threads.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::parallel;
use crate::store::EmbeddingSet;

/// Query/corpus block edge for the blocked kernel; chosen for cache
/// locality at typical dimensions (d = 64..512).
pub const DEFAULT_BLOCK_SIZE: usize = 256;

const DOT_LANES: usize = 16;

/// One scored corpus entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub score: f32,
}

/// Per-query sorted neighbor lists. Each list holds up to `k` pairs in
/// non-increasing score order, ties broken by ascending corpus index.
#[derive(Debug, Clone)]
pub struct TopKResult {
    pub k: usize,
    pub lists: Vec<Vec<Neighbor>>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f32,
    index: u32,
}

impl Candidate {
    /// Ordering where greater means "kept in preference to": higher score
    /// first, then lower corpus index.
    fn cmp_priority(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_priority(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_priority(other)
    }
}

/// Dot product with f32 accumulation inside fixed-width lanes and f64
/// reduction across lanes.
pub(crate) fn dot_mixed(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut total = 0f64;
    let chunks_a = a.chunks_exact(DOT_LANES);
    let chunks_b = b.chunks_exact(DOT_LANES);
    let rem_a = chunks_a.remainder();
    let rem_b = chunks_b.remainder();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        let mut s = 0f32;
        for i in 0..DOT_LANES {
            s += ca[i] * cb[i];
        }
        total += s as f64;
    }
    let mut s = 0f32;
    for (x, y) in rem_a.iter().zip(rem_b) {
        s += x * y;
    }
    total += s as f64;
    total
}

/// Reciprocal Euclidean norms of every row; zero-norm rows are errors
/// reported with the row index.
fn inverse_norms(set: &EmbeddingSet) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len());
    for row in 0..set.len() {
        let norm = dot_mixed(set.row(row), set.row(row)).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormRow { row });
        }
        out.push(1.0 / norm);
    }
    Ok(out)
}

fn push_bounded(heap: &mut BinaryHeap<std::cmp::Reverse<Candidate>>, k: usize, cand: Candidate) {
    if heap.len() < k {
        heap.push(std::cmp::Reverse(cand));
    } else if let Some(std::cmp::Reverse(worst)) = heap.peek() {
        if cand.cmp_priority(worst) == Ordering::Greater {
            heap.pop();
            heap.push(std::cmp::Reverse(cand));
        }
    }
}

/// Shared kernel: per-query top-k over `score = cos(query, corpus[j]) -
/// penalty[j]` (penalty omitted when `None`).
pub(crate) fn scored_topk(
    queries: &EmbeddingSet,
    corpus: &EmbeddingSet,
    k: usize,
    penalty: Option<&[f32]>,
    block: usize,
) -> Result<TopKResult> {
    if k == 0 {
        return Err(Error::InvalidParameter {
            detail: "k must be >= 1".into(),
        });
    }
    if block == 0 {
        return Err(Error::InvalidParameter {
            detail: "block size must be >= 1".into(),
        });
    }
    if queries.dim() != corpus.dim() {
        return Err(Error::DimensionMismatch {
            expected: queries.dim(),
            found: corpus.dim(),
        });
    }
    if let Some(p) = penalty {
        if p.len() != corpus.len() {
            return Err(Error::LengthMismatch {
                expected: corpus.len(),
                found: p.len(),
            });
        }
    }
    let mut lists: Vec<Vec<Neighbor>> = vec![Vec::new(); queries.len()];
    if corpus.is_empty() || queries.is_empty() {
        return Ok(TopKResult { k, lists });
    }
    let inv_q = inverse_norms(queries)?;
    let inv_c = inverse_norms(corpus)?;

    parallel::for_each_chunk_mut(&mut lists, block, |chunk_idx, out| {
        let q_base = chunk_idx * block;
        let mut heaps: Vec<BinaryHeap<std::cmp::Reverse<Candidate>>> = (0..out.len())
            .map(|_| BinaryHeap::with_capacity(k + 1))
            .collect();
        let mut c_base = 0;
        while c_base < corpus.len() {
            let c_end = (c_base + block).min(corpus.len());
            for (q_off, heap) in heaps.iter_mut().enumerate() {
                let q_row = queries.row(q_base + q_off);
                let q_scale = inv_q[q_base + q_off];
                for cj in c_base..c_end {
                    let cos = (dot_mixed(q_row, corpus.row(cj)) * q_scale * inv_c[cj]) as f32;
                    let score = match penalty {
                        Some(p) => cos - p[cj],
                        None => cos,
                    };
                    push_bounded(
                        heap,
                        k,
                        Candidate {
                            score,
                            index: cj as u32,
                        },
                    );
                }
            }
            c_base = c_end;
        }
        for (slot, heap) in out.iter_mut().zip(heaps) {
            let mut cands: Vec<Candidate> = heap.into_iter().map(|r| r.0).collect();
            cands.sort_unstable_by(|a, b| b.cmp_priority(a));
            *slot = cands
                .into_iter()
                .map(|c| Neighbor {
                    index: c.index as usize,
                    score: c.score,
                })
                .collect();
        }
    });
    Ok(TopKResult { k, lists })
}

/// For each query row, the `k` largest cosine similarities over all corpus
/// rows, sorted descending, ties broken by ascending corpus index. An
/// empty corpus yields empty lists.
pub fn cosine_topk(queries: &EmbeddingSet, corpus: &EmbeddingSet, k: usize) -> Result<TopKResult> {
    scored_topk(queries, corpus, k, None, DEFAULT_BLOCK_SIZE)
}

/// `cosine_topk` with an explicit block size (tuning parameter; the output
/// is identical for every valid block size).
pub fn cosine_topk_with_block(
    queries: &EmbeddingSet,
    corpus: &EmbeddingSet,
    k: usize,
    block: usize,
) -> Result<TopKResult> {
    scored_topk(queries, corpus, k, None, block)
}

/// For each row of `set`, the arithmetic mean of its `min(k, |pool|)`
/// highest cosine similarities against `pool`.
pub fn mean_topk_similarity(set: &EmbeddingSet, pool: &EmbeddingSet, k: usize) -> Result<Vec<f32>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let topk = scored_topk(set, pool, k, None, DEFAULT_BLOCK_SIZE)?;
    Ok(topk
        .lists
        .iter()
        .map(|list| {
            let sum: f64 = list.iter().map(|n| n.score as f64).sum();
            (sum / list.len() as f64) as f32
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::Role;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_set(rng: &mut ChaCha8Rng, n: usize, d: usize, tag: &str) -> EmbeddingSet {
        let ids = (0..n).map(|i| format!("{tag}{i}")).collect();
        let vectors = (0..n * d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        EmbeddingSet::new(ids, d, vectors, Role::Test).unwrap()
    }

    /// Naive O(n*m*d) double-precision oracle.
    fn oracle_topk(
        queries: &EmbeddingSet,
        corpus: &EmbeddingSet,
        k: usize,
    ) -> Vec<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        for qi in 0..queries.len() {
            let q = queries.row(qi);
            let qn: f64 = q.iter().map(|v| *v as f64 * *v as f64).sum::<f64>().sqrt();
            let mut scored: Vec<(usize, f64)> = (0..corpus.len())
                .map(|cj| {
                    let c = corpus.row(cj);
                    let dot: f64 = q.iter().zip(c).map(|(a, b)| *a as f64 * *b as f64).sum();
                    let cn: f64 = c.iter().map(|v| *v as f64 * *v as f64).sum::<f64>().sqrt();
                    (cj, dot / (qn * cn))
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            scored.truncate(k);
            out.push(scored);
        }
        out
    }

    #[test]
    fn identical_row_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corpus = random_set(&mut rng, 20, 8, "c");
        let query =
            EmbeddingSet::new(vec!["q".into()], 8, corpus.row(7).to_vec(), Role::Test).unwrap();
        let res = cosine_topk(&query, &corpus, 3).unwrap();
        assert_eq!(res.lists[0][0].index, 7);
        assert!((res.lists[0][0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_pair_scores_zero() {
        let query = EmbeddingSet::new(vec!["q".into()], 2, vec![1.0, 0.0], Role::Test).unwrap();
        let corpus = EmbeddingSet::new(vec!["c".into()], 2, vec![0.0, 1.0], Role::Train).unwrap();
        let res = cosine_topk(&query, &corpus, 1).unwrap();
        assert!(res.lists[0][0].score.abs() < 1e-6);
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let queries = random_set(&mut rng, 50, 24, "q");
        let corpus = random_set(&mut rng, 200, 24, "c");
        let res = cosine_topk(&queries, &corpus, 5).unwrap();
        let expect = oracle_topk(&queries, &corpus, 5);
        for (list, exp) in res.lists.iter().zip(&expect) {
            assert_eq!(list.len(), exp.len());
            for (n, (idx, score)) in list.iter().zip(exp) {
                assert_eq!(n.index, *idx);
                assert!((n.score as f64 - score).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn empty_corpus_yields_empty_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let queries = random_set(&mut rng, 3, 4, "q");
        let corpus = EmbeddingSet::empty(4, Role::Train);
        let res = cosine_topk(&queries, &corpus, 5).unwrap();
        assert_eq!(res.lists.len(), 3);
        assert!(res.lists.iter().all(|l| l.is_empty()));
    }

    #[test]
    fn k_larger_than_corpus_returns_all() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let queries = random_set(&mut rng, 2, 4, "q");
        let corpus = random_set(&mut rng, 3, 4, "c");
        let res = cosine_topk(&queries, &corpus, 10).unwrap();
        assert!(res.lists.iter().all(|l| l.len() == 3));
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let q = EmbeddingSet::empty(4, Role::Test);
        let c = EmbeddingSet::empty(5, Role::Train);
        assert!(matches!(
            cosine_topk(&q, &c, 1).unwrap_err(),
            Error::DimensionMismatch {
                expected: 4,
                found: 5
            }
        ));
    }

    #[test]
    fn zero_norm_row_is_error() {
        let q = EmbeddingSet::new(vec!["q".into()], 2, vec![0.0, 0.0], Role::Test).unwrap();
        let c = EmbeddingSet::new(vec!["c".into()], 2, vec![1.0, 0.0], Role::Train).unwrap();
        assert!(matches!(
            cosine_topk(&q, &c, 1).unwrap_err(),
            Error::ZeroNormRow { row: 0 }
        ));
    }

    #[test]
    fn ties_break_by_ascending_corpus_index() {
        // two identical corpus rows -> equal scores, lower index first
        let q = EmbeddingSet::new(vec!["q".into()], 2, vec![1.0, 1.0], Role::Test).unwrap();
        let c = EmbeddingSet::new(
            vec!["a".into(), "b".into(), "c".into()],
            2,
            vec![2.0, 2.0, 1.0, 0.0, 2.0, 2.0],
            Role::Train,
        )
        .unwrap();
        let res = cosine_topk(&q, &c, 2).unwrap();
        assert_eq!(res.lists[0][0].index, 0);
        assert_eq!(res.lists[0][1].index, 2);
    }

    #[test]
    fn block_size_does_not_change_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let queries = random_set(&mut rng, 33, 12, "q");
        let corpus = random_set(&mut rng, 91, 12, "c");
        let reference = cosine_topk_with_block(&queries, &corpus, 4, DEFAULT_BLOCK_SIZE).unwrap();
        for block in [1, 2, 7, 32, 1024] {
            let res = cosine_topk_with_block(&queries, &corpus, 4, block).unwrap();
            for (a, b) in reference.lists.iter().zip(&res.lists) {
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(b) {
                    assert_eq!(x.index, y.index);
                    assert_eq!(x.score.to_bits(), y.score.to_bits());
                }
            }
        }
    }

    #[test]
    fn scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let queries = random_set(&mut rng, 5, 8, "q");
        let corpus = random_set(&mut rng, 40, 8, "c");
        let scaled = EmbeddingSet::new(
            queries.ids().to_vec(),
            8,
            queries.vectors().iter().map(|v| v * 37.5).collect(),
            Role::Test,
        )
        .unwrap();
        let a = cosine_topk(&queries, &corpus, 3).unwrap();
        let b = cosine_topk(&scaled, &corpus, 3).unwrap();
        for (la, lb) in a.lists.iter().zip(&b.lists) {
            for (x, y) in la.iter().zip(lb) {
                assert_eq!(x.index, y.index);
                assert!((x.score - y.score).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cosine_symmetry_on_sampled_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_set(&mut rng, 10, 16, "a");
        let b = random_set(&mut rng, 10, 16, "b");
        let ab = cosine_topk(&a, &b, 10).unwrap();
        let ba = cosine_topk(&b, &a, 10).unwrap();
        for i in 0..10 {
            for n in &ab.lists[i] {
                let back = ba.lists[n.index].iter().find(|m| m.index == i).unwrap();
                assert!((n.score - back.score).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mean_topk_exact_copy_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pool = random_set(&mut rng, 30, 8, "p");
        let set =
            EmbeddingSet::new(vec!["s".into()], 8, pool.row(11).to_vec(), Role::Test).unwrap();
        let m = mean_topk_similarity(&set, &pool, 1).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mean_topk_orthogonal_pool_scores_zero() {
        let set =
            EmbeddingSet::new(vec!["s".into()], 4, vec![1.0, 0.0, 0.0, 0.0], Role::Test).unwrap();
        let pool = EmbeddingSet::new(
            vec!["p1".into(), "p2".into()],
            4,
            vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            Role::Nonlandmark,
        )
        .unwrap();
        let m = mean_topk_similarity(&set, &pool, 5).unwrap();
        assert!(m[0].abs() < 1e-6);
    }

    #[test]
    fn mean_topk_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let set = random_set(&mut rng, 20, 10, "s");
        let pool = random_set(&mut rng, 100, 10, "p");
        let k = 5;
        let got = mean_topk_similarity(&set, &pool, k).unwrap();
        for (i, &g) in got.iter().enumerate() {
            let q = set.row(i);
            let qn: f64 = q.iter().map(|v| *v as f64 * *v as f64).sum::<f64>().sqrt();
            let mut sims: Vec<f64> = (0..pool.len())
                .map(|j| {
                    let p = pool.row(j);
                    let dot: f64 = q.iter().zip(p).map(|(a, b)| *a as f64 * *b as f64).sum();
                    let pn: f64 = p.iter().map(|v| *v as f64 * *v as f64).sum::<f64>().sqrt();
                    dot / (qn * pn)
                })
                .collect();
            sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let expect: f64 = sims[..k].iter().sum::<f64>() / k as f64;
            assert!((g as f64 - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn mean_topk_empty_pool_is_error() {
        let set = EmbeddingSet::new(vec!["s".into()], 2, vec![1.0, 0.0], Role::Test).unwrap();
        let pool = EmbeddingSet::empty(2, Role::Nonlandmark);
        assert!(matches!(
            mean_topk_similarity(&set, &pool, 3).unwrap_err(),
            Error::EmptyPool
        ));
    }
}
