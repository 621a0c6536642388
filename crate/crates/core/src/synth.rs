//! Seeded synthetic benchmark generator.
//!
//! Produces test/train/non-landmark embedding sets with known ground truth
//! at desk scale. Landmark classes get unit-sphere centroids; train rows
//! and landmark test rows are centroid plus Gaussian noise, except that a
//! fraction of landmark test rows are "hard" queries that point only
//! partially at their class centroid and therefore score weakly.
//! Distractor test rows combine a distractor centroid with a pull toward a
//! random landmark class, which lands their confidences inside the hard-
//! query band. A configurable fraction of distractors use the same
//! centroids the non-landmark pool is drawn from — that shared core is
//! what pool penalization exploits, while the rest use centroids the pool
//! has never seen. Generation is fully deterministic for a given seed: the
//! PRNG is ChaCha8 and the sampling order is fixed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::store::{save_embeddings, save_labels, EmbeddingSet, LabelTable, Role};

/// Canonical file names written by [`write_dataset`]; the pipeline expects
/// these inside each model directory.
pub const TEST_FILE: &str = "test.emb";
pub const TRAIN_FILE: &str = "train.emb";
pub const NONLANDMARK_FILE: &str = "nonlandmark.emb";
pub const TRAIN_LABELS_FILE: &str = "train_labels.csv";
pub const TEST_GT_FILE: &str = "test_gt.csv";

/// Fraction of landmark test queries that are "hard": partially rotated
/// away from their class centroid so their confidences drop into the
/// distractor band.
const HARD_QUERY_FRACTION: f64 = 0.5;

/// Cosine of a hard query to its class centroid, sampled per query.
const HARD_QUERY_MIX: (f32, f32) = (0.45, 0.75);

/// Class-pull coefficient for distractors drawn from pool-shared
/// centroids: sample direction is `centroid + pull * class_centroid`.
const SHARED_CLASS_PULL: (f32, f32) = (0.5, 0.8);

/// Class-pull coefficient for distractors from novel centroids. Slightly
/// weaker: unseen distractors are the re-ranker's floor, not its target.
const NOVEL_CLASS_PULL: (f32, f32) = (0.35, 0.6);

/// One distractor centroid per this many landmark classes (at least one),
/// for the shared and the novel group each.
const CLASSES_PER_DISTRACTOR_CENTROID: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub dim: usize,
    pub n_classes: usize,
    pub train_per_class: usize,
    pub n_test_landmark: usize,
    pub n_test_distractor: usize,
    pub n_nonlandmark_pool: usize,
    /// Expected Euclidean distance of a sample from its centroid.
    pub class_spread: f32,
    /// Fraction of distractor test images drawn from the centroids shared
    /// with the non-landmark pool; the rest come from novel distractor
    /// centroids the pool has never seen.
    pub distractor_overlap: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            dim: 64,
            n_classes: 50,
            train_per_class: 20,
            n_test_landmark: 100,
            n_test_distractor: 900,
            n_nonlandmark_pool: 500,
            class_spread: 0.3,
            distractor_overlap: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidParameter {
                detail: "dim must be >= 2".into(),
            });
        }
        if self.n_classes == 0 || self.train_per_class == 0 {
            return Err(Error::InvalidParameter {
                detail: "n_classes and train_per_class must be >= 1".into(),
            });
        }
        if !(self.class_spread.is_finite() && self.class_spread > 0.0) {
            return Err(Error::InvalidParameter {
                detail: "class_spread must be a positive finite float".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.distractor_overlap) {
            return Err(Error::InvalidParameter {
                detail: "distractor_overlap must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }
}

/// A generated benchmark instance.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub test: EmbeddingSet,
    pub train: EmbeddingSet,
    pub nonlandmark: EmbeddingSet,
    pub train_labels: LabelTable,
    pub test_gt: LabelTable,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let mut v = gaussian_vec(rng, dim);
        let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 1e-3 {
            for x in &mut v {
                *x = (*x as f64 / norm) as f32;
            }
            return v;
        }
    }
}

/// Unit vector with cosine exactly `mix` to `anchor`: the anchor scaled by
/// `mix` plus an orthogonal unit component scaled by sqrt(1 - mix^2).
fn rotated_unit_vec(rng: &mut ChaCha8Rng, anchor: &[f32], mix: f32) -> Vec<f32> {
    let dim = anchor.len();
    loop {
        let g = gaussian_vec(rng, dim);
        let proj: f64 = g
            .iter()
            .zip(anchor)
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        let mut perp: Vec<f64> = g
            .iter()
            .zip(anchor)
            .map(|(a, b)| *a as f64 - proj * *b as f64)
            .collect();
        let norm = perp.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-3 {
            continue;
        }
        for x in &mut perp {
            *x /= norm;
        }
        let ortho_scale = (1.0 - (mix as f64).powi(2)).sqrt();
        return anchor
            .iter()
            .zip(&perp)
            .map(|(a, p)| (*a as f64 * mix as f64 + p * ortho_scale) as f32)
            .collect();
    }
}

fn noisy_sample(rng: &mut ChaCha8Rng, centroid: &[f32], sigma: f32) -> Vec<f32> {
    centroid
        .iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            (*c as f64 + z * sigma as f64) as f32
        })
        .collect()
}

/// Distractor direction: a distractor centroid plus a pull toward one
/// landmark class, then Gaussian noise. Left un-normalized; cosine scoring
/// is scale-invariant.
fn distractor_sample(
    rng: &mut ChaCha8Rng,
    centroid: &[f32],
    class_centroid: &[f32],
    pull: f32,
    sigma: f32,
) -> Vec<f32> {
    centroid
        .iter()
        .zip(class_centroid)
        .map(|(u, c)| {
            let z: f64 = StandardNormal.sample(rng);
            (*u as f64 + pull as f64 * *c as f64 + z * sigma as f64) as f32
        })
        .collect()
}

/// Generate a benchmark instance. Identical configs yield bit-identical
/// outputs.
pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.dim;
    let sigma = config.class_spread / (dim as f32).sqrt();

    let class_centroids: Vec<Vec<f32>> = (0..config.n_classes)
        .map(|_| unit_vec(&mut rng, dim))
        .collect();

    let n_centroids = (config.n_classes / CLASSES_PER_DISTRACTOR_CENTROID).max(1);
    let shared_centroids: Vec<Vec<f32>> =
        (0..n_centroids).map(|_| unit_vec(&mut rng, dim)).collect();
    let novel_centroids: Vec<Vec<f32>> =
        (0..n_centroids).map(|_| unit_vec(&mut rng, dim)).collect();

    // train: class-major order
    let mut train_ids = Vec::with_capacity(config.n_classes * config.train_per_class);
    let mut train_vectors = Vec::with_capacity(config.n_classes * config.train_per_class * dim);
    let mut train_label_pairs = Vec::new();
    for (class, centroid) in class_centroids.iter().enumerate() {
        for _ in 0..config.train_per_class {
            let id = format!("t{:06}", train_ids.len());
            train_vectors.extend(noisy_sample(&mut rng, centroid, sigma));
            train_label_pairs.push((id.clone(), class as u32));
            train_ids.push(id);
        }
    }

    // test: landmark rows first, then distractors
    let n_test = config.n_test_landmark + config.n_test_distractor;
    let mut test_ids = Vec::with_capacity(n_test);
    let mut test_vectors = Vec::with_capacity(n_test * dim);
    let mut gt_pairs = Vec::new();
    for i in 0..config.n_test_landmark {
        let class = rng.gen_range(0..config.n_classes);
        let id = format!("q{i:06}");
        if rng.gen_bool(HARD_QUERY_FRACTION) {
            let mix = rng.gen_range(HARD_QUERY_MIX.0..HARD_QUERY_MIX.1);
            let direction = rotated_unit_vec(&mut rng, &class_centroids[class], mix);
            test_vectors.extend(noisy_sample(&mut rng, &direction, sigma));
        } else {
            test_vectors.extend(noisy_sample(&mut rng, &class_centroids[class], sigma));
        }
        gt_pairs.push((id.clone(), class as u32));
        test_ids.push(id);
    }
    for i in 0..config.n_test_distractor {
        let (centroids, pull_range) = if rng.gen_bool(config.distractor_overlap as f64) {
            (&shared_centroids, SHARED_CLASS_PULL)
        } else {
            (&novel_centroids, NOVEL_CLASS_PULL)
        };
        let pick = rng.gen_range(0..centroids.len());
        let class = rng.gen_range(0..config.n_classes);
        let pull = rng.gen_range(pull_range.0..pull_range.1);
        let id = format!("q{:06}", config.n_test_landmark + i);
        test_vectors.extend(distractor_sample(
            &mut rng,
            &centroids[pick],
            &class_centroids[class],
            pull,
            sigma,
        ));
        test_ids.push(id);
    }

    // pool: shared centroids only
    let mut pool_ids = Vec::with_capacity(config.n_nonlandmark_pool);
    let mut pool_vectors = Vec::with_capacity(config.n_nonlandmark_pool * dim);
    for i in 0..config.n_nonlandmark_pool {
        let pick = rng.gen_range(0..shared_centroids.len());
        pool_ids.push(format!("z{i:06}"));
        pool_vectors.extend(noisy_sample(&mut rng, &shared_centroids[pick], sigma));
    }

    Ok(SynthData {
        test: EmbeddingSet::new(test_ids, dim, test_vectors, Role::Test)?,
        train: EmbeddingSet::new(train_ids, dim, train_vectors, Role::Train)?,
        nonlandmark: EmbeddingSet::new(pool_ids, dim, pool_vectors, Role::Nonlandmark)?,
        train_labels: LabelTable::from_entries(train_label_pairs)?,
        test_gt: LabelTable::from_entries(gt_pairs)?,
    })
}

/// Write the five benchmark files into `dir` using the canonical names.
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(crate::error::io_err(dir))?;
    save_embeddings(&data.test, &dir.join(TEST_FILE))?;
    save_embeddings(&data.train, &dir.join(TRAIN_FILE))?;
    save_embeddings(&data.nonlandmark, &dir.join(NONLANDMARK_FILE))?;
    save_labels(&data.train_labels, &dir.join(TRAIN_LABELS_FILE))?;
    save_labels(&data.test_gt, &dir.join(TEST_GT_FILE))?;
    Ok(())
}
