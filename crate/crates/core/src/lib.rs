//! Ranking and re-ranking of instance-recognition predictions from
//! precomputed image embeddings.
//!
//! The library classifies test images by cosine similarity to a labeled
//! train corpus and penalizes predictions that resemble a pool of known
//! out-of-domain ("non-landmark") images, so that true landmark
//! predictions sort above distractors in the confidence-ordered list that
//! Global Average Precision scores.
//!
//! Modules:
//! - [`store`]: embedding/label containers, file formats, class filtering
//! - [`normalize`]: L2 normalization and the quantile-to-normal transform
//! - [`similarity`]: blocked brute-force cosine top-k kernels
//! - [`rerank`]: penalized top-k label aggregation
//! - [`ensemble`]: concatenation and top-k score-sum model blending
//! - [`metrics`]: GAP scoring and baseline-vs-rerank comparison
//! - [`synth`]: seeded synthetic benchmark generator
//! - [`pipeline`]: end-to-end driver used by the CLI
//!
//! Compiled with the default `parallel` feature the hot kernels run on
//! rayon; without it they run sequentially. Outputs are identical either
//! way.

pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod normalize;
mod parallel;
pub mod pipeline;
pub mod rerank;
pub mod similarity;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
pub use normalize::{l2_normalize, QuantileTransform, TransformMode};
pub use rerank::{RankedPrediction, RerankParams};
pub use similarity::{cosine_topk, mean_topk_similarity, Neighbor, TopKResult};
pub use store::{EmbeddingSet, LabelTable, Role};
