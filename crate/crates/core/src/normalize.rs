//! Row-wise L2 normalization and the per-dimension quantile-to-normal
//! transform fitted on a reference set.
//!
//! The transform maps each value to its interpolated empirical CDF
//! position `u` in `[0, 1]` (linear interpolation between evenly spaced
//! reference quantiles), clamps `u` to `[EPS, 1 - EPS]`, and emits
//! `inverse_normal_cdf(u)`. Values outside the reference range clamp to
//! the extreme references, so outputs are always finite (|output| <= ~5.2
//! with the default clamp). Ties in the references map to the midpoint of
//! the tied probability span, which keeps the map non-decreasing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{io_err, Error, Result};
use crate::parallel;
use crate::similarity::dot_mixed;
use crate::store::EmbeddingSet;

const QT_MAGIC: &[u8; 4] = b"QTX1";

/// CDF clamp; bounds transform outputs to roughly ±5.2.
pub const CDF_EPS: f64 = 1e-7;

/// Which roles the fitted transform is applied to in the pipeline.
/// The transform is always fitted on the test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransformMode {
    /// Transform test, train and non-landmark sets so all three live in
    /// one space.
    #[default]
    AllRoles,
    /// Transform only train and non-landmark sets, leaving test untouched.
    TrainAndNonlandmarkOnly,
}

/// Return a copy of `set` with every row scaled to unit Euclidean norm.
/// Rows with zero norm are errors, reported with the row index.
pub fn l2_normalize(set: &EmbeddingSet) -> Result<EmbeddingSet> {
    let dim = set.dim();
    let mut out = vec![0f32; set.len() * dim];
    // scale factors first so the error check stays sequential and ordered
    let mut scales = Vec::with_capacity(set.len());
    for row in 0..set.len() {
        let norm = dot_mixed(set.row(row), set.row(row)).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormRow { row });
        }
        scales.push(1.0 / norm);
    }
    parallel::for_each_chunk_mut(&mut out, dim, |row, chunk| {
        let scale = scales[row];
        for (o, v) in chunk.iter_mut().zip(set.row(row)) {
            *o = (*v as f64 * scale) as f32;
        }
    });
    EmbeddingSet::new(set.ids().to_vec(), dim, out, set.role())
}

/// Fitted per-dimension monotone map from an empirical distribution to
/// the standard normal. Immutable after fit and safe to share.
#[derive(Debug, Clone)]
pub struct QuantileTransform {
    dim: usize,
    n_quantiles: usize,
    /// d arrays of q ascending reference values, stored contiguously.
    references: Vec<f32>,
}

impl QuantileTransform {
    /// Fit on `reference`, computing per dimension the empirical quantiles
    /// at `n_quantiles` evenly spaced probability levels in `[0, 1]`
    /// (linear interpolation between order statistics).
    pub fn fit(reference: &EmbeddingSet, n_quantiles: usize) -> Result<Self> {
        let n = reference.len();
        if n < 2 {
            return Err(Error::InvalidParameter {
                detail: format!("quantile fit requires at least 2 rows, got {n}"),
            });
        }
        if n_quantiles < 2 {
            return Err(Error::InvalidParameter {
                detail: format!("n_quantiles must be >= 2, got {n_quantiles}"),
            });
        }
        let dim = reference.dim();
        let q = n_quantiles;
        let per_dim: Vec<Vec<f32>> = parallel::map_indexed(dim, |d| {
            let mut column: Vec<f32> = (0..n).map(|row| reference.row(row)[d]).collect();
            column.sort_unstable_by(f32::total_cmp);
            (0..q)
                .map(|j| {
                    let p = j as f64 / (q - 1) as f64;
                    interpolate_order_statistic(&column, p)
                })
                .collect()
        });
        let mut references = Vec::with_capacity(dim * q);
        for refs in per_dim {
            references.extend_from_slice(&refs);
        }
        Ok(Self {
            dim,
            n_quantiles: q,
            references,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_quantiles(&self) -> usize {
        self.n_quantiles
    }

    /// The ascending reference quantiles for one dimension.
    pub fn references_for(&self, d: usize) -> &[f32] {
        &self.references[d * self.n_quantiles..(d + 1) * self.n_quantiles]
    }

    /// Map every value of `set` through the fitted transform.
    pub fn apply(&self, set: &EmbeddingSet) -> Result<EmbeddingSet> {
        if set.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: set.dim(),
            });
        }
        let dim = self.dim;
        let mut out = vec![0f32; set.len() * dim];
        parallel::for_each_chunk_mut(&mut out, dim, |row, chunk| {
            let input = set.row(row);
            for d in 0..dim {
                chunk[d] = self.transform_value(d, input[d]);
            }
        });
        EmbeddingSet::new(set.ids().to_vec(), dim, out, set.role())
    }

    /// Transform a single value in dimension `d`.
    pub fn transform_value(&self, d: usize, v: f32) -> f32 {
        let refs = self.references_for(d);
        let u = cdf_position(refs, v).clamp(CDF_EPS, 1.0 - CDF_EPS);
        inverse_normal_cdf(u) as f32
    }

    /// Write the `QTX1` binary container (bit-exact round trip).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = BufWriter::new(file);
        let res = (|| -> std::io::Result<()> {
            w.write_all(QT_MAGIC)?;
            w.write_u32::<LittleEndian>(self.dim as u32)?;
            w.write_u32::<LittleEndian>(self.n_quantiles as u32)?;
            for v in &self.references {
                w.write_f32::<LittleEndian>(*v)?;
            }
            w.flush()
        })();
        res.map_err(io_err(path))
    }

    /// Load a `QTX1` container, validating finiteness and per-dimension
    /// monotonicity of the references.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut r = BufReader::new(file);
        read_qt(&mut r).map_err(|e| match e {
            e @ Error::Io { .. } => e,
            e => e.at_path(path),
        })
    }
}

fn read_qt(r: &mut impl Read) -> Result<QuantileTransform> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::Format {
        detail: format!("missing magic bytes: {e}"),
    })?;
    if &magic != QT_MAGIC {
        return Err(Error::Format {
            detail: format!("bad magic bytes {magic:?}, expected \"QTX1\""),
        });
    }
    let dim = r.read_u32::<LittleEndian>().map_err(|e| Error::Format {
        detail: format!("truncated header (dim): {e}"),
    })? as usize;
    let q = r.read_u32::<LittleEndian>().map_err(|e| Error::Format {
        detail: format!("truncated header (n_quantiles): {e}"),
    })? as usize;
    if dim == 0 || q == 0 {
        return Err(Error::Format {
            detail: "dim and n_quantiles must be >= 1".into(),
        });
    }
    let mut references = vec![0f32; dim * q];
    r.read_f32_into::<LittleEndian>(&mut references)
        .map_err(|e| Error::Format {
            detail: format!("truncated reference payload: {e}"),
        })?;
    for (i, v) in references.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: i / q,
                col: i % q,
            });
        }
    }
    for d in 0..dim {
        let refs = &references[d * q..(d + 1) * q];
        if refs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Format {
                detail: format!("references for dimension {d} are not non-decreasing"),
            });
        }
    }
    Ok(QuantileTransform {
        dim,
        n_quantiles: q,
        references,
    })
}

/// Quantile of a sorted sample at probability `p`, linear interpolation
/// between order statistics (`pos = p * (n - 1)`).
fn interpolate_order_statistic(sorted: &[f32], p: f64) -> f32 {
    let n = sorted.len();
    debug_assert!(n >= 1);
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = pos - lo as f64;
    (sorted[lo] as f64 + frac * (sorted[lo + 1] as f64 - sorted[lo] as f64)) as f32
}

/// Interpolated empirical CDF position of `v` against ascending reference
/// quantiles at evenly spaced levels. Values outside the reference range
/// clamp to 0 or 1; exact ties map to the midpoint of the tied span.
fn cdf_position(refs: &[f32], v: f32) -> f64 {
    let q = refs.len();
    debug_assert!(q >= 1);
    if q == 1 {
        return match v.partial_cmp(&refs[0]) {
            Some(std::cmp::Ordering::Less) => 0.0,
            Some(std::cmp::Ordering::Greater) => 1.0,
            _ => 0.5,
        };
    }
    let lo = refs.partition_point(|r| *r < v);
    let hi = refs.partition_point(|r| *r <= v);
    if hi == 0 {
        return 0.0;
    }
    if lo == q {
        return 1.0;
    }
    let denom = (q - 1) as f64;
    if lo < hi {
        // plateau of exact matches [lo, hi)
        let p_lo = lo as f64 / denom;
        let p_hi = (hi - 1) as f64 / denom;
        return 0.5 * (p_lo + p_hi);
    }
    // strictly between refs[lo-1] and refs[lo]
    let a = refs[lo - 1] as f64;
    let b = refs[lo] as f64;
    let pa = (lo - 1) as f64 / denom;
    let pb = lo as f64 / denom;
    pa + (v as f64 - a) / (b - a) * (pb - pa)
}

/// Inverse standard normal CDF (Wichura's AS 241, double precision).
///
/// Absolute error is below 1e-15 over (0, 1), well inside the 1e-8
/// contract the transform relies on. Returns -inf/+inf for p <= 0 / >= 1.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p.is_nan() {
        return f64::NAN;
    }
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

fn poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

// AS 241 rational approximation coefficients (PPND16), verbatim.
#[allow(clippy::excessive_precision)]
#[rustfmt::skip]
const A: [f64; 8] = [
    3.387132872796366608,
    133.14166789178437745,
    1971.5909503065514427,
    13731.693765509461125,
    45921.953931549871457,
    67265.770927008700853,
    33430.575583588128105,
    2509.0809287301226727,
];
#[allow(clippy::excessive_precision)]
#[rustfmt::skip]
const B: [f64; 8] = [
    1.0,
    42.313330701600911252,
    687.1870074920579083,
    5394.1960214247511077,
    21213.794301586595867,
    39307.89580009271061,
    28729.085735721942674,
    5226.495278852545703,
];
#[allow(clippy::excessive_precision)]
#[rustfmt::skip]
const C: [f64; 8] = [
    1.42343711074968357734,
    4.6303378461565452959,
    5.7694972214606914055,
    3.64784832476320460504,
    1.27045825245236838258,
    0.24178072517745061177,
    0.0227238449892691845833,
    7.7454501427834140764e-4,
];
#[allow(clippy::excessive_precision)]
#[rustfmt::skip]
const D: [f64; 8] = [
    1.0,
    2.05319162663775882187,
    1.6763848301838038494,
    0.68976733498510000455,
    0.14810397642748007459,
    0.0151986665636164571966,
    5.475938084995344946e-4,
    1.05075007164441684324e-9,
];
#[allow(clippy::excessive_precision)]
#[rustfmt::skip]
const E: [f64; 8] = [
    6.6579046435011037772,
    5.4637849111641143699,
    1.7848265399172913358,
    0.29656057182850489123,
    0.026532189526576123093,
    0.0012426609473880784386,
    2.71155556874348757815e-5,
    2.01033439929228813265e-7,
];
#[allow(clippy::excessive_precision)]
#[rustfmt::skip]
const F: [f64; 8] = [
    1.0,
    0.59983220655588793769,
    0.13692988092273580531,
    0.0148753612908506148525,
    7.868691311456132591e-4,
    1.8463183175100546818e-5,
    1.4215117583164458887e-7,
    2.04426310338993978564e-15,
];
