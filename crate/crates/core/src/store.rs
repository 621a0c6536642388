//! Embedding sets, label tables, their file formats, and the host's
//! class-filtering protocol.
//!
//! The canonical interchange format is the `EMB1` binary container, which
//! round-trips bit-exactly. CSV import is a convenience with decimal
//! parsing and is documented as non-bit-exact.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{io_err, Error, Result};

const EMB_MAGIC: &[u8; 4] = b"EMB1";

/// Which dataset an embedding set plays in the pipeline. Metadata only;
/// it is not persisted in the binary container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Test,
    Train,
    Nonlandmark,
}

/// On-disk encoding of an embedding file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Binary,
    Csv,
}

/// An ordered collection of image ids with an n×d row-major matrix of
/// f32 embedding vectors. Immutable after construction and safe to share
/// across threads.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<f32>,
    role: Role,
}

impl EmbeddingSet {
    /// Build a set from parts, enforcing the invariants: unique ids,
    /// `vectors.len() == ids.len() * dim`, every entry finite, `dim >= 1`.
    pub fn new(ids: Vec<String>, dim: usize, vectors: Vec<f32>, role: Role) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter {
                detail: "embedding dimension must be >= 1".into(),
            });
        }
        let expected = ids.len() * dim;
        if vectors.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: vectors.len(),
            });
        }
        let mut seen: HashSet<&str> = HashSet::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId {
                    id: id.clone(),
                    row,
                });
            }
        }
        for (i, v) in vectors.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row: i / dim,
                    col: i % dim,
                });
            }
        }
        Ok(Self {
            ids,
            dim,
            vectors,
            role,
        })
    }

    /// An empty set (n = 0) with the given dimension.
    pub fn empty(dim: usize, role: Role) -> Self {
        Self {
            ids: Vec::new(),
            dim: dim.max(1),
            vectors: Vec::new(),
            role,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    /// Bitwise content equality over ids, dimension and vector payload.
    /// `role` is metadata and not compared.
    pub fn content_eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.ids == other.ids
            && self.vectors.len() == other.vectors.len()
            && self
                .vectors
                .iter()
                .zip(&other.vectors)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Mapping from image id to landmark class id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelTable {
    entries: BTreeMap<String, u32>,
}

impl LabelTable {
    /// Build from (id, landmark) pairs; duplicate ids are hard errors.
    pub fn from_entries<I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, u32)>,
    {
        let mut entries = BTreeMap::new();
        for (row, (id, landmark)) in pairs.into_iter().enumerate() {
            if entries.insert(id.clone(), landmark).is_some() {
                return Err(Error::DuplicateId { id, row });
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, id: &str) -> Option<u32> {
        self.entries.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.entries.iter().map(|(id, &l)| (id.as_str(), l))
    }

    /// The set of distinct landmark ids present in the table.
    pub fn class_set(&self) -> HashSet<u32> {
        self.entries.values().copied().collect()
    }
}

/// Load an embedding set from `path` in the given format.
///
/// The returned set carries `role` as metadata. Loading is deterministic
/// and preserves row order.
pub fn load_embeddings(path: &Path, format: FileFormat, role: Role) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let result = match format {
        FileFormat::Binary => read_binary(&mut reader, role),
        FileFormat::Csv => read_csv(&mut reader, role),
    };
    result.map_err(|e| match e {
        e @ Error::Io { .. } => e,
        e => e.at_path(path),
    })
}

/// Write the `EMB1` binary container. `load_embeddings` of the result
/// reproduces the set bit-exactly.
pub fn save_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let res = write_binary(set, &mut w);
    res.map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn write_binary(set: &EmbeddingSet, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(EMB_MAGIC)?;
    w.write_u32::<LittleEndian>(set.len() as u32)?;
    w.write_u32::<LittleEndian>(set.dim() as u32)?;
    for id in set.ids() {
        let bytes = id.as_bytes();
        assert!(bytes.len() <= u16::MAX as usize, "image id longer than u16");
        w.write_u16::<LittleEndian>(bytes.len() as u16)?;
        w.write_all(bytes)?;
    }
    for v in set.vectors() {
        w.write_f32::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn read_binary(r: &mut impl Read, role: Role) -> Result<EmbeddingSet> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::Format {
        detail: format!("missing magic bytes: {e}"),
    })?;
    if &magic != EMB_MAGIC {
        return Err(Error::Format {
            detail: format!("bad magic bytes {magic:?}, expected \"EMB1\""),
        });
    }
    let n = read_u32(r, "row count")? as usize;
    let d = read_u32(r, "dimension")? as usize;
    if d == 0 {
        return Err(Error::Format {
            detail: "dimension must be >= 1".into(),
        });
    }
    let mut ids = Vec::with_capacity(n);
    for row in 0..n {
        let len = r.read_u16::<LittleEndian>().map_err(|e| Error::Format {
            detail: format!("truncated id length at row {row}: {e}"),
        })? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|e| Error::Format {
            detail: format!("truncated id at row {row}: {e}"),
        })?;
        let id = String::from_utf8(buf).map_err(|e| Error::Format {
            detail: format!("invalid UTF-8 id at row {row}: {e}"),
        })?;
        ids.push(id);
    }
    let mut vectors = vec![0f32; n * d];
    r.read_f32_into::<LittleEndian>(&mut vectors)
        .map_err(|e| Error::Format {
            detail: format!("truncated vector payload: {e}"),
        })?;
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Format {
                detail: "trailing bytes after vector payload".into(),
            })
        }
        Err(e) => {
            return Err(Error::Format {
                detail: format!("read failure after payload: {e}"),
            })
        }
    }
    EmbeddingSet::new(ids, d, vectors, role)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    r.read_u32::<LittleEndian>().map_err(|e| Error::Format {
        detail: format!("truncated header ({what}): {e}"),
    })
}

fn read_csv(r: &mut impl BufRead, role: Role) -> Result<EmbeddingSet> {
    let mut ids = Vec::new();
    let mut vectors = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Csv {
            line: idx + 1,
            detail: format!("read failure: {e}"),
        })?;
        if line.is_empty() {
            continue;
        }
        let row = ids.len();
        let mut fields = line.split(',');
        let id = fields.next().unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Csv {
                line: idx + 1,
                detail: "empty image id".into(),
            });
        }
        let mut values = Vec::new();
        for (col, field) in fields.enumerate() {
            let v: f32 = field.trim().parse().map_err(|_| Error::Csv {
                line: idx + 1,
                detail: format!("column {}: invalid float '{}'", col + 1, field),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            values.push(v);
        }
        match dim {
            None => {
                if values.is_empty() {
                    return Err(Error::Csv {
                        line: idx + 1,
                        detail: "row has no embedding values".into(),
                    });
                }
                dim = Some(values.len());
            }
            Some(d) => {
                if values.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: values.len(),
                    });
                }
            }
        }
        ids.push(id);
        vectors.extend_from_slice(&values);
    }
    let dim = dim.ok_or_else(|| Error::Format {
        detail: "empty CSV: cannot infer embedding dimension".into(),
    })?;
    EmbeddingSet::new(ids, dim, vectors, role)
}

/// Load a header-free `image_id,landmark_id` CSV.
pub fn load_labels(path: &Path) -> Result<LabelTable> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    read_labels(reader).map_err(|e| match e {
        e @ Error::Io { .. } => e,
        e => e.at_path(path),
    })
}

fn read_labels(r: impl BufRead) -> Result<LabelTable> {
    let mut entries = BTreeMap::new();
    let mut row = 0usize;
    for (idx, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Csv {
            line: idx + 1,
            detail: format!("read failure: {e}"),
        })?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::Csv {
                line: idx + 1,
                detail: format!(
                    "expected 'image_id,landmark_id', found {} fields",
                    parts.len()
                ),
            });
        }
        let id = parts[0].to_string();
        let raw = parts[1].trim();
        let signed: i64 = raw.parse().map_err(|_| Error::Csv {
            line: idx + 1,
            detail: format!("invalid landmark id '{raw}'"),
        })?;
        if signed < 0 {
            return Err(Error::Csv {
                line: idx + 1,
                detail: format!("negative landmark id {signed}"),
            });
        }
        let landmark = u32::try_from(signed).map_err(|_| Error::Csv {
            line: idx + 1,
            detail: format!("landmark id {signed} out of range"),
        })?;
        if entries.insert(id.clone(), landmark).is_some() {
            return Err(Error::DuplicateId { id, row });
        }
        row += 1;
    }
    Ok(LabelTable { entries })
}

/// Write a label table as a header-free `image_id,landmark_id` CSV,
/// sorted by image id.
pub fn save_labels(table: &LabelTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for (id, landmark) in table.iter() {
        writeln!(w, "{id},{landmark}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// The host's validation protocol: keep exactly the train images whose
/// landmark id appears among the ground-truth values of the test set.
/// Survivor row order is preserved and vectors are copied verbatim.
pub fn filter_train_to_test_classes(
    train: &EmbeddingSet,
    train_labels: &LabelTable,
    test_gt: &LabelTable,
) -> Result<(EmbeddingSet, LabelTable)> {
    let classes = test_gt.class_set();
    let mut ids = Vec::new();
    let mut vectors = Vec::new();
    let mut kept: HashMap<String, u32> = HashMap::new();
    for row in 0..train.len() {
        let id = train.id(row);
        let label = train_labels
            .get(id)
            .ok_or_else(|| Error::MissingLabel { id: id.to_string() })?;
        if classes.contains(&label) {
            ids.push(id.to_string());
            vectors.extend_from_slice(train.row(row));
            kept.insert(id.to_string(), label);
        }
    }
    let filtered = EmbeddingSet::new(ids, train.dim(), vectors, train.role())?;
    let labels = LabelTable {
        entries: kept.into_iter().collect(),
    };
    Ok((filtered, labels))
}
