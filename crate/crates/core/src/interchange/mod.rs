//! On-disk data model shared with the exporter.
//!
//! A dataset lives in a single `DIMX` container:
//!
//! ```text
//! "DIMX" | version u32 = 1 | section_count u32
//! sections (tag [u8;4] | payload_len u64 | payload), written in this order:
//!   "EMB\0"  u64 rows | u64 cols | rows*cols f64, row-major      (required)
//!   "SUP\0"  same layout as EMB                                   (optional)
//!   "META"   u32 L | u32 G | u64 N | N records of                 (required)
//!              u32 class_label | u32 gt_subgroup | u8 flags | u8 split
//!            flags: bit0 gt_subgroup present, bit1 correct present,
//!                   bit2 correct value
//!            split: 0 train, 1 val, 2 test, 3 pool
//!   "CAP\0"  u64 N | N × (u32 byte_len | UTF-8 bytes)             (optional)
//! ```
//!
//! Optional sections are simply absent when unused. Everything is
//! little-endian; reals are always f64.

pub mod container;
mod csv;
mod dimx;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::linalg::Matrix;
use container::{tag_name, Tag};

pub use csv::read_csv;
pub use dimx::{decode_dataset, encode_dataset, read_dataset, write_dataset};

pub const DIMX_MAGIC: Tag = *b"DIMX";
pub const DIMX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic at offset 0: expected {:?}, found {:?}", tag_name(.expected), tag_name(.found))]
    BadMagic { expected: Tag, found: Tag },
    #[error("unsupported version {found} at offset 4 (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated input at offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{offset} unexpected trailing bytes")]
    TrailingBytes { offset: usize },
    #[error("shape mismatch in section {section} at offset {offset}: {detail}")]
    ShapeMismatch { section: String, offset: usize, detail: String },
    #[error("non-finite value in section {section} at row {row}, col {col}")]
    NonFiniteValue { section: String, row: usize, col: usize },
    #[error("missing required section {0}")]
    MissingSection(String),
    #[error("duplicate section {tag} at offset {offset}")]
    DuplicateSection { tag: String, offset: usize },
    #[error("unknown section {tag} at offset {offset}")]
    UnknownSection { tag: String, offset: usize },
    #[error("invalid metadata at row {row}: {detail}")]
    InvalidMeta { row: usize, detail: String },
    #[error("caption {row} is not valid UTF-8")]
    InvalidUtf8 { row: usize },
    #[error("csv line {line}: {detail}")]
    Csv { line: usize, detail: String },
}

impl InterchangeError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[derive(serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Pool,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
            Split::Pool => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Split::Train,
            1 => Split::Val,
            2 => Split::Test,
            3 => Split::Pool,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Pool => "pool",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "pool" => Ok(Split::Pool),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

/// Per-row annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleMeta {
    pub class_label: u32,
    pub gt_subgroup: Option<u32>,
    /// Whether the studied classifier got this sample right.
    pub correct: Option<bool>,
    pub split: Split,
}

/// Embeddings plus optional training dynamics and captions, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    embeddings: Matrix,
    supervision: Option<Matrix>,
    meta: Vec<SampleMeta>,
    num_classes: u32,
    num_subgroups: u32,
    captions: Option<Vec<String>>,
}

impl Dataset {
    /// Validates and assembles a dataset.
    pub fn new(
        embeddings: Matrix,
        supervision: Option<Matrix>,
        meta: Vec<SampleMeta>,
        num_classes: u32,
        num_subgroups: u32,
        captions: Option<Vec<String>>,
    ) -> Result<Self, InterchangeError> {
        let n = meta.len();
        let shape = |section: &str, detail: String| InterchangeError::ShapeMismatch {
            section: section.to_string(),
            offset: 0,
            detail,
        };
        if embeddings.rows() != n {
            return Err(shape("EMB", format!("{} rows but {n} metadata records", embeddings.rows())));
        }
        check_finite("EMB", &embeddings)?;
        if let Some(s) = &supervision {
            if s.rows() != n {
                return Err(shape("SUP", format!("{} rows but {n} metadata records", s.rows())));
            }
            check_finite("SUP", s)?;
        }
        if let Some(c) = &captions {
            if c.len() != n {
                return Err(shape("CAP", format!("{} captions but {n} metadata records", c.len())));
            }
        }
        for (row, m) in meta.iter().enumerate() {
            if m.class_label >= num_classes {
                return Err(InterchangeError::InvalidMeta {
                    row,
                    detail: format!("class_label {} >= L={num_classes}", m.class_label),
                });
            }
            if let Some(g) = m.gt_subgroup {
                if g >= num_subgroups {
                    return Err(InterchangeError::InvalidMeta {
                        row,
                        detail: format!("gt_subgroup {g} >= G={num_subgroups}"),
                    });
                }
            }
        }
        Ok(Self { embeddings, supervision, meta, num_classes, num_subgroups, captions })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn supervision(&self) -> Option<&Matrix> {
        self.supervision.as_ref()
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn num_subgroups(&self) -> u32 {
        self.num_subgroups
    }

    pub fn captions(&self) -> Option<&[String]> {
        self.captions.as_deref()
    }

    /// Row indices matching an optional class and an optional split, ascending.
    pub fn indices(&self, class: Option<u32>, split: Option<Split>) -> Vec<usize> {
        self.meta
            .iter()
            .enumerate()
            .filter(|(_, m)| class.is_none_or(|c| m.class_label == c))
            .filter(|(_, m)| split.is_none_or(|s| m.split == s))
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy of the dataset with every embedding row scaled to unit length.
    pub fn with_normalized_embeddings(&self) -> Self {
        let mut d = self.clone();
        d.embeddings.normalize_rows();
        d
    }

    /// Appends the listed rows of `other` (same dimensionality and label space).
    pub fn concat_rows(&self, other: &Dataset, rows: &[usize]) -> Result<Self, InterchangeError> {
        if other.dim() != self.dim() {
            return Err(InterchangeError::ShapeMismatch {
                section: "EMB".into(),
                offset: 0,
                detail: format!("cannot append {}-dim rows to {}-dim dataset", other.dim(), self.dim()),
            });
        }
        let mut emb = self.embeddings.as_slice().to_vec();
        let mut meta = self.meta.clone();
        for &r in rows {
            emb.extend_from_slice(other.embeddings.row(r));
            meta.push(other.meta[r]);
        }
        let sup = match (&self.supervision, &other.supervision) {
            (Some(a), Some(b)) if a.cols() == b.cols() => {
                let mut s = a.as_slice().to_vec();
                for &r in rows {
                    s.extend_from_slice(b.row(r));
                }
                Some(Matrix::from_vec(meta.len(), a.cols(), s).expect("consistent shape"))
            }
            _ => None,
        };
        let caps = match (&self.captions, &other.captions) {
            (Some(a), Some(b)) => {
                let mut c = a.clone();
                c.extend(rows.iter().map(|&r| b[r].clone()));
                Some(c)
            }
            _ => None,
        };
        let emb = Matrix::from_vec(meta.len(), self.dim(), emb).expect("consistent shape");
        Dataset::new(
            emb,
            sup,
            meta,
            self.num_classes.max(other.num_classes),
            self.num_subgroups.max(other.num_subgroups),
            caps,
        )
    }
}

fn check_finite(section: &str, m: &Matrix) -> Result<(), InterchangeError> {
    if let Some(pos) = m.as_slice().iter().position(|x| !x.is_finite()) {
        let cols = m.cols().max(1);
        return Err(InterchangeError::NonFiniteValue {
            section: section.to_string(),
            row: pos / cols,
            col: pos % cols,
        });
    }
    Ok(())
}
