use std::path::Path;

use super::container::{self, tag_name, ByteReader, PutLe, Section, Tag, Writer};
use super::{Dataset, InterchangeError, SampleMeta, Split, DIMX_MAGIC, DIMX_VERSION};
use crate::linalg::Matrix;

const EMB: Tag = *b"EMB\0";
const SUP: Tag = *b"SUP\0";
const META: Tag = *b"META";
const CAP: Tag = *b"CAP\0";

const FLAG_GT: u8 = 1;
const FLAG_CORRECT_PRESENT: u8 = 1 << 1;
const FLAG_CORRECT_VALUE: u8 = 1 << 2;

pub fn encode_dataset(d: &Dataset) -> Vec<u8> {
    let mut w = Writer::new(&DIMX_MAGIC, DIMX_VERSION);
    w.section(&EMB, &encode_matrix(d.embeddings()));
    if let Some(s) = d.supervision() {
        w.section(&SUP, &encode_matrix(s));
    }
    let mut meta = Vec::with_capacity(16 + 10 * d.len());
    meta.put_u32(d.num_classes());
    meta.put_u32(d.num_subgroups());
    meta.put_u64(d.len() as u64);
    for m in d.meta() {
        meta.put_u32(m.class_label);
        meta.put_u32(m.gt_subgroup.unwrap_or(0));
        let mut flags = 0;
        if m.gt_subgroup.is_some() {
            flags |= FLAG_GT;
        }
        if let Some(c) = m.correct {
            flags |= FLAG_CORRECT_PRESENT;
            if c {
                flags |= FLAG_CORRECT_VALUE;
            }
        }
        meta.put_u8(flags);
        meta.put_u8(m.split.code());
    }
    w.section(&META, &meta);
    if let Some(caps) = d.captions() {
        let mut buf = Vec::new();
        buf.put_u64(caps.len() as u64);
        for c in caps {
            buf.put_u32(c.len() as u32);
            buf.extend_from_slice(c.as_bytes());
        }
        w.section(&CAP, &buf);
    }
    w.finish()
}

pub(crate) fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * m.as_slice().len());
    buf.put_u64(m.rows() as u64);
    buf.put_u64(m.cols() as u64);
    buf.put_f64s(m.as_slice());
    buf
}

pub(crate) fn decode_matrix(s: &Section<'_>) -> Result<Matrix, InterchangeError> {
    let name = tag_name(&s.tag);
    let mut r = ByteReader::new(s.payload, s.offset);
    let rows = r.u64()?;
    let cols = r.u64()?;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .filter(|&n| n == r.remaining() as u64);
    if expected.is_none() {
        return Err(InterchangeError::ShapeMismatch {
            section: name,
            offset: s.offset,
            detail: format!(
                "declared {rows}x{cols} needs {} data bytes, payload has {}",
                rows as u128 * cols as u128 * 8,
                r.remaining()
            ),
        });
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let mut data = Vec::with_capacity(rows * cols);
    for k in 0..rows * cols {
        let v = r.f64()?;
        if !v.is_finite() {
            return Err(InterchangeError::NonFiniteValue { section: name, row: k / cols, col: k % cols });
        }
        data.push(v);
    }
    Ok(Matrix::from_vec(rows, cols, data).expect("length checked above"))
}

struct MetaSection {
    l: u32,
    g: u32,
    records: Vec<SampleMeta>,
}

fn decode_meta(s: &Section<'_>) -> Result<MetaSection, InterchangeError> {
    let mut r = ByteReader::new(s.payload, s.offset);
    let l = r.u32()?;
    let g = r.u32()?;
    let n = r.u64()?;
    if n.checked_mul(10) != Some(r.remaining() as u64) {
        return Err(InterchangeError::ShapeMismatch {
            section: "META".into(),
            offset: s.offset,
            detail: format!("{n} records need {} bytes, payload has {}", n as u128 * 10, r.remaining()),
        });
    }
    let mut records = Vec::with_capacity(n as usize);
    for row in 0..n as usize {
        let class_label = r.u32()?;
        let gt = r.u32()?;
        let flags = r.u8()?;
        let split_code = r.u8()?;
        let split = Split::from_code(split_code).ok_or_else(|| InterchangeError::InvalidMeta {
            row,
            detail: format!("split code {split_code}"),
        })?;
        if flags & !(FLAG_GT | FLAG_CORRECT_PRESENT | FLAG_CORRECT_VALUE) != 0 {
            return Err(InterchangeError::InvalidMeta { row, detail: format!("unknown flag bits {flags:#04x}") });
        }
        records.push(SampleMeta {
            class_label,
            gt_subgroup: (flags & FLAG_GT != 0).then_some(gt),
            correct: (flags & FLAG_CORRECT_PRESENT != 0).then_some(flags & FLAG_CORRECT_VALUE != 0),
            split,
        });
    }
    Ok(MetaSection { l, g, records })
}

fn decode_captions(s: &Section<'_>) -> Result<Vec<String>, InterchangeError> {
    let mut r = ByteReader::new(s.payload, s.offset);
    let n = r.u64()?;
    let mut caps = Vec::with_capacity(n.min(1 << 20) as usize);
    for row in 0..n as usize {
        let len = r.u32()? as usize;
        let bytes = r.take(len)?;
        let text = std::str::from_utf8(bytes).map_err(|_| InterchangeError::InvalidUtf8 { row })?;
        caps.push(text.to_string());
    }
    if r.remaining() != 0 {
        return Err(InterchangeError::TrailingBytes { offset: r.offset() });
    }
    Ok(caps)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, InterchangeError> {
    let sections = container::parse(bytes, &DIMX_MAGIC, DIMX_VERSION)?;
    let mut slots: [Option<&Section<'_>>; 4] = [None; 4];
    for s in &sections {
        let slot = match s.tag {
            EMB => 0,
            SUP => 1,
            META => 2,
            CAP => 3,
            _ => {
                return Err(InterchangeError::UnknownSection { tag: tag_name(&s.tag), offset: s.offset - 12 });
            }
        };
        if slots[slot].is_some() {
            return Err(InterchangeError::DuplicateSection { tag: tag_name(&s.tag), offset: s.offset - 12 });
        }
        slots[slot] = Some(s);
    }
    let emb = slots[0].ok_or_else(|| InterchangeError::MissingSection("EMB".into()))?;
    let meta = slots[2].ok_or_else(|| InterchangeError::MissingSection("META".into()))?;
    let embeddings = decode_matrix(emb)?;
    let supervision = slots[1].map(decode_matrix).transpose()?;
    let meta = decode_meta(meta)?;
    let captions = slots[3].map(decode_captions).transpose()?;
    Dataset::new(embeddings, supervision, meta.records, meta.l, meta.g, captions)
}

pub fn read_dataset(path: &Path) -> Result<Dataset, InterchangeError> {
    let bytes = std::fs::read(path).map_err(|e| InterchangeError::io(path, e))?;
    decode_dataset(&bytes)
}

pub fn write_dataset(d: &Dataset, path: &Path) -> Result<(), InterchangeError> {
    std::fs::write(path, encode_dataset(d)).map_err(|e| InterchangeError::io(path, e))
}
