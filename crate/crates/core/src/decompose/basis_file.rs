//! Basis container, framed like the dataset file but with magic `DIMB`.
//!
//! ```text
//! "HDR\0"  u8 normalized | u32 num_classes | u32 basis_count
//! "CLS\0"  (one per class, ascending class order)
//!          u32 class | u8 method (0 pls, 1 pca) | u64 n | u64 d | u64 m
//!          f64 score_scale | u64 n_train | d f64 x_center | m f64 z_center
//!          n × (d f64 w | m f64 h | d f64 alpha | m f64 beta
//!               | f64 covariance | f64 x_var_explained)
//! ```
//! For PCA `m` is 0 and the supervision vectors are empty.

use std::path::Path;

use super::{BasisSet, DecomposeError, Method, PlsComponent, SubgroupBasis};
use crate::interchange::container::{self, ByteReader, PutLe, Tag, Writer};
use crate::interchange::InterchangeError;

pub const DIMB_MAGIC: Tag = *b"DIMB";
const VERSION: u32 = 1;
const HDR: Tag = *b"HDR\0";
const CLS: Tag = *b"CLS\0";

pub fn encode_basis_set(set: &BasisSet) -> Vec<u8> {
    let mut w = Writer::new(&DIMB_MAGIC, VERSION);
    let mut hdr = Vec::new();
    hdr.put_u8(set.normalized as u8);
    hdr.put_u32(set.num_classes);
    hdr.put_u32(set.bases.len() as u32);
    w.section(&HDR, &hdr);
    for b in &set.bases {
        let d = b.x_center.len();
        let m = b.z_center.len();
        let mut p = Vec::new();
        p.put_u32(b.class_label);
        p.put_u8(match b.method {
            Method::Pls => 0,
            Method::Pca => 1,
        });
        p.put_u64(b.components.len() as u64);
        p.put_u64(d as u64);
        p.put_u64(m as u64);
        p.put_f64(b.score_scale);
        p.put_u64(b.n_train as u64);
        p.put_f64s(&b.x_center);
        p.put_f64s(&b.z_center);
        for c in &b.components {
            debug_assert_eq!(c.w.len(), d);
            debug_assert_eq!(c.h.len(), m);
            p.put_f64s(&c.w);
            p.put_f64s(&c.h);
            p.put_f64s(&c.alpha);
            p.put_f64s(&c.beta);
            p.put_f64(c.covariance);
            p.put_f64(c.x_var_explained);
        }
        w.section(&CLS, &p);
    }
    w.finish()
}

fn shape(offset: usize, detail: String) -> InterchangeError {
    InterchangeError::ShapeMismatch { section: "CLS".into(), offset, detail }
}

fn f64s(r: &mut ByteReader<'_>, n: usize, row: usize) -> Result<Vec<f64>, InterchangeError> {
    let mut v = Vec::with_capacity(n);
    for col in 0..n {
        let x = r.f64()?;
        if !x.is_finite() {
            return Err(InterchangeError::NonFiniteValue { section: "CLS".into(), row, col });
        }
        v.push(x);
    }
    Ok(v)
}

pub fn decode_basis_set(bytes: &[u8]) -> Result<BasisSet, DecomposeError> {
    let sections = container::parse(bytes, &DIMB_MAGIC, VERSION)?;
    let mut iter = sections.iter();
    let hdr = iter
        .next()
        .filter(|s| s.tag == HDR)
        .ok_or_else(|| InterchangeError::MissingSection("HDR".into()))?;
    let mut r = ByteReader::new(hdr.payload, hdr.offset);
    let normalized = r.u8()? != 0;
    let num_classes = r.u32()?;
    let count = r.u32()? as usize;
    if r.remaining() != 0 {
        return Err(InterchangeError::TrailingBytes { offset: r.offset() }.into());
    }
    let mut bases = Vec::with_capacity(count);
    for s in iter {
        if s.tag != CLS {
            return Err(InterchangeError::UnknownSection {
                tag: container::tag_name(&s.tag),
                offset: s.offset - 12,
            }
            .into());
        }
        let mut r = ByteReader::new(s.payload, s.offset);
        let class_label = r.u32()?;
        let method = match r.u8()? {
            0 => Method::Pls,
            1 => Method::Pca,
            k => return Err(shape(s.offset + 4, format!("unknown method code {k}")).into()),
        };
        let n = r.u64()? as usize;
        let d = r.u64()? as usize;
        let m = r.u64()? as usize;
        let per_comp = (2 * d + 2 * m + 2) as u128 * 8;
        let need = 16 + (d + m) as u128 * 8 + n as u128 * per_comp;
        if need != r.remaining() as u128 {
            return Err(shape(
                s.offset,
                format!("n={n}, d={d}, m={m} needs {need} more bytes, payload has {}", r.remaining()),
            )
            .into());
        }
        let score_scale = r.f64()?;
        let n_train = r.u64()? as usize;
        let x_center = f64s(&mut r, d, 0)?;
        let z_center = f64s(&mut r, m, 0)?;
        let mut components = Vec::with_capacity(n);
        for i in 0..n {
            let w = f64s(&mut r, d, i)?;
            let h = f64s(&mut r, m, i)?;
            let alpha = f64s(&mut r, d, i)?;
            let beta = f64s(&mut r, m, i)?;
            let covariance = r.f64()?;
            let x_var_explained = r.f64()?;
            components.push(PlsComponent { w, h, alpha, beta, covariance, x_var_explained });
        }
        bases.push(SubgroupBasis { class_label, method, components, x_center, z_center, score_scale, n_train });
    }
    if bases.len() != count {
        return Err(InterchangeError::InvalidMeta {
            row: bases.len(),
            detail: format!("header declares {count} class bases, file has {}", bases.len()),
        }
        .into());
    }
    Ok(BasisSet { normalized, num_classes, bases })
}

pub fn read_basis_set(path: &Path) -> Result<BasisSet, DecomposeError> {
    let bytes = std::fs::read(path).map_err(|e| InterchangeError::io(path, e))?;
    decode_basis_set(&bytes)
}

pub fn write_basis_set(set: &BasisSet, path: &Path) -> Result<(), DecomposeError> {
    std::fs::write(path, encode_basis_set(set)).map_err(|e| InterchangeError::io(path, e).into())
}
