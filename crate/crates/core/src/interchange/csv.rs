//! Hand-written fixtures: `dim0,...,dimK,class,split` with a header row.
//! Only embeddings and labels are carried; G is taken as 1.

use std::path::Path;

use super::{Dataset, InterchangeError, SampleMeta};
use crate::linalg::Matrix;

pub fn read_csv(path: &Path) -> Result<Dataset, InterchangeError> {
    let text = std::fs::read_to_string(path).map_err(|e| InterchangeError::io(path, e))?;
    parse_csv(&text)
}

pub(crate) fn parse_csv(text: &str) -> Result<Dataset, InterchangeError> {
    let err = |line: usize, detail: String| InterchangeError::Csv { line, detail };
    let mut rdr = ::csv::ReaderBuilder::new().trim(::csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    let ncol = header.len();
    if ncol < 3 || &header[ncol - 2] != "class" || &header[ncol - 1] != "split" {
        return Err(err(1, "header must be dim0..dimK,class,split".into()));
    }
    let d = ncol - 2;
    for (j, name) in header.iter().take(d).enumerate() {
        if name != format!("dim{j}") {
            return Err(err(1, format!("expected column dim{j}, found {name:?}")));
        }
    }
    let mut data = Vec::new();
    let mut meta = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        for j in 0..d {
            let v: f64 = rec[j].parse().map_err(|_| err(line, format!("dim{j}: not a number: {:?}", &rec[j])))?;
            if !v.is_finite() {
                return Err(InterchangeError::NonFiniteValue { section: "csv".into(), row: k, col: j });
            }
            data.push(v);
        }
        let class_label: u32 = rec[d].parse().map_err(|_| err(line, format!("bad class {:?}", &rec[d])))?;
        let split = rec[d + 1].parse().map_err(|e| err(line, e))?;
        meta.push(SampleMeta { class_label, gt_subgroup: None, correct: None, split });
    }
    let l = meta.iter().map(|m| m.class_label + 1).max().unwrap_or(1);
    let emb = Matrix::from_vec(meta.len(), d, data).expect("row-wise construction");
    Dataset::new(emb, None, meta, l, 1, None)
}
