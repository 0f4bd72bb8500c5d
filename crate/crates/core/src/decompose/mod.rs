//! Per-class supervised PLS and the PCA ablation.
//!
//! Both inputs are centred. Component `i` takes the dominant singular pair
//! `(w, h)` of the cross-covariance `XᵢᵀZᵢ / N`, forms scores `u = Xᵢw`,
//! `v = Zᵢh`, and deflates by regression:
//!
//! ```text
//! α = Xᵢᵀu / uᵀu     Xᵢ₊₁ = Xᵢ − u αᵀ
//! β = Zᵢᵀv / vᵀv     Zᵢ₊₁ = Zᵢ − v βᵀ
//! ```
//!
//! The singular pair is read off the eigendecomposition of the smaller of
//! `CCᵀ` / `CᵀC`, which is exact up to rounding even when lower singular
//! values cluster. Signs are canonical: the covariance `wᵀCh` is made
//! non-negative, then `(w, h)` are flipped together so the training scores
//! have non-negative skew (largest |wⱼ| positive when the skew vanishes).

mod basis_file;
mod supervision;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interchange::InterchangeError;
use crate::linalg::{dot, norm, sym_eigen, Matrix};

pub use basis_file::{decode_basis_set, encode_basis_set, read_basis_set, write_basis_set};
pub use supervision::{build_supervision, standardize_columns, EpochRecord};

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cross-covariance vanished before component {component} (‖C‖_F = {norm:e})")]
    DegenerateSupervision { component: usize, norm: f64 },
    #[error("rank deficient input: {0}")]
    RankDeficient(String),
    #[error("sample {sample} has {found} epoch records, expected {expected}")]
    InconsistentEpochCount { sample: usize, found: usize, expected: usize },
    #[error("dimension mismatch: basis expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Format(#[from] InterchangeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pls,
    Pca,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pls => "pls",
            Method::Pca => "pca",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pls" => Ok(Method::Pls),
            "pca" => Ok(Method::Pca),
            other => Err(format!("unknown method {other:?} (expected pls or pca)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlsComponent {
    /// Unit direction in embedding space.
    pub w: Vec<f64>,
    /// Unit direction in supervision space (empty for PCA).
    pub h: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Attained `E[u·v]` for PLS; singular-value share for PCA.
    pub covariance: f64,
    /// Share of the centred input's squared norm removed by this deflation.
    pub x_var_explained: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupBasis {
    pub class_label: u32,
    pub method: Method,
    pub components: Vec<PlsComponent>,
    pub x_center: Vec<f64>,
    pub z_center: Vec<f64>,
    /// RMS of the training scores over all components; soft labels divide
    /// scores by it so the softmax temperature is scale free.
    pub score_scale: f64,
    pub n_train: usize,
}

/// The per-class bases of one decomposition run.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    /// Whether embeddings were L2-normalised before fitting (and must be
    /// before scoring).
    pub normalized: bool,
    pub num_classes: u32,
    pub bases: Vec<SubgroupBasis>,
}

impl BasisSet {
    pub fn for_class(&self, class: u32) -> Option<&SubgroupBasis> {
        self.bases.iter().find(|b| b.class_label == class)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Frobenius norm below which a deflated cross-covariance counts as zero.
    pub zero_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { zero_tol: 1e-12 }
    }
}

/// A fit together with the intermediate matrices, for diagnostics.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub basis: SubgroupBasis,
    /// Training scores, N×n (column i is uᵢ).
    pub scores: Matrix,
    /// Centred input before any deflation.
    pub x0: Matrix,
    /// `deflated[i]` is Xᵢ₊₁, the input after removing components 0..=i.
    pub deflated: Vec<Matrix>,
}

pub fn fit_pls(x: &Matrix, z: &Matrix, n: usize, cfg: &FitConfig) -> Result<SubgroupBasis, DecomposeError> {
    fit_pls_trace(x, z, n, cfg).map(|t| t.basis)
}

pub fn fit_pls_trace(x: &Matrix, z: &Matrix, n: usize, cfg: &FitConfig) -> Result<FitTrace, DecomposeError> {
    let nrows = x.rows();
    if z.rows() != nrows {
        return Err(DecomposeError::InvalidArgument(format!(
            "X has {nrows} rows but Z has {}",
            z.rows()
        )));
    }
    check_sizes(nrows, x.cols(), Some(z.cols()), n)?;
    if !x.is_finite() || !z.is_finite() {
        return Err(DecomposeError::InvalidArgument("non-finite input".into()));
    }
    let x_center = x.col_means();
    let z_center = z.col_means();
    let mut xi = x.clone();
    xi.center_with(&x_center);
    let mut zi = z.clone();
    zi.center_with(&z_center);
    let x0 = xi.clone();
    let total = x0.frobenius_norm().powi(2);
    let inv_n = 1.0 / nrows as f64;

    let mut components = Vec::with_capacity(n);
    let mut scores = Matrix::zeros(nrows, n);
    let mut deflated = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = xi.t_matmul(&zi).expect("row counts agree");
        c.scale(inv_n);
        let cnorm = c.frobenius_norm();
        if cnorm < cfg.zero_tol {
            return Err(DecomposeError::DegenerateSupervision { component: i, norm: cnorm });
        }
        let (mut w, mut h) = dominant_pair(&c)?;
        let mut u = xi.mul_vec(&w);
        if orient(&mut u, &mut w) {
            h.iter_mut().for_each(|v| *v = -*v);
        }
        let v = zi.mul_vec(&h);
        let uu = dot(&u, &u);
        if uu == 0.0 {
            return Err(DecomposeError::RankDeficient(format!("component {i} has all-zero scores")));
        }
        let alpha: Vec<f64> = xi.t_mul_vec(&u).iter().map(|a| a / uu).collect();
        let vv = dot(&v, &v);
        let beta: Vec<f64> =
            if vv == 0.0 { vec![0.0; zi.cols()] } else { zi.t_mul_vec(&v).iter().map(|b| b / vv).collect() };
        let covariance = (dot(&u, &v) * inv_n).max(0.0);
        let x_var_explained = if total > 0.0 { uu * dot(&alpha, &alpha) / total } else { 0.0 };
        xi.sub_outer(&u, &alpha);
        zi.sub_outer(&v, &beta);
        for (r, ur) in u.iter().enumerate() {
            scores[(r, i)] = *ur;
        }
        deflated.push(xi.clone());
        components.push(PlsComponent { w, h, alpha, beta, covariance, x_var_explained });
    }
    let basis = SubgroupBasis {
        class_label: 0,
        method: Method::Pls,
        components,
        x_center,
        z_center,
        score_scale: rms(scores.as_slice()),
        n_train: nrows,
    };
    Ok(FitTrace { basis, scores, x0, deflated })
}

/// Top-n principal directions of the centred input.
pub fn fit_pca(x: &Matrix, n: usize) -> Result<SubgroupBasis, DecomposeError> {
    let nrows = x.rows();
    check_sizes(nrows, x.cols(), None, n)?;
    if !x.is_finite() {
        return Err(DecomposeError::InvalidArgument("non-finite input".into()));
    }
    let x_center = x.col_means();
    let mut xc = x.clone();
    xc.center_with(&x_center);
    let mut cov = xc.t_matmul(&xc).expect("square");
    cov.scale(1.0 / nrows as f64);
    let (vals, vecs) = sym_eigen(&cov).map_err(|e| DecomposeError::RankDeficient(e.to_string()))?;
    let scale = 1.0 + x.as_slice().iter().map(|v| v * v).sum::<f64>() / x.as_slice().len().max(1) as f64;
    if vals[0] <= 1e-20 * scale {
        return Err(DecomposeError::RankDeficient("input has zero variance".into()));
    }
    let sv: Vec<f64> = vals.iter().map(|l| l.max(0.0).sqrt()).collect();
    let sv_total: f64 = sv.iter().sum();
    let var_total: f64 = vals.iter().map(|l| l.max(0.0)).sum();
    let mut components = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n * nrows);
    for i in 0..n {
        let mut w = vecs.col(i);
        let mut u = xc.mul_vec(&w);
        orient(&mut u, &mut w);
        scores.extend_from_slice(&u);
        components.push(PlsComponent {
            alpha: w.clone(),
            w,
            h: Vec::new(),
            beta: Vec::new(),
            covariance: sv[i] / sv_total,
            x_var_explained: vals[i].max(0.0) / var_total,
        });
    }
    Ok(SubgroupBasis {
        class_label: 0,
        method: Method::Pca,
        components,
        x_center,
        z_center: Vec::new(),
        score_scale: rms(&scores),
        n_train: nrows,
    })
}

fn check_sizes(nrows: usize, d: usize, m: Option<usize>, n: usize) -> Result<(), DecomposeError> {
    if nrows < 2 {
        return Err(DecomposeError::InvalidArgument(format!("need at least 2 samples, got {nrows}")));
    }
    let limit = d.min(m.unwrap_or(usize::MAX)).min(nrows - 1);
    if n == 0 || n > limit {
        return Err(DecomposeError::InvalidArgument(format!(
            "component count {n} must be in 1..={limit} (d={d}{}, N={nrows})",
            m.map(|m| format!(", M={m}")).unwrap_or_default()
        )));
    }
    Ok(())
}

/// Dominant singular pair of `c` with `wᵀch ≥ 0`.
fn dominant_pair(c: &Matrix) -> Result<(Vec<f64>, Vec<f64>), DecomposeError> {
    let eig_err = |e: crate::linalg::LinalgError| DecomposeError::RankDeficient(e.to_string());
    if c.rows() <= c.cols() {
        let cct = c.matmul(&c.transpose()).expect("conformable");
        let (_, vecs) = sym_eigen(&cct).map_err(eig_err)?;
        let w = vecs.col(0);
        let ctw = c.t_mul_vec(&w);
        let s = norm(&ctw);
        Ok((w, ctw.iter().map(|v| v / s).collect()))
    } else {
        let ctc = c.t_matmul(c).expect("conformable");
        let (_, vecs) = sym_eigen(&ctc).map_err(eig_err)?;
        let h = vecs.col(0);
        let ch = c.mul_vec(&h);
        let s = norm(&ch);
        Ok((ch.iter().map(|v| v / s).collect(), h))
    }
}

/// Canonical sign: non-negative score skew, else largest |wⱼ| positive.
/// Returns whether a flip was applied (so paired vectors can follow).
fn orient(u: &mut [f64], w: &mut [f64]) -> bool {
    let m2 = u.iter().map(|x| x * x).sum::<f64>() / u.len() as f64;
    let m3 = u.iter().map(|x| x * x * x).sum::<f64>() / u.len() as f64;
    let flip = if m3.abs() > 1e-9 * m2.powf(1.5) {
        m3 < 0.0
    } else {
        let mut best = 0;
        for (j, v) in w.iter().enumerate() {
            if v.abs() > w[best].abs() {
                best = j;
            }
        }
        w[best] < 0.0
    };
    if flip {
        u.iter_mut().for_each(|x| *x = -*x);
        w.iter_mut().for_each(|x| *x = -*x);
    }
    flip
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::XorShift64Star;

    fn gaussian(rng: &mut XorShift64Star, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn rank_one_forces_direction() {
        let v = [0.6, 0.8];
        let s = [1.0, -1.0, 2.0, -2.0];
        let x = Matrix::from_rows(&s.iter().map(|si| [si * v[0], si * v[1]]).collect::<Vec<_>>()).unwrap();
        let z = Matrix::column(&s);
        let b = fit_pls(&x, &z, 1, &FitConfig::default()).unwrap();
        let c = &b.components[0];
        assert!((dot(&c.w, &v).abs() - 1.0).abs() < 1e-12);
        assert!((c.h[0].abs() - 1.0).abs() < 1e-12);
        // E[u v] = E[s²]·|h|·|w·v| = 2.5
        assert!((c.covariance - 2.5).abs() < 1e-12);
    }

    #[test]
    fn centered_axis_example() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap();
        let z = Matrix::column(&[1.0, -1.0, 0.0, 0.0]);
        let b = fit_pls(&x, &z, 1, &FitConfig::default()).unwrap();
        let c = &b.components[0];
        // XᵀZ/N = [[0.5],[0]]: singular value 0.5, w = e₁, h = (1).
        assert!((c.w[0] - 1.0).abs() < 1e-12 && c.w[1].abs() < 1e-12, "{:?}", c.w);
        assert!((c.h[0] - 1.0).abs() < 1e-12);
        assert!((c.covariance - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_input_is_rank_deficient() {
        let x = Matrix::from_rows(&[[0.1, 0.3], [0.1, 0.3], [0.1, 0.3]]).unwrap();
        assert!(matches!(fit_pca(&x, 1), Err(DecomposeError::RankDeficient(_))));
        let z = Matrix::column(&[1.0, 2.0, 3.0]);
        assert!(matches!(
            fit_pls(&x, &z, 1, &FitConfig::default()),
            Err(DecomposeError::DegenerateSupervision { component: 0, .. })
        ));
    }

    #[test]
    fn component_count_is_bounded() {
        let mut rng = XorShift64Star::new(1);
        let x = gaussian(&mut rng, 5, 3);
        let z = gaussian(&mut rng, 5, 2);
        assert!(matches!(fit_pls(&x, &z, 3, &FitConfig::default()), Err(DecomposeError::InvalidArgument(_))));
        assert!(matches!(fit_pca(&x, 0), Err(DecomposeError::InvalidArgument(_))));
        assert!(fit_pca(&x, 3).is_ok());
    }

    #[test]
    fn pca_on_full_rank_is_orthonormal() {
        let mut rng = XorShift64Star::new(4);
        let x = gaussian(&mut rng, 40, 6);
        let b = fit_pca(&x, 6).unwrap();
        for i in 0..6 {
            assert!((norm(&b.components[i].w) - 1.0).abs() < 1e-9);
            for j in 0..i {
                assert!(dot(&b.components[i].w, &b.components[j].w).abs() < 1e-8);
            }
        }
        let share: f64 = b.components.iter().map(|c| c.covariance).sum();
        assert!((share - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scores_have_nonnegative_skew() {
        let mut rng = XorShift64Star::new(9);
        let mut x = gaussian(&mut rng, 30, 4);
        for r in 0..30 {
            // Heavy positive tail along the first axis.
            x[(r, 0)] = x[(r, 0)].abs().powi(3);
        }
        let z = gaussian(&mut rng, 30, 3);
        let t = fit_pls_trace(&x, &z, 3, &FitConfig::default()).unwrap();
        for i in 0..3 {
            let m3: f64 = (0..30).map(|r| t.scores[(r, i)].powi(3)).sum();
            assert!(m3 >= 0.0);
        }
    }
}
