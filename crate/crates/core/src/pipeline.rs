//! Dataset-level glue: per-class fitting, pseudo-labels, bias reports,
//! matching against references and mitigation runs.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{fit_pca, fit_pls, standardize_columns, DecomposeError, FitConfig, Method, SubgroupBasis};
use crate::evalmatch::{detection_success, match_directions, MatchError, MatchResult};
use crate::interchange::{Dataset, Split};
use crate::linalg::Matrix;
use crate::mitigate::{evaluate, filter_pool, train, Metrics, MitigateError, TrainConfig, TrainMethod, Trained};
use crate::subgroup::{assign, identify_biased, score_rows, BiasReport, SubgroupError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Subgroup(#[from] SubgroupError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Mitigate(#[from] MitigateError),
    #[error("dataset has no supervision section; PLS needs training dynamics")]
    MissingSupervision,
    #[error("class {class} has no {split} samples")]
    EmptySplit { class: u32, split: &'static str },
    #[error("no basis for class {0}")]
    MissingBasis(u32),
    #[error("references for class {class}: {detail}")]
    BadReferences { class: u32, detail: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    pub method: Method,
    /// Components per class; `None` means one per declared subgroup.
    pub n: Option<usize>,
    pub normalize: bool,
    pub standardize: bool,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self { method: Method::Pls, n: None, normalize: true, standardize: true }
    }
}

/// Applies the embedding normalisation a basis was (or will be) fitted with.
pub fn prepare(data: &Dataset, normalize: bool) -> Cow<'_, Dataset> {
    if normalize {
        Cow::Owned(data.with_normalized_embeddings())
    } else {
        Cow::Borrowed(data)
    }
}

fn rows_of(data: &Dataset, class: u32, split: Split) -> Result<Vec<usize>, PipelineError> {
    let rows = data.indices(Some(class), Some(split));
    if rows.is_empty() {
        return Err(PipelineError::EmptySplit { class, split: split.name() });
    }
    Ok(rows)
}

/// Fits one class on its training rows. `data` must already be prepared.
pub fn fit_class(data: &Dataset, class: u32, opts: &DecomposeOptions) -> Result<SubgroupBasis, PipelineError> {
    let rows = rows_of(data, class, Split::Train)?;
    let x = data.embeddings().select_rows(&rows);
    let n = opts.n.unwrap_or(data.num_subgroups() as usize);
    let mut basis = match opts.method {
        Method::Pls => {
            let sup = data.supervision().ok_or(PipelineError::MissingSupervision)?;
            let mut z = sup.select_rows(&rows);
            if opts.standardize {
                standardize_columns(&mut z);
            }
            fit_pls(&x, &z, n, &FitConfig::default())?
        }
        Method::Pca => fit_pca(&x, n)?,
    };
    basis.class_label = class;
    Ok(basis)
}

/// Bias report for one class from its validation rows.
pub fn identify_class(
    data: &Dataset,
    basis: &SubgroupBasis,
    k: Option<usize>,
) -> Result<BiasReport, PipelineError> {
    let class = basis.class_label;
    let rows = rows_of(data, class, Split::Val)?;
    let scores = score_rows(basis, &data.embeddings().select_rows(&rows))?;
    let labels: Vec<usize> = scores.iter_rows().map(crate::subgroup::argmax).collect();
    let correct: Vec<Option<bool>> = rows.iter().map(|&r| data.meta()[r].correct).collect();
    Ok(identify_biased(class, &labels, &correct, basis.components.len(), k)?)
}

/// The same report computed from ground-truth subgroups: what a perfect
/// discovery would flag.
pub fn reference_bias(data: &Dataset, class: u32, k: Option<usize>) -> Result<BiasReport, PipelineError> {
    let rows = rows_of(data, class, Split::Val)?;
    let mut labels = Vec::with_capacity(rows.len());
    let mut correct = Vec::with_capacity(rows.len());
    for &r in &rows {
        let m = data.meta()[r];
        let g = m.gt_subgroup.ok_or_else(|| {
            PipelineError::Invalid(format!("row {r} has no ground-truth subgroup"))
        })?;
        labels.push(g as usize);
        correct.push(m.correct);
    }
    Ok(identify_biased(class, &labels, &correct, data.num_subgroups() as usize, k)?)
}

/// Reference subgroup vectors for `class`, ordered by subgroup id, plus the
/// class-prompt row when present.
pub fn class_refs(refs: &Dataset, class: u32) -> Result<(Option<Vec<f64>>, Vec<Vec<f64>>), PipelineError> {
    let mut prompt = None;
    let mut subs: Vec<(u32, Vec<f64>)> = Vec::new();
    for (i, m) in refs.meta().iter().enumerate() {
        if m.class_label != class {
            continue;
        }
        let row = refs.embeddings().row(i).to_vec();
        match m.gt_subgroup {
            None if prompt.is_none() => prompt = Some(row),
            None => {
                return Err(PipelineError::BadReferences { class, detail: "more than one class-prompt row".into() })
            }
            Some(g) => subs.push((g, row)),
        }
    }
    subs.sort_by_key(|s| s.0);
    if subs.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(PipelineError::BadReferences { class, detail: "duplicate subgroup rows".into() });
    }
    Ok((prompt, subs.into_iter().map(|s| s.1).collect()))
}

pub fn match_class(basis: &SubgroupBasis, refs: &Dataset, brute_force: bool) -> Result<MatchResult, PipelineError> {
    let (_, reference) = class_refs(refs, basis.class_label)?;
    let discovered: Vec<Vec<f64>> = basis.components.iter().map(|c| c.w.clone()).collect();
    Ok(match_directions(&discovered, &reference, brute_force)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDiscovery {
    pub class: u32,
    #[serde(rename = "match")]
    pub matching: MatchResult,
    pub mean_similarity: f64,
    pub discovered_biased: Vec<usize>,
    pub reference_biased: Vec<usize>,
    pub detection_success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryEval {
    pub classes: Vec<ClassDiscovery>,
    /// Average over classes of the per-class mean matched |cos|.
    pub mean_similarity: f64,
    /// Average over classes of the per-class matched total.
    pub mean_total: f64,
    pub detection_success: f64,
}

/// Matching and detection for one class given its basis and bias report.
pub fn discovery_for_class(
    data: &Dataset,
    refs: &Dataset,
    basis: &SubgroupBasis,
    report: &BiasReport,
    brute_force: bool,
) -> Result<ClassDiscovery, PipelineError> {
    let matching = match_class(basis, refs, brute_force)?;
    let reference = reference_bias(data, basis.class_label, Some(report.k))?;
    let detection = detection_success(&matching, &report.biased, &reference.biased)?;
    Ok(ClassDiscovery {
        class: basis.class_label,
        mean_similarity: matching.mean(),
        matching,
        discovered_biased: report.biased.clone(),
        reference_biased: reference.biased,
        detection_success: detection,
    })
}

pub fn summarize_discovery(classes: Vec<ClassDiscovery>) -> DiscoveryEval {
    let c = classes.len().max(1) as f64;
    DiscoveryEval {
        mean_similarity: classes.iter().map(|x| x.mean_similarity).sum::<f64>() / c,
        mean_total: classes.iter().map(|x| x.matching.total).sum::<f64>() / c,
        detection_success: classes.iter().map(|x| x.detection_success).sum::<f64>() / c,
        classes,
    }
}

/// Fit, identify and match every class sequentially. `data` must be prepared.
pub fn evaluate_discovery(
    data: &Dataset,
    refs: &Dataset,
    opts: &DecomposeOptions,
    k: Option<usize>,
) -> Result<DiscoveryEval, PipelineError> {
    let mut out = Vec::new();
    for class in 0..data.num_classes() {
        let basis = fit_class(data, class, opts)?;
        let report = identify_class(data, &basis, k)?;
        out.push(discovery_for_class(data, refs, &basis, &report, false)?);
    }
    Ok(summarize_discovery(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    /// Row in the dataset.
    pub index: usize,
    pub class: u32,
    pub hard: usize,
    pub soft: Vec<f64>,
}

/// Pseudo-subgroup labels for the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub num_classes: u32,
    pub num_subgroups: usize,
    pub tau: f64,
    pub rows: Vec<LabelRow>,
}

/// Labels for the training rows of one class.
pub fn label_class(data: &Dataset, basis: &SubgroupBasis, tau: f64) -> Result<Vec<LabelRow>, PipelineError> {
    let rows = rows_of(data, basis.class_label, Split::Train)?;
    let assignments = assign(basis, &data.embeddings().select_rows(&rows), tau)?;
    Ok(rows
        .into_iter()
        .zip(assignments)
        .map(|(index, a)| LabelRow { index, class: basis.class_label, hard: a.hard_label, soft: a.soft_label })
        .collect())
}

pub fn collect_labels(num_classes: u32, n: usize, tau: f64, mut rows: Vec<LabelRow>) -> PseudoLabels {
    rows.sort_by_key(|r| r.index);
    PseudoLabels { num_classes, num_subgroups: n, tau, rows }
}

/// Group memberships for the training rows in `rows` order. Group DRO uses
/// class × pseudo-subgroup cells (class-major); DI uses one head per
/// pseudo-subgroup. Hard methods use one-hot rows of the hard label.
pub fn group_matrix(labels: &PseudoLabels, rows: &[usize], method: TrainMethod) -> Result<Matrix, PipelineError> {
    let n = labels.num_subgroups;
    let by_class = matches!(method, TrainMethod::Gdro | TrainMethod::SoftGdro);
    let soft = matches!(method, TrainMethod::SoftGdro | TrainMethod::SoftDi);
    let cols = if by_class { labels.num_classes as usize * n } else { n };
    let mut m = Matrix::zeros(rows.len(), cols);
    let mut at = 0;
    for (i, &r) in rows.iter().enumerate() {
        while at < labels.rows.len() && labels.rows[at].index < r {
            at += 1;
        }
        let lr = labels
            .rows
            .get(at)
            .filter(|l| l.index == r)
            .ok_or_else(|| PipelineError::Invalid(format!("no pseudo-label for training row {r}")))?;
        if lr.soft.len() != n || lr.hard >= n {
            return Err(PipelineError::Invalid(format!("pseudo-label for row {r} has the wrong width")));
        }
        let base = if by_class { lr.class as usize * n } else { 0 };
        if soft {
            for (j, v) in lr.soft.iter().enumerate() {
                m[(i, base + j)] = *v;
            }
        } else {
            m[(i, base + lr.hard)] = 1.0;
        }
    }
    Ok(m)
}

/// Per-class filtered pool rows (dataset indices), class by class.
pub fn filter_pool_rows(
    data: &Dataset,
    basis: &SubgroupBasis,
    biased: &[usize],
    fraction: f64,
) -> Result<Vec<usize>, PipelineError> {
    let rows = data.indices(Some(basis.class_label), Some(Split::Pool));
    let picked = filter_pool(basis, &data.embeddings().select_rows(&rows), biased, fraction)?;
    Ok(picked.into_iter().map(|i| rows[i]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    pub method: TrainMethod,
    pub augmented_rows: usize,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Trains on the training split (plus `augment` rows, ERM only) of a
/// prepared dataset and evaluates on its test split.
pub fn run_mitigation(
    data: &Dataset,
    labels: Option<&PseudoLabels>,
    augment: &[usize],
    method: TrainMethod,
    cfg: &TrainConfig,
) -> Result<(Trained, MitigationReport), PipelineError> {
    let train_rows = data.indices(None, Some(Split::Train));
    let groups = if method.needs_groups() {
        if !augment.is_empty() {
            return Err(PipelineError::Invalid("pool augmentation is only supported with erm".into()));
        }
        let labels = labels.ok_or_else(|| {
            PipelineError::Invalid(format!("method {} needs pseudo-labels", method.name()))
        })?;
        Some(group_matrix(labels, &train_rows, method)?)
    } else {
        None
    };
    let mut rows = train_rows;
    rows.extend_from_slice(augment);
    let x = data.embeddings().select_rows(&rows);
    let y: Vec<usize> = rows.iter().map(|&r| data.meta()[r].class_label as usize).collect();
    let trained = train(&x, &y, data.num_classes() as usize, groups.as_ref(), method, cfg)?;
    let test = data.indices(None, Some(Split::Test));
    if test.is_empty() {
        return Err(PipelineError::Invalid("dataset has no test split".into()));
    }
    let xt = data.embeddings().select_rows(&test);
    let yt: Vec<usize> = test.iter().map(|&r| data.meta()[r].class_label as usize).collect();
    let gt: Vec<Option<u32>> = test.iter().map(|&r| data.meta()[r].gt_subgroup).collect();
    let metrics = evaluate(&trained.model, &xt, &yt, &gt, data.num_subgroups());
    let report = MitigationReport {
        method,
        augmented_rows: augment.len(),
        final_loss: trained.final_loss,
        final_grad_norm: trained.final_grad_norm,
        metrics,
    };
    Ok((trained, report))
}

/// Pseudo-labels, bias reports and filtered pool rows for every class.
pub struct Discovery {
    pub bases: Vec<SubgroupBasis>,
    pub reports: Vec<BiasReport>,
    pub labels: PseudoLabels,
}

pub fn discover(data: &Dataset, opts: &DecomposeOptions, k: Option<usize>, tau: f64) -> Result<Discovery, PipelineError> {
    let mut bases = Vec::new();
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for class in 0..data.num_classes() {
        let basis = fit_class(data, class, opts)?;
        reports.push(identify_class(data, &basis, k)?);
        rows.extend(label_class(data, &basis, tau)?);
        bases.push(basis);
    }
    let n = bases.first().map_or(0, |b| b.components.len());
    Ok(Discovery { labels: collect_labels(data.num_classes(), n, tau, rows), bases, reports })
}
