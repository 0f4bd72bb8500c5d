use std::path::Path;

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use subscope_core::decompose::{read_basis_set, write_basis_set, BasisSet, SubgroupBasis};
use subscope_core::evalmatch::MatchResult;
use subscope_core::interchange::{read_dataset, write_dataset, Dataset};
use subscope_core::interpret::{build_query, retrieve as retrieve_hits, RetrievalHit};
use subscope_core::mitigate::TrainConfig;
use subscope_core::pipeline::{
    class_refs, collect_labels, discovery_for_class, filter_pool_rows, fit_class, identify_class, label_class,
    match_class, prepare, run_mitigation, summarize_discovery, ClassDiscovery, DecomposeOptions, PseudoLabels,
};
use subscope_core::subgroup::BiasReport;
use subscope_core::synth::{generate, SynthSpec};

use crate::error::CliError;
use crate::manifest::Run;
use crate::{DecomposeArgs, FilterArgs, IdentifyArgs, MatchArgs, MitigateArgs, ReportArgs, RetrieveArgs, SynthArgs};

pub const SEED_ENV: &str = "SUBSCOPE_SEED";

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|source| CliError::Json { path: path.to_path_buf(), source })?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Json { path: path.to_path_buf(), source })
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    read_dataset(path).map_err(|e| CliError::format(path, e))
}

fn save_data(d: &Dataset, path: &Path) -> Result<(), CliError> {
    write_dataset(d, path).map_err(|e| CliError::format(path, e))
}

fn load_basis(path: &Path) -> Result<BasisSet, CliError> {
    read_basis_set(path).map_err(|e| CliError::basis(path, e))
}

fn basis_for(set: &BasisSet, class: u32) -> Result<&SubgroupBasis, CliError> {
    set.for_class(class).ok_or(CliError::Pipeline(subscope_core::pipeline::PipelineError::MissingBasis(class)))
}

#[derive(Serialize)]
struct SynthConfig<'a> {
    #[serde(flatten)]
    args: &'a SynthArgs,
    resolved_spec: &'a SynthSpec,
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let mut spec: SynthSpec = read_json(&a.spec)?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        spec.seed = seed
            .trim()
            .parse()
            .map_err(|_| CliError::Invalid(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
    }
    let config = SynthConfig { args: a, resolved_spec: &spec };
    let mut run = Run::start("synth", &config);
    run.input(&a.spec);
    let s = generate(&spec)?;
    save_data(&s.dataset, &a.out)?;
    let mut outputs = vec![a.out.as_path()];
    if let Some(r) = &a.refs_out {
        save_data(&s.refs, r)?;
        outputs.push(r);
    }
    run.finish(&outputs)
}

pub fn decompose(a: &DecomposeArgs) -> Result<(), CliError> {
    let mut run = Run::start("decompose", a);
    run.input(&a.data);
    let raw = load_data(&a.data)?;
    let data = prepare(&raw, a.normalize_embeddings);
    let opts = DecomposeOptions { method: a.method, n: a.n, normalize: a.normalize_embeddings, standardize: a.standardize };
    let bases = (0..data.num_classes())
        .into_par_iter()
        .map(|c| fit_class(&data, c, &opts))
        .collect::<Result<Vec<_>, _>>()?;
    let set = BasisSet { normalized: a.normalize_embeddings, num_classes: data.num_classes(), bases };
    write_basis_set(&set, &a.out).map_err(|e| CliError::basis(&a.out, e))?;
    run.finish(&[&a.out])
}

pub fn identify(a: &IdentifyArgs) -> Result<(), CliError> {
    let mut run = Run::start("identify", a);
    run.input(&a.data);
    run.input(&a.basis);
    let set = load_basis(&a.basis)?;
    let raw = load_data(&a.data)?;
    let data = prepare(&raw, set.normalized);
    let per_class = set
        .bases
        .par_iter()
        .map(|b| {
            let report = identify_class(&data, b, a.k.get())?;
            let labels = if a.assign_out.is_some() { label_class(&data, b, a.tau)? } else { Vec::new() };
            Ok((report, labels))
        })
        .collect::<Result<Vec<_>, subscope_core::pipeline::PipelineError>>()?;
    for (r, _) in &per_class {
        for e in &r.empty {
            eprintln!("warning: class {} pseudo-subgroup {e} received no validation samples", r.class);
        }
    }
    let (reports, labels): (Vec<BiasReport>, Vec<_>) = per_class.into_iter().unzip();
    write_json(&a.report, &reports)?;
    let mut outputs = vec![a.report.as_path()];
    if let Some(path) = &a.assign_out {
        let n = set.bases.first().map_or(0, |b| b.components.len());
        let labels = collect_labels(set.num_classes, n, a.tau, labels.into_iter().flatten().collect());
        write_json(path, &labels)?;
        outputs.push(path);
    }
    run.finish(&outputs)
}

#[derive(Serialize)]
struct ClassMatch {
    class: u32,
    #[serde(flatten)]
    result: MatchResult,
    mean: f64,
}

#[derive(Serialize)]
struct MatchOutput {
    classes: Vec<ClassMatch>,
    mean_similarity: f64,
    mean_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    detection: Option<DetectionOutput>,
}

#[derive(Serialize)]
struct DetectionOutput {
    classes: Vec<ClassDiscovery>,
    mean_success: f64,
}

pub fn matching(a: &MatchArgs) -> Result<(), CliError> {
    let mut run = Run::start("match", a);
    run.input(&a.basis);
    run.input(&a.refs);
    let set = load_basis(&a.basis)?;
    let refs = load_data(&a.refs)?;
    let results = set
        .bases
        .par_iter()
        .map(|b| match_class(b, &refs, a.brute_force))
        .collect::<Result<Vec<_>, _>>()?;
    let classes: Vec<ClassMatch> = set
        .bases
        .iter()
        .zip(results)
        .map(|(b, r)| ClassMatch { class: b.class_label, mean: r.mean(), result: r })
        .collect();
    let c = classes.len().max(1) as f64;
    let detection = match (&a.report, &a.data) {
        (Some(report), Some(data)) => {
            run.input(report);
            run.input(data);
            let reports: Vec<BiasReport> = read_json(report)?;
            let data = load_data(data)?;
            let per = set
                .bases
                .par_iter()
                .map(|b| {
                    let r = reports.iter().find(|r| r.class == b.class_label).ok_or_else(|| {
                        CliError::Invalid(format!("bias report has no entry for class {}", b.class_label))
                    })?;
                    Ok(discovery_for_class(&data, &refs, b, r, a.brute_force)?)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let s = summarize_discovery(per);
            Some(DetectionOutput { mean_success: s.detection_success, classes: s.classes })
        }
        _ => None,
    };
    let out = MatchOutput {
        mean_similarity: classes.iter().map(|m| m.mean).sum::<f64>() / c,
        mean_total: classes.iter().map(|m| m.result.total).sum::<f64>() / c,
        classes,
        detection,
    };
    write_json(&a.out, &out)?;
    run.finish(&[&a.out])
}

#[derive(Serialize)]
struct RetrieveOutput<'a> {
    class: u32,
    component: usize,
    query_scale: f64,
    negate: bool,
    class_embedding: &'a str,
    hits: Vec<RetrievalHit>,
}

pub fn retrieve(a: &RetrieveArgs) -> Result<(), CliError> {
    let mut run = Run::start("retrieve", a);
    run.input(&a.basis);
    run.input(&a.corpus);
    let set = load_basis(&a.basis)?;
    let basis = basis_for(&set, a.class)?;
    let comp = basis.components.get(a.component).ok_or_else(|| {
        CliError::Invalid(format!("component {} out of range 0..{}", a.component, basis.components.len()))
    })?;
    let corpus = load_data(&a.corpus)?;
    let prompt = match &a.refs {
        Some(path) => {
            run.input(path);
            class_refs(&load_data(path)?, a.class)?.0
        }
        None => None,
    };
    let (class_vec, source) = match prompt {
        Some(p) => (p, "refs"),
        None => (basis.x_center.clone(), "class_center"),
    };
    let sign = if a.negate { -1.0 } else { 1.0 };
    let dir: Vec<f64> = comp.w.iter().map(|v| sign * v).collect();
    let query = build_query(&class_vec, &dir, a.query_scale)?;
    let hits = retrieve_hits(&query, &corpus, a.top)?;
    let out = RetrieveOutput {
        class: a.class,
        component: a.component,
        query_scale: a.query_scale,
        negate: a.negate,
        class_embedding: source,
        hits,
    };
    write_json(&a.out, &out)?;
    run.finish(&[&a.out])
}

#[derive(Serialize, Deserialize)]
pub struct ClassSelection {
    pub class: u32,
    pub biased: Vec<usize>,
    pub selected: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
pub struct FilterOutput {
    pub fraction: f64,
    pub classes: Vec<ClassSelection>,
    /// Union over classes, ascending dataset row indices.
    pub selected: Vec<usize>,
}

pub fn filter(a: &FilterArgs) -> Result<(), CliError> {
    let mut run = Run::start("filter", a);
    run.input(&a.data);
    run.input(&a.basis);
    run.input(&a.report);
    let set = load_basis(&a.basis)?;
    let raw = load_data(&a.data)?;
    let data = prepare(&raw, set.normalized);
    let reports: Vec<BiasReport> = read_json(&a.report)?;
    let classes = set
        .bases
        .par_iter()
        .map(|b| {
            let r = reports.iter().find(|r| r.class == b.class_label).ok_or_else(|| {
                CliError::Invalid(format!("bias report has no entry for class {}", b.class_label))
            })?;
            let selected = filter_pool_rows(&data, b, &r.biased, a.fraction)?;
            Ok(ClassSelection { class: b.class_label, biased: r.biased.clone(), selected })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut all: Vec<usize> = classes.iter().flat_map(|c| c.selected.iter().copied()).collect();
    all.sort_unstable();
    all.dedup();
    write_json(&a.out, &FilterOutput { fraction: a.fraction, classes, selected: all })?;
    run.finish(&[&a.out])
}

pub fn mitigate(a: &MitigateArgs) -> Result<(), CliError> {
    let mut run = Run::start("mitigate", a);
    run.input(&a.data);
    let raw = load_data(&a.data)?;
    let data = prepare(&raw, a.normalize_embeddings);
    let labels: Option<PseudoLabels> = match &a.labels {
        Some(p) => {
            run.input(p);
            Some(read_json(p)?)
        }
        None => None,
    };
    let augment = match &a.augment {
        Some(p) => {
            run.input(p);
            let f: FilterOutput = read_json(p)?;
            f.selected
        }
        None => Vec::new(),
    };
    let cfg = TrainConfig { lr: a.lr, epochs: a.epochs, eta_q: a.eta_q, estimate: a.estimate, record_trace: false };
    let (trained, report) = run_mitigation(&data, labels.as_ref(), &augment, a.method, &cfg)?;
    if !trained.final_loss.is_finite() {
        return Err(CliError::Invalid("training produced a non-finite loss".into()));
    }
    write_json(&a.out, &report)?;
    run.finish(&[&a.out])
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    let mut run = Run::start("report", a);
    run.input(&a.basis);
    run.input(&a.report);
    let set = load_basis(&a.basis)?;
    let reports: Vec<BiasReport> = read_json(&a.report)?;
    let matching: Option<serde_json::Value> = match &a.match_result {
        Some(p) => {
            run.input(p);
            Some(read_json(p)?)
        }
        None => None,
    };
    let mut metrics = Vec::new();
    for p in &a.metrics {
        run.input(p);
        metrics.push(read_json::<serde_json::Value>(p)?);
    }
    let md = crate::report::render(&set, &reports, matching.as_ref(), &metrics);
    std::fs::write(&a.out, md).map_err(|source| CliError::Io { path: a.out.clone(), source })?;
    run.finish(&[&a.out])
}
