//! Synthetic datasets with planted subgroups and simulated training dynamics.
//!
//! Geometry: a random orthonormal frame supplies one axis `a_l` per class,
//! one offset `e_{l,g}` per subgroup and a few shared nuisance directions.
//! Class `l` sits at `a_l·s` and subgroup `g` at that plus `e_{l,g}·s`, so
//! every centre is `s` from its parent and siblings are `s·√2` apart (at
//! exactly `s`, four noise-1 clusters overlap too much for a nearest-centre
//! rule to reach 95% at the reference separation of 4). Samples add
//! isotropic noise whose component along each nuisance direction is
//! stretched by `nuisance_scale`: high-variance structure that carries no
//! information about subgroups or errors.
//!
//! The first `⌊G/2⌋` subgroups of every class are biased. They are pulled
//! `0.7·bias_strength` of the way towards the next class and their samples
//! end up correct with probability `1 − 0.7·bias_strength − 0.1` (others 0.9).
//! Their training dynamics differ from the rest:
//!
//! * even-numbered biased subgroups are learned at once; samples that end up
//!   wrong are forgotten after epoch `⌈t/2⌉`;
//! * odd-numbered biased subgroups are learned only in the last epoch;
//! * other subgroups are learned at epoch `2 + (g − ⌊G/2⌋)` (plus 0 or 1).
//!
//! While correct the loss decays geometrically towards 0.1 (staying below
//! `ln 2`); while wrong it sits in `[1, 1.5)`. The logit column holds the
//! true-class margin `−ln(eˡᵒˢˢ − 1)` that reproduces the loss in a binary
//! softmax.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interchange::{Dataset, SampleMeta, Split};
use crate::linalg::{dot, norm, Matrix};
use crate::rng::XorShift64Star;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
}

fn default_nuisance_dims() -> usize {
    2
}

fn default_nuisance_scale() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(rename = "L")]
    pub num_classes: usize,
    #[serde(rename = "G")]
    pub num_subgroups: usize,
    pub d: usize,
    /// Per subgroup and per split (train, val, test and pool alike).
    pub samples_per_subgroup: usize,
    /// Distance of each subgroup centre from its class centre (and of each
    /// class centre from the origin).
    pub separation: f64,
    pub noise: f64,
    pub bias_strength: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_nuisance_dims")]
    pub nuisance_dims: usize,
    #[serde(default = "default_nuisance_scale")]
    pub nuisance_scale: f64,
}

impl SynthSpec {
    /// The reference configuration used throughout the tests.
    pub fn planted(seed: u64) -> Self {
        Self {
            num_classes: 2,
            num_subgroups: 4,
            d: 32,
            samples_per_subgroup: 300,
            separation: 4.0,
            noise: 1.0,
            bias_strength: 0.8,
            epochs: 5,
            seed,
            nuisance_dims: default_nuisance_dims(),
            nuisance_scale: default_nuisance_scale(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.num_classes == 0 || self.num_subgroups == 0 || self.samples_per_subgroup == 0 || self.epochs == 0 {
            return bad("L, G, samples_per_subgroup and epochs must be positive".into());
        }
        let need = self.num_classes * (1 + self.num_subgroups) + self.nuisance_dims;
        if need > self.d {
            return bad(format!("d = {} is too small: L + L·G + nuisance_dims = {need}", self.d));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return bad(format!("separation must be positive, got {}", self.separation));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be positive, got {}", self.noise));
        }
        if !(0.0..=1.0).contains(&self.bias_strength) {
            return bad(format!("bias_strength must be in [0, 1], got {}", self.bias_strength));
        }
        if !(self.nuisance_scale > 0.0 && self.nuisance_scale.is_finite()) {
            return bad(format!("nuisance_scale must be positive, got {}", self.nuisance_scale));
        }
        Ok(())
    }

    pub fn biased_subgroups(&self) -> Vec<usize> {
        (0..self.num_subgroups / 2).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: Dataset,
    /// Per class: one class-prompt row (no subgroup), then one row per
    /// subgroup holding its offset direction.
    pub refs: Dataset,
}

const SPLITS: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Pool];
const LOGIT_CAP: f64 = 0.69;

pub fn generate(spec: &SynthSpec) -> Result<Synthetic, SynthError> {
    spec.validate()?;
    let (l_n, g_n, d, t) = (spec.num_classes, spec.num_subgroups, spec.d, spec.epochs);
    let nb = g_n / 2;
    let mut rng = XorShift64Star::new(spec.seed);
    let frame = orthonormal_frame(&mut rng, l_n * (1 + g_n) + spec.nuisance_dims, d);
    let axis = |l: usize| &frame[l];
    let offset = |l: usize, g: usize| &frame[l_n + l * g_n + g];
    let nuisance = &frame[l_n * (1 + g_n)..];
    let s = spec.separation;
    let class_center = |l: usize| axis(l).iter().map(|v| v * s).collect::<Vec<f64>>();

    let mut centers = vec![vec![Vec::new(); g_n]; l_n];
    for (l, row) in centers.iter_mut().enumerate() {
        let c = class_center(l);
        for (g, mu) in row.iter_mut().enumerate() {
            *mu = c.iter().zip(offset(l, g)).map(|(a, e)| a + s * e).collect();
            if g < nb && l_n > 1 {
                let other = class_center((l + 1) % l_n);
                let pull = 0.7 * spec.bias_strength;
                for ((m, o), a) in mu.iter_mut().zip(&other).zip(&c) {
                    *m += pull * (o - a);
                }
            }
        }
    }

    let total = SPLITS.len() * l_n * g_n * spec.samples_per_subgroup;
    let mut emb = Vec::with_capacity(total * d);
    let mut sup = Vec::with_capacity(total * 3 * t);
    let mut meta = Vec::with_capacity(total);
    let mut captions = Vec::with_capacity(total);
    let mut eps = vec![0.0; d];
    for split in SPLITS {
        for l in 0..l_n {
            for g in 0..g_n {
                let biased = g < nb;
                let p = if biased { 1.0 - 0.7 * spec.bias_strength - 0.1 } else { 0.9 };
                for _ in 0..spec.samples_per_subgroup {
                    eps.iter_mut().for_each(|e| *e = rng.normal());
                    let mut x: Vec<f64> = centers[l][g].iter().zip(&eps).map(|(m, e)| m + spec.noise * e).collect();
                    for n in nuisance {
                        let c = (spec.nuisance_scale - 1.0) * spec.noise * dot(&eps, n);
                        for (xj, nj) in x.iter_mut().zip(n) {
                            *xj += c * nj;
                        }
                    }
                    emb.extend_from_slice(&x);
                    let correct = rng.bernoulli(p);
                    let profile = correctness_profile(&mut rng, t, g, nb, correct);
                    append_dynamics(&mut rng, &profile, &mut sup);
                    meta.push(SampleMeta {
                        class_label: l as u32,
                        gt_subgroup: Some(g as u32),
                        correct: Some(correct),
                        split,
                    });
                    captions.push(format!("class {l} subgroup {g}"));
                }
            }
        }
    }
    let dataset = Dataset::new(
        Matrix::from_vec(total, d, emb).expect("rows of length d"),
        Some(Matrix::from_vec(total, 3 * t, sup).expect("rows of length 3t")),
        meta,
        l_n as u32,
        g_n as u32,
        Some(captions),
    )
    .expect("generated data satisfies the dataset invariants");

    let mut ref_rows = Vec::new();
    let mut ref_meta = Vec::new();
    let mut ref_caps = Vec::new();
    for l in 0..l_n {
        ref_rows.extend_from_slice(axis(l));
        ref_meta.push(SampleMeta { class_label: l as u32, gt_subgroup: None, correct: None, split: Split::Test });
        ref_caps.push(format!("class {l}"));
        for g in 0..g_n {
            ref_rows.extend_from_slice(offset(l, g));
            ref_meta.push(SampleMeta {
                class_label: l as u32,
                gt_subgroup: Some(g as u32),
                correct: None,
                split: Split::Test,
            });
            ref_caps.push(format!("class {l} subgroup {g}"));
        }
    }
    let refs = Dataset::new(
        Matrix::from_vec(ref_meta.len(), d, ref_rows).expect("rows of length d"),
        None,
        ref_meta,
        l_n as u32,
        g_n as u32,
        Some(ref_caps),
    )
    .expect("reference rows satisfy the dataset invariants");
    Ok(Synthetic { dataset, refs })
}

/// Gram–Schmidt (two passes) on Gaussian draws; degenerate draws are redrawn.
fn orthonormal_frame(rng: &mut XorShift64Star, k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(k);
    while frame.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        for _ in 0..2 {
            for b in &frame {
                let c = dot(&v, b);
                for (vj, bj) in v.iter_mut().zip(b) {
                    *vj -= c * bj;
                }
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            frame.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    frame
}

fn correctness_profile(rng: &mut XorShift64Star, t: usize, g: usize, nb: usize, correct: bool) -> Vec<bool> {
    if g < nb {
        if g.is_multiple_of(2) {
            // Learned immediately; the eventual mistakes are forgotten midway.
            let last = if correct { t } else { t.div_ceil(2).min(t - 1) };
            (1..=t).map(|e| e <= last).collect()
        } else {
            (1..=t).map(|e| correct && e == t).collect()
        }
    } else if correct {
        let learned = (2 + (g - nb) + rng.below(2) as usize).min(t);
        (1..=t).map(|e| e >= learned).collect()
    } else {
        vec![false; t]
    }
}

fn append_dynamics(rng: &mut XorShift64Star, profile: &[bool], out: &mut Vec<f64>) {
    let t = profile.len();
    let mut losses = Vec::with_capacity(t);
    let mut since = 0;
    for &ok in profile {
        let loss = if ok {
            since += 1;
            let base = 0.1 + 0.5 * 0.5f64.powi(since - 1);
            (base * (0.1 * rng.normal()).exp()).min(LOGIT_CAP)
        } else {
            since = 0;
            1.0 + 0.5 * rng.uniform()
        };
        losses.push(loss);
    }
    out.extend(profile.iter().map(|&c| if c { 1.0 } else { 0.0 }));
    out.extend(losses.iter().map(|l: &f64| -l.exp_m1().ln()));
    out.extend_from_slice(&losses);
}
