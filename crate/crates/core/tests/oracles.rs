use subscope_core::decompose::{fit_pca, fit_pls, fit_pls_trace, FitConfig};
use subscope_core::interchange::Split;
use subscope_core::linalg::{cosine, dot, Matrix};
use subscope_core::mitigate::{
    hard_gdro_step, soft_gdro_step, train, GroupLossEstimate, GroupWeights, TrainConfig, TrainMethod,
};
use subscope_core::rng::XorShift64Star;
use subscope_core::subgroup::{identify_biased, score_rows};
use subscope_core::synth::{generate, SynthSpec};

fn gaussian(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = XorShift64Star::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

#[test]
fn self_supervision_gives_the_top_principal_direction() {
    let x = gaussian(11, 5, 3);
    let pls = fit_pls(&x, &x, 1, &FitConfig::default()).unwrap();
    let pca = fit_pca(&x, 1).unwrap();
    assert!(cosine(&pls.components[0].w, &pca.components[0].w).abs() > 1.0 - 1e-9);
}

#[test]
fn pca_recovers_anisotropic_axes() {
    let mut x = gaussian(3, 400, 3);
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        row[0] *= 3.0;
        row[2] *= 0.1;
    }
    let basis = fit_pca(&x, 3).unwrap();
    for (i, c) in basis.components.iter().enumerate() {
        assert!(c.w[i].abs() > 0.99, "component {i}: {:?}", c.w);
    }
    let shares: Vec<f64> = basis.components.iter().map(|c| c.x_var_explained).collect();
    assert!(shares[0] > 0.85 && shares[2] < 0.01, "{shares:?}");
    assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn scoring_a_row_replays_the_training_deflation() {
    let x = gaussian(5, 40, 6);
    let z = gaussian(6, 40, 9);
    let trace = fit_pls_trace(&x, &z, 3, &FitConfig::default()).unwrap();
    let scores = score_rows(&trace.basis, &x).unwrap();
    for r in 0..x.rows() {
        for i in 0..3 {
            assert!((scores[(r, i)] - trace.scores[(r, i)]).abs() < 1e-10);
        }
    }
    // Matrix form: Xᵢ₊₁ = Xᵢ − uᵢαᵢᵀ, so uᵢ = Xᵢwᵢ.
    let mut xi = trace.x0.clone();
    for (i, c) in trace.basis.components.iter().enumerate() {
        let u = xi.mul_vec(&c.w);
        for r in 0..x.rows() {
            assert!((u[r] - trace.scores[(r, i)]).abs() < 1e-10);
        }
        xi.sub_outer(&u, &c.alpha);
    }
}

#[test]
fn identify_always_flags_a_planted_low_accuracy_subgroup() {
    for seed in 0..10 {
        let mut rng = XorShift64Star::new(seed);
        let g = 5;
        let planted = rng.below(g as u64) as usize;
        let mut labels = Vec::new();
        let mut correct = Vec::new();
        for s in 0..g {
            let acc = if s == planted { 0.2 } else { 0.5 + 0.5 * rng.uniform() };
            for i in 0..50 {
                labels.push(s);
                correct.push(Some((i as f64) < acc * 50.0));
            }
        }
        let report = identify_biased(0, &labels, &correct, g, None).unwrap();
        assert!(report.biased.contains(&planted), "seed {seed}: {report:?}");
        assert_eq!(report.biased.len(), 2);
    }
}

#[test]
fn synthetic_subgroups_are_separable_by_nearest_center() {
    let s = generate(&SynthSpec::planted(0)).unwrap();
    let data = &s.dataset;
    let g = data.num_subgroups() as usize;
    let l = data.num_classes() as usize;
    let d = data.dim();
    let mut centers = vec![vec![0.0; d]; l * g];
    let mut counts = vec![0usize; l * g];
    for r in data.indices(None, Some(Split::Train)) {
        let m = data.meta()[r];
        let cell = m.class_label as usize * g + m.gt_subgroup.unwrap() as usize;
        counts[cell] += 1;
        for (c, v) in centers[cell].iter_mut().zip(data.embeddings().row(r)) {
            *c += v;
        }
    }
    for (c, n) in centers.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let test = data.indices(None, Some(Split::Test));
    let mut hits = 0;
    for &r in &test {
        let x = data.embeddings().row(r);
        let dist = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let best = (0..l * g).min_by(|&a, &b| dist(&centers[a]).total_cmp(&dist(&centers[b]))).unwrap();
        let m = data.meta()[r];
        hits += (best == m.class_label as usize * g + m.gt_subgroup.unwrap() as usize) as usize;
    }
    let acc = hits as f64 / test.len() as f64;
    assert!(acc > 0.95, "nearest-centre accuracy {acc}");
}

#[test]
fn biased_subgroups_are_classified_worse() {
    for seed in 0..10 {
        let spec = SynthSpec::planted(seed);
        let biased = spec.biased_subgroups();
        let s = generate(&spec).unwrap();
        let (mut hit, mut count) = ([0usize; 2], [0usize; 2]);
        for r in s.dataset.indices(None, Some(Split::Val)) {
            let m = s.dataset.meta()[r];
            let b = biased.contains(&(m.gt_subgroup.unwrap() as usize)) as usize;
            count[b] += 1;
            hit[b] += m.correct.unwrap() as usize;
        }
        let acc = |i: usize| hit[i] as f64 / count[i] as f64;
        assert!(acc(1) + 0.1 < acc(0), "seed {seed}: biased {} vs others {}", acc(1), acc(0));
    }
}

#[test]
fn group_dro_with_a_single_group_is_erm() {
    let x = gaussian(21, 30, 4);
    let y: Vec<usize> = (0..30).map(|i| (x[(i, 0)] + 0.3 * x[(i, 1)] > 0.0) as usize).collect();
    let ones = Matrix::from_vec(30, 1, vec![1.0; 30]).unwrap();
    let cfg = TrainConfig { epochs: 50, ..Default::default() };
    let erm = train(&x, &y, 2, None, TrainMethod::Erm, &cfg).unwrap();
    for method in [TrainMethod::Gdro, TrainMethod::SoftGdro] {
        let dro = train(&x, &y, 2, Some(&ones), method, &cfg).unwrap();
        for (a, b) in erm.model.params().iter().zip(dro.model.params()) {
            assert!((a - b).abs() < 1e-12, "{}", method.name());
        }
    }
}

#[test]
fn one_hot_batch_matches_hard_group_dro() {
    let mut rng = XorShift64Star::new(17);
    let (n, k) = (64, 6);
    let ids: Vec<usize> = (0..n).map(|_| rng.below(k as u64) as usize).collect();
    let mut g = Matrix::zeros(n, k);
    for (i, &id) in ids.iter().enumerate() {
        g[(i, id)] = 1.0;
    }
    let mut soft = GroupWeights::uniform(k, 2.0);
    let mut hard = soft.clone();
    for _ in 0..20 {
        let losses: Vec<f64> = (0..n).map(|_| 4.0 * rng.uniform()).collect();
        let a = soft_gdro_step(&mut soft, &losses, &g, GroupLossEstimate::Conditional).unwrap();
        let b = hard_gdro_step(&mut hard, &losses, &ids).unwrap();
        assert!((a.robust_loss - b.robust_loss).abs() < 1e-12);
        for (x, y) in a.sample_weights.iter().zip(&b.sample_weights) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((dot(&soft.q, &soft.q) - dot(&hard.q, &hard.q)).abs() < 1e-12);
    }
}
