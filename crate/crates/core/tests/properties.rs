use proptest::prelude::*;

use subscope_core::decompose::{fit_pls, fit_pls_trace, FitConfig};
use subscope_core::evalmatch::{match_directions, match_similarity, similarity};
use subscope_core::interchange::{decode_dataset, encode_dataset, Dataset, SampleMeta, Split};
use subscope_core::interpret::retrieve;
use subscope_core::linalg::{dot, norm, Matrix};
use subscope_core::mitigate::{filter_pool, soft_gdro_step, GroupLossEstimate, GroupWeights, LinearHeads};
use subscope_core::rng::XorShift64Star;
use subscope_core::subgroup::{argmax, assign, identify_biased, softmax, SubgroupAssignment};

fn gaussian(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut rng = XorShift64Star::new(seed);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn vectors(seed: u64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let m = gaussian(seed, count, dim);
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

/// (seed, N, d, M) with room for at least one component.
fn shapes() -> impl Strategy<Value = (u64, usize, usize, usize)> {
    (any::<u64>(), 4usize..=32, 1usize..=8, 1usize..=8)
}

fn dataset(seed: u64, n: usize, d: usize, with_sup: bool, with_cap: bool) -> Dataset {
    let mut rng = XorShift64Star::new(seed);
    let emb = gaussian(seed ^ 0x5eed, n, d);
    let sup = with_sup.then(|| gaussian(seed ^ 0xbeef, n, 6));
    let meta = (0..n)
        .map(|_| SampleMeta {
            class_label: rng.below(3) as u32,
            gt_subgroup: rng.bernoulli(0.7).then(|| rng.below(4) as u32),
            correct: match rng.below(3) {
                0 => None,
                1 => Some(false),
                _ => Some(true),
            },
            split: Split::from_code(rng.below(4) as u8).unwrap(),
        })
        .collect();
    let captions = with_cap.then(|| (0..n).map(|i| format!("row {i} ✓")).collect());
    Dataset::new(emb, sup, meta, 3, 4, captions).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn container_round_trips(seed in any::<u64>(), n in 0usize..40, d in 1usize..10, sup: bool, cap: bool) {
        let data = dataset(seed, n, d, sup, cap);
        let bytes = encode_dataset(&data);
        prop_assert_eq!(decode_dataset(&bytes).unwrap(), data.clone());
        prop_assert_eq!(encode_dataset(&decode_dataset(&bytes).unwrap()), bytes);
    }

    #[test]
    fn container_rejects_every_truncation(seed in any::<u64>(), cut in 0.0f64..1.0) {
        let bytes = encode_dataset(&dataset(seed, 5, 3, true, true));
        let at = (cut * bytes.len() as f64) as usize;
        prop_assert!(decode_dataset(&bytes[..at]).is_err());
    }

    #[test]
    fn pls_units_and_residual_orthogonality((seed, n, d, m) in shapes()) {
        let comps = d.min(m).min(n - 1);
        let x = gaussian(seed, n, d);
        let z = gaussian(seed.wrapping_add(1), n, m);
        let trace = fit_pls_trace(&x, &z, comps, &FitConfig::default()).unwrap();
        let scale = trace.x0.frobenius_norm();
        for (i, c) in trace.basis.components.iter().enumerate() {
            prop_assert!((norm(&c.w) - 1.0).abs() < 1e-9);
            prop_assert!((norm(&c.h) - 1.0).abs() < 1e-9);
            prop_assert!(c.covariance >= 0.0);
            let r = trace.deflated[i].t_mul_vec(&trace.scores.col(i));
            prop_assert!(norm(&r) <= 1e-8 * scale);
            // Scores of different components are mutually orthogonal too.
            for j in 0..i {
                prop_assert!(dot(&trace.scores.col(i), &trace.scores.col(j)).abs() <= 1e-8 * scale * scale);
            }
        }
    }

    #[test]
    fn pls_deflation_reconstructs_input((seed, n, d, m) in shapes()) {
        let comps = d.min(m).min(n - 1);
        let x = gaussian(seed, n, d);
        let z = gaussian(seed.wrapping_add(7), n, m);
        let trace = fit_pls_trace(&x, &z, comps, &FitConfig::default()).unwrap();
        let mut rebuilt = trace.deflated.last().unwrap().clone();
        for (i, c) in trace.basis.components.iter().enumerate() {
            let u = trace.scores.col(i);
            let neg: Vec<f64> = u.iter().map(|v| -v).collect();
            rebuilt.sub_outer(&neg, &c.alpha);
        }
        for (a, b) in rebuilt.as_slice().iter().zip(trace.x0.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + trace.x0.frobenius_norm()));
        }
    }

    #[test]
    fn pls_first_direction_is_top_singular_vector((seed, n, d, m) in shapes()) {
        let x = gaussian(seed, n, d);
        let z = gaussian(seed.wrapping_add(3), n, m);
        let basis = fit_pls(&x, &z, 1, &FitConfig::default()).unwrap();
        let mut xc = x.clone();
        xc.center_with(&x.col_means());
        let mut zc = z.clone();
        zc.center_with(&z.col_means());
        let c = xc.t_matmul(&zc).unwrap();
        let svd = nalgebra::DMatrix::from_row_slice(d, m, c.as_slice()).svd(true, false);
        let s = &svd.singular_values;
        let top = s.imax();
        let second = s.iter().enumerate().filter(|&(i, _)| i != top).map(|(_, v)| *v).fold(0.0, f64::max);
        prop_assume!(s[top] - second > 1e-6 * s[top]);
        let u = svd.u.unwrap();
        let oracle: Vec<f64> = u.column(top).iter().copied().collect();
        prop_assert!(dot(&basis.components[0].w, &oracle).abs() >= 1.0 - 1e-8);
    }

    #[test]
    fn flipping_a_supervision_column_keeps_the_directions((seed, n, d, m) in shapes(), col in 0usize..8) {
        let col = col % m;
        let x = gaussian(seed, n, d);
        let z = gaussian(seed.wrapping_add(5), n, m);
        let mut flipped = z.clone();
        for r in 0..n {
            flipped[(r, col)] = -flipped[(r, col)];
        }
        let a = fit_pls(&x, &z, 1, &FitConfig::default()).unwrap();
        let b = fit_pls(&x, &flipped, 1, &FitConfig::default()).unwrap();
        prop_assert!(dot(&a.components[0].w, &b.components[0].w).abs() >= 1.0 - 1e-8);
        prop_assert!((a.components[0].covariance - b.components[0].covariance).abs() <= 1e-9);
    }

    #[test]
    fn argmax_ignores_positive_scaling(u in prop::collection::vec(-10.0f64..10.0, 1..10), c in 1e-3f64..1e3) {
        let scaled: Vec<f64> = u.iter().map(|v| v * c).collect();
        prop_assert_eq!(argmax(&u), argmax(&scaled));
    }

    #[test]
    fn soft_label_agrees_with_hard_label(u in prop::collection::vec(-10.0f64..10.0, 1..10), tau in 0.05f64..5.0) {
        let a = SubgroupAssignment::from_scores(u.clone(), tau, 1.0);
        prop_assert_eq!(a.hard_label, argmax(&u));
        prop_assert!((a.soft_label.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(a.soft_label.iter().all(|p| *p >= 0.0));
        let top = a.soft_label[a.hard_label];
        prop_assert!(a.soft_label.iter().all(|p| *p <= top));
    }

    #[test]
    fn hard_labels_partition_each_class(seed in any::<u64>(), n in 8usize..60, g in 2usize..6) {
        let x = gaussian(seed, n, 6);
        let z = gaussian(seed ^ 1, n, 9);
        let basis = fit_pls(&x, &z, g.min(5), &FitConfig::default()).unwrap();
        let labels: Vec<usize> = assign(&basis, &x, 1.0).unwrap().iter().map(|a| a.hard_label).collect();
        let mut rng = XorShift64Star::new(seed);
        let correct: Vec<Option<bool>> = (0..n).map(|_| Some(rng.bernoulli(0.6))).collect();
        let report = identify_biased(0, &labels, &correct, g.min(5), None).unwrap();
        prop_assert_eq!(report.counts.iter().sum::<usize>(), n);
        prop_assert!(report.biased.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(report.biased.iter().all(|b| !report.empty.contains(b)));
    }

    #[test]
    fn matching_ignores_reference_order(seed in any::<u64>(), g in 1usize..7, rot in 0usize..7) {
        let a = vectors(seed, g, 5);
        let b = vectors(seed ^ 9, g, 5);
        let mut shuffled = b.clone();
        shuffled.rotate_left(rot % g);
        let m1 = match_directions(&a, &b, false).unwrap();
        let m2 = match_directions(&a, &shuffled, false).unwrap();
        prop_assert!((m1.total - m2.total).abs() < 1e-12);
        prop_assert!(m1.total >= 0.0 && m1.total <= g as f64 + 1e-12);
        let mut seen = m1.sigma.clone();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..g).collect::<Vec<_>>());
        prop_assert!((m1.total - m1.per_pair.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn hungarian_is_optimal(seed in any::<u64>(), g in 1usize..7) {
        let sim = similarity(&vectors(seed, g, 4), &vectors(seed ^ 3, g, 4)).unwrap();
        let fast = match_similarity(&sim, false);
        let slow = match_similarity(&sim, true);
        prop_assert!((fast.total - slow.total).abs() < 1e-12);
    }

    #[test]
    fn retrieval_is_sorted_and_scale_free(seed in any::<u64>(), top in 1usize..20, c in 1e-3f64..1e3) {
        let corpus = dataset(seed, 20, 4, false, true);
        let q: Vec<f64> = vectors(seed ^ 2, 1, 4).remove(0);
        let hits = retrieve(&q, &corpus, top).unwrap();
        prop_assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        let scaled: Vec<f64> = q.iter().map(|v| v * c).collect();
        let again = retrieve(&scaled, &corpus, top).unwrap();
        let idx = |h: &[subscope_core::interpret::RetrievalHit]| h.iter().map(|x| x.corpus_index).collect::<Vec<_>>();
        prop_assert_eq!(idx(&hits), idx(&again));
    }

    #[test]
    fn mixed_heads_output_a_distribution(seed in any::<u64>(), heads in 1usize..4, d in 1usize..6) {
        let mut rng = XorShift64Star::new(seed);
        let mut model = LinearHeads::zeros(heads, d, 3);
        let p: Vec<f64> = model.params().iter().map(|_| 3.0 * rng.normal()).collect();
        model.set_params(&p);
        let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let g = softmax(&(0..heads).map(|_| rng.normal()).collect::<Vec<_>>(), 1.0);
        let out = model.soft_di_forward(&x, Some(&g)).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn soft_gdro_stays_on_the_simplex(seed in any::<u64>(), n in 1usize..30, k in 1usize..6, eta in 0.01f64..5.0, joint: bool) {
        let mut rng = XorShift64Star::new(seed);
        let mut g = Matrix::zeros(n, k);
        for i in 0..n {
            let row = softmax(&(0..k).map(|_| 2.0 * rng.normal()).collect::<Vec<_>>(), 1.0);
            for j in 0..k {
                g[(i, j)] = row[j];
            }
        }
        let mut q = GroupWeights::uniform(k, eta);
        let estimate = if joint { GroupLossEstimate::Joint } else { GroupLossEstimate::Conditional };
        for _ in 0..5 {
            let losses: Vec<f64> = (0..n).map(|_| 10.0 * rng.uniform()).collect();
            let out = soft_gdro_step(&mut q, &losses, &g, estimate).unwrap();
            prop_assert!((q.q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(q.q.iter().all(|v| *v >= 0.0));
            let direct: f64 = out.sample_weights.iter().zip(&losses).map(|(a, b)| a * b).sum();
            prop_assert!((direct - out.robust_loss).abs() < 1e-9 * (1.0 + out.robust_loss.abs()));
        }
    }

    #[test]
    fn filter_selects_distinct_in_range_rows(seed in any::<u64>(), pool in 1usize..50, frac in 0.01f64..1.0, mask in 1u8..16) {
        let x = gaussian(seed, 30, 6);
        let z = gaussian(seed ^ 4, 30, 8);
        let basis = fit_pls(&x, &z, 4, &FitConfig::default()).unwrap();
        let biased: Vec<usize> = (0..4).filter(|b| mask & (1 << b) != 0).collect();
        let rows = gaussian(seed ^ 8, pool, 6);
        let picked = filter_pool(&basis, &rows, &biased, frac).unwrap();
        let take = (frac * pool as f64).ceil() as usize;
        prop_assert!(picked.len() >= take && picked.len() <= (take * biased.len()).min(pool));
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), picked.len());
        prop_assert!(picked.iter().all(|&i| i < pool));
    }
}
