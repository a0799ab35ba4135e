use cade_core::aggregate::aggregate;
use cade_core::candidates::{
    generate_candidates, inject_targets, label_candidates, Candidate, DetectorConfig, Label, MatchRadius,
};
use cade_core::eval::{fisher_exact, froc, kfold_split, roc_auc, FrocOptions, ScoreSource};
use cade_core::phantom::{generate_phantom, PhantomSpec, Range, Target};
use cade_core::sampler::{make_view_params, Mode, SamplerConfig, ViewSet};
use cade_core::volume::{resample_isotropic, window_hu, Geometry, Volume, WindowedVolume};
use proptest::prelude::*;

fn windowed(dims: [usize; 3], values: Vec<f64>) -> WindowedVolume {
    let g = Geometry::new(dims, [1.0; 3], [0.0; 3]).unwrap();
    WindowedVolume::from_normalized(g, values).unwrap()
}

fn target(center: [f64; 3], r: f64) -> Target {
    Target { center_mm: center, radius_mm: r, contrast_hu: 300.0, patient_id: 0 }
}

fn binom(n: u64, k: u64) -> u128 {
    let mut acc: u128 = 1;
    for i in 0..k as u128 {
        acc = acc * (n as u128 - i) / (i + 1);
    }
    acc
}

/// Two-sided Fisher p-value by exact integer enumeration of every table
/// with the observed margins.
fn fisher_oracle(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let weight = |x: u64| binom(r1, x) * binom(r2, c1 - x);
    let observed = weight(a);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let tail: u128 = (lo..=hi).map(weight).filter(|&w| w <= observed).sum();
    tail as f64 / binom(r1 + r2, c1) as f64
}

#[test]
fn fisher_matches_enumeration_for_small_margins() {
    for a in 0..=12u64 {
        for b in 0..=12 - a {
            for c in 0..=12 - a {
                for d in 0..=12 - b.max(c) {
                    if a + b == 0 || c + d == 0 || a + c == 0 || b + d == 0 {
                        assert_eq!(fisher_exact(a, b, c, d), 1.0);
                        continue;
                    }
                    let (got, want) = (fisher_exact(a, b, c, d), fisher_oracle(a, b, c, d));
                    assert!((got - want).abs() < 1e-10, "[[{a},{b}],[{c},{d}]]: {got} vs {want}");
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn window_is_monotone(x in -3000.0f64..3000.0, y in -3000.0f64..3000.0) {
        let g = Geometry::new([2, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let w = window_hu(&Volume::new(g, vec![x.min(y), x.max(y)]).unwrap(), -250.0, 1250.0).unwrap();
        prop_assert!(w.voxels()[0] <= w.voxels()[1]);
    }

    #[test]
    fn resample_at_own_spacing_is_identity(
        values in prop::collection::vec(-1000.0f64..1000.0, 60),
        spacing in 0.3f64..3.0,
    ) {
        let g = Geometry::new([5, 4, 3], [spacing; 3], [1.0, -2.0, 0.5]).unwrap();
        let vol = Volume::new(g, values.clone()).unwrap();
        let out = resample_isotropic(&vol, spacing).unwrap();
        prop_assert_eq!(out.geometry().dims, [5, 4, 3]);
        for (a, b) in out.voxels().iter().zip(&values) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn sampling_is_continuous(
        values in prop::collection::vec(0.0f64..=1.0, 125),
        p in prop::array::uniform3(-1.5f64..5.5),
        dir in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let vol = windowed([5, 5, 5], values);
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt().max(1e-12);
        let q = [0, 1, 2].map(|i| p[i] + 1e-6 * dir[i] / norm);
        prop_assert!((vol.sample(p) - vol.sample(q)).abs() < 1e-3);
    }

    #[test]
    fn raising_the_threshold_never_adds_candidates(
        blobs in prop::collection::vec((prop::array::uniform3(3usize..13), 0.2f64..1.0), 1..5),
        t in 0.05f64..0.9,
        dt in 0.0f64..0.5,
    ) {
        // isolated single-peak blobs on a 16^3 grid; overlapping draws are skipped
        let mut placed: Vec<([usize; 3], f64)> = Vec::new();
        for (c, a) in blobs {
            if placed.iter().all(|(p, _)| (0..3).any(|i| p[i].abs_diff(c[i]) > 5)) {
                placed.push((c, a));
            }
        }
        let n = 16;
        let mut v = vec![0.0; n * n * n];
        for (c, a) in &placed {
            for k in c[2] - 2..=c[2] + 2 {
                for j in c[1] - 2..=c[1] + 2 {
                    for i in c[0] - 2..=c[0] + 2 {
                        let d2 = [i.abs_diff(c[0]), j.abs_diff(c[1]), k.abs_diff(c[2])].iter().map(|&d| (d * d) as f64).sum::<f64>();
                        v[i + n * (j + n * k)] = a * (-d2 / 2.0).exp();
                    }
                }
            }
        }
        let vol = windowed([n, n, n], v);
        let cfg = |threshold| DetectorConfig { threshold, min_voxels: 1, max_candidates: usize::MAX };
        let low = generate_candidates(&vol, 0, &cfg(t)).unwrap();
        let high = generate_candidates(&vol, 0, &cfg((t + dt).min(0.99))).unwrap();
        prop_assert!(high.len() <= low.len());
    }

    #[test]
    fn injection_makes_tier1_sensitivity_one(
        centers in prop::collection::vec(prop::array::uniform3(0.0f64..60.0), 0..6),
        cand_centers in prop::collection::vec(prop::array::uniform3(0.0f64..60.0), 0..12),
    ) {
        let targets: Vec<Target> = centers.iter().map(|&c| target(c, 3.0)).collect();
        let mut cands: Vec<Candidate> =
            cand_centers.iter().enumerate().map(|(i, &c)| Candidate::new(0, i as u32, c, 0.5)).collect();
        let radius = MatchRadius::TargetRadiusPlus(2.0);
        label_candidates(&mut cands, &targets, radius);
        inject_targets(&mut cands, &targets, 0);
        label_candidates(&mut cands, &targets, radius);
        for t in 0..targets.len() {
            prop_assert!(cands.iter().any(|c| c.label == Label::Positive && c.matched_target == Some(t)));
        }
    }

    #[test]
    fn labeling_commutes_with_permutation(
        centers in prop::collection::vec(prop::array::uniform3(0.0f64..40.0), 1..5),
        cand_centers in prop::collection::vec(prop::array::uniform3(0.0f64..40.0), 1..15),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let targets: Vec<Target> = centers.iter().map(|&c| target(c, 4.0)).collect();
        let mut cands: Vec<Candidate> =
            cand_centers.iter().enumerate().map(|(i, &c)| Candidate::new(0, i as u32, c, 0.5)).collect();
        let mut shuffled = cands.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        label_candidates(&mut cands, &targets, MatchRadius::Fixed(10.0));
        label_candidates(&mut shuffled, &targets, MatchRadius::Fixed(10.0));
        for s in &shuffled {
            prop_assert_eq!(s, &cands[s.id as usize]);
        }
    }

    #[test]
    fn aggregate_is_bounded_symmetric_and_monotone(
        probs in prop::collection::vec(0.0f64..=1.0, 1..50),
        rot in any::<prop::sample::Index>(),
        bump in any::<prop::sample::Index>(),
        delta in 0.0f64..=1.0,
    ) {
        let p = aggregate(&probs, None, 0).unwrap();
        let lo = probs.iter().cloned().fold(1.0, f64::min);
        let hi = probs.iter().cloned().fold(0.0, f64::max);
        prop_assert!(lo <= p && p <= hi);

        let mut rotated = probs.clone();
        rotated.rotate_left(rot.index(probs.len()));
        rotated.reverse();
        prop_assert!((aggregate(&rotated, None, 0).unwrap() - p).abs() < 1e-12);

        let mut raised = probs.clone();
        let i = bump.index(probs.len());
        raised[i] = (raised[i] + delta).min(1.0);
        prop_assert!(aggregate(&raised, None, 0).unwrap() >= p - 1e-15);
    }

    #[test]
    fn auc_flips_under_score_negation(
        pairs in prop::collection::vec((any::<bool>(), -1e6f64..1e6), 2..60),
    ) {
        let (labels, scores): (Vec<bool>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assume!(sorted.windows(2).all(|w| w[0] != w[1]));
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = roc_auc(&labels, &scores).unwrap() + roc_auc(&labels, &neg).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn froc_curves_are_monotone(
        cands in prop::collection::vec((0u32..4, prop::option::of(0usize..2), 0.0f64..=1.0), 1..40),
    ) {
        let targets: Vec<Target> =
            (0..4).flat_map(|p| (0..2).map(move |_| Target { patient_id: p, ..target([0.0; 3], 3.0) })).collect();
        let cands: Vec<Candidate> = cands
            .into_iter()
            .enumerate()
            .map(|(i, (p, m, s))| {
                let mut c = Candidate::new(p, i as u32, [0.0; 3], s);
                c.label = if m.is_some() { Label::Positive } else { Label::Negative };
                c.matched_target = m;
                c
            })
            .collect();
        let curve = froc(&cands, &targets, 5, ScoreSource::Tier1, None, FrocOptions::default()).unwrap();
        prop_assert!(curve.is_monotone());
        let last = curve.points.last().unwrap();
        let negatives = cands.iter().filter(|c| c.label == Label::Negative).count();
        prop_assert_eq!(last.fp_per_patient, negatives as f64 / 5.0);
    }

    #[test]
    fn folds_never_leak(n in 2usize..80, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ids: Vec<u32> = (0..n as u32).map(|i| i * 7 + 3).collect();
        let folds = kfold_split(&ids, k, seed).unwrap();
        for f in 0..k {
            let test = folds.test_patients(f);
            let train = folds.train_patients(f);
            prop_assert!(test.iter().all(|p| !train.contains(p)));
            prop_assert_eq!(test.len() + train.len(), n);
        }
        let sizes = folds.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn views_are_deterministic_and_planar_in_2d(key in any::<u64>(), seed in any::<u64>()) {
        let cfg = SamplerConfig { mode: Mode::TwoD, seed, ..SamplerConfig::default() };
        let views = make_view_params(&cfg, key, ViewSet::Train);
        prop_assert_eq!(&views, &make_view_params(&cfg, key, ViewSet::Train));
        prop_assert!(views.iter().all(|v| v.translation_mm[2] == 0.0));
        prop_assert!(views.iter().all(|v| (0.0..360.0).contains(&v.rotation_deg)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn phantom_targets_fit_inside_the_volume(seed in any::<u64>()) {
        let spec = PhantomSpec { seed, dims: [40, 40, 40], lesion_count: Range { min: 2, max: 4 }, ..PhantomSpec::default() };
        let ph = generate_phantom(&spec, 3).unwrap();
        let ext = ph.volume.geometry().extent();
        for t in &ph.targets {
            for (&c, &e) in t.center_mm.iter().zip(&ext) {
                prop_assert!(c - t.radius_mm >= 0.0);
                prop_assert!(c + t.radius_mm <= e);
            }
        }
        prop_assert_eq!(ph, generate_phantom(&spec, 3).unwrap());
    }
}
