use idvo_core::dataset::{synth_generate, Jitter, SynthConfig};
use idvo_core::evaluation::{ate_sequence, ate_snippet, depth_metrics, smoothness};
use idvo_core::geometry::Pose6DoF;
use idvo_core::grid::Grid;
use idvo_core::synthesis::DepthMap;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_walk(rng: &mut ChaCha8Rng, n: usize) -> Vec<Pose6DoF> {
    let mut p = Pose6DoF::identity();
    let mut out = vec![p];
    for _ in 1..n {
        let step = Pose6DoF::new(
            Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1), rng.random_range(0.5..1.5)),
            Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.1..0.1), rng.random_range(-0.05..0.05)),
        );
        p = p.compose(&step);
        out.push(p);
    }
    out
}

fn perturb(rng: &mut ChaCha8Rng, traj: &[Pose6DoF], scale: f64, noise: f64) -> Vec<Pose6DoF> {
    traj.iter()
        .map(|p| {
            let n = Vector3::new(rng.random_range(-noise..noise), rng.random_range(-noise..noise), rng.random_range(-noise..noise));
            Pose6DoF::new(p.translation() * scale + n, p.orientation())
        })
        .collect()
}

fn rebased(traj: &[Pose6DoF]) -> Vec<Vector3<f64>> {
    let inv = traj[0].inverse();
    traj.iter().map(|p| inv.compose(p).translation()).collect()
}

/// RMSE after re-basing to the first pose, for a fixed scale.
fn naive_ate_at(est: &[Pose6DoF], gt: &[Pose6DoF], s: f64) -> f64 {
    rmse_at(&rebased(est), &rebased(gt), s)
}

fn rmse_at(te: &[Vector3<f64>], tg: &[Vector3<f64>], s: f64) -> f64 {
    let mut sum = 0.0;
    for (e, g) in te.iter().zip(tg) {
        sum += (e * s - g).norm_squared();
    }
    (sum / te.len() as f64).sqrt()
}

fn brute_force(est: &[Pose6DoF], gt: &[Pose6DoF]) -> f64 {
    let (te, tg) = (rebased(est), rebased(gt));
    (0..=400_000).map(|i| rmse_at(&te, &tg, i as f64 * 1e-5)).fold(f64::INFINITY, f64::min)
}

#[test]
fn scale_solve_matches_brute_force_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let gt = random_walk(&mut rng, 5);
        let true_scale = rng.random_range(0.4..3.0);
        let est = perturb(&mut rng, &gt, true_scale, 0.2);
        let best = brute_force(&est, &gt);
        let ate = ate_snippet(&est, &gt).unwrap();
        assert!((ate - best).abs() <= 1e-4, "{ate} vs {best}");
    }
}

#[test]
fn offset_middle_frame_matches_brute_force() {
    let gt: Vec<Pose6DoF> = (0..5).map(|i| Pose6DoF::from_translation(Vector3::new(0.0, 0.0, i as f64))).collect();
    let mut est = gt.clone();
    est[2] = Pose6DoF::from_translation(Vector3::new(0.1, 0.0, 2.0));
    let best = brute_force(&est, &gt);
    // s = 30 / 30.01; residual is close to 0.1/√5.
    let s = 30.0 / 30.01;
    let expected = rmse_at(&rebased(&est), &rebased(&gt), s);
    let ate = ate_snippet(&est, &gt).unwrap();
    assert!((ate - expected).abs() < 1e-12);
    assert!((ate - 0.1 / 5f64.sqrt()).abs() < 1e-3);
    assert!((ate - best).abs() < 1e-4);
}

#[test]
fn ate_sequence_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let gt = random_walk(&mut rng, 40);
    let est = perturb(&mut rng, &gt, 0.7, 0.1);
    let report = ate_sequence(&est, &gt, 5).unwrap();
    let mut values = Vec::new();
    for i in 0..=gt.len() - 5 {
        values.push(ate_snippet(&est[i..i + 5], &gt[i..i + 5]).unwrap());
    }
    let mut mean = 0.0;
    for v in &values {
        mean += v;
    }
    mean /= values.len() as f64;
    let mut var = 0.0;
    for v in &values {
        var += (v - mean) * (v - mean);
    }
    let std = (var / values.len() as f64).sqrt();
    assert_eq!(report.count, values.len());
    assert!((report.mean - mean).abs() <= 1e-12);
    assert!((report.std - std).abs() <= 1e-12);
    for (a, b) in report.per_snippet.iter().zip(&values) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn ate_report_on_synthetic_run_matches_naive_loop() {
    let seq = synth_generate(&SynthConfig { frames: 30, ..SynthConfig::default() }).unwrap();
    let gt = seq.gt_poses.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let est = perturb(&mut rng, &gt, 1.3, 0.05);
    let report = ate_sequence(&est, &gt, 5).unwrap();
    let naive: Vec<f64> = (0..=gt.len() - 5)
        .map(|i| {
            let (e, g) = (&est[i..i + 5], &gt[i..i + 5]);
            let (ie, ig) = (e[0].inverse(), g[0].inverse());
            let te: Vec<_> = e.iter().map(|p| ie.compose(p).translation()).collect();
            let tg: Vec<_> = g.iter().map(|p| ig.compose(p).translation()).collect();
            let num: f64 = te.iter().zip(&tg).map(|(a, b)| a.dot(b)).sum();
            let den: f64 = te.iter().map(|a| a.norm_squared()).sum();
            let s = if den > 0.0 { num / den } else { 0.0 };
            naive_ate_at(e, g, s)
        })
        .collect();
    let mean = naive.iter().sum::<f64>() / naive.len() as f64;
    assert!((report.mean - mean).abs() <= 1e-12);
}

#[test]
fn depth_metrics_match_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gt = Grid::from_fn(16, 8, |_, _| rng.random_range(1.0..90.0));
    let pred = Grid::from_fn(16, 8, |_, _| rng.random_range(0.5..40.0));
    let r = depth_metrics(&DepthMap::new(pred.clone()).unwrap(), &DepthMap::new(gt.clone()).unwrap(), 80.0).unwrap();
    let valid: Vec<usize> = (0..gt.len()).filter(|&i| gt.data()[i] > 0.0 && gt.data()[i] <= 80.0).collect();
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
    };
    let s = median(valid.iter().map(|&i| gt.data()[i]).collect()) / median(valid.iter().map(|&i| pred.data()[i]).collect());
    let (mut abs_rel, mut sq_rel, mut se, mut sle) = (0.0, 0.0, 0.0, 0.0);
    for &i in &valid {
        let g = gt.data()[i];
        let p = (pred.data()[i] * s).clamp(1e-3, 80.0);
        abs_rel += (p - g).abs() / g;
        sq_rel += (p - g) * (p - g) / g;
        se += (p - g) * (p - g);
        sle += (p.ln() - g.ln()) * (p.ln() - g.ln());
    }
    let n = valid.len() as f64;
    assert_eq!(r.pixels, valid.len());
    assert!((r.abs_rel - abs_rel / n).abs() <= 1e-12);
    assert!((r.sq_rel - sq_rel / n).abs() <= 1e-12);
    assert!((r.rmse - (se / n).sqrt()).abs() <= 1e-12);
    assert!((r.rmse_log - (sle / n).sqrt()).abs() <= 1e-12);
}

#[test]
fn smoothness_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let traj: Vec<Pose6DoF> = {
        let mut x = 0.0;
        (0..12)
            .map(|_| {
                x += rng.random_range(0.5..1.5);
                Pose6DoF::from_translation(Vector3::new(0.0, 0.0, x))
            })
            .collect()
    };
    let r = smoothness(&traj, 100.0).unwrap();
    let v: Vec<f64> = traj.windows(2).map(|w| (w[1].translation() - w[0].translation()).norm()).collect();
    let a: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let j: Vec<f64> = a.windows(2).map(|w| w[1] - w[0]).collect();
    let mean_abs = |x: &[f64]| x.iter().map(|y| y.abs()).sum::<f64>() / x.len() as f64;
    assert!((r.mean_abs_a - mean_abs(&a)).abs() <= 1e-12);
    assert!((r.mean_abs_j - mean_abs(&j)).abs() <= 1e-12);
    let mean_v = v.iter().sum::<f64>() / v.len() as f64;
    assert!((r.sawtooth - mean_abs(&j) / mean_v).abs() <= 1e-12);
}

#[test]
fn jitter_raises_sawtooth_index() {
    let run = |jitter: Jitter| {
        let seq = synth_generate(&SynthConfig { frames: 40, jitter, ..SynthConfig::default() }).unwrap();
        smoothness(&seq.gt_poses.unwrap(), 100.0).unwrap().sawtooth
    };
    let clean = run(Jitter::default());
    let noisy = run(Jitter { translation: 0.02, rotation: 0.002 });
    assert!(noisy > clean, "{noisy} vs {clean}");
}

#[test]
fn clean_constant_velocity_has_zero_sawtooth() {
    let traj: Vec<Pose6DoF> = (0..10).map(|i| Pose6DoF::from_translation(Vector3::new(0.0, 0.0, 0.5 * i as f64))).collect();
    let r = smoothness(&traj, 100.0).unwrap();
    assert_eq!(r.mean_abs_a, 0.0);
    assert_eq!(r.sawtooth, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ate_invariant_to_positive_scaling(seed in 0u64..1000, s in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_walk(&mut rng, 5);
        let est = perturb(&mut rng, &gt, 1.0, 0.2);
        let scaled: Vec<Pose6DoF> = est.iter().map(|p| Pose6DoF::new(p.translation() * s, p.orientation())).collect();
        let a = ate_snippet(&est, &gt).unwrap();
        let b = ate_snippet(&scaled, &gt).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        prop_assert!(ate_snippet(&gt, &gt).unwrap() < 1e-12);
    }

    #[test]
    fn depth_metrics_invariant_to_positive_scaling(seed in 0u64..1000, s in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = Grid::from_fn(8, 4, |_, _| rng.random_range(1.0..70.0));
        let pred = Grid::from_fn(8, 4, |_, _| rng.random_range(1.0..70.0));
        let scaled = pred.map(|v| v * s);
        let a = depth_metrics(&DepthMap::new(pred).unwrap(), &DepthMap::new(gt.clone()).unwrap(), 80.0).unwrap();
        let b = depth_metrics(&DepthMap::new(scaled).unwrap(), &DepthMap::new(gt).unwrap(), 80.0).unwrap();
        prop_assert!((a.abs_rel - b.abs_rel).abs() <= 1e-9);
        prop_assert!((a.rmse - b.rmse).abs() <= 1e-9 * (1.0 + a.rmse));
    }
}
