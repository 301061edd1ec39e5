use evseg_core::features::FeatureSet;
use evseg_core::level1::*;
use evseg_core::motion::{endpoint_error, geometric_error, Correspondence, FourParamMotion, Point2};
use evseg_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: f64 = 0.03;

/// Points of one cluster: uniform in a box around `center`.
fn cluster(rng: &mut ChaCha8Rng, n: usize, center: (f64, f64), half: f64) -> Vec<Point2> {
    (0..n)
        .map(|_| Point2::new(center.0 + rng.gen_range(-half..=half), center.1 + rng.gen_range(-half..=half)))
        .collect()
}

struct Scene {
    fs: FeatureSet,
    truth: Vec<usize>,
    motions: Vec<FourParamMotion>,
}

fn scene(seed: u64, groups: &[(usize, (f64, f64), f64, FourParamMotion)], noise: f64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corrs = Vec::new();
    let mut truth = Vec::new();
    for (g, &(n, c, half, m)) in groups.iter().enumerate() {
        for x in cluster(&mut rng, n, c, half) {
            let mut f = Correspondence::generated(x, &m, DT);
            f.x_curr += Point2::new(rng.gen_range(-noise..=noise), rng.gen_range(-noise..=noise));
            corrs.push(f);
            truth.push(g);
        }
    }
    Scene {
        fs: FeatureSet::new(corrs, 6),
        truth,
        motions: groups.iter().map(|g| g.3).collect(),
    }
}

fn bg() -> FourParamMotion {
    FourParamMotion::new(-60.0, 20.0, 0.0, 0.0)
}

fn obj_a() -> FourParamMotion {
    FourParamMotion::new(250.0, 40.0, 0.2, 0.1)
}

fn obj_b() -> FourParamMotion {
    FourParamMotion::new(-150.0, -220.0, -0.1, -0.2)
}

fn three_motion(seed: u64) -> Scene {
    scene(
        seed,
        &[
            (150, (0.0, 0.0), 110.0, bg()),
            (40, (-60.0, -40.0), 20.0, obj_a()),
            (40, (60.0, 40.0), 20.0, obj_b()),
        ],
        0.1,
    )
}

fn points(fs: &FeatureSet) -> Vec<Point2> {
    fs.correspondences.iter().map(|f| f.x_prev).collect()
}

#[test]
fn napsac_samples_stay_in_clusters() {
    let s = scene(
        1,
        &[
            (40, (-200.0, 0.0), 10.0, bg()),
            (40, (0.0, 0.0), 10.0, bg()),
            (40, (200.0, 0.0), 10.0, bg()),
        ],
        0.0,
    );
    let napsac = Napsac::new(&s.fs, 30.0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let same = (0..10_000)
        .filter(|_| {
            let (a, b) = napsac.sample(&mut rng);
            assert_ne!(a, b);
            s.truth[a] == s.truth[b]
        })
        .count();
    assert!(same >= 9_500, "{same}");
}

#[test]
fn napsac_isolated_cluster_containment() {
    let s = scene(2, &[(20, (0.0, 0.0), 5.0, bg()), (1, (200.0, 0.0), 0.0, bg())], 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let napsac = Napsac::new(&s.fs, 30.0);
    for _ in 0..2000 {
        let (a, b) = napsac.sample(&mut rng);
        if a < 20 {
            assert!(b < 20);
        }
    }
}

proptest! {
    #[test]
    fn quality_is_bounded(seed in 0u64..1000, u in -200.0..200.0f64, v in -200.0..200.0f64, with_compound: bool) {
        let s = three_motion(seed);
        let compound = if with_compound { ModelPool::from_models(vec![bg()]) } else { ModelPool::default() };
        let q = msac_quality(&FourParamMotion::new(u, v, 0.0, 0.0), &compound, &s.fs, 1.5);
        prop_assert!(q >= 0.0 && q <= s.fs.len() as f64);
    }

    #[test]
    fn quality_non_increasing_in_one_error(base in 0.0..5.0f64, extra in 0.0..5.0f64) {
        // One feature whose error w.r.t. the zero model grows; others fixed.
        let mk = |e: f64| {
            let c = vec![
                Correspondence::new(Point2::new(0.0, 0.0), Point2::new(e, 0.0), DT),
                Correspondence::new(Point2::new(10.0, 0.0), Point2::new(10.5, 0.0), DT),
            ];
            FeatureSet::new(c, 1)
        };
        // A compound model far away keeps e_union large.
        let compound = ModelPool::from_models(vec![FourParamMotion::new(1e4, 1e4, 0.0, 0.0)]);
        let q0 = msac_quality(&FourParamMotion::ZERO, &compound, &mk(base), 1.5);
        let q1 = msac_quality(&FourParamMotion::ZERO, &compound, &mk(base + extra), 1.5);
        prop_assert!(q1 <= q0 + 1e-12);
    }
}

#[test]
fn propose_single_motion_exact() {
    let s = scene(4, &[(80, (0.0, 0.0), 80.0, obj_a())], 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = gc_ransac_propose(&s.fs, &ModelPool::default(), &Level1Params::default(), &mut rng).unwrap();
    for f in &s.fs.correspondences {
        assert!(geometric_error(f, &p.model) < 1e-6);
    }
    assert_eq!(p.inliers.len(), 80);
}

#[test]
fn propose_finds_motion_outside_compound() {
    for seed in 0..5 {
        let s = scene(
            seed,
            &[(60, (-30.0, 0.0), 60.0, bg()), (40, (30.0, 10.0), 40.0, obj_a())],
            0.1,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let compound = ModelPool::from_models(vec![bg()]);
        let p = gc_ransac_propose(&s.fs, &compound, &Level1Params::default(), &mut rng).unwrap();
        let pts: Vec<_> = points(&s.fs)[60..].to_vec();
        let err = endpoint_error(&p.model, &obj_a(), &pts, DT);
        assert!(err < 0.5, "seed {seed}: {err}");
    }
}

#[test]
fn propose_no_model_when_explained() {
    let s = scene(5, &[(50, (0.0, 0.0), 60.0, bg()), (30, (20.0, 0.0), 30.0, obj_b())], 0.0);
    let compound = ModelPool::from_models(vec![bg(), obj_b()]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = gc_ransac_propose(&s.fs, &compound, &Level1Params::default(), &mut rng);
    assert_eq!(r, Err(Error::NoModel));
}

#[test]
fn pearl_fixed_point() {
    let s = scene(6, &[(60, (0.0, 0.0), 60.0, obj_a())], 0.0);
    let r = pearl_optimize(&ModelPool::from_models(vec![obj_a()]), &s.fs, &Level1Params::default());
    assert_eq!(r.pool.len(), 1);
    assert!(r.labels.iter().all(|l| *l == Some(0)));
    let m = r.pool.models[0].to_array();
    for (a, b) in m.iter().zip(obj_a().to_array()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn pearl_drops_duplicate() {
    let s = scene(7, &[(60, (0.0, 0.0), 60.0, obj_a())], 0.05);
    let p = Level1Params::default();
    let dup = FourParamMotion::new(250.01, 40.0, 0.2, 0.1);
    let r = pearl_optimize(&ModelPool::from_models(vec![obj_a(), dup]), &s.fs, &p);
    assert_eq!(r.pool.len(), 1);
    assert!(r.labels.iter().all(|l| *l == Some(0)));

    // Energy oracle: one instance carrying everything beats any split.
    let unary = |m: &FourParamMotion, f: &Correspondence| geometric_error(f, m).powi(2).min(p.outlier_cost.powi(2));
    let single: f64 = s.fs.correspondences.iter().map(|f| unary(&obj_a(), f)).sum::<f64>() + p.pearl_beta;
    let best_split: f64 = s
        .fs
        .correspondences
        .iter()
        .map(|f| unary(&obj_a(), f).min(unary(&dup, f)))
        .sum::<f64>()
        + 2.0 * p.pearl_beta;
    assert!(single < best_split);
}

#[test]
fn pearl_two_motion_accuracy() {
    for seed in 0..5 {
        let s = scene(
            seed,
            &[(80, (-30.0, 0.0), 80.0, bg()), (50, (40.0, 20.0), 30.0, obj_b())],
            0.2,
        );
        let r = pearl_optimize(&ModelPool::from_models(vec![bg(), obj_b()]), &s.fs, &Level1Params::default());
        assert_eq!(r.pool.len(), 2);
        let correct = r.labels.iter().zip(&s.truth).filter(|(l, t)| **l == Some(**t)).count();
        assert!(correct as f64 >= 0.95 * s.fs.len() as f64, "seed {seed}: {correct}");
    }
}

#[test]
fn pearl_energy_monotone() {
    let p = Level1Params::default();
    for seed in 0..20 {
        let s = three_motion(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Perturbed and spurious starting models.
        let mut models: Vec<_> = s
            .motions
            .iter()
            .map(|m| {
                let a = m.to_array();
                FourParamMotion::from_array([
                    a[0] + rng.gen_range(-20.0..20.0),
                    a[1] + rng.gen_range(-20.0..20.0),
                    a[2] + rng.gen_range(-0.05..0.05),
                    a[3] + rng.gen_range(-0.05..0.05),
                ])
            })
            .collect();
        models.push(FourParamMotion::new(0.0, 300.0, 0.0, 0.0));
        let r = pearl_optimize(&ModelPool::from_models(models), &s.fs, &p);
        for w in r.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {:?}", r.trace);
        }
        for members in &r.pool.inliers {
            assert!(members.len() >= 3);
        }
    }
}

#[test]
fn progressive_single_motion() {
    for seed in 0..5 {
        let s = scene(seed, &[(100, (0.0, 0.0), 100.0, bg())], 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = progressive_fit(&s.fs, &Level1Params::default(), &mut rng).unwrap();
        assert_eq!(r.pool.len(), 1, "seed {seed}");
        let on = r.labels.iter().filter(|l| **l == Some(0)).count();
        assert!(on >= 95);
    }
}

#[test]
fn progressive_three_motion() {
    for seed in 0..5 {
        let s = three_motion(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = progressive_fit(&s.fs, &Level1Params::default(), &mut rng).unwrap();
        assert_eq!(r.pool.len(), 3, "seed {seed}: {:?}", r.pool.models);
        let pts = points(&s.fs);
        for (g, truth) in s.motions.iter().enumerate() {
            let group: Vec<_> = (0..pts.len()).filter(|&i| s.truth[i] == g).map(|i| pts[i]).collect();
            let best = r
                .pool
                .models
                .iter()
                .map(|m| endpoint_error(m, truth, &group, DT))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 0.5, "seed {seed} group {g}: {best}");
        }
        if r.stop == StopReason::Bound {
            assert!(*r.bounds.last().unwrap() < 3.0);
        }
    }
}

#[test]
fn progressive_uniform_noise() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let corrs = (0..50)
            .map(|_| {
                let x = Point2::new(rng.gen_range(-100.0..100.0), rng.gen_range(-80.0..80.0));
                let d = Point2::new(rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0));
                Correspondence::new(x, x + d, DT)
            })
            .collect();
        let fs = FeatureSet::new(corrs, 6);
        let r = progressive_fit(&fs, &Level1Params::default(), &mut rng).unwrap();
        // Support of each surviving model: features within the inlier threshold.
        for m in &r.pool.models {
            let support = fs.correspondences.iter().filter(|f| geometric_error(f, m) < 1.5).count();
            assert!(support < 5, "seed {seed}: {support}");
        }
        let outliers = r.labels.iter().filter(|l| l.is_none()).count();
        assert!(outliers > 25, "seed {seed}: {outliers}");
    }
}

#[test]
fn progressive_deterministic() {
    let s = three_motion(11);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        progressive_fit(&s.fs, &Level1Params::default(), &mut rng).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn progressive_needs_two_features() {
    let fs = FeatureSet::new(vec![Correspondence::new(Point2::zeros(), Point2::zeros(), DT)], 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        progressive_fit(&fs, &Level1Params::default(), &mut rng),
        Err(Error::InsufficientFeatures { .. })
    ));
}
