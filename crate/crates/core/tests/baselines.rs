use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tun_core::baselines::*;
use tun_core::synth::{cloud_diagram, generate_shape, label_sample, ShapeKind, ShapeParams};

#[test]
fn two_means_membership_survives_rescaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.random_range(0..40);
        let d: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                let b = rng.random_range(0.0..1.0);
                [b, b + rng.random_range(0.0..1.0)]
            })
            .collect();
        let scaled: Vec<[f64; 2]> = d.iter().map(|p| [p[0] * 10.0, p[1] * 10.0]).collect();
        assert_eq!(two_means_baseline(&d).labels, two_means_baseline(&scaled).labels);
    }
}

#[test]
fn confidence_sets_are_nested_in_the_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..100 {
        let n = rng.random_range(10..30);
        let cloud: Vec<[f64; 3]> =
            (0..n).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), 0.0]).collect();
        let d = cloud_diagram(&cloud).unwrap();
        let lo = confidence_set_baseline(&d, &cloud, 0.5, 30, case).unwrap();
        let hi = confidence_set_baseline(&d, &cloud, 0.9, 30, case).unwrap();
        let c = |r: &BaselineResult| match r.params {
            BaselineParams::ConfidenceSet { c, .. } => c,
            _ => unreachable!(),
        };
        assert!(c(&hi) >= c(&lo));
        for (a, b) in hi.labels.iter().zip(&lo.labels) {
            assert!(!a || *b, "case {case}: high-level set must be inside the low-level set");
        }
    }
}

#[test]
fn dense_clean_circle_keeps_its_loop() {
    let shape = generate_shape(ShapeKind::Circle, &ShapeParams::new(1.0, 300), 4).unwrap();
    let d = cloud_diagram(&shape.cloud).unwrap();
    let truth = label_sample(&shape.cloud, &d, 1).unwrap();
    let cs = confidence_set_baseline(&d, &shape.cloud, 0.5, 100, 1).unwrap();
    assert_eq!(cs.labels, truth);
}

#[test]
fn confidence_set_is_deterministic() {
    let shape = generate_shape(ShapeKind::FilledDisk, &ShapeParams::new(1.0, 200), 9).unwrap();
    let d = cloud_diagram(&shape.cloud).unwrap();
    let a = confidence_set_baseline(&d, &shape.cloud, 0.9, 40, 77).unwrap();
    let b = confidence_set_baseline(&d, &shape.cloud, 0.9, 40, 77).unwrap();
    assert_eq!(a, b);
}
