use plsom::ordering::{
    expected_update_vector, field_value, is_ordered, simplified_update, verify_unordered_subspace,
    verify_unordered_subspace_with, SweepCheckpoint, VerifierConfig, WeightTriple,
};
use plsom::rng::{streams, SeedStream};

/// Random point of `U` from three sorted uniforms `a <= b <= c` as `(a, c, b)`.
fn random_u(rng: &mut SeedStream) -> WeightTriple {
    let mut v = [rng.uniform(), rng.uniform(), rng.uniform()];
    v.sort_by(f64::total_cmp);
    WeightTriple::new(v[0], v[2], v[1])
}

fn winner(x: f64, w: &[f64; 3]) -> usize {
    (1..3).fold(0, |b, i| if (x - w[i]).abs() < (x - w[b]).abs() { i } else { b })
}

/// Expected update by 3-point Gauss-Legendre on every piece between the
/// weights and the pairwise midpoints. The integrand is a quadratic on each
/// piece, so the rule is exact there.
fn gauss_legendre_update(w: &WeightTriple, r: f64, beta: f64) -> [f64; 3] {
    let a = w.as_array();
    let mut cuts = vec![0.0, 1.0];
    for i in 0..3 {
        cuts.push(a[i]);
        for j in i + 1..3 {
            cuts.push(0.5 * (a[i] + a[j]));
        }
    }
    cuts.retain(|c| (0.0..=1.0).contains(c));
    cuts.sort_by(f64::total_cmp);
    let nodes = [-(0.6f64).sqrt(), 0.0, (0.6f64).sqrt()];
    let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let mut u = [0.0; 3];
    for p in cuts.windows(2) {
        let (lo, hi) = (p[0], p[1]);
        if hi <= lo {
            continue;
        }
        let c = winner(0.5 * (lo + hi), &a);
        let half = 0.5 * (hi - lo);
        for (t, g) in nodes.iter().zip(weights) {
            let x = lo + half * (1.0 + t);
            for (n, un) in u.iter_mut().enumerate() {
                *un += half * g * simplified_update(x, w, n, c, r, beta);
            }
        }
    }
    u
}

#[test]
fn closed_form_matches_gauss_legendre() {
    let mut rng = SeedStream::new(7, streams::PROPERTY);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let w = random_u(&mut rng);
        let exact = expected_update_vector(&w, 1.0, 2.0).unwrap();
        let oracle = gauss_legendre_update(&w, 1.0, 2.0);
        for n in 0..3 {
            worst = worst.max((exact[n] - oracle[n]).abs());
        }
    }
    assert!(worst < 1e-10, "largest deviation {worst:e}");
}

#[test]
fn closed_form_scales_with_r_and_beta() {
    let w = WeightTriple::new(0.1, 0.9, 0.4);
    for (r, beta) in [(0.5, 2.0), (2.0, 3.0), (1.0, 10.0)] {
        let exact = expected_update_vector(&w, r, beta).unwrap();
        let oracle = gauss_legendre_update(&w, r, beta);
        for n in 0..3 {
            assert!((exact[n] - oracle[n]).abs() < 1e-12, "r={r} beta={beta} node {n}");
        }
    }
}

#[test]
fn field_is_lipschitz_within_the_configured_bound() {
    let cfg = VerifierConfig::default();
    let mut rng = SeedStream::new(3, streams::PROPERTY);
    let mut steepest = 0.0f64;
    for _ in 0..20_000 {
        let a = random_u(&mut rng);
        let d = [rng.uniform_range(-1e-3, 1e-3), rng.uniform_range(-1e-3, 1e-3), rng.uniform_range(-1e-3, 1e-3)];
        let b = WeightTriple::new(a.w0 + d[0], a.w1 + d[1], a.w2 + d[2]);
        if !b.in_unordered_subspace() {
            continue;
        }
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let slope = (field_value(&a, &cfg).unwrap() - field_value(&b, &cfg).unwrap()).abs() / len;
        steepest = steepest.max(slope);
    }
    assert!(steepest <= cfg.gradient_bound, "observed slope {steepest} above {}", cfg.gradient_bound);
}

#[test]
fn default_attractor_is_ordered_and_interior() {
    let cfg = VerifierConfig::default();
    assert!(is_ordered(&cfg.attractor));
    assert!(cfg.attractor.iter().all(|&a| a > 0.0 && a < 1.0));
    let full = VerifierConfig::full_scale();
    assert!(full.spacing <= full.max_admissible_spacing());
    assert!(cfg.spacing > cfg.max_admissible_spacing());
}

#[test]
fn coarse_report_is_honest_about_certification() {
    let r = verify_unordered_subspace(&VerifierConfig { spacing: 0.02, ..VerifierConfig::default() }).unwrap();
    assert!(r.passes);
    assert!(r.attractor_ordered);
    assert!(!r.certifies_subspace);
    assert!(r.max_field_value <= r.config.threshold);
}

#[test]
fn sweep_is_independent_of_worker_count() {
    let cfg = VerifierConfig { spacing: 0.01, ..VerifierConfig::default() };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let mut r = pool.install(|| verify_unordered_subspace(&cfg)).unwrap();
        r.elapsed_seconds = 0.0;
        r
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn interrupted_sweep_resumes_to_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = VerifierConfig { spacing: 0.01, attractor: [0.9, 0.1, 0.5], ..VerifierConfig::default() };
    let mut reference = verify_unordered_subspace(&cfg).unwrap();

    let cp = SweepCheckpoint { path: dir.path().join("sweep.json"), every: 5_000 };
    // Abort the first attempt from the progress callback after a few batches.
    let mut seen = 0;
    let _ = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        verify_unordered_subspace_with(&cfg, Some(&cp), |_, _| {
            seen += 1;
            if seen == 3 {
                panic!("interrupted");
            }
        })
    }));
    assert!(cp.path.exists());
    let mut resumed = verify_unordered_subspace_with(&cfg, Some(&cp), |_, _| {}).unwrap();
    reference.elapsed_seconds = 0.0;
    resumed.elapsed_seconds = 0.0;
    assert_eq!(reference, resumed);
    assert!(resumed.violation_count > 0);
}
