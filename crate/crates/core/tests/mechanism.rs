use subsetq::datasets::{generate_mixture, weakify, GaussianMixtureSpec};
use subsetq::query::{binomial, enumerate_in_out, enumerate_subsets, sample_subset, QueryConfig};
use subsetq::rng::{derive_seed, SeededRng};
use subsetq::stats::{chi_square_z, RunningStats};

#[test]
fn subset_draws_are_uniform_over_the_family() {
    for k in 2..=8 {
        for m in 1..k {
            let cfg = QueryConfig::new(k, m).unwrap();
            let family = binomial(k, m) as usize;
            if family > 64 {
                continue;
            }
            let draws = 100_000u64;
            let mut rng = SeededRng::new(derive_seed(11, (k * 16 + m) as u64));
            let mut counts = vec![0u64; family];
            for _ in 0..draws {
                let l = sample_subset(&cfg, &mut rng);
                counts[cfg.rank(&l).unwrap()] += 1;
            }
            let p = 1.0 / family as f64;
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            for (i, &c) in counts.iter().enumerate() {
                let z = (c as f64 - draws as f64 * p) / sd;
                assert!(z.abs() < 4.0, "k={k} m={m} subset #{i}: z = {z}");
            }
        }
    }
}

#[test]
fn conditional_on_label_draws_are_uniform_in_and_out() {
    // given y, L is uniform on Q^in_y when s = 1 and on Q^out_y when s = 0
    for (k, m) in [(4, 2), (5, 2), (5, 3), (6, 1)] {
        let cfg = QueryConfig::new(k, m).unwrap();
        let y = 2;
        let all = enumerate_subsets(&cfg).unwrap();
        let (q_in, q_out) = enumerate_in_out(&cfg, y).unwrap();
        let mut c_in = vec![0u64; all.len()];
        let mut c_out = vec![0u64; all.len()];
        let mut rng = SeededRng::new(k as u64 * 100 + m as u64);
        for _ in 0..60_000 {
            let l = sample_subset(&cfg, &mut rng);
            let idx = cfg.rank(&l).unwrap();
            if l.contains(y) {
                c_in[idx] += 1;
            } else {
                c_out[idx] += 1;
            }
        }
        let probs = |family: &[subsetq::LabelSubset]| -> Vec<f64> {
            all.iter().map(|l| if family.contains(l) { 1.0 / family.len() as f64 } else { 0.0 }).collect()
        };
        let (z_in, _) = chi_square_z(&c_in, &probs(&q_in));
        assert!(z_in < 4.0, "k={k} m={m} in: {z_in}");
        if !q_out.is_empty() {
            let (z_out, _) = chi_square_z(&c_out, &probs(&q_out));
            assert!(z_out < 4.0, "k={k} m={m} out: {z_out}");
        }
    }
}

#[test]
fn positive_group_size_is_binomial() {
    let mut spec = GaussianMixtureSpec::desk_benchmark();
    spec.n_train = 500;
    spec.n_test = 10;
    let (train, _) = generate_mixture(&spec, &mut SeededRng::new(3)).unwrap();
    let cfg = QueryConfig::new(10, 3).unwrap();
    let runs = 2000;
    let stats: RunningStats = (0..runs).map(|r| weakify(&train, &cfg, r).unwrap().n1() as f64).collect();
    let (n, p) = (500.0, 0.3);
    let mean = n * p;
    let var = n * p * (1.0 - p);
    let se_mean = (var / runs as f64).sqrt();
    assert!((stats.mean() - mean).abs() < 4.0 * se_mean, "mean {}", stats.mean());
    // sample variance of a binomial has SE about var * sqrt(2 / (runs - 1))
    let se_var = var * (2.0 / (runs - 1) as f64).sqrt();
    assert!((stats.variance() - var).abs() < 4.0 * se_var, "variance {}", stats.variance());
}

#[test]
fn weakify_positive_rate_at_scale() {
    let mut spec = GaussianMixtureSpec::desk_benchmark();
    spec.n_train = 60_000;
    spec.n_test = 10;
    let (train, _) = generate_mixture(&spec, &mut SeededRng::new(8)).unwrap();
    let weak = weakify(&train, &QueryConfig::new(10, 3).unwrap(), 1).unwrap();
    let sd = (0.3 * 0.7 / 60_000.0f64).sqrt();
    assert!((weak.positive_fraction() - 0.3).abs() < 4.0 * sd);
    for i in 0..weak.n() {
        assert_eq!(weak.subset(i).contains(train.label(i)), weak.response(i).is_in());
    }
}
