use std::f64::consts::PI;
use std::path::PathBuf;

use votesim_core::population::{
    integer_targets, load_blocks, sample_uniforms, synthesize_block, synthesize_state, BlockAggregate, Correlation,
    SynthesisConfig,
};
use votesim_core::seed;

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    for (rank, i) in idx.into_iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

#[test]
fn copula_rank_correlation_matches_gaussian_theory() {
    for rho in [-0.5, 0.0, 0.5] {
        let mut rng = seed::stream(11, &["spearman", &rho.to_string()]);
        let u = sample_uniforms(&Correlation::pair(rho).unwrap(), 100_000, &mut rng).unwrap();
        let (a, b): (Vec<f64>, Vec<f64>) = u.iter().map(|r| (r[0], r[1])).unzip();
        let expected = 6.0 / PI * (rho / 2.0).asin();
        let got = spearman(&a, &b);
        assert!((got - expected).abs() <= 0.015, "rho {rho}: spearman {got}, expected {expected}");
    }
}

#[test]
fn copula_uniforms_are_uniform() {
    let mut rng = seed::stream(3, &["uniform"]);
    let u = sample_uniforms(&Correlation::pair(0.7).unwrap(), 50_000, &mut rng).unwrap();
    for d in 0..2 {
        let mut deciles = [0usize; 10];
        for row in &u {
            assert!(row[d] > 0.0 && row[d] < 1.0);
            deciles[((row[d] * 10.0) as usize).min(9)] += 1;
        }
        for c in deciles {
            assert!((c as f64 / 50_000.0 - 0.1).abs() < 0.01, "{deciles:?}");
        }
    }
}

#[test]
fn non_psd_correlation_is_rejected() {
    let rows = vec![vec![1.0, 0.9, -0.9], vec![0.9, 1.0, 0.9], vec![-0.9, 0.9, 1.0]];
    let bad = Correlation::new(rows).and_then(|c| c.cholesky().map(|_| ()));
    assert!(bad.is_err());
}

#[test]
fn largest_remainder_targets_sum_to_n() {
    assert_eq!(integer_targets(10, &[0.25, 0.25, 0.5]), vec![3, 2, 5]);
    assert_eq!(integer_targets(7, &[1.0 / 3.0; 3]), vec![3, 2, 2]);
    for n in [1, 13, 299, 1000] {
        assert_eq!(integer_targets(n, &[0.11, 0.17, 0.15, 0.16, 0.16, 0.14, 0.11]).iter().sum::<usize>(), n);
    }
}

/// Five blocks with different sizes, marginals and dependence.
fn five_blocks() -> Vec<BlockAggregate> {
    let rows = [
        ("OH-a", 500, [0.2, 0.5, 0.3], [0.48, 0.52], Some(0.6)),
        ("OH-b", 137, [0.6, 0.3, 0.1], [0.5, 0.5], None),
        ("OH-c", 1000, [0.05, 0.05, 0.9], [0.3, 0.7], Some(-0.4)),
        ("OH-d", 61, [0.34, 0.33, 0.33], [0.51, 0.49], Some(0.9)),
        ("OH-e", 250, [0.1, 0.8, 0.1], [0.45, 0.55], Some(0.0)),
    ];
    rows.iter()
        .map(|(id, n, edu, gender, rho)| {
            let cov = rho.map(|r| vec![vec![1.0, r], vec![r, 1.0]]);
            serde_json::from_value(serde_json::json!({
                "block_id": id,
                "population": n,
                "features": [
                    {"name": "education", "categories": ["High school", "Some college", "Bachelor's degree"], "proportions": edu},
                    {"name": "gender", "categories": ["Male", "Female"], "proportions": gender},
                ],
                "covariance": cov,
            }))
            .unwrap()
        })
        .collect()
}

#[test]
fn scaled_blocks_hit_their_marginals() {
    let config = SynthesisConfig::default();
    for block in five_blocks() {
        let (personas, summary) = synthesize_block(&block, &config, 99).unwrap();
        assert_eq!(personas.len() as u64, block.population, "{}", block.block_id);
        assert!(summary.gap <= config.tol, "{}: gap {}", block.block_id, summary.gap);
        assert!(summary.iterations <= config.max_iter);
        let n = personas.len() as f64;
        for feature in &block.features {
            for (cat, target) in feature.categories.iter().zip(&feature.proportions) {
                let have = personas
                    .iter()
                    .filter(|p| match feature.name.as_str() {
                        "education" => p.education.as_deref() == Some(cat),
                        _ => p.gender.as_deref() == Some(cat),
                    })
                    .count() as f64;
                assert!((have / n - target).abs() <= 0.005 + 1.0 / n, "{} {cat}", block.block_id);
            }
        }
    }
}

#[test]
fn synthesis_is_reproducible_and_order_free() {
    let config = SynthesisConfig::default();
    let blocks = five_blocks();
    let (a, _) = synthesize_state(&blocks, &config, 5).unwrap();
    let (b, _) = synthesize_state(&blocks, &config, 5).unwrap();
    assert_eq!(a, b);
    let mut reversed = blocks.clone();
    reversed.reverse();
    let (c, _) = synthesize_state(&reversed, &config, 5).unwrap();
    let mut ids_a: Vec<_> = a.iter().map(|p| (p.id.clone(), p.education.clone())).collect();
    let mut ids_c: Vec<_> = c.iter().map(|p| (p.id.clone(), p.education.clone())).collect();
    ids_a.sort();
    ids_c.sort();
    assert_eq!(ids_a, ids_c);
    let (d, _) = synthesize_state(&blocks, &config, 6).unwrap();
    assert_ne!(a, d);
}

#[test]
fn two_block_fixture_yields_three_hundred_adults() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/blocks/WI.json");
    let blocks = load_blocks(&path).unwrap();
    assert_eq!(blocks.len(), 2);
    let (personas, summaries) = synthesize_state(&blocks, &SynthesisConfig::default(), 1).unwrap();
    assert_eq!(personas.len(), 300);
    assert_eq!(summaries.iter().map(|s| s.count).sum::<usize>(), 300);
    assert!(personas.iter().all(|p| p.age.is_some_and(|a| a >= 18)));
    assert!(personas.iter().all(|p| p.residence == Some("WI".parse().unwrap())));
}
