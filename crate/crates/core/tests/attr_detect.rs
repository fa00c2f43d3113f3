use proptest::prelude::*;
use stylespace::attr_detect::{
    exemplar_deltas, fewshot_experiment, positive_exemplars, rank_from_exemplars, relevance, FewShotConfig,
    RankOptions,
};
use stylespace::generator::{build_planted, Generator, GeneratorConfig, PlantedGroundTruth};
use stylespace::numerics::{stats, Rng};
use stylespace::testbed::{build_bank, BankStats, Classifier, ImageBank, LatentMode};

fn setup(epsilon: f64, n: usize) -> (Generator, PlantedGroundTruth, ImageBank) {
    let (g, truth) = build_planted(GeneratorConfig::desk_planted(1, epsilon)).unwrap();
    let cls = Classifier::for_generator(&g).unwrap();
    let bank = build_bank(&g, &cls, n, 0, LatentMode::W).unwrap();
    (g, truth, bank)
}

#[test]
fn theta_recomputed_from_fifty_exemplars() {
    let (g, _, bank) = setup(0.1, 600);
    let picked: Vec<usize> = (0..50).map(|i| i * 7 % bank.len()).collect();
    let ranking = rank_from_exemplars(&bank, g.layout(), 0, &picked, &RankOptions::default()).unwrap();
    for e in &ranking.entries {
        let u = e.flat;
        let (m, sd) = (bank.stats.style_mean[u], bank.stats.style_std[u]);
        let d: Vec<f64> = picked.iter().map(|&i| (bank.entries[i].styles.0[u] - m) / sd).collect();
        let mean = d.iter().sum::<f64>() / 50.0;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0;
        let theta = mean.abs() / var.sqrt().max(1e-8);
        assert!((e.theta - theta).abs() <= 1e-12 * theta.max(1.0), "channel {u}: {} vs {theta}", e.theta);
    }
    // descending θ
    assert!(ranking.entries.windows(2).all(|w| w[0].theta >= w[1].theta));
    assert!(ranking.entries.iter().all(|e| !g.layout().is_trgb(e.flat)));
}

#[test]
fn restriction_never_worsens_rank() {
    let (g, truth, bank) = setup(0.1, 2000);
    let mut rng = Rng::new(5, 0);
    for (a, name) in bank.meta.attributes.iter().enumerate() {
        let planted = truth.attribute(name).unwrap().channel;
        let flat = g.layout().flat_index(planted).unwrap();
        let pool = positive_exemplars(&bank, a, 0.05);
        let picked: Vec<usize> = rng.sample_indices(pool.len(), 20).into_iter().map(|i| pool[i]).collect();
        let full = rank_from_exemplars(&bank, g.layout(), a, &picked, &RankOptions::default()).unwrap();
        let mut subset: Vec<usize> = (0..g.layout().total()).filter(|u| u % 3 == 0).collect();
        subset.push(flat);
        let opts = RankOptions {
            restrict_to: Some(subset),
            ..Default::default()
        };
        let restricted = rank_from_exemplars(&bank, g.layout(), a, &picked, &opts).unwrap();
        assert!(restricted.rank_of(planted).unwrap() <= full.rank_of(planted).unwrap());
        assert!(restricted.restricted);
    }
}

#[test]
fn positives_are_the_lowest_logits() {
    let (_, _, bank) = setup(0.0, 500);
    let pos = positive_exemplars(&bank, 3, 0.1);
    assert_eq!(pos.len(), 50);
    let col = bank.logit_column(3);
    let worst = pos.iter().map(|&i| col[i]).fold(f64::NEG_INFINITY, f64::max);
    let others = (0..500).filter(|i| !pos.contains(i)).map(|i| col[i]).fold(f64::INFINITY, f64::min);
    assert!(worst <= others);
    assert!(pos.windows(2).all(|w| col[w[0]] <= col[w[1]]));
}

#[test]
fn fewshot_is_reproducible() {
    let (g, truth, bank) = setup(0.1, 1500);
    let pool = positive_exemplars(&bank, 0, 0.05);
    let flat = g.layout().flat_index(truth.attributes[0].channel).unwrap();
    let cfg = FewShotConfig {
        n_examples: 10,
        trials: 30,
        top_k: 5,
        seed: 3,
    };
    let a = fewshot_experiment(&bank, g.layout(), 0, &pool, &[flat], &RankOptions::default(), &cfg).unwrap();
    let b = fewshot_experiment(&bank, g.layout(), 0, &pool, &[flat], &RankOptions::default(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.trials, 30);
    let too_many = FewShotConfig {
        n_examples: pool.len() + 1,
        ..cfg
    };
    assert!(fewshot_experiment(&bank, g.layout(), 0, &pool, &[flat], &RankOptions::default(), &too_many).is_err());
}

fn stats_for(mean: Vec<f64>, std: Vec<f64>) -> BankStats {
    BankStats {
        style_mean: mean,
        style_std: std,
        logit_mean: vec![],
        logit_std: vec![],
        constant_channels: vec![],
    }
}

proptest! {
    #[test]
    fn theta_is_affine_invariant(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 2..30),
        scale in prop::collection::vec(0.1f64..10.0, 4),
        flip in prop::collection::vec(any::<bool>(), 4),
        shift in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        // s -> a s + b applied to population and exemplars alike
        let mean = vec![0.2, -0.1, 0.0, 1.0];
        let std = vec![1.0, 0.5, 2.0, 0.3];
        let a: Vec<f64> = scale.iter().zip(&flip).map(|(s, f)| if *f { -s } else { *s }).collect();
        let base = stats_for(mean.clone(), std.clone());
        let moved = stats_for(
            (0..4).map(|u| a[u] * mean[u] + shift[u]).collect(),
            (0..4).map(|u| a[u].abs() * std[u]).collect(),
        );
        let moved_rows: Vec<Vec<f64>> = rows.iter().map(|r| (0..4).map(|u| a[u] * r[u] + shift[u]).collect()).collect();
        let r0: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let r1: Vec<&[f64]> = moved_rows.iter().map(Vec::as_slice).collect();
        let t0 = relevance(&exemplar_deltas(&r0, &base).unwrap()).unwrap();
        let t1 = relevance(&exemplar_deltas(&r1, &moved).unwrap()).unwrap();
        for u in 0..4 {
            prop_assert!((t0[u] - t1[u]).abs() <= 1e-6 * t0[u].max(1.0), "{} vs {}", t0[u], t1[u]);
        }
    }

    #[test]
    fn theta_matches_population_formula(rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 2..20)) {
        let t = relevance(&rows).unwrap();
        for u in 0..3 {
            let col: Vec<f64> = rows.iter().map(|r| r[u]).collect();
            let m = stats::mean(&col);
            let expect = if m == 0.0 { 0.0 } else { m.abs() / stats::std_pop(&col).max(1e-8) };
            prop_assert!((t[u] - expect).abs() <= 1e-12 * expect.max(1.0));
        }
    }
}
