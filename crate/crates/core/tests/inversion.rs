use stylespace::dci::Space;
use stylespace::generator::{build_planted, Generator, GeneratorConfig, StyleVector};
use stylespace::inversion::{
    invert, mean_latent, reconstruction_error, sample_targets, warm_start_invert, GradientMode, InversionConfig,
};
use stylespace::numerics::{Rng, Tensor};

fn stylegan() -> Generator {
    Generator::new(GeneratorConfig::desk_stylegan(1)).unwrap()
}

/// A target generated with the noise held fixed while inverting.
fn reachable(g: &Generator, rng: &mut Rng, cfg: &InversionConfig) -> (StyleVector, Tensor) {
    let s = g.styles_from_w(&g.sample_w(rng)).unwrap();
    let img = g.synthesize(&s, &g.noise(cfg.noise_seed)).unwrap();
    (s, img)
}

fn wplus_target(g: &Generator, rng: &mut Rng, cfg: &InversionConfig) -> Tensor {
    let wp = g.sample_wplus(rng, g.layout().wplus_slots());
    g.synthesize(&g.w_to_styles(&wp).unwrap(), &g.noise(cfg.noise_seed)).unwrap()
}

/// Fraction of targets recovered below 1e-6 pixel MSE within 2000 steps.
fn identity_rate(g: &Generator, space: Space, trials: usize, seed: u64) -> f64 {
    let cfg = InversionConfig {
        steps: 2000,
        target_loss: 1e-7,
        ..Default::default()
    };
    let mut rng = Rng::new(seed, 0);
    let mut hits = 0;
    for _ in 0..trials {
        let target = match space {
            Space::WPlus => wplus_target(g, &mut rng, &cfg),
            _ => reachable(g, &mut rng, &cfg).1,
        };
        let r = invert(g, &target, space, None, &cfg).unwrap();
        assert!(r.is_monotone());
        let img = g.synthesize(&r.style_vector(), &g.noise(cfg.noise_seed)).unwrap();
        assert!((reconstruction_error(&img, &target).unwrap() - r.error).abs() < 1e-12);
        hits += usize::from(r.error < 1e-6);
    }
    hits as f64 / trials as f64
}

#[test]
fn reconstruction_identity_in_source_space() {
    let g = stylegan();
    let w = identity_rate(&g, Space::W, 10, 21);
    assert!(w >= 0.8, "W: {w}");
    let planted = build_planted(GeneratorConfig::desk_planted(1, 0.1)).unwrap().0;
    let pw = identity_rate(&planted, Space::WPlus, 5, 23);
    assert!(pw >= 0.8, "planted W+: {pw}");
}

#[test]
fn warm_start_beats_mean_init() {
    let g = stylegan();
    let cfg = InversionConfig::default();
    let mut rng = Rng::new(22, 0);
    let trials = 20;
    let mut wins = 0;
    for _ in 0..trials {
        let (s, target) = reachable(&g, &mut rng, &cfg);
        let near = StyleVector(s.0.iter().map(|v| v + 0.05 * rng.normal()).collect());
        let warm = warm_start_invert(&g, &target, &near, &cfg).unwrap();
        let cold = invert(
            &g,
            &target,
            Space::S,
            None,
            &InversionConfig {
                steps: warm.trace.len().max(1),
                ..cfg.clone()
            },
        )
        .unwrap();
        assert!(warm.steps <= 50);
        if warm.error < cold.error {
            wins += 1;
        }
    }
    assert!(wins * 10 >= trials * 9, "warm start won {wins}/{trials}");
}

#[test]
fn gradient_modes_follow_the_same_path() {
    let g = stylegan();
    let target = &sample_targets(&g, 1, 5).unwrap()[0];
    for space in [Space::Z, Space::W, Space::WPlus, Space::S] {
        let base = InversionConfig {
            steps: 5,
            ..Default::default()
        };
        // start off the mapping's kinks (Z = 0 sits on every one of them)
        let init: Vec<f64> = mean_latent(&g, space)
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.05 * ((i * 7 % 5) as f64 - 2.0))
            .collect();
        let init = Some(init.as_slice());
        let adj = invert(&g, target, space, init, &base).unwrap();
        let fwd = invert(
            &g,
            target,
            space,
            init,
            &InversionConfig {
                gradient: GradientMode::Forward,
                ..base.clone()
            },
        )
        .unwrap();
        assert_eq!(adj.trace.len(), fwd.trace.len());
        for (a, b) in adj.trace.iter().zip(&fwd.trace) {
            assert!((a - b).abs() <= 1e-9 * a.max(1e-12), "{space}: {a} vs {b}");
        }
        if space != Space::S {
            let fd = invert(
                &g,
                target,
                space,
                init,
                &InversionConfig {
                    gradient: GradientMode::FiniteDifference,
                    ..base.clone()
                },
            )
            .unwrap();
            assert!(fd.is_monotone());
            assert!((fd.error - adj.error).abs() <= 1e-4 * adj.error, "{space}: {} vs {}", fd.error, adj.error);
        }
    }
}

#[test]
fn traces_are_monotone_in_every_space() {
    let g = stylegan();
    let targets = sample_targets(&g, 3, 9).unwrap();
    let cfg = InversionConfig {
        steps: 40,
        ..Default::default()
    };
    for space in [Space::Z, Space::W, Space::WPlus, Space::S] {
        for t in &targets {
            let r = invert(&g, t, space, None, &cfg).unwrap();
            assert!(r.is_monotone(), "{space}");
            assert!(r.error <= r.initial_error);
            assert!(r.steps <= 40);
        }
    }
}

#[test]
fn targets_are_reproducible() {
    let g = stylegan();
    assert_eq!(sample_targets(&g, 2, 4).unwrap(), sample_targets(&g, 2, 4).unwrap());
    assert_ne!(sample_targets(&g, 1, 4).unwrap(), sample_targets(&g, 1, 5).unwrap());
}
