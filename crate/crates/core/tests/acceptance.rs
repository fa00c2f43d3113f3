//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::Instant;

use stylespace::attr_detect::{positive_exemplars, rank_from_exemplars, RankOptions};
use stylespace::dci::{completeness, dci_scores, disentanglement, one_minus_entropy, DciConfig, ImportanceMatrix, Space};
use stylespace::generator::{build_planted, Generator, GeneratorConfig, SynthesisFn};
use stylespace::inversion::{
    invert_batch, realism_degradation, realism_from_bank, realism_shift, sample_targets, InversionConfig,
};
use stylespace::local_detect::{overlap_coefficient, GradientMap, LocalConfig};
use stylespace::manip_ad::{find_strength, BisectionConfig, Direction};
use stylespace::numerics::{finite_difference, jvp, quantile_threshold, relative_error, stats, Rng, Tensor};
use stylespace::pipeline::{ad_report, attr_analysis, attr_report, dci_report, local_report, AdRunConfig, AttrConfig};
use stylespace::testbed::{build_bank, Classifier, ImageBank, LatentMode, SemanticMask};

struct Outcome {
    failed: Vec<usize>,
}

impl Outcome {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!("criterion {id:>2}: {} — {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id);
        }
    }
}

fn planted(seed: u64, epsilon: f64) -> Generator {
    build_planted(GeneratorConfig::desk_planted(seed, epsilon)).unwrap().0
}

fn bank_for(g: &Generator, n: usize, seed: u64) -> ImageBank {
    let cls = Classifier::for_generator(g).unwrap();
    build_bank(g, &cls, n, seed, LatentMode::W).unwrap()
}

fn median(v: &[f64]) -> f64 {
    stats::median(v)
}

// ---------------------------------------------------------------- 1, 2

fn jvp_probes(make: impl Fn(u64) -> Generator) -> (f64, f64) {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let gens: Vec<Generator> = (0..5).map(&make).collect();
    let mut rng = Rng::new(101, 0);
    for k in 0..100 {
        let g = &gens[k % gens.len()];
        let s = g.styles_from_w(&g.sample_w(&mut rng)).unwrap();
        let noise = g.noise(k as u64);
        let u = rng.below(g.layout().total());
        let f = SynthesisFn { generator: g, noise: &noise };
        let x = Tensor::from_vec(s.0.clone());
        let mut e = vec![0.0; s.len()];
        e[u] = 1.0;
        let v = Tensor::from_vec(e);
        let (_, t) = jvp(&f, &x, &v).unwrap();
        let fd = finite_difference(&f, &x, &v, 1e-4).unwrap();
        worst = worst.max(relative_error(&t, &fd, 1e-8).unwrap());
    }
    (worst, t0.elapsed().as_secs_f64())
}

fn criterion_1(out: &mut Outcome) {
    let (e_sg, t_sg) = jvp_probes(|s| Generator::new(GeneratorConfig::desk_stylegan(s + 1)).unwrap());
    let (e_pl, t_pl) = jvp_probes(|s| planted(s + 1, 0.1));
    out.record(
        1,
        e_sg < 1e-5 && e_pl < 1e-5 && t_sg < 60.0 && t_pl < 60.0,
        format!("JVP vs FD(h=1e-4) max rel err stylegan {e_sg:.2e} ({t_sg:.1}s), planted {e_pl:.2e} ({t_pl:.1}s); need < 1e-5, < 60s"),
    );
}

fn criterion_2(out: &mut Outcome) {
    let mut worst: f64 = 0.0;
    let mut channels = 0;
    for g in [Generator::new(GeneratorConfig::desk_stylegan(6)).unwrap(), planted(6, 0.1)] {
        let mut rng = Rng::new(102, 0);
        for k in 0..3 {
            let s = g.styles_from_w(&g.sample_w(&mut rng)).unwrap();
            let noise = g.noise(k);
            let f0 = g.synthesize(&s, &noise).unwrap();
            for u in (0..g.layout().total()).filter(|&u| g.layout().is_trgb(u)) {
                let step = 0.5 * (1.0 + s.0[u].abs());
                let (mut s1, mut s2) = (s.clone(), s.clone());
                s1.0[u] += step;
                s2.0[u] += 2.0 * step;
                let f1 = g.synthesize(&s1, &noise).unwrap();
                let f2 = g.synthesize(&s2, &noise).unwrap();
                let second = f2.sub(&f1.scale(2.0)).unwrap().add(&f0).unwrap();
                worst = worst.max(second.max_abs());
                channels += 1;
            }
        }
    }
    out.record(2, worst < 1e-9, format!("max |second difference| {worst:.2e} over {channels} tRGB probes; need < 1e-9"));
}

// ---------------------------------------------------------------- 3

fn hand_dci_ok() -> bool {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut two_hot = vec![0.0; 16];
    two_hot[2] = 1.0;
    two_hot[9] = 1.0;
    let mixed = ImportanceMatrix::new(2, 2, vec![1.0, 1.0, 0.0, 2.0]).unwrap();
    let h = -(1.0f64 / 3.0) * (1.0f64 / 3.0).ln() - (2.0f64 / 3.0) * (2.0f64 / 3.0).ln();
    close(one_minus_entropy(&[0.5, 0.5], 2).unwrap(), 0.0)
        && close(one_minus_entropy(&[0.5, 0.5], 4).unwrap(), 0.5)
        && close(one_minus_entropy(&two_hot, 16).unwrap(), 0.75)
        && close(disentanglement(&mixed).1, 0.5)
        && close(completeness(&mixed, &[0, 1]).1, (2.0 - h / 2f64.ln()) / 2.0)
}

fn criterion_3(out: &mut Outcome) {
    let hand = hand_dci_ok();
    let mut ok = hand;
    let mut lines = Vec::new();
    for seed in 1..=3 {
        let g = planted(seed, 0.0);
        let bank = bank_for(&g, 10_000, seed);
        let cfg = DciConfig::default();
        let r: Vec<_> = [Space::Z, Space::W, Space::S]
            .iter()
            .map(|&s| dci_scores(&bank, s, &cfg).unwrap())
            .collect();
        let (z, w, s) = (&r[0], &r[1], &r[2]);
        let pass = s.disentanglement >= 0.95
            && s.completeness >= 0.95
            && s.informativeness >= 0.99
            && s.disentanglement > w.disentanglement
            && w.disentanglement > z.disentanglement;
        ok &= pass;
        lines.push(format!(
            "seed {seed}: S D/C/I {:.3}/{:.3}/{:.3}, D(W) {:.3}, D(Z) {:.3}",
            s.disentanglement, s.completeness, s.informativeness, w.disentanglement, z.disentanglement
        ));
    }
    out.record(
        3,
        ok,
        format!(
            "hand matrices {}; {}; need D,C(S) ≥ 0.95, I(S) ≥ 0.99, D(S) > D(W) > D(Z)",
            if hand { "exact" } else { "MISMATCH" },
            lines.join("; ")
        ),
    );
}

// ---------------------------------------------------------------- 4

fn criterion_4(out: &mut Outcome) {
    let mut rng = Rng::new(104, 0);
    let mut size_ok = 0;
    let mut oc_err: f64 = 0.0;
    let mut oc_missing = 0;
    for _ in 0..1000 {
        let size = [4, 8, 16, 32][rng.below(4)];
        let cats = 1 + rng.below(6);
        let labels: Vec<usize> = (0..size * size).map(|_| rng.below(cats)).collect();
        let mask = SemanticMask::new(size, cats, labels.clone()).unwrap();
        let values: Vec<f64> = (0..size * size).map(|_| (rng.normal() * 3.0).round()).collect();
        let c = rng.below(cats);
        let region: BTreeSet<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let k = region.len();
        // sort oracle
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
        let top = quantile_threshold(&values, k).unwrap();
        if top.len() == k && top.indices == order[..k] {
            size_ok += 1;
        }
        let d = 1.0 + rng.uniform() * 2.0;
        let map = GradientMap {
            size,
            values,
            channel: stylespace::generator::ChannelId::new(0, 0),
            sample: 0,
        };
        let got = overlap_coefficient(&map, &mask, c, d).unwrap();
        if k == 0 {
            oc_missing += usize::from(got.is_some());
            continue;
        }
        let chosen: BTreeSet<usize> = order[..k].iter().copied().collect();
        let expect = chosen.intersection(&region).count() as f64 / (k as f64).powf(d);
        match got {
            Some(v) => oc_err = oc_err.max((v - expect).abs()),
            None => oc_missing += 1,
        }
    }
    out.record(
        4,
        size_ok == 1000 && oc_err < 1e-12 && oc_missing == 0,
        format!("{size_ok}/1000 masks match the sort oracle; max OC deviation {oc_err:.1e}; need all and < 1e-12"),
    );
}

// ---------------------------------------------------------------- 5, 6, 7, 8

struct Planted {
    generator: Generator,
    bank: ImageBank,
    local: stylespace::local_detect::LocalDetection,
}

fn criterion_5(out: &mut Outcome) -> Planted {
    let cfg = LocalConfig::default();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut kept = None;
    for (eps, need) in [(0.0, 0.9), (0.1, 0.8)] {
        let g = planted(1, eps);
        let bank = bank_for(&g, 10_000, 0);
        let t0 = Instant::now();
        let (found, _) = local_report(&g, &bank, &cfg).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let (p, r) = stylespace::local_detect::score_against_truth(&found.regions(), g.planted_truth().unwrap());
        ok &= p >= need && r >= need && secs < 600.0;
        lines.push(format!("ε={eps}: precision {p:.3} recall {r:.3} ({secs:.1}s, need ≥ {need})"));
        kept = Some((g, bank, found));
    }
    out.record(5, ok, format!("{} samples; {}", cfg.samples, lines.join("; ")));
    let (generator, bank, local) = kept.unwrap();
    Planted { generator, bank, local }
}

/// One-sided two-proportion z statistic for `a` exceeding `b`.
fn decrease_z(a: (usize, usize), b: (usize, usize)) -> f64 {
    let (pa, pb) = (a.0 as f64 / a.1 as f64, b.0 as f64 / b.1 as f64);
    let p = (a.0 + b.0) as f64 / (a.1 + b.1) as f64;
    let se = (p * (1.0 - p) * (1.0 / a.1 as f64 + 1.0 / b.1 as f64)).sqrt();
    if se == 0.0 {
        if pa > pb { f64::INFINITY } else { 0.0 }
    } else {
        (pa - pb) / se
    }
}

fn criterion_6(out: &mut Outcome, p: &Planted) -> stylespace::pipeline::AttrSummary {
    let (g, bank) = (&p.generator, &p.bank);
    let truth = g.planted_truth().unwrap();
    let layout = g.layout();
    // θ from 1000 exemplars: the lowest 10% of a 10k bank
    let mut top1 = 0;
    for (a, name) in bank.meta.attributes.iter().enumerate() {
        let pool = positive_exemplars(bank, a, 0.1);
        let r = rank_from_exemplars(bank, layout, a, &pool[..pool.len().min(1000)], &RankOptions::default()).unwrap();
        if r.top(1)[0].channel == truth.attribute(name).unwrap().channel {
            top1 += 1;
        }
    }
    let attrs = bank.meta.attributes.len();
    let cfg = AttrConfig::default();
    let (summary, _) = attr_analysis(g, bank, Some(&p.local), &cfg).unwrap();
    let pooled = |n: usize, restricted: bool| -> (usize, usize) {
        summary
            .fewshot
            .iter()
            .filter(|f| f.n_examples == n && f.restricted == restricted)
            .fold((0, 0), |acc, f| (acc.0 + f.successes, acc.1 + f.trials))
    };
    let acc = |x: (usize, usize)| x.0 as f64 / x.1 as f64;
    let r20 = pooled(20, true);
    let worst20 = summary
        .fewshot
        .iter()
        .filter(|f| f.n_examples == 20 && f.restricted)
        .map(|f| f.accuracy)
        .fold(1.0, f64::min);
    let (r10, r30) = (pooled(10, true), pooled(30, true));
    let z1 = decrease_z(r10, r20);
    let z2 = decrease_z(r20, r30);
    // one-sided 95%
    let monotone = z1 < 1.645 && z2 < 1.645;
    let u = [pooled(10, false), pooled(20, false), pooled(30, false)];
    out.record(
        6,
        top1 * 10 >= attrs * 9 && acc(r20) >= 0.9 && monotone,
        format!(
            "θ top-1 = designated for {top1}/{attrs}; restricted top-5 n=20 accuracy {:.3} (worst attribute {worst20:.3}); \
             n=10/20/30 {:.3}/{:.3}/{:.3}, decrease z {z1:.2}/{z2:.2} (< 1.645); unrestricted {:.3}/{:.3}/{:.3} [info]",
            acc(r20),
            acc(r10),
            acc(r20),
            acc(r30),
            acc(u[0]),
            acc(u[1]),
            acc(u[2])
        ),
    );
    summary
}

fn criteria_7_8(out: &mut Outcome, p: &Planted, attrs: &stylespace::pipeline::AttrSummary) {
    let (g, bank) = (&p.generator, &p.bank);
    let cfg = AdRunConfig::default();
    let (curves, _) = ad_report(g, bank, attrs, &cfg).unwrap();
    let mut below = 0;
    let mut comparisons = 0;
    let mut worst_nc: f64 = 0.0;
    let mut max_ge_mean = true;
    let mut control_ok = true;
    let mut control_worst: f64 = 0.0;
    let mut contract_ok = true;
    let mut max_iter = 0;
    let mut converged = 0;
    let (mut ch_sum, mut w_sum) = (0.0, 0.0);
    for pair in curves.chunks(2) {
        let (ch, w) = (&pair[0], &pair[1]);
        assert!(ch.direction.starts_with("channel") && w.direction == "w");
        for (pc, pw) in ch.points.iter().zip(&w.points) {
            for p in [pc, pw] {
                worst_nc = worst_nc.max(p.nonconverged_fraction());
                max_ge_mean &= p.max_ad >= p.mean_ad;
                max_iter = max_iter.max(p.max_iterations);
                if p.r == 0.0 {
                    let z = if p.signed_std_err > 0.0 { p.signed_mean.abs() / p.signed_std_err } else if p.signed_mean == 0.0 { 0.0 } else { f64::INFINITY };
                    control_worst = control_worst.max(z);
                    control_ok &= z <= 3.0;
                }
            }
            if pc.r > 0.0 {
                comparisons += 1;
                below += usize::from(pc.mean_ad < pw.mean_ad);
                ch_sum += pc.mean_ad;
                w_sum += pw.mean_ad;
            }
        }
        for c in [ch, w] {
            for (p, outcomes) in c.points.iter().zip(&c.outcomes) {
                if p.r == 0.0 {
                    continue;
                }
                let tol = 0.05 * bank.stats.logit_std[bank.meta.classifier.index_of(&c.attribute).unwrap()];
                for o in outcomes.iter().filter(|o| o.strength.is_some()) {
                    converged += 1;
                    contract_ok &= o.target_error < tol;
                }
            }
        }
    }
    out.record(
        7,
        below == comparisons && worst_nc < 0.1 && max_ge_mean && control_ok,
        format!(
            "channel mean-AD below W at {below}/{comparisons} (attribute, r>0) points (mean {:.4} vs {:.4}); \
             worst nonconverged {:.1}%; max ≥ mean {}; worst control |signed mean|/SE {control_worst:.2} (≤ 3)",
            ch_sum / comparisons as f64,
            w_sum / comparisons as f64,
            100.0 * worst_nc,
            if max_ge_mean { "everywhere" } else { "VIOLATED" }
        ),
    );

    // synthetic monotone logits on top of the AD runs
    let mut rng = Rng::new(108, 0);
    let mut synthetic = 0;
    for _ in 0..1000 {
        let (slope, power) = (0.05 + 20.0 * rng.uniform(), 0.3 + 2.7 * rng.uniform());
        let (l0, delta, sigma, m_max) = (rng.normal(), 4.0 * rng.uniform(), 0.2 + rng.uniform(), 0.5 + 50.0 * rng.uniform());
        let f = |m: f64| Ok(l0 - slope * m.powf(power));
        let r = find_strength(f, l0, delta, sigma, m_max, &BisectionConfig::default()).unwrap();
        max_iter = max_iter.max(r.iterations);
        if r.strength.is_some() {
            synthetic += 1;
            contract_ok &= (r.final_logit - (l0 - delta)).abs() < 0.05 * sigma;
        }
    }
    out.record(
        8,
        contract_ok && max_iter <= 20,
        format!(
            "{converged} converged AD strengths + {synthetic} synthetic all within 0.05·σ: {}; max iterations {max_iter} (≤ 20)",
            if contract_ok { "yes" } else { "NO" }
        ),
    );
}

// ---------------------------------------------------------------- 9

fn criterion_9(out: &mut Outcome) {
    let g = Generator::new(GeneratorConfig::desk_stylegan(1)).unwrap();
    let bank = bank_for(&g, 2000, 5);
    let realism = realism_from_bank(&g, &bank, 2000, 4, 1e-3).unwrap();
    let targets = sample_targets(&g, 20, 9).unwrap();
    let cfg = InversionConfig::default();
    let dirs: Vec<Direction> = g
        .layout()
        .channels(false)
        .iter()
        .step_by(13)
        .map(|&u| Direction::channel(u, 1.0))
        .collect();
    let m = 5.0;
    let sigma = &bank.stats.style_std;
    let mut err = Vec::new();
    let mut degr = Vec::new();
    let mut shift = Vec::new();
    let mut monotone = true;
    let t0 = Instant::now();
    for space in [Space::W, Space::WPlus, Space::S] {
        let rs = invert_batch(&g, &targets, space, &cfg).unwrap();
        monotone &= rs.iter().all(|r| r.is_monotone());
        err.push(median(&rs.iter().map(|r| r.error).collect::<Vec<_>>()));
        let per = |f: &dyn Fn(&stylespace::inversion::InversionResult, &Tensor, &Direction) -> f64| -> f64 {
            median(
                &rs.iter()
                    .zip(&targets)
                    .map(|(r, t)| stats::mean(&dirs.iter().map(|d| f(r, t, d)).collect::<Vec<_>>()))
                    .collect::<Vec<_>>(),
            )
        };
        degr.push(per(&|r, t, d| realism_degradation(&g, r, &realism, t, d, m, sigma).unwrap()));
        shift.push(per(&|r, _, d| realism_shift(&g, r, &realism, d, m, sigma).unwrap()));
    }
    let (w, wp, s) = (0, 1, 2);
    out.record(
        9,
        err[s] <= err[wp] && err[wp] <= err[w] && degr[s] >= degr[wp] && degr[wp] >= degr[w] && monotone,
        format!(
            "median error W/W+/S {:.2e}/{:.2e}/{:.2e} (need S ≤ W+ ≤ W); median realism degradation {:.3}/{:.3}/{:.3} \
             (need S ≥ W+ ≥ W); traces monotone {monotone}; marginal shift {:.3}/{:.3}/{:.3} [info]; {:.0}s",
            err[w],
            err[wp],
            err[s],
            degr[w],
            degr[wp],
            degr[s],
            shift[w],
            shift[wp],
            shift[s],
            t0.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- 10

fn pipeline_bytes() -> Vec<(String, Vec<u8>)> {
    let g = planted(1, 0.1);
    let bank = bank_for(&g, 3000, 11);
    let mut files = Vec::new();
    let (_, dci) = dci_report(&bank, None, &[Space::Z, Space::W, Space::S], &DciConfig::default()).unwrap();
    let local_cfg = LocalConfig {
        samples: 300,
        ..Default::default()
    };
    let (found, local) = local_report(&g, &bank, &local_cfg).unwrap();
    let attr_cfg = AttrConfig {
        trials: 50,
        ..Default::default()
    };
    let (summary, attr) = attr_report(&g, &bank, Some(&found), &attr_cfg).unwrap();
    let ad_cfg = AdRunConfig {
        ad: stylespace::manip_ad::AdConfig {
            max_candidates: Some(30),
            ..AdRunConfig::default().ad
        },
        attributes: Some(vec!["tile0_luminance".into(), "tile3_stripe".into()]),
        ..Default::default()
    };
    let (_, ad) = ad_report(&g, &bank, &summary, &ad_cfg).unwrap();
    for r in [dci, local, attr, ad] {
        files.extend(r.files);
    }
    files
}

fn criterion_10(out: &mut Outcome) {
    let a = pipeline_bytes();
    let b = pipeline_bytes();
    let same = a == b;
    let csv_json = a.iter().filter(|(n, _)| n.ends_with(".csv") || n.ends_with(".json")).count();
    out.record(
        10,
        same && csv_json == a.len(),
        format!("{} report files (bank → dci → local → attr → ad) byte-identical across two runs: {same}", a.len()),
    );
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters from the harness-less runner
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let t0 = Instant::now();
    let mut out = Outcome { failed: Vec::new() };
    criterion_1(&mut out);
    criterion_2(&mut out);
    criterion_3(&mut out);
    criterion_4(&mut out);
    let planted = criterion_5(&mut out);
    let attrs = criterion_6(&mut out, &planted);
    criteria_7_8(&mut out, &planted, &attrs);
    criterion_9(&mut out);
    criterion_10(&mut out);
    println!("acceptance finished in {:.0}s", t0.elapsed().as_secs_f64());
    if out.failed.is_empty() {
        println!("all 10 criteria PASS");
        ExitCode::SUCCESS
    } else {
        println!("FAILED criteria: {:?}", out.failed);
        ExitCode::FAILURE
    }
}
