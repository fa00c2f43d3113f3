use std::path::{Path, PathBuf};

use serde_json::json;
use stylespace::dci::{DciConfig, Space};
use stylespace::generator::{Generator, GeneratorConfig, StyleVector};
use stylespace::inversion::{invert, warm_start_invert, GradientMode, InversionConfig};
use stylespace::io::{grid, read_ppm, write_ppm};
use stylespace::local_detect::{LocalConfig, LocalDetection};
use stylespace::manip_ad::trgb::{perturb_trgb, trgb_response, TrgbGroup};
use stylespace::numerics::{stats, Rng};
use stylespace::pipeline::{self, AdRunConfig, AttrConfig, AttrSummary, Report};
use stylespace::testbed::{build_bank, Classifier, ImageBank, LatentMode};
use stylespace::{Error, Result};

use crate::manifest::{self, Manifest};
use crate::{
    AdArgs, AttrArgs, BankArgs, BankInput, Cli, Command, ConfigArgs, DciArgs, GeneratorArgs, Gradient, InvertArgs, Kind,
    LocalArgs, Mode, TrgbArgs,
};

const GENERATOR_FILE: &str = "generator.json";

pub fn run(cli: &Cli) -> Result<()> {
    let out = &cli.out;
    match &cli.command {
        Command::Config(a) => cmd_config(out, a),
        Command::Bank(a) => cmd_bank(out, a),
        Command::Dci(a) => cmd_dci(out, a),
        Command::Local(a) => cmd_local(out, a),
        Command::Attr(a) => cmd_attr(out, a),
        Command::Ad(a) => cmd_ad(out, a),
        Command::Trgb(a) => cmd_trgb(out, a),
        Command::Invert(a) => cmd_invert(out, a),
    }
}

fn or_default(p: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| out.join(name))
}

fn read_config(path: &Path) -> Result<GeneratorConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read generator config {}: {e}", path.display())))?;
    GeneratorConfig::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn resolve_config(a: &GeneratorArgs) -> Result<GeneratorConfig> {
    if let Some(p) = &a.config {
        return read_config(p);
    }
    if !(a.epsilon >= 0.0 && a.epsilon <= 1.0) {
        return Err(Error::Config(format!("epsilon {} outside [0, 1]", a.epsilon)));
    }
    Ok(match a.kind {
        Kind::Planted => GeneratorConfig::desk_planted(a.gen_seed, a.epsilon),
        Kind::Stylegan => GeneratorConfig::desk_stylegan(a.gen_seed),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_config(out: &Path, a: &ConfigArgs) -> Result<()> {
    let cfg = resolve_config(&a.generator)?;
    Generator::new(cfg.clone())?;
    let path = or_default(&a.output, out, GENERATOR_FILE);
    write_text(&path, &(cfg.to_json()? + "\n"))?;
    println!("wrote {} (generator {})", path.display(), &cfg.hash()[..12]);
    Ok(())
}

fn cmd_bank(out: &Path, a: &BankArgs) -> Result<()> {
    let cfg = resolve_config(&a.generator)?;
    let generator = Generator::new(cfg.clone())?;
    let classifier = Classifier::for_generator(&generator)?;
    let mode = match a.mode {
        Mode::W => LatentMode::W,
        Mode::Wplus => LatentMode::WPlus,
    };
    let dir = or_default(&a.dir, out, "bank");
    let bank = build_bank(&generator, &classifier, a.n, a.seed, mode)?;
    bank.save(&dir)?;
    write_text(&dir.join(GENERATOR_FILE), &(cfg.to_json()? + "\n"))?;
    // self-check: reload recomputes the population statistics
    let reloaded = ImageBank::load(&dir)?;
    if reloaded.content_hash() != bank.content_hash() {
        return Err(Error::Data("bank did not survive a save/load round trip".into()));
    }
    let mut report = Report::default();
    for name in ["bank.json", "styles.bin", "z.bin", "w.bin", "logits.csv", GENERATOR_FILE] {
        report.add(name, std::fs::read(dir.join(name))?);
    }
    Manifest::new(
        "bank",
        json!({ "n": a.n, "seed": a.seed, "mode": format!("{:?}", a.mode).to_lowercase(), "generator": cfg }),
        cfg.hash(),
    )
    .bank(bank.content_hash())
    .write_with(&dir, &report)?;
    println!(
        "bank: {} entries, {} attributes, {} style channels -> {}",
        bank.len(),
        bank.meta.attributes.len(),
        generator.layout().total(),
        dir.display()
    );
    Ok(())
}

/// Bank plus the generator that built it.
fn load_bank(out: &Path, input: &BankInput) -> Result<(ImageBank, Generator)> {
    let dir = or_default(&input.bank, out, "bank");
    load_bank_dir(&dir, input.config.as_deref())
}

fn load_bank_dir(dir: &Path, config: Option<&Path>) -> Result<(ImageBank, Generator)> {
    let bank = ImageBank::load(dir)?;
    let cfg = match config {
        Some(p) => read_config(p)?,
        None => {
            let p = dir.join(GENERATOR_FILE);
            if !p.exists() {
                return Err(Error::Missing(format!("{} has no {GENERATOR_FILE}", dir.display())));
            }
            read_config(&p)?
        }
    };
    let generator = Generator::new(cfg)?;
    bank.check_generator(&generator)?;
    Ok((bank, generator))
}

fn output_hash(manifest: &serde_json::Value, name: &str) -> String {
    manifest["outputs"][name].as_str().unwrap_or_default().to_string()
}

fn parse_spaces(text: &str) -> Result<Vec<Space>> {
    let spaces = text
        .split(',')
        .map(|s| s.trim().parse::<Space>())
        .collect::<Result<Vec<_>>>()?;
    if spaces.is_empty() {
        return Err(Error::Argument("no spaces requested".into()));
    }
    Ok(spaces)
}

fn cmd_dci(out: &Path, a: &DciArgs) -> Result<()> {
    let spaces = parse_spaces(&a.spaces)?;
    let (bank, generator) = load_bank(out, &a.input)?;
    let wplus = match &a.wplus_bank {
        Some(p) => Some(load_bank_dir(p, a.input.config.as_deref())?.0),
        None => None,
    };
    if spaces.contains(&Space::WPlus) && wplus.is_none() && bank.meta.mode != LatentMode::WPlus {
        return Err(Error::Missing("the W+ space needs --wplus-bank".into()));
    }
    let mut config = DciConfig::default();
    config.lasso.lambda = a.lambda;
    let (reports, report) = pipeline::dci_report(&bank, wplus.as_ref(), &spaces, &config)?;
    let mut m = Manifest::new("dci", json!({ "spaces": a.spaces, "config": config }), generator.config().hash())
        .bank(bank.content_hash());
    if let Some(w) = &wplus {
        m = m.input("wplus_bank", w.content_hash());
    }
    let dir = or_default(&a.output, out, "dci");
    m.write_with(&dir, &report)?;
    for r in &reports {
        println!(
            "{:>3}: D {:.3}  C {:.3}  I {:.3}",
            r.space.to_string(),
            r.disentanglement,
            r.completeness,
            r.informativeness
        );
    }
    Ok(())
}

fn cmd_local(out: &Path, a: &LocalArgs) -> Result<()> {
    let (bank, generator) = load_bank(out, &a.input)?;
    let config = LocalConfig {
        samples: a.samples,
        grid: a.grid,
        d: a.d,
        include_trgb: a.include_trgb,
        ..LocalConfig::default()
    };
    let (found, report) = pipeline::local_report(&generator, &bank, &config)?;
    let dir = or_default(&a.output, out, "local");
    Manifest::new("local", json!({ "config": config }), generator.config().hash())
        .bank(bank.content_hash())
        .write_with(&dir, &report)?;
    println!("local: {} channels accepted over {} samples", found.accepted.len(), found.samples);
    if let Some(summary) = report.get("local_summary.json") {
        let v: serde_json::Value = serde_json::from_slice(summary)?;
        if let (Some(p), Some(r)) = (v["precision"].as_f64(), v["recall"].as_f64()) {
            println!("planted map: precision {p:.3}, recall {r:.3}");
        }
    }
    Ok(())
}

fn cmd_attr(out: &Path, a: &AttrArgs) -> Result<()> {
    let (bank, generator) = load_bank(out, &a.input)?;
    let bank_hash = bank.content_hash();
    let local: Option<LocalDetection> = match &a.local {
        Some(dir) => {
            let m = manifest::read(dir)?;
            manifest::check(dir, &m, &bank_hash)?;
            Some(serde_json::from_str(&std::fs::read_to_string(dir.join("local.json"))?)?)
        }
        None => None,
    };
    let config = AttrConfig {
        exemplar_quantile: a.quantile,
        shots: a.shots.clone(),
        trials: a.trials,
        top_k: a.top_k,
        seed: a.seed,
        ..AttrConfig::default()
    };
    let (summary, report) = pipeline::attr_report(&generator, &bank, local.as_ref(), &config)?;
    let dir = or_default(&a.output, out, "attr");
    let mut m = Manifest::new("attr", json!({ "config": config }), generator.config().hash()).bank(bank_hash);
    if let Some(l) = &a.local {
        m = m.input("local", output_hash(&manifest::read(l)?, "local.json"));
    }
    m.write_with(&dir, &report)?;
    if generator.is_planted() {
        let hits = summary.attributes.iter().filter(|x| x.top_is_verified).count();
        println!("attr: planted channel ranked first for {hits}/{} attributes", summary.attributes.len());
    } else {
        println!("attr: ranked channels for {} attributes", summary.attributes.len());
    }
    for x in &summary.attributes {
        let acc: Vec<String> = summary
            .fewshot
            .iter()
            .filter(|r| r.attribute == x.attribute && (r.restricted || local.is_none()))
            .map(|r| format!("n={}:{:.3}", r.n_examples, r.accuracy))
            .collect();
        println!("  {:<20} top-{} {}", x.attribute, a.top_k, acc.join(" "));
    }
    Ok(())
}

fn cmd_ad(out: &Path, a: &AdArgs) -> Result<()> {
    let (bank, generator) = load_bank(out, &a.input)?;
    let bank_hash = bank.content_hash();
    let attr_dir = or_default(&a.attr, out, "attr");
    let m = manifest::read(&attr_dir)?;
    manifest::check(&attr_dir, &m, &bank_hash)?;
    let attrs: AttrSummary = serde_json::from_str(&std::fs::read_to_string(attr_dir.join("attr.json"))?)?;
    if a.r.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Argument("--r values must lie in [0, 1]".into()));
    }
    let mut config = AdRunConfig::default();
    config.ad.r_values = a.r.clone();
    config.ad.max_candidates = Some(a.candidates);
    config.attributes = a.attributes.clone();
    let (curves, report) = pipeline::ad_report(&generator, &bank, &attrs, &config)?;
    let dir = or_default(&a.output, out, "ad");
    Manifest::new("ad", json!({ "config": config }), generator.config().hash())
        .bank(bank_hash)
        .input("attr", output_hash(&m, "attr.json"))
        .write_with(&dir, &report)?;
    for c in &curves {
        let row: Vec<String> = c.points.iter().map(|p| format!("{:.2}:{:.4}", p.r, p.mean_ad)).collect();
        println!("{:<20} {:<12} mean-AD {}", c.attribute, c.direction, row.join(" "));
    }
    Ok(())
}

fn cmd_trgb(out: &Path, a: &TrgbArgs) -> Result<()> {
    let (bank, generator) = load_bank(out, &a.input)?;
    let entries = &bank.entries[..a.entries.min(bank.len())];
    let sigma = &bank.stats.style_std;
    let mut csv = String::from("group,mean_change,std_err,entries\n");
    let mut summary = Vec::new();
    let groups = [TrgbGroup::Early, TrgbGroup::Mid, TrgbGroup::Late, TrgbGroup::All];
    for g in groups {
        let resp = trgb_response(&generator, entries, g, a.sigma, sigma, a.seed)?;
        let (m, se) = (stats::mean(&resp), stats::std_error(&resp));
        csv.push_str(&format!("{g},{m:.8},{se:.8},{}\n", resp.len()));
        summary.push(json!({ "group": g.to_string(), "mean_change": m, "std_err": se }));
        println!("{:<6} mean colour change {m:.4} ± {se:.4}", g.to_string());
    }
    // gallery: one row per entry, original then each group
    let mut tiles = Vec::new();
    for (i, e) in entries.iter().take(4).enumerate() {
        let noise = e.noise(&generator);
        tiles.push(generator.synthesize(&e.styles, &noise)?);
        for g in &groups[..3] {
            let mut rng = Rng::new(a.seed, i as u64);
            let s = perturb_trgb(generator.layout(), &e.styles, *g, a.sigma, sigma, &mut rng)?;
            tiles.push(generator.synthesize(&s, &noise)?);
        }
    }
    let mut report = Report::default();
    report.add("trgb.csv", csv);
    report.add_json("trgb.json", &summary)?;
    if !tiles.is_empty() {
        report.add("trgb_gallery.ppm", stylespace::io::encode_ppm(&grid(&tiles, 4)?)?);
    }
    let dir = or_default(&a.output, out, "trgb");
    Manifest::new(
        "trgb",
        json!({ "entries": entries.len(), "sigma": a.sigma, "seed": a.seed }),
        generator.config().hash(),
    )
    .bank(bank.content_hash())
    .write_with(&dir, &report)
}

fn cmd_invert(out: &Path, a: &InvertArgs) -> Result<()> {
    let space: Space = a.space.parse()?;
    let (bank, generator) = load_bank(out, &a.input)?;
    let target = read_ppm(&a.target).map_err(|e| match e {
        Error::Io(io) => Error::Missing(format!("cannot read target {}: {io}", a.target.display())),
        other => other,
    })?;
    let cfg = InversionConfig {
        steps: a.steps,
        step_size: a.step_size,
        gradient: match a.gradient {
            Gradient::Adjoint => GradientMode::Adjoint,
            Gradient::Forward => GradientMode::Forward,
            Gradient::Fd => GradientMode::FiniteDifference,
        },
        noise_seed: a.noise_seed,
        ..InversionConfig::default()
    };
    let result = match &a.warm_start {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Missing(format!("{}: {e}", p.display())))?;
            let init = StyleVector::from_json(generator.layout(), &text)?;
            warm_start_invert(&generator, &target, &init, &cfg)?
        }
        None => invert(&generator, &target, space, None, &cfg)?,
    };
    let recon = generator.synthesize(&result.style_vector(), &generator.noise(result.noise_seed))?;
    let mut report = Report::default();
    report.add_json("inversion.json", &result)?;
    let mut trace = String::from("step,loss\n");
    for (i, l) in result.trace.iter().enumerate() {
        trace.push_str(&format!("{},{l:.10e}\n", i + 1));
    }
    report.add("trace.csv", trace);
    report.add("reconstruction.ppm", stylespace::io::encode_ppm(&recon)?);
    let dir = or_default(&a.output, out, "invert");
    Manifest::new("invert", json!({ "space": result.space, "config": cfg }), generator.config().hash())
        .bank(bank.content_hash())
        .input("target", stylespace::pipeline::sha256_hex(&std::fs::read(&a.target)?))
        .write_with(&dir, &report)?;
    write_ppm(&dir.join("target.ppm"), &target)?;
    println!(
        "invert into {}: error {:.3e} -> {:.3e} in {} steps",
        result.space, result.initial_error, result.error, result.steps
    );
    Ok(())
}
