//! Latent optimization: project a target image into Z, W, W+ or S.
//!
//! Plain gradient descent on mean squared pixel error with a backtracking
//! step rule (halve on increase, grow after an accepted step), so the
//! recorded loss trace never increases. The recovered code is always
//! reported in S as well, which is where manipulations are applied.

use serde::{Deserialize, Serialize};

use crate::dci::Space;
use crate::error::{Error, Result};
use crate::generator::{Generator, LatentW, LatentWPlus, LatentZ, NoiseInputs, StyleVector};
use crate::manip_ad::{manipulate, Direction};
use crate::numerics::linalg::{mean_and_covariance, Cholesky};
use crate::numerics::{Rng, Tensor};
use crate::testbed::ImageBank;

mod realism;

pub use realism::RealismModel;

/// How the latent gradient is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Reverse pass through the synthesis network (one backward per step).
    Adjoint,
    /// One forward tangent per latent coordinate.
    Forward,
    /// Central differences of the loss; slow, for cross-checking.
    FiniteDifference,
}

/// How the trial step size is proposed before backtracking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Grow the last accepted step by `growth`.
    Growth,
    /// Barzilai–Borwein `|Δx|² / ⟨Δx, Δg⟩`, falling back to growth when the
    /// curvature estimate is not positive.
    BarzilaiBorwein,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionConfig {
    pub steps: usize,
    pub step_size: f64,
    /// Step multiplier after an accepted step (1 disables growth).
    pub growth: f64,
    pub step_rule: StepRule,
    /// Halvings tried before giving up on a step; the run stops there.
    pub max_halvings: usize,
    pub gradient: GradientMode,
    /// Noise planes held fixed during optimization.
    pub noise_seed: u64,
    pub fd_step: f64,
    /// Stop once the loss is at or below this value.
    pub target_loss: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            step_size: 1.0,
            growth: 1.5,
            step_rule: StepRule::BarzilaiBorwein,
            max_halvings: 40,
            gradient: GradientMode::Adjoint,
            noise_seed: 0,
            fd_step: 1e-6,
            target_loss: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InversionResult {
    pub space: Space,
    /// Recovered code in the optimized space, flattened.
    pub latent: Vec<f64>,
    /// The same code pushed to S.
    pub styles: Vec<f64>,
    pub initial_error: f64,
    /// Mean squared pixel error of `latent`.
    pub error: f64,
    /// Loss after each accepted step.
    pub trace: Vec<f64>,
    pub steps: usize,
    pub noise_seed: u64,
}

impl InversionResult {
    pub fn style_vector(&self) -> StyleVector {
        StyleVector(self.styles.clone())
    }

    pub fn is_monotone(&self) -> bool {
        let mut prev = self.initial_error;
        self.trace.iter().all(|&l| {
            let ok = l <= prev;
            prev = l;
            ok
        })
    }
}

/// Mean squared difference between two images.
pub fn reconstruction_error(image: &Tensor, target: &Tensor) -> Result<f64> {
    image.same_shape(target)?;
    Ok(image.sub(target)?.norm_sq() / image.len() as f64)
}

/// Number of coordinates of a latent in `space`.
pub fn latent_dim(generator: &Generator, space: Space) -> usize {
    let cfg = generator.config();
    match space {
        Space::Z => cfg.z_dim,
        Space::W => cfg.w_dim,
        Space::WPlus => cfg.w_dim * generator.layout().wplus_slots(),
        Space::S => generator.layout().total(),
    }
}

const MEAN_W_SAMPLES: usize = 4096;

/// Average `w` over a fixed-seed sample of the mapping network.
pub fn mean_w(generator: &Generator) -> LatentW {
    let mut rng = Rng::new(generator.config().seed, 0x6d65_616e);
    let d = generator.config().w_dim;
    let mut acc = vec![0.0; d];
    for _ in 0..MEAN_W_SAMPLES {
        let w = generator.sample_w(&mut rng);
        acc.iter_mut().zip(&w.0).for_each(|(a, b)| *a += b);
    }
    LatentW(acc.into_iter().map(|v| v / MEAN_W_SAMPLES as f64).collect())
}

/// Population-mean starting point, lifted into each space from the same `w̄`
/// so that the feasible sets share an initializer.
pub fn mean_latent(generator: &Generator, space: Space) -> Result<Vec<f64>> {
    let w = mean_w(generator);
    let slots = generator.layout().wplus_slots();
    Ok(match space {
        Space::Z => vec![0.0; generator.config().z_dim],
        Space::W => w.0,
        Space::WPlus => LatentWPlus::broadcast(&w, slots).flatten(),
        Space::S => generator.styles_from_w(&w)?.0,
    })
}

/// Pushes a latent of `space` to flat styles.
pub fn latent_to_styles(generator: &Generator, space: Space, x: &[f64]) -> Result<Vec<f64>> {
    let expected = latent_dim(generator, space);
    if x.len() != expected {
        return Err(Error::dim(format!("{space} latent"), expected, x.len()));
    }
    let slots = generator.layout().wplus_slots();
    Ok(match space {
        Space::Z => {
            let w = generator.map_z_to_w(&LatentZ(x.to_vec()))?;
            generator.styles_from_w(&w)?.0
        }
        Space::W => generator.styles_from_w(&LatentW(x.to_vec()))?.0,
        Space::WPlus => generator.w_to_styles(&LatentWPlus::from_flat(x, slots)?)?.0,
        Space::S => x.to_vec(),
    })
}

struct Problem<'a> {
    generator: &'a Generator,
    target: &'a Tensor,
    noise: NoiseInputs,
    space: Space,
}

impl Problem<'_> {
    fn loss(&self, x: &[f64]) -> Result<f64> {
        let s = latent_to_styles(self.generator, self.space, x)?;
        let img = self.generator.synthesize_flat(&s, &self.noise)?;
        reconstruction_error(&img, self.target)
    }

    /// d(styles)/d(x_i) for every latent coordinate.
    fn style_tangents(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let g = self.generator;
        let layout = g.layout();
        let slots = layout.wplus_slots();
        let wd = g.config().w_dim;
        let lift = |dw: LatentWPlus| g.affine().apply_linear(layout, &dw);
        match self.space {
            Space::S => (0..x.len())
                .map(|i| {
                    let mut e = vec![0.0; x.len()];
                    e[i] = 1.0;
                    e
                })
                .collect(),
            Space::W => (0..wd)
                .map(|i| {
                    let mut e = vec![0.0; wd];
                    e[i] = 1.0;
                    lift(LatentWPlus::broadcast(&LatentW(e), slots))
                })
                .collect(),
            Space::WPlus => (0..x.len())
                .map(|i| {
                    let mut e = vec![0.0; x.len()];
                    e[i] = 1.0;
                    lift(LatentWPlus::from_flat(&e, slots).expect("sized by slots"))
                })
                .collect(),
            Space::Z => {
                // Jacobian rows via the mapping's reverse pass, then columns.
                let z = LatentZ(x.to_vec());
                let rows: Vec<Vec<f64>> = (0..wd)
                    .map(|j| {
                        let mut e = vec![0.0; wd];
                        e[j] = 1.0;
                        g.mapping().backward(&z, &e)
                    })
                    .collect();
                (0..x.len())
                    .map(|i| {
                        let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
                        lift(LatentWPlus::broadcast(&LatentW(col), slots))
                    })
                    .collect()
            }
        }
    }

    fn gradient(&self, x: &[f64], cfg: &InversionConfig) -> Result<Vec<f64>> {
        match cfg.gradient {
            GradientMode::FiniteDifference => {
                let h = cfg.fd_step;
                let mut g = vec![0.0; x.len()];
                let mut xp = x.to_vec();
                for i in 0..x.len() {
                    xp[i] = x[i] + h;
                    let up = self.loss(&xp)?;
                    xp[i] = x[i] - h;
                    let dn = self.loss(&xp)?;
                    xp[i] = x[i];
                    g[i] = (up - dn) / (2.0 * h);
                }
                Ok(g)
            }
            GradientMode::Forward => {
                let s = latent_to_styles(self.generator, self.space, x)?;
                let img = self.generator.synthesize_flat(&s, &self.noise)?;
                let resid = img.sub(self.target)?;
                let k = 2.0 / img.len() as f64;
                self.style_tangents(x)
                    .iter()
                    .map(|ds| {
                        let (_, t) = self.generator.synthesize_jvp(&s, &self.noise, ds)?;
                        Ok(k * resid.dot(&t)?)
                    })
                    .collect()
            }
            GradientMode::Adjoint => {
                let g = self.generator;
                let layout = g.layout();
                let s = latent_to_styles(g, self.space, x)?;
                let img = g.synthesize_flat(&s, &self.noise)?;
                let cot = img.sub(self.target)?.scale(2.0 / img.len() as f64);
                let gs = g.vjp(&s, &self.noise, &cot)?;
                if self.space == Space::S {
                    return Ok(gs);
                }
                let gwp = g.affine().backward(layout, &gs);
                if self.space == Space::WPlus {
                    return Ok(gwp.flatten());
                }
                let mut gw = vec![0.0; g.config().w_dim];
                for row in &gwp.0 {
                    gw.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                if self.space == Space::W {
                    return Ok(gw);
                }
                Ok(g.mapping().backward(&LatentZ(x.to_vec()), &gw))
            }
        }
    }
}

/// Inverts `target` into `space`. `init` defaults to [`mean_latent`].
pub fn invert(
    generator: &Generator,
    target: &Tensor,
    space: Space,
    init: Option<&[f64]>,
    cfg: &InversionConfig,
) -> Result<InversionResult> {
    let shape = generator.output_shape();
    if target.shape() != shape {
        return Err(Error::dim("target", shape.iter().product(), target.len()));
    }
    if cfg.steps == 0 {
        return Err(Error::Argument("inversion needs at least one step".into()));
    }
    if !(cfg.step_size > 0.0) || !(cfg.growth >= 1.0) {
        return Err(Error::Argument("step size must be positive and growth ≥ 1".into()));
    }
    let mut x = match init {
        Some(v) => v.to_vec(),
        None => mean_latent(generator, space)?,
    };
    let problem = Problem {
        generator,
        target,
        noise: generator.noise(cfg.noise_seed),
        space,
    };
    let initial_error = problem.loss(&x)?;
    let mut loss = initial_error;
    let mut eta = cfg.step_size;
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    'outer: for _ in 0..cfg.steps {
        if loss <= cfg.target_loss {
            break;
        }
        let g = problem.gradient(&x, cfg)?;
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
        if let (StepRule::BarzilaiBorwein, Some((px, pg))) = (cfg.step_rule, &prev) {
            let (mut ss, mut sy) = (0.0, 0.0);
            for i in 0..x.len() {
                let (dx, dg) = (x[i] - px[i], g[i] - pg[i]);
                ss += dx * dx;
                sy += dx * dg;
            }
            if sy > 0.0 && ss > 0.0 {
                eta = ss / sy;
            }
        }
        prev = Some((x.clone(), g.clone()));
        let mut halvings = 0;
        loop {
            let cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - eta * b).collect();
            let l = problem.loss(&cand).unwrap_or(f64::INFINITY);
            if l <= loss {
                x = cand;
                loss = l;
                eta *= cfg.growth;
                break;
            }
            eta *= 0.5;
            halvings += 1;
            if halvings > cfg.max_halvings {
                break 'outer;
            }
        }
        trace.push(loss);
    }
    let styles = latent_to_styles(generator, space, &x)?;
    Ok(InversionResult {
        space,
        latent: x,
        styles,
        initial_error,
        error: loss,
        steps: trace.len(),
        trace,
        noise_seed: cfg.noise_seed,
    })
}

pub const WARM_START_STEPS: usize = 50;

/// Short S-space refinement from an externally supplied code (e.g. an
/// encoder's output or a previous inversion).
pub fn warm_start_invert(
    generator: &Generator,
    target: &Tensor,
    init: &StyleVector,
    cfg: &InversionConfig,
) -> Result<InversionResult> {
    init.check(generator.layout())?;
    let cfg = InversionConfig {
        steps: WARM_START_STEPS,
        ..cfg.clone()
    };
    invert(generator, target, Space::S, Some(init.values()), &cfg)
}

/// Generator-produced targets that W alone cannot reach: every W+ slot gets
/// its own `w`, and the noise seed differs from the one held fixed while
/// inverting (noise is not optimized).
pub fn sample_targets(generator: &Generator, n: usize, seed: u64) -> Result<Vec<Tensor>> {
    let slots = generator.layout().wplus_slots();
    crate::exec::try_map_range(n, |i| {
        let mut rng = Rng::new(seed, 0x7461_7267 + i as u64);
        let wp = generator.sample_wplus(&mut rng, slots);
        let noise = generator.noise(crate::numerics::derive_seed(seed, 0x7461_7267 + i as u64));
        generator.synthesize(&generator.w_to_styles(&wp)?, &noise)
    })
}

/// Inverts several targets independently (in parallel when enabled).
pub fn invert_batch(
    generator: &Generator,
    targets: &[Tensor],
    space: Space,
    cfg: &InversionConfig,
) -> Result<Vec<InversionResult>> {
    crate::exec::try_map_range(targets.len(), |i| invert(generator, &targets[i], space, None, cfg))
}

/// Realism score of the recovered code after stepping `m` along `dir` in S.
pub fn manipulability_probe(
    generator: &Generator,
    result: &InversionResult,
    realism: &RealismModel,
    dir: &Direction,
    m: f64,
    sigma: &[f64],
) -> Result<f64> {
    let s = manipulate(&result.style_vector(), dir, m, sigma)?;
    let img = generator.synthesize(&s, &generator.noise(result.noise_seed))?;
    realism.score(&img)
}

/// How much less bank-like the edited reconstruction is than the target it
/// was recovered from: `probe(m) − score(target)`.
pub fn realism_degradation(
    generator: &Generator,
    result: &InversionResult,
    realism: &RealismModel,
    target: &Tensor,
    dir: &Direction,
    m: f64,
    sigma: &[f64],
) -> Result<f64> {
    Ok(manipulability_probe(generator, result, realism, dir, m, sigma)? - realism.score(target)?)
}

/// Marginal effect of the edit alone: `probe(m) − probe(0)`.
pub fn realism_shift(
    generator: &Generator,
    result: &InversionResult,
    realism: &RealismModel,
    dir: &Direction,
    m: f64,
    sigma: &[f64],
) -> Result<f64> {
    Ok(manipulability_probe(generator, result, realism, dir, m, sigma)?
        - manipulability_probe(generator, result, realism, dir, 0.0, sigma)?)
}

/// Fits the realism model on the first `n` bank images.
pub fn realism_from_bank(
    generator: &Generator,
    bank: &ImageBank,
    n: usize,
    tiles: usize,
    ridge: f64,
) -> Result<RealismModel> {
    bank.check_generator(generator)?;
    let n = n.min(bank.len());
    let images = crate::exec::try_map_range(n, |i| bank.entries[i].image(generator))?;
    RealismModel::fit(&images, tiles, ridge)
}
