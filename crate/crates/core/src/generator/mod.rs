//! Style-modulated generators and the Z -> W -> S plumbing they share.

pub mod latent;
pub mod layout;
pub mod planted;
pub mod stylegan;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use latent::{AffineInit, LatentW, LatentWPlus, LatentZ, MappingNetwork, NoiseInputs, StyleAffine, StyleVector};
pub use layout::{build_layout, ChannelId, LayerSpec, LayoutConfig, StyleKind, StyleLayout};
pub use planted::{AttributeKind, PlantedAttribute, PlantedConfig, PlantedGroundTruth};
pub use stylegan::{modulate_weights, modulated_conv, StyleGanConfig};

use crate::error::{Error, Result};
use crate::numerics::{Differentiable, DualTensor, Rng, Tensor};
use planted::PlantedSynthesis;
use stylegan::StyleGanSynthesis;

const STREAM_MAPPING: u64 = 1;
const STREAM_AFFINE: u64 = 2;
const STREAM_BODY: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum GeneratorKind {
    StyleGan(StyleGanConfig),
    Planted(PlantedConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub layout: LayoutConfig,
    pub z_dim: usize,
    pub w_dim: usize,
    pub mapping_depth: usize,
    pub mapping_slope: f64,
    pub affine: AffineInit,
    pub kind: GeneratorKind,
}

impl GeneratorConfig {
    fn desk(seed: u64, kind: GeneratorKind) -> Self {
        Self {
            seed,
            layout: LayoutConfig {
                resolutions: vec![4, 8, 16, 32],
                widths: vec![16, 16, 16, 8],
            },
            z_dim: 16,
            w_dim: 16,
            mapping_depth: 2,
            mapping_slope: 0.2,
            affine: AffineInit::default(),
            kind,
        }
    }

    /// Default desk-scale StyleGAN2 miniature: 4 -> 32 px, 160 style channels.
    pub fn desk_stylegan(seed: u64) -> Self {
        Self::desk(seed, GeneratorKind::StyleGan(StyleGanConfig::default()))
    }

    /// Default planted testbed on the desk layout with leakage `epsilon`.
    pub fn desk_planted(seed: u64, epsilon: f64) -> Self {
        Self::desk(
            seed,
            GeneratorKind::Planted(PlantedConfig {
                epsilon,
                ..PlantedConfig::default()
            }),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("generator config: {e}")))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug)]
enum Body {
    StyleGan(StyleGanSynthesis),
    Planted(Box<PlantedSynthesis>, PlantedGroundTruth),
}

/// A generator: mapping network, per-layer affines and a synthesis body.
///
/// Immutable after construction; all methods are pure.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    layout: StyleLayout,
    mapping: MappingNetwork,
    affine: StyleAffine,
    body: Body,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        let layout = build_layout(&config.layout)?;
        if config.z_dim == 0 || config.w_dim == 0 {
            return Err(Error::Config("latent dimensions must be positive".into()));
        }
        let mapping = MappingNetwork::new(
            config.z_dim,
            config.w_dim,
            config.mapping_depth,
            config.mapping_slope,
            &mut Rng::new(config.seed, STREAM_MAPPING),
        )?;
        let affine = StyleAffine::new(&layout, config.w_dim, &config.affine, &mut Rng::new(config.seed, STREAM_AFFINE));
        let mut rng = Rng::new(config.seed, STREAM_BODY);
        let body = match &config.kind {
            GeneratorKind::StyleGan(c) => Body::StyleGan(StyleGanSynthesis::new(&layout, c.clone(), &mut rng)?),
            GeneratorKind::Planted(c) => {
                let (p, truth) = PlantedSynthesis::new(&layout, &affine, c.clone(), &mut rng)?;
                Body::Planted(Box::new(p), truth)
            }
        };
        Ok(Self {
            config,
            layout,
            mapping,
            affine,
            body,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn layout(&self) -> &StyleLayout {
        &self.layout
    }

    pub fn mapping(&self) -> &MappingNetwork {
        &self.mapping
    }

    pub fn affine(&self) -> &StyleAffine {
        &self.affine
    }

    pub fn is_planted(&self) -> bool {
        matches!(self.body, Body::Planted(..))
    }

    pub fn planted_truth(&self) -> Option<&PlantedGroundTruth> {
        match &self.body {
            Body::Planted(_, t) => Some(t),
            Body::StyleGan(_) => None,
        }
    }

    /// The StyleGAN body, if this is one (exposes raw weights for reference code).
    pub fn stylegan(&self) -> Option<&StyleGanSynthesis> {
        match &self.body {
            Body::StyleGan(b) => Some(b),
            Body::Planted(..) => None,
        }
    }

    pub fn resolution(&self) -> usize {
        *self.layout.resolutions().last().expect("non-empty layout")
    }

    pub fn output_shape(&self) -> [usize; 3] {
        let r = self.resolution();
        [3, r, r]
    }

    pub fn noise_shapes(&self) -> Vec<[usize; 3]> {
        match &self.body {
            Body::StyleGan(_) => StyleGanSynthesis::noise_shapes(&self.layout),
            Body::Planted(p, _) => p.noise_shapes(),
        }
    }

    pub fn noise(&self, seed: u64) -> NoiseInputs {
        NoiseInputs::generate(seed, &self.noise_shapes())
    }

    pub fn map_z_to_w(&self, z: &LatentZ) -> Result<LatentW> {
        self.mapping.forward(z)
    }

    pub fn w_to_styles(&self, wplus: &LatentWPlus) -> Result<StyleVector> {
        self.affine.apply(&self.layout, wplus)
    }

    /// Styles of a single `w` broadcast to every W+ slot.
    pub fn styles_from_w(&self, w: &LatentW) -> Result<StyleVector> {
        self.w_to_styles(&LatentWPlus::broadcast(w, self.layout.wplus_slots()))
    }

    pub fn sample_z(&self, rng: &mut Rng) -> LatentZ {
        LatentZ(rng.normal_vec(self.config.z_dim))
    }

    pub fn sample_w(&self, rng: &mut Rng) -> LatentW {
        let z = self.sample_z(rng);
        self.map_z_to_w(&z).expect("sampled z has the right size")
    }

    /// `rows` independent W samples stacked as a W+ code.
    pub fn sample_wplus(&self, rng: &mut Rng, rows: usize) -> LatentWPlus {
        LatentWPlus((0..rows).map(|_| self.sample_w(rng).0).collect())
    }

    fn check_noise(&self, noise: &NoiseInputs) -> Result<()> {
        let shapes = self.noise_shapes();
        if noise.planes.len() != shapes.len() {
            return Err(Error::dim("noise planes", shapes.len(), noise.planes.len()));
        }
        for (i, (p, s)) in noise.planes.iter().zip(&shapes).enumerate() {
            if p.shape() != s {
                return Err(Error::dim(format!("noise plane {i}"), s.iter().product(), p.len()));
            }
        }
        Ok(())
    }

    pub fn synthesize(&self, s: &StyleVector, noise: &NoiseInputs) -> Result<Tensor> {
        self.synthesize_flat(s.values(), noise)
    }

    pub fn synthesize_flat(&self, s: &[f64], noise: &NoiseInputs) -> Result<Tensor> {
        self.check_styles(s)?;
        self.check_noise(noise)?;
        match &self.body {
            Body::StyleGan(b) => Ok(b.forward(&self.layout, s, noise, None)?.0),
            Body::Planted(p, _) => p.forward(s, noise),
        }
    }

    fn check_styles(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.layout.total() {
            return Err(Error::dim("styles", self.layout.total(), s.len()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite style value".into()));
        }
        Ok(())
    }

    /// Image and its directional derivative along `ds`.
    pub fn synthesize_jvp(&self, s: &[f64], noise: &NoiseInputs, ds: &[f64]) -> Result<(Tensor, Tensor)> {
        self.check_styles(s)?;
        self.check_noise(noise)?;
        if ds.len() != s.len() {
            return Err(Error::dim("style tangent", s.len(), ds.len()));
        }
        match &self.body {
            Body::StyleGan(b) => {
                let (img, t) = b.forward(&self.layout, s, noise, Some(ds))?;
                Ok((img, t.expect("tangent requested")))
            }
            Body::Planted(p, _) => Ok((p.forward(s, noise)?, p.jvp(s, ds))),
        }
    }

    /// Derivative of the image with respect to flat channel `u`.
    pub fn channel_jvp(&self, s: &[f64], noise: &NoiseInputs, u: usize) -> Result<Tensor> {
        if u >= self.layout.total() {
            return Err(Error::Argument(format!("channel {u} out of range")));
        }
        if let Body::Planted(p, _) = &self.body {
            self.check_styles(s)?;
            return Ok(p.channel_tangent(s, u));
        }
        let mut ds = vec![0.0; s.len()];
        ds[u] = 1.0;
        Ok(self.synthesize_jvp(s, noise, &ds)?.1)
    }

    /// Gradient of `<cotangent, image(s)>` with respect to the flat styles.
    pub fn vjp(&self, s: &[f64], noise: &NoiseInputs, cotangent: &Tensor) -> Result<Vec<f64>> {
        self.check_styles(s)?;
        self.check_noise(noise)?;
        match &self.body {
            Body::StyleGan(b) => b.vjp(&self.layout, s, noise, cotangent),
            Body::Planted(p, _) => p.vjp(s, cotangent),
        }
    }
}

/// Builds a planted generator and returns it with its ground truth.
pub fn build_planted(config: GeneratorConfig) -> Result<(Generator, PlantedGroundTruth)> {
    if !matches!(config.kind, GeneratorKind::Planted(_)) {
        return Err(Error::Config("build_planted needs a planted generator config".into()));
    }
    let g = Generator::new(config)?;
    let truth = g.planted_truth().expect("planted body").clone();
    Ok((g, truth))
}

/// Flat styles -> image, with fixed noise, as a [`Differentiable`] pipeline stage.
pub struct SynthesisFn<'a> {
    pub generator: &'a Generator,
    pub noise: &'a NoiseInputs,
}

impl Differentiable for SynthesisFn<'_> {
    fn eval(&self, x: &Tensor) -> Result<Tensor> {
        self.generator.synthesize_flat(x.data(), self.noise)
    }

    fn eval_dual(&self, x: &DualTensor) -> Result<DualTensor> {
        let (img, t) = self
            .generator
            .synthesize_jvp(x.primal().data(), self.noise, x.tangent().data())?;
        DualTensor::new(img, t)
    }

    fn name(&self) -> &str {
        "synthesis"
    }
}
