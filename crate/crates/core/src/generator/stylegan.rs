//! Miniature StyleGAN2 synthesis network.
//!
//! Learned constant -> per resolution { modulated+demodulated conv (s1),
//! upsample, modulated+demodulated conv (s2) } with a tRGB modulated conv
//! (no demodulation) added into an upsampled RGB skip accumulator.

use serde::{Deserialize, Serialize};

use super::latent::NoiseInputs;
use super::layout::{StyleKind, StyleLayout};
use crate::error::{Error, Result};
use crate::numerics::conv::{
    conv2d, conv2d_input_grad, conv2d_weight_grad, upsample2, upsample2_adjoint, Upsample,
};
use crate::numerics::{Rng, Tensor};

/// Demodulation guard added under the square root.
pub const DEMOD_EPS: f64 = 1e-8;
/// Negative slope of the feature activation.
pub const ACT_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleGanConfig {
    pub noise_strength: f64,
    pub upsample: Upsample,
    /// Overall scale of the tRGB weights.
    pub trgb_scale: f64,
    /// tRGB weights at resolution `r` are scaled by `(r / r_out)^exponent`.
    pub trgb_gain_exponent: f64,
    /// Sharpness of the softplus-smoothed leaky ReLU.
    pub activation_sharpness: f64,
}

impl Default for StyleGanConfig {
    fn default() -> Self {
        Self {
            noise_strength: 0.1,
            upsample: Upsample::Bilinear,
            trgb_scale: 0.3,
            trgb_gain_exponent: 1.0,
            activation_sharpness: 4.0,
        }
    }
}

/// Applies per-input-channel styles to `[C_out, C_in, k, k]` weights and,
/// optionally, renormalizes every output channel.
pub fn modulate_weights(weights: &Tensor, style: &[f64], demodulate: bool) -> Result<Tensor> {
    let (co, ci, kk) = weight_dims(weights)?;
    if style.len() != ci {
        return Err(Error::dim("style", ci, style.len()));
    }
    let w = weights.data();
    let mut out = vec![0.0; w.len()];
    for o in 0..co {
        let mut sq = 0.0;
        for i in 0..ci {
            for k in 0..kk {
                let v = style[i] * w[(o * ci + i) * kk + k];
                out[(o * ci + i) * kk + k] = v;
                sq += v * v;
            }
        }
        if demodulate {
            let d = 1.0 / (sq + DEMOD_EPS).sqrt();
            out[o * ci * kk..(o + 1) * ci * kk].iter_mut().for_each(|v| *v *= d);
        }
    }
    Ok(Tensor::from_parts(weights.shape().to_vec(), out))
}

/// Style-modulated convolution with shape-preserving padding.
pub fn modulated_conv(
    features: &Tensor,
    weights: &Tensor,
    style: &[f64],
    demodulate: bool,
) -> Result<Tensor> {
    let wm = modulate_weights(weights, style, demodulate)?;
    let k = weights.shape()[2];
    conv2d(features, &wm, (k - 1) / 2)
}

fn weight_dims(weights: &Tensor) -> Result<(usize, usize, usize)> {
    match weights.shape() {
        &[co, ci, kh, kw] => Ok((co, ci, kh * kw)),
        s => Err(Error::dim("weight rank", 4, s.len())),
    }
}

/// Directional derivative of [`modulate_weights`] along `dstyle`.
fn modulate_tangent(weights: &Tensor, style: &[f64], dstyle: &[f64], demodulate: bool) -> Tensor {
    let (co, ci, kk) = weight_dims(weights).expect("checked by caller");
    let w = weights.data();
    let mut out = vec![0.0; w.len()];
    for o in 0..co {
        if !demodulate {
            for i in 0..ci {
                for k in 0..kk {
                    out[(o * ci + i) * kk + k] = dstyle[i] * w[(o * ci + i) * kk + k];
                }
            }
            continue;
        }
        let mut sq = 0.0;
        let mut dsq = 0.0;
        for i in 0..ci {
            let w2: f64 = (0..kk).map(|k| w[(o * ci + i) * kk + k].powi(2)).sum();
            sq += style[i] * style[i] * w2;
            dsq += style[i] * dstyle[i] * w2;
        }
        let d = (sq + DEMOD_EPS).sqrt();
        let dd = dsq / d;
        for i in 0..ci {
            let coef = dstyle[i] / d - style[i] * dd / (d * d);
            for k in 0..kk {
                out[(o * ci + i) * kk + k] = coef * w[(o * ci + i) * kk + k];
            }
        }
    }
    Tensor::from_parts(weights.shape().to_vec(), out)
}

/// Pulls a gradient with respect to modulated weights back to the styles.
fn modulate_adjoint(weights: &Tensor, style: &[f64], grad: &Tensor, demodulate: bool) -> Vec<f64> {
    let (co, ci, kk) = weight_dims(weights).expect("checked by caller");
    let w = weights.data();
    let g = grad.data();
    let mut gs = vec![0.0; ci];
    for o in 0..co {
        let gw: Vec<f64> = (0..ci)
            .map(|i| (0..kk).map(|k| g[(o * ci + i) * kk + k] * w[(o * ci + i) * kk + k]).sum())
            .collect();
        if !demodulate {
            for i in 0..ci {
                gs[i] += gw[i];
            }
            continue;
        }
        let w2: Vec<f64> = (0..ci)
            .map(|i| (0..kk).map(|k| w[(o * ci + i) * kk + k].powi(2)).sum())
            .collect();
        let sq: f64 = (0..ci).map(|i| style[i] * style[i] * w2[i]).sum();
        let d = (sq + DEMOD_EPS).sqrt();
        let cross: f64 = (0..ci).map(|i| gw[i] * style[i]).sum();
        for i in 0..ci {
            gs[i] += gw[i] / d - cross / (d * d * d) * style[i] * w2[i];
        }
    }
    gs
}

/// Smooth leaky ReLU `√2 (a x + (1 - a)(softplus(βx) - ln 2)/β)`.
#[derive(Clone, Copy, Debug)]
struct Activation {
    beta: f64,
}

impl Activation {
    fn value(&self, x: f64) -> f64 {
        let t = self.beta * x;
        let sp = t.max(0.0) + (-t.abs()).exp().ln_1p();
        std::f64::consts::SQRT_2 * (ACT_SLOPE * x + (1.0 - ACT_SLOPE) * (sp - std::f64::consts::LN_2) / self.beta)
    }

    fn slope(&self, x: f64) -> f64 {
        let sig = 1.0 / (1.0 + (-self.beta * x).exp());
        std::f64::consts::SQRT_2 * (ACT_SLOPE + (1.0 - ACT_SLOPE) * sig)
    }
}

#[derive(Clone, Debug)]
struct Block {
    conv1: Tensor,
    bias1: Vec<f64>,
    conv2: Option<(Tensor, Vec<f64>)>,
    rgb: Tensor,
    rgb_bias: [f64; 3],
    s1_layer: usize,
    s2_layer: Option<usize>,
    trgb_layer: usize,
}

/// Parameters of the miniature synthesis network.
#[derive(Clone, Debug)]
pub struct StyleGanSynthesis {
    config: StyleGanConfig,
    const_input: Tensor,
    blocks: Vec<Block>,
    act: Activation,
}

/// Forward intermediates kept for the adjoint pass.
struct BlockCache {
    x_in: Tensor,
    w1: Tensor,
    a1: Tensor,
    u: Option<Tensor>,
    w2: Option<Tensor>,
    a2: Option<Tensor>,
    x_out: Tensor,
    wr: Tensor,
}

fn gaussian(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), rng.normal_vec(n).into_iter().map(|v| v * scale).collect())
}

fn add_bias_noise(x: &mut Tensor, bias: &[f64], noise: &Tensor, strength: f64) {
    let hw = x.shape()[1] * x.shape()[2];
    let n = noise.data();
    for (c, &b) in bias.iter().enumerate() {
        for (v, nv) in x.plane_mut(c).iter_mut().zip(&n[..hw]) {
            *v += b + strength * nv;
        }
    }
}

fn add_rgb_bias(x: &mut Tensor, bias: &[f64; 3]) {
    for (c, &b) in bias.iter().enumerate() {
        x.plane_mut(c).iter_mut().for_each(|v| *v += b);
    }
}

fn add_into(acc: Option<Tensor>, t: Tensor) -> Tensor {
    match acc {
        Some(a) => a.zip_with(&t, |x, y| x + y),
        None => t,
    }
}

impl StyleGanSynthesis {
    pub fn new(layout: &StyleLayout, config: StyleGanConfig, rng: &mut Rng) -> Result<Self> {
        let res = layout.resolutions();
        let widths = layout.widths();
        let out_res = *res.last().expect("non-empty layout") as f64;
        let const_input = gaussian(&[widths[0], res[0], res[0]], 1.0, rng);
        let mut blocks = Vec::with_capacity(res.len());
        let layer_of = |level: usize, kind: StyleKind| {
            layout
                .layers()
                .iter()
                .find(|l| l.level == level && l.kind == kind)
                .map(|l| l.index)
        };
        for level in 0..res.len() {
            let cin = if level == 0 { widths[0] } else { widths[level - 1] };
            let cout = widths[level];
            // demodulated weights are scale-free; only tRGB is fan-in scaled
            let conv1 = gaussian(&[cout, cin, 3, 3], 1.0, rng);
            let bias1 = rng.normal_vec(cout).into_iter().map(|v| 0.1 * v).collect();
            let conv2 = if level == 0 {
                None
            } else {
                let w = gaussian(&[cout, cout, 3, 3], 1.0, rng);
                let b = rng.normal_vec(cout).into_iter().map(|v| 0.1 * v).collect();
                Some((w, b))
            };
            let gain = config.trgb_scale * (res[level] as f64 / out_res).powf(config.trgb_gain_exponent)
                / (cout as f64).sqrt();
            let rgb = gaussian(&[3, cout, 1, 1], gain, rng);
            let rb = rng.normal_vec(3);
            blocks.push(Block {
                conv1,
                bias1,
                conv2,
                rgb,
                rgb_bias: [0.1 * rb[0], 0.1 * rb[1], 0.1 * rb[2]],
                s1_layer: layer_of(level, StyleKind::S1).expect("s1 layer"),
                s2_layer: layer_of(level, StyleKind::S2),
                trgb_layer: layer_of(level, StyleKind::Trgb).expect("trgb layer"),
            });
        }
        Ok(Self {
            act: Activation {
                beta: config.activation_sharpness,
            },
            config,
            const_input,
            blocks,
        })
    }

    pub fn config(&self) -> &StyleGanConfig {
        &self.config
    }

    pub fn noise_shapes(layout: &StyleLayout) -> Vec<[usize; 3]> {
        let res = layout.resolutions();
        let mut shapes = vec![[1, res[0], res[0]]];
        for level in 1..res.len() {
            shapes.push([1, res[level - 1], res[level - 1]]);
            shapes.push([1, res[level], res[level]]);
        }
        shapes
    }

    /// Conv weights (before modulation) of a feature layer, for reference implementations.
    pub fn raw_weights(&self, layer: usize) -> Option<&Tensor> {
        self.blocks.iter().find_map(|b| {
            if b.s1_layer == layer {
                Some(&b.conv1)
            } else if b.s2_layer == Some(layer) {
                b.conv2.as_ref().map(|(w, _)| w)
            } else if b.trgb_layer == layer {
                Some(&b.rgb)
            } else {
                None
            }
        })
    }

    /// Feature bias of an s1/s2 layer, or the RGB bias of a tRGB layer.
    pub fn raw_bias(&self, layer: usize) -> Option<Vec<f64>> {
        self.blocks.iter().find_map(|b| {
            if b.s1_layer == layer {
                Some(b.bias1.clone())
            } else if b.s2_layer == Some(layer) {
                b.conv2.as_ref().map(|(_, bias)| bias.clone())
            } else if b.trgb_layer == layer {
                Some(b.rgb_bias.to_vec())
            } else {
                None
            }
        })
    }

    pub fn const_input(&self) -> &Tensor {
        &self.const_input
    }

    /// Evaluates the activation and its slope (exposed for reference implementations).
    pub fn activation(&self, x: f64) -> (f64, f64) {
        (self.act.value(x), self.act.slope(x))
    }

    fn seg<'a>(layout: &StyleLayout, s: &'a [f64], layer: usize) -> &'a [f64] {
        let l = layout.layer(layer);
        &s[l.offset..l.offset + l.channels]
    }

    fn nonzero(v: &[f64]) -> bool {
        v.iter().any(|&x| x != 0.0)
    }

    /// Forward pass; with `ds` also returns the tangent along that style direction.
    pub fn forward(
        &self,
        layout: &StyleLayout,
        s: &[f64],
        noise: &NoiseInputs,
        ds: Option<&[f64]>,
    ) -> Result<(Tensor, Option<Tensor>)> {
        let strength = self.config.noise_strength;
        let mode = self.config.upsample;
        let mut x = self.const_input.clone();
        let mut dx: Option<Tensor> = None;
        let mut rgb: Option<Tensor> = None;
        let mut drgb: Option<Tensor> = None;
        let mut noise_idx = 0;

        // one modulated conv with optional tangent propagation
        let modconv = |x: &Tensor,
                       dx: &Option<Tensor>,
                       weights: &Tensor,
                       layer: usize,
                       demod: bool|
         -> Result<(Tensor, Option<Tensor>)> {
            let st = Self::seg(layout, s, layer);
            let k = weights.shape()[2];
            let pad = (k - 1) / 2;
            let wm = modulate_weights(weights, st, demod)?;
            let y = conv2d(x, &wm, pad)?;
            let mut dy = match dx {
                Some(dx) => Some(conv2d(dx, &wm, pad)?),
                None => None,
            };
            if let Some(ds) = ds {
                let dst = Self::seg(layout, ds, layer);
                if Self::nonzero(dst) {
                    let dw = modulate_tangent(weights, st, dst, demod);
                    dy = Some(add_into(dy, conv2d(x, &dw, pad)?));
                }
            }
            Ok((y, dy))
        };
        let activate = |a: Tensor, da: Option<Tensor>| -> (Tensor, Option<Tensor>) {
            let y = a.map(|v| self.act.value(v));
            let dy = da.map(|d| a.zip_with(&d, |v, t| self.act.slope(v) * t));
            (y, dy)
        };

        for (level, b) in self.blocks.iter().enumerate() {
            let (mut a, da) = modconv(&x, &dx, &b.conv1, b.s1_layer, true)?;
            add_bias_noise(&mut a, &b.bias1, &noise.planes[noise_idx], strength);
            noise_idx += 1;
            (x, dx) = activate(a, da);
            if let Some((w2, bias2)) = &b.conv2 {
                x = upsample2(&x, mode)?;
                dx = dx.map(|d| upsample2(&d, mode)).transpose()?;
                let (mut a, da) = modconv(&x, &dx, w2, b.s2_layer.expect("s2 layer"), true)?;
                add_bias_noise(&mut a, bias2, &noise.planes[noise_idx], strength);
                noise_idx += 1;
                (x, dx) = activate(a, da);
            }
            let (mut r, dr) = modconv(&x, &dx, &b.rgb, b.trgb_layer, false)?;
            add_rgb_bias(&mut r, &b.rgb_bias);
            if level > 0 {
                let prev = upsample2(rgb.as_ref().expect("rgb from previous level"), mode)?;
                r = r.zip_with(&prev, |p, q| p + q);
                let dprev = drgb.map(|d| upsample2(&d, mode)).transpose()?;
                drgb = match (dprev, dr) {
                    (Some(p), Some(q)) => Some(p.zip_with(&q, |u, v| u + v)),
                    (p, q) => p.or(q),
                };
            } else {
                drgb = dr;
            }
            rgb = Some(r);
        }
        let img = rgb.expect("at least one level");
        let tangent = ds.map(|_| drgb.unwrap_or_else(|| Tensor::zeros(img.shape())));
        Ok((img, tangent))
    }

    fn forward_cached(&self, layout: &StyleLayout, s: &[f64], noise: &NoiseInputs) -> Result<(Tensor, Vec<BlockCache>)> {
        let strength = self.config.noise_strength;
        let mode = self.config.upsample;
        let mut x = self.const_input.clone();
        let mut rgb: Option<Tensor> = None;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut noise_idx = 0;
        for (level, b) in self.blocks.iter().enumerate() {
            let x_in = x.clone();
            let w1 = modulate_weights(&b.conv1, Self::seg(layout, s, b.s1_layer), true)?;
            let mut a1 = conv2d(&x_in, &w1, 1)?;
            add_bias_noise(&mut a1, &b.bias1, &noise.planes[noise_idx], strength);
            noise_idx += 1;
            x = a1.map(|v| self.act.value(v));
            let (mut u, mut w2, mut a2) = (None, None, None);
            if let Some((wt, bias2)) = &b.conv2 {
                let up = upsample2(&x, mode)?;
                let wm = modulate_weights(wt, Self::seg(layout, s, b.s2_layer.expect("s2")), true)?;
                let mut a = conv2d(&up, &wm, 1)?;
                add_bias_noise(&mut a, bias2, &noise.planes[noise_idx], strength);
                noise_idx += 1;
                x = a.map(|v| self.act.value(v));
                u = Some(up);
                w2 = Some(wm);
                a2 = Some(a);
            }
            let wr = modulate_weights(&b.rgb, Self::seg(layout, s, b.trgb_layer), false)?;
            let mut r = conv2d(&x, &wr, 0)?;
            add_rgb_bias(&mut r, &b.rgb_bias);
            if level > 0 {
                let prev = upsample2(rgb.as_ref().expect("rgb"), mode)?;
                r = r.zip_with(&prev, |p, q| p + q);
            }
            rgb = Some(r);
            caches.push(BlockCache {
                x_in,
                w1,
                a1,
                u,
                w2,
                a2,
                x_out: x.clone(),
                wr,
            });
        }
        Ok((rgb.expect("at least one level"), caches))
    }

    /// Gradient of `<cotangent, image(s)>` with respect to the flat styles.
    pub fn vjp(&self, layout: &StyleLayout, s: &[f64], noise: &NoiseInputs, cotangent: &Tensor) -> Result<Vec<f64>> {
        let mode = self.config.upsample;
        let (img, caches) = self.forward_cached(layout, s, noise)?;
        img.same_shape(cotangent)?;
        let mut grad_s = vec![0.0; layout.total()];
        let mut g_rgb = cotangent.clone();
        let mut g_next: Option<Tensor> = None;
        let put = |grad_s: &mut Vec<f64>, layer: usize, g: Vec<f64>| {
            let l = layout.layer(layer);
            grad_s[l.offset..l.offset + l.channels].copy_from_slice(&g);
        };
        for (level, (b, c)) in self.blocks.iter().zip(&caches).enumerate().rev() {
            let g_wr = conv2d_weight_grad(&c.x_out, &g_rgb, 1, 0)?;
            put(&mut grad_s, b.trgb_layer, modulate_adjoint(&b.rgb, Self::seg(layout, s, b.trgb_layer), &g_wr, false));
            let (xc, xh, xw) = c.x_out.dims3()?;
            let mut g_x = conv2d_input_grad(&g_rgb, &c.wr, 0, (xc, xh, xw))?;
            if let Some(gn) = g_next.take() {
                g_x = g_x.zip_with(&gn, |a, b| a + b);
            }
            let g_x1 = if let (Some((wt, _)), Some(u), Some(w2), Some(a2)) = (&b.conv2, &c.u, &c.w2, &c.a2) {
                let g_a2 = a2.zip_with(&g_x, |a, g| self.act.slope(a) * g);
                let g_w2 = conv2d_weight_grad(u, &g_a2, 3, 1)?;
                let layer = b.s2_layer.expect("s2");
                put(&mut grad_s, layer, modulate_adjoint(wt, Self::seg(layout, s, layer), &g_w2, true));
                let g_u = conv2d_input_grad(&g_a2, w2, 1, u.dims3()?)?;
                upsample2_adjoint(&g_u, mode)?
            } else {
                g_x
            };
            let g_a1 = c.a1.zip_with(&g_x1, |a, g| self.act.slope(a) * g);
            let g_w1 = conv2d_weight_grad(&c.x_in, &g_a1, 3, 1)?;
            put(&mut grad_s, b.s1_layer, modulate_adjoint(&b.conv1, Self::seg(layout, s, b.s1_layer), &g_w1, true));
            if level > 0 {
                g_next = Some(conv2d_input_grad(&g_a1, &c.w1, 1, c.x_in.dims3()?)?);
                g_rgb = upsample2_adjoint(&g_rgb, mode)?;
            }
        }
        Ok(grad_s)
    }
}
