//! Latent codes and the Z -> W -> S plumbing shared by every generator.

use serde::{Deserialize, Serialize};

use super::layout::{ChannelId, StyleLayout};
use crate::error::{Error, Result};
use crate::numerics::linalg::Matrix;
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentZ(pub Vec<f64>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentW(pub Vec<f64>);

/// One `w` per W+ slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentWPlus(pub Vec<Vec<f64>>);

impl LatentWPlus {
    pub fn broadcast(w: &LatentW, slots: usize) -> Self {
        LatentWPlus(vec![w.0.clone(); slots])
    }

    pub fn slots(&self) -> usize {
        self.0.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.concat()
    }

    pub fn from_flat(values: &[f64], slots: usize) -> Result<Self> {
        if slots == 0 || values.len() % slots != 0 {
            return Err(Error::dim("wplus", slots, values.len()));
        }
        let d = values.len() / slots;
        Ok(LatentWPlus(values.chunks(d).map(<[f64]>::to_vec).collect()))
    }
}

/// A point in StyleSpace, stored flat in layout order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleVector(pub Vec<f64>);

impl StyleVector {
    pub fn from_flat(layout: &StyleLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::dim("style", layout.total(), values.len()));
        }
        Ok(StyleVector(values))
    }

    pub fn from_segments(layout: &StyleLayout, segments: &[Vec<f64>]) -> Result<Self> {
        if segments.len() != layout.layers().len() {
            return Err(Error::dim("style layers", layout.layers().len(), segments.len()));
        }
        for (l, s) in layout.layers().iter().zip(segments) {
            if s.len() != l.channels {
                return Err(Error::dim(format!("layer {}", l.index), l.channels, s.len()));
            }
        }
        Ok(StyleVector(segments.concat()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn segment<'a>(&'a self, layout: &StyleLayout, layer: usize) -> &'a [f64] {
        let l = layout.layer(layer);
        &self.0[l.offset..l.offset + l.channels]
    }

    pub fn segments(&self, layout: &StyleLayout) -> Vec<Vec<f64>> {
        (0..layout.layers().len())
            .map(|l| self.segment(layout, l).to_vec())
            .collect()
    }

    pub fn get(&self, layout: &StyleLayout, id: ChannelId) -> Result<f64> {
        Ok(self.0[layout.flat_index(id)?])
    }

    pub fn check(&self, layout: &StyleLayout) -> Result<()> {
        if self.0.len() != layout.total() {
            return Err(Error::dim("style", layout.total(), self.0.len()));
        }
        Ok(())
    }

    pub fn to_json(&self, layout: &StyleLayout) -> Result<String> {
        Ok(serde_json::to_string(&StyleVectorFile {
            layout_hash: layout.hash(),
            values: self.0.clone(),
        })?)
    }

    /// Loads a style vector, refusing one written for a different layout.
    pub fn from_json(layout: &StyleLayout, text: &str) -> Result<Self> {
        let file: StyleVectorFile = serde_json::from_str(text)?;
        if file.layout_hash != layout.hash() {
            return Err(Error::Provenance(format!(
                "style vector layout {} does not match generator layout {}",
                file.layout_hash,
                layout.hash()
            )));
        }
        StyleVector::from_flat(layout, file.values)
    }
}

#[derive(Serialize, Deserialize)]
struct StyleVectorFile {
    layout_hash: String,
    values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Dense {
    weights: Matrix,
    bias: Vec<f64>,
}

/// Fully connected Z -> W network with leaky-ReLU hidden activations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MappingNetwork {
    layers: Vec<Dense>,
    slope: f64,
}

impl MappingNetwork {
    pub fn new(z_dim: usize, w_dim: usize, depth: usize, slope: f64, rng: &mut Rng) -> Result<Self> {
        if depth == 0 {
            return Err(Error::Config("mapping network needs at least one layer".into()));
        }
        let mut layers = Vec::with_capacity(depth);
        for i in 0..depth {
            let din = if i == 0 { z_dim } else { w_dim };
            let scale = 1.0 / (din as f64).sqrt();
            let weights = Matrix {
                rows: w_dim,
                cols: din,
                data: rng.normal_vec(w_dim * din).into_iter().map(|v| v * scale).collect(),
            };
            layers.push(Dense {
                weights,
                bias: vec![0.0; w_dim],
            });
        }
        Ok(Self { layers, slope })
    }

    pub fn z_dim(&self) -> usize {
        self.layers[0].weights.cols
    }

    pub fn w_dim(&self) -> usize {
        self.layers[0].weights.rows
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn set_bias(&mut self, layer: usize, bias: Vec<f64>) {
        self.layers[layer].bias = bias;
    }

    /// Weight matrices, first layer first.
    pub fn weights(&self) -> Vec<&Matrix> {
        self.layers.iter().map(|l| &l.weights).collect()
    }

    /// Pre-activations of every layer.
    fn pre_activations(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = z.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut a = l.weights.matvec(&h);
            for (v, b) in a.iter_mut().zip(&l.bias) {
                *v += b;
            }
            h = if i + 1 < self.layers.len() {
                a.iter().map(|&v| if v >= 0.0 { v } else { self.slope * v }).collect()
            } else {
                a.clone()
            };
            out.push(a);
        }
        out
    }

    pub fn forward(&self, z: &LatentZ) -> Result<LatentW> {
        if z.0.len() != self.z_dim() {
            return Err(Error::dim("z", self.z_dim(), z.0.len()));
        }
        let mut pre = self.pre_activations(&z.0);
        Ok(LatentW(pre.pop().expect("non-empty network")))
    }

    /// Pulls a gradient with respect to `w` back to `z`.
    pub fn backward(&self, z: &LatentZ, grad_w: &[f64]) -> Vec<f64> {
        let pre = self.pre_activations(&z.0);
        let mut g = grad_w.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                for (gv, &a) in g.iter_mut().zip(&pre[i]) {
                    if a < 0.0 {
                        *gv *= self.slope;
                    }
                }
            }
            g = self.layers[i].weights.matvec_t(&g);
        }
        g
    }
}

/// Initialization of the per-layer W -> S affine maps.
///
/// Each style channel `u` gets a dominant W coordinate `π(u)`; its row is
/// `dominance · e_π(u) + mixing · N(0, I/d_w)`. With `dominance = 0` this is a
/// plain fan-in scaled Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineInit {
    pub dominance: f64,
    pub mixing: f64,
    pub bias: f64,
}

impl Default for AffineInit {
    fn default() -> Self {
        Self {
            dominance: 1.0,
            mixing: 0.5,
            bias: 1.0,
        }
    }
}

/// The learned affine maps `s_l = A_l w_slot(l) + b_l`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StyleAffine {
    matrices: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    dominant: Vec<usize>,
    w_dim: usize,
}

impl StyleAffine {
    pub fn new(layout: &StyleLayout, w_dim: usize, init: &AffineInit, rng: &mut Rng) -> Self {
        let mut matrices = Vec::new();
        let mut biases = Vec::new();
        let mut dominant = Vec::with_capacity(layout.total());
        let scale = init.mixing / (w_dim as f64).sqrt();
        for l in layout.layers() {
            let mut m = Matrix::zeros(l.channels, w_dim);
            for c in 0..l.channels {
                let d = rng.below(w_dim);
                dominant.push(d);
                for k in 0..w_dim {
                    m.set(c, k, scale * rng.normal());
                }
                m.set(c, d, m.get(c, d) + init.dominance);
            }
            matrices.push(m);
            biases.push(vec![init.bias; l.channels]);
        }
        Self {
            matrices,
            biases,
            dominant,
            w_dim,
        }
    }

    pub fn matrix(&self, layer: usize) -> &Matrix {
        &self.matrices[layer]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    /// Bias of flat channel `u`.
    pub fn bias_flat(&self, layout: &StyleLayout, u: usize) -> f64 {
        let id = layout.channel_at(u);
        self.biases[id.layer][id.channel]
    }

    /// Dominant W coordinate of flat channel `u`.
    pub fn dominant(&self, u: usize) -> usize {
        self.dominant[u]
    }

    pub fn w_dim(&self) -> usize {
        self.w_dim
    }

    pub fn apply(&self, layout: &StyleLayout, wplus: &LatentWPlus) -> Result<StyleVector> {
        if wplus.slots() != layout.wplus_slots() {
            return Err(Error::dim("wplus slots", layout.wplus_slots(), wplus.slots()));
        }
        let mut out = Vec::with_capacity(layout.total());
        for l in layout.layers() {
            let w = &wplus.0[l.wplus_slot];
            if w.len() != self.w_dim {
                return Err(Error::dim(format!("w slot {}", l.wplus_slot), self.w_dim, w.len()));
            }
            let s = self.matrices[l.index].matvec(w);
            out.extend(s.iter().zip(&self.biases[l.index]).map(|(a, b)| a + b));
        }
        Ok(StyleVector(out))
    }

    /// Linear part only: maps a W+ displacement to an S displacement.
    pub fn apply_linear(&self, layout: &StyleLayout, dwplus: &LatentWPlus) -> Vec<f64> {
        let mut out = Vec::with_capacity(layout.total());
        for l in layout.layers() {
            out.extend(self.matrices[l.index].matvec(&dwplus.0[l.wplus_slot]));
        }
        out
    }

    /// Pulls a gradient with respect to `s` back to each W+ slot.
    pub fn backward(&self, layout: &StyleLayout, grad_s: &[f64]) -> LatentWPlus {
        let mut g = vec![vec![0.0; self.w_dim]; layout.wplus_slots()];
        for l in layout.layers() {
            let part = self.matrices[l.index].matvec_t(&grad_s[l.offset..l.offset + l.channels]);
            for (a, b) in g[l.wplus_slot].iter_mut().zip(part) {
                *a += b;
            }
        }
        LatentWPlus(g)
    }
}

/// Per-layer noise planes regenerated from one master seed.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseInputs {
    pub seed: u64,
    pub planes: Vec<Tensor>,
}

impl NoiseInputs {
    pub fn generate(seed: u64, shapes: &[[usize; 3]]) -> Self {
        let planes = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = Rng::new(seed, 0x6e6f_6973_6500 + i as u64);
                let n = s.iter().product();
                Tensor::from_parts(s.to_vec(), rng.normal_vec(n))
            })
            .collect();
        Self { seed, planes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::layout::{build_layout, LayoutConfig};

    fn layout() -> StyleLayout {
        build_layout(&LayoutConfig {
            resolutions: vec![4, 8, 16],
            widths: vec![8, 8, 4],
        })
        .unwrap()
    }

    #[test]
    fn zero_z_maps_to_zero_w() {
        let net = MappingNetwork::new(6, 5, 2, 0.2, &mut Rng::new(1, 0)).unwrap();
        assert_eq!(net.forward(&LatentZ(vec![0.0; 6])).unwrap().0, vec![0.0; 5]);
    }

    #[test]
    fn zero_w_gives_biases() {
        let layout = layout();
        let aff = StyleAffine::new(&layout, 5, &AffineInit::default(), &mut Rng::new(2, 0));
        let s = aff
            .apply(&layout, &LatentWPlus::broadcast(&LatentW(vec![0.0; 5]), layout.wplus_slots()))
            .unwrap();
        assert!(s.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn slot_locality() {
        let layout = layout();
        let aff = StyleAffine::new(&layout, 5, &AffineInit::default(), &mut Rng::new(3, 0));
        let mut rng = Rng::new(4, 0);
        let mut a = LatentWPlus((0..layout.wplus_slots()).map(|_| rng.normal_vec(5)).collect());
        let sa = aff.apply(&layout, &a).unwrap();
        let last = layout.wplus_slots() - 1;
        a.0[last][2] += 0.7;
        let sb = aff.apply(&layout, &a).unwrap();
        for l in layout.layers() {
            let changed = sa.segment(&layout, l.index) != sb.segment(&layout, l.index);
            assert_eq!(changed, l.wplus_slot == last, "layer {}", l.index);
        }
    }

    #[test]
    fn affine_jacobian_matches_fd() {
        let layout = layout();
        let aff = StyleAffine::new(&layout, 5, &AffineInit::default(), &mut Rng::new(5, 0));
        let mut rng = Rng::new(6, 0);
        let w = LatentW(rng.normal_vec(5));
        let h = 1e-5;
        for k in 0..5 {
            let mut wp = w.clone();
            wp.0[k] += h;
            let mut wm = w.clone();
            wm.0[k] -= h;
            let sp = aff.apply(&layout, &LatentWPlus::broadcast(&wp, layout.wplus_slots())).unwrap();
            let sm = aff.apply(&layout, &LatentWPlus::broadcast(&wm, layout.wplus_slots())).unwrap();
            for l in layout.layers() {
                for c in 0..l.channels {
                    let fd = (sp.0[l.offset + c] - sm.0[l.offset + c]) / (2.0 * h);
                    assert!((fd - aff.matrix(l.index).get(c, k)).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn mapping_backward_matches_fd() {
        let net = MappingNetwork::new(6, 5, 3, 0.2, &mut Rng::new(7, 0)).unwrap();
        let mut rng = Rng::new(8, 0);
        let z = LatentZ(rng.normal_vec(6));
        let g = rng.normal_vec(5);
        let grad = net.backward(&z, &g);
        let f = |z: &LatentZ| -> f64 {
            net.forward(z).unwrap().0.iter().zip(&g).map(|(a, b)| a * b).sum()
        };
        for k in 0..6 {
            let mut zp = z.clone();
            zp.0[k] += 1e-6;
            let mut zm = z.clone();
            zm.0[k] -= 1e-6;
            let fd = (f(&zp) - f(&zm)) / 2e-6;
            assert!((fd - grad[k]).abs() < 1e-6, "{fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn style_vector_json_checks_layout() {
        let l = layout();
        let s = StyleVector(vec![0.5; l.total()]);
        let text = s.to_json(&l).unwrap();
        assert_eq!(StyleVector::from_json(&l, &text).unwrap(), s);
        let other = build_layout(&LayoutConfig {
            resolutions: vec![4, 8],
            widths: vec![8, 8],
        })
        .unwrap();
        assert!(matches!(StyleVector::from_json(&other, &text), Err(Error::Provenance(_))));
    }

    #[test]
    fn noise_regenerates() {
        let a = NoiseInputs::generate(9, &[[1, 4, 4], [1, 8, 8]]);
        let b = NoiseInputs::generate(9, &[[1, 4, 4], [1, 8, 8]]);
        assert_eq!(a, b);
        assert_ne!(a, NoiseInputs::generate(10, &[[1, 4, 4], [1, 8, 8]]));
    }
}
