//! Convolution, resampling and pooling kernels on `[C, H, W]` tensors.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn check_conv(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (ci, h, w) = input.dims3()?;
    let (co, wci, k) = match weights.shape() {
        &[co, wci, kh, kw] => {
            if kh != kw {
                return Err(Error::dim("kernel width", kh, kw));
            }
            (co, wci, kh)
        }
        s => return Err(Error::dim("weight rank", 4, s.len())),
    };
    if wci != ci {
        return Err(Error::dim("in_channels", wci, ci));
    }
    if k % 2 == 0 {
        return Err(Error::Argument(format!("kernel size {k} must be odd")));
    }
    Ok((ci, h, w, co, k))
}

/// Valid output range along one axis for kernel tap `t`: output `o` reads
/// input `o + t - pad`.
#[inline]
fn tap_range(t: usize, pad: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(t);
    let hi = (in_len + pad).saturating_sub(t).min(out_len);
    (lo, hi.max(lo))
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(input: &Tensor, weights: &Tensor, padding: usize) -> Result<Tensor> {
    let (ci, h, w, co, k) = check_conv(input, weights)?;
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(Error::Argument("kernel larger than padded input".into()));
    }
    let oh = h + 2 * padding - k + 1;
    let ow = w + 2 * padding - k + 1;
    let mut out = vec![0.0; co * oh * ow];
    let x = input.data();
    let wt = weights.data();
    for o in 0..co {
        let out_plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
        for i in 0..ci {
            let in_plane = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = tap_range(ky, padding, h, oh);
                for kx in 0..k {
                    let wv = wt[((o * ci + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = tap_range(kx, padding, w, ow);
                    for y in y0..y1 {
                        let iy = y + ky - padding;
                        let src = &in_plane[iy * w + x0 + kx - padding..iy * w + x1 + kx - padding];
                        let dst = &mut out_plane[y * ow + x0..y * ow + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![co, oh, ow], out))
}

/// Gradient of a scalar loss with respect to the conv input, given the
/// gradient with respect to its output.
pub fn conv2d_input_grad(
    grad_out: &Tensor,
    weights: &Tensor,
    padding: usize,
    in_shape: (usize, usize, usize),
) -> Result<Tensor> {
    let (ci, h, w) = in_shape;
    let probe = Tensor::zeros(&[ci, h, w]);
    let (_, _, _, co, k) = check_conv(&probe, weights)?;
    let (gco, oh, ow) = grad_out.dims3()?;
    if gco != co {
        return Err(Error::dim("out_channels", co, gco));
    }
    let mut gin = vec![0.0; ci * h * w];
    let g = grad_out.data();
    let wt = weights.data();
    for o in 0..co {
        let g_plane = &g[o * oh * ow..(o + 1) * oh * ow];
        for i in 0..ci {
            let gi_plane = &mut gin[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = tap_range(ky, padding, h, oh);
                for kx in 0..k {
                    let wv = wt[((o * ci + i) * k + ky) * k + kx];
                    let (x0, x1) = tap_range(kx, padding, w, ow);
                    for y in y0..y1 {
                        let iy = y + ky - padding;
                        let dst = &mut gi_plane[iy * w + x0 + kx - padding..iy * w + x1 + kx - padding];
                        let src = &g_plane[y * ow + x0..y * ow + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![ci, h, w], gin))
}

/// Gradient of a scalar loss with respect to the conv weights.
pub fn conv2d_weight_grad(
    input: &Tensor,
    grad_out: &Tensor,
    kernel: usize,
    padding: usize,
) -> Result<Tensor> {
    let (ci, h, w) = input.dims3()?;
    let (co, oh, ow) = grad_out.dims3()?;
    let k = kernel;
    let x = input.data();
    let g = grad_out.data();
    let mut gw = vec![0.0; co * ci * k * k];
    for o in 0..co {
        let g_plane = &g[o * oh * ow..(o + 1) * oh * ow];
        for i in 0..ci {
            let in_plane = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = tap_range(ky, padding, h, oh);
                for kx in 0..k {
                    let (x0, x1) = tap_range(kx, padding, w, ow);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let iy = y + ky - padding;
                        let src = &in_plane[iy * w + x0 + kx - padding..iy * w + x1 + kx - padding];
                        let gs = &g_plane[y * ow + x0..y * ow + x1];
                        acc += src.iter().zip(gs).map(|(a, b)| a * b).sum::<f64>();
                    }
                    gw[((o * ci + i) * k + ky) * k + kx] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![co, ci, k, k], gw))
}

/// Resampling filter used for 2x upsampling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upsample {
    Nearest,
    #[default]
    Bilinear,
}

/// Source taps `(index, weight)` for each output index of a 2x upsample.
fn taps(mode: Upsample, n: usize) -> Vec<[(usize, f64); 2]> {
    (0..2 * n)
        .map(|o| match mode {
            Upsample::Nearest => [(o / 2, 1.0), (o / 2, 0.0)],
            Upsample::Bilinear => {
                // half-pixel centers, edge-clamped
                let i = o / 2;
                let j = if o % 2 == 0 {
                    i.saturating_sub(1)
                } else {
                    (i + 1).min(n - 1)
                };
                [(i, 0.75), (j, 0.25)]
            }
        })
        .collect()
}

/// Doubles the spatial resolution of a `[C, H, W]` tensor.
pub fn upsample2(input: &Tensor, mode: Upsample) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    let ty = taps(mode, h);
    let tx = taps(mode, w);
    let (oh, ow) = (2 * h, 2 * w);
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    let mut row = vec![0.0; ow];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for (oy, ry) in ty.iter().enumerate() {
            for (ox, rx) in tx.iter().enumerate() {
                let mut v = 0.0;
                for &(iy, wy) in ry {
                    for &(ix, wx) in rx {
                        v += wy * wx * plane[iy * w + ix];
                    }
                }
                row[ox] = v;
            }
            out[ch * oh * ow + oy * ow..ch * oh * ow + (oy + 1) * ow].copy_from_slice(&row);
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

/// Adjoint of [`upsample2`]: maps a gradient at `2H x 2W` back to `H x W`.
pub fn upsample2_adjoint(grad: &Tensor, mode: Upsample) -> Result<Tensor> {
    let (c, oh, ow) = grad.dims3()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::Argument("upsample adjoint needs even extents".into()));
    }
    let (h, w) = (oh / 2, ow / 2);
    let ty = taps(mode, h);
    let tx = taps(mode, w);
    let g = grad.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let gp = &g[ch * oh * ow..(ch + 1) * oh * ow];
        let op = &mut out[ch * h * w..(ch + 1) * h * w];
        for (oy, ry) in ty.iter().enumerate() {
            for (ox, rx) in tx.iter().enumerate() {
                let gv = gp[oy * ow + ox];
                for &(iy, wy) in ry {
                    for &(ix, wx) in rx {
                        op[iy * w + ix] += wy * wx * gv;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

/// Average pooling of a `[C, H, W]` tensor by an integer factor.
pub fn avg_pool(input: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Argument(format!(
            "pool factor {factor} does not divide {h}x{w}"
        )));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[ch * oh * ow + (y / factor) * ow + xx / factor] += x[ch * h * w + y * w + xx];
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    Ok(Tensor::from_parts(vec![c, oh, ow], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;

    fn naive_conv(input: &Tensor, weights: &Tensor, pad: usize) -> Tensor {
        let (ci, h, w) = input.dims3().unwrap();
        let s = weights.shape();
        let (co, k) = (s[0], s[2]);
        let (oh, ow) = (h + 2 * pad - k + 1, w + 2 * pad - k + 1);
        let mut out = Tensor::zeros(&[co, oh, ow]);
        for o in 0..co {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - pad as isize;
                                let ix = x as isize + kx as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += weights.data()[((o * ci + i) * k + ky) * k + kx]
                                    * input.data()[i * h * w + iy as usize * w + ix as usize];
                            }
                        }
                    }
                    out.data_mut()[o * oh * ow + y * ow + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn scalar_product() {
        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        assert_eq!(conv2d(&x, &k, 0).unwrap().data(), &[6.0]);
    }

    #[test]
    fn identity_kernel() {
        let mut rng = Rng::new(3, 0);
        let x = Tensor::new(vec![1, 5, 5], rng.normal_vec(25)).unwrap();
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        assert_eq!(conv2d(&x, &k, 1).unwrap(), x);
    }

    #[test]
    fn matches_nested_loop_reference() {
        let mut rng = Rng::new(11, 0);
        let x = Tensor::new(vec![1, 4, 4], rng.normal_vec(16)).unwrap();
        let k = Tensor::new(vec![1, 1, 3, 3], rng.normal_vec(9)).unwrap();
        let got = conv2d(&x, &k, 1).unwrap();
        let want = naive_conv(&x, &k, 1);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // multi-channel, unpadded
        let x = Tensor::new(vec![3, 6, 5], rng.normal_vec(90)).unwrap();
        let k = Tensor::new(vec![2, 3, 3, 3], rng.normal_vec(54)).unwrap();
        let got = conv2d(&x, &k, 0).unwrap();
        let want = naive_conv(&x, &k, 0);
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        match conv2d(&x, &k, 1) {
            Err(Error::Dimension { axis, .. }) => assert_eq!(axis, "in_channels"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backward_kernels_are_adjoint() {
        let mut rng = Rng::new(5, 1);
        let x = Tensor::new(vec![2, 5, 5], rng.normal_vec(50)).unwrap();
        let k = Tensor::new(vec![3, 2, 3, 3], rng.normal_vec(54)).unwrap();
        let g = Tensor::new(vec![3, 5, 5], rng.normal_vec(75)).unwrap();
        let y = conv2d(&x, &k, 1).unwrap();
        let gx = conv2d_input_grad(&g, &k, 1, (2, 5, 5)).unwrap();
        let gk = conv2d_weight_grad(&x, &g, 3, 1).unwrap();
        let lhs = y.dot(&g).unwrap();
        assert!((lhs - x.dot(&gx).unwrap()).abs() < 1e-10);
        assert!((lhs - k.dot(&gk).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn upsample_adjoint_and_constants() {
        let mut rng = Rng::new(9, 2);
        for mode in [Upsample::Nearest, Upsample::Bilinear] {
            let c = Tensor::full(&[1, 3, 3], 2.5);
            assert!(upsample2(&c, mode).unwrap().data().iter().all(|v| (v - 2.5).abs() < 1e-15));
            let x = Tensor::new(vec![2, 4, 3], rng.normal_vec(24)).unwrap();
            let g = Tensor::new(vec![2, 8, 6], rng.normal_vec(96)).unwrap();
            let lhs = upsample2(&x, mode).unwrap().dot(&g).unwrap();
            let rhs = x.dot(&upsample2_adjoint(&g, mode).unwrap()).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_averages_blocks() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(avg_pool(&x, 2).unwrap().data(), &[3.0]);
        assert!(avg_pool(&x, 3).is_err());
    }
}
