//! Binary PPM (P6) images; generator pixels live in [-1, 1].

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn to_byte(v: f64) -> u8 {
    ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Encodes a `[3, h, w]` tensor.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::dim("ppm colours", 3, c));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out.push(to_byte(image.plane(ch)[y * w + x]));
            }
        }
    }
    Ok(out)
}

/// Decodes into `[3, h, w]` with values mapped back to [-1, 1].
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("truncated ppm header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(Error::Data(format!("expected P6 magic, found `{}`", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Data(format!("bad ppm header field `{s}`")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Unsupported(format!("ppm maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let body = bytes.get(pos..pos + 3 * w * h).ok_or_else(|| Error::Data("truncated ppm body".into()))?;
    let mut data = vec![0.0; 3 * w * h];
    for (i, px) in body.chunks(3).enumerate() {
        for ch in 0..3 {
            data[ch * w * h + i] = px[ch] as f64 / 255.0 * 2.0 - 1.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let bytes = encode_ppm(image)?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_ppm(&bytes)
}

/// Tiles equally sized images left to right, top to bottom, `cols` per row.
pub fn grid(images: &[Tensor], cols: usize) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Argument("empty image grid".into()))?;
    let (c, h, w) = first.dims3()?;
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let (gh, gw) = (rows * h, cols * w);
    let mut out = Tensor::full(&[c, gh, gw], -1.0);
    for (k, img) in images.iter().enumerate() {
        first.same_shape(img)?;
        let (oy, ox) = (k / cols * h, k % cols * w);
        for ch in 0..c {
            let src = img.plane(ch);
            let dst = out.plane_mut(ch);
            for y in 0..h {
                dst[(oy + y) * gw + ox..(oy + y) * gw + ox + w].copy_from_slice(&src[y * w..(y + 1) * w]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_quantizes() {
        let data: Vec<f64> = (0..3 * 4 * 5).map(|i| (i as f64 / 30.0) - 1.0).collect();
        let img = Tensor::new(vec![3, 4, 5], data).unwrap();
        let back = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn clamps_out_of_range() {
        let img = Tensor::new(vec![3, 1, 1], vec![-3.0, 0.0, 3.0]).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }

    #[test]
    fn rejects_other_magic() {
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
    }
}
