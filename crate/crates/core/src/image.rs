//! Binary PPM (P6) decoding/encoding and bilinear resizing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes a P6 pixmap with maxval 255 into a `3 x H x W` tensor in `[0, 1]`.
/// Header comments (`#` to end of line) are skipped.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::Format(format!("not a P6 pixmap (magic {:?})", String::from_utf8_lossy(magic))));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}, only 255 is supported")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("zero image dimension".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let pixels = width.checked_mul(height).ok_or_else(|| Error::Format("image too large".into()))?;
    let raster = &bytes[pos..];
    if raster.len() < pixels * 3 {
        return Err(Error::Format(format!("payload has {} bytes, needs {}", raster.len(), pixels * 3)));
    }
    let mut data = vec![0.0; 3 * pixels];
    for (p, rgb) in raster[..pixels * 3].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * pixels + p] = f64::from(rgb[c]) / 255.0;
        }
    }
    Ok(Tensor::from_parts(vec![3, height, width], data))
}

fn skip_whitespace_and_comments(bytes: &[u8], pos: &mut usize) {
    while let Some(&b) = bytes.get(*pos) {
        if b == b'#' {
            while let Some(&c) = bytes.get(*pos) {
                *pos += 1;
                if c == b'\n' || c == b'\r' {
                    break;
                }
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    skip_whitespace_and_comments(bytes, pos);
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PPM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let token = header_token(bytes, pos)?;
    std::str::from_utf8(token)
        .ok()
        .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad PPM {what} `{}`", String::from_utf8_lossy(token))))
}

/// Encodes a `3 x H x W` tensor as P6, rounding `v * 255` and clamping.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("PPM needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = image.data();
    out.reserve(3 * plane);
    for p in 0..plane {
        for ch in 0..3 {
            out.push((data[ch * plane + p] * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

/// Channel-wise bilinear resize with half-pixel centres: output pixel `i`
/// samples source coordinate `(i + 0.5) * in / out - 0.5`, clamped to the
/// image.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParam(format!("resize target {out_h}x{out_w} has a zero dimension")));
    }
    let (c, in_h, in_w) = image.dims3()?;
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let ys = sample_positions(in_h, out_h);
    let xs = sample_positions(in_w, out_w);
    let src = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * in_w + x0] * (1.0 - fx) + plane[y0 * in_w + x1] * fx;
                let bottom = plane[y1 * in_w + x0] * (1.0 - fx) + plane[y1 * in_w + x1] * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

fn sample_positions(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}
