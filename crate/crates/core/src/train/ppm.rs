//! Binary PPM (P6) codec.

use crate::{Error, Result};

/// Decoded RGB image with channel values scaled to `[0, 1]`, stored `[H, W, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

fn invalid(reason: impl Into<String>) -> Error {
    Error::Invalid(reason.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| invalid(format!("bad PPM {what}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(invalid("not a binary PPM (missing P6 magic)"));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(invalid("PPM has zero size"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(invalid(format!("PPM maxval {maxval} out of range")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(invalid("PPM header not terminated by whitespace")),
    }
    let wide = maxval > 255;
    let count = width * height * 3;
    let needed = count * if wide { 2 } else { 1 };
    let data = &bytes[cur.pos..];
    if data.len() < needed {
        return Err(invalid(format!("PPM raster truncated: need {needed} bytes, found {}", data.len())));
    }
    let scale = maxval as f32;
    let pixels = if wide {
        data[..needed]
            .chunks_exact(2)
            .map(|b| f32::from(u16::from_be_bytes([b[0], b[1]])) / scale)
            .collect()
    } else {
        data[..needed].iter().map(|&b| f32::from(b) / scale).collect()
    };
    Ok(RgbImage { height, width, pixels })
}

/// Encodes 8-bit RGB samples (`[H, W, 3]`, row-major) as P6 with maxval 255.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "raster size");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &[f32], (h, w): (usize, usize), (oh, ow): (usize, usize), channels: usize) -> Vec<f32> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let coord = |o: usize, out: usize, inp: usize| -> (usize, usize, f32) {
        let s = ((o as f32 + 0.5) * inp as f32 / out as f32 - 0.5).clamp(0.0, (inp - 1) as f32);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, s - i0 as f32)
    };
    let mut out = vec![0.0; oh * ow * channels];
    for y in 0..oh {
        let (y0, y1, fy) = coord(y, oh, h);
        for x in 0..ow {
            let (x0, x1, fx) = coord(x, ow, w);
            for c in 0..channels {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * channels + c];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out[(y * ow + x) * channels + c] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 255, 255, 0, 102]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!((img.height, img.width), (1, 2));
        assert_eq!(img.pixels, [0.0, 0.2, 1.0, 1.0, 0.0, 0.4]);
    }

    #[test]
    fn sixteen_bit_samples() {
        let mut bytes = b"P6 1 1 65535 ".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0, 0, 0x80, 0x00]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixels[0], 1.0);
        assert_eq!(img.pixels[1], 0.0);
    }

    #[test]
    fn round_trip_through_encoder() {
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 13) as u8).collect();
        let img = decode_ppm(&encode_ppm(3, 2, &rgb)).unwrap();
        for (p, b) in img.pixels.iter().zip(&rgb) {
            assert_eq!(*p, f32::from(*b) / 255.0);
        }
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode_ppm(b"P3\n1 1\n255\n").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_ppm(b"P6\nx 2\n255\n").is_err());
        assert!(decode_ppm(b"P6\n1 1\n0\n\x00\x00\x00").is_err());
    }

    #[test]
    fn resize_constant_stays_constant() {
        let src = vec![0.3; 5 * 7 * 3];
        for size in [(2, 3), (9, 4), (5, 7)] {
            let out = resize_bilinear(&src, (5, 7), size, 3);
            assert_eq!(out.len(), size.0 * size.1 * 3);
            assert!(out.iter().all(|&v| (v - 0.3).abs() < 1e-6));
        }
    }

    #[test]
    fn resize_upsamples_linear_ramp() {
        // 1x2 ramp [0, 1] -> 1x4 with half-pixel centres: [0, 0.25, 0.75, 1]
        let out = resize_bilinear(&[0.0, 1.0], (1, 2), (1, 4), 1);
        assert_eq!(out, [0.0, 0.25, 0.75, 1.0]);
    }
}
