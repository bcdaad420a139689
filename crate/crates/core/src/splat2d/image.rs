use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "{} pixels do not fill a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> ImageBuffer {
        ImageBuffer::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y))
    }

    /// Binary 8-bit PGM (P5).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(file))
    }

    /// Reads a binary PGM (P5) with maxval up to 65535.
    pub fn read_pgm<R: Read>(reader: R) -> Result<Self> {
        let mut r = BufReader::new(reader);
        let magic = next_token(&mut r)?;
        if magic != "P5" {
            return Err(Error::invalid(format!(
                "not a binary PGM (magic {magic:?})"
            )));
        }
        let width: usize = parse_token(&mut r, "width")?;
        let height: usize = parse_token(&mut r, "height")?;
        let maxval: usize = parse_token(&mut r, "maxval")?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::invalid(format!("bad PGM maxval {maxval}")));
        }
        let wide = maxval > 255;
        let mut raw = vec![0u8; width * height * if wide { 2 } else { 1 }];
        r.read_exact(&mut raw)?;
        let scale = maxval as f64;
        let pixels = if wide {
            raw.chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / scale)
                .collect()
        } else {
            raw.iter().map(|&b| b as f64 / scale).collect()
        };
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_pgm(std::fs::File::open(path)?)
    }
}

/// Header token; `#` comments run to end of line. Consumes exactly one
/// whitespace byte after the token, as the raster starts right after it.
fn next_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::invalid("truncated PGM header"));
        }
        let c = byte[0];
        if c == b'#' {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            if !token.is_empty() {
                return Ok(token);
            }
        } else if c.is_ascii_whitespace() {
            if !token.is_empty() {
                return Ok(token);
            }
        } else {
            token.push(c as char);
        }
    }
}

fn parse_token<R: BufRead, T: std::str::FromStr>(r: &mut R, what: &str) -> Result<T> {
    let tok = next_token(r)?;
    tok.parse()
        .map_err(|_| Error::invalid(format!("bad PGM {what}: {tok:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_is_exact_on_8bit_levels() {
        let img = ImageBuffer::from_fn(5, 3, |x, y| ((x * 37 + y * 91) % 256) as f64 / 255.0);
        let mut bytes = Vec::new();
        img.write_pgm(&mut bytes).unwrap();
        assert!(bytes.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(ImageBuffer::read_pgm(&bytes[..]).unwrap(), img);
    }

    #[test]
    fn pgm_header_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255u8]);
        let img = ImageBuffer::read_pgm(&bytes[..]).unwrap();
        assert_eq!(img.pixels, vec![0.0, 1.0]);
    }

    #[test]
    fn pgm_sixteen_bit() {
        let mut bytes = b"P5 1 1 65535\n".to_vec();
        bytes.extend(65535u16.to_be_bytes());
        assert_eq!(ImageBuffer::read_pgm(&bytes[..]).unwrap().pixels, vec![1.0]);
    }

    #[test]
    fn rejects_other_formats() {
        assert!(ImageBuffer::read_pgm(&b"P2\n1 1\n255\n0\n"[..]).is_err());
        assert!(ImageBuffer::read_pgm(&b"P5\n2 2\n255\n\x00"[..]).is_err());
    }
}
