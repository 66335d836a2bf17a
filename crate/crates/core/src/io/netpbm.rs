//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::ImageTensor;

/// Maps `[0, 1]` to a byte: clamp, scale by 255, round half away from zero.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0).round() as u8
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Image {
            offset: self.pos,
            msg: msg.into(),
        }
    }

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
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image {
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

pub fn decode(bytes: &[u8]) -> Result<ImageTensor> {
    let mut cur = Cursor { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(cur.err("expected magic P5 or P6")),
    };
    cur.pos = 2;
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(cur.err(format!("only maxval 255 is supported, got {maxval}")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected a single whitespace byte before the raster")),
    }
    if width == 0 || height == 0 {
        return Err(cur.err("empty image"));
    }
    let n = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < n {
        return Err(Error::Image {
            offset: bytes.len(),
            msg: format!("raster truncated: need {n} bytes, have {}", payload.len()),
        });
    }
    if payload.len() > n {
        return Err(Error::Image {
            offset: cur.pos + n,
            msg: "trailing bytes after raster".into(),
        });
    }
    let plane = width * height;
    let mut data = vec![0.0; n];
    for (i, &b) in payload.iter().enumerate() {
        let (pix, c) = (i / channels, i % channels);
        data[c * plane + pix] = f64::from(b) / 255.0;
    }
    ImageTensor::new(height, width, channels, data)
}

pub fn encode(image: &ImageTensor) -> Result<Vec<u8>> {
    let magic = match image.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::Shape(format!(
                "netpbm holds 1 or 3 channels, image has {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    let plane = image.plane_len();
    out.reserve(plane * image.channels);
    for pix in 0..plane {
        for c in 0..image.channels {
            out.push(quantize(image.data[c * plane + pix]));
        }
    }
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<ImageTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_image(path: &Path, image: &ImageTensor) -> Result<()> {
    std::fs::write(path, encode(image)?).map_err(|e| Error::io(path, e))
}
