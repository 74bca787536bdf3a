//! PFM grids, PPM images and JSON documents. Every write goes to a
//! temporary file in the destination directory and is renamed on success.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Image, ScalarGrid};

/// Writes `bytes` to `path` atomically.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// PFM bytes of a grid: invalid pixels are written as 0.
pub fn encode_pfm(grid: &ScalarGrid) -> Vec<u8> {
    let (w, h) = grid.shape();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for v in (0..h).rev() {
        for u in 0..w {
            let x = grid.get(u, v).unwrap_or(0.0) as f32;
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Parses a little-endian grayscale PFM; zeros become invalid pixels.
pub fn decode_pfm(bytes: &[u8]) -> Result<ScalarGrid> {
    let mut r = HeaderReader::new(bytes);
    let magic = r.token()?;
    if magic.1 != "Pf" {
        return Err(Error::Parse {
            offset: magic.0,
            message: format!("expected grayscale PFM magic 'Pf', found '{}'", magic.1),
        });
    }
    let w = r.number::<usize>("width")?;
    let h = r.number::<usize>("height")?;
    let (offset, scale) = r.token()?;
    let scale: f64 = scale.parse().map_err(|_| Error::Parse {
        offset,
        message: format!("scale '{scale}' is not a number"),
    })?;
    if scale > 0.0 {
        return Err(Error::Parse {
            offset,
            message: "big-endian PFM (positive scale) is not supported".into(),
        });
    }
    if scale == 0.0 || w == 0 || h == 0 {
        return Err(Error::Parse {
            offset,
            message: "PFM scale and dimensions must be nonzero".into(),
        });
    }
    let start = r.end_of_header()?;
    let need = w * h * 4;
    let body = &bytes[start..];
    if body.len() != need {
        return Err(Error::Parse {
            offset: start + body.len().min(need),
            message: format!("expected {need} bytes of pixel data, found {}", body.len()),
        });
    }
    let mut grid = ScalarGrid::invalid(w, h);
    for (row, chunk) in body.chunks_exact(w * 4).enumerate() {
        let v = h - 1 - row;
        for (u, px) in chunk.chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes([px[0], px[1], px[2], px[3]]) as f64;
            if !x.is_finite() {
                return Err(Error::Parse {
                    offset: start + (row * w + u) * 4,
                    message: format!("non-finite value {x}"),
                });
            }
            if x != 0.0 {
                grid.set(u, v, x);
            }
        }
    }
    Ok(grid)
}

/// P6 bytes of a grayscale image in `[0, 1]`, replicated to three channels.
pub fn encode_ppm(img: &Image) -> Result<Vec<u8>> {
    img.ensure_unit_range()?;
    let (w, h) = img.shape();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for &x in img.data() {
        let q = (x * 255.0).round() as u8;
        out.extend_from_slice(&[q, q, q]);
    }
    Ok(out)
}

/// Parses an 8-bit P6 image into grayscale as the channel mean.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut r = HeaderReader::new(bytes);
    let magic = r.token()?;
    if magic.1 != "P6" {
        return Err(Error::Parse {
            offset: magic.0,
            message: format!("expected PPM magic 'P6', found '{}'", magic.1),
        });
    }
    let w = r.number::<usize>("width")?;
    let h = r.number::<usize>("height")?;
    let (offset, maxval) = r.token()?;
    if maxval != "255" {
        return Err(Error::Parse {
            offset,
            message: format!("only maxval 255 is supported, found '{maxval}'"),
        });
    }
    let start = r.end_of_header()?;
    let need = w * h * 3;
    let body = &bytes[start..];
    if w == 0 || h == 0 || body.len() != need {
        return Err(Error::Parse {
            offset: start + body.len().min(need),
            message: format!("expected {need} bytes of pixel data for {w}x{h}, found {}", body.len()),
        });
    }
    let data = body
        .chunks_exact(3)
        .map(|c| (c[0] as f64 + c[1] as f64 + c[2] as f64) / (3.0 * 255.0))
        .collect();
    Image::new(w, h, data)
}

pub fn read_pfm(path: &Path) -> Result<ScalarGrid> {
    decode_pfm(&fs::read(path)?)
}

pub fn write_pfm(path: &Path, grid: &ScalarGrid) -> Result<()> {
    write_atomic(path, &encode_pfm(grid))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    write_atomic(path, &encode_ppm(img)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json(value)?.as_bytes())
}

/// Whitespace-separated header tokens; `#` starts a comment.
struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<(usize, String)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse {
                offset: start,
                message: "unexpected end of header".into(),
            });
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Parse {
            offset: start,
            message: "header is not ASCII".into(),
        })?;
        Ok((start, text.to_string()))
    }

    fn number<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (offset, text) = self.token()?;
        text.parse().map_err(|_| Error::Parse {
            offset,
            message: format!("{what} '{text}' is not a valid number"),
        })
    }

    /// Consumes the single whitespace byte ending the header.
    fn end_of_header(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(c) if c.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::Parse {
                offset: self.pos,
                message: "header must end with a whitespace byte".into(),
            }),
        }
    }
}
