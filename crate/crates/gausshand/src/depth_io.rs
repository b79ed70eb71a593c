//! Depth grids on disk: 16-bit binary PGM and a raw float format.
//!
//! Both store millimetres row by row from the top-left pixel. Zero marks an
//! invalid pixel. See `docs/formats.md` for the byte layouts.

use std::fs;
use std::path::Path;

use gausshand_core::depth::DepthImage;

use crate::error::{Error, Result};
use crate::files::write_atomic;

/// Magic bytes of the raw float format.
pub const RAW_MAGIC: &[u8; 4] = b"DPTH";
const RAW_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthFormat {
    Pgm,
    Raw,
}

impl DepthFormat {
    /// `.pgm` or `.raw`, by extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" => Some(Self::Pgm),
            "raw" => Some(Self::Raw),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Pgm => "pgm",
            Self::Raw => "raw",
        }
    }
}

pub fn read_depth(path: &Path) -> Result<DepthImage> {
    let format = DepthFormat::from_path(path)
        .ok_or_else(|| Error::Usage(format!("{}: depth files must end in .pgm or .raw", path.display())))?;
    let bytes = fs::read(path).map_err(Error::io(path))?;
    match format {
        DepthFormat::Pgm => decode_pgm(&bytes, path),
        DepthFormat::Raw => decode_raw(&bytes, path),
    }
}

pub fn write_depth(path: &Path, image: &DepthImage) -> Result<()> {
    let format = DepthFormat::from_path(path)
        .ok_or_else(|| Error::Usage(format!("{}: depth files must end in .pgm or .raw", path.display())))?;
    let bytes = match format {
        DepthFormat::Pgm => encode_pgm(image, path)?,
        DepthFormat::Raw => encode_raw(image),
    };
    write_atomic(path, &bytes)
}

/// Binary PGM with maxval 65535 (big-endian samples), rounded to whole mm.
pub fn encode_pgm(image: &DepthImage, path: &Path) -> Result<Vec<u8>> {
    let mut out = format!("P5\n{} {}\n65535\n", image.width, image.height).into_bytes();
    out.reserve(2 * image.data.len());
    for (i, &d) in image.data.iter().enumerate() {
        let mm = if d.is_finite() && d > 0.0 { d.round() } else { 0.0 };
        if mm > 65535.0 {
            return Err(Error::Usage(format!(
                "{}: pixel {i} has depth {d} mm, beyond the 16-bit range",
                path.display()
            )));
        }
        out.extend_from_slice(&(mm as u16).to_be_bytes());
    }
    Ok(out)
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<DepthImage> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos).ok_or_else(|| Error::parse(path, "header", "missing magic"))?;
    if magic != b"P5" {
        return Err(Error::parse(path, "header", "expected binary PGM magic `P5`"));
    }
    let mut field = |name: &str| -> Result<usize> {
        let tok = header_token(bytes, &mut pos)
            .ok_or_else(|| Error::parse(path, format!("header field {name}"), "truncated header"))?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, format!("header field {name}"), "not an unsigned integer"))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(path, "header", "image must be at least 1x1"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(path, "header field maxval", "must lie in 1..=65535"));
    }
    // Exactly one whitespace byte separates the header from the samples.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(path, "header", "missing separator before pixel data"));
    }
    pos += 1;
    let sample = if maxval < 256 { 1 } else { 2 };
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::parse(path, "header", "image too large"))?;
    let expected = n * sample;
    let body = &bytes[pos..];
    if body.len() != expected {
        return Err(Error::parse(
            path,
            format!("byte {pos}"),
            format!("expected {expected} bytes of pixel data, found {}", body.len()),
        ));
    }
    let data = if sample == 1 {
        body.iter().map(|&b| b as f64).collect()
    } else {
        body.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    DepthImage::new(width, height, data).map_err(Error::invalid(path))
}

/// Next whitespace-separated header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

/// `DPTH`, width and height as little-endian u32, then little-endian f32 samples.
pub fn encode_raw(image: &DepthImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 4 * image.data.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(image.width as u32).to_le_bytes());
    out.extend_from_slice(&(image.height as u32).to_le_bytes());
    for &d in &image.data {
        let v = if d.is_finite() && d > 0.0 { d as f32 } else { 0.0 };
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<DepthImage> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(Error::parse(path, "header", "truncated header"));
    }
    if &bytes[..4] != RAW_MAGIC {
        return Err(Error::parse(path, "header", "expected magic `DPTH`"));
    }
    let word = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize;
    let (width, height) = (word(4), word(8));
    if width == 0 || height == 0 {
        return Err(Error::parse(path, "header", "image must be at least 1x1"));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::parse(path, "header", "image too large"))?;
    let body = &bytes[RAW_HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::parse(
            path,
            format!("byte {RAW_HEADER_LEN}"),
            format!("expected {expected} bytes of pixel data, found {}", body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| {
            let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
            if v.is_finite() && v > 0.0 {
                v
            } else {
                0.0
            }
        })
        .collect();
    DepthImage::new(width, height, data).map_err(Error::invalid(path))
}
