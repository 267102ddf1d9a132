//! Binary portable graymap (P5, 8-bit) I/O.

use std::io::{Read, Write};

use super::glyph::GlyphImage;
use crate::error::{Error, Result};

pub fn write_pgm<W: Write>(mut w: W, img: &GlyphImage) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.size, img.size)?;
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn header_token(data: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Argument("truncated PGM header".into()));
    }
    Ok(String::from_utf8_lossy(&data[start..*pos]).into_owned())
}

/// Reads a square 8-bit P5 image.
pub fn read_pgm<R: Read>(mut r: R) -> Result<GlyphImage> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut pos = 0;
    if header_token(&data, &mut pos)? != "P5" {
        return Err(Error::Argument("not a binary PGM (P5) file".into()));
    }
    let mut num = |what: &str| -> Result<usize> {
        header_token(&data, &mut pos)?
            .parse()
            .map_err(|_| Error::Argument(format!("bad PGM {what}")))
    };
    let (w, h, max) = (num("width")?, num("height")?, num("maxval")?);
    if w != h {
        return Err(Error::Argument(format!("PGM must be square, got {w}x{h}")));
    }
    if max == 0 || max > 255 {
        return Err(Error::Argument(format!("unsupported PGM maxval {max}")));
    }
    pos += 1;
    let body = data
        .get(pos..pos + w * h)
        .ok_or_else(|| Error::Argument("truncated PGM pixel data".into()))?;
    let pixels = body.iter().map(|&b| b as f64 / max as f64).collect();
    GlyphImage::new(w, pixels, None)
}
