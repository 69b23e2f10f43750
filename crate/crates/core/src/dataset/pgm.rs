//! Binary greymap (P5, maxval 255) images.

use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let bad = |m: &str| Error::MalformedImage(m.to_owned());
    // four whitespace-separated header fields; `#` comments run to end of line
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be 1..=255"));
    }
    // exactly one whitespace byte separates the header from the raster
    let body = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if body.len() != width * height {
        return Err(bad("raster size does not match header"));
    }
    let pixels = body.iter().map(|&b| b as f32 / maxval as f32).collect();
    Image::new(height, width, pixels)
}

pub fn write_pgm(img: &Image, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    decode_pgm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
