//! Binary portable graymaps (P5, 8-bit).

use std::fs;
use std::path::Path;

use crate::error::{CliError, Result};

/// Maps `[0, 1]` linearly onto `0..=255`, clipping out-of-range values.
pub fn to_gray(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(plane: &[f64], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(plane.iter().take(height * width).map(|&v| to_gray(v)));
    out
}

pub fn write_pgm(path: &Path, plane: &[f64], height: usize, width: usize) -> Result<()> {
    fs::write(path, encode_pgm(plane, height, width)).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graymap {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub pixels: Vec<u8>,
}

fn bad(m: &str) -> CliError {
    CliError::Pgm(m.into())
}

/// Parses a P5 graymap with `maxval <= 255`, allowing `#` comments in the header.
pub fn decode_pgm(bytes: &[u8]) -> Result<Graymap> {
    if !bytes.starts_with(b"P5") {
        return Err(bad("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let digits = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *f = digits.parse().map_err(|_| bad("bad header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header not terminated by whitespace"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval outside 1..=255"));
    }
    let n = width.checked_mul(height).ok_or_else(|| bad("dims overflow"))?;
    if bytes.len() - pos != n {
        return Err(bad("payload length does not match dims"));
    }
    Ok(Graymap {
        width,
        height,
        maxval: maxval as u16,
        pixels: bytes[pos..].to_vec(),
    })
}
