//! PFM (portable float map) reader/writer.
//!
//! Layout: header `Pf\n<width> <height>\n<scale>\n`, then `height` rows of
//! `width` raw 32-bit floats stored bottom-to-top. A negative scale marks
//! little-endian payload. Only the single-channel `Pf` variant is supported;
//! the three-channel `PF` variant is rejected.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Largest accepted pixel count; guards against hostile headers.
pub const MAX_PIXELS: u64 = 1 << 28;

fn read_token(r: &mut impl Read, path: &Path) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        match r.read(&mut byte) {
            Ok(0) => break,
            Ok(_) => {
                if byte[0].is_ascii_whitespace() {
                    if tok.is_empty() {
                        continue;
                    }
                    break;
                }
                tok.push(byte[0]);
                if tok.len() > 64 {
                    return Err(Error::Format(format!("{}: header token too long", path.display())));
                }
            }
            Err(e) => return Err(Error::io(path, e)),
        }
    }
    if tok.is_empty() {
        return Err(Error::Format(format!("{}: truncated pfm header", path.display())));
    }
    String::from_utf8(tok)
        .map_err(|_| Error::Format(format!("{}: non-ascii pfm header", path.display())))
}

/// Reads a grayscale PFM. Returns `(width, height, values)` with the top row first.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let magic = read_token(&mut r, path)?;
    if magic == "PF" {
        return Err(Error::Format(format!(
            "{}: color PFM (PF) not supported, expected grayscale Pf",
            path.display()
        )));
    }
    if magic != "Pf" {
        return Err(Error::Format(format!("{}: bad pfm magic {magic:?}", path.display())));
    }

    let width: u64 = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad pfm width", path.display())))?;
    let height: u64 = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad pfm height", path.display())))?;
    let scale: f32 = read_token(&mut r, path)?
        .parse()
        .map_err(|_| Error::Format(format!("{}: bad pfm scale", path.display())))?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("{}: zero pfm dimension", path.display())));
    }
    let pixels = width
        .checked_mul(height)
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or_else(|| {
            Error::Capacity(format!("{}: {width}x{height} exceeds pixel limit", path.display()))
        })?;
    let little_endian = scale < 0.0;

    let mut raw = vec![0u8; pixels as usize * 4];
    r.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;

    let (width, height) = (width as usize, height as usize);
    let mut values = vec![0f32; width * height];
    for row in 0..height {
        // rows are stored bottom-to-top
        let src_row = height - 1 - row;
        for col in 0..width {
            let off = (src_row * width + col) * 4;
            let bytes = [raw[off], raw[off + 1], raw[off + 2], raw[off + 3]];
            values[row * width + col] = if little_endian {
                f32::from_le_bytes(bytes)
            } else {
                f32::from_be_bytes(bytes)
            };
        }
    }
    Ok((width, height, values))
}

/// Writes a grayscale PFM (little-endian, scale -1.0), top row first in `values`.
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    assert_eq!(values.len(), width * height, "pfm payload size mismatch");
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(w, "Pf\n{width} {height}\n-1.0\n").map_err(io)?;
    for row in (0..height).rev() {
        for col in 0..width {
            w.write_all(&values[row * width + col].to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
