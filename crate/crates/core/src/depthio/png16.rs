//! 16-bit grayscale PNG reader/writer. Raw value 0 is the invalid-depth
//! sentinel; meters are `raw / depth_scale`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Reads a 16-bit grayscale PNG, returning `(width, height, raw values)`.
pub fn read_png16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::Format(format!(
            "{}: expected 16-bit grayscale png, got {:?}/{:?}",
            path.display(),
            info.color_type,
            info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    if (width as u64) * (height as u64) > super::pfm::MAX_PIXELS {
        return Err(Error::Capacity(format!(
            "{}: {width}x{height} exceeds pixel limit",
            path.display()
        )));
    }
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(width * height * 2)];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let bytes = &buf[..frame.buffer_size()];
    if bytes.len() != width * height * 2 {
        return Err(Error::Format(format!("{}: truncated png payload", path.display())));
    }
    // png stores samples big-endian
    let values = bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((width, height, values))
}

/// Writes a 16-bit grayscale PNG from raw values, top row first.
pub fn write_png16(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    assert_eq!(values.len(), width * height, "png payload size mismatch");
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut bytes = Vec::with_capacity(values.len() * 2);
    for v in values {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(())
}
