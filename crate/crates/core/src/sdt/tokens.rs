//! Encoder token dumps: the decoder's input, stored in a small binary
//! format (`SDTK`) so forward passes are reproducible without an encoder.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};

use super::DecoderConfig;

const TOKENS_MAGIC: &[u8; 4] = b"SDTK";
const TOKENS_VERSION: u16 = 1;

/// Tokens tapped from one encoder layer: a class token plus `grid.0 * grid.1`
/// spatial tokens, row-major, each of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLayer<S> {
    pub index: u16,
    pub cls: Vec<S>,
    pub tokens: Vec<S>,
}

/// The four tapped layers the decoder consumes, with their shared geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet<S> {
    pub layers: Vec<TokenLayer<S>>,
    pub dim: usize,
    pub grid: (usize, usize),
}

impl<S: Scalar> TokenSet<S> {
    pub fn n_tokens(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    /// Checks internal consistency and agreement with a decoder config.
    pub fn validate(&self, config: &DecoderConfig) -> Result<()> {
        if self.layers.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "expected 4 token layers, got {}",
                self.layers.len()
            )));
        }
        if self.dim != config.d_enc {
            return Err(Error::ShapeMismatch(format!(
                "token dimension {} does not match configured {}",
                self.dim, config.d_enc
            )));
        }
        let n = self.n_tokens();
        if n == 0 {
            return Err(Error::ShapeMismatch("empty token grid".into()));
        }
        for (layer, &want) in self.layers.iter().zip(&config.layer_indices) {
            if layer.index as usize != want {
                return Err(Error::ShapeMismatch(format!(
                    "token layer index {} does not match configured {}",
                    layer.index, want
                )));
            }
            if layer.cls.len() != self.dim || layer.tokens.len() != n * self.dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} token arrays do not match grid {:?} x dim {}",
                    layer.index, self.grid, self.dim
                )));
            }
        }
        Ok(())
    }
}

/// Deterministic synthetic tokens (standard-normal-free: uniform in [-1, 1))
/// for benchmarks and tests that do not have a real encoder.
pub fn synthetic_tokens<S: Scalar>(
    config: &DecoderConfig,
    grid: (usize, usize),
    seed: u64,
) -> TokenSet<S> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let n = grid.0 * grid.1;
    let d = config.d_enc;
    let mut sample = |len: usize| -> Vec<S> {
        (0..len).map(|_| cast(rng.random::<f64>() * 2.0 - 1.0)).collect()
    };
    let layers = config
        .layer_indices
        .iter()
        .map(|&index| TokenLayer { index: index as u16, cls: sample(d), tokens: sample(n * d) })
        .collect();
    TokenSet { layers, dim: d, grid }
}

/// Writes a token set in the binary dump format (little-endian, f32 payload).
pub fn write_tokens<S: Scalar>(set: &TokenSet<S>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(TOKENS_MAGIC).map_err(io)?;
    w.write_all(&TOKENS_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(set.layers.len() as u16).to_le_bytes()).map_err(io)?;
    w.write_all(&[1u8]).map_err(io)?; // has_cls
    for layer in &set.layers {
        w.write_all(&layer.index.to_le_bytes()).map_err(io)?;
        w.write_all(&(set.n_tokens() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(set.dim as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(set.grid.0 as u16).to_le_bytes()).map_err(io)?;
        w.write_all(&(set.grid.1 as u16).to_le_bytes()).map_err(io)?;
        for &v in layer.cls.iter().chain(&layer.tokens) {
            w.write_all(&(v.to_f64().unwrap() as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Reads a token dump written by [`write_tokens`].
pub fn read_tokens<S: Scalar>(path: &Path) -> Result<TokenSet<S>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != TOKENS_MAGIC {
        return Err(Error::Format(format!("{}: bad token magic", path.display())));
    }
    let version = read_u16(&mut r, path)?;
    if version != TOKENS_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported token version {version}",
            path.display()
        )));
    }
    let n_layers = read_u16(&mut r, path)? as usize;
    let mut has_cls = [0u8; 1];
    r.read_exact(&mut has_cls).map_err(|e| Error::io(path, e))?;
    if has_cls[0] != 1 {
        return Err(Error::Format(format!(
            "{}: dumps without a class token are not supported",
            path.display()
        )));
    }
    let mut layers = Vec::with_capacity(n_layers);
    let mut dim = 0usize;
    let mut grid = (0usize, 0usize);
    for i in 0..n_layers {
        let index = read_u16(&mut r, path)?;
        let n = read_u32(&mut r, path)? as usize;
        let d = read_u32(&mut r, path)? as usize;
        let gh = read_u16(&mut r, path)? as usize;
        let gw = read_u16(&mut r, path)? as usize;
        if gh * gw != n {
            return Err(Error::Format(format!(
                "{}: layer {index}: grid {gh}x{gw} does not match token count {n}",
                path.display()
            )));
        }
        if n.checked_mul(d).map_or(true, |t| t as u64 > crate::depthio::pfm::MAX_PIXELS) {
            return Err(Error::Capacity(format!(
                "{}: layer {index}: token payload too large",
                path.display()
            )));
        }
        if i == 0 {
            dim = d;
            grid = (gh, gw);
        } else if d != dim || (gh, gw) != grid {
            return Err(Error::Format(format!(
                "{}: layer {index}: geometry differs from first layer",
                path.display()
            )));
        }
        let cls = read_f32s(&mut r, d, path)?;
        let tokens = read_f32s(&mut r, n * d, path)?;
        layers.push(TokenLayer { index, cls, tokens });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::Format(format!("{}: trailing bytes", path.display())));
    }
    Ok(TokenSet { layers, dim, grid })
}

fn read_f32s<S: Scalar>(r: &mut impl Read, len: usize, path: &Path) -> Result<Vec<S>> {
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| cast(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect())
}

fn read_u16(r: &mut impl Read, path: &Path) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(b))
}
