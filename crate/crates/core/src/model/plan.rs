//! Layer plans for the encoders and the skip-connected reconstruction head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONV_KERNEL: usize = 7;
pub const POOL: usize = 3;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_GUARD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "3d")]
    ThreeD,
}

/// One encoder block: valid convolution, leaky ReLU and an optional spectral
/// max-pool whose stride equals its kernel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub channels: usize,
    /// `(height, width, spectral)`; 1-D blocks use `(1, 1, k)`.
    pub kernel: [usize; 3],
    pub pool: Option<usize>,
}

/// Widths of the two skip blocks: `input -> hidden1 -> mid` (skip
/// `input -> mid`), then `mid -> hidden2 -> out` (skip `mid -> out`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DnnscDims {
    pub input: usize,
    pub hidden1: usize,
    pub mid: usize,
    pub hidden2: usize,
    pub out: usize,
}

/// Extents after one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub layer: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub spectral: usize,
}

fn arch(msg: String) -> Error {
    Error::Architecture(msg)
}

/// Spectral kernels and pools: three `conv(7) + pool(3, 3)` blocks and a
/// final convolution spanning the remaining length.
fn spectral_plan(bands: usize) -> Result<(Vec<usize>, usize)> {
    let mut len = bands;
    let mut kernels = Vec::with_capacity(4);
    for block in 1..=3 {
        if len < CONV_KERNEL {
            return Err(arch(format!(
                "block {block}: spectral length {len} is shorter than the convolution kernel {CONV_KERNEL} (B = {bands})"
            )));
        }
        len -= CONV_KERNEL - 1;
        if len < POOL {
            return Err(arch(format!(
                "block {block}: spectral length {len} is shorter than the pooling kernel {POOL} (B = {bands})"
            )));
        }
        len = (len - POOL) / POOL + 1;
        kernels.push(CONV_KERNEL);
    }
    kernels.push(len);
    Ok((kernels, len))
}

fn channels(endmembers: usize) -> [usize; 4] {
    [8 * endmembers, 4 * endmembers, 2 * endmembers, endmembers]
}

pub fn build_encoder_1d(bands: usize, endmembers: usize) -> Result<Vec<EncoderBlock>> {
    let (kernels, _) = spectral_plan(bands)?;
    Ok(channels(endmembers)
        .iter()
        .zip(&kernels)
        .enumerate()
        .map(|(i, (&c, &k))| EncoderBlock {
            channels: c,
            kernel: [1, 1, k],
            pool: (i < 3).then_some(POOL),
        })
        .collect())
}

/// `max(3, odd(ceil(s / 3)))`, rounding even values up.
pub fn spatial_kernel(patch: usize) -> usize {
    let k = patch.div_ceil(3);
    let odd = if k % 2 == 0 { k + 1 } else { k };
    odd.max(3)
}

/// Block 1 uses the spatial kernel rule, block 2 the remaining spatial
/// extent, blocks 3 and 4 are purely spectral.
pub fn build_encoder_3d(bands: usize, endmembers: usize, patch: usize) -> Result<Vec<EncoderBlock>> {
    if patch < 3 || patch % 2 == 0 {
        return Err(Error::invalid("patch size", format!("{patch} must be odd and at least 3")));
    }
    let k1 = spatial_kernel(patch);
    if k1 > patch {
        return Err(arch(format!("spatial kernel {k1} exceeds patch size {patch}")));
    }
    let k2 = patch - k1 + 1;
    let mut blocks = build_encoder_1d(bands, endmembers)?;
    blocks[0].kernel[0] = k1;
    blocks[0].kernel[1] = k1;
    blocks[1].kernel[0] = k2;
    blocks[1].kernel[1] = k2;
    Ok(blocks)
}

pub fn build_dnnsc(bands: usize) -> Result<DnnscDims> {
    if bands < 16 {
        return Err(Error::invalid("DNNSc", format!("needs at least 16 bands, got {bands}")));
    }
    Ok(DnnscDims {
        input: 2 * bands,
        hidden1: bands,
        mid: bands / 2,
        hidden2: (bands / 8).max(4),
        out: 2,
    })
}

/// Shape trace of an encoder plan applied to a `patch x patch x bands` input.
pub fn encoder_trace(blocks: &[EncoderBlock], bands: usize, patch: usize) -> Result<Vec<TraceStep>> {
    let mut cur = TraceStep {
        layer: "input".into(),
        channels: 1,
        height: patch,
        width: patch,
        spectral: bands,
    };
    let mut trace = vec![cur.clone()];
    for (i, b) in blocks.iter().enumerate() {
        let [kh, kw, kl] = b.kernel;
        if kh > cur.height || kw > cur.width || kl > cur.spectral || kh * kw * kl == 0 {
            return Err(arch(format!(
                "block {}: kernel {:?} does not fit extent ({}, {}, {})",
                i + 1,
                b.kernel,
                cur.height,
                cur.width,
                cur.spectral
            )));
        }
        cur = TraceStep {
            layer: format!("conv{}", i + 1),
            channels: b.channels,
            height: cur.height - kh + 1,
            width: cur.width - kw + 1,
            spectral: cur.spectral - kl + 1,
        };
        trace.push(cur.clone());
        if let Some(p) = b.pool {
            if p == 0 || p > cur.spectral {
                return Err(arch(format!(
                    "block {}: pooling kernel {p} exceeds spectral length {}",
                    i + 1,
                    cur.spectral
                )));
            }
            cur = TraceStep {
                layer: format!("pool{}", i + 1),
                spectral: (cur.spectral - p) / p + 1,
                ..cur
            };
            trace.push(cur.clone());
        }
    }
    Ok(trace)
}
