use std::path::Path;

use nalgebra::{Quaternion, Vector3};

use crate::error::{Error, Result};
use crate::scene::Gaussian3D;

const MAGIC: &[u8; 4] = b"SPLF";
const VERSION: u32 = 1;

/// Serializes Gaussians: little-endian header (magic, version, D, count)
/// followed per Gaussian by mean, log-scale, quaternion (w, x, y, z),
/// opacity logit, color and feature, all f32.
pub fn encode_checkpoint(gaussians: &[Gaussian3D], feature_dim: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + gaussians.len() * (15 + feature_dim) * 4);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, feature_dim as u32, gaussians.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for g in gaussians {
        if g.feature.len() != feature_dim {
            return Err(Error::Checkpoint(format!(
                "gaussian feature has {} channels, expected {feature_dim}",
                g.feature.len()
            )));
        }
        let q = g.rotation;
        let quat = [q.w, q.i, q.j, q.k];
        let values = g
            .mean
            .iter()
            .chain(g.log_scale.iter())
            .chain(quat.iter())
            .chain(std::iter::once(&g.opacity_logit))
            .chain(g.color.iter())
            .chain(g.feature.iter());
        for &v in values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Inverse of [`encode_checkpoint`]; returns the Gaussians and `D`.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Vec<Gaussian3D>, usize)> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("missing SPLF header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let d = word(8) as usize;
    let count = word(12) as usize;
    let per = 14 + d;
    if bytes.len() != 16 + count * per * 4 {
        return Err(Error::Checkpoint(format!(
            "expected {} bytes for {count} gaussians with D={d}, got {}",
            16 + count * per * 4,
            bytes.len()
        )));
    }
    let mut gaussians = Vec::with_capacity(count);
    for n in 0..count {
        let base = 16 + n * per * 4;
        let f: Vec<f64> = (0..per)
            .map(|k| f32::from_le_bytes(bytes[base + 4 * k..base + 4 * k + 4].try_into().unwrap()) as f64)
            .collect();
        gaussians.push(Gaussian3D {
            mean: Vector3::new(f[0], f[1], f[2]),
            log_scale: Vector3::new(f[3], f[4], f[5]),
            rotation: Quaternion::new(f[6], f[7], f[8], f[9]),
            opacity_logit: f[10],
            color: Vector3::new(f[11], f[12], f[13]),
            feature: f[14..].to_vec(),
            topk_count: 0,
            max_contribution: 0.0,
        });
    }
    Ok((gaussians, d))
}

pub fn save_checkpoint(path: &Path, gaussians: &[Gaussian3D], feature_dim: usize) -> Result<()> {
    let bytes = encode_checkpoint(gaussians, feature_dim)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Vec<Gaussian3D>, usize)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
