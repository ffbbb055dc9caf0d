//! Trajectory, image and segmentation metrics.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::scene::LABEL_INVALID;

/// Maximum timestamp gap for associating trajectory entries (seconds).
pub const ASSOCIATION_WINDOW: f64 = 0.02;

pub const PSNR_CAP: f64 = 99.0;

/// Pairs each estimated entry with the nearest ground-truth timestamp within
/// [`ASSOCIATION_WINDOW`]; returns camera positions `(estimated, truth)`.
pub fn associate(estimated: &[(f64, Pose)], groundtruth: &[(f64, Pose)]) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    estimated
        .iter()
        .filter_map(|(t, p)| {
            groundtruth
                .iter()
                .map(|(tg, g)| ((tg - t).abs(), g))
                .filter(|(dt, _)| *dt <= ASSOCIATION_WINDOW)
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, g)| (p.translation, g.translation))
        })
        .collect()
}

/// Least-squares rigid transform `(R, t)` with `R·a + t ≈ b` (Kabsch).
pub fn rigid_align(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = pairs.len() as f64;
    let ca = pairs.iter().map(|p| p.0).sum::<Vector3<f64>>() / n;
    let cb = pairs.iter().map(|p| p.1).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (a, b) in pairs {
        cov += (b - cb) * (a - ca).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    (r, cb - r * ca)
}

/// ATE RMSE over camera positions of two camera-to-world trajectories.
pub fn ate_rmse(estimated: &[(f64, Pose)], groundtruth: &[(f64, Pose)], align: bool) -> Result<f64> {
    let pairs = associate(estimated, groundtruth);
    if pairs.len() < 3 {
        return Err(Error::TooFewPairs(pairs.len()));
    }
    let (r, t) = if align {
        rigid_align(&pairs)
    } else {
        (Matrix3::identity(), Vector3::zeros())
    };
    let sq: f64 = pairs.iter().map(|(a, b)| (r * a + t - b).norm_squared()).sum();
    Ok((sq / pairs.len() as f64).sqrt())
}

/// Length of the camera path.
pub fn trajectory_length(poses: &[Pose]) -> f64 {
    poses
        .windows(2)
        .map(|w| (w[1].translation - w[0].translation).norm())
        .sum()
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::Shape(format!("image sizes {a} and {b} differ or are empty")));
    }
    Ok(())
}

/// `10·log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let mse = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.into() - y.into();
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM (11×11 Gaussian window, σ = 1.5) of interleaved images.
pub fn ssim<T: Copy + Into<f64>>(a: &[T], b: &[T], width: usize, height: usize, channels: usize) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.len() != width * height * channels {
        return Err(Error::Shape(format!(
            "{} values for {width}x{height}x{channels}",
            a.len()
        )));
    }
    let a: Vec<f64> = a.iter().map(|&v| v.into()).collect();
    let b: Vec<f64> = b.iter().map(|&v| v.into()).collect();
    Ok(crate::loss::ssim(&a, &b, width, height, channels))
}

/// Per-pixel cosine similarity of a feature image against one query vector;
/// zero-feature pixels get 0.
pub fn similarity_map(features: &[f32], dim: usize, query: &[f64]) -> Vec<f64> {
    let qn = query.iter().map(|v| v * v).sum::<f64>().sqrt();
    features
        .chunks_exact(dim)
        .map(|f| {
            let fn_ = f.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if fn_ == 0.0 || qn == 0.0 {
                return 0.0;
            }
            f.iter().zip(query).map(|(&a, b)| a as f64 * b).sum::<f64>() / (fn_ * qn)
        })
        .collect()
}

/// Argmax-cosine label per pixel; zero-feature pixels get [`LABEL_INVALID`].
/// Ties go to the lower class id.
pub fn segment_by_query(features: &[f32], dim: usize, embeddings: &[Vec<f64>]) -> Vec<u8> {
    let norms: Vec<f64> = embeddings
        .iter()
        .map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    features
        .chunks_exact(dim)
        .map(|f| {
            if f.iter().all(|v| *v == 0.0) {
                return LABEL_INVALID;
            }
            let mut best = (LABEL_INVALID, f64::NEG_INFINITY);
            for (c, (e, n)) in embeddings.iter().zip(&norms).enumerate() {
                let s = f.iter().zip(e).map(|(&a, b)| a as f64 * b).sum::<f64>() / n;
                if s > best.1 {
                    best = (c as u8, s);
                }
            }
            best.0
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticScores {
    pub accuracy: f64,
    pub miou: f64,
}

/// Pixel accuracy over pixels with a valid ground-truth label, and mean IoU
/// over classes present in either prediction or ground truth on those pixels.
pub fn semantic_metrics(pred: &[u8], gt: &[u8]) -> Result<SemanticScores> {
    check_len(pred.len(), gt.len())?;
    let mut inter = [0u64; 256];
    let mut pred_count = [0u64; 256];
    let mut gt_count = [0u64; 256];
    let mut valid = 0u64;
    let mut correct = 0u64;
    for (&p, &g) in pred.iter().zip(gt) {
        if g == LABEL_INVALID {
            continue;
        }
        valid += 1;
        gt_count[g as usize] += 1;
        pred_count[p as usize] += 1;
        if p == g {
            correct += 1;
            inter[g as usize] += 1;
        }
    }
    if valid == 0 {
        return Err(Error::InvalidArgument("no valid ground-truth pixels".into()));
    }
    let ious: Vec<f64> = (0..LABEL_INVALID as usize)
        .filter(|&c| gt_count[c] + pred_count[c] > 0)
        .map(|c| inter[c] as f64 / (gt_count[c] + pred_count[c] - inter[c]) as f64)
        .collect();
    Ok(SemanticScores {
        accuracy: correct as f64 / valid as f64,
        miou: ious.iter().sum::<f64>() / ious.len().max(1) as f64,
    })
}
