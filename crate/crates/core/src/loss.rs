//! Mapping losses and their upstream image gradients.

use crate::error::{Error, Result};
use crate::raster::RenderOutput;
use crate::scene::Frame;

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;

/// Second color term mixed in with weight `lambda_color_mix`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorTerm {
    Dssim,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_geo: f64,
    pub lambda_feat: f64,
    /// Weight of the second color term against plain L1.
    pub lambda_color_mix: f64,
    pub lambda_depth: f64,
    pub color_term: ColorTerm,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_geo: 1.0,
            lambda_feat: 1.0,
            lambda_color_mix: 0.2,
            lambda_depth: 1.0,
            color_term: ColorTerm::Dssim,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_geo,
            self.lambda_feat,
            self.lambda_color_mix,
            self.lambda_depth,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and >= 0: {self:?}"
            )));
        }
        if self.lambda_color_mix > 1.0 {
            return Err(Error::InvalidArgument("color mix weight must be <= 1".into()));
        }
        Ok(())
    }
}

/// Loss values plus gradients of `map` with respect to the rendered images.
#[derive(Debug, Clone, PartialEq)]
pub struct Losses {
    pub map: f64,
    pub geo: f64,
    pub feat: f64,
    pub grad_color: Vec<f64>,
    pub grad_depth: Vec<f64>,
    /// W.r.t. accumulated opacity.
    pub grad_alpha: Vec<f64>,
    /// Empty when the render carries no feature image.
    pub grad_feature: Vec<f64>,
}

/// Geometric loss value (without `lambda_geo`) and its image gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoLoss {
    pub loss: f64,
    pub grad_color: Vec<f64>,
    pub grad_depth: Vec<f64>,
    pub grad_alpha: Vec<f64>,
}

/// Pixels whose accumulated opacity is at most this carry no depth term.
pub const DEPTH_ALPHA_MIN: f64 = 0.5;

/// Geometric loss: color L1/D-SSIM mix plus masked depth L1.
///
/// The depth residual is `D/A − D_gt` with `A` the accumulated opacity, over
/// pixels with valid depth and `A > DEPTH_ALPHA_MIN`. The rendered depth is
/// an opacity-weighted sum; comparing it against `D_gt` unnormalized would
/// pull every Gaussian away from the camera wherever coverage is below one.
pub fn geometric_loss(render: &RenderOutput, frame: &Frame, w: &LossWeights) -> Result<GeoLoss> {
    let n = frame.pixel_count();
    let (color, depth, alpha) = (&render.color, &render.depth, &render.alpha);
    if color.len() != n * 3 || depth.len() != n || alpha.len() != n {
        return Err(Error::Shape(format!(
            "render has {} color / {} depth / {} alpha values, frame has {n} pixels",
            color.len(),
            depth.len(),
            alpha.len()
        )));
    }
    let gt: Vec<f64> = frame.color.iter().map(|&v| v as f64).collect();
    let (l1, g_l1) = l1_mean(color, &gt);
    let (second, g_second) = match w.color_term {
        ColorTerm::L1 => (l1, g_l1.clone()),
        ColorTerm::Dssim => {
            let (s, g) = ssim_with_grad(color, &gt, frame.width, frame.height, 3);
            (1.0 - s, g.into_iter().map(|v| -v).collect())
        }
    };
    let mix = w.lambda_color_mix;
    let mut loss = (1.0 - mix) * l1 + mix * second;
    let grad_color: Vec<f64> = g_l1
        .iter()
        .zip(&g_second)
        .map(|(a, b)| (1.0 - mix) * a + mix * b)
        .collect();

    let valid = frame.depth.iter().filter(|&&d| d > 0.0).count();
    let mut grad_depth = vec![0.0; n];
    let mut grad_alpha = vec![0.0; n];
    if valid > 0 && w.lambda_depth > 0.0 {
        let scale = w.lambda_depth / valid as f64;
        let mut sum = 0.0;
        for p in 0..n {
            let (dg, a) = (frame.depth[p] as f64, alpha[p]);
            if dg > 0.0 && a > DEPTH_ALPHA_MIN {
                let r = depth[p] / a - dg;
                sum += r.abs();
                grad_depth[p] = scale * sign(r) / a;
                grad_alpha[p] = -scale * sign(r) * depth[p] / (a * a);
            }
        }
        loss += scale * sum;
    }
    Ok(GeoLoss {
        loss,
        grad_color,
        grad_depth,
        grad_alpha,
    })
}

/// Feature L1 averaged over valid-feature pixels and channels.
///
/// Returns `(loss, d loss / d feature)`; both are unweighted.
pub fn feature_loss(feature: &[f64], frame: &Frame) -> Result<(f64, Vec<f64>)> {
    let d = frame.feature_dim;
    let n = frame.pixel_count();
    if feature.len() != n * d {
        return Err(Error::Shape(format!(
            "feature render has {} values, expected {}",
            feature.len(),
            n * d
        )));
    }
    let mut grad = vec![0.0; n * d];
    let valid = (0..n).filter(|&p| frame.feature_valid(p)).count();
    if valid == 0 || d == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / (valid * d) as f64;
    let mut sum = 0.0;
    for p in (0..n).filter(|&p| frame.feature_valid(p)) {
        for c in 0..d {
            let r = feature[p * d + c] - frame.feature[p * d + c] as f64;
            sum += r.abs();
            grad[p * d + c] = scale * sign(r);
        }
    }
    Ok((scale * sum, grad))
}

/// Full mapping loss for one render against its keyframe.
///
/// The feature term is included only when the render carries features.
pub fn compute_losses(render: &RenderOutput, frame: &Frame, w: &LossWeights) -> Result<Losses> {
    if render.width != frame.width || render.height != frame.height {
        return Err(Error::Shape(format!(
            "render {}x{} vs frame {}x{}",
            render.width, render.height, frame.width, frame.height
        )));
    }
    let GeoLoss {
        loss: geo,
        mut grad_color,
        mut grad_depth,
        mut grad_alpha,
    } = geometric_loss(render, frame, w)?;
    for g in grad_color.iter_mut().chain(&mut grad_depth).chain(&mut grad_alpha) {
        *g *= w.lambda_geo;
    }
    let (feat, mut grad_feature) = if render.feature.is_empty() {
        (0.0, Vec::new())
    } else {
        if render.feature_dim != frame.feature_dim {
            return Err(Error::Shape(format!(
                "render feature dim {} vs frame {}",
                render.feature_dim, frame.feature_dim
            )));
        }
        feature_loss(&render.feature, frame)?
    };
    grad_feature.iter_mut().for_each(|g| *g *= w.lambda_feat);
    Ok(Losses {
        map: w.lambda_geo * geo + w.lambda_feat * feat,
        geo,
        feat,
        grad_color,
        grad_depth,
        grad_alpha,
        grad_feature,
    })
}

fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn l1_mean(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let scale = 1.0 / a.len().max(1) as f64;
    let mut sum = 0.0;
    let grad = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            sum += (x - y).abs();
            scale * sign(x - y)
        })
        .collect();
    (sum * scale, grad)
}

fn gaussian_kernel() -> Vec<f64> {
    let r = SSIM_RADIUS as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable zero-padded "same" filtering of one channel. The kernel is
/// symmetric so this operator is its own adjoint.
fn blur(img: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = k.len() / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            let mut s = 0.0;
            for xx in lo..=hi {
                s += k[xx + r - x] * row[xx];
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        let dst = &mut out[y * w..(y + 1) * w];
        for yy in lo..=hi {
            let kv = k[yy + r - y];
            let src = &tmp[yy * w..(yy + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Mean SSIM over all pixels and channels (11×11 Gaussian window, σ = 1.5).
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize, channels: usize) -> f64 {
    ssim_impl(a, b, width, height, channels, false).0
}

/// Mean SSIM and its gradient with respect to `a`.
pub fn ssim_with_grad(a: &[f64], b: &[f64], width: usize, height: usize, channels: usize) -> (f64, Vec<f64>) {
    ssim_impl(a, b, width, height, channels, true)
}

fn ssim_impl(a: &[f64], b: &[f64], w: usize, h: usize, channels: usize, want_grad: bool) -> (f64, Vec<f64>) {
    let n = w * h;
    let k = gaussian_kernel();
    let scale = 1.0 / (n * channels).max(1) as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; n * channels] } else { Vec::new() };
    for c in 0..channels {
        let x: Vec<f64> = (0..n).map(|p| a[p * channels + c]).collect();
        let y: Vec<f64> = (0..n).map(|p| b[p * channels + c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(u, v)| u * v).collect();
        let mx = blur(&x, w, h, &k);
        let my = blur(&y, w, h, &k);
        let mxx = blur(&xx, w, h, &k);
        let myy = blur(&yy, w, h, &k);
        let mxy = blur(&xy, w, h, &k);

        let mut g_mu = vec![0.0; n];
        let mut g_xx = vec![0.0; n];
        let mut g_xy = vec![0.0; n];
        for p in 0..n {
            let (ux, uy) = (mx[p], my[p]);
            let vx = mxx[p] - ux * ux;
            let vy = myy[p] - uy * uy;
            let cxy = mxy[p] - ux * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * cxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = vx + vy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let ds_dvx = -s / b2;
                let ds_dcxy = 2.0 * s / a2;
                let ds_dux = s * (2.0 * uy / a1 - 2.0 * ux / b1);
                g_mu[p] = scale * (ds_dux - 2.0 * ux * ds_dvx - uy * ds_dcxy);
                g_xx[p] = scale * ds_dvx;
                g_xy[p] = scale * ds_dcxy;
            }
        }
        if want_grad {
            let bm = blur(&g_mu, w, h, &k);
            let bxx = blur(&g_xx, w, h, &k);
            let bxy = blur(&g_xy, w, h, &k);
            for p in 0..n {
                grad[p * channels + c] = bm[p] + 2.0 * x[p] * bxx[p] + y[p] * bxy[p];
            }
        }
    }
    (total * scale, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a: Vec<f64> = (0..12 * 9 * 3).map(|_| rng.random()).collect();
        assert!((ssim(&a, &a, 12, 9, 3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (w, h) = (9, 7);
        let a: Vec<f64> = (0..w * h * 2).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..w * h * 2).map(|_| rng.random()).collect();
        let (_, g) = ssim_with_grad(&a, &b, w, h, 2);
        let eps = 1e-6;
        for i in (0..a.len()).step_by(5) {
            let mut ap = a.clone();
            ap[i] += eps;
            let mut am = a.clone();
            am[i] -= eps;
            let fd = (ssim(&ap, &b, w, h, 2) - ssim(&am, &b, w, h, 2)) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }
}
