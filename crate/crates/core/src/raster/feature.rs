use rayon::prelude::*;

use super::{RasterPlan, RenderSettings, TopKGrid};
use crate::error::{Error, Result};
use crate::scene::Gaussian3D;

/// Renders `H·W·D` features from recorded Top-K weights.
///
/// Each pixel's recorded weights are renormalized to sum to one and the
/// selected Gaussians' features are mixed with them. Pixels without records
/// get the zero vector.
pub fn render_feature(gaussians: &[Gaussian3D], topk: &TopKGrid, feature_dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; topk.pixel_count() * feature_dim];
    render_feature_into(gaussians, topk, feature_dim, &mut out)?;
    Ok(out)
}

/// [`render_feature`] into a caller-owned `H·W·D` buffer; every value is
/// overwritten.
pub fn render_feature_into(
    gaussians: &[Gaussian3D],
    topk: &TopKGrid,
    feature_dim: usize,
    out: &mut [f64],
) -> Result<()> {
    topk.check_indices(gaussians.len())?;
    if let Some(g) = gaussians.iter().find(|g| g.feature.len() != feature_dim) {
        return Err(Error::Shape(format!(
            "gaussian feature has {} channels, expected {feature_dim}",
            g.feature.len()
        )));
    }
    let d = feature_dim;
    if out.len() != topk.pixel_count() * d {
        return Err(Error::Shape(format!(
            "feature buffer has {} values, expected {}",
            out.len(),
            topk.pixel_count() * d
        )));
    }
    if d == 0 {
        return Ok(());
    }
    out.par_chunks_mut(d * topk.width.max(1))
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..topk.width {
                let (idx, w) = topk.pixel(y * topk.width + x);
                let dst = &mut row[x * d..(x + 1) * d];
                let Some((&first, rest)) = idx.split_first() else {
                    dst.fill(0.0);
                    continue;
                };
                let norm: f64 = w.iter().sum();
                let w0 = w[0] / norm;
                for (o, f) in dst.iter_mut().zip(&gaussians[first as usize].feature) {
                    *o = w0 * f;
                }
                for (&g, &wk) in rest.iter().zip(&w[1..]) {
                    let wn = wk / norm;
                    for (o, f) in dst.iter_mut().zip(&gaussians[g as usize].feature) {
                        *o += wn * f;
                    }
                }
            }
        });
    Ok(())
}

/// Feature gradients (`N·D`, flat) of the Top-K feature pass.
///
/// Blending weights are treated as constants, so geometry receives nothing
/// from this path.
pub fn backward_feature(
    topk: &TopKGrid,
    grad_feature: &[f64],
    gaussian_count: usize,
    feature_dim: usize,
) -> Result<Vec<f64>> {
    let d = feature_dim;
    if grad_feature.len() != topk.pixel_count() * d {
        return Err(Error::Shape(format!(
            "feature gradient has {} values, expected {}",
            grad_feature.len(),
            topk.pixel_count() * d
        )));
    }
    topk.check_indices(gaussian_count)?;
    let mut grads = vec![0.0; gaussian_count * d];
    for p in 0..topk.pixel_count() {
        let (idx, w) = topk.pixel(p);
        if idx.is_empty() {
            continue;
        }
        let gf = &grad_feature[p * d..(p + 1) * d];
        if gf.iter().all(|v| *v == 0.0) {
            continue;
        }
        let norm: f64 = w.iter().sum();
        for (&g, &wk) in idx.iter().zip(w) {
            let wn = wk / norm;
            let dst = &mut grads[g as usize * d..(g as usize + 1) * d];
            for (o, v) in dst.iter_mut().zip(gf) {
                *o += wn * v;
            }
        }
    }
    Ok(grads)
}

/// Conventional alpha-blended feature rendering over every contributor.
///
/// Returns the unnormalized blend `Σ wᵢ fᵢ` (`H·W·D`) and the per-pixel
/// weight sum `Σ wᵢ`. Used as the full-blend baseline.
pub fn render_feature_full_blend(
    gaussians: &[Gaussian3D],
    plan: &RasterPlan,
    settings: &RenderSettings,
    feature_dim: usize,
) -> (Vec<f64>, Vec<f64>) {
    let d = feature_dim;
    let tiles: Vec<(Vec<f64>, Vec<f64>)> = (0..plan.tile_count())
        .into_par_iter()
        .map(|t| {
            let (x0, x1, y0, y1) = plan.tile_rect(t);
            let npix = (x1 - x0) * (y1 - y0);
            let mut feat = vec![0.0; npix * d];
            let mut wsum = vec![0.0; npix];
            let list = plan.tile_list(t);
            let mut local = 0;
            for y in y0..y1 {
                for x in x0..x1 {
                    let mut trans = 1.0;
                    let dst = &mut feat[local * d..(local + 1) * d];
                    for &s in list {
                        let sp = &plan.splats[s as usize];
                        let Some(hit) = sp.hit(x as f64, y as f64, settings) else {
                            continue;
                        };
                        let w = hit.alpha * trans;
                        wsum[local] += w;
                        for (o, f) in dst.iter_mut().zip(&gaussians[sp.gaussian as usize].feature) {
                            *o += w * f;
                        }
                        trans *= 1.0 - hit.alpha;
                        if trans < settings.transmittance_floor {
                            break;
                        }
                    }
                    local += 1;
                }
            }
            (feat, wsum)
        })
        .collect();

    let (w, h) = (plan.width, plan.height);
    let mut feat = vec![0.0; w * h * d];
    let mut wsum = vec![0.0; w * h];
    for (t, (tf, tw)) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = plan.tile_rect(t);
        let width = x1 - x0;
        for y in y0..y1 {
            for x in x0..x1 {
                let local = (y - y0) * width + (x - x0);
                let p = y * w + x;
                feat[p * d..(p + 1) * d].copy_from_slice(&tf[local * d..(local + 1) * d]);
                wsum[p] = tw[local];
            }
        }
    }
    (feat, wsum)
}
