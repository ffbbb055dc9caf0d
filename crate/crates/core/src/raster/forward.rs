use rayon::prelude::*;

use super::{RasterPlan, RenderOutput, RenderSettings, TopKGrid};
use crate::pose::Pose;
use crate::scene::{CameraIntrinsics, Gaussian3D};

struct TileOutput {
    color: Vec<f64>,
    depth: Vec<f64>,
    alpha: Vec<f64>,
    weight_sum: Vec<f64>,
    counts: Vec<u8>,
    indices: Vec<u32>,
    weights: Vec<f64>,
    /// Max weight per entry of the tile list.
    contrib: Vec<f64>,
}

/// Alpha-blends color and depth and records per-pixel Top-K weights.
pub fn render_geometric(
    gaussians: &[Gaussian3D],
    pose: &Pose,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
) -> RenderOutput {
    let plan = RasterPlan::build(gaussians, pose, cam, settings);
    render_geometric_with_plan(&plan, settings)
}

pub fn render_geometric_with_plan(plan: &RasterPlan, settings: &RenderSettings) -> RenderOutput {
    let k = settings.top_k;
    let tiles: Vec<TileOutput> = (0..plan.tile_count())
        .into_par_iter()
        .map(|t| render_tile(plan, t, settings))
        .collect();

    let (w, h) = (plan.width, plan.height);
    let n = w * h;
    let mut out = RenderOutput {
        width: w,
        height: h,
        color: vec![0.0; n * 3],
        depth: vec![0.0; n],
        alpha: vec![0.0; n],
        weight_sum: vec![0.0; n],
        feature: Vec::new(),
        feature_dim: 0,
        topk: TopKGrid::new(k, w, h),
        contributions: vec![0.0; plan.gaussian_count],
        generation: 0,
    };

    for (t, tile) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = plan.tile_rect(t);
        let tw = x1 - x0;
        for y in y0..y1 {
            for x in x0..x1 {
                let local = (y - y0) * tw + (x - x0);
                let p = y * w + x;
                out.color[p * 3..p * 3 + 3].copy_from_slice(&tile.color[local * 3..local * 3 + 3]);
                out.depth[p] = tile.depth[local];
                out.alpha[p] = tile.alpha[local];
                out.weight_sum[p] = tile.weight_sum[local];
                out.topk.counts[p] = tile.counts[local];
                out.topk.indices[p * k..(p + 1) * k].copy_from_slice(&tile.indices[local * k..(local + 1) * k]);
                out.topk.weights[p * k..(p + 1) * k].copy_from_slice(&tile.weights[local * k..(local + 1) * k]);
            }
        }
        for (&s, &c) in plan.tile_list(t).iter().zip(&tile.contrib) {
            let g = plan.splats[s as usize].gaussian as usize;
            if c > out.contributions[g] {
                out.contributions[g] = c;
            }
        }
    }
    out
}

fn render_tile(plan: &RasterPlan, t: usize, settings: &RenderSettings) -> TileOutput {
    let (x0, x1, y0, y1) = plan.tile_rect(t);
    let npix = (x1 - x0) * (y1 - y0);
    let k = settings.top_k;
    let list = plan.tile_list(t);
    let bg = settings.background;
    let mut out = TileOutput {
        color: vec![0.0; npix * 3],
        depth: vec![0.0; npix],
        alpha: vec![0.0; npix],
        weight_sum: vec![0.0; npix],
        counts: vec![0; npix],
        indices: vec![0; npix * k],
        weights: vec![0.0; npix * k],
        contrib: vec![0.0; list.len()],
    };
    let mut kbuf: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
    let mut local = 0;
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64, y as f64);
            let mut trans = 1.0;
            let mut c = [0.0; 3];
            let mut d = 0.0;
            let mut wsum = 0.0;
            kbuf.clear();
            for (j, &s) in list.iter().enumerate() {
                let sp = &plan.splats[s as usize];
                let Some(hit) = sp.hit(px, py, settings) else {
                    continue;
                };
                let w = hit.alpha * trans;
                c[0] += w * sp.color[0];
                c[1] += w * sp.color[1];
                c[2] += w * sp.color[2];
                d += w * sp.depth;
                wsum += w;
                if w > out.contrib[j] {
                    out.contrib[j] = w;
                }
                push_topk(&mut kbuf, k, w, sp.gaussian);
                trans *= 1.0 - hit.alpha;
                if trans < settings.transmittance_floor {
                    break;
                }
            }
            out.color[local * 3] = c[0] + trans * bg.x;
            out.color[local * 3 + 1] = c[1] + trans * bg.y;
            out.color[local * 3 + 2] = c[2] + trans * bg.z;
            out.depth[local] = d;
            out.alpha[local] = 1.0 - trans;
            out.weight_sum[local] = wsum;
            out.counts[local] = kbuf.len() as u8;
            for (slot, &(w, g)) in kbuf.iter().enumerate() {
                out.indices[local * k + slot] = g;
                out.weights[local * k + slot] = w;
            }
            local += 1;
        }
    }
    out
}

/// Inserts into a buffer kept sorted by descending weight. Contributors
/// arrive front to back, so on equal weights the earlier (closer) entry stays
/// ahead and a tie at rank K keeps the closer Gaussian.
#[inline]
pub(crate) fn push_topk(buf: &mut Vec<(f64, u32)>, k: usize, w: f64, g: u32) {
    if w <= 0.0 {
        return;
    }
    if buf.len() == k {
        if w <= buf[k - 1].0 {
            return;
        }
        buf.pop();
    }
    let pos = buf.partition_point(|&(bw, _)| bw >= w);
    buf.insert(pos, (w, g));
}
