//! Tile-based software rasterizer.
//!
//! Geometry (color, depth) is alpha-blended front to back. While blending,
//! each pixel keeps the `K` largest blending weights in an insertion-sorted
//! buffer; the feature pass later reuses those records so that
//! high-dimensional features are only touched `K` times per pixel.

mod backward;
mod feature;
mod forward;

pub use backward::{backward_geometric, backward_geometric_with_plan, GeometryGrads, Upstream};
pub use feature::{backward_feature, render_feature, render_feature_full_blend, render_feature_into};
pub use forward::{render_geometric, render_geometric_with_plan};

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::scene::{project_gaussian_with, CameraIntrinsics, Gaussian3D, Projected2D};

/// Rasterization parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderSettings {
    /// Size of the per-pixel Top-K record.
    pub top_k: usize,
    /// Blending stops once transmittance falls below this value.
    pub transmittance_floor: f64,
    pub background: Vector3<f64>,
    pub tile_size: usize,
    /// Per-Gaussian alpha is clamped to this value.
    pub alpha_max: f64,
    /// Contributions with alpha below this value are skipped.
    pub alpha_min: f64,
    /// Added to the diagonal of every projected covariance (px²).
    pub cov_dilation: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            top_k: 3,
            transmittance_floor: 1e-4,
            background: Vector3::zeros(),
            tile_size: 16,
            alpha_max: 0.999,
            alpha_min: 1.0 / 255.0,
            cov_dilation: crate::scene::COV2D_DILATION,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.top_k > u8::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "top_k must be in 1..=255, got {}",
                self.top_k
            )));
        }
        if !(self.transmittance_floor >= 0.0 && self.transmittance_floor < 1.0) {
            return Err(Error::InvalidArgument("transmittance_floor must be in [0, 1)".into()));
        }
        if self.tile_size == 0 {
            return Err(Error::InvalidArgument("tile_size must be positive".into()));
        }
        if !(self.alpha_max > 0.0 && self.alpha_max < 1.0) || !(0.0..self.alpha_max).contains(&self.alpha_min) {
            return Err(Error::InvalidArgument("need 0 <= alpha_min < alpha_max < 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel Top-K `(gaussian index, blending weight)` records, sorted by
/// descending weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKGrid {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u8>,
    pub indices: Vec<u32>,
    pub weights: Vec<f64>,
}

impl TopKGrid {
    pub fn new(k: usize, width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            k,
            width,
            height,
            counts: vec![0; n],
            indices: vec![0; n * k],
            weights: vec![0.0; n * k],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Records of one pixel, strongest first.
    #[inline]
    pub fn pixel(&self, p: usize) -> (&[u32], &[f64]) {
        let n = self.counts[p] as usize;
        let base = p * self.k;
        (&self.indices[base..base + n], &self.weights[base..base + n])
    }

    /// Checks every stored index against a map of `len` Gaussians.
    pub fn check_indices(&self, len: usize) -> Result<()> {
        for p in 0..self.pixel_count() {
            let (idx, _) = self.pixel(p);
            if let Some(&bad) = idx.iter().find(|&&i| i as usize >= len) {
                return Err(Error::StaleIndex {
                    index: bad as usize,
                    len,
                });
            }
        }
        Ok(())
    }
}

/// Output of a geometric render (and optionally the feature pass).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `H·W·3`.
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    /// Accumulated opacity `1 − T_final`.
    pub alpha: Vec<f64>,
    /// Sum of blending weights per pixel, accumulated independently of `alpha`.
    pub weight_sum: Vec<f64>,
    /// `H·W·D`; empty until [`render_feature`] fills it.
    pub feature: Vec<f64>,
    pub feature_dim: usize,
    pub topk: TopKGrid,
    /// Per-Gaussian maximum blending weight over all pixels of this render.
    pub contributions: Vec<f64>,
    /// Map generation the render was taken from; set by the map owner.
    pub generation: u64,
}

/// One visible, culled Gaussian ready for blending.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Splat {
    pub gaussian: u32,
    pub mean2d: [f64; 2],
    /// Inverse 2D covariance `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub depth: f64,
    pub color: [f64; 3],
}

/// Per-pixel evaluation of one splat.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SplatHit {
    pub alpha: f64,
    /// Unclamped Gaussian falloff `exp(power)`.
    pub falloff: f64,
    pub clamped: bool,
    pub dx: f64,
    pub dy: f64,
}

impl Splat {
    #[inline(always)]
    pub(crate) fn hit(&self, px: f64, py: f64, settings: &RenderSettings) -> Option<SplatHit> {
        let dx = px - self.mean2d[0];
        let dy = py - self.mean2d[1];
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        if power > 0.0 {
            return None;
        }
        let falloff = power.exp();
        let raw = self.opacity * falloff;
        if raw < settings.alpha_min || raw <= 0.0 {
            return None;
        }
        let clamped = raw > settings.alpha_max;
        Some(SplatHit {
            alpha: if clamped { settings.alpha_max } else { raw },
            falloff,
            clamped,
            dx,
            dy,
        })
    }
}

/// Projection and tile binning of one view, shared by the forward, backward
/// and feature passes.
#[derive(Debug, Clone)]
pub struct RasterPlan {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub gaussian_count: usize,
    pub(crate) splats: Vec<Splat>,
    pub(crate) projected: Vec<Projected2D>,
    /// `tile_offsets[t]..tile_offsets[t + 1]` indexes `tile_entries`.
    pub(crate) tile_offsets: Vec<usize>,
    /// Splat indices per tile, sorted front to back by `(depth, gaussian)`.
    pub(crate) tile_entries: Vec<u32>,
}

impl RasterPlan {
    pub fn build(gaussians: &[Gaussian3D], pose: &Pose, cam: &CameraIntrinsics, settings: &RenderSettings) -> Self {
        let (width, height, ts) = (cam.width, cam.height, settings.tile_size);
        let tiles_x = width.div_ceil(ts);
        let tiles_y = height.div_ceil(ts);

        struct Culled {
            splat: Splat,
            proj: Projected2D,
            tiles: [usize; 4],
        }

        let culled: Vec<Culled> = gaussians
            .par_iter()
            .enumerate()
            .filter_map(|(i, g)| {
                let proj = project_gaussian_with(g, pose, cam, settings.cov_dilation);
                if !proj.visible {
                    return None;
                }
                let opacity = g.opacity();
                if opacity < settings.alpha_min || opacity <= 0.0 {
                    return None;
                }
                let cov = proj.cov2d;
                let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(0, 1)];
                if !(det > 0.0) || !det.is_finite() {
                    return None;
                }
                let conic = [cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det];
                let (u, v) = (proj.mean2d.x, proj.mean2d.y);
                let (x0, x1, y0, y1) = if settings.alpha_min > 0.0 {
                    let r2 = 2.0 * (opacity / settings.alpha_min).ln();
                    let ex = (r2 * cov[(0, 0)]).sqrt() * (1.0 + 1e-9) + 1e-9;
                    let ey = (r2 * cov[(1, 1)]).sqrt() * (1.0 + 1e-9) + 1e-9;
                    let x0 = (u - ex).ceil().max(0.0);
                    let x1 = (u + ex).floor().min(width as f64 - 1.0);
                    let y0 = (v - ey).ceil().max(0.0);
                    let y1 = (v + ey).floor().min(height as f64 - 1.0);
                    if !(x0 <= x1 && y0 <= y1) {
                        return None;
                    }
                    (x0 as usize, x1 as usize, y0 as usize, y1 as usize)
                } else {
                    (0, width - 1, 0, height - 1)
                };
                Some(Culled {
                    splat: Splat {
                        gaussian: i as u32,
                        mean2d: [u, v],
                        conic,
                        opacity,
                        depth: proj.depth,
                        color: [g.color.x, g.color.y, g.color.z],
                    },
                    proj,
                    tiles: [x0 / ts, x1 / ts, y0 / ts, y1 / ts],
                })
            })
            .collect();

        let mut order: Vec<u32> = (0..culled.len() as u32).collect();
        order.sort_unstable_by(|&a, &b| {
            let (sa, sb) = (&culled[a as usize].splat, &culled[b as usize].splat);
            sa.depth.total_cmp(&sb.depth).then(sa.gaussian.cmp(&sb.gaussian))
        });

        let n_tiles = tiles_x * tiles_y;
        let mut counts = vec![0usize; n_tiles + 1];
        for c in &culled {
            let [tx0, tx1, ty0, ty1] = c.tiles;
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    counts[ty * tiles_x + tx + 1] += 1;
                }
            }
        }
        for t in 0..n_tiles {
            counts[t + 1] += counts[t];
        }
        let tile_offsets = counts.clone();
        let mut cursor = counts;
        let mut tile_entries = vec![0u32; tile_offsets[n_tiles]];
        for &s in &order {
            let [tx0, tx1, ty0, ty1] = culled[s as usize].tiles;
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    let t = ty * tiles_x + tx;
                    tile_entries[cursor[t]] = s;
                    cursor[t] += 1;
                }
            }
        }

        let (splats, projected) = culled.into_iter().map(|c| (c.splat, c.proj)).unzip();
        Self {
            width,
            height,
            tile_size: ts,
            tiles_x,
            tiles_y,
            gaussian_count: gaussians.len(),
            splats,
            projected,
            tile_offsets,
            tile_entries,
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Number of Gaussians that survived culling.
    pub fn visible_count(&self) -> usize {
        self.splats.len()
    }

    #[inline]
    pub(crate) fn tile_list(&self, t: usize) -> &[u32] {
        &self.tile_entries[self.tile_offsets[t]..self.tile_offsets[t + 1]]
    }

    /// Pixel rectangle `(x0, x1, y0, y1)` (exclusive ends) of tile `t`.
    #[inline]
    pub(crate) fn tile_rect(&self, t: usize) -> (usize, usize, usize, usize) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            (x0 + self.tile_size).min(self.width),
            y0,
            (y0 + self.tile_size).min(self.height),
        )
    }
}
