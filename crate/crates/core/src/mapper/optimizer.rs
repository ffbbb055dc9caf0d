use crate::raster::GeometryGrads;
use crate::scene::Gaussian3D;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-15;

/// Per-group learning rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub mean: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
    pub feature: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 2e-3,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 2e-2,
            feature: 1e-2,
        }
    }
}

/// Geometry parameters per Gaussian: mean 3, log-scale 3, rotation 4,
/// opacity 1, color 3.
const GEO: usize = 14;

/// Adam moments, stored per Gaussian in lockstep with the map.
///
/// Geometry and feature groups keep separate step counters so that the
/// feature group only advances on feature iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: LearningRates,
    feature_dim: usize,
    geo_m: Vec<f64>,
    geo_v: Vec<f64>,
    geo_steps: Vec<u64>,
    feat_m: Vec<f64>,
    feat_v: Vec<f64>,
    feat_steps: Vec<u64>,
}

impl OptimizerState {
    pub fn new(lr: LearningRates, feature_dim: usize) -> Self {
        Self {
            lr,
            feature_dim,
            geo_m: Vec::new(),
            geo_v: Vec::new(),
            geo_steps: Vec::new(),
            feat_m: Vec::new(),
            feat_v: Vec::new(),
            feat_steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.geo_steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.geo_steps.is_empty()
    }

    /// Appends fresh accumulators for `n` new Gaussians.
    pub fn extend(&mut self, n: usize) {
        let d = self.feature_dim;
        self.geo_m.extend(std::iter::repeat_n(0.0, n * GEO));
        self.geo_v.extend(std::iter::repeat_n(0.0, n * GEO));
        self.geo_steps.extend(std::iter::repeat_n(0, n));
        self.feat_m.extend(std::iter::repeat_n(0.0, n * d));
        self.feat_v.extend(std::iter::repeat_n(0.0, n * d));
        self.feat_steps.extend(std::iter::repeat_n(0, n));
    }

    /// Keeps entries whose `keep` flag is set, preserving order.
    pub fn retain(&mut self, keep: &[bool]) {
        let d = self.feature_dim;
        fn compact<T: Copy>(v: &mut Vec<T>, keep: &[bool], width: usize) {
            let mut out = Vec::with_capacity(v.len());
            for (i, &k) in keep.iter().enumerate() {
                if k {
                    out.extend_from_slice(&v[i * width..(i + 1) * width]);
                }
            }
            *v = out;
        }
        compact(&mut self.geo_m, keep, GEO);
        compact(&mut self.geo_v, keep, GEO);
        compact(&mut self.geo_steps, keep, 1);
        compact(&mut self.feat_m, keep, d);
        compact(&mut self.feat_v, keep, d);
        compact(&mut self.feat_steps, keep, 1);
    }

    /// One Adam step on the geometry of every Gaussian that received a
    /// nonzero gradient.
    pub fn step_geometry(&mut self, gaussians: &mut [Gaussian3D], grads: &GeometryGrads) {
        let lr = self.lr;
        let rates = [
            lr.mean,
            lr.mean,
            lr.mean,
            lr.log_scale,
            lr.log_scale,
            lr.log_scale,
            lr.rotation,
            lr.rotation,
            lr.rotation,
            lr.rotation,
            lr.opacity,
            lr.color,
            lr.color,
            lr.color,
        ];
        for (i, g) in gaussians.iter_mut().enumerate() {
            let r = &grads.rotation[i];
            let flat = [
                grads.mean[i].x,
                grads.mean[i].y,
                grads.mean[i].z,
                grads.log_scale[i].x,
                grads.log_scale[i].y,
                grads.log_scale[i].z,
                r[0],
                r[1],
                r[2],
                r[3],
                grads.opacity_logit[i],
                grads.color[i].x,
                grads.color[i].y,
                grads.color[i].z,
            ];
            if flat.iter().all(|v| *v == 0.0) {
                continue;
            }
            self.geo_steps[i] += 1;
            let t = self.geo_steps[i] as i32;
            let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
            let mut delta = [0.0; GEO];
            for k in 0..GEO {
                let m = &mut self.geo_m[i * GEO + k];
                let v = &mut self.geo_v[i * GEO + k];
                *m = BETA1 * *m + (1.0 - BETA1) * flat[k];
                *v = BETA2 * *v + (1.0 - BETA2) * flat[k] * flat[k];
                delta[k] = -rates[k] * (*m / c1) / ((*v / c2).sqrt() + EPS);
            }
            g.mean += nalgebra::Vector3::new(delta[0], delta[1], delta[2]);
            g.log_scale += nalgebra::Vector3::new(delta[3], delta[4], delta[5]);
            g.rotation.coords += nalgebra::Vector4::new(delta[7], delta[8], delta[9], delta[6]);
            g.opacity_logit += delta[10];
            g.color += nalgebra::Vector3::new(delta[11], delta[12], delta[13]);
            g.normalize_rotation();
        }
    }

    /// One Adam step on features (flat `N·D` gradient), then renormalizes
    /// each updated feature to unit length.
    pub fn step_features(&mut self, gaussians: &mut [Gaussian3D], grads: &[f64]) {
        let d = self.feature_dim;
        let lr = self.lr.feature;
        for (i, g) in gaussians.iter_mut().enumerate() {
            let gf = &grads[i * d..(i + 1) * d];
            if gf.iter().all(|v| *v == 0.0) {
                continue;
            }
            self.feat_steps[i] += 1;
            let t = self.feat_steps[i] as i32;
            let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
            for k in 0..d {
                let m = &mut self.feat_m[i * d + k];
                let v = &mut self.feat_v[i * d + k];
                *m = BETA1 * *m + (1.0 - BETA1) * gf[k];
                *v = BETA2 * *v + (1.0 - BETA2) * gf[k] * gf[k];
                g.feature[k] -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
            }
            g.normalize_feature();
        }
    }
}
