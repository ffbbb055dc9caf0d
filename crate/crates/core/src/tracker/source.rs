use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rstar::primitives::GeomWithData;
use rstar::RTree;

use crate::error::{Error, Result};
use crate::scene::{CameraIntrinsics, Frame};

/// Smallest eigenvalue of a plane-regularized covariance.
pub const PLANE_EPSILON: f64 = 1e-3;

/// A depth sample lifted into the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePoint {
    /// Camera-frame position.
    pub position: Vector3<f64>,
    /// Plane-regularized covariance in the camera frame.
    pub covariance: Matrix3<f64>,
    pub pixel: (usize, usize),
    pub feature: Vec<f64>,
    pub color: Vector3<f64>,
    /// Metric footprint of one stride cell at this depth.
    pub spacing: f64,
}

/// Lifts every valid depth pixel on the stride grid into the camera frame.
///
/// Covariances use `knn` neighbors (fewer when the frame has few points).
/// A frame without valid depth yields an empty list.
pub fn backproject_depth(frame: &Frame, cam: &CameraIntrinsics, stride: usize, knn: usize) -> Result<Vec<SourcePoint>> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    if frame.width != cam.width || frame.height != cam.height {
        return Err(Error::Shape(format!(
            "frame {}x{} vs camera {}x{}",
            frame.width, frame.height, cam.width, cam.height
        )));
    }
    let mut points = Vec::new();
    for v in (0..frame.height).step_by(stride) {
        for u in (0..frame.width).step_by(stride) {
            let p = v * frame.width + u;
            let z = frame.depth[p] as f64;
            if !(z > 0.0 && z.is_finite()) {
                continue;
            }
            let c = frame.color_at(p);
            points.push(SourcePoint {
                position: cam.unproject(u as f64, v as f64, z),
                covariance: Matrix3::identity(),
                pixel: (u, v),
                feature: frame.feature_at(p).iter().map(|&f| f as f64).collect(),
                color: Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64),
                spacing: z * stride as f64 / cam.fx.min(cam.fy),
            });
        }
    }
    if points.len() >= 2 {
        let pos: Vec<Vector3<f64>> = points.iter().map(|s| s.position).collect();
        let covs = estimate_covariances(&pos, knn.min(points.len() - 1))?;
        for (s, c) in points.iter_mut().zip(covs) {
            s.covariance = c;
        }
    } else {
        for s in &mut points {
            s.covariance = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, PLANE_EPSILON));
        }
    }
    Ok(points)
}

/// Plane-regularized covariance of each point's `k` nearest neighbors.
///
/// The neighborhood covariance is eigen-decomposed and its eigenvalues are
/// replaced by `(1, 1, ε)` in descending order.
pub fn estimate_covariances(points: &[Vector3<f64>], k: usize) -> Result<Vec<Matrix3<f64>>> {
    if k == 0 || points.len() < k + 1 {
        return Err(Error::TooFewPoints {
            needed: k.max(1) + 1,
            got: points.len(),
        });
    }
    let tree = RTree::bulk_load(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| GeomWithData::new([p.x, p.y, p.z], i))
            .collect(),
    );
    let covs = points
        .iter()
        .map(|q| {
            // the query point itself is among the results
            let nn: Vec<usize> = tree
                .nearest_neighbor_iter([q.x, q.y, q.z])
                .take(k + 1)
                .map(|n| n.data)
                .collect();
            let mean = nn.iter().map(|&i| points[i]).sum::<Vector3<f64>>() / nn.len() as f64;
            let mut cov = Matrix3::zeros();
            for &i in &nn {
                let d = points[i] - mean;
                cov += d * d.transpose();
            }
            regularize_plane(&(cov / nn.len() as f64))
        })
        .collect();
    Ok(covs)
}

/// Replaces the eigenvalues of a symmetric matrix by `(1, 1, ε)`.
pub fn regularize_plane(cov: &Matrix3<f64>) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let smallest = eig.eigenvalues.imin();
    let n = eig.eigenvectors.column(smallest).into_owned();
    Matrix3::identity() - n * n.transpose() * (1.0 - PLANE_EPSILON)
}

/// Unit normal (smallest-eigenvalue direction) of a regularized covariance.
pub fn plane_normal(cov: &Matrix3<f64>) -> Vector3<f64> {
    let eig = SymmetricEigen::new(*cov);
    eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned()
}
