//! On-disk dataset layout.
//!
//! ```text
//! color/%06d.png     8-bit RGB
//! depth/%06d.png     16-bit, value = round(depth · depth_scale), 0 = invalid
//! feature/%06d.bin   "FEAT", H, W, D (u32 LE), then H·W·D f32 LE
//! label/%06d.png     8-bit class ids, 255 = invalid
//! groundtruth.txt    TUM: timestamp tx ty tz qx qy qz qw (camera-to-world)
//! manifest.txt       key=value
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::scene::{CameraIntrinsics, Frame};

pub const DEFAULT_DEPTH_SCALE: f64 = 5000.0;
const FEATURE_MAGIC: &[u8; 4] = b"FEAT";
const MANIFEST: &str = "manifest.txt";
const GROUNDTRUTH: &str = "groundtruth.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub frame_count: usize,
    pub camera: CameraIntrinsics,
    /// Stored depth units per scene unit.
    pub depth_scale: f64,
    pub feature_dim: usize,
    pub class_names: Vec<String>,
    pub class_embeddings: Vec<Vec<f64>>,
}

/// Frames plus their ground-truth trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<Frame>,
    /// Camera-to-world, one per frame (TUM convention).
    pub groundtruth: Vec<Pose>,
}

impl Dataset {
    /// Ground-truth poses as world-to-camera, the convention used by tracking.
    pub fn world_to_camera(&self) -> Vec<Pose> {
        self.groundtruth.iter().map(Pose::inverse).collect()
    }
}

fn frame_file(dir: &Path, sub: &str, i: usize, ext: &str) -> PathBuf {
    dir.join(sub).join(format!("{i:06}.{ext}"))
}

fn image_err(path: &Path, frame: usize, e: image::ImageError) -> Error {
    Error::dataset(path, format!("frame {frame}: {e}"))
}

pub fn encode_depth(z: f32, scale: f64) -> u16 {
    if !(z > 0.0) {
        return 0;
    }
    (z as f64 * scale).round().clamp(1.0, u16::MAX as f64) as u16
}

pub fn decode_depth(v: u16, scale: f64) -> f32 {
    (v as f64 / scale) as f32
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let m = &dataset.manifest;
    if dataset.frames.len() != m.frame_count || dataset.groundtruth.len() != m.frame_count {
        return Err(Error::Shape(format!(
            "manifest lists {} frames, got {} frames and {} poses",
            m.frame_count,
            dataset.frames.len(),
            dataset.groundtruth.len()
        )));
    }
    for sub in ["color", "depth", "feature", "label"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let (w, h) = (m.camera.width, m.camera.height);
    for (i, f) in dataset.frames.iter().enumerate() {
        if f.width != w || f.height != h || f.feature_dim != m.feature_dim {
            return Err(Error::Shape(format!(
                "frame {i} does not match the manifest resolution or D"
            )));
        }
        let p = frame_file(dir, "color", i, "png");
        let rgb: Vec<u8> = f
            .color
            .iter()
            .map(|&c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(w as u32, h as u32, rgb)
            .expect("sized buffer")
            .save(&p)
            .map_err(|e| image_err(&p, i, e))?;

        let p = frame_file(dir, "depth", i, "png");
        let depth: Vec<u16> = f.depth.iter().map(|&z| encode_depth(z, m.depth_scale)).collect();
        ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, depth)
            .expect("sized buffer")
            .save(&p)
            .map_err(|e| image_err(&p, i, e))?;

        let p = frame_file(dir, "label", i, "png");
        let label = f
            .label
            .clone()
            .unwrap_or_else(|| vec![crate::scene::LABEL_INVALID; w * h]);
        GrayImage::from_raw(w as u32, h as u32, label)
            .expect("sized buffer")
            .save(&p)
            .map_err(|e| image_err(&p, i, e))?;

        let p = frame_file(dir, "feature", i, "bin");
        let mut bytes = Vec::with_capacity(16 + f.feature.len() * 4);
        bytes.extend_from_slice(FEATURE_MAGIC);
        for v in [h, w, m.feature_dim] {
            bytes.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &f.feature {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    }

    let mut gt = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (f, pose) in dataset.frames.iter().zip(&dataset.groundtruth) {
        gt.push_str(&tum_line(f.timestamp, pose));
    }
    let p = dir.join(GROUNDTRUTH);
    fs::write(&p, gt).map_err(|e| Error::io(&p, e))?;

    let p = dir.join(MANIFEST);
    fs::write(&p, manifest_text(m)).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

/// One TUM trajectory line; floats use the shortest round-trip form.
pub fn tum_line(timestamp: f64, pose: &Pose) -> String {
    let t = pose.translation;
    let q = pose.rotation.quaternion();
    format!(
        "{} {} {} {} {} {} {} {}\n",
        timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
    )
}

/// Parses TUM lines (comments and blank lines skipped).
pub fn parse_tum(text: &str, path: &Path) -> Result<Vec<(f64, Pose)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::dataset(path, format!("line {}: {e}", ln + 1)))?;
        if v.len() != 8 {
            return Err(Error::dataset(
                path,
                format!("line {}: expected 8 values, got {}", ln + 1, v.len()),
            ));
        }
        out.push((v[0], Pose::from_raw([v[7], v[4], v[5], v[6]], [v[1], v[2], v[3]])));
    }
    Ok(out)
}

pub fn write_tum(path: &Path, entries: &[(f64, Pose)]) -> Result<()> {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in entries {
        s.push_str(&tum_line(*t, p));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_tum(path: &Path) -> Result<Vec<(f64, Pose)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tum(&text, path)
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn manifest_text(m: &DatasetManifest) -> String {
    let c = &m.camera;
    let mut s = String::new();
    let _ = writeln!(s, "frame_count={}", m.frame_count);
    let _ = writeln!(s, "width={}", c.width);
    let _ = writeln!(s, "height={}", c.height);
    let _ = writeln!(s, "fx={}", c.fx);
    let _ = writeln!(s, "fy={}", c.fy);
    let _ = writeln!(s, "cx={}", c.cx);
    let _ = writeln!(s, "cy={}", c.cy);
    let _ = writeln!(s, "near={}", c.near);
    let _ = writeln!(s, "far={}", c.far);
    let _ = writeln!(s, "depth_scale={}", m.depth_scale);
    let _ = writeln!(s, "feature_dim={}", m.feature_dim);
    let _ = writeln!(s, "class_count={}", m.class_names.len());
    let _ = writeln!(s, "class_names={}", m.class_names.join(","));
    for (i, e) in m.class_embeddings.iter().enumerate() {
        let _ = writeln!(s, "class_embedding.{i}={}", join_floats(e));
    }
    s
}

/// Parses `key=value` lines into ordered pairs; `#` starts a comment line.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::dataset(path, format!("line {}: expected key=value", ln + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let kv = parse_key_values(&text, path)?;
    let get = |key: &str| -> Result<&str> {
        kv.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::dataset(path, format!("missing key '{key}'")))
    };
    fn num<T: std::str::FromStr>(path: &Path, key: &str, v: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        v.parse().map_err(|e| Error::dataset(path, format!("key '{key}': {e}")))
    }
    let f = |key: &str| -> Result<f64> { num(path, key, get(key)?) };
    let u = |key: &str| -> Result<usize> { num(path, key, get(key)?) };

    let camera = CameraIntrinsics::new(
        f("fx")?,
        f("fy")?,
        f("cx")?,
        f("cy")?,
        u("width")?,
        u("height")?,
        f("near")?,
        f("far")?,
    )
    .map_err(|e| Error::dataset(path, e.to_string()))?;
    let class_count = u("class_count")?;
    let names = get("class_names")?;
    let class_names: Vec<String> = if names.is_empty() {
        vec![]
    } else {
        names.split(',').map(str::to_string).collect()
    };
    if class_names.len() != class_count {
        return Err(Error::dataset(
            path,
            format!("{} class names for class_count {class_count}", class_names.len()),
        ));
    }
    let feature_dim = u("feature_dim")?;
    let class_embeddings = (0..class_count)
        .map(|i| {
            let key = format!("class_embedding.{i}");
            let e: Vec<f64> = get(&key)?
                .split(',')
                .map(|v| num(path, &key, v))
                .collect::<Result<_>>()?;
            if e.len() != feature_dim {
                return Err(Error::dataset(
                    path,
                    format!("key '{key}': {} values, expected {feature_dim}", e.len()),
                ));
            }
            Ok(e)
        })
        .collect::<Result<_>>()?;
    Ok(DatasetManifest {
        frame_count: u("frame_count")?,
        camera,
        depth_scale: f("depth_scale")?,
        feature_dim,
        class_names,
        class_embeddings,
    })
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    parse_manifest(&dir.join(MANIFEST))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let gt_path = dir.join(GROUNDTRUTH);
    let gt = read_tum(&gt_path)?;
    if gt.len() != manifest.frame_count {
        return Err(Error::dataset(
            &gt_path,
            format!("{} poses, manifest lists {} frames", gt.len(), manifest.frame_count),
        ));
    }
    let frames = gt
        .iter()
        .enumerate()
        .map(|(i, (t, _))| read_frame(dir, &manifest, i, *t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest,
        frames,
        groundtruth: gt.into_iter().map(|(_, p)| p).collect(),
    })
}

fn check_size(path: &Path, frame: usize, got: (u32, u32), w: usize, h: usize) -> Result<()> {
    if got != (w as u32, h as u32) {
        return Err(Error::dataset(
            path,
            format!("frame {frame}: image is {}x{}, expected {w}x{h}", got.0, got.1),
        ));
    }
    Ok(())
}

fn read_frame(dir: &Path, m: &DatasetManifest, i: usize, timestamp: f64) -> Result<Frame> {
    let (w, h, d) = (m.camera.width, m.camera.height, m.feature_dim);

    let p = frame_file(dir, "color", i, "png");
    let img = image::open(&p).map_err(|e| image_err(&p, i, e))?.into_rgb8();
    check_size(&p, i, img.dimensions(), w, h)?;
    let color: Vec<f32> = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();

    let p = frame_file(dir, "depth", i, "png");
    let img = image::open(&p).map_err(|e| image_err(&p, i, e))?;
    let image::DynamicImage::ImageLuma16(img) = img else {
        return Err(Error::dataset(
            &p,
            format!("frame {i}: depth must be a 16-bit grayscale PNG"),
        ));
    };
    check_size(&p, i, img.dimensions(), w, h)?;
    let depth: Vec<f32> = img
        .into_raw()
        .into_iter()
        .map(|v| decode_depth(v, m.depth_scale))
        .collect();

    let p = frame_file(dir, "label", i, "png");
    let img = image::open(&p).map_err(|e| image_err(&p, i, e))?.into_luma8();
    check_size(&p, i, img.dimensions(), w, h)?;
    let label = img.into_raw();

    let p = frame_file(dir, "feature", i, "bin");
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let feature = decode_feature(&bytes, w, h, d).map_err(|msg| Error::dataset(&p, format!("frame {i}: {msg}")))?;

    Frame::new(timestamp, w, h, d, color, depth, feature, Some(label))
}

fn decode_feature(bytes: &[u8], w: usize, h: usize, d: usize) -> std::result::Result<Vec<f32>, String> {
    if bytes.len() < 16 {
        return Err(format!(
            "feature file truncated: {} bytes, header needs 16",
            bytes.len()
        ));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err("feature file has a bad magic".into());
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    if (word(1), word(2), word(3)) != (h, w, d) {
        return Err(format!(
            "feature header {}x{}x{} does not match manifest {h}x{w}x{d}",
            word(1),
            word(2),
            word(3)
        ));
    }
    let expected = 16 + h * w * d * 4;
    if bytes.len() != expected {
        return Err(format!(
            "feature file truncated or oversized: {} bytes, expected {expected}",
            bytes.len()
        ));
    }
    Ok(bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
