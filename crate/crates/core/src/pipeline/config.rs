use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::loss::{ColorTerm, LossWeights};
use crate::mapper::{LearningRates, Schedule};
use crate::raster::RenderSettings;
use crate::tracker::{GicpParams, RefineParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Tracker and mapper interleaved on one thread; reproducible.
    Deterministic,
    /// Tracker and mapper on separate threads, exchanging map snapshots.
    Concurrent,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Mode::Deterministic),
            "concurrent" => Ok(Mode::Concurrent),
            _ => Err(Error::Config(format!(
                "mode must be deterministic or concurrent, got '{s}'"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Deterministic => "deterministic",
            Mode::Concurrent => "concurrent",
        })
    }
}

/// Every tunable of a SLAM run. See [`PipelineConfig::KEYS`] for the
/// config-file names.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub render: RenderSettings,
    pub gicp: GicpParams,
    pub stride: usize,
    pub keyframe_threshold: f64,
    pub tau_insert: f64,
    /// Skip source points already explained by the map.
    pub redundancy_check: bool,
    pub iterations_per_keyframe: usize,
    /// Extra optimization iterations after the last frame.
    pub final_iterations: usize,
    /// Wall-clock cap on each keyframe's optimization batch (0 = none).
    pub mapping_time_budget_ms: u64,
    pub schedule: Schedule,
    pub loss: LossWeights,
    pub learning_rates: LearningRates,
    pub refine_poses: bool,
    pub refine: RefineParams,
    pub seed: u64,
    pub mode: Mode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            render: RenderSettings::default(),
            gicp: GicpParams::default(),
            stride: 4,
            keyframe_threshold: 0.8,
            tau_insert: 0.03,
            redundancy_check: true,
            iterations_per_keyframe: 40,
            final_iterations: 0,
            mapping_time_budget_ms: 0,
            schedule: Schedule::default(),
            loss: LossWeights::default(),
            learning_rates: LearningRates::default(),
            refine_poses: false,
            refine: RefineParams::default(),
            seed: 0,
            mode: Mode::Deterministic,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("key '{key}': cannot parse '{v}': {e}")))
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "top_k",
        "transmittance_floor",
        "tile_size",
        "tau_corr",
        "tau_overlap",
        "gicp_max_iterations",
        "gicp_knn",
        "stride",
        "keyframe_threshold",
        "tau_insert",
        "redundancy_check",
        "iterations_per_keyframe",
        "final_iterations",
        "mapping_time_budget_ms",
        "feature_update_period",
        "prune_period",
        "prune_ratio",
        "topk_count_threshold",
        "pruning",
        "lambda_geo",
        "lambda_feat",
        "lambda_color_mix",
        "lambda_depth",
        "color_term",
        "lr_mean",
        "lr_log_scale",
        "lr_rotation",
        "lr_opacity",
        "lr_color",
        "lr_feature",
        "refine_poses",
        "refine_iterations",
        "seed",
        "mode",
    ];

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "top_k" => self.render.top_k = parse(key, v)?,
            "transmittance_floor" => self.render.transmittance_floor = parse(key, v)?,
            "tile_size" => self.render.tile_size = parse(key, v)?,
            "tau_corr" => self.gicp.tau_corr = parse(key, v)?,
            "tau_overlap" => self.gicp.tau_overlap = parse(key, v)?,
            "gicp_max_iterations" => self.gicp.max_iterations = parse(key, v)?,
            "gicp_knn" => self.gicp.knn = parse(key, v)?,
            "stride" => self.stride = parse(key, v)?,
            "keyframe_threshold" => self.keyframe_threshold = parse(key, v)?,
            "tau_insert" => self.tau_insert = parse(key, v)?,
            "redundancy_check" => self.redundancy_check = parse(key, v)?,
            "iterations_per_keyframe" => self.iterations_per_keyframe = parse(key, v)?,
            "final_iterations" => self.final_iterations = parse(key, v)?,
            "mapping_time_budget_ms" => self.mapping_time_budget_ms = parse(key, v)?,
            "feature_update_period" => self.schedule.feature_update_period = parse(key, v)?,
            "prune_period" => self.schedule.prune_period = parse(key, v)?,
            "prune_ratio" => self.schedule.prune_ratio = parse(key, v)?,
            "topk_count_threshold" => self.schedule.topk_count_threshold = parse(key, v)?,
            "pruning" => self.schedule.pruning_enabled = parse(key, v)?,
            "lambda_geo" => self.loss.lambda_geo = parse(key, v)?,
            "lambda_feat" => self.loss.lambda_feat = parse(key, v)?,
            "lambda_color_mix" => self.loss.lambda_color_mix = parse(key, v)?,
            "lambda_depth" => self.loss.lambda_depth = parse(key, v)?,
            "color_term" => {
                self.loss.color_term = match v {
                    "dssim" => ColorTerm::Dssim,
                    "l1" => ColorTerm::L1,
                    _ => return Err(Error::Config(format!("key '{key}': expected dssim or l1, got '{v}'"))),
                }
            }
            "lr_mean" => self.learning_rates.mean = parse(key, v)?,
            "lr_log_scale" => self.learning_rates.log_scale = parse(key, v)?,
            "lr_rotation" => self.learning_rates.rotation = parse(key, v)?,
            "lr_opacity" => self.learning_rates.opacity = parse(key, v)?,
            "lr_color" => self.learning_rates.color = parse(key, v)?,
            "lr_feature" => self.learning_rates.feature = parse(key, v)?,
            "refine_poses" => self.refine_poses = parse(key, v)?,
            "refine_iterations" => self.refine.iterations = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown key '{key}'; known keys: {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses `key=value` lines on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got '{line}'", ln + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.render.validate().map_err(cfg)?;
        self.schedule.validate().map_err(cfg)?;
        self.loss.validate().map_err(cfg)?;
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        if !(self.gicp.tau_corr > 0.0 && self.gicp.tau_overlap > 0.0 && self.tau_insert > 0.0) {
            return Err(Error::Config("distance thresholds must be positive".into()));
        }
        if self.tau_insert > self.gicp.tau_corr || self.gicp.tau_overlap > self.gicp.tau_corr {
            return Err(Error::Config(
                "tau_insert and tau_overlap must not exceed tau_corr".into(),
            ));
        }
        Ok(())
    }

    /// The effective configuration as `key=value` lines (round-trips through
    /// [`PipelineConfig::parse_str`]).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("top_k", self.render.top_k.to_string());
        kv("transmittance_floor", self.render.transmittance_floor.to_string());
        kv("tile_size", self.render.tile_size.to_string());
        kv("tau_corr", self.gicp.tau_corr.to_string());
        kv("tau_overlap", self.gicp.tau_overlap.to_string());
        kv("gicp_max_iterations", self.gicp.max_iterations.to_string());
        kv("gicp_knn", self.gicp.knn.to_string());
        kv("stride", self.stride.to_string());
        kv("keyframe_threshold", self.keyframe_threshold.to_string());
        kv("tau_insert", self.tau_insert.to_string());
        kv("redundancy_check", self.redundancy_check.to_string());
        kv("iterations_per_keyframe", self.iterations_per_keyframe.to_string());
        kv("final_iterations", self.final_iterations.to_string());
        kv("mapping_time_budget_ms", self.mapping_time_budget_ms.to_string());
        kv("feature_update_period", self.schedule.feature_update_period.to_string());
        kv("prune_period", self.schedule.prune_period.to_string());
        kv("prune_ratio", self.schedule.prune_ratio.to_string());
        kv("topk_count_threshold", self.schedule.topk_count_threshold.to_string());
        kv("pruning", self.schedule.pruning_enabled.to_string());
        kv("lambda_geo", self.loss.lambda_geo.to_string());
        kv("lambda_feat", self.loss.lambda_feat.to_string());
        kv("lambda_color_mix", self.loss.lambda_color_mix.to_string());
        kv("lambda_depth", self.loss.lambda_depth.to_string());
        kv(
            "color_term",
            match self.loss.color_term {
                ColorTerm::Dssim => "dssim",
                ColorTerm::L1 => "l1",
            }
            .to_string(),
        );
        kv("lr_mean", self.learning_rates.mean.to_string());
        kv("lr_log_scale", self.learning_rates.log_scale.to_string());
        kv("lr_rotation", self.learning_rates.rotation.to_string());
        kv("lr_opacity", self.learning_rates.opacity.to_string());
        kv("lr_color", self.learning_rates.color.to_string());
        kv("lr_feature", self.learning_rates.feature.to_string());
        kv("refine_poses", self.refine_poses.to_string());
        kv("refine_iterations", self.refine.iterations.to_string());
        kv("seed", self.seed.to_string());
        kv("mode", self.mode.to_string());
        s
    }
}
