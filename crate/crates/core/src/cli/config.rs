use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::rng;
use crate::synth::{PoseDistributionSpec, ShiftSpec};
use crate::train::{AdaptConfig, SourceTrainConfig};

/// Where source poses come from. Exactly one variant by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceInput {
    /// A built-in distribution; only `"human13"` exists.
    Preset(String),
    Spec(PoseDistributionSpec),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetInput {
    /// Shift applied to fresh draws from the source distribution.
    Shift(ShiftSpec),
    /// Poses on disk; the first `shots` become guidance, the rest holdout.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSettings {
    pub source: SourceInput,
    pub source_count: usize,
    pub target: TargetInput,
    /// Pool the guidance shots are taken from.
    pub target_pool: usize,
    pub holdout: usize,
}

impl Default for DataSettings {
    fn default() -> Self {
        DataSettings {
            source: SourceInput::Preset("human13".into()),
            source_count: 10_000,
            target: TargetInput::Shift(ShiftSpec::GlobalRotation {
                theta_range: [30f64.to_radians(); 2],
            }),
            target_pool: 1000,
            holdout: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSettings {
    pub count: usize,
    /// Also write the clean re-rendered rasters as PNG.
    pub rasters: bool,
    pub width: usize,
    pub height: usize,
}

impl Default for SampleSettings {
    fn default() -> Self {
        SampleSettings {
            count: 5000,
            rasters: false,
            width: 64,
            height: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    /// Fixed MMD bandwidth; `None` uses the median heuristic.
    pub bandwidth: Option<f64>,
    pub pck_threshold: f64,
    /// Canvas side in pixels for MSE.
    pub canvas_px: usize,
    /// Pose files compared by `eval`; default samples vs holdout.
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            bandwidth: None,
            pck_threshold: 0.05,
            canvas_px: 64,
            a: None,
            b: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub poses: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    /// Render at most this many poses.
    pub limit: Option<usize>,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            poses: None,
            width: 64,
            height: 64,
            limit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub generator: GeneratorConfig,
    pub data: DataSettings,
    pub shots: usize,
    pub source_train: SourceTrainConfig,
    pub adapt: AdaptConfig,
    /// Candidate layers for `sweep-layers`; empty means every layer.
    pub sweep_layers: Vec<usize>,
    pub sample: SampleSettings,
    pub metrics: MetricSettings,
    pub render: RenderSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("run"),
            generator: GeneratorConfig::default(),
            data: DataSettings::default(),
            shots: 30,
            source_train: SourceTrainConfig::default(),
            adapt: AdaptConfig::default(),
            sweep_layers: Vec::new(),
            sample: SampleSettings::default(),
            metrics: MetricSettings::default(),
            render: RenderSettings::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(config_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies command-line overrides and derives every stage seed from
    /// the run seed, so the resolved config is the complete recipe.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out_dir = o;
        }
        self.source_train.seed = rng::derive(self.seed, "train-source");
        self.adapt.seed = rng::derive(self.seed, "adapt");
        if self.sweep_layers.is_empty() {
            self.sweep_layers = (1..=self.generator.layers).collect();
        }
        self
    }

    pub fn source_spec(&self) -> Result<Option<PoseDistributionSpec>> {
        match &self.data.source {
            SourceInput::Preset(name) if name == "human13" => Ok(Some(PoseDistributionSpec::human_default())),
            SourceInput::Preset(name) => Err(Error::Config(format!("unknown source preset {name:?}"))),
            SourceInput::Spec(s) => Ok(Some(s.clone())),
            SourceInput::File(_) => Ok(None),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate().map_err(config_err)?;
        self.source_train.validate()?;
        self.adapt.validate(self.generator.layers)?;
        let spec = self.source_spec()?;
        if let Some(s) = &spec {
            s.validate().map_err(config_err)?;
            if s.tree.topology.joint_count() != self.generator.joints {
                return Err(Error::Config(format!(
                    "source has {} joints, generator {}",
                    s.tree.topology.joint_count(),
                    self.generator.joints
                )));
            }
        }
        for f in [&self.data.source_file(), &self.data.target_file()].into_iter().flatten() {
            if !f.is_file() {
                return Err(Error::Config(format!("referenced file {} does not exist", f.display())));
            }
        }
        if let TargetInput::Shift(shift) = &self.data.target {
            let Some(s) = &spec else {
                return Err(Error::Config("a target shift needs a source distribution, not a file".into()));
            };
            shift.validate(&s.tree.topology).map_err(config_err)?;
        }
        if self.adapt.mixup && self.shots < 2 {
            return Err(Error::Config("mixup needs at least two shots".into()));
        }
        if self.shots == 0 {
            return Err(Error::Config("shots must be ≥ 1".into()));
        }
        if let Some(&l) = self.sweep_layers.iter().find(|&&l| l == 0 || l > self.generator.layers) {
            return Err(Error::Config(format!("sweep layer {l} outside 1..={}", self.generator.layers)));
        }
        if let Some(b) = self.metrics.bandwidth {
            if !(b > 0.0) {
                return Err(Error::Config("bandwidth must be positive".into()));
            }
        }
        if !(self.metrics.pck_threshold >= 0.0) || self.metrics.canvas_px < 2 {
            return Err(Error::Config("bad metric parameters".into()));
        }
        Ok(())
    }
}

impl DataSettings {
    fn source_file(&self) -> Option<PathBuf> {
        match &self.source {
            SourceInput::File(p) => Some(p.clone()),
            _ => None,
        }
    }

    fn target_file(&self) -> Option<PathBuf> {
        match &self.target {
            TargetInput::File(p) => Some(p.clone()),
            _ => None,
        }
    }
}
