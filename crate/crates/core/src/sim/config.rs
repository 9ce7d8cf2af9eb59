//! Run configuration, read from TOML with one section per subsystem. Every
//! field has a default, so an empty file is a valid configuration.

use crate::contact::{CollectSpec, ControllerConfig, UnknownController};
use crate::head::{motion_preset, MotionPreset, OUParams, UnknownPreset, TRACKING_GAIN};
use crate::observers::{FuzzyParams, SafetyParams};
use crate::phantom::{NasalCorridor, PhantomError, PhantomId, Side};
use crate::servo::ServoGains;
use crate::swab::{AxialContactModel, SwabBeam};
use crate::trajectory::{Ellipse, SlowdownParams, TrajParams, TrajectoryError};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Controller(#[from] UnknownController),
    #[error(transparent)]
    Motion(#[from] UnknownPreset),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub control_rate: f64,
    pub vision_rate: f64,
    pub seed: u64,
    /// Hard cap on simulated time per trial.
    pub duration_limit: f64,
    /// Longest time any stage may last.
    pub stage_timeout: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_rate: 100.0,
            vision_rate: 30.0,
            seed: 42,
            duration_limit: 240.0,
            stage_timeout: 60.0,
        }
    }
}

impl SimConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.vision_rate > 0.0
            && self.control_rate >= self.vision_rate
            && self.control_rate.is_finite())
        {
            return Err(ConfigError::Invalid(
                "need control_rate >= vision_rate > 0".into(),
            ));
        }
        if !(self.stage_timeout > 0.0 && self.duration_limit > 0.0) {
            return Err(ConfigError::Invalid("timeouts must be positive".into()));
        }
        Ok(())
    }

    /// Whether a camera frame arrives on control step `n`.
    pub fn vision_frame(&self, n: u64) -> bool {
        let ratio = self.vision_rate / self.control_rate;
        n == 0 || ((n as f64) * ratio).floor() > (((n - 1) as f64) * ratio).floor()
    }
}

/// Which trial to run when none is given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialDefaults {
    pub controller: String,
    pub motion: String,
    pub phantom: PhantomId,
    pub side: Side,
}

impl Default for TrialDefaults {
    fn default() -> Self {
        Self {
            controller: "D2.0".into(),
            motion: "None".into(),
            phantom: PhantomId::A,
            side: Side::Left,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionConfig {
    /// Per-axis marker noise (m).
    pub noise_sigma: f64,
    pub dropout_prob: f64,
    /// Spread of the per-trial registration offset between the fiducials
    /// and the real nostril: translation (m) and rotation (rad) per axis.
    pub bias_translation: f64,
    pub bias_rotation: f64,
}

impl Default for VisionConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.0005,
            dropout_prob: 0.05,
            bias_translation: 0.0015,
            bias_rotation: 0.017,
        }
    }
}

/// Where the sentry stage leaves the tip, relative to the first track pose
/// in the estimated nostril frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StandoffConfig {
    /// Back-off along the swab axis (m).
    pub distance: f64,
    /// Extra translation in the nostril frame (m).
    pub offset: [f64; 3],
    /// Extra rotation as a rotation vector in the tool frame (rad).
    pub rotation: [f64; 3],
    /// Distance short of the nostril at which the approach ends (m).
    pub clearance: f64,
}

impl Default for StandoffConfig {
    fn default() -> Self {
        Self {
            distance: 0.06,
            offset: [0.0, 0.01, 0.005],
            rotation: [0.05, -0.05, 0.1],
            clearance: 0.010,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryConfig {
    pub params: TrajParams,
    pub ellipse: Ellipse,
    pub slowdown: SlowdownParams,
}

/// Default share of the OU excursion realized by the head.
pub const EXCURSION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub tracking_gain: f64,
    /// Fraction of the OU excursion the head follows.
    pub excursion: f64,
    /// Replaces the named preset when present: pitch, yaw, roll.
    pub custom: Option<[OUParams<f64>; 3]>,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            tracking_gain: TRACKING_GAIN,
            excursion: EXCURSION,
            custom: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    pub controllers: Vec<String>,
    pub motions: Vec<String>,
    pub repeats_left: usize,
    pub repeats_right: usize,
    /// Unrepeated trials per (controller, phantom, side) without head motion.
    pub none_trials_per_cell: usize,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            controllers: crate::contact::PRESET_NAMES
                .iter()
                .map(|s| s.to_string())
                .collect(),
            motions: vec!["Light".into(), "Medium".into(), "Heavy".into()],
            repeats_left: 10,
            repeats_right: 5,
            none_trials_per_cell: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub sim: SimConfig,
    pub trial: TrialDefaults,
    /// Shared controller constants; kind and multiplier come from the preset.
    pub controller: ControllerConfig,
    pub swab: SwabBeam<f64>,
    pub axial: AxialContactModel<f64>,
    pub vision: VisionConfig,
    pub standoff: StandoffConfig,
    pub servo: ServoGains,
    pub trajectory: TrajectoryConfig,
    pub head: HeadConfig,
    pub fuzzy: FuzzyParams<f64>,
    pub safety: SafetyParams,
    pub collect: CollectSpec,
    pub matrix: MatrixConfig,
    /// Corridor files keyed "A-Left", "B-Right", and so on.
    pub corridors: std::collections::BTreeMap<String, PathBuf>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for file in cfg.corridors.values_mut() {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate()?;
        let checks = [
            (self.controller.validate(), "controller constants"),
            (self.swab.validate(), "swab geometry"),
            (self.servo.validate(), "servo gains"),
            (self.fuzzy.validate(), "fuzzy observer"),
            (self.safety.validate(), "safety thresholds"),
            (self.collect.duration > 0.0, "collect duration"),
            (self.vision.noise_sigma >= 0.0, "vision noise"),
            (
                (0.0..1.0).contains(&self.vision.dropout_prob),
                "dropout probability",
            ),
            (
                self.vision.bias_translation >= 0.0 && self.vision.bias_rotation >= 0.0,
                "registration bias",
            ),
            (self.head.tracking_gain > 0.0, "head tracking gain"),
            (
                self.head.excursion > 0.0 && self.head.excursion <= 1.0,
                "head excursion",
            ),
            (
                self.axial.buckle_force > 0.0 && (0.0..1.0).contains(&self.axial.friction_coef),
                "axial model",
            ),
            (
                self.controller.alpha * self.sim.dt() < 1.0,
                "force filter rate",
            ),
        ];
        if let Some((_, what)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(ConfigError::Invalid(format!("{what} out of range")));
        }
        if let Some(custom) = &self.head.custom {
            if !custom.iter().all(OUParams::validate) {
                return Err(ConfigError::Invalid("custom head motion parameters".into()));
            }
        }
        self.trajectory.params.validate(&self.trajectory.ellipse)?;
        Ok(())
    }

    /// Controller constants with the kind and multiplier of `preset`.
    pub fn controller_for(&self, preset: &str) -> Result<ControllerConfig, ConfigError> {
        let p = ControllerConfig::preset(preset)?;
        Ok(ControllerConfig {
            kind: p.kind,
            multiplier: p.multiplier,
            ..self.controller
        })
    }

    pub fn motion_for(
        &self,
        preset: &str,
    ) -> Result<(MotionPreset, [OUParams<f64>; 3]), ConfigError> {
        let m: MotionPreset = preset.parse()?;
        let params = match (&self.head.custom, m) {
            (_, MotionPreset::None) => motion_preset(m),
            (Some(custom), _) => *custom,
            (None, _) => motion_preset(m),
        };
        Ok((m, params))
    }

    pub fn corridor_for(
        &self,
        phantom: PhantomId,
        side: Side,
    ) -> Result<NasalCorridor, ConfigError> {
        match self.corridors.get(&format!("{phantom}-{side}")) {
            Some(path) => Ok(NasalCorridor::load(path)?),
            None => Ok(NasalCorridor::preset(phantom, side)),
        }
    }
}
