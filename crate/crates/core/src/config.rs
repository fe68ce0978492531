//! Run configuration: one flat record holding every tunable default.
//!
//! Stored as flat TOML. Unknown keys are rejected so a typo can't silently
//! fall back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::{ValidityThresholds, DEFAULT_BIN_WIDTH};
use crate::error::{Error, Result};
use crate::forward::SensorModel;
use crate::fusion::{FusionParams, ToneMapParams, WhitePoint, DEFAULT_EPSILON, DEFAULT_EXPOSURE_FLOOR};
use crate::imaging::{PixelParam, PolarizerRig};
use crate::mosaic::Channel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Demux channel: r, g1, g2, b or luma.
    pub channel: String,
    /// Validity thresholds on the 8-bit scale; rescaled to the data's depth.
    pub p_min: f64,
    pub p_max: f64,
    pub hist_bin_deg: f64,
    pub epsilon: f64,
    pub exposure_floor: f64,
    pub tonemap_key: f64,
    /// Percentile in (0, 100]; 0 disables white-point burn.
    pub tonemap_white_percentile: f64,
    pub tonemap_bits: u8,

    pub sim_phi_deg: f64,
    pub sim_rho: f64,
    pub sim_dolp: f64,
    pub sim_aop_deg: f64,
    pub sim_bits: u8,
    pub sim_gain: f64,
    pub sim_time: f64,
    pub sim_read_noise: f64,
    pub sim_shot_noise: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            channel: "luma".into(),
            p_min: 5.0,
            p_max: 250.0,
            hist_bin_deg: DEFAULT_BIN_WIDTH.to_degrees(),
            epsilon: DEFAULT_EPSILON,
            exposure_floor: DEFAULT_EXPOSURE_FLOOR,
            tonemap_key: 0.18,
            tonemap_white_percentile: 99.9,
            tonemap_bits: 8,
            sim_phi_deg: 0.0,
            sim_rho: 0.0,
            sim_dolp: 0.0,
            sim_aop_deg: 0.0,
            sim_bits: 8,
            sim_gain: 1.0,
            sim_time: 1.0,
            sim_read_noise: 0.0,
            sim_shot_noise: false,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Panics if `seed` exceeds `i64::MAX` (TOML integers are signed);
    /// [`validate`](Self::validate) rejects such configs.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.channel()?;
        self.thresholds(8)?;
        self.fusion_params();
        if !(self.hist_bin_deg > 0.0 && self.hist_bin_deg <= 90.0) {
            return Err(Error::Config(format!(
                "hist_bin_deg {} outside (0, 90]",
                self.hist_bin_deg
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 || self.exposure_floor.is_nan() || self.exposure_floor < 0.0 {
            return Err(Error::Config("epsilon must be > 0 and exposure_floor >= 0".into()));
        }
        if !(0.0..=100.0).contains(&self.tonemap_white_percentile) {
            return Err(Error::Config("tonemap_white_percentile outside [0, 100]".into()));
        }
        if !(0.0..=1.0).contains(&self.sim_dolp) {
            return Err(Error::Config(format!("sim_dolp {} outside [0, 1]", self.sim_dolp)));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must fit in a signed 64-bit integer".into()));
        }
        self.rig()?;
        self.sensor()?;
        Ok(())
    }

    pub fn channel(&self) -> Result<Channel> {
        self.channel.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn thresholds(&self, bit_depth: u8) -> Result<ValidityThresholds> {
        ValidityThresholds::scaled(self.p_min, self.p_max, bit_depth).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn bin_width(&self) -> f64 {
        self.hist_bin_deg.to_radians()
    }

    pub fn fusion_params(&self) -> FusionParams {
        FusionParams {
            epsilon: self.epsilon,
            exposure_floor: self.exposure_floor,
        }
    }

    pub fn tonemap_params(&self) -> ToneMapParams {
        ToneMapParams {
            key: self.tonemap_key,
            white: if self.tonemap_white_percentile > 0.0 {
                WhitePoint::Percentile(self.tonemap_white_percentile)
            } else {
                WhitePoint::Infinite
            },
            bit_depth: self.tonemap_bits,
        }
    }

    pub fn rig(&self) -> Result<PolarizerRig> {
        PolarizerRig::new(self.sim_phi_deg.to_radians(), self.sim_rho).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn sensor(&self) -> Result<SensorModel> {
        SensorModel::new(self.sim_bits, self.sim_gain, self.sim_read_noise, self.sim_shot_noise)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scene_polarization(&self) -> (PixelParam, PixelParam) {
        (
            PixelParam::Uniform(self.sim_dolp),
            PixelParam::Uniform(self.sim_aop_deg.to_radians()),
        )
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml_string().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
