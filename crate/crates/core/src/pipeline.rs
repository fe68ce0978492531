//! End-to-end reconstruction (demux → calibrate → fuse → tone map) and the
//! report records the CLI writes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::calibrate::{estimate_exposures, ExposureEstimate};
use crate::config::{sha256_hex, PipelineConfig};
use crate::error::Error;
use crate::fusion::{fuse_hdr, tonemap_reinhard, HdrImage};
use crate::imaging::LdrImage;
use crate::mosaic::{demux, MosaicFrame};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Pipeline stage, used to tag errors and pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Io,
    Simulate,
    Demux,
    Calibrate,
    Fuse,
    Tonemap,
    Eval,
    Sweep,
}

impl Stage {
    pub fn tag(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Io => "io",
            Stage::Simulate => "simulate",
            Stage::Demux => "demux",
            Stage::Calibrate => "calibrate",
            Stage::Fuse => "fuse",
            Stage::Tonemap => "tonemap",
            Stage::Eval => "eval",
            Stage::Sweep => "sweep",
        }
    }

    /// Process exit status for a failure in this stage. 0 is success and 1
    /// is left for argument errors.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Io => 3,
            Stage::Simulate => 10,
            Stage::Demux => 11,
            Stage::Calibrate => 12,
            Stage::Fuse => 13,
            Stage::Tonemap => 14,
            Stage::Eval => 15,
            Stage::Sweep => 16,
        }
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage.tag(), self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T, Error> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

/// Tool version plus hashes of the exact config and every input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub input_hashes: BTreeMap<String, String>,
}

pub fn provenance<'a>(config: &PipelineConfig, inputs: impl IntoIterator<Item = (&'a str, &'a [u8])>) -> Provenance {
    Provenance {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config.hash(),
        input_hashes: inputs
            .into_iter()
            .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
            .collect(),
    }
}

/// Calibration output as written to `calib.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub theta_hat_deg: [f64; 4],
    pub estimate: ExposureEstimate,
    pub config: PipelineConfig,
    pub provenance: Provenance,
}

impl CalibrationReport {
    pub fn new(estimate: ExposureEstimate, config: PipelineConfig, provenance: Provenance) -> Self {
        Self {
            theta_hat_deg: estimate.theta_hat.map(f64::to_degrees),
            estimate,
            config,
            provenance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub estimate: ExposureEstimate,
    pub hdr: HdrImage,
    pub preview: Option<LdrImage>,
}

/// Runs demux → exposure estimation → fusion, and tone maps a preview when
/// `tonemap` is set.
pub fn run_pipeline(frame: &MosaicFrame, config: &PipelineConfig, tonemap: bool) -> Result<PipelineOutput, StageError> {
    config.validate().at(Stage::Config)?;
    let channel = config.channel().at(Stage::Config)?;
    let stack = demux(frame, channel).at(Stage::Demux)?;
    let thresholds = config.thresholds(stack.bit_depth()).at(Stage::Config)?;
    let estimate = estimate_exposures(&stack, &thresholds, config.bin_width()).at(Stage::Calibrate)?;
    let hdr = fuse_hdr(&stack, &estimate, &thresholds, &config.fusion_params()).at(Stage::Fuse)?;
    let preview = if tonemap {
        Some(tonemap_reinhard(&hdr.image, &config.tonemap_params()).at(Stage::Tonemap)?)
    } else {
        None
    };
    Ok(PipelineOutput { estimate, hdr, preview })
}
