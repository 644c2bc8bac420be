//! Aggregated pipeline configuration, loadable from a single JSON file.
//! Every field has a default so a partial (or empty) config object is valid.

use crate::baseline::BaselineConfig;
use crate::error::{Error, Result};
use crate::mlp::TrainSpec;
use crate::psd::PartnerConfig;
use crate::synth::SynthConfig;
use crate::tbar::DetectorConfig;
use serde::{Deserialize, Serialize};

/// T-bar stage training knobs: the voxel labeling radius and cube patch size
/// around each voxel, plus the MLP schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TbarTrainConfig {
    pub patch_radius: i32,
    pub spec: TrainSpec,
}

impl Default for TbarTrainConfig {
    fn default() -> Self {
        TbarTrainConfig {
            patch_radius: 2,
            spec: TrainSpec::default(),
        }
    }
}

/// T-bar evaluation matching parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub max_distance: f64,
    pub require_same_segment: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            max_distance: 27.0,
            require_same_segment: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub tbar_train: TbarTrainConfig,
    pub partner: PartnerConfig,
    pub psd_train: TrainSpec,
    pub matching: MatchConfig,
    pub baseline: BaselineConfig,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.partner.validate()?;
        self.baseline.validate()?;
        self.synth.validate()?;
        if self.tbar_train.patch_radius < 0 {
            return Err(Error::invalid("patch_radius must be >= 0"));
        }
        if !self.matching.max_distance.is_finite() || self.matching.max_distance < 0.0 {
            return Err(Error::invalid("matching max_distance must be finite and >= 0"));
        }
        Ok(())
    }
}

pub fn parse_config(name: &str, bytes: &[u8]) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = serde_json::from_slice(bytes).map_err(|e| Error::Format {
        path: name.into(),
        detail: e.to_string(),
    })?;
    cfg.validate().map_err(|e| Error::Format {
        path: name.into(),
        detail: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<PipelineConfig> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config(&path.display().to_string(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let cfg = parse_config("t", b"{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn partial_override() {
        let cfg =
            parse_config("t", br#"{"detector":{"score_threshold":0.73}}"#).unwrap();
        assert_eq!(cfg.detector.score_threshold, 0.73);
        assert_eq!(cfg.detector.nms_radius, DetectorConfig::default().nms_radius);
    }

    #[test]
    fn invalid_values_rejected_with_name() {
        let err = parse_config("cfg.json", br#"{"partner":{"dilation_radii":[]}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("cfg.json"));
        assert!(parse_config("t", b"[1,2]").is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = PipelineConfig::default();
        let bytes = serde_json::to_vec(&cfg).unwrap();
        assert_eq!(parse_config("t", &bytes).unwrap(), cfg);
    }
}
