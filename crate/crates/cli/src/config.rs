use std::collections::BTreeMap;
use std::path::Path;

use pano4d::erp::ViewRig;
use pano4d::gaussian::ReconstructConfig;
use pano4d::spatial::SpatialAlignConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every tunable of a pipeline run. Missing keys take their defaults, and
/// the fully resolved document is written next to each command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds every stochastic stage; overrides the nested seeds.
    pub seed: u64,
    /// Tangent views written by `project`.
    pub rig: ViewRig,
    pub spatial: SpatialAlignConfig,
    /// Height of the fused panorama depth written by `align-spatial`.
    pub fused_height: usize,
    pub reconstruct: ReconstructConfig,
    pub render: RenderOptions,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    /// Also write each step's depth as a raw float grid.
    pub write_depth: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            rig: ViewRig::four_view(256).expect("valid rig"),
            spatial: SpatialAlignConfig::default(),
            fused_height: 256,
            reconstruct: ReconstructConfig::default(),
            render: RenderOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => pano4d::io::read_json(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.spatial.seed = cfg.seed;
        cfg.reconstruct.loss.seed = cfg.seed;
        cfg.spatial.validate()?;
        cfg.reconstruct.loss.validate()?;
        if cfg.fused_height < 2 || cfg.reconstruct.lift_stride == 0 {
            return Err(CliError::Input("fused_height must be at least 2 and lift_stride at least 1".into()));
        }
        Ok(cfg)
    }
}

/// The record written as `config.json` into every output directory.
#[derive(Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    pub inputs: BTreeMap<&'a str, String>,
    pub config: &'a PipelineConfig,
}
