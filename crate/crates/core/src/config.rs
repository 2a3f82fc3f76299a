//! Flat `key = value` run configuration (TOML subset, `#` comments).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::TrajectoryFormat;
use crate::metrics::{CostKind, CostParams};
use crate::odometry::{MotionModel, PipelineConfig};
use crate::optimizer::NewtonConfig;

/// Every pipeline parameter plus data and output locations. Keys missing
/// from a file take their default values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub voxel_size: f64,
    /// Defaults to `voxel_size`.
    pub map_voxel_size: Option<f64>,
    pub min_points: usize,
    pub cost: CostKind,
    pub lambda: f64,
    pub sigma_icp: f64,
    pub sigma_cov: f64,
    /// Defaults to twice the voxel size.
    pub max_correspondence_distance: Option<f64>,
    pub max_iterations: usize,
    pub step_norm_tolerance: f64,
    pub hessian_regularization: f64,
    pub max_step_norm: f64,
    pub motion_model: MotionModel,
    pub max_rounds: usize,
    pub max_map_voxels: Option<usize>,

    pub sequence_dir: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub trajectory_format: TrajectoryFormat,
    pub max_frames: Option<usize>,
    pub dump_map: bool,
    pub evaluate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_pipeline(&PipelineConfig::default())
    }
}

impl RunConfig {
    pub fn from_pipeline(p: &PipelineConfig) -> Self {
        Self {
            voxel_size: p.voxel_size,
            map_voxel_size: p.map_voxel_size,
            min_points: p.min_points,
            cost: p.cost.kind,
            lambda: p.cost.lambda,
            sigma_icp: p.cost.sigma_icp,
            sigma_cov: p.cost.sigma_cov,
            max_correspondence_distance: None,
            max_iterations: p.newton.max_iterations,
            step_norm_tolerance: p.newton.step_norm_tolerance,
            hessian_regularization: p.newton.hessian_regularization,
            max_step_norm: p.newton.max_step_norm,
            motion_model: p.motion_model,
            max_rounds: p.max_rounds,
            max_map_voxels: p.max_map_voxels,
            sequence_dir: None,
            ground_truth: None,
            output_dir: None,
            trajectory_format: TrajectoryFormat::Kitti3x4,
            max_frames: None,
            dump_map: false,
            evaluate: true,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            voxel_size: self.voxel_size,
            map_voxel_size: self.map_voxel_size,
            min_points: self.min_points,
            cost: CostParams {
                kind: self.cost,
                lambda: self.lambda,
                sigma_icp: self.sigma_icp,
                sigma_cov: self.sigma_cov,
            },
            newton: NewtonConfig {
                max_iterations: self.max_iterations,
                step_norm_tolerance: self.step_norm_tolerance,
                hessian_regularization: self.hessian_regularization,
                max_step_norm: self.max_step_norm,
            },
            max_correspondence_distance: self
                .max_correspondence_distance
                .unwrap_or(2.0 * self.voxel_size),
            motion_model: self.motion_model,
            max_rounds: self.max_rounds,
            max_map_voxels: self.max_map_voxels,
        }
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
        Self::parse(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: line_of(&message),
            message,
        })
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Checks parameters and that configured input paths exist.
    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        for (name, path) in [("sequence_dir", &self.sequence_dir), ("ground_truth", &self.ground_truth)] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(Error::invalid(format!("{name} {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }
}

/// Line number reported in a TOML error message ("line N").
fn line_of(message: &str) -> usize {
    message
        .split("line ")
        .nth(1)
        .and_then(|rest| rest.split(|c: char| !c.is_ascii_digit()).next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let cfg = RunConfig {
            voxel_size: 1.5,
            cost: CostKind::Gicp,
            max_map_voxels: Some(5000),
            sequence_dir: Some("/data/04".into()),
            ..RunConfig::default()
        };
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_partial_keys() {
        let cfg = RunConfig::parse("# sweep\nvoxel_size = 6.0 # meters\ncost = \"icp\"\n").unwrap();
        assert_eq!(cfg.voxel_size, 6.0);
        assert_eq!(cfg.cost, CostKind::StandardIcp);
        assert_eq!(cfg.pipeline().max_correspondence_distance, 12.0);
        assert_eq!(cfg.min_points, 6);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(RunConfig::parse("voxel = 3.0").is_err());
    }
}
