use crate::error::{Error, Result};
use crate::se3::Pose;

/// Poses keyed by strictly increasing frame index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(usize, Pose)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a trajectory with frame indices `0..poses.len()`.
    pub fn from_poses(poses: impl IntoIterator<Item = Pose>) -> Self {
        Self {
            entries: poses.into_iter().enumerate().collect(),
        }
    }

    pub fn push(&mut self, frame: usize, pose: Pose) -> Result<()> {
        if let Some(&(last, _)) = self.entries.last() {
            if frame <= last {
                return Err(Error::invalid(format!(
                    "frame index {frame} does not follow {last}"
                )));
            }
        }
        self.entries.push((frame, pose));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(usize, Pose)] {
        &self.entries
    }

    pub fn poses(&self) -> impl ExactSizeIterator<Item = &Pose> + '_ {
        self.entries.iter().map(|(_, p)| p)
    }

    pub fn pose_vec(&self) -> Vec<Pose> {
        self.poses().copied().collect()
    }

    /// Applies `g` on the left of every pose.
    pub fn transformed(&self, g: &Pose) -> Trajectory {
        Trajectory {
            entries: self.entries.iter().map(|(i, p)| (*i, g.compose(p))).collect(),
        }
    }
}
