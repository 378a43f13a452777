//! Render trajectories: keyframed camera paths and the Gaussian frame each
//! step samples.

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::PoseRecord;
use crate::pose::SceneCamera;

/// A camera path through `keyframes`.
///
/// Consecutive keyframes are joined by `steps_per_segment` steps: positions
/// and field of view are interpolated linearly and rotations by quaternion
/// slerp. The last keyframe is always the final step, so a path with `k`
/// keyframes has `(k - 1) * steps_per_segment + 1` steps.
///
/// `frame_map[i]` names the Gaussian frame rendered at step `i`. Without it,
/// steps are spread evenly over the available frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub keyframes: Vec<PoseRecord>,
    #[serde(default = "default_steps")]
    pub steps_per_segment: usize,
    #[serde(default)]
    pub frame_map: Option<Vec<usize>>,
}

fn default_steps() -> usize {
    1
}

impl TrajectorySpec {
    /// One step per keyframe.
    pub fn from_cameras(cameras: &[SceneCamera]) -> Self {
        TrajectorySpec {
            keyframes: cameras.iter().map(PoseRecord::from).collect(),
            steps_per_segment: 1,
            frame_map: None,
        }
    }

    pub fn len(&self) -> usize {
        match self.keyframes.len() {
            0 => 0,
            k => (k - 1) * self.steps_per_segment + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.keyframes.is_empty() {
            return Err(Error::arg("trajectory has no keyframes"));
        }
        if self.steps_per_segment == 0 && self.keyframes.len() > 1 {
            return Err(Error::arg("steps_per_segment must be at least 1"));
        }
        let (h, w) = (self.keyframes[0].h, self.keyframes[0].w);
        if self.keyframes.iter().any(|k| k.h != h || k.w != w) {
            return Err(Error::arg("all keyframes must share one resolution"));
        }
        if let Some(map) = &self.frame_map {
            if map.len() != self.len() {
                return Err(Error::arg(format!(
                    "frame_map has {} entries for {} steps",
                    map.len(),
                    self.len()
                )));
            }
        }
        Ok(())
    }

    /// Every step's camera, in order.
    pub fn cameras(&self) -> Result<Vec<SceneCamera>> {
        self.validate()?;
        let keys: Vec<SceneCamera> = self
            .keyframes
            .iter()
            .enumerate()
            .map(|(i, k)| k.to_camera().map_err(|e| Error::arg(format!("keyframe {i}: {e}"))))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(self.len());
        for pair in keys.windows(2) {
            for s in 0..self.steps_per_segment {
                out.push(interpolate(&pair[0], &pair[1], s as f64 / self.steps_per_segment as f64)?);
            }
        }
        out.push(*keys.last().unwrap());
        Ok(out)
    }

    /// Gaussian frame sampled by step `step` when `frames` are available.
    pub fn frame_for_step(&self, step: usize, frames: usize) -> Result<usize> {
        let n = self.len();
        if step >= n || frames == 0 {
            return Err(Error::arg(format!("step {step} outside a {n}-step trajectory over {frames} frames")));
        }
        let t = match &self.frame_map {
            Some(map) => map[step],
            None => step * frames / n,
        };
        if t >= frames {
            return Err(Error::arg(format!("step {step} maps to frame {t} but only {frames} exist")));
        }
        Ok(t)
    }
}

/// Camera at fraction `s` of the way from `a` to `b`.
pub fn interpolate(a: &SceneCamera, b: &SceneCamera, s: f64) -> Result<SceneCamera> {
    let qa = a.quaternion();
    let mut qb = b.quaternion();
    // Shortest arc.
    if qa.coords.dot(&qb.coords) < 0.0 {
        qb = UnitQuaternion::new_unchecked(-qb.into_inner());
    }
    let q = qa.try_slerp(&qb, s, 1e-12).unwrap_or(qa);
    SceneCamera::new(
        q.to_rotation_matrix().into_inner(),
        a.center().lerp(b.center(), s),
        a.fov() + (b.fov() - a.fov()) * s,
        a.height(),
        a.width(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};

    fn cam(yaw: f64, x: f64) -> SceneCamera {
        let r = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw).into_inner();
        SceneCamera::new(r, Vector3::new(x, 0.0, 0.0), 1.0, 8, 8).unwrap()
    }

    #[test]
    fn step_count_and_endpoints() {
        let spec = TrajectorySpec {
            steps_per_segment: 4,
            ..TrajectorySpec::from_cameras(&[cam(0.0, 0.0), cam(1.0, 2.0), cam(-0.5, 1.0)])
        };
        let cams = spec.cameras().unwrap();
        assert_eq!(cams.len(), 9);
        assert_eq!(spec.len(), 9);
        for (i, k) in [(0, 0), (4, 1), (8, 2)] {
            let want = spec.keyframes[k].to_camera().unwrap();
            assert!((cams[i].rotation() - want.rotation()).abs().max() < 1e-12);
            assert!((cams[i].center() - want.center()).norm() < 1e-12);
        }
    }

    #[test]
    fn slerp_is_uniform_in_angle() {
        let spec = TrajectorySpec {
            steps_per_segment: 4,
            ..TrajectorySpec::from_cameras(&[cam(0.0, 0.0), cam(1.2, 4.0)])
        };
        let cams = spec.cameras().unwrap();
        for (i, c) in cams.iter().enumerate() {
            let angle = c.quaternion().angle();
            assert!((angle - 0.3 * i as f64).abs() < 1e-12);
            assert!((c.center().x - i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_inconsistent_trajectories_are_rejected() {
        let empty = TrajectorySpec::from_cameras(&[]);
        assert!(empty.is_empty());
        assert!(empty.cameras().is_err());
        let mut mapped = TrajectorySpec::from_cameras(&[cam(0.0, 0.0)]);
        mapped.frame_map = Some(vec![0, 1]);
        assert!(mapped.cameras().is_err());
    }

    #[test]
    fn frame_mapping() {
        let mut spec = TrajectorySpec {
            steps_per_segment: 3,
            ..TrajectorySpec::from_cameras(&[cam(0.0, 0.0), cam(0.3, 1.0)])
        };
        let spread: Vec<usize> = (0..4).map(|i| spec.frame_for_step(i, 2).unwrap()).collect();
        assert_eq!(spread, [0, 0, 1, 1]);
        spec.frame_map = Some(vec![1, 0, 1, 0]);
        let mapped: Vec<usize> = (0..4).map(|i| spec.frame_for_step(i, 2).unwrap()).collect();
        assert_eq!(mapped, [1, 0, 1, 0]);
        assert!(spec.frame_for_step(0, 1).is_err());
        assert!(spec.frame_for_step(4, 2).is_err());
    }

    #[test]
    fn json_defaults() {
        let spec: TrajectorySpec = serde_json::from_str(
            r#"{"keyframes":[{"R":[1,0,0,0,1,0,0,0,1],"t":[0,0,0],"fov_deg":90,"h":4,"w":4}]}"#,
        )
        .unwrap();
        assert_eq!(spec.steps_per_segment, 1);
        assert_eq!(spec.len(), 1);
    }
}
