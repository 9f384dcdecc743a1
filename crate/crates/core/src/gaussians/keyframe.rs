use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::FrameBundle;
use crate::splat::CameraModel;
use crate::voxel::{VoxelGrid, VoxelKey, BLOCK_SIDE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframePolicy {
    /// A frame whose unregistered-voxel ratio exceeds this is a keyframe.
    pub tau_threshold: f64,
    /// Forced keyframe after this many consecutive non-keyframes.
    pub n_key: usize,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            tau_threshold: 0.15,
            n_key: 10,
        }
    }
}

impl KeyframePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_threshold) {
            return Err(Error::Config(format!(
                "keyframe.tau_threshold must be in [0, 1], got {}",
                self.tau_threshold
            )));
        }
        if self.n_key == 0 {
            return Err(Error::Config("keyframe.n_key must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Keyframe {
    pub frame: FrameBundle,
    pub camera: CameraModel,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyframeBuffer {
    pub keyframes: Vec<Keyframe>,
    /// Consecutive non-keyframes since the last keyframe.
    pub frames_since_last: usize,
}

impl KeyframeBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }
}

/// Observed voxels whose centers project inside the image with a camera
/// depth within truncation of the measured depth there.
pub fn visible_voxels(frame: &FrameBundle, grid: &VoxelGrid) -> Vec<VoxelKey> {
    let k = &frame.intrinsics;
    let trunc = grid.truncation();
    let block_len = grid.resolution() * BLOCK_SIDE as f64;
    let half_diag = 0.5 * block_len * 3f64.sqrt();
    let max_depth = frame.depth.as_slice().iter().fold(0.0f64, |m, &d| m.max(d)) + trunc;
    let mut out = Vec::new();
    for coord in grid.block_coords() {
        let center = Point3::new(
            (coord[0] as f64 + 0.5) * block_len,
            (coord[1] as f64 + 0.5) * block_len,
            (coord[2] as f64 + 0.5) * block_len,
        );
        let cz = frame.pose.world_to_camera(&center).z;
        if cz + half_diag <= 0.0 || cz - half_diag > max_depth {
            continue;
        }
        for local in 0..crate::voxel::BLOCK_VOXELS as u16 {
            let key = VoxelKey { block: coord, local };
            let Some(v) = grid.get(&key) else { continue };
            if v.tsdf_weight <= 0.0 {
                continue;
            }
            let pc = frame.pose.world_to_camera(&grid.voxel_center(&key));
            if pc.z <= 0.0 {
                continue;
            }
            let Some((u, vv)) = k.project_to_pixel(&pc) else { continue };
            let d = *frame.depth.get(u, vv);
            if d > 0.0 && (pc.z - d).abs() <= trunc {
                out.push(key);
            }
        }
    }
    out
}

/// Fraction of visible observed voxels that no keyframe has registered;
/// 1 when nothing is visible.
pub fn keyframe_ratio(frame: &FrameBundle, grid: &VoxelGrid) -> f64 {
    unregistered_fraction(&visible_voxels(frame, grid), grid)
}

fn unregistered_fraction(visible: &[VoxelKey], grid: &VoxelGrid) -> f64 {
    if visible.is_empty() {
        return 1.0;
    }
    let fresh = visible.iter().filter(|k| grid.get(k).is_some_and(|v| !v.registered)).count();
    fresh as f64 / visible.len() as f64
}

/// Keyframe decision. On a keyframe the visible voxels become registered
/// and the frame joins the buffer with a fresh camera model.
pub fn select_keyframe(frame: &FrameBundle, grid: &mut VoxelGrid, policy: &KeyframePolicy, buffer: &mut KeyframeBuffer) -> bool {
    let visible = visible_voxels(frame, grid);
    let tau = unregistered_fraction(&visible, grid);
    let is_key = tau > policy.tau_threshold || buffer.frames_since_last >= policy.n_key || buffer.is_empty();
    if is_key {
        for k in &visible {
            if let Some(v) = grid.get_mut(k) {
                v.registered = true;
            }
        }
        buffer.keyframes.push(Keyframe {
            frame: frame.clone(),
            camera: CameraModel::default(),
        });
        buffer.frames_since_last = 0;
    } else {
        buffer.frames_since_last += 1;
    }
    is_key
}
