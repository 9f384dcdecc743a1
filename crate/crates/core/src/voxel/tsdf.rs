use std::collections::HashSet;

use nalgebra::Point3;

use super::{new_block, BlockCoord, FixedState, VoxelGrid, VoxelKey, BLOCK_SIDE, BLOCK_VOXELS};
use crate::scene::frame::FrameBundle;

impl VoxelGrid {
    /// Projective TSDF fusion of one frame.
    ///
    /// Blocks are allocated along each valid pixel's ray within the
    /// truncation band. Every voxel whose projective signed distance
    /// `depth(pixel) - z_voxel` lies in `[-trunc, trunc]` gets a unit-weight
    /// running-average update of its TSDF and color. Returns the updated
    /// voxels in key order.
    pub fn integrate_tsdf(&mut self, frame: &FrameBundle) -> Vec<VoxelKey> {
        self.begin_frame();
        let k = frame.intrinsics;
        let pose = frame.pose;
        let trunc = self.truncation;
        let res = self.resolution;
        let block_len = res * BLOCK_SIDE as f64;

        let mut candidates: HashSet<BlockCoord, FixedState> = HashSet::default();
        let steps = ((2.0 * trunc / res).ceil() as usize).max(1);
        for (x, y, &d) in frame.depth.enumerate() {
            if !(d > 0.0) {
                continue;
            }
            let ray = k.ray(x as f64, y as f64);
            let mut last: Option<BlockCoord> = None;
            for s in 0..=steps {
                let z = d - trunc + 2.0 * trunc * s as f64 / steps as f64;
                if z <= 0.0 {
                    continue;
                }
                let p = pose.camera_to_world(&Point3::from(ray * z));
                let b = [
                    (p.x / block_len).floor() as i32,
                    (p.y / block_len).floor() as i32,
                    (p.z / block_len).floor() as i32,
                ];
                if last != Some(b) {
                    candidates.insert(b);
                    last = Some(b);
                }
            }
        }
        if candidates.is_empty() {
            return Vec::new();
        }
        let mut candidates: Vec<BlockCoord> = candidates.into_iter().collect();
        candidates.sort_unstable();
        self.set_frame_blocks(candidates.iter().copied());

        let rot_t = pose.rotation.transpose();
        let (w, h) = (frame.depth.width(), frame.depth.height());
        let mut touched = Vec::new();
        for coord in candidates {
            let block = self.blocks_mut().entry(coord).or_insert_with(new_block);
            for local in 0..BLOCK_VOXELS {
                let key = VoxelKey {
                    block: coord,
                    local: local as u16,
                };
                let idx = key.index();
                let center = Point3::new(
                    (idx[0] as f64 + 0.5) * res,
                    (idx[1] as f64 + 0.5) * res,
                    (idx[2] as f64 + 0.5) * res,
                );
                let pc = Point3::from(rot_t * (center.coords - pose.translation));
                if pc.z <= 0.0 {
                    continue;
                }
                let u = (k.fx * pc.x / pc.z + k.cx).round();
                let v = (k.fy * pc.y / pc.z + k.cy).round();
                if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
                    continue;
                }
                let (u, v) = (u as usize, v as usize);
                let d = *frame.depth.get(u, v);
                if !(d > 0.0) {
                    continue;
                }
                let sdf = d - pc.z;
                if sdf.abs() > trunc {
                    continue;
                }
                let obs = (sdf / trunc).clamp(-1.0, 1.0);
                let c = frame.color.get(u, v);
                let voxel = &mut block[local];
                let wt = voxel.tsdf_weight;
                let nw = wt + 1.0;
                voxel.tsdf = ((voxel.tsdf * wt + obs) / nw).clamp(-1.0, 1.0);
                for ch in 0..3 {
                    voxel.color[ch] = (voxel.color[ch] * wt + c[ch]) / nw;
                }
                voxel.tsdf_weight = nw;
                touched.push(key);
            }
        }
        self.set_frame_touched(touched.iter().copied());
        touched
    }
}
