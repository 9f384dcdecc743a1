//! Block-hashed sparse voxel grid.
//!
//! Space is quantized at `resolution` meters; voxels are grouped into 8³
//! blocks that are allocated on demand near observed surfaces. Each voxel
//! carries a TSDF sample, a running color, Dirichlet instance counts, and a
//! flag recording whether a keyframe has registered it.

mod marching_cubes;
pub mod snapshot;
mod tsdf;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::BuildHasherDefault;

use nalgebra::Point3;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::ids::InstanceId;
use crate::raster::{DepthImage, Mask};

pub use marching_cubes::extract_mesh;

pub const BLOCK_SIDE: i64 = 8;
pub const BLOCK_VOXELS: usize = 512;

pub type FixedState = BuildHasherDefault<DefaultHasher>;
pub type BlockCoord = [i32; 3];

/// Address of one voxel: its block and the linear offset inside the block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VoxelKey {
    pub block: BlockCoord,
    pub local: u16,
}

impl VoxelKey {
    pub fn from_index(idx: [i64; 3]) -> Self {
        let b = idx.map(|v| v.div_euclid(BLOCK_SIDE));
        let o = idx.map(|v| v.rem_euclid(BLOCK_SIDE));
        Self {
            block: b.map(|v| v as i32),
            local: (o[0] + BLOCK_SIDE * (o[1] + BLOCK_SIDE * o[2])) as u16,
        }
    }

    /// Offsets inside the block, each in `[0, 8)`.
    pub fn offset(&self) -> [i64; 3] {
        let l = self.local as i64;
        [l % BLOCK_SIDE, (l / BLOCK_SIDE) % BLOCK_SIDE, l / (BLOCK_SIDE * BLOCK_SIDE)]
    }

    /// Global integer voxel index.
    pub fn index(&self) -> [i64; 3] {
        let o = self.offset();
        [
            self.block[0] as i64 * BLOCK_SIDE + o[0],
            self.block[1] as i64 * BLOCK_SIDE + o[1],
            self.block[2] as i64 * BLOCK_SIDE + o[2],
        ]
    }
}

pub type InstanceCounts = SmallVec<[(InstanceId, u32); 2]>;

#[derive(Clone, Debug, PartialEq)]
pub struct Voxel {
    /// Truncated signed distance in units of the truncation band, in [-1, 1].
    pub tsdf: f64,
    pub tsdf_weight: f64,
    pub color: [f64; 3],
    /// Sparse Dirichlet concentration counts, sorted by instance id.
    pub counts: InstanceCounts,
    pub registered: bool,
    /// Frame stamp at which the total count first became positive.
    pub first_labeled: Option<u64>,
}

impl Default for Voxel {
    fn default() -> Self {
        Self {
            tsdf: 1.0,
            tsdf_weight: 0.0,
            color: [0.0; 3],
            counts: SmallVec::new(),
            registered: false,
            first_labeled: None,
        }
    }
}

impl Voxel {
    pub fn total_count(&self) -> u64 {
        self.counts.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn count(&self, id: InstanceId) -> u32 {
        self.counts
            .iter()
            .find(|(g, _)| *g == id)
            .map_or(0, |&(_, c)| c)
    }

    /// Most-counted instance; ties go to the smallest id.
    pub fn argmax_label(&self) -> Option<InstanceId> {
        let mut best: Option<(InstanceId, u32)> = None;
        for &(id, c) in &self.counts {
            if c == 0 {
                continue;
            }
            match best {
                Some((_, bc)) if bc >= c => {}
                _ => best = Some((id, c)),
            }
        }
        best.map(|(id, _)| id)
    }

    fn increment(&mut self, id: InstanceId) {
        match self.counts.binary_search_by_key(&id, |&(g, _)| g) {
            Ok(i) => self.counts[i].1 += 1,
            Err(i) => self.counts.insert(i, (id, 1)),
        }
    }
}

/// Posterior-mean instance distribution of one voxel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InstanceTuple {
    pub probabilities: BTreeMap<InstanceId, f64>,
}

impl InstanceTuple {
    pub fn get(&self, id: InstanceId) -> f64 {
        self.probabilities.get(&id).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }
}

/// Expected value of the Dirichlet posterior: `α_γ / Σ α`.
pub fn instance_tuple(voxel: &Voxel) -> InstanceTuple {
    let total = voxel.total_count();
    if total == 0 {
        return InstanceTuple::default();
    }
    InstanceTuple {
        probabilities: voxel
            .counts
            .iter()
            .filter(|(_, c)| *c > 0)
            .map(|&(id, c)| (id, c as f64 / total as f64))
            .collect(),
    }
}

type Block = Box<[Voxel]>;

fn new_block() -> Block {
    vec![Voxel::default(); BLOCK_VOXELS].into_boxed_slice()
}

#[derive(Clone, Debug)]
pub struct VoxelGrid {
    resolution: f64,
    truncation: f64,
    blocks: HashMap<BlockCoord, Block, FixedState>,
    frame_counter: u64,
    frame_touched: HashSet<VoxelKey, FixedState>,
    frame_blocks: HashSet<BlockCoord, FixedState>,
    /// Number of voxels whose argmax label is each instance.
    instance_sizes: HashMap<InstanceId, usize, FixedState>,
}

impl VoxelGrid {
    pub fn new(resolution: f64, truncation: f64) -> Result<Self> {
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::Config(format!("voxel resolution must be positive, got {resolution}")));
        }
        if !(truncation >= 2.0 * resolution) || !truncation.is_finite() {
            return Err(Error::Config(format!(
                "truncation {truncation} must be at least twice the resolution {resolution}"
            )));
        }
        Ok(Self {
            resolution,
            truncation,
            blocks: HashMap::default(),
            frame_counter: 0,
            frame_touched: HashSet::default(),
            frame_blocks: HashSet::default(),
            instance_sizes: HashMap::default(),
        })
    }

    /// Truncation defaults to four voxels.
    pub fn with_resolution(resolution: f64) -> Result<Self> {
        Self::new(resolution, 4.0 * resolution)
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn frame_counter(&self) -> u64 {
        self.frame_counter
    }

    /// Floor quantization of a world point.
    pub fn world_to_voxel(&self, p: &Point3<f64>) -> Result<VoxelKey> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite point {p:?}")));
        }
        Ok(self.quantize(p))
    }

    #[inline]
    pub(crate) fn quantize(&self, p: &Point3<f64>) -> VoxelKey {
        VoxelKey::from_index([
            (p.x / self.resolution).floor() as i64,
            (p.y / self.resolution).floor() as i64,
            (p.z / self.resolution).floor() as i64,
        ])
    }

    pub fn voxel_center(&self, key: &VoxelKey) -> Point3<f64> {
        let i = key.index();
        Point3::new(
            (i[0] as f64 + 0.5) * self.resolution,
            (i[1] as f64 + 0.5) * self.resolution,
            (i[2] as f64 + 0.5) * self.resolution,
        )
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&Voxel> {
        self.blocks
            .get(&key.block)
            .map(|b| &b[key.local as usize])
    }

    pub fn is_allocated(&self, key: &VoxelKey) -> bool {
        self.blocks.contains_key(&key.block)
    }

    /// Mutable access, allocating the block when needed.
    pub fn get_or_allocate(&mut self, key: &VoxelKey) -> &mut Voxel {
        &mut self.blocks.entry(key.block).or_insert_with(new_block)[key.local as usize]
    }

    pub(crate) fn get_mut(&mut self, key: &VoxelKey) -> Option<&mut Voxel> {
        self.blocks
            .get_mut(&key.block)
            .map(|b| &mut b[key.local as usize])
    }

    /// Allocated block coordinates in sorted order.
    pub fn block_coords(&self) -> Vec<BlockCoord> {
        let mut v: Vec<_> = self.blocks.keys().copied().collect();
        v.sort_unstable();
        v
    }

    /// Every voxel of every allocated block, in key order.
    pub fn iter_voxels(&self) -> impl Iterator<Item = (VoxelKey, &Voxel)> + '_ {
        self.block_coords().into_iter().flat_map(move |b| {
            let block = &self.blocks[&b];
            block.iter().enumerate().map(move |(i, v)| {
                (
                    VoxelKey {
                        block: b,
                        local: i as u16,
                    },
                    v,
                )
            })
        })
    }

    /// Voxels that have received at least one TSDF update.
    pub fn observed_voxels(&self) -> impl Iterator<Item = (VoxelKey, &Voxel)> + '_ {
        self.iter_voxels().filter(|(_, v)| v.tsdf_weight > 0.0)
    }

    /// Voxels with positive total instance count.
    pub fn labeled_voxel_count(&self) -> usize {
        self.iter_voxels().filter(|(_, v)| v.total_count() > 0).count()
    }

    pub fn instance_tuple(&self, key: &VoxelKey) -> InstanceTuple {
        self.get(key).map(instance_tuple).unwrap_or_default()
    }

    /// Argmax instance label; `None` for unallocated or unlabeled voxels.
    pub fn label_query(&self, key: &VoxelKey) -> Option<InstanceId> {
        self.get(key).and_then(Voxel::argmax_label)
    }

    /// Number of voxels whose current argmax label is `id`.
    pub fn instance_size(&self, id: InstanceId) -> usize {
        self.instance_sizes.get(&id).copied().unwrap_or(0)
    }

    /// Voxels updated by the most recent [`VoxelGrid::integrate_tsdf`] call.
    pub fn touched_this_frame(&self, key: &VoxelKey) -> bool {
        self.frame_touched.contains(key)
    }

    /// Voxels under the region's back-projected pixels, restricted to blocks
    /// allocated or revisited by the latest integration. Sorted by key.
    pub fn mask_to_voxels(&self, mask: &Mask, depth: &DepthImage, pose: &Pose, intrinsics: &Intrinsics) -> Vec<VoxelKey> {
        assert!(mask.same_size(depth), "mask and depth sizes differ");
        let mut out: Vec<VoxelKey> = Vec::new();
        let mut last: Option<VoxelKey> = None;
        for (x, y, &on) in mask.enumerate() {
            if !on {
                continue;
            }
            let d = *depth.get(x, y);
            if !(d > 0.0) {
                continue;
            }
            let p = pose.camera_to_world(&intrinsics.backproject(x as f64, y as f64, d));
            let key = self.quantize(&p);
            if last == Some(key) {
                continue;
            }
            last = Some(key);
            if self.frame_blocks.contains(&key.block) {
                out.push(key);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Adds one observation of `id` to a voxel (`α ← α + y`).
    pub fn add_label(&mut self, key: &VoxelKey, id: InstanceId) {
        let stamp = self.frame_counter;
        let voxel = self.get_or_allocate(key);
        let before = voxel.argmax_label();
        if voxel.total_count() == 0 {
            voxel.first_labeled = Some(stamp);
        }
        voxel.increment(id);
        let after = voxel.argmax_label();
        self.track_argmax(before, after);
    }

    /// Replaces the voxel's counts by a single observation of `id`.
    pub fn overwrite_label(&mut self, key: &VoxelKey, id: InstanceId) {
        let stamp = self.frame_counter;
        let voxel = self.get_or_allocate(key);
        let before = voxel.argmax_label();
        if voxel.total_count() == 0 {
            voxel.first_labeled = Some(stamp);
        }
        voxel.counts.clear();
        voxel.counts.push((id, 1));
        self.track_argmax(before, Some(id));
    }

    fn track_argmax(&mut self, before: Option<InstanceId>, after: Option<InstanceId>) {
        if before == after {
            return;
        }
        if let Some(b) = before {
            if let Some(n) = self.instance_sizes.get_mut(&b) {
                *n -= 1;
                if *n == 0 {
                    self.instance_sizes.remove(&b);
                }
            }
        }
        if let Some(a) = after {
            *self.instance_sizes.entry(a).or_insert(0) += 1;
        }
    }

    /// Voxels among `touched` whose total count went from zero to positive
    /// during the current frame.
    pub fn new_voxel_set(&self, touched: &[VoxelKey]) -> Vec<VoxelKey> {
        let stamp = self.frame_counter;
        touched
            .iter()
            .filter(|k| self.get(k).is_some_and(|v| v.first_labeled == Some(stamp)))
            .copied()
            .collect()
    }

    /// Writes analytic SDF samples into every voxel of the box `[min, max]`
    /// whose center lies inside the truncation band. Weight 1 per voxel.
    pub fn fill_from_sdf(
        &mut self,
        min: Point3<f64>,
        max: Point3<f64>,
        sdf: impl Fn(&Point3<f64>) -> f64,
        color: impl Fn(&Point3<f64>) -> [f64; 3],
    ) {
        let lo = self.quantize(&min).index();
        let hi = self.quantize(&max).index();
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let key = VoxelKey::from_index([x, y, z]);
                    let c = self.voxel_center(&key);
                    let d = sdf(&c);
                    if d.abs() > self.truncation {
                        continue;
                    }
                    let trunc = self.truncation;
                    let v = self.get_or_allocate(&key);
                    v.tsdf = (d / trunc).clamp(-1.0, 1.0);
                    v.tsdf_weight = 1.0;
                    v.color = color(&c);
                }
            }
        }
    }

    pub(crate) fn begin_frame(&mut self) {
        self.frame_counter += 1;
        self.frame_touched.clear();
        self.frame_blocks.clear();
    }

    pub(crate) fn blocks_mut(&mut self) -> &mut HashMap<BlockCoord, Block, FixedState> {
        &mut self.blocks
    }

    pub(crate) fn set_frame_blocks(&mut self, blocks: impl IntoIterator<Item = BlockCoord>) {
        self.frame_blocks.extend(blocks);
    }

    pub(crate) fn set_frame_touched(&mut self, keys: impl IntoIterator<Item = VoxelKey>) {
        self.frame_touched.extend(keys);
    }

    pub(crate) fn insert_block(&mut self, coord: BlockCoord, voxels: Vec<Voxel>) {
        for v in &voxels {
            if let Some(a) = v.argmax_label() {
                *self.instance_sizes.entry(a).or_insert(0) += 1;
            }
        }
        self.blocks.insert(coord, voxels.into_boxed_slice());
    }

    pub(crate) fn set_frame_counter(&mut self, t: u64) {
        self.frame_counter = t;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn world_to_voxel_examples() {
        let g = VoxelGrid::with_resolution(0.03).unwrap();
        let k = g.world_to_voxel(&Point3::new(0.045, 0.0, 0.0)).unwrap();
        assert_eq!(k.index(), [1, 0, 0]);
        let o = g.world_to_voxel(&Point3::origin()).unwrap();
        assert_eq!(o.index(), [0, 0, 0]);
        assert_eq!(o.block, [0, 0, 0]);
        assert_eq!(o.local, 0);
        assert!(g.world_to_voxel(&Point3::new(f64::NAN, 0.0, 0.0)).is_err());
        let n = g.world_to_voxel(&Point3::new(-0.001, -0.25, 0.0)).unwrap();
        assert_eq!(n.index(), [-1, -9, 0]);
        assert_eq!(n.block, [-1, -2, 0]);
    }

    #[test]
    fn rejects_bad_grid_parameters() {
        assert!(VoxelGrid::new(0.0, 0.1).is_err());
        assert!(VoxelGrid::new(0.03, 0.05).is_err());
        assert!(VoxelGrid::new(0.03, 0.06).is_ok());
    }

    proptest! {
        #[test]
        fn key_index_round_trip(x in -5000i64..5000, y in -5000i64..5000, z in -5000i64..5000) {
            let k = VoxelKey::from_index([x, y, z]);
            prop_assert_eq!(k.index(), [x, y, z]);
            prop_assert!(k.offset().iter().all(|o| (0..8).contains(o)));
        }

        #[test]
        fn center_within_quantization_bound(x in -10.0f64..10.0, y in -10.0f64..10.0, z in -10.0f64..10.0) {
            let g = VoxelGrid::with_resolution(0.03).unwrap();
            let p = Point3::new(x, y, z);
            let c = g.voxel_center(&g.world_to_voxel(&p).unwrap());
            prop_assert!((c - p).norm() <= 0.015 * 3f64.sqrt() + 1e-12);
        }
    }

    #[test]
    fn instance_tuple_examples() {
        let mut v = Voxel::default();
        assert!(instance_tuple(&v).is_empty());
        v.increment(InstanceId(1));
        v.increment(InstanceId(1));
        v.increment(InstanceId(2));
        let t = instance_tuple(&v);
        assert_eq!(t.get(InstanceId(1)), 2.0 / 3.0);
        assert_eq!(t.get(InstanceId(2)), 1.0 / 3.0);
        let mut single = Voxel::default();
        for _ in 0..5 {
            single.increment(InstanceId(9));
        }
        assert_eq!(instance_tuple(&single).get(InstanceId(9)), 1.0);
    }

    #[test]
    fn label_query_ties_and_missing() {
        let mut g = VoxelGrid::with_resolution(0.1).unwrap();
        let k = VoxelKey::from_index([0, 0, 0]);
        assert_eq!(g.label_query(&k), None);
        g.add_label(&k, InstanceId(3));
        g.add_label(&k, InstanceId(3));
        g.add_label(&k, InstanceId(1));
        assert_eq!(g.label_query(&k), Some(InstanceId(3)));
        g.add_label(&k, InstanceId(1));
        // 2:2 tie → smaller id
        assert_eq!(g.label_query(&k), Some(InstanceId(1)));
        assert_eq!(g.instance_size(InstanceId(1)), 1);
        assert_eq!(g.instance_size(InstanceId(3)), 0);
    }

    #[test]
    fn dirichlet_matches_brute_force_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut v = Voxel::default();
            let n = rng.random_range(1..40);
            let labels: Vec<u32> = (0..n).map(|_| rng.random_range(1..5)).collect();
            for &l in &labels {
                v.increment(InstanceId(l));
            }
            let t = instance_tuple(&v);
            for l in 1..5 {
                let c = labels.iter().filter(|&&x| x == l).count();
                let want = if c == 0 { 0.0 } else { c as f64 / n as f64 };
                assert_eq!(t.get(InstanceId(l)), want);
            }
            let sum: f64 = t.probabilities.values().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn instance_sizes_track_argmax() {
        let mut g = VoxelGrid::with_resolution(0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let keys: Vec<_> = (0..30).map(|i| VoxelKey::from_index([i, 0, 0])).collect();
        for _ in 0..300 {
            let k = keys[rng.random_range(0..keys.len())];
            g.add_label(&k, InstanceId(rng.random_range(1..4)));
        }
        for id in 1..4 {
            let id = InstanceId(id);
            let brute = keys.iter().filter(|k| g.label_query(k) == Some(id)).count();
            assert_eq!(g.instance_size(id), brute);
        }
    }
}
