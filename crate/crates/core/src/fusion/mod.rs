//! Instance association and live map evolution.
//!
//! Each mask is matched against instances already voted into its voxel
//! region by a blend of geometric evidence (mean Dirichlet posterior) and
//! embedding cosine similarity. Matched or newly created instances then
//! receive one count per voxel, and the codebook fuses the mask embedding
//! weighted by association score times visibility.

mod codebook;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::ids::InstanceId;
use crate::scene::{FrameBundle, SegObservation};
use crate::voxel::{VoxelGrid, VoxelKey};

pub use codebook::{CodebookEntry, InstanceCodebook};

/// How associated masks update voxel counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Dirichlet counting: one more vote for the assigned instance.
    #[default]
    Counting,
    /// Ablation baseline: the latest label replaces all history.
    LastWriteWins,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Instance fusion threshold.
    pub xi: f64,
    /// Weight of geometric similarity; embeddings get the rest.
    pub lambda_geo: f64,
    pub update_rule: UpdateRule,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            xi: 0.25,
            lambda_geo: 0.5,
            update_rule: UpdateRule::Counting,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("xi", self.xi), ("lambda_geo", self.lambda_geo)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("fusion.{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssociationResult {
    /// Index of the mask in the observation.
    pub mask: usize,
    pub id: InstanceId,
    /// Association score; 1 for new instances.
    pub score: f64,
    pub is_new: bool,
    /// Voxel region of the mask, sorted.
    pub voxels: Vec<VoxelKey>,
    /// Visibility ratio against the pre-update map.
    pub visibility: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedMask {
    pub mask: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Association {
    pub results: Vec<AssociationResult>,
    pub skipped: Vec<SkippedMask>,
}

/// One line of the association log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationRecord {
    pub t: u64,
    pub k: usize,
    pub id: u32,
    pub score: f64,
    pub new: bool,
    pub n_voxels: usize,
}

impl Association {
    pub fn records(&self, t: u64) -> Vec<AssociationRecord> {
        self.results
            .iter()
            .map(|r| AssociationRecord {
                t,
                k: r.mask,
                id: r.id.0,
                score: r.score,
                new: r.is_new,
                n_voxels: r.voxels.len(),
            })
            .collect()
    }

    pub fn write_log(&self, t: u64, w: &mut impl Write) -> std::io::Result<()> {
        for rec in self.records(t) {
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Mean posterior probability of `gamma` over the region.
pub fn geometric_similarity(voxels: &[VoxelKey], gamma: InstanceId, grid: &VoxelGrid) -> Result<f64> {
    if voxels.is_empty() {
        return Err(Error::InvalidArgument("geometric similarity of an empty voxel region".into()));
    }
    let sum: f64 = voxels.iter().map(|k| grid.instance_tuple(k).get(gamma)).sum();
    Ok(sum / voxels.len() as f64)
}

pub fn embedding_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidArgument(format!(
            "embedding dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return Err(Error::InvalidArgument("zero embedding".into()));
    }
    Ok(a.dot(b).clamp(-1.0, 1.0))
}

/// `|V_mask| / |argmax voxels of the instance|`, clamped to `[0, 1]`; 1
/// when the instance owns no voxels yet. Call before updating the grid.
pub fn visibility_ratio(n_region: usize, id: InstanceId, grid: &VoxelGrid) -> f64 {
    let size = grid.instance_size(id);
    if size == 0 {
        1.0
    } else {
        (n_region as f64 / size as f64).min(1.0)
    }
}

/// Per-instance sums of posterior probability over a region.
fn region_evidence(voxels: &[VoxelKey], grid: &VoxelGrid) -> BTreeMap<InstanceId, f64> {
    let mut sums = BTreeMap::new();
    for k in voxels {
        let Some(v) = grid.get(k) else { continue };
        let total = v.total_count();
        if total == 0 {
            continue;
        }
        for &(id, c) in &v.counts {
            if c > 0 {
                *sums.entry(id).or_insert(0.0) += c as f64 / total as f64;
            }
        }
    }
    sums
}

/// Assigns every mask to an existing or new instance. Reads the grid only;
/// new instances are registered in the codebook with zero weight.
pub fn associate(
    obs: &SegObservation,
    frame: &FrameBundle,
    grid: &VoxelGrid,
    codebook: &mut InstanceCodebook,
    cfg: &FusionConfig,
) -> Result<Association> {
    obs.validate()?;
    let mut out = Association::default();
    for (k, (mask, f_obs)) in obs.masks.iter().zip(&obs.embeddings).enumerate() {
        let voxels = grid.mask_to_voxels(mask, &frame.depth, &frame.pose, &frame.intrinsics);
        if voxels.is_empty() {
            out.skipped.push(SkippedMask {
                mask: k,
                reason: "no valid depth inside the mask".into(),
            });
            continue;
        }
        let n = voxels.len() as f64;
        let mut best: Option<(InstanceId, f64)> = None;
        for (id, sum) in region_evidence(&voxels, grid) {
            let s_geo = sum / n;
            let s_emb = match codebook.get(id) {
                Some(e) => embedding_similarity(&e.embedding, f_obs)?.max(0.0),
                None => 0.0,
            };
            let a = cfg.lambda_geo * s_geo + (1.0 - cfg.lambda_geo) * s_emb;
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((id, a));
            }
        }
        let (id, score, is_new) = match best {
            Some((id, a)) if a > cfg.xi => (id, a, false),
            _ => (codebook.allocate(f_obs.clone()), 1.0, true),
        };
        let visibility = visibility_ratio(voxels.len(), id, grid);
        out.results.push(AssociationResult {
            mask: k,
            id,
            score,
            is_new,
            voxels,
            visibility,
        });
    }
    Ok(out)
}

/// Adds one vote for the assigned instance to every voxel of every region.
pub fn update_voxels(results: &[AssociationResult], grid: &mut VoxelGrid, rule: UpdateRule) {
    for r in results {
        for key in &r.voxels {
            match rule {
                UpdateRule::Counting => grid.add_label(key, r.id),
                UpdateRule::LastWriteWins => grid.overwrite_label(key, r.id),
            }
        }
    }
}

/// Fuses each mask embedding with credibility `score × visibility`.
pub fn update_codebook(results: &[AssociationResult], obs: &SegObservation, codebook: &mut InstanceCodebook) -> Result<()> {
    for r in results {
        let f = obs
            .embeddings
            .get(r.mask)
            .ok_or_else(|| Error::InvalidArgument(format!("result refers to missing mask {}", r.mask)))?;
        codebook.fuse(r.id, f, r.score * r.visibility)?;
    }
    Ok(())
}

/// Association followed by the voxel and codebook updates.
pub fn fuse_observation(
    obs: &SegObservation,
    frame: &FrameBundle,
    grid: &mut VoxelGrid,
    codebook: &mut InstanceCodebook,
    cfg: &FusionConfig,
) -> Result<Association> {
    let assoc = associate(obs, frame, grid, codebook, cfg)?;
    update_voxels(&assoc.results, grid, cfg.update_rule);
    update_codebook(&assoc.results, obs, codebook)?;
    Ok(assoc)
}
