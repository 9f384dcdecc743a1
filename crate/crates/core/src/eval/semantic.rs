use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::fusion::InstanceCodebook;
use crate::ids::{ClassId, InstanceId};
use crate::raster::Image;
use crate::scene::FrameBundle;
use crate::voxel::{VoxelGrid, VoxelKey};

/// Per-voxel majority vote over labeled depth pixels, used to build ground
/// truth from segmented frames.
#[derive(Clone, Debug)]
pub struct VoxelVotes<L> {
    votes: HashMap<VoxelKey, BTreeMap<L, u32>>,
}

impl<L> Default for VoxelVotes<L> {
    fn default() -> Self {
        Self { votes: HashMap::new() }
    }
}

impl<L: Ord + Copy> VoxelVotes<L> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_frame(&mut self, grid: &VoxelGrid, frame: &FrameBundle, labels: &Image<Option<L>>) -> Result<()> {
        if !labels.same_size(&frame.depth) {
            return Err(Error::InvalidArgument("label image and depth differ in size".into()));
        }
        for (x, y, l) in labels.enumerate() {
            let (Some(l), Some(d)) = (l, frame.depth_at(x, y)) else { continue };
            let p = frame.pose.camera_to_world(&frame.intrinsics.backproject(x as f64, y as f64, d));
            let key = grid.world_to_voxel(&p)?;
            *self.votes.entry(key).or_default().entry(*l).or_insert(0) += 1;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    /// Majority label per voxel; ties go to the smallest label.
    pub fn labels(&self) -> BTreeMap<VoxelKey, L> {
        self.votes
            .iter()
            .filter_map(|(k, v)| {
                let best = v.iter().fold(None, |acc: Option<(&L, &u32)>, (l, c)| match acc {
                    Some((_, bc)) if bc >= c => acc,
                    _ => Some((l, c)),
                })?;
                Some((*k, *best.0))
            })
            .collect()
    }
}

/// Greedy one-to-one matching of predicted to ground-truth instances by
/// voxel overlap, largest overlap first.
pub fn match_instances(grid: &VoxelGrid, gt: &BTreeMap<VoxelKey, InstanceId>) -> BTreeMap<InstanceId, InstanceId> {
    let mut overlap: BTreeMap<(InstanceId, InstanceId), usize> = BTreeMap::new();
    for (k, g) in gt {
        if let Some(p) = grid.label_query(k) {
            *overlap.entry((p, *g)).or_insert(0) += 1;
        }
    }
    let mut pairs: Vec<((InstanceId, InstanceId), usize)> = overlap.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = BTreeMap::new();
    let mut used_gt = std::collections::BTreeSet::new();
    for ((p, g), _) in pairs {
        if !out.contains_key(&p) && !used_gt.contains(&g) {
            out.insert(p, g);
            used_gt.insert(g);
        }
    }
    out
}

/// Fraction of labeled voxels whose argmax instance, after matching, equals
/// the ground-truth instance. Labeled voxels without ground truth count as
/// wrong. Returns 0 when nothing is labeled.
pub fn instance_label_accuracy(grid: &VoxelGrid, gt: &BTreeMap<VoxelKey, InstanceId>) -> f64 {
    let matching = match_instances(grid, gt);
    let mut total = 0usize;
    let mut correct = 0usize;
    for (k, v) in grid.iter_voxels() {
        let Some(p) = v.argmax_label() else { continue };
        total += 1;
        if gt.get(&k).is_some_and(|g| matching.get(&p) == Some(g)) {
            correct += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub iou: f64,
    pub acc: f64,
    /// Ground-truth voxels of this class.
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticEvalReport {
    pub per_class: BTreeMap<ClassId, ClassScores>,
    pub miou: f64,
    pub fiou: f64,
    pub macc: f64,
    pub facc: f64,
    /// Ground-truth voxels that carried no instance label.
    pub unlabeled: usize,
}

fn closest_class(e: &Embedding, classes: &BTreeMap<ClassId, Embedding>) -> ClassId {
    let mut best = (f64::NEG_INFINITY, ClassId(0));
    for (c, t) in classes {
        let s = e.dot(t);
        if s > best.0 {
            best = (s, *c);
        }
    }
    best.1
}

/// Labels each voxel with the class whose text embedding is closest to its
/// instance embedding, then scores against ground truth over the
/// ground-truth voxels. Voxels without an instance label count as misses.
pub fn zero_shot_segmentation(
    grid: &VoxelGrid,
    codebook: &InstanceCodebook,
    label_embeddings: &BTreeMap<ClassId, Embedding>,
    gt_labels: &BTreeMap<VoxelKey, ClassId>,
) -> Result<SemanticEvalReport> {
    if codebook.is_empty() {
        return Err(Error::InvalidArgument("zero-shot evaluation needs a non-empty codebook".into()));
    }
    if label_embeddings.is_empty() {
        return Err(Error::InvalidArgument("zero-shot evaluation needs class embeddings".into()));
    }
    if gt_labels.is_empty() {
        return Err(Error::Data("no ground-truth voxel labels".into()));
    }
    let dim = codebook.dim();
    if let Some((c, e)) = label_embeddings.iter().find(|(_, e)| Some(e.dim()) != dim) {
        return Err(Error::InvalidArgument(format!(
            "class {} embedding has dimension {}, codebook has {:?}",
            c.0,
            e.dim(),
            dim
        )));
    }

    let instance_class: BTreeMap<InstanceId, ClassId> = codebook
        .iter()
        .map(|(id, entry)| (id, closest_class(&entry.embedding, label_embeddings)))
        .collect();

    // (tp, fp, fn) per class
    let mut counts: BTreeMap<ClassId, (usize, usize, usize)> = BTreeMap::new();
    let mut unlabeled = 0;
    for (k, g) in gt_labels {
        let pred = grid.label_query(k).and_then(|id| instance_class.get(&id).copied());
        match pred {
            Some(p) if p == *g => counts.entry(*g).or_default().0 += 1,
            Some(p) => {
                counts.entry(*g).or_default().2 += 1;
                counts.entry(p).or_default().1 += 1;
            }
            None => {
                unlabeled += 1;
                counts.entry(*g).or_default().2 += 1;
            }
        }
    }

    let mut per_class = BTreeMap::new();
    for (c, (tp, fp, fn_)) in counts {
        let support = tp + fn_;
        if support == 0 {
            continue;
        }
        per_class.insert(
            c,
            ClassScores {
                iou: tp as f64 / (tp + fp + fn_) as f64,
                acc: tp as f64 / support as f64,
                support,
            },
        );
    }
    let n = per_class.len() as f64;
    let total: usize = per_class.values().map(|s| s.support).sum();
    let weighted = |f: fn(&ClassScores) -> f64| per_class.values().map(|s| s.support as f64 * f(s)).sum::<f64>() / total as f64;
    Ok(SemanticEvalReport {
        miou: per_class.values().map(|s| s.iou).sum::<f64>() / n,
        macc: per_class.values().map(|s| s.acc).sum::<f64>() / n,
        fiou: weighted(|s| s.iou),
        facc: weighted(|s| s.acc),
        per_class,
        unlabeled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Setup {
        grid: VoxelGrid,
        codebook: InstanceCodebook,
        classes: BTreeMap<ClassId, Embedding>,
        gt: BTreeMap<VoxelKey, ClassId>,
    }

    /// Two instances of 10 voxels each, the first labeled with instance
    /// embedding `e0` and the second with `e1`; ground truth is class 1
    /// then class 2.
    fn setup(e0: Embedding, e1: Embedding, label_second: bool) -> Setup {
        let mut grid = VoxelGrid::with_resolution(0.1).unwrap();
        let mut codebook = InstanceCodebook::new();
        let a = codebook.allocate(e0);
        let b = codebook.allocate(e1);
        let mut gt = BTreeMap::new();
        for i in 0..20 {
            let k = VoxelKey::from_index([i, 0, 0]);
            grid.get_or_allocate(&k);
            if i < 10 {
                grid.add_label(&k, a);
                gt.insert(k, ClassId(1));
            } else {
                if label_second {
                    grid.add_label(&k, b);
                }
                gt.insert(k, ClassId(2));
            }
        }
        let classes = BTreeMap::from([(ClassId(1), Embedding::basis(4, 0)), (ClassId(2), Embedding::basis(4, 1))]);
        Setup { grid, codebook, classes, gt }
    }

    fn eval(s: &Setup) -> SemanticEvalReport {
        zero_shot_segmentation(&s.grid, &s.codebook, &s.classes, &s.gt).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let r = eval(&setup(Embedding::basis(4, 0), Embedding::basis(4, 1), true));
        assert_eq!((r.miou, r.fiou, r.macc, r.facc), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn one_class_confused() {
        // class 1 predicted as class 2, class 2 correct
        let r = eval(&setup(Embedding::basis(4, 1), Embedding::basis(4, 1), true));
        assert_eq!(r.per_class[&ClassId(1)].iou, 0.0);
        assert_eq!(r.per_class[&ClassId(2)].iou, 0.5);
        assert_eq!((r.miou, r.fiou, r.macc, r.facc), (0.25, 0.25, 0.5, 0.5));
    }

    #[test]
    fn unlabeled_voxels_are_misses() {
        let r = eval(&setup(Embedding::basis(4, 0), Embedding::basis(4, 1), false));
        assert_eq!(r.unlabeled, 10);
        assert_eq!(r.per_class[&ClassId(2)].iou, 0.0);
        assert_eq!(r.facc, 0.5);
    }

    #[test]
    fn everything_unlabeled_scores_zero() {
        let mut s = setup(Embedding::basis(4, 0), Embedding::basis(4, 1), false);
        s.grid = VoxelGrid::with_resolution(0.1).unwrap();
        let r = eval(&s);
        assert_eq!((r.miou, r.facc), (0.0, 0.0));
    }

    #[test]
    fn empty_codebook_is_an_error() {
        let mut s = setup(Embedding::basis(4, 0), Embedding::basis(4, 1), true);
        s.codebook = InstanceCodebook::new();
        assert!(zero_shot_segmentation(&s.grid, &s.codebook, &s.classes, &s.gt).is_err());
    }

    #[test]
    fn instance_relabeling_is_invisible() {
        // same partition, ids allocated in the opposite order
        let s = setup(Embedding::basis(4, 0), Embedding::basis(4, 1), true);
        let mut grid = VoxelGrid::with_resolution(0.1).unwrap();
        let mut codebook = InstanceCodebook::new();
        let b = codebook.allocate(Embedding::basis(4, 1));
        let a = codebook.allocate(Embedding::basis(4, 0));
        for i in 0..20 {
            let k = VoxelKey::from_index([i, 0, 0]);
            grid.add_label(&k, if i < 10 { a } else { b });
        }
        let r2 = zero_shot_segmentation(&grid, &codebook, &s.classes, &s.gt).unwrap();
        assert_eq!(eval(&s), r2);
    }

    #[test]
    fn votes_and_matching() {
        let mut grid = VoxelGrid::with_resolution(0.1).unwrap();
        let k1 = VoxelKey::from_index([0, 0, 0]);
        let k2 = VoxelKey::from_index([1, 0, 0]);
        grid.add_label(&k1, InstanceId(7));
        grid.add_label(&k2, InstanceId(7));
        let gt = BTreeMap::from([(k1, InstanceId(1)), (k2, InstanceId(2))]);
        let m = match_instances(&grid, &gt);
        assert_eq!(m.len(), 1);
        assert_eq!(instance_label_accuracy(&grid, &gt), 0.5);

        let mut v: VoxelVotes<u32> = VoxelVotes::new();
        v.votes.entry(k1).or_default().extend([(3, 2), (1, 2), (5, 1)]);
        assert_eq!(v.labels()[&k1], 1);
    }
}
