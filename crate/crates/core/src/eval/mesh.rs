use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshEvalConfig {
    pub samples: usize,
    /// Distance threshold for completion ratio and F-score, meters.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for MeshEvalConfig {
    fn default() -> Self {
        Self {
            samples: 20_000,
            threshold: 0.05,
            seed: 0,
        }
    }
}

/// Distances in centimeters, ratios as fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshMetrics {
    pub acc_cm: f64,
    pub comp_cm: f64,
    pub comp_ratio: f64,
    pub precision: f64,
    pub f_score: f64,
}

/// Area-uniform surface samples.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Vec<Point3<f64>> {
    let mut cum = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += 0.5 * mesh.face_normal(f).norm();
        cum.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let f = cum.partition_point(|&c| c < r).min(cum.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let su = u.sqrt();
            let p = a.coords * (1.0 - su) + b.coords * (su * (1.0 - v)) + c.coords * (su * v);
            Point3::from(p)
        })
        .collect()
}

/// Closest point on triangle `abc` to `p`.
pub fn closest_point_on_triangle(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> Point3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.min = self.min.inf(&o.min);
        self.max = self.max.sup(&o.max);
    }

    fn dist2(&self, p: &Vector3<f64>) -> f64 {
        let d = (self.min - p).sup(&(p - self.max)).sup(&Vector3::zeros());
        d.norm_squared()
    }
}

enum Node {
    Leaf { bounds: Aabb, tris: Vec<u32> },
    Inner { bounds: Aabb, children: Box<[Node; 2]> },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Bounding volume hierarchy for nearest-surface queries.
pub struct MeshBvh<'a> {
    mesh: &'a TriangleMesh,
    root: Node,
}

const LEAF_SIZE: usize = 8;

impl<'a> MeshBvh<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Self {
        let centroids: Vec<Vector3<f64>> = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                (a.coords + b.coords + c.coords) / 3.0
            })
            .collect();
        let tris: Vec<u32> = (0..mesh.faces.len() as u32).collect();
        let root = Self::build(mesh, &centroids, tris);
        Self { mesh, root }
    }

    fn build(mesh: &TriangleMesh, centroids: &[Vector3<f64>], mut tris: Vec<u32>) -> Node {
        let mut bounds = Aabb::empty();
        for &t in &tris {
            for p in mesh.triangle(t as usize) {
                bounds.grow(&p.coords);
            }
        }
        if tris.len() <= LEAF_SIZE {
            return Node::Leaf { bounds, tris };
        }
        let mut cb = Aabb::empty();
        for &t in &tris {
            cb.grow(&centroids[t as usize]);
        }
        let ext = cb.max - cb.min;
        let axis = ext.imax();
        let mid = tris.len() / 2;
        tris.select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        let right = tris.split_off(mid);
        let l = Self::build(mesh, centroids, tris);
        let r = Self::build(mesh, centroids, right);
        let mut b = *l.bounds();
        b.merge(r.bounds());
        Node::Inner {
            bounds: b,
            children: Box::new([l, r]),
        }
    }

    /// Euclidean distance from `p` to the nearest triangle.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        let mut best = f64::INFINITY;
        let mut stack: Vec<&Node> = vec![&self.root];
        while let Some(node) = stack.pop() {
            if node.bounds().dist2(&p.coords) >= best {
                continue;
            }
            match node {
                Node::Leaf { tris, .. } => {
                    for &t in tris {
                        let [a, b, c] = self.mesh.triangle(t as usize);
                        let q = closest_point_on_triangle(p, &a, &b, &c);
                        best = best.min((q - p).norm_squared());
                    }
                }
                Node::Inner { children, .. } => {
                    let d0 = children[0].bounds().dist2(&p.coords);
                    let d1 = children[1].bounds().dist2(&p.coords);
                    // visit the nearer child first
                    if d0 <= d1 {
                        stack.push(&children[1]);
                        stack.push(&children[0]);
                    } else {
                        stack.push(&children[0]);
                        stack.push(&children[1]);
                    }
                }
            }
        }
        best.sqrt()
    }
}

/// Accuracy, completeness, completion ratio and F-score between surfaces.
pub fn mesh_metrics(pred: &TriangleMesh, gt: &TriangleMesh, cfg: &MeshEvalConfig) -> Result<MeshMetrics> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Data("mesh metrics need two non-empty meshes".into()));
    }
    if cfg.samples == 0 || !(cfg.threshold > 0.0) {
        return Err(Error::Config("mesh evaluation needs positive samples and threshold".into()));
    }
    let pred_pts = sample_surface(pred, cfg.samples, cfg.seed);
    let gt_pts = sample_surface(gt, cfg.samples, cfg.seed.wrapping_add(1));
    let gt_bvh = MeshBvh::new(gt);
    let pred_bvh = MeshBvh::new(pred);
    let d_pred: Vec<f64> = pred_pts.iter().map(|p| gt_bvh.distance(p)).collect();
    let d_gt: Vec<f64> = gt_pts.iter().map(|p| pred_bvh.distance(p)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let frac = |v: &[f64]| v.iter().filter(|&&d| d < cfg.threshold).count() as f64 / v.len() as f64;
    let precision = frac(&d_pred);
    let recall = frac(&d_gt);
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MeshMetrics {
        acc_cm: 100.0 * mean(&d_pred),
        comp_cm: 100.0 * mean(&d_gt),
        comp_ratio: recall,
        precision,
        f_score,
    })
}
