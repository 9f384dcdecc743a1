//! Analytic scenes with ground-truth instances, and a pinhole raycaster that
//! renders them into RGB-D frames plus exact segmentation.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{orthonormal_set, Embedding};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::ids::{ClassId, InstanceId};
use crate::raster::{ColorImage, DepthImage, Image, Mask};
use crate::scene::frame::{FrameBundle, SegObservation};

pub const DEFAULT_EMBEDDING_DIM: usize = 64;
const AMBIENT: f64 = 0.35;
const HIT_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Sphere {
        center: Point3<f64>,
        radius: f64,
    },
    /// Oriented box; `pose` maps box-local coordinates to world.
    Cuboid {
        pose: Pose,
        half_extents: Vector3<f64>,
    },
    /// Capped cylinder along the local z axis.
    Cylinder {
        pose: Pose,
        radius: f64,
        half_height: f64,
    },
}

impl Shape {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            Shape::Sphere { radius, .. } => *radius > 0.0,
            Shape::Cuboid { half_extents, .. } => half_extents.iter().all(|&e| e > 0.0),
            Shape::Cylinder {
                radius,
                half_height,
                ..
            } => *radius > 0.0 && *half_height > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "shape has non-positive dimensions: {self:?}"
            )))
        }
    }

    /// Nearest hit `t > 0` along `origin + t·dir` with the outward unit normal.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        match self {
            Shape::Sphere { center, radius } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let b = oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-b - sq) / a, (-b + sq) / a]
                    .into_iter()
                    .find(|&t| t > HIT_EPS)?;
                let n = (origin + dir * t - center) / *radius;
                Some((t, n))
            }
            Shape::Cuboid { pose, half_extents } => {
                let o = pose.world_to_camera(origin);
                let d = pose.rotation.transpose() * dir;
                let (t, n_local) = slab_intersect(&o, &d, half_extents)?;
                Some((t, pose.rotation * n_local))
            }
            Shape::Cylinder {
                pose,
                radius,
                half_height,
            } => {
                let o = pose.world_to_camera(origin);
                let d = pose.rotation.transpose() * dir;
                let (t, n_local) = cylinder_intersect(&o, &d, *radius, *half_height)?;
                Some((t, pose.rotation * n_local))
            }
        }
    }

    /// Exact signed distance for spheres and cuboids, exact for capped cylinders as well.
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Cuboid { pose, half_extents } => {
                let q = pose.world_to_camera(p).coords.abs() - half_extents;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            Shape::Cylinder {
                pose,
                radius,
                half_height,
            } => {
                let l = pose.world_to_camera(p);
                let dr = (l.x * l.x + l.y * l.y).sqrt() - radius;
                let dz = l.z.abs() - half_height;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                outside + dr.max(dz).min(0.0)
            }
        }
    }
}

fn slab_intersect(o: &Point3<f64>, d: &Vector3<f64>, h: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0;
    let mut far_axis = 0;
    for i in 0..3 {
        if d[i].abs() < 1e-15 {
            if o[i].abs() > h[i] {
                return None;
            }
            continue;
        }
        let t1 = (-h[i] - o[i]) / d[i];
        let t2 = (h[i] - o[i]) / d[i];
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if lo > t_near {
            t_near = lo;
            near_axis = i;
        }
        if hi < t_far {
            t_far = hi;
            far_axis = i;
        }
    }
    if t_near > t_far || t_far <= HIT_EPS {
        return None;
    }
    let (t, axis) = if t_near > HIT_EPS {
        (t_near, near_axis)
    } else {
        (t_far, far_axis)
    };
    let p = o + d * t;
    let mut n = Vector3::zeros();
    n[axis] = p[axis].signum();
    Some((t, n))
}

fn cylinder_intersect(o: &Point3<f64>, d: &Vector3<f64>, r: f64, hh: f64) -> Option<(f64, Vector3<f64>)> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let mut consider = |t: f64, n: Vector3<f64>| {
        if t > HIT_EPS && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-15 {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            for t in [(-b - sq) / a, (-b + sq) / a] {
                let p = o + d * t;
                if p.z.abs() <= hh {
                    consider(t, Vector3::new(p.x / r, p.y / r, 0.0));
                }
            }
        }
    }
    if d.z.abs() > 1e-15 {
        for cap in [-hh, hh] {
            let t = (cap - o.z) / d.z;
            let p = o + d * t;
            if p.x * p.x + p.y * p.y <= r * r {
                consider(t, Vector3::new(0.0, 0.0, cap.signum()));
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub id: InstanceId,
    pub class: ClassId,
    pub shape: Shape,
    pub albedo: [f64; 3],
    pub embedding: Embedding,
}

/// Geometry that shows up in depth and color but carries no instance.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundPanel {
    pub shape: Shape,
    pub albedo: [f64; 3],
}

/// `(t, normal, albedo, object index)` of a ray intersection; the index is
/// `None` for background panels.
pub type RayHit = (f64, Vector3<f64>, [f64; 3], Option<usize>);

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    pub objects: Vec<SceneObject>,
    pub background: Vec<BackgroundPanel>,
    /// Direction the light travels (towards the scene).
    pub light_dir: Vector3<f64>,
    pub class_embeddings: BTreeMap<ClassId, Embedding>,
}

impl SyntheticWorld {
    pub fn empty() -> Self {
        Self {
            objects: Vec::new(),
            background: Vec::new(),
            light_dir: Vector3::new(-0.3, 0.4, -1.0).normalize(),
            class_embeddings: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(o.id) {
                return Err(Error::InvalidArgument(format!("duplicate instance id {}", o.id)));
            }
            o.shape.validate()?;
        }
        for b in &self.background {
            b.shape.validate()?;
        }
        Ok(())
    }

    pub fn object(&self, id: InstanceId) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// Nearest surface along a world ray.
    pub fn trace(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        for (i, o) in self.objects.iter().enumerate() {
            if let Some((t, n)) = o.shape.intersect(origin, dir) {
                if best.as_ref().is_none_or(|b| t < b.0) {
                    best = Some((t, n, o.albedo, Some(i)));
                }
            }
        }
        for b in &self.background {
            if let Some((t, n)) = b.shape.intersect(origin, dir) {
                if best.as_ref().is_none_or(|bb| t < bb.0) {
                    best = Some((t, n, b.albedo, None));
                }
            }
        }
        best
    }

    /// Lambertian shade under the fixed directional light.
    pub fn shade(&self, albedo: [f64; 3], normal: &Vector3<f64>) -> [f64; 3] {
        let lambert = (-normal.dot(&self.light_dir)).max(0.0);
        let k = AMBIENT + (1.0 - AMBIENT) * lambert;
        [albedo[0] * k, albedo[1] * k, albedo[2] * k]
    }
}

/// A raycast frame together with its exact segmentation.
#[derive(Clone, Debug)]
pub struct RaycastFrame {
    pub frame: FrameBundle,
    pub observation: SegObservation,
    pub instance_ids: Image<Option<InstanceId>>,
    pub class_ids: Image<Option<ClassId>>,
}

/// Renders depth (camera z), shaded color and ground-truth masks.
///
/// One mask per visible object, in world object order.
pub fn raycast_frame(world: &SyntheticWorld, pose: &Pose, intrinsics: &Intrinsics, timestamp: u64) -> RaycastFrame {
    let (w, h) = (intrinsics.width, intrinsics.height);
    let origin = pose.center();
    let mut color = ColorImage::new(w, h);
    let mut depth = DepthImage::new(w, h);
    let mut hit_obj: Vec<Option<usize>> = vec![None; w * h];

    for y in 0..h {
        for x in 0..w {
            // camera-frame ray has z = 1, so the hit parameter is the z-depth
            let dir = pose.rotation * intrinsics.ray(x as f64, y as f64);
            if let Some((t, n, albedo, obj)) = world.trace(&origin, &dir) {
                depth.set(x, y, t);
                color.set(x, y, world.shade(albedo, &n));
                hit_obj[y * w + x] = obj;
            }
        }
    }

    let mut observation = SegObservation::default();
    for (i, obj) in world.objects.iter().enumerate() {
        let mask = Mask::from_vec(w, h, hit_obj.iter().map(|o| *o == Some(i)).collect());
        if mask.area() > 0 {
            observation.masks.push(mask);
            observation.embeddings.push(obj.embedding.clone());
        }
    }
    let instance_ids = Image::from_vec(w, h, hit_obj.iter().map(|o| o.map(|i| world.objects[i].id)).collect());
    let class_ids = Image::from_vec(w, h, hit_obj.iter().map(|o| o.map(|i| world.objects[i].class)).collect());

    RaycastFrame {
        frame: FrameBundle {
            color,
            depth,
            pose: *pose,
            intrinsics: *intrinsics,
            timestamp,
        },
        observation,
        instance_ids,
        class_ids,
    }
}

/// Instance hit by the ray from the camera center through a world point.
pub fn instance_along_ray(world: &SyntheticWorld, from: &Point3<f64>, to: &Point3<f64>) -> Option<InstanceId> {
    let dir = to - from;
    world
        .trace(from, &dir)
        .and_then(|(_, _, _, obj)| obj.map(|i| world.objects[i].id))
}

fn panel(center: Point3<f64>, half: Vector3<f64>, albedo: [f64; 3]) -> BackgroundPanel {
    BackgroundPanel {
        shape: Shape::Cuboid {
            pose: Pose::from_translation(center.coords),
            half_extents: half,
        },
        albedo,
    }
}

fn room() -> Vec<BackgroundPanel> {
    vec![
        panel(Point3::new(0.0, 0.0, -0.025), Vector3::new(1.2, 1.2, 0.025), [0.55, 0.5, 0.45]),
        panel(Point3::new(0.0, 1.225, 0.6), Vector3::new(1.2, 0.025, 0.6), [0.7, 0.72, 0.75]),
    ]
}

fn object_palette() -> Vec<(Shape, [f64; 3])> {
    vec![
        (
            Shape::Sphere {
                center: Point3::new(-0.45, -0.2, 0.18),
                radius: 0.18,
            },
            [0.85, 0.2, 0.2],
        ),
        (
            Shape::Cuboid {
                pose: Pose::from_axis_angle(Vector3::z(), 0.4, Vector3::new(0.4, -0.15, 0.15)),
                half_extents: Vector3::new(0.15, 0.12, 0.15),
            },
            [0.2, 0.7, 0.25],
        ),
        (
            Shape::Cylinder {
                pose: Pose::from_translation(Vector3::new(0.0, 0.45, 0.2)),
                radius: 0.12,
                half_height: 0.2,
            },
            [0.2, 0.3, 0.85],
        ),
        (
            Shape::Cuboid {
                pose: Pose::from_axis_angle(Vector3::z(), -0.3, Vector3::new(-0.1, -0.55, 0.08)),
                half_extents: Vector3::new(0.2, 0.1, 0.08),
            },
            [0.9, 0.75, 0.15],
        ),
        (
            Shape::Sphere {
                center: Point3::new(0.55, 0.45, 0.12),
                radius: 0.12,
            },
            [0.7, 0.3, 0.8],
        ),
        (
            Shape::Cylinder {
                pose: Pose::from_translation(Vector3::new(-0.55, 0.45, 0.1)),
                radius: 0.1,
                half_height: 0.1,
            },
            [0.3, 0.8, 0.8],
        ),
    ]
}

/// Floor and back wall with `n_objects` (≤ 6) distinct objects, one class each.
/// Class embeddings are orthonormal; each object carries its class embedding.
pub fn tabletop_scene(n_objects: usize, dim: usize, seed: u64) -> Result<SyntheticWorld> {
    let palette = object_palette();
    if n_objects == 0 || n_objects > palette.len() {
        return Err(Error::InvalidArgument(format!(
            "tabletop scene supports 1..={} objects",
            palette.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_emb = orthonormal_set(n_objects, dim, &mut rng)?;
    let mut world = SyntheticWorld::empty();
    world.background = room();
    for (i, (shape, albedo)) in palette.into_iter().take(n_objects).enumerate() {
        let class = ClassId(i as u32 + 1);
        world.class_embeddings.insert(class, class_emb[i].clone());
        world.objects.push(SceneObject {
            id: InstanceId(i as u32 + 1),
            class,
            shape,
            albedo,
            embedding: class_emb[i].clone(),
        });
    }
    world.validate()?;
    Ok(world)
}

/// Two boxes sharing a face: the tight-coupling case where geometry alone
/// cannot separate instances at voxel resolution.
pub fn abutting_boxes_scene(dim: usize, seed: u64) -> Result<SyntheticWorld> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = orthonormal_set(2, dim, &mut rng)?;
    let mut world = SyntheticWorld::empty();
    world.background = room();
    let half = Vector3::new(0.15, 0.15, 0.12);
    for (i, x) in [-0.15, 0.15].into_iter().enumerate() {
        let class = ClassId(i as u32 + 1);
        world.class_embeddings.insert(class, emb[i].clone());
        world.objects.push(SceneObject {
            id: InstanceId(i as u32 + 1),
            class,
            shape: Shape::Cuboid {
                pose: Pose::from_translation(Vector3::new(x, 0.0, 0.12)),
                half_extents: half,
            },
            albedo: if i == 0 { [0.8, 0.3, 0.2] } else { [0.25, 0.4, 0.8] },
            embedding: emb[i].clone(),
        });
    }
    Ok(world)
}

/// A single large slab tilted 45° about the world x axis, as an object.
pub fn tilted_plane_scene(dim: usize, seed: u64) -> Result<SyntheticWorld> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = Embedding::random(dim, &mut rng);
    let mut world = SyntheticWorld::empty();
    let class = ClassId(1);
    world.class_embeddings.insert(class, emb.clone());
    world.objects.push(SceneObject {
        id: InstanceId(1),
        class,
        shape: Shape::Cuboid {
            pose: Pose::from_axis_angle(Vector3::x(), std::f64::consts::FRAC_PI_4, Vector3::new(0.0, 0.0, 0.0)),
            half_extents: Vector3::new(0.6, 0.6, 0.02),
        },
        albedo: [0.6, 0.6, 0.6],
        embedding: emb,
    });
    Ok(world)
}

pub fn sphere_scene(center: Point3<f64>, radius: f64, dim: usize, seed: u64) -> Result<SyntheticWorld> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let emb = Embedding::random(dim, &mut rng);
    let mut world = SyntheticWorld::empty();
    world.class_embeddings.insert(ClassId(1), emb.clone());
    world.objects.push(SceneObject {
        id: InstanceId(1),
        class: ClassId(1),
        shape: Shape::Sphere { center, radius },
        albedo: [0.8, 0.8, 0.8],
        embedding: emb,
    });
    world.validate()?;
    Ok(world)
}

/// Camera poses on a circular arc around `target`, all looking at it.
pub fn orbit_trajectory(
    target: Point3<f64>,
    radius: f64,
    height: f64,
    start_angle: f64,
    arc: f64,
    frames: usize,
) -> Vec<Pose> {
    (0..frames)
        .map(|i| {
            let a = if frames > 1 {
                start_angle + arc * i as f64 / (frames - 1) as f64
            } else {
                start_angle
            };
            let eye = Point3::new(target.x + radius * a.cos(), target.y + radius * a.sin(), target.z + height);
            Pose::look_at(eye, target, Vector3::z()).expect("orbit pose is well defined")
        })
        .collect()
}

/// Poses roughly uniformly covering the sphere of directions around `target`.
pub fn fibonacci_viewpoints(target: Point3<f64>, radius: f64, count: usize) -> Vec<Pose> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let dir = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            let eye = target + dir * radius;
            let up = if z.abs() > 0.9 { Vector3::x() } else { Vector3::z() };
            Pose::look_at(eye, target, up).expect("viewpoint is well defined")
        })
        .collect()
}

/// Rotation about an axis; convenient for building shape poses.
pub fn rotation_about(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    Pose::from_axis_angle(axis, angle, Vector3::zeros()).rotation
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis_camera(z: f64) -> (Pose, Intrinsics) {
        let k = Intrinsics::new(100.0, 100.0, 32.0, 24.0, 65, 49).unwrap();
        (Pose::from_translation(Vector3::new(0.0, 0.0, -z)), k)
    }

    #[test]
    fn sphere_center_depth_is_distance_minus_radius() {
        let world = sphere_scene(Point3::origin(), 0.3, 8, 1).unwrap();
        let (pose, k) = axis_camera(2.0);
        let rf = raycast_frame(&world, &pose, &k, 0);
        let d = *rf.frame.depth.get(32, 24);
        assert!((d - 1.7).abs() < 1e-12, "depth {d}");
        assert_eq!(rf.observation.len(), 1);
    }

    #[test]
    fn empty_world_gives_empty_frame() {
        let world = SyntheticWorld::empty();
        let (pose, k) = axis_camera(2.0);
        let rf = raycast_frame(&world, &pose, &k, 0);
        assert!(rf.frame.depth.as_slice().iter().all(|&d| d == 0.0));
        assert!(rf.observation.is_empty());
    }

    #[test]
    fn fully_occluded_object_has_no_mask() {
        let mut world = sphere_scene(Point3::origin(), 0.5, 8, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        world.objects.push(SceneObject {
            id: InstanceId(2),
            class: ClassId(2),
            shape: Shape::Sphere {
                center: Point3::new(0.0, 0.0, 1.0),
                radius: 0.1,
            },
            albedo: [1.0; 3],
            embedding: Embedding::random(8, &mut rng),
        });
        let (pose, k) = axis_camera(2.0);
        let rf = raycast_frame(&world, &pose, &k, 0);
        // brute-force visibility: which instances own any pixel
        let visible: std::collections::BTreeSet<_> = rf.instance_ids.as_slice().iter().flatten().copied().collect();
        assert_eq!(visible.len(), 1);
        assert_eq!(rf.observation.len(), 1);
    }

    #[test]
    fn masks_partition_object_pixels() {
        let world = tabletop_scene(4, 16, 3).unwrap();
        let pose = orbit_trajectory(Point3::new(0.0, 0.0, 0.2), 1.8, 1.0, -1.6, 0.0, 1)[0];
        let k = Intrinsics::centered(80, 60, 70.0);
        let rf = raycast_frame(&world, &pose, &k, 0);
        rf.observation.validate().unwrap();
        for i in 0..rf.instance_ids.len() {
            let n = rf.observation.masks.iter().filter(|m| m.as_slice()[i]).count();
            assert_eq!(n, usize::from(rf.instance_ids.as_slice()[i].is_some()));
        }
        assert_eq!(rf.observation.len(), 4);
    }

    #[test]
    fn reprojection_recovers_instance() {
        let world = tabletop_scene(4, 16, 3).unwrap();
        let k = Intrinsics::centered(96, 72, 70.0);
        let mut total = 0usize;
        let mut agree = 0usize;
        for pose in orbit_trajectory(Point3::new(0.0, 0.0, 0.2), 1.8, 1.0, -2.2, 1.2, 3) {
            let rf = raycast_frame(&world, &pose, &k, 0);
            for (x, y, id) in rf.instance_ids.enumerate() {
                let Some(d) = rf.frame.depth_at(x, y) else { continue };
                let p = pose.camera_to_world(&k.backproject(x as f64, y as f64, d));
                total += 1;
                if instance_along_ray(&world, &pose.center(), &p) == *id {
                    agree += 1;
                }
            }
        }
        assert!(agree as f64 >= 0.999 * total as f64, "{agree}/{total}");
    }

    #[test]
    fn signed_distance_zero_on_hits() {
        let world = tabletop_scene(6, 8, 1).unwrap();
        let k = Intrinsics::centered(40, 30, 70.0);
        let pose = orbit_trajectory(Point3::new(0.0, 0.0, 0.2), 1.8, 1.0, -1.0, 0.0, 1)[0];
        let rf = raycast_frame(&world, &pose, &k, 0);
        for (x, y, id) in rf.instance_ids.enumerate() {
            if let Some(id) = id {
                let d = rf.frame.depth_at(x, y).unwrap();
                let p = pose.camera_to_world(&k.backproject(x as f64, y as f64, d));
                let sd = world.object(*id).unwrap().shape.signed_distance(&p);
                assert!(sd.abs() < 1e-9, "sdf {sd}");
            }
        }
    }
}
