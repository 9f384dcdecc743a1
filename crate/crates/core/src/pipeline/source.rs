use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::config::{PipelineConfig, SceneKind, SourceKind};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::ids::{ClassId, InstanceId};
use crate::raster::Image;
use crate::scene::synthetic::{
    abutting_boxes_scene, fibonacci_viewpoints, orbit_trajectory, sphere_scene, tabletop_scene, tilted_plane_scene,
};
use crate::scene::{
    load_dataset, perturb_depth, perturb_segmentation, postprocess_observation, raycast_frame, FrameBundle, NoiseConfig,
    ReplayOptions, ReplayStream, ReplayWriter, SegObservation, SyntheticWorld,
};

/// One frame handed to the mapper, with whatever ground truth the source has.
#[derive(Clone, Debug)]
pub struct SourceFrame {
    pub frame: FrameBundle,
    pub observation: SegObservation,
    /// Noise-free depth, when the source knows it.
    pub clean_depth: Option<crate::raster::DepthImage>,
    pub gt_classes: Option<Image<Option<ClassId>>>,
    pub gt_instances: Option<Image<Option<InstanceId>>>,
}

/// A synthetic world with its camera path.
#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub world: SyntheticWorld,
    pub poses: Vec<Pose>,
    pub intrinsics: Intrinsics,
    pub noise: NoiseConfig,
    pub erosion_radius: usize,
}

impl SyntheticSequence {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let s = &cfg.source;
        let dim = cfg.embedding_dim;
        let n = s.frames;
        let (world, poses) = match s.scene {
            SceneKind::Tabletop => (tabletop_scene(s.objects, dim, cfg.seed)?, table_orbit(n)),
            SceneKind::AbuttingBoxes => (abutting_boxes_scene(dim, cfg.seed)?, table_orbit(n)),
            SceneKind::TiltedPlane => (tilted_plane_scene(dim, cfg.seed)?, overhead_circle(n)),
            SceneKind::Sphere => (
                sphere_scene(Point3::origin(), 0.5, dim, cfg.seed)?,
                fibonacci_viewpoints(Point3::origin(), 1.6, n),
            ),
        };
        let mut noise = cfg.noise;
        noise.rng_seed = noise.rng_seed.wrapping_add(cfg.seed);
        Ok(Self {
            world,
            poses,
            intrinsics: Intrinsics::centered(s.width, s.height, s.fov_deg),
            noise,
            erosion_radius: cfg.erosion_radius,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Raycast, then depth noise, segmentation noise and mask post-processing.
    pub fn frame(&self, t: usize) -> SourceFrame {
        let mut f = self.raw_frame(t);
        f.observation = postprocess_observation(&f.observation, self.erosion_radius);
        f
    }

    /// Same as [`SyntheticSequence::frame`] without mask post-processing.
    pub fn raw_frame(&self, t: usize) -> SourceFrame {
        let rc = raycast_frame(&self.world, &self.poses[t], &self.intrinsics, t as u64);
        let noise = self.noise.for_frame(t as u64);
        let mut frame = rc.frame;
        let clean = frame.depth.clone();
        if noise.depth_sigma > 0.0 {
            frame.depth = perturb_depth(&frame.depth, noise.depth_sigma, noise.rng_seed);
        }
        let observation = perturb_segmentation(&rc.observation, &noise);
        SourceFrame {
            frame,
            observation,
            clean_depth: Some(clean),
            gt_classes: Some(rc.class_ids),
            gt_instances: Some(rc.instance_ids),
        }
    }

    pub fn class_embeddings(&self) -> &BTreeMap<ClassId, Embedding> {
        &self.world.class_embeddings
    }
}

/// Front half-orbit over the table, facing the back wall.
pub fn table_orbit(frames: usize) -> Vec<Pose> {
    use std::f64::consts::PI;
    orbit_trajectory(Point3::new(0.0, 0.0, 0.15), 1.6, 1.0, -0.8 * PI, 0.6 * PI, frames)
}

/// Downward-looking cameras circling above the origin.
pub fn overhead_circle(frames: usize) -> Vec<Pose> {
    (0..frames)
        .map(|i| {
            let a = 2.0 * std::f64::consts::PI * i as f64 / frames.max(1) as f64;
            let eye = Point3::new(0.15 * a.cos(), 0.15 * a.sin(), 1.4);
            Pose::look_at(eye, Point3::origin(), Vector3::y()).expect("overhead pose is well defined")
        })
        .collect()
}

pub enum FrameSource {
    Synthetic { seq: Box<SyntheticSequence>, next: usize },
    Replay { stream: ReplayStream, left: usize, erosion_radius: usize },
}

impl FrameSource {
    pub fn open(cfg: &PipelineConfig) -> Result<Self> {
        match cfg.source.kind {
            SourceKind::Synthetic => Ok(Self::Synthetic {
                seq: Box::new(SyntheticSequence::from_config(cfg)?),
                next: 0,
            }),
            SourceKind::Replay => {
                let manifest = cfg.source.manifest.as_deref().expect("validated");
                let stream = load_dataset(
                    manifest,
                    ReplayOptions {
                        embedding_dim: Some(cfg.embedding_dim),
                    },
                )?;
                Ok(Self::Replay {
                    stream,
                    left: cfg.source.frames,
                    erosion_radius: cfg.erosion_radius,
                })
            }
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        match self {
            Self::Synthetic { seq, .. } => seq.intrinsics,
            Self::Replay { stream, .. } => *stream.intrinsics(),
        }
    }
}

impl Iterator for FrameSource {
    type Item = Result<SourceFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        match self {
            Self::Synthetic { seq, next } => {
                if *next >= seq.len() {
                    return None;
                }
                *next += 1;
                Some(Ok(seq.frame(*next - 1)))
            }
            Self::Replay {
                stream,
                left,
                erosion_radius,
            } => {
                if *left == 0 {
                    return None;
                }
                *left -= 1;
                let r = stream.next()?;
                Some(r.map(|f| SourceFrame {
                    observation: postprocess_observation(&f.observation, *erosion_radius),
                    frame: f.frame,
                    clean_depth: None,
                    gt_classes: f.gt_classes,
                    gt_instances: None,
                }))
            }
        }
    }
}

/// Writes the configured synthetic sequence as a replay dataset, with
/// ground-truth class images and the class embedding table. Returns the
/// manifest path.
pub fn write_synthetic_dataset(cfg: &PipelineConfig, root: &Path) -> Result<std::path::PathBuf> {
    if cfg.source.kind != SourceKind::Synthetic {
        return Err(Error::Config("synth needs a synthetic source".into()));
    }
    let seq = SyntheticSequence::from_config(cfg)?;
    let mut w = ReplayWriter::create(root, &seq.intrinsics)?;
    for t in 0..seq.len() {
        let f = seq.raw_frame(t);
        w.write_frame(&f.frame, &f.observation, f.gt_classes.as_ref())?;
    }
    w.write_classes(seq.class_embeddings())?;
    w.finish()
}
