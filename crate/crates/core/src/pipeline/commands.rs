use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, SourceKind};
use super::source::SyntheticSequence;
use super::{write_json, CameraLog, CAMERAS_FILE, CODEBOOK_FILE, CONFIG_FILE, GAUSSIANS_FILE, GRID_FILE};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::eval::{
    format_table, mesh_metrics, render_metrics, zero_shot_segmentation, MeshMetrics, RenderMetrics, SemanticEvalReport,
    VoxelVotes,
};
use crate::fusion::InstanceCodebook;
use crate::gaussians::GaussianField;
use crate::geometry::Pose;
use crate::ids::ClassId;
use crate::mesh::TriangleMesh;
use crate::raster::Image;
use crate::scene::replay::{read_classes, CLASSES_FILE};
use crate::scene::{load_dataset, FrameBundle, ReplayOptions};
use crate::splat::{render, RenderOutput};
use crate::voxel::{extract_mesh, snapshot, VoxelGrid};

/// Everything `build` leaves on disk.
pub struct Artifacts {
    pub config: PipelineConfig,
    pub grid: VoxelGrid,
    pub codebook: InstanceCodebook,
    pub field: GaussianField,
    pub cameras: CameraLog,
}

fn require(dir: &Path, name: &str) -> Result<std::path::PathBuf> {
    let p = dir.join(name);
    if !p.exists() {
        return Err(Error::Data(format!(
            "missing artifact {}; run `build` with this output directory first",
            p.display()
        )));
    }
    Ok(p)
}

impl Artifacts {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = PipelineConfig::load(&require(dir, CONFIG_FILE)?)?;
        let grid = snapshot::load(&require(dir, GRID_FILE)?, Some(config.truncation))?;
        let codebook = InstanceCodebook::load(&require(dir, CODEBOOK_FILE)?)?;
        let field = GaussianField::read_ply(&require(dir, GAUSSIANS_FILE)?)?;
        let cam_path = require(dir, CAMERAS_FILE)?;
        let text = fs::read_to_string(&cam_path).map_err(|e| Error::io(&cam_path, e))?;
        let cameras: CameraLog =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", cam_path.display())))?;
        Ok(Self {
            config,
            grid,
            codebook,
            field,
            cameras,
        })
    }
}

/// Renders the field through the identity camera model at `poses`, or at
/// the build's own cameras when `None`. Images go to `<dir>/renders`.
pub fn run_render(dir: &Path, poses: Option<&[Pose]>, limit: Option<usize>) -> Result<Vec<RenderOutput>> {
    let art = Artifacts::load(dir)?;
    let k = art.cameras.intrinsics;
    let own;
    let poses = match poses {
        Some(p) => p,
        None => {
            own = art.cameras.poses()?;
            &own[..]
        }
    };
    let n = limit.unwrap_or(poses.len()).min(poses.len());
    let out_dir = dir.join("renders");
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut outputs = Vec::with_capacity(n);
    for (i, pose) in poses[..n].iter().enumerate() {
        let r = render(&art.field, pose, &k);
        r.write_pngs(&out_dir, &format!("view_{i:04}"), &k)?;
        outputs.push(r);
    }
    Ok(outputs)
}

/// Reference frames with per-pixel classes and the class text embeddings.
pub struct GroundTruth {
    pub frames: Vec<(FrameBundle, Image<Option<ClassId>>)>,
    pub classes: BTreeMap<ClassId, Embedding>,
}

pub fn load_class_embeddings(manifest: &Path) -> Result<BTreeMap<ClassId, Embedding>> {
    let path = manifest.parent().unwrap_or(Path::new(".")).join(CLASSES_FILE);
    if !path.exists() {
        return Err(Error::Data(format!("no ground truth: {} is missing", path.display())));
    }
    read_classes(&path)
}

impl GroundTruth {
    /// Synthetic sources regenerate noise-free frames; replay sources need
    /// per-frame `gt_classes` and a class table.
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        match cfg.source.kind {
            SourceKind::Synthetic => {
                let seq = SyntheticSequence::from_config(cfg)?;
                let frames = (0..seq.len())
                    .map(|t| {
                        let mut f = seq.frame(t);
                        f.frame.depth = f.clean_depth.take().expect("synthetic frames carry clean depth");
                        (f.frame, f.gt_classes.take().expect("synthetic frames carry classes"))
                    })
                    .collect();
                Ok(Self {
                    frames,
                    classes: seq.world.class_embeddings.clone(),
                })
            }
            SourceKind::Replay => {
                let manifest = cfg.source.manifest.as_deref().expect("validated");
                let classes = load_class_embeddings(manifest)?;
                let mut frames = Vec::new();
                for f in load_dataset(manifest, ReplayOptions::default())?.take(cfg.source.frames) {
                    let f = f?;
                    let t = f.frame.timestamp;
                    let g = f
                        .gt_classes
                        .ok_or_else(|| Error::Data(format!("no ground truth: replay frame {t} has no gt_classes")))?;
                    frames.push((f.frame, g));
                }
                Ok(Self { frames, classes })
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene: String,
    pub render: RenderMetrics,
    pub per_frame: Vec<RenderMetrics>,
    pub mesh: Option<MeshMetrics>,
    pub semantic: Option<SemanticEvalReport>,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Aligned tables with one column per scene and an average column.
    pub fn tables(&self) -> String {
        let scenes = vec![self.scene.clone()];
        let mut out = format_table(
            "Rendering",
            &scenes,
            &[("psnr_db".into(), vec![self.render.psnr]), ("ssim".into(), vec![self.render.ssim])],
        );
        if let Some(m) = &self.mesh {
            out.push('\n');
            out += &format_table(
                "Mesh (acc/comp in cm)",
                &scenes,
                &[
                    ("acc_cm".into(), vec![m.acc_cm]),
                    ("comp_cm".into(), vec![m.comp_cm]),
                    ("comp_ratio".into(), vec![m.comp_ratio]),
                    ("f_score".into(), vec![m.f_score]),
                ],
            );
        }
        if let Some(s) = &self.semantic {
            out.push('\n');
            out += &format_table(
                "Semantic",
                &scenes,
                &[
                    ("miou".into(), vec![s.miou]),
                    ("fiou".into(), vec![s.fiou]),
                    ("macc".into(), vec![s.macc]),
                    ("facc".into(), vec![s.facc]),
                ],
            );
        }
        for n in &self.notes {
            out += &format!("note: {n}\n");
        }
        out
    }
}

fn fuse_mesh(frames: &[FrameBundle], resolution: f64) -> Result<TriangleMesh> {
    let mut grid = VoxelGrid::with_resolution(resolution)?;
    for f in frames {
        grid.integrate_tsdf(f);
    }
    Ok(extract_mesh(&grid))
}

/// Rendering, mesh and semantic metrics for the build in `dir`; writes
/// `eval.json` and `eval.txt` there.
pub fn run_eval(dir: &Path) -> Result<EvalReport> {
    let art = Artifacts::load(dir)?;
    let gt = GroundTruth::from_config(&art.config)?;
    if gt.frames.is_empty() {
        return Err(Error::Data("no ground truth frames to evaluate against".into()));
    }
    let ecfg = art.config.eval;
    let mut notes = Vec::new();

    let mut per_frame = Vec::with_capacity(gt.frames.len());
    let mut rendered_frames = Vec::with_capacity(gt.frames.len());
    for (f, _) in &gt.frames {
        let r = render(&art.field, &f.pose, &f.intrinsics);
        per_frame.push(render_metrics(&r.color, &f.color)?);
        rendered_frames.push(FrameBundle {
            color: r.color.clone(),
            depth: r.normalized_depth(ecfg.min_alpha),
            ..f.clone()
        });
    }
    let n = per_frame.len() as f64;
    let render = RenderMetrics {
        psnr: per_frame.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: per_frame.iter().map(|m| m.ssim).sum::<f64>() / n,
    };

    let pred_mesh = fuse_mesh(&rendered_frames, ecfg.mesh_resolution)?;
    let gt_frames: Vec<FrameBundle> = gt.frames.iter().map(|(f, _)| f.clone()).collect();
    let gt_mesh = fuse_mesh(&gt_frames, ecfg.mesh_resolution)?;
    let mesh = if pred_mesh.is_empty() || gt_mesh.is_empty() {
        notes.push("mesh metrics skipped: reconstructed or reference mesh is empty".into());
        None
    } else {
        Some(mesh_metrics(&pred_mesh, &gt_mesh, &ecfg.mesh)?)
    };

    let mut votes = VoxelVotes::new();
    for (f, classes) in &gt.frames {
        votes.add_frame(&art.grid, f, classes)?;
    }
    let labels = votes.labels();
    let semantic = if labels.is_empty() {
        notes.push("semantic metrics skipped: no labeled ground-truth voxels".into());
        None
    } else if art.codebook.is_empty() {
        notes.push("semantic metrics skipped: the map has no instances".into());
        None
    } else {
        Some(zero_shot_segmentation(&art.grid, &art.codebook, &gt.classes, &labels)?)
    };

    let scene = match art.config.source.kind {
        SourceKind::Synthetic => format!("{:?}", art.config.source.scene).to_lowercase(),
        SourceKind::Replay => "replay".into(),
    };
    let report = EvalReport {
        scene,
        render,
        per_frame,
        mesh,
        semantic,
        notes,
    };
    write_json(&dir.join("eval.json"), &report)?;
    let txt = dir.join("eval.txt");
    fs::write(&txt, report.tables()).map_err(|e| Error::io(&txt, e))?;
    Ok(report)
}

/// Marching-cubes mesh of the stored grid, written as PLY.
pub fn run_export_mesh(dir: &Path, out: &Path) -> Result<TriangleMesh> {
    let cfg = PipelineConfig::load(&require(dir, CONFIG_FILE)?)?;
    let grid = snapshot::load(&require(dir, GRID_FILE)?, Some(cfg.truncation))?;
    let mesh = extract_mesh(&grid);
    mesh.write_ply(out)?;
    Ok(mesh)
}

/// Validated copy of the Gaussian field; returns the primitive count.
pub fn run_export_splat(dir: &Path, out: &Path) -> Result<usize> {
    let field = GaussianField::read_ply(&require(dir, GAUSSIANS_FILE)?)?;
    for (i, g) in field.gaussians.iter().enumerate() {
        g.validate().map_err(|e| Error::Data(format!("Gaussian {i}: {e}")))?;
    }
    field.write_ply(out)?;
    Ok(field.len())
}
