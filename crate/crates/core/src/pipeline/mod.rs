//! Per-frame mapping loop, run configuration and on-disk artifacts.
//!
//! Each frame goes through TSDF integration, association, voxel and
//! codebook updates, Gaussian seeding from newly labeled voxels, keyframe
//! selection and a few optimization steps.

mod commands;
mod config;
mod source;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{associate, update_codebook, update_voxels, AssociationRecord, FusionConfig, InstanceCodebook};
use crate::gaussians::{
    optimize_frame, seed_gaussians, select_keyframe, GaussianField, KeyframeBuffer, KeyframePolicy, LossTrace,
    OptimConfig,
};
use crate::geometry::{Intrinsics, Pose};
use crate::scene::{FrameBundle, SegObservation};
use crate::splat::LossReport;
use crate::voxel::{snapshot, VoxelGrid, VoxelKey};

pub use commands::{
    load_class_embeddings, run_eval, run_export_mesh, run_export_splat, run_render, Artifacts, EvalReport, GroundTruth,
};
pub use config::{EvalConfig, PipelineConfig, SceneKind, SourceConfig, SourceKind};
pub use source::{overhead_circle, table_orbit, write_synthetic_dataset, FrameSource, SourceFrame, SyntheticSequence};

/// Stage names in execution order.
pub const STAGES: [&str; 8] = [
    "integrate_tsdf",
    "associate",
    "update_voxels",
    "update_codebook",
    "new_voxel_set",
    "seed_gaussians",
    "select_keyframe",
    "optimize",
];

pub const CONFIG_FILE: &str = "config.toml";
pub const GRID_FILE: &str = "grid.ovxg";
pub const CODEBOOK_FILE: &str = "codebook.ovcb";
pub const GAUSSIANS_FILE: &str = "gaussians.ply";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";
pub const ASSOCIATION_LOG_FILE: &str = "associations.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CAMERAS_FILE: &str = "cameras.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub t: u64,
    pub stages: Vec<StageTiming>,
    pub masks: usize,
    pub skipped_masks: usize,
    pub new_instances: usize,
    pub new_voxels: usize,
    pub keyframe: bool,
    pub loss: Option<LossReport>,
}

impl FrameReport {
    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.ms).sum()
    }

    pub fn stage_ms(&self, stage: &str) -> f64 {
        self.stages.iter().filter(|s| s.stage == stage).map(|s| s.ms).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapCounts {
    pub frames: usize,
    pub voxels: usize,
    pub labeled_voxels: usize,
    pub blocks: usize,
    pub instances: usize,
    pub gaussians: usize,
    pub keyframes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames: Vec<FrameReport>,
    /// Summed per stage, in execution order.
    pub stage_totals_ms: Vec<StageTiming>,
    pub counts: MapCounts,
    pub loss_trace: PathBuf,
    pub final_loss: Option<LossReport>,
}

/// Camera of one processed frame, kept so renders can revisit it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub t: u64,
    pub pose: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraLog {
    pub intrinsics: Intrinsics,
    pub frames: Vec<CameraRecord>,
}

impl CameraLog {
    pub fn poses(&self) -> Result<Vec<Pose>> {
        self.frames.iter().map(|c| Pose::from_row_major(&c.pose)).collect()
    }
}

/// The live map and everything needed to advance it by one frame.
pub struct Mapper {
    pub grid: VoxelGrid,
    pub codebook: InstanceCodebook,
    pub field: GaussianField,
    pub keyframes: KeyframeBuffer,
    pub trace: LossTrace,
    pub associations: Vec<AssociationRecord>,
    pub fusion: FusionConfig,
    pub policy: KeyframePolicy,
    pub optim: OptimConfig,
    /// Run the optimization stage.
    pub optimize: bool,
    rng: ChaCha8Rng,
    frames: usize,
}

impl Mapper {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            grid: VoxelGrid::new(cfg.resolution, cfg.truncation)?,
            codebook: InstanceCodebook::new(),
            field: GaussianField::new(),
            keyframes: KeyframeBuffer::new(),
            trace: LossTrace::default(),
            associations: Vec::new(),
            fusion: cfg.fusion,
            policy: cfg.keyframe,
            optim: cfg.optim,
            optimize: cfg.optimize,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            frames: 0,
        })
    }

    pub fn frames_processed(&self) -> usize {
        self.frames
    }

    pub fn counts(&self) -> MapCounts {
        MapCounts {
            frames: self.frames,
            voxels: self.grid.observed_voxels().count(),
            labeled_voxels: self.grid.labeled_voxel_count(),
            blocks: self.grid.block_count(),
            instances: self.codebook.len(),
            gaussians: self.field.len(),
            keyframes: self.keyframes.len(),
        }
    }

    /// Runs every stage on one frame. Errors name the frame and stage.
    pub fn process(&mut self, frame: &FrameBundle, obs: &SegObservation) -> Result<FrameReport> {
        let t = frame.timestamp;
        frame.validate().map_err(|e| e.at_stage(t, "load"))?;
        obs.validate().map_err(|e| e.at_stage(t, "load"))?;
        let mut stages = Vec::with_capacity(STAGES.len());
        let mut clock = Instant::now();
        let mut lap = |stage: &str, stages: &mut Vec<StageTiming>| {
            let now = Instant::now();
            stages.push(StageTiming {
                stage: stage.to_string(),
                ms: (now - clock).as_secs_f64() * 1e3,
            });
            clock = now;
        };

        self.grid.integrate_tsdf(frame);
        lap("integrate_tsdf", &mut stages);

        let assoc = associate(obs, frame, &self.grid, &mut self.codebook, &self.fusion).map_err(|e| e.at_stage(t, "associate"))?;
        lap("associate", &mut stages);

        update_voxels(&assoc.results, &mut self.grid, self.fusion.update_rule);
        lap("update_voxels", &mut stages);

        update_codebook(&assoc.results, obs, &mut self.codebook).map_err(|e| e.at_stage(t, "update_codebook"))?;
        lap("update_codebook", &mut stages);

        let mut touched: Vec<VoxelKey> = assoc.results.iter().flat_map(|r| r.voxels.iter().copied()).collect();
        touched.sort_unstable();
        touched.dedup();
        let new_voxels = self.grid.new_voxel_set(&touched);
        lap("new_voxel_set", &mut stages);

        self.field.extend(seed_gaussians(&new_voxels, &self.grid));
        lap("seed_gaussians", &mut stages);

        let keyframe = select_keyframe(frame, &mut self.grid, &self.policy, &mut self.keyframes);
        lap("select_keyframe", &mut stages);

        let loss = if self.optimize {
            let warmup = self.frames == 0;
            let r = optimize_frame(
                &mut self.field,
                &mut self.keyframes,
                frame,
                keyframe,
                warmup,
                &self.optim,
                &mut self.rng,
                &mut self.trace,
            )
            .map_err(|e| e.at_stage(t, "optimize"))?;
            Some(r)
        } else {
            None
        };
        lap("optimize", &mut stages);

        self.associations.extend(assoc.records(t));
        self.frames += 1;
        Ok(FrameReport {
            t,
            stages,
            masks: obs.len(),
            skipped_masks: assoc.skipped.len(),
            new_instances: assoc.results.iter().filter(|r| r.is_new).count(),
            new_voxels: new_voxels.len(),
            keyframe,
            loss,
        })
    }

    pub fn write_association_log(&self, w: &mut impl Write) -> std::io::Result<()> {
        for rec in &self.associations {
            serde_json::to_writer(&mut *w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Writes grid, codebook, Gaussians, loss trace and association log.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        snapshot::save(&self.grid, &dir.join(GRID_FILE))?;
        self.codebook.save(&dir.join(CODEBOOK_FILE))?;
        self.field.write_ply(&dir.join(GAUSSIANS_FILE))?;
        self.trace.write_csv(&dir.join(LOSS_TRACE_FILE))?;
        let path = dir.join(ASSOCIATION_LOG_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        self.write_association_log(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Builds a map from the configured source into `cfg.out_dir`.
pub fn run_build(cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;

    let source = FrameSource::open(cfg)?;
    let mut cameras = CameraLog {
        intrinsics: source.intrinsics(),
        frames: Vec::new(),
    };
    let mut mapper = Mapper::new(cfg)?;
    let mut frames = Vec::new();
    for (index, item) in source.enumerate() {
        let sf = item.map_err(|e| e.at_stage(index as u64, "load"))?;
        let report = mapper.process(&sf.frame, &sf.observation)?;
        cameras.frames.push(CameraRecord {
            t: sf.frame.timestamp,
            pose: sf.frame.pose.to_row_major().to_vec(),
        });
        frames.push(report);
    }

    mapper.save(out)?;
    write_json(&out.join(CAMERAS_FILE), &cameras)?;
    let stage_totals_ms = STAGES
        .iter()
        .map(|s| StageTiming {
            stage: s.to_string(),
            ms: frames.iter().map(|f: &FrameReport| f.stage_ms(s)).sum(),
        })
        .collect();
    let report = RunReport {
        final_loss: frames.iter().rev().find_map(|f| f.loss),
        frames,
        stage_totals_ms,
        counts: mapper.counts(),
        loss_trace: out.join(LOSS_TRACE_FILE),
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(dir: &Path, frames: usize) -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.out_dir = dir.to_path_buf();
        cfg.source.frames = frames;
        cfg.source.objects = 2;
        cfg.source.width = 48;
        cfg.source.height = 48;
        cfg.optim.warmup_iters = 20;
        cfg.optim.iters_per_frame = 2;
        cfg
    }

    #[test]
    fn zero_frames_writes_empty_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_build(&small_config(dir.path(), 0)).unwrap();
        assert_eq!(report.counts, MapCounts::default());
        for f in [GRID_FILE, CODEBOOK_FILE, GAUSSIANS_FILE, LOSS_TRACE_FILE, ASSOCIATION_LOG_FILE, REPORT_FILE, CONFIG_FILE] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(fs::read(dir.path().join(ASSOCIATION_LOG_FILE)).unwrap().is_empty());
    }

    #[test]
    fn stages_run_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_build(&small_config(dir.path(), 3)).unwrap();
        assert_eq!(report.frames.len(), 3);
        for f in &report.frames {
            let names: Vec<&str> = f.stages.iter().map(|s| s.stage.as_str()).collect();
            assert_eq!(names, STAGES);
            assert!(f.stages.iter().all(|s| s.ms >= 0.0));
        }
        assert!(report.frames[0].keyframe);
        let rows = fs::read_to_string(dir.path().join(LOSS_TRACE_FILE)).unwrap().lines().count();
        assert_eq!(rows, 1 + 20 + 2 * 2);
    }
}
