use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GaussianField, KeyframeBuffer};
use crate::error::{Error, Result};
use crate::scene::FrameBundle;
use crate::splat::{backward, render_with_state, CameraModel, FieldGrads, LossReport, LossWeights};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lr_camera: f64,
    pub iters_per_frame: usize,
    /// Iterations run on the first frame.
    pub warmup_iters: usize,
    /// Prior keyframes sampled per iteration.
    pub kf_sample: usize,
    pub weights: LossWeights,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_color: 2.5e-3,
            lr_opacity: 5e-2,
            lr_camera: 1e-3,
            iters_per_frame: 5,
            warmup_iters: 1000,
            kf_sample: 19,
            weights: LossWeights::default(),
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr_color", self.lr_color),
            ("lr_opacity", self.lr_opacity),
            ("lr_camera", self.lr_camera),
            ("weights.rgb", self.weights.rgb),
            ("weights.ssim", self.weights.ssim),
            ("weights.depth", self.weights.depth),
            ("weights.normal", self.weights.normal),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("optim.{name} must be a non-negative number, got {v}")));
            }
        }
        if self.iters_per_frame == 0 || self.warmup_iters == 0 {
            return Err(Error::Config("optim iteration counts must be positive".into()));
        }
        Ok(())
    }
}

/// Per-iteration losses, written as `iter,rgb,ssim,depth,normal,total`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<LossReport>,
}

impl LossTrace {
    pub fn push(&mut self, r: LossReport) {
        self.rows.push(r);
    }

    pub fn write_csv_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "iter,rgb,ssim,depth,normal,total")?;
        for (i, r) in self.rows.iter().enumerate() {
            writeln!(w, "{i},{},{},{},{},{}", r.rgb, r.ssim, r.depth, r.normal, r.total)?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// One view of an optimization step: a frame, its camera model, and the
/// buffer slot to write camera updates back to.
struct View<'a> {
    frame: &'a FrameBundle,
    camera: CameraModel,
    slot: Option<usize>,
}

/// One gradient step over the current frame and up to `kf_sample` other
/// keyframes drawn without replacement. When `current_is_keyframe` the
/// current frame is the last buffer entry and its camera model is trained;
/// otherwise it is observed through the default model.
///
/// Returns the mean pre-step loss over the views.
pub fn optimize_step<R: Rng + ?Sized>(
    field: &mut GaussianField,
    buffer: &mut KeyframeBuffer,
    current: &FrameBundle,
    current_is_keyframe: bool,
    cfg: &OptimConfig,
    rng: &mut R,
) -> Result<LossReport> {
    if field.is_empty() {
        return Ok(LossReport::default());
    }
    let pool = if current_is_keyframe {
        buffer.len().saturating_sub(1)
    } else {
        buffer.len()
    };
    let mut picked: Vec<usize> = sample(rng, pool, cfg.kf_sample.min(pool)).into_vec();
    picked.sort_unstable();

    let mut views = Vec::with_capacity(picked.len() + 1);
    if current_is_keyframe {
        let slot = buffer.len() - 1;
        views.push(View {
            frame: &buffer.keyframes[slot].frame,
            camera: buffer.keyframes[slot].camera,
            slot: Some(slot),
        });
    } else {
        views.push(View {
            frame: current,
            camera: CameraModel::default(),
            slot: None,
        });
    }
    for i in picked {
        views.push(View {
            frame: &buffer.keyframes[i].frame,
            camera: buffer.keyframes[i].camera,
            slot: Some(i),
        });
    }

    let field_ref = &*field;
    let eval = |v: &View| {
        let state = render_with_state(field_ref, &v.frame.pose, &v.frame.intrinsics);
        backward(&state, field_ref, &v.camera, v.frame, &cfg.weights)
    };
    let results: Vec<Result<_>> = if views.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = views.iter().map(|v| s.spawn(|| eval(v))).collect();
            handles.into_iter().map(|h| h.join().expect("view worker panicked")).collect()
        })
    } else {
        views.iter().map(eval).collect()
    };

    let scale = 1.0 / views.len() as f64;
    let mut total = LossReport::default();
    let mut grads = FieldGrads::zeros(field.len());
    let mut camera_updates = Vec::new();
    for (v, r) in views.iter().zip(results) {
        let g = r?;
        if !g.report.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at frame {}", current.timestamp)));
        }
        total.add_scaled(&g.report, scale);
        grads.add(&g.field);
        if let Some(slot) = v.slot {
            camera_updates.push((slot, g.camera));
        }
    }

    for (p, (gc, go)) in field.gaussians.iter_mut().zip(grads.color.iter().zip(&grads.opacity)) {
        for ch in 0..3 {
            p.c[ch] = (p.c[ch] - cfg.lr_color * scale * gc[ch]).clamp(0.0, 1.0);
        }
        p.o = (p.o - cfg.lr_opacity * scale * go).clamp(0.0, 1.0);
        if !p.o.is_finite() || p.c.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical(format!("non-finite parameters at frame {}", current.timestamp)));
        }
    }
    for (slot, g) in camera_updates {
        let cam = &mut buffer.keyframes[slot].camera;
        let mut a = cam.as_array();
        for i in 0..4 {
            a[i] -= cfg.lr_camera * scale * g[i];
        }
        *cam = CameraModel::from_array(a).clamped();
    }
    Ok(total)
}

/// Runs the frame's iterations (`warmup_iters` when `warmup`) and records
/// each step in `trace`. Returns the last step's loss.
#[allow(clippy::too_many_arguments)]
pub fn optimize_frame<R: Rng + ?Sized>(
    field: &mut GaussianField,
    buffer: &mut KeyframeBuffer,
    current: &FrameBundle,
    current_is_keyframe: bool,
    warmup: bool,
    cfg: &OptimConfig,
    rng: &mut R,
    trace: &mut LossTrace,
) -> Result<LossReport> {
    let iters = if warmup { cfg.warmup_iters } else { cfg.iters_per_frame };
    let mut last = LossReport::default();
    for _ in 0..iters {
        last = optimize_step(field, buffer, current, current_is_keyframe, cfg, rng)?;
        trace.push(last);
    }
    Ok(last)
}
