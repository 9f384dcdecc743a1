//! CPU splatting of Gaussian primitives with analytic gradients for color,
//! opacity and the camera observation model.
//!
//! Primitives are sorted once per image by camera depth (ties by index) and
//! binned into 16×16 tiles; every pixel composites its tile list front to
//! back at integer pixel coordinates.

mod camera;
mod loss;
mod ssim;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use nalgebra::{Matrix2, Matrix2x3, Point3, Vector2};

use crate::error::{Error, Result};
use crate::gaussians::{GaussianField, GaussianPrimitive};
use crate::geometry::{Intrinsics, Pose};
use crate::raster::{ColorImage, DepthImage, Image};
use crate::scene::replay::{write_color_png, write_depth_png};

pub use camera::{apply_camera_model, camera_model_backward, translate, CameraModel};
pub use loss::{loss_all, loss_and_grad, loss_signature, normal_from_depth, LossGrads, LossReport, LossWeights, NormalImage};
pub use ssim::{ssim, ssim_with_grad};

pub const NEAR_PLANE: f64 = 0.01;
pub const COV2D_BLUR: f64 = 0.3;
pub const ALPHA_MAX: f64 = 0.999;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const T_MIN: f64 = 1e-4;
const TILE: usize = 16;

/// Opacity-weighted 3D density `o·exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
pub fn gaussian_weight_3d(g: &GaussianPrimitive, x: &Point3<f64>) -> Result<f64> {
    let inv = g
        .covariance()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("singular Gaussian covariance".into()))?;
    let d = x - g.mu;
    Ok(g.o * (-0.5 * d.dot(&(inv * d))).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projected2D {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    /// Camera-frame z.
    pub depth: f64,
    pub index: usize,
    /// Largest standard deviation in pixels.
    pub sigma_max: f64,
}

/// Pinhole projection with the local affine approximation of the
/// perspective map. `None` when culled.
pub fn project_gaussian(g: &GaussianPrimitive, index: usize, pose: &Pose, k: &Intrinsics) -> Option<Projected2D> {
    let p = pose.world_to_camera(&g.mu);
    if p.z <= NEAR_PLANE {
        return None;
    }
    let w = pose.rotation.transpose();
    let (x, y, z) = (p.x, p.y, p.z);
    let j = Matrix2x3::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z));
    let t = j * w;
    let cov = t * g.covariance() * t.transpose() + Matrix2::identity() * COV2D_BLUR;
    let conic = cov.try_inverse()?;
    let mean = Vector2::new(k.fx * x / z + k.cx, k.fy * y / z + k.cy);
    let tr = cov.trace();
    let det = cov.determinant();
    let lambda_max = 0.5 * tr + (0.25 * tr * tr - det).max(0.0).sqrt();
    let sigma_max = lambda_max.sqrt();
    let pad = 3.0 * sigma_max;
    if mean.x < -pad || mean.y < -pad || mean.x > (k.width - 1) as f64 + pad || mean.y > (k.height - 1) as f64 + pad {
        return None;
    }
    Some(Projected2D {
        mean,
        cov,
        conic,
        depth: z,
        index,
        sigma_max,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: ColorImage,
    /// Alpha-blended camera depth (not normalized by alpha).
    pub depth: DepthImage,
    pub alpha: DepthImage,
}

impl RenderOutput {
    pub fn zeros(w: usize, h: usize) -> Self {
        Self {
            color: ColorImage::new(w, h),
            depth: DepthImage::new(w, h),
            alpha: DepthImage::new(w, h),
        }
    }

    /// Depth divided by alpha where alpha exceeds `min_alpha`, else 0.
    pub fn normalized_depth(&self, min_alpha: f64) -> DepthImage {
        Image::from_fn(self.depth.width(), self.depth.height(), |x, y| {
            let a = *self.alpha.get(x, y);
            if a > min_alpha {
                self.depth.get(x, y) / a
            } else {
                0.0
            }
        })
    }

    /// Color, 16-bit depth in millimeters and normals mapped to 8 bits.
    pub fn write_pngs(&self, dir: &Path, stem: &str, k: &Intrinsics) -> Result<()> {
        write_color_png(&dir.join(format!("{stem}_color.png")), &self.color)?;
        let depth = self.normalized_depth(0.5);
        write_depth_png(&dir.join(format!("{stem}_depth.png")), &depth)?;
        let normals = normal_from_depth(&depth, k).map(|n| n.map(|v| 0.5 * (v + 1.0)));
        write_color_png(&dir.join(format!("{stem}_normal.png")), &normals)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Contribution {
    index: u32,
    alpha: f64,
    /// Projected density before opacity.
    density: f64,
    transmittance: f64,
    clipped: bool,
}

/// Forward pass with the per-pixel blend lists kept for backward.
#[derive(Clone, Debug)]
pub struct RenderState {
    pub output: RenderOutput,
    offsets: Vec<usize>,
    contributions: Vec<Contribution>,
    terminated: Vec<bool>,
    depths: Vec<f64>,
}

impl RenderState {
    pub fn num_gaussians(&self) -> usize {
        self.depths.len()
    }

    /// Hash of every discrete blend decision (skips, clips, early stops).
    pub fn event_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.offsets.hash(&mut h);
        self.terminated.hash(&mut h);
        for c in &self.contributions {
            c.index.hash(&mut h);
            c.clipped.hash(&mut h);
        }
        h.finish()
    }
}

pub fn render(field: &GaussianField, pose: &Pose, k: &Intrinsics) -> RenderOutput {
    render_impl(field, pose, k, false).output
}

pub fn render_with_state(field: &GaussianField, pose: &Pose, k: &Intrinsics) -> RenderState {
    render_impl(field, pose, k, true)
}

fn render_impl(field: &GaussianField, pose: &Pose, k: &Intrinsics, keep: bool) -> RenderState {
    let (w, h) = (k.width, k.height);
    let mut state = RenderState {
        output: RenderOutput::zeros(w, h),
        offsets: Vec::new(),
        contributions: Vec::new(),
        terminated: Vec::new(),
        depths: vec![0.0; field.len()],
    };
    let mut projected: Vec<(Projected2D, [i64; 4])> = Vec::new();
    for (i, g) in field.gaussians.iter().enumerate() {
        if g.o < ALPHA_MIN {
            continue;
        }
        let Some(p) = project_gaussian(g, i, pose, k) else { continue };
        state.depths[i] = p.depth;
        // exact support of alpha >= 1/255
        let r = (2.0 * (g.o / ALPHA_MIN).ln()).sqrt() * p.sigma_max;
        let bbox = [
            (p.mean.x - r).ceil().max(0.0) as i64,
            (p.mean.y - r).ceil().max(0.0) as i64,
            (p.mean.x + r).floor().min((w - 1) as f64) as i64,
            (p.mean.y + r).floor().min((h - 1) as f64) as i64,
        ];
        if bbox[0] > bbox[2] || bbox[1] > bbox[3] {
            continue;
        }
        projected.push((p, bbox));
    }
    projected.sort_by(|a, b| a.0.depth.total_cmp(&b.0.depth).then(a.0.index.cmp(&b.0.index)));

    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, (_, b)) in projected.iter().enumerate() {
        for ty in (b[1] as usize / TILE)..=(b[3] as usize / TILE) {
            for tx in (b[0] as usize / TILE)..=(b[2] as usize / TILE) {
                tiles[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }

    if keep {
        state.offsets.reserve(w * h + 1);
        state.offsets.push(0);
        state.terminated.reserve(w * h);
    }
    for y in 0..h {
        for x in 0..w {
            let list = &tiles[(y / TILE) * tiles_x + x / TILE];
            let mut t = 1.0;
            let mut color = [0.0; 3];
            let mut depth = 0.0;
            let mut stopped = false;
            for &slot in list {
                let (p, b) = &projected[slot as usize];
                let (xi, yi) = (x as i64, y as i64);
                if xi < b[0] || xi > b[2] || yi < b[1] || yi > b[3] {
                    continue;
                }
                let d = Vector2::new(x as f64 - p.mean.x, y as f64 - p.mean.y);
                let density = (-0.5 * d.dot(&(p.conic * d))).exp();
                let g = &field.gaussians[p.index];
                let raw = g.o * density;
                if raw < ALPHA_MIN {
                    continue;
                }
                let clipped = raw > ALPHA_MAX;
                let alpha = raw.min(ALPHA_MAX);
                let wgt = alpha * t;
                for ch in 0..3 {
                    color[ch] += g.c[ch] * wgt;
                }
                depth += p.depth * wgt;
                if keep {
                    state.contributions.push(Contribution {
                        index: p.index as u32,
                        alpha,
                        density,
                        transmittance: t,
                        clipped,
                    });
                }
                t *= 1.0 - alpha;
                if t < T_MIN {
                    stopped = true;
                    break;
                }
            }
            state.output.color.set(x, y, color);
            state.output.depth.set(x, y, depth);
            state.output.alpha.set(x, y, 1.0 - t);
            if keep {
                state.offsets.push(state.contributions.len());
                state.terminated.push(stopped);
            }
        }
    }
    state
}

/// Gradients of a scalar loss with respect to every primitive's color and
/// opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrads {
    pub color: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
}

impl FieldGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            color: vec![[0.0; 3]; n],
            opacity: vec![0.0; n],
        }
    }

    pub fn add(&mut self, other: &FieldGrads) {
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            for ch in 0..3 {
                a[ch] += b[ch];
            }
        }
        for (a, b) in self.opacity.iter_mut().zip(&other.opacity) {
            *a += b;
        }
    }
}

/// Pulls image-space gradients of the rendered color and depth back to the
/// primitives through the compositing.
pub fn backward_field(
    state: &RenderState,
    field: &GaussianField,
    grad_color: &ColorImage,
    grad_depth: &DepthImage,
) -> Result<FieldGrads> {
    let n = field.len();
    if state.num_gaussians() != n || state.offsets.len() != state.output.color.len() + 1 {
        return Err(Error::InvalidArgument(
            "render state does not belong to this field or kept no blend lists".into(),
        ));
    }
    let mut grads = FieldGrads::zeros(n);
    for (pix, (gc, &gd)) in grad_color.as_slice().iter().zip(grad_depth.as_slice()).enumerate() {
        let list = &state.contributions[state.offsets[pix]..state.offsets[pix + 1]];
        let mut acc_c = [0.0; 3];
        let mut acc_d = 0.0;
        for c in list.iter().rev() {
            let i = c.index as usize;
            let g = &field.gaussians[i];
            let h = state.depths[i];
            let wgt = c.alpha * c.transmittance;
            for ch in 0..3 {
                grads.color[i][ch] += wgt * gc[ch];
            }
            if !c.clipped {
                let inv = 1.0 / (1.0 - c.alpha);
                let mut d_alpha = gd * (h * c.transmittance - acc_d * inv);
                for ch in 0..3 {
                    d_alpha += gc[ch] * (g.c[ch] * c.transmittance - acc_c[ch] * inv);
                }
                grads.opacity[i] += d_alpha * c.density;
            }
            for ch in 0..3 {
                acc_c[ch] += g.c[ch] * wgt;
            }
            acc_d += h * wgt;
        }
    }
    Ok(grads)
}

/// Total loss gradients for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub field: FieldGrads,
    pub camera: [f64; 4],
    pub report: LossReport,
}

/// Loss of a retained render against `target` and its gradients.
pub fn backward(
    state: &RenderState,
    field: &GaussianField,
    cam: &CameraModel,
    target: &crate::scene::FrameBundle,
    weights: &LossWeights,
) -> Result<Gradients> {
    let (report, g) = loss_and_grad(&state.output, cam, target, weights);
    let field_grads = backward_field(state, field, &g.color, &g.depth)?;
    Ok(Gradients {
        field: field_grads,
        camera: g.camera,
        report,
    })
}
