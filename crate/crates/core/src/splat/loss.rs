use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::camera::{apply_camera_model, camera_model_backward, translation_cells, CameraModel};
use super::ssim::ssim_with_grad;
use super::RenderOutput;
use crate::geometry::Intrinsics;
use crate::raster::{ColorImage, DepthImage, Image};
use crate::scene::FrameBundle;

/// Unit normals per pixel; zero where undefined.
pub type NormalImage = Image<[f64; 3]>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub rgb: f64,
    pub ssim: f64,
    pub depth: f64,
    pub normal: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rgb: 0.8,
            ssim: 0.2,
            depth: 0.5,
            normal: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rgb: f64,
    pub ssim: f64,
    pub depth: f64,
    pub normal: f64,
    pub total: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.rgb, self.ssim, self.depth, self.normal, self.total].iter().all(|v| v.is_finite())
    }

    pub fn add_scaled(&mut self, other: &LossReport, k: f64) {
        self.rgb += k * other.rgb;
        self.ssim += k * other.ssim;
        self.depth += k * other.depth;
        self.normal += k * other.normal;
        self.total += k * other.total;
    }
}

/// Gradients of the total loss with respect to the rendered color and
/// depth, and to the camera model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrads {
    pub color: ColorImage,
    pub depth: DepthImage,
    pub camera: [f64; 4],
}

#[inline]
fn point(depth: &DepthImage, k: &Intrinsics, x: usize, y: usize) -> Option<Vector3<f64>> {
    let d = *depth.get(x, y);
    (d > 0.0).then(|| k.backproject(x as f64, y as f64, d).coords)
}

/// Unnormalized normal `t_v × t_u` from central differences, with the
/// neighbor points. `None` at borders or when any of the five depths is
/// missing.
fn raw_normal(depth: &DepthImage, k: &Intrinsics, x: usize, y: usize) -> Option<Vector3<f64>> {
    let (w, h) = (depth.width(), depth.height());
    if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
        return None;
    }
    point(depth, k, x, y)?;
    let tu = point(depth, k, x + 1, y)? - point(depth, k, x - 1, y)?;
    let tv = point(depth, k, x, y + 1)? - point(depth, k, x, y - 1)?;
    let m = tv.cross(&tu);
    (m.norm() > 0.0).then_some(m)
}

/// Camera-frame normals of the back-projected depth map, facing the camera.
pub fn normal_from_depth(depth: &DepthImage, k: &Intrinsics) -> NormalImage {
    Image::from_fn(depth.width(), depth.height(), |x, y| {
        raw_normal(depth, k, x, y).map_or([0.0; 3], |m| {
            let n = m.normalize();
            [n.x, n.y, n.z]
        })
    })
}

fn is_valid(n: &[f64; 3]) -> bool {
    n.iter().any(|&v| v != 0.0)
}

pub fn loss_all(rendered: &RenderOutput, cam: &CameraModel, target: &FrameBundle, weights: &LossWeights) -> LossReport {
    let observed = apply_camera_model(&rendered.color, cam);
    let rgb = l1(&observed, &target.color);
    let ssim = 1.0 - super::ssim::ssim(&observed, &target.color);
    let (depth, _) = depth_term(&rendered.depth, &target.depth);
    let normal = normal_term(rendered, target, None);
    combine(rgb, ssim, depth, normal, weights)
}

fn combine(rgb: f64, ssim: f64, depth: f64, normal: f64, w: &LossWeights) -> LossReport {
    LossReport {
        rgb,
        ssim,
        depth,
        normal,
        total: w.rgb * rgb + w.ssim * ssim + w.depth * depth + w.normal * normal,
    }
}

fn l1(a: &ColorImage, b: &ColorImage) -> f64 {
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>())
        .sum();
    sum / (3 * a.len()) as f64
}

fn depth_term(rendered: &DepthImage, target: &DepthImage) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (r, t) in rendered.as_slice().iter().zip(target.as_slice()) {
        if *t > 0.0 {
            sum += (r - t).abs();
            n += 1;
        }
    }
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}

/// Mean cosine loss over pixels where both normals exist. With `grad`, adds
/// `scale ×` its gradient with respect to the rendered depth.
fn normal_term(rendered: &RenderOutput, target: &FrameBundle, grad: Option<(&mut DepthImage, f64)>) -> f64 {
    let k = &target.intrinsics;
    let target_n = normal_from_depth(&target.depth, k);
    let (w, h) = (rendered.depth.width(), rendered.depth.height());
    let mut pairs = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let tn = target_n.get(x, y);
            if !is_valid(tn) {
                continue;
            }
            if let Some(m) = raw_normal(&rendered.depth, k, x, y) {
                pairs.push((x, y, m, Vector3::new(tn[0], tn[1], tn[2])));
            }
        }
    }
    if pairs.is_empty() {
        return 0.0;
    }
    let inv_n = 1.0 / pairs.len() as f64;
    let loss: f64 = pairs.iter().map(|(_, _, m, t)| 1.0 - m.normalize().dot(t)).sum::<f64>() * inv_n;
    if let Some((g, scale)) = grad {
        if scale != 0.0 {
            let d = &rendered.depth;
            for (x, y, m, t) in &pairs {
                let (x, y) = (*x, *y);
                let len = m.norm();
                let n = m / len;
                // d(1 - n·t)/dm
                let g_m = -(t - n * n.dot(t)) / len * (scale * inv_n);
                let pu1 = k.backproject((x + 1) as f64, y as f64, *d.get(x + 1, y)).coords;
                let pu0 = k.backproject((x - 1) as f64, y as f64, *d.get(x - 1, y)).coords;
                let pv1 = k.backproject(x as f64, (y + 1) as f64, *d.get(x, y + 1)).coords;
                let pv0 = k.backproject(x as f64, (y - 1) as f64, *d.get(x, y - 1)).coords;
                let tu = pu1 - pu0;
                let tv = pv1 - pv0;
                let g_tv = tu.cross(&g_m);
                let g_tu = g_m.cross(&tv);
                let ray = |u: usize, v: usize| k.ray(u as f64, v as f64);
                *g.get_mut(x + 1, y) += g_tu.dot(&ray(x + 1, y));
                *g.get_mut(x - 1, y) -= g_tu.dot(&ray(x - 1, y));
                *g.get_mut(x, y + 1) += g_tv.dot(&ray(x, y + 1));
                *g.get_mut(x, y - 1) -= g_tv.dot(&ray(x, y - 1));
            }
        }
    }
    loss
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss report plus exact gradients away from kinks.
pub fn loss_and_grad(
    rendered: &RenderOutput,
    cam: &CameraModel,
    target: &FrameBundle,
    weights: &LossWeights,
) -> (LossReport, LossGrads) {
    let (w, h) = (rendered.color.width(), rendered.color.height());
    let observed = apply_camera_model(&rendered.color, cam);
    let n = (3 * observed.len()) as f64;

    let rgb = l1(&observed, &target.color);
    let mut g_obs = ColorImage::from_fn(w, h, |x, y| {
        let (o, t) = (observed.get(x, y), target.color.get(x, y));
        [0, 1, 2].map(|c| weights.rgb * sign(o[c] - t[c]) / n)
    });

    let ssim = if weights.ssim != 0.0 {
        let (s, g) = ssim_with_grad(&observed, &target.color);
        for (a, b) in g_obs.as_mut_slice().iter_mut().zip(g.as_slice()) {
            for c in 0..3 {
                a[c] -= weights.ssim * b[c];
            }
        }
        1.0 - s
    } else {
        1.0 - super::ssim::ssim(&observed, &target.color)
    };

    let (depth, n_valid) = depth_term(&rendered.depth, &target.depth);
    let mut g_depth = DepthImage::from_fn(w, h, |x, y| {
        let t = *target.depth.get(x, y);
        if t > 0.0 && n_valid > 0 {
            weights.depth * sign(rendered.depth.get(x, y) - t) / n_valid as f64
        } else {
            0.0
        }
    });
    let normal = normal_term(rendered, target, Some((&mut g_depth, weights.normal)));

    let (g_color, g_cam) = camera_model_backward(&rendered.color, cam, &g_obs);
    (
        combine(rgb, ssim, depth, normal, weights),
        LossGrads {
            color: g_color,
            depth: g_depth,
            camera: g_cam,
        },
    )
}

/// Hash of the discrete state the loss is smooth within: residual signs,
/// normal validity and the translation cells.
pub fn loss_signature(rendered: &RenderOutput, cam: &CameraModel, target: &FrameBundle) -> u64 {
    let mut h = DefaultHasher::new();
    let observed = apply_camera_model(&rendered.color, cam);
    for (o, t) in observed.as_slice().iter().zip(target.color.as_slice()) {
        for c in 0..3 {
            (sign(o[c] - t[c]) as i8).hash(&mut h);
        }
    }
    for (r, t) in rendered.depth.as_slice().iter().zip(target.depth.as_slice()) {
        if *t > 0.0 {
            (sign(r - t) as i8).hash(&mut h);
        }
    }
    for n in normal_from_depth(&rendered.depth, &target.intrinsics).as_slice() {
        is_valid(n).hash(&mut h);
    }
    translation_cells(cam).hash(&mut h);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;

    fn k() -> Intrinsics {
        Intrinsics::new(40.0, 40.0, 15.5, 11.5, 32, 24).unwrap()
    }

    fn frame(color: ColorImage, depth: DepthImage) -> FrameBundle {
        FrameBundle {
            color,
            depth,
            pose: Pose::identity(),
            intrinsics: k(),
            timestamp: 0,
        }
    }

    #[test]
    fn fronto_parallel_normals() {
        let n = normal_from_depth(&DepthImage::filled(32, 24, 2.0), &k());
        for y in 1..23 {
            for x in 1..31 {
                let v = n.get(x, y);
                assert!((v[2] + 1.0).abs() < 1e-12 && v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
            }
        }
        assert_eq!(*n.get(0, 5), [0.0; 3]);
    }

    #[test]
    fn tilted_plane_normals() {
        // plane through (0,0,2) with normal (0, s, -s)·: points satisfy y - z = -2
        let k = k();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let depth = DepthImage::from_fn(32, 24, |x, y| {
            let r = k.ray(x as f64, y as f64);
            // (r.y - 1) z = -2
            -2.0 / (r.y - 1.0)
        });
        let n = normal_from_depth(&depth, &k);
        let want = Vector3::new(0.0, s, -s);
        for y in 1..23 {
            for x in 1..31 {
                let v = n.get(x, y);
                let v = Vector3::new(v[0], v[1], v[2]);
                assert!(v.dot(&want).clamp(-1.0, 1.0).acos().to_degrees() < 1.0);
            }
        }
    }

    #[test]
    fn isolated_pixel_has_no_normal() {
        let mut d = DepthImage::new(32, 24);
        d.set(10, 10, 1.0);
        assert_eq!(*normal_from_depth(&d, &k()).get(10, 10), [0.0; 3]);
    }

    #[test]
    fn losses_vanish_on_exact_match() {
        let color = ColorImage::from_fn(32, 24, |x, y| [x as f64 / 32.0, y as f64 / 24.0, 0.5]);
        let depth = DepthImage::filled(32, 24, 1.5);
        let target = frame(color.clone(), depth.clone());
        let rendered = RenderOutput {
            color,
            depth,
            alpha: DepthImage::filled(32, 24, 1.0),
        };
        let r = loss_all(&rendered, &CameraModel::identity(), &target, &LossWeights::default());
        assert!(r.rgb == 0.0 && r.ssim.abs() < 1e-12 && r.depth == 0.0 && r.normal.abs() < 1e-12);
    }

    #[test]
    fn constant_offset_l1() {
        let target = frame(ColorImage::filled(32, 24, [0.3; 3]), DepthImage::filled(32, 24, 1.0));
        let rendered = RenderOutput {
            color: ColorImage::filled(32, 24, [0.4; 3]),
            depth: DepthImage::filled(32, 24, 1.0),
            alpha: DepthImage::filled(32, 24, 1.0),
        };
        let r = loss_all(&rendered, &CameraModel::identity(), &target, &LossWeights::default());
        assert!((r.rgb - 0.1).abs() < 1e-12);
        let w = LossWeights::default();
        assert!((r.total - (w.rgb * r.rgb + w.ssim * r.ssim + w.depth * r.depth + w.normal * r.normal)).abs() < 1e-15);
    }

    #[test]
    fn omega_raw_gradient_for_constant_images() {
        let i = 0.4;
        let t = 0.7;
        let target = frame(ColorImage::filled(32, 24, [t; 3]), DepthImage::new(32, 24));
        let rendered = RenderOutput {
            color: ColorImage::filled(32, 24, [i; 3]),
            depth: DepthImage::new(32, 24),
            alpha: DepthImage::new(32, 24),
        };
        let w = LossWeights {
            rgb: 1.0,
            ssim: 0.0,
            depth: 0.0,
            normal: 0.0,
        };
        let cam = CameraModel::new(0.5, 0.0, 0.0, 0.0);
        let (_, g) = loss_and_grad(&rendered, &cam, &target, &w);
        assert!((g.camera[0] - sign(0.5 * i - t) * i).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_zero_gradients() {
        let target = frame(ColorImage::filled(32, 24, [0.2; 3]), DepthImage::filled(32, 24, 1.0));
        let rendered = RenderOutput {
            color: ColorImage::filled(32, 24, [0.9; 3]),
            depth: DepthImage::filled(32, 24, 1.3),
            alpha: DepthImage::filled(32, 24, 1.0),
        };
        let w = LossWeights {
            rgb: 0.0,
            ssim: 0.0,
            depth: 0.0,
            normal: 0.0,
        };
        let (r, g) = loss_and_grad(&rendered, &CameraModel::default(), &target, &w);
        assert_eq!(r.total, 0.0);
        assert!(g.color.as_slice().iter().all(|p| *p == [0.0; 3]));
        assert!(g.depth.as_slice().iter().all(|p| *p == 0.0));
        assert_eq!(g.camera, [0.0; 4]);
    }

    #[test]
    fn normal_gradient_matches_differences() {
        let target_depth = DepthImage::from_fn(32, 24, |x, y| 1.0 + 0.02 * x as f64 + 0.01 * ((y * 7) % 5) as f64);
        let target = frame(ColorImage::new(32, 24), target_depth);
        let base = DepthImage::from_fn(32, 24, |x, y| 1.2 + 0.015 * y as f64 + 0.01 * ((x * 3) % 4) as f64);
        let w = LossWeights {
            rgb: 0.0,
            ssim: 0.0,
            depth: 0.0,
            normal: 1.0,
        };
        let mk = |d: DepthImage| RenderOutput {
            color: ColorImage::new(32, 24),
            depth: d,
            alpha: DepthImage::filled(32, 24, 1.0),
        };
        let (_, g) = loss_and_grad(&mk(base.clone()), &CameraModel::identity(), &target, &w);
        for &(x, y) in &[(5usize, 5usize), (10, 12), (20, 3), (30, 22)] {
            let h = 1e-6;
            let mut p = base.clone();
            *p.get_mut(x, y) += h;
            let mut m = base.clone();
            *m.get_mut(x, y) -= h;
            let lp = loss_all(&mk(p), &CameraModel::identity(), &target, &w).total;
            let lm = loss_all(&mk(m), &CameraModel::identity(), &target, &w).total;
            let fd = (lp - lm) / (2.0 * h);
            let a = *g.depth.get(x, y);
            assert!((fd - a).abs() <= 1e-6 * a.abs().max(1e-4), "({x},{y}) {fd} vs {a}");
        }
    }
}
