//! Four-parameter blur/exposure observation model: a weighted mix of the
//! sharp render and a translated copy of it.

use serde::{Deserialize, Serialize};

use crate::raster::ColorImage;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub omega_raw: f64,
    pub omega_trans: f64,
    /// Shift in pixels.
    pub x_trans: f64,
    pub y_trans: f64,
}

impl Default for CameraModel {
    /// Fresh keyframe parameters `[0.5, 0.5, 0, 0]`; equivalent to identity.
    fn default() -> Self {
        Self::new(0.5, 0.5, 0.0, 0.0)
    }
}

impl CameraModel {
    pub const fn new(omega_raw: f64, omega_trans: f64, x_trans: f64, y_trans: f64) -> Self {
        Self {
            omega_raw,
            omega_trans,
            x_trans,
            y_trans,
        }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.omega_raw, self.omega_trans, self.x_trans, self.y_trans]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Clamps the weights to `[0, 1]`.
    pub fn clamped(self) -> Self {
        Self {
            omega_raw: self.omega_raw.clamp(0.0, 1.0),
            omega_trans: self.omega_trans.clamp(0.0, 1.0),
            ..self
        }
    }
}

/// Bilinear tap along one axis with edge clamping: `(i0, i1, frac)`; `frac`
/// has zero derivative once the coordinate is clamped.
#[inline]
fn axis_tap(s: f64, n: usize) -> (usize, usize, f64, bool) {
    let max = (n - 1) as f64;
    if s <= 0.0 {
        (0, 0, 0.0, false)
    } else if s >= max {
        (n - 1, n - 1, 0.0, false)
    } else {
        let i0 = s.floor();
        let i = i0 as usize;
        (i, (i + 1).min(n - 1), s - i0, true)
    }
}

/// `T(I)(p) = I(p - (x, y))`.
pub fn translate(image: &ColorImage, dx: f64, dy: f64) -> ColorImage {
    let (w, h) = (image.width(), image.height());
    ColorImage::from_fn(w, h, |u, v| {
        let (x0, x1, fx, _) = axis_tap(u as f64 - dx, w);
        let (y0, y1, fy, _) = axis_tap(v as f64 - dy, h);
        let (a, b, c, d) = (image.get(x0, y0), image.get(x1, y0), image.get(x0, y1), image.get(x1, y1));
        let mut out = [0.0; 3];
        for ch in 0..3 {
            out[ch] = (1.0 - fx) * (1.0 - fy) * a[ch] + fx * (1.0 - fy) * b[ch] + (1.0 - fx) * fy * c[ch] + fx * fy * d[ch];
        }
        out
    })
}

pub fn apply_camera_model(image: &ColorImage, cam: &CameraModel) -> ColorImage {
    let shifted = translate(image, cam.x_trans, cam.y_trans);
    let mut out = shifted;
    for (o, i) in out.as_mut_slice().iter_mut().zip(image.as_slice()) {
        for ch in 0..3 {
            o[ch] = cam.omega_trans * o[ch] + cam.omega_raw * i[ch];
        }
    }
    out
}

/// Pulls an output-space gradient back through the camera model. Returns the
/// gradient with respect to the input image and to
/// `[omega_raw, omega_trans, x_trans, y_trans]`.
pub fn camera_model_backward(image: &ColorImage, cam: &CameraModel, grad_out: &ColorImage) -> (ColorImage, [f64; 4]) {
    let (w, h) = (image.width(), image.height());
    let mut grad_in = ColorImage::new(w, h);
    let mut g_cam = [0.0; 4];
    for v in 0..h {
        for u in 0..w {
            let g = grad_out.get(u, v);
            let i = image.get(u, v);
            let (x0, x1, fx, xin) = axis_tap(u as f64 - cam.x_trans, w);
            let (y0, y1, fy, yin) = axis_tap(v as f64 - cam.y_trans, h);
            let (a, b, c, d) = (image.get(x0, y0), image.get(x1, y0), image.get(x0, y1), image.get(x1, y1));
            let wts = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
            for ch in 0..3 {
                let t = wts[0] * a[ch] + wts[1] * b[ch] + wts[2] * c[ch] + wts[3] * d[ch];
                g_cam[0] += g[ch] * i[ch];
                g_cam[1] += g[ch] * t;
                // d/dx of sample(u - x) = -d/ds
                if xin {
                    let ds = (1.0 - fy) * (b[ch] - a[ch]) + fy * (d[ch] - c[ch]);
                    g_cam[2] -= g[ch] * cam.omega_trans * ds;
                }
                if yin {
                    let ds = (1.0 - fx) * (c[ch] - a[ch]) + fx * (d[ch] - b[ch]);
                    g_cam[3] -= g[ch] * cam.omega_trans * ds;
                }
            }
            grad_in.get_mut(u, v).iter_mut().zip(g).for_each(|(gi, go)| *gi += cam.omega_raw * go);
            for (k, (x, y)) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)].into_iter().enumerate() {
                let s = cam.omega_trans * wts[k];
                if s != 0.0 {
                    let gi = grad_in.get_mut(x, y);
                    for ch in 0..3 {
                        gi[ch] += s * g[ch];
                    }
                }
            }
        }
    }
    (grad_in, g_cam)
}

/// Integer cells sampled by the translation; the model is smooth in its
/// parameters while these stay fixed.
pub(crate) fn translation_cells(cam: &CameraModel) -> (i64, i64) {
    (cam.x_trans.floor() as i64, cam.y_trans.floor() as i64)
}
