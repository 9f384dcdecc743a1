//! Windowed SSIM with an 11×11 Gaussian window (σ = 1.5) and its gradient.
//!
//! Near borders the window is truncated and its weights renormalized, so
//! the statistics are defined for any image size.

use crate::raster::ColorImage;

const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

struct Window {
    w: usize,
    h: usize,
    k: [f64; 2 * RADIUS + 1],
    zx: Vec<f64>,
    zy: Vec<f64>,
}

impl Window {
    fn new(w: usize, h: usize) -> Self {
        let k = kernel();
        let z = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|p| {
                    (0..=2 * RADIUS)
                        .filter(|&t| {
                            let q = p as i64 + t as i64 - RADIUS as i64;
                            q >= 0 && q < n as i64
                        })
                        .map(|t| k[t])
                        .sum()
                })
                .collect()
        };
        Self {
            w,
            h,
            k,
            zx: z(w),
            zy: z(h),
        }
    }

    /// Unnormalized separable correlation over valid taps.
    fn raw(&self, img: &[f64]) -> Vec<f64> {
        let (w, h) = (self.w, self.h);
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for t in 0..=2 * RADIUS {
                    let q = x as i64 + t as i64 - RADIUS as i64;
                    if q >= 0 && q < w as i64 {
                        s += self.k[t] * img[y * w + q as usize];
                    }
                }
                tmp[y * w + x] = s;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for t in 0..=2 * RADIUS {
                    let q = y as i64 + t as i64 - RADIUS as i64;
                    if q >= 0 && q < h as i64 {
                        s += self.k[t] * tmp[q as usize * w + x];
                    }
                }
                out[y * w + x] = s;
            }
        }
        out
    }

    /// Weighted local mean.
    fn mean(&self, img: &[f64]) -> Vec<f64> {
        let mut out = self.raw(img);
        for y in 0..self.h {
            for x in 0..self.w {
                out[y * self.w + x] /= self.zx[x] * self.zy[y];
            }
        }
        out
    }

    /// Transpose of [`Window::mean`].
    fn mean_adjoint(&self, f: &[f64]) -> Vec<f64> {
        let mut scaled = f.to_vec();
        for y in 0..self.h {
            for x in 0..self.w {
                scaled[y * self.w + x] /= self.zx[x] * self.zy[y];
            }
        }
        // the kernel is symmetric, so correlation is its own transpose
        self.raw(&scaled)
    }
}

fn channel(img: &ColorImage, c: usize) -> Vec<f64> {
    img.as_slice().iter().map(|p| p[c]).collect()
}

struct Stats {
    mx: Vec<f64>,
    my: Vec<f64>,
    sxx: Vec<f64>,
    syy: Vec<f64>,
    sxy: Vec<f64>,
}

fn stats(win: &Window, x: &[f64], y: &[f64]) -> Stats {
    let mx = win.mean(x);
    let my = win.mean(y);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let exx = win.mean(&xx);
    let eyy = win.mean(&yy);
    let exy = win.mean(&xy);
    let n = x.len();
    Stats {
        sxx: (0..n).map(|i| exx[i] - mx[i] * mx[i]).collect(),
        syy: (0..n).map(|i| eyy[i] - my[i] * my[i]).collect(),
        sxy: (0..n).map(|i| exy[i] - mx[i] * my[i]).collect(),
        mx,
        my,
    }
}

fn check(a: &ColorImage, b: &ColorImage) {
    assert!(a.same_size(b), "SSIM inputs differ in size");
    assert!(!a.is_empty(), "SSIM of an empty image");
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> f64 {
    check(a, b);
    let win = Window::new(a.width(), a.height());
    let mut total = 0.0;
    for c in 0..3 {
        let s = stats(&win, &channel(a, c), &channel(b, c));
        for i in 0..a.len() {
            let a1 = 2.0 * s.mx[i] * s.my[i] + C1;
            let a2 = 2.0 * s.sxy[i] + C2;
            let b1 = s.mx[i] * s.mx[i] + s.my[i] * s.my[i] + C1;
            let b2 = s.sxx[i] + s.syy[i] + C2;
            total += a1 * a2 / (b1 * b2);
        }
    }
    total / (3 * a.len()) as f64
}

/// SSIM and its gradient with respect to `x`.
pub fn ssim_with_grad(x: &ColorImage, y: &ColorImage) -> (f64, ColorImage) {
    check(x, y);
    let (w, h) = (x.width(), x.height());
    let n = x.len();
    let norm = 1.0 / (3 * n) as f64;
    let win = Window::new(w, h);
    let mut total = 0.0;
    let mut grad = ColorImage::new(w, h);
    for c in 0..3 {
        let xc = channel(x, c);
        let yc = channel(y, c);
        let s = stats(&win, &xc, &yc);
        let mut fa = vec![0.0; n];
        let mut fb = vec![0.0; n];
        let mut fc = vec![0.0; n];
        for i in 0..n {
            let a1 = 2.0 * s.mx[i] * s.my[i] + C1;
            let a2 = 2.0 * s.sxy[i] + C2;
            let b1 = s.mx[i] * s.mx[i] + s.my[i] * s.my[i] + C1;
            let b2 = s.sxx[i] + s.syy[i] + C2;
            let v = a1 * a2 / (b1 * b2);
            total += v;
            let d_mu = 2.0 * s.my[i] * a2 / (b1 * b2) - v * 2.0 * s.mx[i] / b1;
            let d_var = -v / b2;
            let d_cov = 2.0 * a1 / (b1 * b2);
            fa[i] = d_mu - 2.0 * d_var * s.mx[i] - d_cov * s.my[i];
            fb[i] = d_var;
            fc[i] = d_cov;
        }
        let ga = win.mean_adjoint(&fa);
        let gb = win.mean_adjoint(&fb);
        let gc = win.mean_adjoint(&fc);
        for (i, g) in grad.as_mut_slice().iter_mut().enumerate() {
            g[c] = norm * (ga[i] + 2.0 * xc[i] * gb[i] + yc[i] * gc[i]);
        }
    }
    (total * norm, grad)
}
