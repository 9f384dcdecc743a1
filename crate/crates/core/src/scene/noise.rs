//! Controlled segmentation and depth corruption: missing masks, over- and
//! under-segmentation, embedding jitter and multiplicative depth noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::raster::{DepthImage, Mask};
use crate::scene::frame::SegObservation;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub p_drop: f64,
    pub p_split: f64,
    pub p_merge: f64,
    pub embed_sigma: f64,
    pub depth_sigma: f64,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            p_drop: 0.0,
            p_split: 0.0,
            p_merge: 0.0,
            embed_sigma: 0.0,
            depth_sigma: 0.0,
            rng_seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_drop, self.p_split, self.p_merge];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("noise probabilities must lie in [0, 1]".into()));
        }
        if !(self.embed_sigma >= 0.0 && self.depth_sigma >= 0.0) {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }

    pub fn is_noise_free(&self) -> bool {
        self.p_drop == 0.0
            && self.p_split == 0.0
            && self.p_merge == 0.0
            && self.embed_sigma == 0.0
            && self.depth_sigma == 0.0
    }

    /// Same configuration with a seed derived for frame `t`, so successive
    /// frames draw independent noise while staying reproducible.
    pub fn for_frame(&self, t: u64) -> Self {
        let mut cfg = *self;
        cfg.rng_seed = self
            .rng_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(t.wrapping_mul(0xBF58_476D_1CE4_E5B9))
            ^ 0x94D0_49BB_1331_11EB;
        cfg
    }
}

/// Applies drop, split, merge and jitter, in that order.
pub fn perturb_segmentation(obs: &SegObservation, cfg: &NoiseConfig) -> SegObservation {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut masks: Vec<Mask> = Vec::with_capacity(obs.masks.len());
    let mut embs: Vec<Embedding> = Vec::with_capacity(obs.masks.len());

    for (m, e) in obs.masks.iter().zip(&obs.embeddings) {
        if rng.random::<f64>() < cfg.p_drop {
            continue;
        }
        if rng.random::<f64>() < cfg.p_split {
            if let Some((a, b)) = split_mask(m) {
                masks.push(a);
                embs.push(e.clone());
                masks.push(b);
                embs.push(e.jittered(cfg.embed_sigma, &mut rng));
                continue;
            }
        }
        masks.push(m.clone());
        embs.push(e.clone());
    }

    if cfg.p_merge > 0.0 && masks.len() > 1 {
        let bbs: Vec<_> = masks.iter().map(|m| m.bounding_box()).collect();
        let mut consumed = vec![false; masks.len()];
        let mut merged_masks = Vec::new();
        let mut merged_embs = Vec::new();
        for i in 0..masks.len() {
            if consumed[i] {
                continue;
            }
            consumed[i] = true;
            let mut mask = masks[i].clone();
            let mut emb = embs[i].clone();
            for j in i + 1..masks.len() {
                if consumed[j] || !boxes_touch(bbs[i], bbs[j]) {
                    continue;
                }
                if rng.random::<f64>() < cfg.p_merge {
                    consumed[j] = true;
                    for (a, &b) in mask.as_mut_slice().iter_mut().zip(masks[j].as_slice()) {
                        *a |= b;
                    }
                    let avg: Vec<f64> = emb
                        .as_slice()
                        .iter()
                        .zip(embs[j].as_slice())
                        .map(|(a, b)| 0.5 * (a + b))
                        .collect();
                    emb = Embedding::normalized(avg).unwrap_or(emb);
                    break;
                }
            }
            merged_masks.push(mask);
            merged_embs.push(emb);
        }
        masks = merged_masks;
        embs = merged_embs;
    }

    let embeddings = embs
        .iter()
        .map(|e| e.jittered(cfg.embed_sigma, &mut rng))
        .collect();
    let captions = if obs.captions.is_some() && masks.len() == obs.masks.len() {
        obs.captions.clone()
    } else {
        None
    };
    SegObservation {
        masks,
        embeddings,
        captions,
    }
}

/// Multiplies each valid depth by `1 + N(0, sigma)`.
pub fn perturb_depth(depth: &DepthImage, sigma: f64, seed: u64) -> DepthImage {
    if sigma == 0.0 {
        return depth.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5DEE_CE66_D1CE_4E5B);
    depth.map(|&d| {
        let n: f64 = rng.sample(StandardNormal);
        if d > 0.0 {
            (d * (1.0 + sigma * n)).max(0.0)
        } else {
            0.0
        }
    })
}

/// Bisects a mask across the longer side of its bounding box.
pub fn split_mask(m: &Mask) -> Option<(Mask, Mask)> {
    let (x0, y0, x1, y1) = m.bounding_box()?;
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let horizontal = bw >= bh;
    let (lo, len) = if horizontal { (x0, bw) } else { (y0, bh) };
    if len < 2 {
        return None;
    }
    let cut = lo + len / 2;
    let first = Mask::from_fn(m.width(), m.height(), |x, y| {
        *m.get(x, y) && if horizontal { x < cut } else { y < cut }
    });
    let second = Mask::from_fn(m.width(), m.height(), |x, y| {
        *m.get(x, y) && if horizontal { x >= cut } else { y >= cut }
    });
    (first.area() > 0 && second.area() > 0).then_some((first, second))
}

type BBox = Option<(usize, usize, usize, usize)>;

/// Bounding boxes intersect or are adjacent (one-pixel gap allowed).
fn boxes_touch(a: BBox, b: BBox) -> bool {
    match (a, b) {
        (Some((ax0, ay0, ax1, ay1)), Some((bx0, by0, bx1, by1))) => {
            ax0 <= bx1 + 1 && bx0 <= ax1 + 1 && ay0 <= by1 + 1 && by0 <= ay1 + 1
        }
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn obs_with(masks: Vec<Mask>, seed: u64) -> SegObservation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = masks.iter().map(|_| Embedding::random(8, &mut rng)).collect();
        SegObservation {
            masks,
            embeddings,
            captions: None,
        }
    }

    fn rect(x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        Mask::from_fn(32, 32, |x, y| x >= x0 && x <= x1 && y >= y0 && y <= y1)
    }

    #[test]
    fn zero_config_is_identity() {
        let obs = obs_with(vec![rect(0, 0, 5, 5), rect(10, 10, 20, 12)], 1);
        assert_eq!(perturb_segmentation(&obs, &NoiseConfig::default()), obs);
    }

    #[test]
    fn drop_all() {
        let obs = obs_with(vec![rect(0, 0, 5, 5), rect(10, 10, 20, 12)], 1);
        let cfg = NoiseConfig {
            p_drop: 1.0,
            ..Default::default()
        };
        assert!(perturb_segmentation(&obs, &cfg).is_empty());
    }

    #[test]
    fn split_bisects_longer_axis() {
        // 10 wide, 4 tall
        let m = rect(3, 7, 12, 10);
        let obs = obs_with(vec![m.clone()], 2);
        let cfg = NoiseConfig {
            p_split: 1.0,
            ..Default::default()
        };
        let out = perturb_segmentation(&obs, &cfg);
        assert_eq!(out.len(), 2);
        out.validate().unwrap();
        for (x, y, &on) in m.enumerate() {
            let a = *out.masks[0].get(x, y);
            let b = *out.masks[1].get(x, y);
            assert_eq!(a || b, on);
            assert!(!(a && b));
        }
        // the cut runs across the width-10 axis: each half spans all 4 rows
        for half in &out.masks {
            let (x0, y0, x1, y1) = half.bounding_box().unwrap();
            assert_eq!((y0, y1), (7, 10));
            assert_eq!(x1 - x0 + 1, 5);
        }
    }

    #[test]
    fn merge_unions_adjacent_masks() {
        let a = rect(0, 0, 4, 4);
        let b = rect(5, 0, 9, 4);
        let obs = obs_with(vec![a.clone(), b.clone()], 3);
        let cfg = NoiseConfig {
            p_merge: 1.0,
            ..Default::default()
        };
        let out = perturb_segmentation(&obs, &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out.masks[0].area(), a.area() + b.area());
        assert!((out.embeddings[0].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_seed() {
        let obs = obs_with((0..6).map(|i| rect(i * 5, 0, i * 5 + 3, 20)).collect(), 4);
        let cfg = NoiseConfig {
            p_drop: 0.3,
            p_split: 0.4,
            p_merge: 0.3,
            embed_sigma: 0.2,
            depth_sigma: 0.0,
            rng_seed: 77,
        };
        let a = perturb_segmentation(&obs, &cfg);
        let b = perturb_segmentation(&obs, &cfg);
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn depth_noise_keeps_invalid_pixels() {
        let d = DepthImage::from_fn(8, 8, |x, _| if x == 0 { 0.0 } else { 1.0 });
        let n = perturb_depth(&d, 0.01, 3);
        for (x, y, &v) in n.enumerate() {
            if x == 0 {
                assert_eq!(v, 0.0);
            } else {
                assert!((v - 1.0).abs() < 0.1, "{x},{y}: {v}");
            }
        }
    }
}
