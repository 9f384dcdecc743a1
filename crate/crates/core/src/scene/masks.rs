//! Overlap resolution and edge erosion for raw segmentation masks.

use crate::raster::Mask;
use crate::scene::frame::SegObservation;

pub const DEFAULT_EROSION_RADIUS: usize = 1;

/// Makes masks pairwise disjoint, then erodes each one.
///
/// Overlapping pixels go to the mask with the smaller area (ties to the lower
/// index). Erosion uses a `(2r+1)²` square element; pixels outside the image
/// count as background. Masks that end up empty are dropped, the rest keep
/// their relative order.
pub fn postprocess_masks(raw: &[Mask], erosion_radius: usize) -> Vec<Mask> {
    postprocess_indexed(raw, erosion_radius)
        .into_iter()
        .map(|(_, m)| m)
        .collect()
}

/// Same as [`postprocess_masks`] but keeps embeddings and captions aligned.
pub fn postprocess_observation(obs: &SegObservation, erosion_radius: usize) -> SegObservation {
    let kept = postprocess_indexed(&obs.masks, erosion_radius);
    SegObservation {
        embeddings: kept.iter().map(|(k, _)| obs.embeddings[*k].clone()).collect(),
        captions: obs
            .captions
            .as_ref()
            .map(|c| kept.iter().map(|(k, _)| c[*k].clone()).collect()),
        masks: kept.into_iter().map(|(_, m)| m).collect(),
    }
}

fn postprocess_indexed(raw: &[Mask], erosion_radius: usize) -> Vec<(usize, Mask)> {
    let Some(first) = raw.first() else {
        return Vec::new();
    };
    let (w, h) = (first.width(), first.height());
    for m in raw {
        assert!(m.same_size(first), "masks must share one image size");
    }

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by_key(|&k| (raw[k].area(), k));
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    for &k in &order {
        for (i, &on) in raw[k].as_slice().iter().enumerate() {
            if on && owner[i].is_none() {
                owner[i] = Some(k);
            }
        }
    }

    (0..raw.len())
        .filter_map(|k| {
            let exclusive = Mask::from_vec(w, h, owner.iter().map(|o| *o == Some(k)).collect());
            let eroded = erode(&exclusive, erosion_radius);
            (eroded.area() > 0).then_some((k, eroded))
        })
        .collect()
}

/// Binary erosion with a square structuring element of half-width `radius`.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    // separable: a pixel survives iff its full row window and column window are on
    let r = radius as isize;
    let horiz = Mask::from_fn(w, h, |x, y| {
        (-r..=r).all(|dx| {
            let xx = x as isize + dx;
            xx >= 0 && (xx as usize) < w && *mask.get(xx as usize, y)
        })
    });
    Mask::from_fn(w, h, |x, y| {
        (-r..=r).all(|dy| {
            let yy = y as isize + dy;
            yy >= 0 && (yy as usize) < h && *horiz.get(x, yy as usize)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Mask {
        Mask::from_fn(w, h, |x, y| x >= x0 && x <= x1 && y >= y0 && y <= y1)
    }

    /// Direct definition: pixel survives iff every pixel of the element is inside and on.
    fn erode_brute(mask: &Mask, r: usize) -> Mask {
        let (w, h) = (mask.width() as isize, mask.height() as isize);
        let r = r as isize;
        Mask::from_fn(mask.width(), mask.height(), |x, y| {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    if xx < 0 || yy < 0 || xx >= w || yy >= h {
                        return false;
                    }
                    if !*mask.get(xx as usize, yy as usize) {
                        return false;
                    }
                }
            }
            true
        })
    }

    #[test]
    fn three_by_three_erodes_to_single_pixel() {
        let m = rect(3, 3, 0, 0, 2, 2);
        let want = erode_brute(&m, 1);
        assert_eq!(want.area(), 1);
        assert!(*want.get(1, 1));
        let out = postprocess_masks(&[m], 1);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0], want);
    }

    #[test]
    fn smaller_mask_wins_overlap() {
        let big = rect(20, 20, 0, 0, 19, 19);
        let small = rect(20, 20, 5, 5, 9, 9);
        let out = postprocess_masks(&[big.clone(), small.clone()], 0);
        assert_eq!(out.len(), 2);
        assert_eq!(out[1], small);
        assert_eq!(out[0].area(), big.area() - small.area());
        assert!(!*out[0].get(7, 7));
    }

    #[test]
    fn disjoint_masks_unchanged_at_radius_zero() {
        let a = rect(10, 10, 0, 0, 3, 3);
        let b = rect(10, 10, 6, 6, 9, 9);
        assert_eq!(postprocess_masks(&[a.clone(), b.clone()], 0), vec![a, b]);
    }

    #[test]
    fn empty_input_and_fully_eroded_masks() {
        assert!(postprocess_masks(&[], 1).is_empty());
        let thin = rect(10, 10, 2, 2, 8, 2);
        assert!(postprocess_masks(&[thin], 1).is_empty());
    }

    #[test]
    fn separable_erosion_matches_brute_force() {
        let m = Mask::from_fn(17, 13, |x, y| (x * 7 + y * 3) % 11 != 0 && (x + y) % 13 != 0);
        for r in 0..4 {
            assert_eq!(erode(&m, r), erode_brute(&m, r), "radius {r}");
        }
    }

    #[test]
    fn output_is_pairwise_disjoint() {
        let masks: Vec<Mask> = (0..6)
            .map(|i| rect(24, 24, i * 2, i, i * 2 + 10, i + 12))
            .collect();
        let out = postprocess_masks(&masks, 1);
        for i in 0..24 * 24 {
            assert!(out.iter().filter(|m| m.as_slice()[i]).count() <= 1);
        }
    }
}
