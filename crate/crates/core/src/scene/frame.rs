use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::raster::{ColorImage, DepthImage, Mask};

/// One RGB-D observation with its camera.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBundle {
    pub color: ColorImage,
    pub depth: DepthImage,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub timestamp: u64,
}

impl FrameBundle {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.intrinsics.width, self.intrinsics.height);
        let fail = |reason: String| Error::Format {
            frame: self.timestamp,
            reason,
        };
        if self.color.width() != w || self.color.height() != h {
            return Err(fail(format!(
                "color is {}x{}, intrinsics say {w}x{h}",
                self.color.width(),
                self.color.height()
            )));
        }
        if self.depth.width() != w || self.depth.height() != h {
            return Err(fail(format!(
                "depth is {}x{}, intrinsics say {w}x{h}",
                self.depth.width(),
                self.depth.height()
            )));
        }
        if self.depth.as_slice().iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(fail("depth contains negative or non-finite values".into()));
        }
        self.intrinsics.validate()?;
        self.pose.validate()
    }

    #[inline]
    pub fn depth_at(&self, x: usize, y: usize) -> Option<f64> {
        let d = *self.depth.get(x, y);
        (d > 0.0).then_some(d)
    }

    pub fn valid_depth_count(&self) -> usize {
        self.depth.as_slice().iter().filter(|&&d| d > 0.0).count()
    }
}

/// Per-frame instance segmentation: masks with one embedding each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegObservation {
    pub masks: Vec<Mask>,
    pub embeddings: Vec<Embedding>,
    pub captions: Option<Vec<String>>,
}

impl SegObservation {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.masks.len() != self.embeddings.len() {
            return Err(Error::InvalidArgument(format!(
                "{} masks but {} embeddings",
                self.masks.len(),
                self.embeddings.len()
            )));
        }
        if let Some(c) = &self.captions {
            if c.len() != self.masks.len() {
                return Err(Error::InvalidArgument("caption count mismatch".into()));
            }
        }
        for (k, e) in self.embeddings.iter().enumerate() {
            if (e.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArgument(format!("embedding {k} is not unit norm")));
            }
        }
        if let Some(first) = self.masks.first() {
            for m in &self.masks {
                if !m.same_size(first) {
                    return Err(Error::InvalidArgument("masks differ in size".into()));
                }
            }
            for i in 0..first.len() {
                let hits = self.masks.iter().filter(|m| m.as_slice()[i]).count();
                if hits > 1 {
                    return Err(Error::InvalidArgument(format!(
                        "masks overlap at pixel index {i}"
                    )));
                }
            }
        }
        Ok(())
    }
}
