//! Gaussian primitive field seeded from newly labeled voxels, keyframe
//! bookkeeping and the per-frame optimization loop.

mod keyframe;
mod optim;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::voxel::{VoxelGrid, VoxelKey};

pub use crate::splat::CameraModel;
pub use keyframe::{keyframe_ratio, select_keyframe, visible_voxels, Keyframe, KeyframeBuffer, KeyframePolicy};
pub use optim::{optimize_frame, optimize_step, LossTrace, OptimConfig};

/// Seeded scale as a fraction of the voxel size.
pub const SEED_SCALE_FACTOR: f64 = 0.2;
pub const SEED_OPACITY: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub mu: Point3<f64>,
    pub q: UnitQuaternion<f64>,
    /// RGB in [0, 1].
    pub c: [f64; 3],
    /// Per-axis standard deviation in meters.
    pub s: Vector3<f64>,
    pub o: f64,
}

impl GaussianPrimitive {
    pub fn isotropic(mu: Point3<f64>, sigma: f64, c: [f64; 3], o: f64) -> Self {
        Self {
            mu,
            q: UnitQuaternion::identity(),
            c,
            s: Vector3::repeat(sigma),
            o,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.mu.iter().chain(self.s.iter()).chain(self.c.iter()).all(|v| v.is_finite());
        if !finite || !self.o.is_finite() {
            return Err(Error::Numerical("Gaussian with non-finite parameters".into()));
        }
        if self.s.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument(format!("Gaussian scale {:?} must be positive", self.s)));
        }
        if !(0.0..=1.0).contains(&self.o) || self.c.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("Gaussian color and opacity must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// World-space covariance `R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.q.to_rotation_matrix().into_inner();
        let s2 = Matrix3::from_diagonal(&self.s.component_mul(&self.s));
        r * s2 * r.transpose()
    }
}

/// Append-only set of primitives; no densification or pruning.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianField {
    pub gaussians: Vec<GaussianPrimitive>,
}

impl GaussianField {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn extend(&mut self, new: impl IntoIterator<Item = GaussianPrimitive>) {
        self.gaussians.extend(new);
    }

    /// Binary little-endian PLY in the common splat layout.
    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_ply_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_ply_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "ply\nformat binary_little_endian 1.0\nelement vertex {}", self.len())?;
        for name in PLY_PROPERTIES {
            writeln!(w, "property float {name}")?;
        }
        writeln!(w, "end_header")?;
        for g in &self.gaussians {
            let q = g.q.quaternion();
            let values = [
                g.mu.x, g.mu.y, g.mu.z, 0.0, 0.0, 0.0, g.c[0], g.c[1], g.c[2], g.o, g.s.x, g.s.y, g.s.z, q.w, q.i, q.j, q.k,
            ];
            for v in values {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_ply(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_ply_bytes(&bytes)
    }

    /// Reads files produced by [`GaussianField::write_ply_to`].
    pub fn read_ply_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Data(format!("Gaussian PLY: {m}"));
        let marker = b"end_header\n";
        let end = bytes
            .windows(marker.len())
            .position(|w| w == marker)
            .ok_or_else(|| bad("missing end_header"))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8"))?;
        let mut count = None;
        let mut props = Vec::new();
        for line in header.lines() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["format", f, _] if *f != "binary_little_endian" => return Err(bad("unsupported format")),
                ["element", "vertex", n] => count = n.parse::<usize>().ok(),
                ["property", "float", name] => props.push(*name),
                _ => {}
            }
        }
        if props != PLY_PROPERTIES {
            return Err(bad("unexpected vertex properties"));
        }
        let count = count.ok_or_else(|| bad("missing vertex count"))?;
        let body = &bytes[end + marker.len()..];
        let stride = PLY_PROPERTIES.len() * 4;
        if body.len() != count * stride {
            return Err(bad("vertex data length does not match the header"));
        }
        let gaussians = body
            .chunks_exact(stride)
            .map(|rec| {
                let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
                GaussianPrimitive {
                    mu: Point3::new(f(0), f(1), f(2)),
                    c: [f(6), f(7), f(8)],
                    o: f(9),
                    s: Vector3::new(f(10), f(11), f(12)),
                    q: UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(f(13), f(14), f(15), f(16))),
                }
            })
            .collect();
        Ok(Self { gaussians })
    }
}

const PLY_PROPERTIES: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

/// One Gaussian per new voxel, centered on it with the voxel color.
pub fn seed_gaussians(new_voxels: &[VoxelKey], grid: &VoxelGrid) -> Vec<GaussianPrimitive> {
    let sigma = SEED_SCALE_FACTOR * grid.resolution();
    new_voxels
        .iter()
        .map(|k| {
            let color = match grid.get(k) {
                Some(v) if v.tsdf_weight > 0.0 => v.color.map(|c| c.clamp(0.0, 1.0)),
                _ => [0.5; 3],
            };
            GaussianPrimitive::isotropic(grid.voxel_center(k), sigma, color, SEED_OPACITY)
        })
        .collect()
}
