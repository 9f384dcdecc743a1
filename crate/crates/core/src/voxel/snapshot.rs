//! Binary grid snapshot.
//!
//! Layout, little endian: magic `OVXG`, u32 version, f32 resolution, u64
//! block count, then per block: three i32 block coordinates followed by 512
//! voxel records `[f32 tsdf, f32 weight, 3×f32 color, u8 registered,
//! u64 first_labeled (u64::MAX when unset), u16 n, n×(u32 id, u32 count)]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Voxel, VoxelGrid, BLOCK_VOXELS};
use crate::error::{Error, Result};
use crate::ids::InstanceId;

pub const MAGIC: &[u8; 4] = b"OVXG";
pub const VERSION: u32 = 1;

pub fn write_snapshot(grid: &VoxelGrid, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.resolution() as f32).to_le_bytes())?;
    w.write_all(&(grid.block_count() as u64).to_le_bytes())?;
    for coord in grid.block_coords() {
        for c in coord {
            w.write_all(&c.to_le_bytes())?;
        }
        let block = &grid.blocks[&coord];
        for v in block.iter() {
            w.write_all(&(v.tsdf as f32).to_le_bytes())?;
            w.write_all(&(v.tsdf_weight as f32).to_le_bytes())?;
            for c in v.color {
                w.write_all(&(c as f32).to_le_bytes())?;
            }
            w.write_all(&[v.registered as u8])?;
            w.write_all(&v.first_labeled.unwrap_or(u64::MAX).to_le_bytes())?;
            w.write_all(&(v.counts.len() as u16).to_le_bytes())?;
            for &(id, n) in &v.counts {
                w.write_all(&id.0.to_le_bytes())?;
                w.write_all(&n.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| Error::Data(format!("truncated grid snapshot: {e}")))?;
        Ok(b)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.bytes()?) as f64)
    }
}

/// Reads a snapshot. The header stores no truncation distance, so the
/// caller supplies it; `None` means four voxels.
pub fn read_snapshot(r: impl Read, truncation: Option<f64>) -> Result<VoxelGrid> {
    let mut c = Cursor { inner: r };
    if &c.bytes::<4>()? != MAGIC {
        return Err(Error::Data("not a grid snapshot (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported grid snapshot version {version}")));
    }
    let res = c.f32()?;
    let mut grid = match truncation {
        Some(t) => VoxelGrid::new(res, t)?,
        None => VoxelGrid::with_resolution(res)?,
    };
    let count = c.u64()?;
    let mut max_stamp = 0;
    for _ in 0..count {
        let coord = [c.i32()?, c.i32()?, c.i32()?];
        let mut voxels = Vec::with_capacity(BLOCK_VOXELS);
        for _ in 0..BLOCK_VOXELS {
            let mut v = Voxel {
                tsdf: c.f32()?,
                tsdf_weight: c.f32()?,
                color: [c.f32()?, c.f32()?, c.f32()?],
                ..Voxel::default()
            };
            v.registered = c.bytes::<1>()?[0] != 0;
            let stamp = c.u64()?;
            v.first_labeled = (stamp != u64::MAX).then_some(stamp);
            max_stamp = max_stamp.max(v.first_labeled.unwrap_or(0));
            let n = c.u16()?;
            for _ in 0..n {
                v.counts.push((InstanceId(c.u32()?), c.u32()?));
            }
            if v.counts.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(Error::Data("grid snapshot has unsorted instance counts".into()));
            }
            voxels.push(v);
        }
        grid.insert_block(coord, voxels);
    }
    grid.set_frame_counter(max_stamp);
    Ok(grid)
}

pub fn save(grid: &VoxelGrid, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_snapshot(grid, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, truncation: Option<f64>) -> Result<VoxelGrid> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_snapshot(BufReader::new(file), truncation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::VoxelKey;
    use nalgebra::Point3;

    #[test]
    fn round_trip_preserves_voxels() {
        let mut g = VoxelGrid::with_resolution(0.05).unwrap();
        g.fill_from_sdf(
            Point3::new(-0.2, -0.2, -0.2),
            Point3::new(0.2, 0.2, 0.2),
            |p| p.coords.norm() - 0.1,
            |p| [p.x.abs(), 0.25, 0.5],
        );
        let k = VoxelKey::from_index([1, 1, 1]);
        g.add_label(&k, InstanceId(4));
        g.add_label(&k, InstanceId(2));
        g.get_or_allocate(&k).registered = true;

        let mut buf = Vec::new();
        write_snapshot(&g, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"OVXG");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(buf[8..12].try_into().unwrap()), 0.05);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), g.block_count() as u64);

        let h = read_snapshot(buf.as_slice(), None).unwrap();
        assert_eq!(h.block_coords(), g.block_coords());
        assert_eq!(h.label_query(&k), Some(InstanceId(2)));
        assert_eq!(h.instance_size(InstanceId(2)), 1);
        assert!(h.get(&k).unwrap().registered);
        for (key, v) in g.iter_voxels() {
            let w = h.get(&key).unwrap();
            assert!((v.tsdf - w.tsdf).abs() < 1e-6);
            assert_eq!(v.counts, w.counts);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_snapshot(&b"NOPE\x01\0\0\0"[..], None).is_err());
        let mut buf = Vec::new();
        write_snapshot(&VoxelGrid::with_resolution(0.03).unwrap(), &mut buf).unwrap();
        buf[12] = 3; // claims three blocks, has none
        assert!(read_snapshot(buf.as_slice(), None).is_err());
    }
}
