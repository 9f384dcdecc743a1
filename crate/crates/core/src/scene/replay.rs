//! Replay datasets on disk.
//!
//! A dataset directory holds `intrinsics.json` (`{fx,fy,cx,cy,width,height}`)
//! and a newline-delimited JSON manifest with one record per frame:
//!
//! ```text
//! {"t":0,"color":"c0.png","depth":"d0.png","pose":[16 floats, row-major],
//!  "masks":"m0.png","embeddings":"e0.bin"}
//! ```
//!
//! Paths are relative to the manifest. Color is 8-bit RGB, depth 16-bit
//! millimeters (0 = invalid), masks a 16-bit index image where value `k > 0`
//! selects mask `k - 1`. Embedding files are little-endian `u32 count`,
//! `u32 dim`, then `count × dim` `f32`. Optional fields: `captions` (array of
//! strings) and `gt_classes` (16-bit class-id PNG, 0 = unlabeled). A sibling
//! `classes.json` maps class ids to embeddings for evaluation.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::ids::ClassId;
use crate::raster::{ColorImage, DepthImage, Image, Mask};
use crate::scene::frame::{FrameBundle, SegObservation};

pub const INTRINSICS_FILE: &str = "intrinsics.json";
pub const CLASSES_FILE: &str = "classes.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub t: u64,
    pub color: String,
    pub depth: String,
    pub pose: Vec<f64>,
    pub masks: String,
    pub embeddings: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_classes: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: u32,
    #[serde(default)]
    pub name: String,
    pub embedding: Vec<f64>,
}

/// One decoded replay frame.
#[derive(Clone, Debug)]
pub struct ReplayFrame {
    pub frame: FrameBundle,
    pub observation: SegObservation,
    pub gt_classes: Option<Image<Option<ClassId>>>,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ReplayOptions {
    /// Expected embedding dimension; inferred from the first frame if unset.
    pub embedding_dim: Option<usize>,
}

/// Frames of a replay dataset in ascending timestamp order.
pub struct ReplayStream {
    root: PathBuf,
    intrinsics: Intrinsics,
    records: std::vec::IntoIter<ManifestRecord>,
    embedding_dim: Option<usize>,
}

/// Opens a manifest; frames are decoded lazily as the stream is consumed.
pub fn load_dataset(manifest_path: &Path, options: ReplayOptions) -> Result<ReplayStream> {
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let intrinsics = read_intrinsics(&root.join(INTRINSICS_FILE))?;
    let file = File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let mut records = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!(
                "{}: line {}: {e}",
                manifest_path.display(),
                line_no + 1
            ))
        })?;
        records.push(rec);
    }
    records.sort_by_key(|r| r.t);
    Ok(ReplayStream {
        root,
        intrinsics,
        records: records.into_iter(),
        embedding_dim: options.embedding_dim,
    })
}

impl ReplayStream {
    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn remaining(&self) -> usize {
        self.records.len()
    }

    fn decode(&mut self, rec: ManifestRecord) -> Result<ReplayFrame> {
        let t = rec.t;
        let k = self.intrinsics;
        let color = read_color(&self.root.join(&rec.color), t)?;
        let depth = read_depth(&self.root.join(&rec.depth), t)?;
        let pose = Pose::from_row_major(&rec.pose).map_err(|e| Error::Format {
            frame: t,
            reason: format!("pose: {e}"),
        })?;
        let index = read_u16_image(&self.root.join(&rec.masks), t)?;
        let embeddings = read_embeddings(&self.root.join(&rec.embeddings), t)?;

        let dim = embeddings.first().map(Vec::len);
        if let (Some(want), Some(got)) = (self.embedding_dim, dim) {
            if want != got {
                return Err(Error::Format {
                    frame: t,
                    reason: format!("mask 0: embedding length {got}, expected {want}"),
                });
            }
        }
        if self.embedding_dim.is_none() {
            self.embedding_dim = dim;
        }

        let count = embeddings.len();
        let (w, h) = (index.width(), index.height());
        let mut masks = vec![Mask::new(w, h); count];
        for (x, y, &v) in index.enumerate() {
            if v == 0 {
                continue;
            }
            let k = v as usize - 1;
            if k >= count {
                return Err(Error::Format {
                    frame: t,
                    reason: format!("mask index {k} has no embedding ({count} embeddings)"),
                });
            }
            masks[k].set(x, y, true);
        }
        let embeddings = embeddings
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                Embedding::normalized(v).map_err(|_| Error::Format {
                    frame: t,
                    reason: format!("mask {k}: zero or non-finite embedding"),
                })
            })
            .collect::<Result<Vec<_>>>()?;

        if let Some(c) = &rec.captions {
            if c.len() != count {
                return Err(Error::Format {
                    frame: t,
                    reason: format!("{} captions for {count} masks", c.len()),
                });
            }
        }
        let gt_classes = match &rec.gt_classes {
            Some(p) => {
                let img = read_u16_image(&self.root.join(p), t)?;
                Some(img.map(|&v| (v > 0).then_some(ClassId(v as u32))))
            }
            None => None,
        };

        let frame = FrameBundle {
            color,
            depth,
            pose,
            intrinsics: k,
            timestamp: t,
        };
        frame.validate()?;
        if !index.same_size(&frame.depth) {
            return Err(Error::Format {
                frame: t,
                reason: "mask image size differs from depth".into(),
            });
        }
        if let Some(g) = &gt_classes {
            if !g.same_size(&frame.depth) {
                return Err(Error::Format {
                    frame: t,
                    reason: "gt_classes image size differs from depth".into(),
                });
            }
        }
        Ok(ReplayFrame {
            frame,
            observation: SegObservation {
                masks,
                embeddings,
                captions: rec.captions,
            },
            gt_classes,
        })
    }
}

impl Iterator for ReplayStream {
    type Item = Result<ReplayFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.records.next()?;
        Some(self.decode(rec))
    }
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let k: Intrinsics = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    k.validate()?;
    Ok(k)
}

pub fn read_classes(path: &Path) -> Result<BTreeMap<ClassId, Embedding>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ClassEntry> = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    entries
        .into_iter()
        .map(|c| Ok((ClassId(c.id), Embedding::normalized(c.embedding)?)))
        .collect()
}

fn open_image(path: &Path, frame: u64) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::Load {
        frame,
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn read_color(path: &Path, frame: u64) -> Result<ColorImage> {
    let img = open_image(path, frame)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(ColorImage::from_fn(w as usize, h as usize, |x, y| {
        let p = img.get_pixel(x as u32, y as u32).0;
        [
            p[0] as f64 / 255.0,
            p[1] as f64 / 255.0,
            p[2] as f64 / 255.0,
        ]
    }))
}

fn read_u16_image(path: &Path, frame: u64) -> Result<Image<u16>> {
    let img = open_image(path, frame)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma16(buf) => Ok(Image::from_vec(w, h, buf.into_raw())),
        DynamicImage::ImageLuma8(buf) => Ok(Image::from_vec(
            w,
            h,
            buf.into_raw().into_iter().map(u16::from).collect(),
        )),
        other => Err(Error::Format {
            frame,
            reason: format!(
                "{}: expected a single-channel PNG, got {:?}",
                path.display(),
                other.color()
            ),
        }),
    }
}

fn read_depth(path: &Path, frame: u64) -> Result<DepthImage> {
    let mm = read_u16_image(path, frame)?;
    Ok(mm.map(|&v| v as f64 / 1000.0))
}

fn read_embeddings(path: &Path, frame: u64) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::Load {
        frame,
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if bytes.len() < 8 {
        return Err(Error::Format {
            frame,
            reason: format!("{}: truncated embedding header", path.display()),
        });
    }
    let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * dim * 4;
        let end = start + dim * 4;
        if end > body.len() {
            return Err(Error::Format {
                frame,
                reason: format!(
                    "mask {k}: embedding record truncated (have {} bytes, need {end})",
                    body.len()
                ),
            });
        }
        out.push(
            body[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        );
    }
    if body.len() != count * dim * 4 {
        return Err(Error::Format {
            frame,
            reason: format!(
                "mask {count}: {} trailing bytes after {count} embeddings of length {dim}",
                body.len() - count * dim * 4
            ),
        });
    }
    Ok(out)
}

pub fn encode_embeddings(embeddings: &[Embedding]) -> Vec<u8> {
    let dim = embeddings.first().map_or(0, Embedding::dim);
    let mut out = Vec::with_capacity(8 + embeddings.len() * dim * 4);
    out.extend_from_slice(&(embeddings.len() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for e in embeddings {
        for &v in e.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_color_png(path: &Path, img: &ColorImage) -> Result<()> {
    let buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let c = img.get(x as usize, y as usize);
        Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    buf.save(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_u16_png(path: &Path, img: &Image<u16>) -> Result<()> {
    let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.as_slice().to_vec(),
    )
    .expect("buffer size matches dimensions");
    buf.save(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_depth_png(path: &Path, depth: &DepthImage) -> Result<()> {
    write_u16_png(
        path,
        &depth.map(|&d| (d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16),
    )
}

/// Writes frames in the replay layout; call [`ReplayWriter::finish`] to flush
/// the manifest.
pub struct ReplayWriter {
    root: PathBuf,
    manifest: BufWriter<File>,
}

impl ReplayWriter {
    pub fn create(root: &Path, intrinsics: &Intrinsics) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let k_path = root.join(INTRINSICS_FILE);
        let text = serde_json::to_string_pretty(intrinsics).expect("intrinsics serialize");
        fs::write(&k_path, text).map_err(|e| Error::io(&k_path, e))?;
        let m_path = root.join(MANIFEST_FILE);
        let manifest = BufWriter::new(File::create(&m_path).map_err(|e| Error::io(&m_path, e))?);
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn write_frame(
        &mut self,
        frame: &FrameBundle,
        obs: &SegObservation,
        gt_classes: Option<&Image<Option<ClassId>>>,
    ) -> Result<()> {
        let t = frame.timestamp;
        let name = |kind: &str, ext: &str| format!("frame_{t:06}_{kind}.{ext}");
        let rec = ManifestRecord {
            t,
            color: name("color", "png"),
            depth: name("depth", "png"),
            pose: frame.pose.to_row_major().to_vec(),
            masks: name("masks", "png"),
            embeddings: name("embeddings", "bin"),
            captions: obs.captions.clone(),
            gt_classes: gt_classes.map(|_| name("classes", "png")),
        };
        write_color_png(&self.root.join(&rec.color), &frame.color)?;
        write_depth_png(&self.root.join(&rec.depth), &frame.depth)?;
        let (w, h) = (frame.depth.width(), frame.depth.height());
        let mut index = Image::<u16>::new(w, h);
        for (k, m) in obs.masks.iter().enumerate() {
            for (i, &on) in m.as_slice().iter().enumerate() {
                if on {
                    index.as_mut_slice()[i] = k as u16 + 1;
                }
            }
        }
        write_u16_png(&self.root.join(&rec.masks), &index)?;
        let e_path = self.root.join(&rec.embeddings);
        fs::write(&e_path, encode_embeddings(&obs.embeddings)).map_err(|e| Error::io(&e_path, e))?;
        if let (Some(g), Some(p)) = (gt_classes, &rec.gt_classes) {
            write_u16_png(&self.root.join(p), &g.map(|c| c.map_or(0, |c| c.0 as u16)))?;
        }
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(self.manifest, "{line}").map_err(|e| Error::io(self.manifest_path(), e))
    }

    pub fn write_classes(&self, classes: &BTreeMap<ClassId, Embedding>) -> Result<()> {
        let entries: Vec<ClassEntry> = classes
            .iter()
            .map(|(id, e)| ClassEntry {
                id: id.0,
                name: format!("class_{}", id.0),
                embedding: e.as_slice().to_vec(),
            })
            .collect();
        let path = self.root.join(CLASSES_FILE);
        let text = serde_json::to_string_pretty(&entries).expect("classes serialize");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        let path = self.manifest_path();
        self.manifest.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::synthetic::{orbit_trajectory, raycast_frame, tabletop_scene};
    use nalgebra::Point3;

    fn write_sample(dir: &Path, frames: usize) -> PathBuf {
        let world = tabletop_scene(2, 8, 1).unwrap();
        let k = Intrinsics::centered(32, 24, 70.0);
        let mut w = ReplayWriter::create(dir, &k).unwrap();
        // written out of order on purpose
        let poses = orbit_trajectory(Point3::new(0.0, 0.0, 0.2), 1.8, 1.0, -1.6, 0.5, frames);
        for t in (0..frames).rev() {
            let rf = raycast_frame(&world, &poses[t], &k, t as u64);
            w.write_frame(&rf.frame, &rf.observation, Some(&rf.class_ids)).unwrap();
        }
        w.write_classes(&world.class_embeddings).unwrap();
        w.finish().unwrap()
    }

    #[test]
    fn three_frames_in_timestamp_order() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_sample(dir.path(), 3);
        let frames: Vec<_> = load_dataset(&manifest, ReplayOptions::default())
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(frames.len(), 3);
        let ts: Vec<u64> = frames.iter().map(|f| f.frame.timestamp).collect();
        assert_eq!(ts, vec![0, 1, 2]);
        for f in &frames {
            f.observation.validate().unwrap();
            assert!(f.gt_classes.is_some());
        }
        let classes = read_classes(&dir.path().join(CLASSES_FILE)).unwrap();
        assert_eq!(classes.len(), 2);
    }

    #[test]
    fn depth_millimeters_to_meters() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        write_u16_png(&p, &Image::filled(4, 3, 1000u16)).unwrap();
        let d = read_depth(&p, 0).unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn wrong_embedding_length_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_sample(dir.path(), 2);
        let opts = ReplayOptions {
            embedding_dim: Some(16),
        };
        let err = load_dataset(&manifest, opts).unwrap().next().unwrap().unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format { frame: 0, .. }), "{msg}");
        assert!(msg.contains("mask 0"), "{msg}");
    }

    #[test]
    fn missing_file_names_the_frame() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_sample(dir.path(), 3);
        fs::remove_file(dir.path().join("frame_000001_depth.png")).unwrap();
        let results: Vec<_> = load_dataset(&manifest, ReplayOptions::default()).unwrap().collect();
        assert!(results[0].is_ok());
        match &results[1] {
            Err(Error::Load { frame, .. }) => assert_eq!(*frame, 1),
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_embedding_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 4 * 4 + 8]);
        fs::write(&p, bytes).unwrap();
        let err = read_embeddings(&p, 7).unwrap_err().to_string();
        assert!(err.contains("frame 7") && err.contains("mask 1"), "{err}");
    }
}
