use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::ids::InstanceId;

pub const MAGIC: &[u8; 4] = b"OVCB";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CodebookEntry {
    pub embedding: Embedding,
    /// Accumulated credibility.
    pub weight: f64,
}

/// Per-instance embeddings with credibility weights. Ids are handed out
/// in increasing order and never reused.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceCodebook {
    entries: BTreeMap<InstanceId, CodebookEntry>,
    next_id: u32,
}

impl Default for InstanceCodebook {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
            next_id: 1,
        }
    }
}

impl InstanceCodebook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: InstanceId) -> Option<&CodebookEntry> {
        self.entries.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (InstanceId, &CodebookEntry)> {
        self.entries.iter().map(|(&id, e)| (id, e))
    }

    pub fn next_id(&self) -> InstanceId {
        InstanceId(self.next_id)
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.values().next().map(|e| e.embedding.dim())
    }

    /// Registers a new instance with zero weight; the first fuse sets its
    /// embedding and weight.
    pub fn allocate(&mut self, embedding: Embedding) -> InstanceId {
        let id = InstanceId(self.next_id);
        self.next_id += 1;
        self.entries.insert(id, CodebookEntry { embedding, weight: 0.0 });
        id
    }

    /// Credibility-weighted running mean, renormalized to unit length.
    pub fn fuse(&mut self, id: InstanceId, observed: &Embedding, w: f64) -> Result<()> {
        let entry = self
            .entries
            .get_mut(&id)
            .ok_or_else(|| Error::InvalidArgument(format!("instance {id} is not in the codebook")))?;
        if observed.dim() != entry.embedding.dim() {
            return Err(Error::InvalidArgument(format!(
                "embedding dimension {} does not match codebook dimension {}",
                observed.dim(),
                entry.embedding.dim()
            )));
        }
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::Numerical(format!("credibility {w} for instance {id}")));
        }
        let total = entry.weight + w;
        if w > 0.0 {
            let mixed: Vec<f64> = entry
                .embedding
                .as_slice()
                .iter()
                .zip(observed.as_slice())
                .map(|(f, g)| (entry.weight * f + w * g) / total)
                .collect();
            // exact cancellation keeps the previous direction
            if let Ok(e) = Embedding::normalized(mixed) {
                entry.embedding = e;
            }
        }
        entry.weight = total;
        Ok(())
    }

    /// Most similar instance to `query`; ties go to the smallest id.
    pub fn retrieve_instance(&self, query: &Embedding) -> Result<(InstanceId, f64)> {
        let mut best: Option<(InstanceId, f64)> = None;
        for (&id, e) in &self.entries {
            let s = super::embedding_similarity(&e.embedding, query)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((id, s));
            }
        }
        best.ok_or_else(|| Error::InvalidArgument("cannot retrieve from an empty codebook".into()))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let dim = self.dim().unwrap_or(0);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(dim as u32).to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (id, e) in &self.entries {
            w.write_all(&(id.0 as u64).to_le_bytes())?;
            w.write_all(&(e.weight as f32).to_le_bytes())?;
            for &x in e.embedding.as_slice() {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf4 = [0u8; 4];
        let mut read4 = |r: &mut dyn Read| -> Result<[u8; 4]> {
            r.read_exact(&mut buf4)
                .map_err(|e| Error::Data(format!("truncated codebook: {e}")))?;
            Ok(buf4)
        };
        if &read4(&mut r)? != MAGIC {
            return Err(Error::Data("not a codebook file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read4(&mut r)?);
        if version != VERSION {
            return Err(Error::Data(format!("unsupported codebook version {version}")));
        }
        let dim = u32::from_le_bytes(read4(&mut r)?) as usize;
        let count = u32::from_le_bytes(read4(&mut r)?);
        let mut book = InstanceCodebook::new();
        for _ in 0..count {
            let mut id = [0u8; 8];
            r.read_exact(&mut id)
                .map_err(|e| Error::Data(format!("truncated codebook: {e}")))?;
            let id = u64::from_le_bytes(id);
            let id = InstanceId(
                u32::try_from(id).map_err(|_| Error::Data(format!("instance id {id} out of range")))?,
            );
            let weight = f32::from_le_bytes(read4(&mut r)?) as f64;
            let v: Vec<f64> = (0..dim)
                .map(|_| read4(&mut r).map(|b| f32::from_le_bytes(b) as f64))
                .collect::<Result<_>>()?;
            let embedding = Embedding::normalized(v)
                .map_err(|_| Error::Data(format!("instance {id} has a zero embedding")))?;
            book.entries.insert(id, CodebookEntry { embedding, weight });
            book.next_id = book.next_id.max(id.0 + 1);
        }
        Ok(book)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}
