use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// Indexed triangle mesh with per-vertex color.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub colors: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn triangle(&self, f: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| 0.5 * self.face_normal(f).norm())
            .sum()
    }

    /// Undirected edge → number of incident faces.
    pub fn edge_face_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut counts = HashMap::new();
        for &[a, b, c] in &self.faces {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *counts.entry((u.min(v), u.max(v))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Every edge shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_face_counts().values().all(|&n| n == 2)
    }

    pub fn translated(&self, t: Vector3<f64>) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|p| p + t).collect(),
            colors: self.colors.clone(),
            faces: self.faces.clone(),
        }
    }

    /// Axis-aligned rectangle in the plane `z = z0`, split into `n × n` quads.
    pub fn grid_plane(min: [f64; 2], max: [f64; 2], z0: f64, n: usize) -> TriangleMesh {
        let mut m = TriangleMesh::default();
        for j in 0..=n {
            for i in 0..=n {
                let x = min[0] + (max[0] - min[0]) * i as f64 / n as f64;
                let y = min[1] + (max[1] - min[1]) * j as f64 / n as f64;
                m.vertices.push(Point3::new(x, y, z0));
                m.colors.push([0.5; 3]);
            }
        }
        let idx = |i: usize, j: usize| (j * (n + 1) + i) as u32;
        for j in 0..n {
            for i in 0..n {
                m.faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                m.faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        m
    }

    pub fn append(&mut self, other: &TriangleMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.colors.extend_from_slice(&other.colors);
        self.faces
            .extend(other.faces.iter().map(|f| f.map(|i| i + base)));
    }

    /// ASCII PLY with `x y z red green blue` vertices and triangle faces.
    pub fn write_ply(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "ply\nformat ascii 1.0").map_err(io)?;
        writeln!(w, "element vertex {}", self.vertices.len()).map_err(io)?;
        writeln!(
            w,
            "property float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue"
        )
        .map_err(io)?;
        writeln!(w, "element face {}", self.faces.len()).map_err(io)?;
        writeln!(w, "property list uchar int vertex_indices\nend_header").map_err(io)?;
        for (p, c) in self.vertices.iter().zip(&self.colors) {
            let c = c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2]).map_err(io)?;
        }
        for f in &self.faces {
            writeln!(w, "3 {} {} {}", f[0], f[1], f[2]).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}
