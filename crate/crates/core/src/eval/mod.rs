//! Rendering, mesh and zero-shot semantic metrics, plus report tables.

mod mesh;
mod semantic;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ColorImage;

pub use crate::splat::ssim;
pub use mesh::{closest_point_on_triangle, mesh_metrics, sample_surface, MeshBvh, MeshEvalConfig, MeshMetrics};
pub use semantic::{
    instance_label_accuracy, match_instances, zero_shot_segmentation, ClassScores, SemanticEvalReport, VoxelVotes,
};

/// Reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

pub fn psnr(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    if !a.same_size(b) {
        return Err(Error::InvalidArgument(format!(
            "PSNR inputs differ in size: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("PSNR of empty images".into()));
    }
    let sum: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    let mse = sum / (3 * a.len()) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

pub fn render_metrics(rendered: &ColorImage, reference: &ColorImage) -> Result<RenderMetrics> {
    Ok(RenderMetrics {
        psnr: psnr(rendered, reference)?,
        ssim: ssim(rendered, reference),
    })
}

/// Aligned text table: one row per metric, one column per scene, plus the
/// row average.
pub fn format_table(title: &str, scenes: &[String], rows: &[(String, Vec<f64>)]) -> String {
    let mut header = vec!["metric".to_string()];
    header.extend(scenes.iter().cloned());
    header.push("avg".into());
    let mut cells: Vec<Vec<String>> = vec![header];
    for (name, vals) in rows {
        let mut r = vec![name.clone()];
        r.extend(vals.iter().map(|v| format!("{v:.4}")));
        let avg = if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        r.push(format!("{avg:.4}"));
        cells.push(r);
    }
    let ncol = cells.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol)
        .map(|c| cells.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    for (i, r) in cells.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c == 0 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (ncol - 1)));
        }
    }
    out
}
