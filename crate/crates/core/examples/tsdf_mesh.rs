//! Fuses clean depth of a sphere and writes the marching-cubes mesh.
//!
//! `cargo run --example tsdf_mesh -- [out.ply]`

use openvox::eval::{mesh_metrics, MeshEvalConfig};
use openvox::pipeline::{PipelineConfig, SceneKind, SyntheticSequence};
use openvox::voxel::{extract_mesh, VoxelGrid};

fn main() -> openvox::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "sphere_mesh.ply".into());
    let mut cfg = PipelineConfig::default();
    cfg.source.scene = SceneKind::Sphere;
    cfg.source.frames = 30;
    let seq = SyntheticSequence::from_config(&cfg)?;

    let mut grid = VoxelGrid::new(cfg.resolution, cfg.truncation)?;
    for t in 0..seq.len() {
        grid.integrate_tsdf(&seq.frame(t).frame);
    }
    let mesh = extract_mesh(&grid);
    let err: f64 = mesh.vertices.iter().map(|v| (v.coords.norm() - 0.5).abs()).sum::<f64>() / mesh.vertices.len() as f64;
    println!("{} blocks, {} vertices, {} faces", grid.block_count(), mesh.vertices.len(), mesh.faces.len());
    println!("mean distance to the true sphere {:.2} cm, watertight {}", 100.0 * err, mesh.is_watertight());
    let own = mesh_metrics(&mesh, &mesh, &MeshEvalConfig::default())?;
    println!("self-comparison: acc {:.1e} cm, f-score {:.3}", own.acc_cm, own.f_score);
    mesh.write_ply(out.as_ref())?;
    println!("wrote {out}");
    Ok(())
}
