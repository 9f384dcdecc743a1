//! Build, render, evaluate and export in one go, as the CLI does.
//!
//! `cargo run --release --example full_pipeline -- [out_dir]`

use openvox::pipeline::{run_build, run_eval, run_export_mesh, run_export_splat, run_render, PipelineConfig};

fn main() -> openvox::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "full_pipeline".into()));
    let mut cfg = PipelineConfig::default();
    cfg.source.frames = 10;
    cfg.optim.warmup_iters = 200;
    cfg.out_dir = out.clone();

    let report = run_build(&cfg)?;
    for s in &report.stage_totals_ms {
        println!("{:<16} {:>9.1} ms", s.stage, s.ms);
    }
    println!("{:?}", report.counts);

    let views = run_render(&out, None, Some(3))?;
    println!("rendered {} views into {}/renders", views.len(), out.display());
    print!("{}", run_eval(&out)?.tables());
    let mesh = run_export_mesh(&out, &out.join("mesh.ply"))?;
    let n = run_export_splat(&out, &out.join("splat.ply"))?;
    println!("mesh.ply {} faces, splat.ply {n} Gaussians", mesh.faces.len());
    Ok(())
}
