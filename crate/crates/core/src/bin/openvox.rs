use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use openvox::pipeline::{self, PipelineConfig};
use openvox::{Error, Result};

#[derive(Parser)]
#[command(name = "openvox", version, about = "Incremental RGB-D instance mapping with a Gaussian splat field")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (artifact directory for render, eval and exports).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Frames to process or render.
    #[arg(long, global = true)]
    frames: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a map and write its artifacts.
    Build,
    /// Render color, depth and normals at the build cameras.
    Render,
    /// Rendering, mesh and semantic metrics against ground truth.
    Eval,
    /// Write the TSDF surface as a PLY mesh.
    ExportMesh,
    /// Write the Gaussian field as a splat PLY.
    ExportSplat,
    /// Write the configured synthetic sequence as a replay dataset.
    Synth,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(n) = self.frames {
            cfg.source.frames = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn artifact_dir(&self) -> Result<PathBuf> {
        match &self.out {
            Some(o) => Ok(o.clone()),
            None => Ok(self.config()?.out_dir),
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::Build => {
            let cfg = c.config()?;
            let r = pipeline::run_build(&cfg)?;
            let n = &r.counts;
            println!(
                "built {} frames: {} voxels, {} blocks, {} instances, {} gaussians, {} keyframes",
                n.frames, n.voxels, n.blocks, n.instances, n.gaussians, n.keyframes
            );
            for s in &r.stage_totals_ms {
                println!("  {:<16} {:>10.2} ms", s.stage, s.ms);
            }
            println!("artifacts in {}", cfg.out_dir.display());
        }
        Command::Render => {
            let dir = c.artifact_dir()?;
            let outs = pipeline::run_render(&dir, None, c.frames)?;
            println!("rendered {} views into {}", outs.len(), dir.join("renders").display());
        }
        Command::Eval => {
            let dir = c.artifact_dir()?;
            let r = pipeline::run_eval(&dir)?;
            print!("{}", r.tables());
        }
        Command::ExportMesh => {
            let dir = c.artifact_dir()?;
            let out = dir.join("mesh.ply");
            let m = pipeline::run_export_mesh(&dir, &out)?;
            println!("{} vertices, {} faces -> {}", m.vertices.len(), m.faces.len(), out.display());
        }
        Command::ExportSplat => {
            let dir = c.artifact_dir()?;
            let out = dir.join("splat.ply");
            let n = pipeline::run_export_splat(&dir, &out)?;
            println!("{n} gaussians -> {}", out.display());
        }
        Command::Synth => {
            let cfg = c.config()?;
            let manifest = pipeline::write_synthetic_dataset(&cfg, Path::new(&cfg.out_dir))?;
            println!("wrote {}", manifest.display());
        }
    }
    Ok(())
}

fn report(e: &Error) {
    eprintln!("error: {e}");
    let mut src = std::error::Error::source(e);
    while let Some(s) = src {
        eprintln!("  caused by: {s}");
        src = s.source();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
