//! Writes a synthetic sequence in the replay layout and streams it back.
//!
//! `cargo run --example replay_dataset -- [dataset_dir]`

use openvox::pipeline::{write_synthetic_dataset, PipelineConfig};
use openvox::scene::{load_dataset, ReplayOptions};

fn main() -> openvox::Result<()> {
    let root = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "replay_dataset".into()));
    let mut cfg = PipelineConfig::default();
    cfg.source.frames = 5;
    let manifest = write_synthetic_dataset(&cfg, &root)?;
    println!("wrote {}", manifest.display());

    let stream = load_dataset(&manifest, ReplayOptions::default())?;
    println!("intrinsics {:?}, {} frames", stream.intrinsics(), stream.remaining());
    for f in stream {
        let f = f?;
        println!(
            "  t={} valid depth {} masks {} gt classes {}",
            f.frame.timestamp,
            f.frame.valid_depth_count(),
            f.observation.len(),
            f.gt_classes.is_some()
        );
    }
    Ok(())
}
