//! Zero-shot semantic segmentation of a fused map against per-voxel classes.

use openvox::eval::{zero_shot_segmentation, VoxelVotes};
use openvox::pipeline::{Mapper, PipelineConfig, SyntheticSequence};

fn main() -> openvox::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.optimize = false;
    cfg.erosion_radius = 0;
    let seq = SyntheticSequence::from_config(&cfg)?;
    let mut m = Mapper::new(&cfg)?;
    let mut votes = VoxelVotes::new();
    let mut frames = Vec::new();
    for t in 0..seq.len() {
        let f = seq.frame(t);
        m.process(&f.frame, &f.observation)?;
        frames.push(f);
    }
    for f in &frames {
        votes.add_frame(&m.grid, &f.frame, f.gt_classes.as_ref().expect("synthetic"))?;
    }
    let r = zero_shot_segmentation(&m.grid, &m.codebook, seq.class_embeddings(), &votes.labels())?;
    for (class, s) in &r.per_class {
        println!("class {}: IoU {:.3} acc {:.3} support {}", class.0, s.iou, s.acc, s.support);
    }
    println!("mIoU {:.3} fIoU {:.3} mAcc {:.3} fAcc {:.3}", r.miou, r.fiou, r.macc, r.facc);
    Ok(())
}
