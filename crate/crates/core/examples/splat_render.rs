//! Renders a small Gaussian field and writes color, depth and normal PNGs.
//!
//! `cargo run --example splat_render -- [out_dir]`

use nalgebra::{Point3, Vector3};
use openvox::gaussians::{GaussianField, GaussianPrimitive};
use openvox::geometry::{Intrinsics, Pose};
use openvox::splat::render;

fn main() -> openvox::Result<()> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "splat_render".into()));
    std::fs::create_dir_all(&out).map_err(|e| openvox::Error::io(&out, e))?;

    let mut field = GaussianField::new();
    for i in 0..12 {
        for j in 0..12 {
            let (x, y) = (i as f64 * 0.06 - 0.33, j as f64 * 0.06 - 0.33);
            field.extend([GaussianPrimitive::isotropic(
                Point3::new(x, y, 0.5 * x + 0.1 * y),
                0.035,
                [0.5 + x, 0.5 + y, 0.6],
                0.8,
            )]);
        }
    }
    let k = Intrinsics::centered(96, 72, 60.0);
    let pose = Pose::look_at(Point3::new(0.3, -0.4, 1.4), Point3::origin(), Vector3::y())?;
    let r = render(&field, &pose, &k);
    let covered = r.alpha.as_slice().iter().filter(|&&a| a > 0.5).count();
    println!("{} Gaussians, {covered} of {} pixels above alpha 0.5", field.len(), r.alpha.len());
    r.write_pngs(&out, "view", &k)?;
    println!("wrote {}/view_{{color,depth,normal}}.png", out.display());
    Ok(())
}
