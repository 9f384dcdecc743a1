//! Overlapping masks made disjoint and eroded.

use openvox::raster::Mask;
use openvox::scene::postprocess_masks;

fn show(m: &Mask) {
    for y in 0..m.height() {
        let row: String = (0..m.width()).map(|x| if *m.get(x, y) { '#' } else { '.' }).collect();
        println!("  {row}");
    }
}

fn main() {
    let big = Mask::from_fn(12, 8, |x, y| (1..11).contains(&x) && (1..7).contains(&y));
    let small = Mask::from_fn(12, 8, |x, y| (6..10).contains(&x) && (2..6).contains(&y));
    for radius in [0, 1] {
        println!("erosion radius {radius}");
        for (i, m) in postprocess_masks(&[big.clone(), small.clone()], radius).iter().enumerate() {
            println!(" mask {i}, area {}", m.area());
            show(m);
        }
    }
}
