//! The four-parameter blur model: apply a streak, then recover it with Adam
//! on the parameters.

use openvox::raster::ColorImage;
use openvox::splat::{apply_camera_model, camera_model_backward, CameraModel};

fn main() {
    let (w, h) = (64, 48);
    let sharp = ColorImage::from_fn(w, h, |u, v| {
        let r = ((u as f64 - 30.0).powi(2) + (v as f64 - 20.0).powi(2)) / 40.0;
        let s = ((u as f64 - 45.0).powi(2) + (v as f64 - 30.0).powi(2)) / 25.0;
        [0.1 + 0.8 * (-r).exp(), 0.1 + 0.5 * (-s).exp(), 0.3]
    });
    let truth = CameraModel::new(0.6, 0.4, 2.5, -1.0);
    let target = apply_camera_model(&sharp, &truth);

    let mut cam = CameraModel::default();
    let (mut m, mut v) = ([0.0; 4], [0.0; 4]);
    let n = (3 * sharp.len()) as f64;
    for it in 0..=1500 {
        let obs = apply_camera_model(&sharp, &cam);
        let mut loss = 0.0;
        let grad = ColorImage::from_fn(w, h, |x, y| {
            let (o, t) = (obs.get(x, y), target.get(x, y));
            [0, 1, 2].map(|c| {
                loss += (o[c] - t[c]).powi(2) / n;
                2.0 * (o[c] - t[c]) / n
            })
        });
        if it % 300 == 0 {
            println!("iter {it:3} loss {loss:.3e} params {:?}", cam.as_array().map(|v| (v * 1e3).round() / 1e3));
        }
        let (_, g) = camera_model_backward(&sharp, &cam, &grad);
        let mut p = cam.as_array();
        let k = it + 1;
        for i in 0..4 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let (mh, vh) = (m[i] / (1.0 - 0.9f64.powi(k)), v[i] / (1.0 - 0.999f64.powi(k)));
            p[i] -= 0.05 * mh / (vh.sqrt() + 1e-12);
        }
        cam = CameraModel::from_array(p).clamped();
    }
    println!("injected {:?}", truth.as_array());
}
