//! End-to-end acceptance checks. Runs every check, prints one PASS/FAIL line
//! each, and exits non-zero if any failed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use openvox::eval::{instance_label_accuracy, mesh_metrics, ssim, zero_shot_segmentation, MeshEvalConfig, VoxelVotes};
use openvox::fusion::UpdateRule;
use openvox::gaussians::{GaussianField, GaussianPrimitive, SEED_OPACITY, SEED_SCALE_FACTOR};
use openvox::geometry::{Intrinsics, Pose};
use openvox::ids::InstanceId;
use openvox::pipeline::{
    run_build, Mapper, PipelineConfig, SceneKind, SyntheticSequence, ASSOCIATION_LOG_FILE, CODEBOOK_FILE,
};
use openvox::raster::{ColorImage, DepthImage};
use openvox::scene::FrameBundle;
use openvox::splat::{
    apply_camera_model, backward, camera_model_backward, loss_all, loss_signature, normal_from_depth, render,
    render_with_state, CameraModel, LossWeights,
};
use openvox::voxel::{extract_mesh, instance_tuple, VoxelGrid};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Final instance count, voxel-argmax accuracy against the majority GT
/// instance, and the merge rate: the share of associations to an existing
/// instance whose creator mask covered a different GT object.
struct FusionRun {
    instances: usize,
    accuracy: f64,
    merge_rate: f64,
}

fn run_fusion(cfg: &PipelineConfig) -> FusionRun {
    let seq = SyntheticSequence::from_config(cfg).unwrap();
    let mut m = Mapper::new(cfg).unwrap();
    let mut owner: HashMap<u32, InstanceId> = HashMap::new();
    let (mut merges, mut existing) = (0usize, 0usize);
    let mut frames = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        let f = seq.frame(t);
        let before = m.associations.len();
        m.process(&f.frame, &f.observation).unwrap();
        let gi = f.gt_instances.as_ref().unwrap();
        for r in &m.associations[before..] {
            let mut votes: BTreeMap<InstanceId, usize> = BTreeMap::new();
            for (x, y, &on) in f.observation.masks[r.k].enumerate() {
                if let (true, Some(g)) = (on, gi.get(x, y)) {
                    *votes.entry(*g).or_default() += 1;
                }
            }
            let Some(gt) = votes.iter().max_by_key(|(id, n)| (**n, std::cmp::Reverse(**id))).map(|(id, _)| *id) else {
                continue;
            };
            if r.new {
                owner.insert(r.id, gt);
            } else {
                existing += 1;
                if owner.get(&r.id) != Some(&gt) {
                    merges += 1;
                }
            }
        }
        frames.push(f);
    }
    let mut votes = VoxelVotes::new();
    for f in &frames {
        votes.add_frame(&m.grid, &f.frame, f.gt_instances.as_ref().unwrap()).unwrap();
    }
    FusionRun {
        instances: m.codebook.len(),
        accuracy: instance_label_accuracy(&m.grid, &votes.labels()),
        merge_rate: merges as f64 / existing.max(1) as f64,
    }
}

fn fusion_only() -> PipelineConfig {
    PipelineConfig {
        optimize: false,
        ..PipelineConfig::default()
    }
}

fn dirichlet_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let mut grid = VoxelGrid::with_resolution(0.05).unwrap();
        let key = grid.world_to_voxel(&Point3::new(0.1, 0.2, 0.3)).unwrap();
        grid.get_or_allocate(&key);
        let n = rng.random_range(1..=60);
        let k = rng.random_range(1..=8u32);
        let labels: Vec<u32> = (0..n).map(|_| rng.random_range(1..=k)).collect();
        for &l in &labels {
            grid.add_label(&key, InstanceId(l));
        }
        let t = grid.instance_tuple(&key);
        let mut freq: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in &labels {
            *freq.entry(l).or_default() += 1;
        }
        let exact = t.probabilities.len() == freq.len()
            && freq.iter().all(|(&l, &c)| t.get(InstanceId(l)) == c as f64 / n as f64);
        if !exact || instance_tuple(grid.get(&key).unwrap()) != t {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(mismatches == 0 && secs < 5.0, format!("1000 sequences, {mismatches} mismatches, {secs:.2} s"))
}

fn association_noise_free() -> Outcome {
    let start = Instant::now();
    let r = run_fusion(&fusion_only());
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r.instances == 4 && r.accuracy >= 0.99 && secs < 60.0,
        format!("instances {}, accuracy {:.4}, {secs:.2} s", r.instances, r.accuracy),
    )
}

fn association_robustness() -> Outcome {
    let mut cfg = fusion_only();
    cfg.noise.p_drop = 0.2;
    cfg.noise.p_split = 0.2;
    cfg.noise.embed_sigma = 0.1;
    let counting = run_fusion(&cfg);
    cfg.fusion.update_rule = UpdateRule::LastWriteWins;
    let lww = run_fusion(&cfg);
    outcome(
        counting.accuracy >= 0.9 && counting.accuracy > lww.accuracy,
        format!(
            "counting {:.4} ({} instances), last-write-wins {:.4} ({} instances)",
            counting.accuracy, counting.instances, lww.accuracy, lww.instances
        ),
    )
}

fn smooth_image(w: usize, h: usize, seed: u64) -> ColorImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                rng.random_range(8.0..w as f64 - 8.0),
                rng.random_range(8.0..h as f64 - 8.0),
                rng.random_range(3.0..6.0),
                [rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    ColorImage::from_fn(w, h, |u, v| {
        let mut c = [0.1; 3];
        for (x, y, s, a) in &blobs {
            let e = (-((u as f64 - x).powi(2) + (v as f64 - y).powi(2)) / (2.0 * s * s)).exp();
            for ch in 0..3 {
                c[ch] += 0.6 * a[ch] * e;
            }
        }
        c
    })
}

fn camera_model_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = ColorImage::from_fn(20, 16, |_, _| [rng.random(), rng.random(), rng.random()]);

    let mut brightness_err: f64 = 0.0;
    for (a, b) in [(0.5, 0.5), (0.3, 0.9), (1.2, 0.0), (0.0, 0.4)] {
        let out = apply_camera_model(&img, &CameraModel::new(a, b, 0.0, 0.0));
        for (o, i) in out.as_slice().iter().zip(img.as_slice()) {
            for ch in 0..3 {
                brightness_err = brightness_err.max((o[ch] - (a + b) * i[ch]).abs());
            }
        }
    }

    // Impulse through the model against a direct convolution with the
    // kernel `wr * delta + wt * tent(shift)`.
    let tent = |t: f64| (1.0 - t.abs()).max(0.0);
    let mut streak_err: f64 = 0.0;
    for &(wr, wt, dx, dy) in &[(0.6, 0.4, 2.3, 0.0), (0.5, 0.5, -1.7, 0.8), (0.2, 0.7, 0.45, -2.25)] {
        let (px, py) = (16usize, 12usize);
        let mut imp = ColorImage::new(32, 24);
        imp.set(px, py, [1.0, 0.5, 0.25]);
        let out = apply_camera_model(&imp, &CameraModel::new(wr, wt, dx, dy));
        for (u, v, o) in out.enumerate() {
            let mut want = [0.0; 3];
            for (s, t, i) in imp.enumerate() {
                let d = if (u, v) == (s, t) { wr } else { 0.0 };
                let k = d + wt * tent(u as f64 - s as f64 - dx) * tent(v as f64 - t as f64 - dy);
                for ch in 0..3 {
                    want[ch] += k * i[ch];
                }
            }
            for ch in 0..3 {
                streak_err = streak_err.max((o[ch] - want[ch]).abs());
            }
        }
    }

    let sharp = smooth_image(64, 48, 9);
    let injected = CameraModel::new(0.5, 0.5, 3.0, 0.0);
    let target = apply_camera_model(&sharp, &injected);
    let mut p = CameraModel::default().as_array();
    let (mut m, mut v) = ([0.0; 4], [0.0; 4]);
    let n = (3 * target.len()) as f64;
    for it in 1..=600 {
        let cam = CameraModel::from_array(p);
        let obs = apply_camera_model(&sharp, &cam);
        let grad_out = ColorImage::from_fn(64, 48, |x, y| {
            let (o, t) = (obs.get(x, y), target.get(x, y));
            [0, 1, 2].map(|c| 2.0 * (o[c] - t[c]) / n)
        });
        let (_, g) = camera_model_backward(&sharp, &cam, &grad_out);
        for i in 0..4 {
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(it));
            let vh = v[i] / (1.0 - 0.999f64.powi(it));
            p[i] -= 0.05 * mh / (vh.sqrt() + 1e-12);
        }
    }
    let shift_err = (p[2].abs() - injected.x_trans.abs()).abs();
    outcome(
        brightness_err <= 1e-12 && streak_err <= 1e-9 && shift_err <= 0.5,
        format!(
            "brightness {brightness_err:.1e}, streak {streak_err:.1e}, recovered x_trans {:.3} (injected {})",
            p[2], injected.x_trans
        ),
    )
}

fn random_field(rng: &mut ChaCha8Rng) -> GaussianField {
    let mut f = GaussianField::new();
    let n = rng.random_range(1..=10);
    for _ in 0..n {
        f.extend([GaussianPrimitive::isotropic(
            Point3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(1.2..2.5)),
            rng.random_range(0.08..0.3),
            [rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
            rng.random_range(0.1..0.9),
        )]);
    }
    f
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let k = Intrinsics::new(30.0, 30.0, 15.5, 15.5, 32, 32).unwrap();
    let pose = Pose::identity();
    let weights = LossWeights::default();
    let h = 1e-6;
    let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for scene in 0..50u64 {
        let field = random_field(&mut rng);
        let target_depth = render(&random_field(&mut rng), &pose, &k).normalized_depth(0.3);
        let target = FrameBundle {
            color: ColorImage::from_fn(32, 32, |_, _| [rng.random(), rng.random(), rng.random()]),
            depth: DepthImage::from_fn(32, 32, |x, y| {
                let d = *target_depth.get(x, y);
                if d > 0.0 {
                    d
                } else {
                    2.0 + 0.01 * x as f64
                }
            }),
            pose,
            intrinsics: k,
            timestamp: scene,
        };
        let cam = CameraModel::new(
            rng.random_range(0.3..0.8),
            rng.random_range(0.2..0.7),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let state = render_with_state(&field, &pose, &k);
        let grads = backward(&state, &field, &cam, &target, &weights).unwrap();
        let base_sig = (state.event_signature(), loss_signature(&state.output, &cam, &target));

        // (field, camera) perturbed by +-h along one parameter
        let eval = |f: &GaussianField, c: &CameraModel| {
            let st = render_with_state(f, &pose, &k);
            let sig = (st.event_signature(), loss_signature(&st.output, c, &target));
            (loss_all(&st.output, c, &target, &weights).total, sig)
        };
        let mut check = |analytic: f64, plus: (f64, (u64, u64)), minus: (f64, (u64, u64))| {
            if plus.1 != base_sig || minus.1 != base_sig {
                skipped += 1;
                return;
            }
            let fd = (plus.0 - minus.0) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        };
        for i in 0..field.len() {
            for ch in 0..4 {
                let mut fp = field.clone();
                let mut fm = field.clone();
                let analytic = if ch < 3 {
                    fp.gaussians[i].c[ch] += h;
                    fm.gaussians[i].c[ch] -= h;
                    grads.field.color[i][ch]
                } else {
                    fp.gaussians[i].o += h;
                    fm.gaussians[i].o -= h;
                    grads.field.opacity[i]
                };
                check(analytic, eval(&fp, &cam), eval(&fm, &cam));
            }
        }
        for j in 0..4 {
            let mut ap = cam.as_array();
            let mut am = cam.as_array();
            ap[j] += h;
            am[j] -= h;
            check(
                grads.camera[j],
                eval(&field, &CameraModel::from_array(ap)),
                eval(&field, &CameraModel::from_array(am)),
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-3 && checked > 0 && secs < 120.0,
        format!("{checked} parameters checked, {skipped} at kinks skipped, worst relative error {worst:.2e}, {secs:.2} s"),
    )
}

fn rendering_identities() -> Outcome {
    let k = Intrinsics::new(30.0, 30.0, 16.0, 16.0, 32, 32).unwrap();
    let pose = Pose::identity();
    let mut worst: f64 = 0.0;
    for (o, c, z) in [(0.8, [0.2, 0.6, 0.9], 1.5), (0.35, [1.0, 0.0, 0.5], 2.7), (0.05, [0.3, 0.3, 0.3], 0.9)] {
        let mut f = GaussianField::new();
        f.extend([GaussianPrimitive::isotropic(Point3::new(0.0, 0.0, z), 0.05, c, o)]);
        let out = render(&f, &pose, &k);
        let col = out.color.get(16, 16);
        for ch in 0..3 {
            worst = worst.max((col[ch] - o * c[ch]).abs());
        }
        worst = worst.max((out.depth.get(16, 16) - o * z).abs());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut f = GaussianField::new();
    for _ in 0..40 {
        f.extend(random_field(&mut rng).gaussians);
    }
    let a = render(&f, &pose, &k);
    let mut permuted = true;
    for _ in 0..5 {
        let mut g = f.clone();
        for i in (1..g.len()).rev() {
            g.gaussians.swap(i, rng.random_range(0..=i));
        }
        permuted &= render(&g, &pose, &k) == a;
    }

    let s = ssim(&a.color, &a.color);
    outcome(
        worst <= 1e-9 && permuted && (s - 1.0).abs() <= 1e-9,
        format!("center pixel {worst:.1e}, permutation identical {permuted}, ssim(a, a) = {s}"),
    )
}

/// Mean angle in degrees between normals of the field's rendered depth and
/// of the clean depth, over pixels where both are defined.
fn normal_error(field: &GaussianField, frames: &[(FrameBundle, DepthImage)]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (f, clean) in frames {
        let r = render(field, &f.pose, &f.intrinsics);
        let a = normal_from_depth(&r.normalized_depth(0.5), &f.intrinsics);
        let b = normal_from_depth(clean, &f.intrinsics);
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            if p.iter().any(|&v| v != 0.0) && q.iter().any(|&v| v != 0.0) {
                let c = (p[0] * q[0] + p[1] * q[1] + p[2] * q[2]).clamp(-1.0, 1.0);
                sum += c.acos().to_degrees();
                n += 1;
            }
        }
    }
    sum / n.max(1) as f64
}

fn normal_supervision() -> Outcome {
    let run = |w_normal: f64| {
        let mut cfg = PipelineConfig::default();
        cfg.source.scene = SceneKind::TiltedPlane;
        cfg.source.frames = 10;
        cfg.source.width = 64;
        cfg.source.height = 48;
        cfg.noise.depth_sigma = 0.01;
        cfg.optim.warmup_iters = 300;
        cfg.optim.iters_per_frame = 20;
        cfg.optim.weights.normal = w_normal;
        let seq = SyntheticSequence::from_config(&cfg).unwrap();
        let mut m = Mapper::new(&cfg).unwrap();
        let mut frames = Vec::new();
        for t in 0..seq.len() {
            let f = seq.frame(t);
            m.process(&f.frame, &f.observation).unwrap();
            frames.push((f.frame, f.clean_depth.unwrap()));
        }
        normal_error(&m.field, &frames)
    };
    let with = run(0.1);
    let without = run(0.0);
    outcome(
        with <= without,
        format!("mean normal error {with:.3} deg with normal loss, {without:.3} deg without"),
    )
}

fn seeding_invariants() -> Outcome {
    let mut cfg = fusion_only();
    cfg.source.frames = 25;
    let mut seq = SyntheticSequence::from_config(&cfg).unwrap();
    let back: Vec<Pose> = seq.poses.iter().rev().copied().collect();
    seq.poses.extend(back);
    let mut m = Mapper::new(&cfg).unwrap();
    let (mut seeded, mut count_ok) = (0usize, true);
    for t in 0..seq.len() {
        let f = seq.frame(t);
        let r = m.process(&f.frame, &f.observation).unwrap();
        seeded += r.new_voxels;
        count_ok &= m.field.len() == seeded;
    }
    let sigma = SEED_SCALE_FACTOR * cfg.resolution;
    let scales_ok = m.field.gaussians.iter().all(|g| g.s.iter().all(|&s| s == sigma));
    let opacity_ok = m.field.gaussians.iter().all(|g| g.o == SEED_OPACITY);
    let keys: HashSet<_> = m.field.gaussians.iter().map(|g| m.grid.world_to_voxel(&g.mu).unwrap()).collect();
    let unique = keys.len() == m.field.len();
    outcome(
        count_ok && scales_ok && opacity_ok && unique && seq.len() == 50,
        format!(
            "{} frames, {} Gaussians, count {count_ok}, scales {scales_ok}, opacities {opacity_ok}, one per voxel {unique}",
            seq.len(),
            m.field.len()
        ),
    )
}

fn sphere_mesh() -> Outcome {
    let mut cfg = PipelineConfig::default();
    cfg.source.scene = SceneKind::Sphere;
    cfg.source.frames = 40;
    let seq = SyntheticSequence::from_config(&cfg).unwrap();
    let mut grid = VoxelGrid::new(cfg.resolution, cfg.truncation).unwrap();
    for t in 0..seq.len() {
        grid.integrate_tsdf(&seq.frame(t).frame);
    }
    let mesh = extract_mesh(&grid);
    let acc = mesh.vertices.iter().map(|v| (v.coords.norm() - 0.5).abs()).sum::<f64>() / mesh.vertices.len().max(1) as f64;
    let watertight = mesh.is_watertight();
    let own = mesh_metrics(&mesh, &mesh, &MeshEvalConfig::default()).unwrap();
    outcome(
        !mesh.is_empty() && acc <= 0.03 && watertight && own.acc_cm < 1e-9,
        format!(
            "{} faces, mean distance {:.2} cm, watertight {watertight}, self-comparison acc {:.1e} cm",
            mesh.faces.len(),
            100.0 * acc,
            own.acc_cm
        ),
    )
}

fn zero_shot_semantics() -> Outcome {
    let mut cfg = fusion_only();
    cfg.erosion_radius = 0;
    let seq = SyntheticSequence::from_config(&cfg).unwrap();
    let mut m = Mapper::new(&cfg).unwrap();
    let mut votes = VoxelVotes::new();
    let mut frames = Vec::new();
    for t in 0..seq.len() {
        let f = seq.frame(t);
        m.process(&f.frame, &f.observation).unwrap();
        frames.push(f);
    }
    for f in &frames {
        votes.add_frame(&m.grid, &f.frame, f.gt_classes.as_ref().unwrap()).unwrap();
    }
    let r = zero_shot_segmentation(&m.grid, &m.codebook, seq.class_embeddings(), &votes.labels()).unwrap();
    outcome(
        [r.miou, r.fiou, r.macc, r.facc].iter().all(|&v| v >= 0.98),
        format!("mIoU {:.4}, fIoU {:.4}, mAcc {:.4}, fAcc {:.4}", r.miou, r.fiou, r.macc, r.facc),
    )
}

fn threshold_sweep() -> Outcome {
    let mut rows = Vec::new();
    for xi in [0.1, 0.25, 0.5, 0.75] {
        let mut cfg = fusion_only();
        cfg.source.scene = SceneKind::AbuttingBoxes;
        cfg.fusion.xi = xi;
        cfg.noise.p_split = 0.2;
        cfg.noise.p_merge = 0.2;
        cfg.noise.embed_sigma = 0.1;
        rows.push((xi, run_fusion(&cfg)));
    }
    println!("    xi     merge_rate  instances  accuracy");
    for (xi, r) in &rows {
        println!("    {xi:<6} {:<11.4} {:<10} {:.4}", r.merge_rate, r.instances, r.accuracy);
    }
    let monotone = rows.windows(2).all(|w| w[1].1.merge_rate <= w[0].1.merge_rate);
    let rates: Vec<String> = rows.iter().map(|(_, r)| format!("{:.4}", r.merge_rate)).collect();
    outcome(monotone, format!("merge rates {}", rates.join(", ")))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn performance_budget() -> Outcome {
    let mut cfg = fusion_only();
    cfg.source.width = 640;
    cfg.source.height = 480;
    cfg.source.frames = 15;
    let mut seq = SyntheticSequence::from_config(&cfg).unwrap();
    // floor only, no back wall
    seq.world.background.truncate(1);
    let mut m = Mapper::new(&cfg).unwrap();
    let mut assoc_ms = Vec::new();
    for t in 0..seq.len() {
        let f = seq.frame(t);
        let r = m.process(&f.frame, &f.observation).unwrap();
        assoc_ms.push(r.stage_ms("associate") + r.stage_ms("update_voxels") + r.stage_ms("update_codebook"));
    }
    let (lo, hi) = m.grid.observed_voxels().fold(([f64::MAX; 3], [f64::MIN; 3]), |(lo, hi), (k, _)| {
        let c = m.grid.voxel_center(&k);
        ([0, 1, 2].map(|i| lo[i].min(c[i])), [0, 1, 2].map(|i| hi[i].max(c[i])))
    });
    let volume: f64 = (0..3).map(|i| hi[i] - lo[i] + cfg.resolution).product();
    let assoc_median = median(&mut assoc_ms);

    let mut cfg = PipelineConfig::default();
    cfg.source.width = 64;
    cfg.source.height = 64;
    cfg.optim.iters_per_frame = 5;
    cfg.optim.warmup_iters = 5;
    let seq = SyntheticSequence::from_config(&cfg).unwrap();
    let mut m = Mapper::new(&cfg).unwrap();
    let mut loop_ms = Vec::new();
    for t in 0..seq.len() {
        let f = seq.frame(t);
        let start = Instant::now();
        m.process(&f.frame, &f.observation).unwrap();
        loop_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    let loop_max = loop_ms.iter().copied().fold(0.0, f64::max);
    outcome(
        assoc_median < 100.0 && volume <= 5.0 && loop_max < 1000.0,
        format!(
            "association + update median {assoc_median:.1} ms at 640x480 (observed extent {volume:.2} m^3), slowest full frame {loop_max:.1} ms"
        ),
    )
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    for d in &dirs {
        let mut cfg = PipelineConfig::default();
        cfg.seed = 3;
        cfg.source.frames = 8;
        cfg.noise.p_split = 0.2;
        cfg.noise.embed_sigma = 0.05;
        cfg.optim.warmup_iters = 30;
        cfg.out_dir = d.path().to_path_buf();
        run_build(&cfg).unwrap();
        let read = |name: &str| std::fs::read(d.path().join(name)).unwrap();
        outputs.push((read(CODEBOOK_FILE), read(ASSOCIATION_LOG_FILE)));
    }
    let same = outputs[0] == outputs[1];
    outcome(
        same && !outputs[0].1.is_empty(),
        format!("codebook {} bytes, association log {} bytes, identical {same}", outputs[0].0.len(), outputs[0].1.len()),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let checks: [Check; 13] = [
        ("dirichlet counts are exact frequencies", dirichlet_exactness),
        ("noise-free association recovers every object", association_noise_free),
        ("counting beats last-write-wins under mask noise", association_robustness),
        ("camera model laws and shift recovery", camera_model_laws),
        ("analytic gradients match finite differences", gradient_fidelity),
        ("rendering identities", rendering_identities),
        ("normal loss does not hurt tilted-plane normals", normal_supervision),
        ("gaussian seeding invariants over a revisit", seeding_invariants),
        ("sphere mesh accuracy and watertightness", sphere_mesh),
        ("zero-shot semantics on a clean scene", zero_shot_semantics),
        ("merge rate falls as the fusion threshold rises", threshold_sweep),
        ("performance budget", performance_budget),
        ("builds are byte-for-byte deterministic", determinism),
    ];
    // optional substring filter, as with the default test harness
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = Vec::new();
    let mut ran = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {:>2} {name}: {} [{:.1} s]", i + 1, o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(i + 1);
        }
    }
    println!("{} of {ran} acceptance checks passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
