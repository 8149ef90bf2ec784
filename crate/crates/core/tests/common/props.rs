//! Property checks shared by the `properties` and `acceptance` targets.

use std::path::Path;

use flexpose::generator::{init_generator, read_checkpoint, write_checkpoint, GeneratorConfig, TransferKind, TransferMatrix};
use flexpose::metrics::{frechet_distance, mmd2, pck, SampleMatrix};
use flexpose::pose::{chain, human13, pose_mixup, read_poses, write_poses, Pose, PoseSet};
use flexpose::render::{decode_softargmax, rasterize, render_heatmaps, DEFAULT_SIGMA};
use flexpose::synth::{apply_local_rotation, apply_scale, rotate_about, sample_pose, sample_poses, PoseDistributionSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

pub type Check = fn() -> Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn pose_strategy(m: usize) -> impl Strategy<Value = Pose> {
    prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), m)
        .prop_map(|v| Pose::new(v.into_iter().map(|(x, y)| [x, y]).collect()))
}

fn rows_strategy(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0..2.0f64, d), n)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn mixup_convexity() -> Result<(), String> {
    runner(64)
        .run(&(any::<u64>(), 2usize..8), |(seed, n)| {
            let set = sample_poses(&PoseDistributionSpec::human_default(), n, seed).unwrap();
            let mixed = pose_mixup(&set, 20, seed ^ 1).unwrap();
            for p in &mixed.poses {
                // some parent pair brackets every coordinate
                let ok = (0..n).any(|i| {
                    (0..n).any(|j| {
                        p.coords.iter().enumerate().all(|(k, c)| {
                            (0..2).all(|a| {
                                let (u, v) = (set.poses[i].coords[k][a], set.poses[j].coords[k][a]);
                                u.min(v) - 1e-12 <= c[a] && c[a] <= u.max(v) + 1e-12
                            })
                        })
                    })
                });
                prop_assert!(ok);
            }
            prop_assert_eq!(mixed, pose_mixup(&set, 20, seed ^ 1).unwrap());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn global_rotation_isometry() -> Result<(), String> {
    runner(64)
        .run(&(pose_strategy(13), -7.0..7.0f64), |(pose, theta)| {
            let r = rotate_about(&pose, pose.centroid(), theta);
            for i in 0..13 {
                for j in 0..13 {
                    let gap = dist(pose.coords[i], pose.coords[j]) - dist(r.coords[i], r.coords[j]);
                    prop_assert!(gap.abs() <= 1e-12);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn local_rotation_fixes_complement() -> Result<(), String> {
    let topo = human13();
    runner(64)
        .run(&(any::<u64>(), 0usize..13, -7.0..7.0f64), |(seed, joint, gamma)| {
            let pose = sample_pose(&PoseDistributionSpec::human_default(), seed);
            let Ok(out) = apply_local_rotation(&pose, &topo, joint, gamma) else {
                // only the root has no proper subtree
                prop_assert_eq!(joint, topo.root());
                return Ok(());
            };
            let moved = topo.subtree(joint);
            for j in (0..13).filter(|j| !moved.contains(j)) {
                prop_assert_eq!(out.coords[j], pose.coords[j]);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn scale_composition() -> Result<(), String> {
    runner(64)
        .run(&(any::<u64>(), 0.5..1.0f64, 0.5..1.0f64), |(seed, a, b)| {
            // shrinking about the centroid never clips
            let pose = sample_pose(&PoseDistributionSpec::human_default(), seed);
            let twice = apply_scale(&apply_scale(&pose, a).unwrap(), b).unwrap();
            let once = apply_scale(&pose, a * b).unwrap();
            for (x, y) in twice.coords.iter().zip(&once.coords) {
                prop_assert!(dist(*x, *y) <= 1e-12);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn distance_symmetry() -> Result<(), String> {
    runner(64)
        .run(&(rows_strategy(12, 3), rows_strategy(9, 3), 0.1..3.0f64), |(x, y, sigma)| {
            let (x, y) = (SampleMatrix::from_rows(&x).unwrap(), SampleMatrix::from_rows(&y).unwrap());
            prop_assert_eq!(mmd2(&x, &y, sigma).unwrap(), mmd2(&y, &x, sigma).unwrap());
            let (a, b) = (frechet_distance(&x, &y).unwrap(), frechet_distance(&y, &x).unwrap());
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn pck_monotone() -> Result<(), String> {
    let topo = chain(5);
    runner(64)
        .run(&(pose_strategy(5), pose_strategy(5), 0.0..1.5f64, 0.0..1.5f64), |(pred, gt, r1, r2)| {
            let p = PoseSet::new(topo.clone(), vec![pred]).unwrap();
            let g = PoseSet::new(topo.clone(), vec![gt]).unwrap();
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(pck(&p, &g, lo).unwrap() <= pck(&p, &g, hi).unwrap());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn pose_file_round_trip() -> Result<(), String> {
    runner(64)
        .run(&prop::collection::vec(pose_strategy(13), 0..6), |poses| {
            let set = PoseSet::new(human13(), poses).unwrap();
            let mut buf = Vec::new();
            write_poses(&set, &mut buf).unwrap();
            prop_assert_eq!(read_poses(buf.as_slice(), Path::new("mem")).unwrap(), set);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn checkpoint_round_trip() -> Result<(), String> {
    let cfg = GeneratorConfig { d_z: 6, d_w: 5, layers: 4, d_h: 4, joints: 5, resolution: 6 };
    runner(12)
        .run(&(any::<u64>(), 1usize..=4, 0u8..3), |(seed, layer, kind)| {
            let g = init_generator(cfg, seed).unwrap();
            let kind = match kind {
                0 => TransferKind::Linear,
                1 => TransferKind::LowRank { rank: 2 },
                _ => TransferKind::Nonlinear,
            };
            let mut tau = TransferMatrix::new(&cfg, &[layer], kind, seed ^ 7).unwrap();
            for t in tau.tensors_mut() {
                t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += (i as f64).sin() * 1e-3);
            }
            let bytes = write_checkpoint(&g, Some(&tau));
            let (g2, tau2) = read_checkpoint(&bytes).unwrap();
            prop_assert_eq!(&g2, &g);
            prop_assert_eq!(tau2.as_ref(), Some(&tau));
            prop_assert_eq!(write_checkpoint(&g2, tau2.as_ref()), bytes);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn raster_determinism() -> Result<(), String> {
    runner(32)
        .run(&pose_strategy(13), |pose| {
            let a = rasterize(&pose, &human13(), 40, 30).unwrap();
            prop_assert_eq!(a, rasterize(&pose, &human13(), 40, 30).unwrap());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn decode_linearity() -> Result<(), String> {
    runner(64)
        .run(&(pose_strategy(4), pose_strategy(4), 0.0..=1.0f64), |(p, q, a)| {
            let hp = render_heatmaps(&p, 16, DEFAULT_SIGMA).unwrap();
            let hq = render_heatmaps(&q, 16, DEFAULT_SIGMA).unwrap();
            let (dp, dq) = (decode_softargmax(&hp).unwrap(), decode_softargmax(&hq).unwrap());
            let mixed = decode_softargmax(&hp.mix(&hq, a)).unwrap();
            for j in 0..4 {
                for k in 0..2 {
                    let expect = a * dp.coords[j][k] + (1.0 - a) * dq.coords[j][k];
                    prop_assert!((mixed.coords[j][k] - expect).abs() <= 1e-12);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("mixup convexity", mixup_convexity as Check),
        ("global rotation isometry", global_rotation_isometry),
        ("local rotation complement", local_rotation_fixes_complement),
        ("scale composition", scale_composition),
        ("mmd2/FD symmetry", distance_symmetry),
        ("pck monotone in threshold", pck_monotone),
        ("pose file round trip", pose_file_round_trip),
        ("checkpoint round trip", checkpoint_round_trip),
        ("raster determinism", raster_determinism),
        ("decode linearity", decode_linearity),
    ]
}
