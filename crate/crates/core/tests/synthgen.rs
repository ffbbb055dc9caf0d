use lfsplat::metrics::{segment_by_query, semantic_metrics};
use lfsplat::scene::LABEL_INVALID;
use lfsplat::synthgen::*;
use lfsplat::{Error, Pose};
use nalgebra::Vector3;

fn small_spec(frames: usize) -> GenerateSpec {
    GenerateSpec {
        trajectory: TrajectorySpec {
            frames,
            ..Default::default()
        },
        width: 64,
        height: 48,
        ..Default::default()
    }
}

#[test]
fn embeddings_are_orthonormal() {
    let e = class_embeddings(4, 16, 7).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let dot: f64 = e[i].iter().zip(&e[j]).map(|(a, b)| a * b).sum();
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((dot - expected).abs() < 1e-6, "{i} {j} {dot}");
        }
    }
    assert!(e.iter().flatten().all(|&v| v as f32 as f64 == v));
}

#[test]
fn feature_dim_below_class_count_is_rejected() {
    assert!(matches!(
        class_embeddings(5, 4, 0),
        Err(Error::FeatureDimTooSmall { dim: 4, classes: 5 })
    ));
    let spec = SceneSpec {
        class_count: 8,
        feature_dim: 4,
        ..Default::default()
    };
    assert!(build_synthetic_scene(&spec).is_err());
}

#[test]
fn single_class_scene_has_identical_features() {
    let spec = SceneSpec {
        class_count: 1,
        ..Default::default()
    };
    let scene = build_synthetic_scene(&spec).unwrap();
    assert!(scene.classes.iter().all(|&c| c == 0));
    assert!(scene.gaussians.iter().all(|g| g.feature == scene.class_embeddings[0]));
}

#[test]
fn every_gaussian_carries_its_class_embedding() {
    let scene = build_synthetic_scene(&SceneSpec::default()).unwrap();
    assert_eq!(scene.gaussians.len(), scene.classes.len());
    for (g, &c) in scene.gaussians.iter().zip(&scene.classes) {
        assert_eq!(g.feature, scene.class_embeddings[c as usize]);
    }
    let used: std::collections::BTreeSet<u8> = scene.classes.iter().copied().collect();
    assert_eq!(used.into_iter().collect::<Vec<_>>(), vec![0, 1, 2, 3]);
}

#[test]
fn same_seed_gives_identical_scenes() {
    let spec = SceneSpec {
        seed: 11,
        ..Default::default()
    };
    let a = build_synthetic_scene(&spec).unwrap();
    let b = build_synthetic_scene(&spec).unwrap();
    assert_eq!(a, b);
    let c = build_synthetic_scene(&SceneSpec { seed: 12, ..spec }).unwrap();
    assert_ne!(a.class_embeddings, c.class_embeddings);
}

#[test]
fn orbit_of_four_is_spaced_by_right_angles() {
    let scene = build_synthetic_scene(&SceneSpec::default()).unwrap();
    let poses = generate_trajectory(
        &scene,
        &TrajectorySpec {
            frames: 4,
            ..Default::default()
        },
    )
    .unwrap();
    let center = scene.room_center();
    let azimuth = |p: &Pose| {
        let c = p.camera_center() - center;
        c.y.atan2(c.x)
    };
    for w in poses.windows(2) {
        let mut d = (azimuth(&w[1]) - azimuth(&w[0])).to_degrees();
        if d < 0.0 {
            d += 360.0;
        }
        assert!((d - 90.0).abs() < 1e-9, "{d}");
    }
}

#[test]
fn consecutive_poses_move_smoothly() {
    let scene = build_synthetic_scene(&SceneSpec::default()).unwrap();
    for kind in [TrajectoryKind::Orbit, TrajectoryKind::Lawnmower] {
        let poses = generate_trajectory(
            &scene,
            &TrajectorySpec {
                kind,
                frames: 100,
                ..Default::default()
            },
        )
        .unwrap();
        for w in poses.windows(2) {
            let (rot, _) = w[0].distance_to(&w[1]);
            let trans = (w[0].camera_center() - w[1].camera_center()).norm();
            assert!(rot.to_degrees() < 5.0, "{kind:?} rot {}", rot.to_degrees());
            assert!(trans < 0.02 * scene.room_diagonal(), "{kind:?} trans {trans}");
        }
        let r = scene.spec.room;
        for p in &poses {
            let c = p.camera_center();
            assert!(c.x > 0.0 && c.y > 0.0 && c.z > 0.0 && c.x < r.x && c.y < r.y && c.z < r.z);
        }
    }
}

#[test]
fn lawnmower_runs_corner_to_opposite_corner() {
    let scene = build_synthetic_scene(&SceneSpec::default()).unwrap();
    let poses = generate_trajectory(
        &scene,
        &TrajectorySpec {
            kind: TrajectoryKind::Lawnmower,
            frames: 50,
            ..Default::default()
        },
    )
    .unwrap();
    let centers: Vec<Vector3<f64>> = poses.iter().map(Pose::camera_center).collect();
    let (lo, hi) = centers.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), c| (lo.inf(c), hi.sup(c)),
    );
    let first = centers[0];
    let last = centers[centers.len() - 1];
    assert!((first.x - lo.x).abs() < 1e-9 && (first.y - lo.y).abs() < 1e-9);
    assert!((last.x - hi.x).abs() < 1e-9 && (last.y - hi.y).abs() < 1e-9);
}

#[test]
fn too_short_trajectory_is_rejected() {
    let scene = build_synthetic_scene(&SceneSpec::default()).unwrap();
    let spec = TrajectorySpec {
        frames: 1,
        ..Default::default()
    };
    assert!(generate_trajectory(&scene, &spec).is_err());
}

#[test]
fn ground_truth_labels_match_features() {
    let (scene, ds) = generate_dataset(&small_spec(6)).unwrap();
    let d = ds.manifest.feature_dim;
    for f in &ds.frames {
        let label = f.label.as_ref().unwrap();
        for p in 0..f.pixel_count() {
            if label[p] == LABEL_INVALID {
                assert_eq!(f.depth[p], 0.0);
                assert!(!f.feature_valid(p));
            } else {
                let e: Vec<f32> = scene.class_embeddings[label[p] as usize]
                    .iter()
                    .map(|&v| v as f32)
                    .collect();
                assert_eq!(f.feature_at(p), &e[..]);
                assert!(f.depth[p] > 0.0);
            }
        }
        let pred = segment_by_query(&f.feature, d, &scene.class_embeddings);
        let s = semantic_metrics(&pred, label).unwrap();
        assert_eq!((s.accuracy, s.miou), (1.0, 1.0));
    }
}

#[test]
fn ground_truth_sees_several_classes_and_plausible_depth() {
    let (scene, ds) = generate_dataset(&small_spec(4)).unwrap();
    let f = &ds.frames[0];
    let label = f.label.as_ref().unwrap();
    let classes: std::collections::BTreeSet<u8> = label.iter().copied().collect();
    assert!(classes.len() >= 3, "{classes:?}");
    let max_depth = f.depth.iter().fold(0.0f32, |a, &b| a.max(b));
    assert!(max_depth > 0.5 && (max_depth as f64) < scene.room_diagonal());
}

#[test]
fn depth_noise_only_touches_valid_pixels_and_is_seeded() {
    let mut spec = small_spec(3);
    let (_, clean) = generate_dataset(&spec).unwrap();
    spec.depth_noise = 0.01;
    let (_, a) = generate_dataset(&spec).unwrap();
    let (_, b) = generate_dataset(&spec).unwrap();
    assert_eq!(a, b);
    let f0 = &clean.frames[0];
    let f1 = &a.frames[0];
    let mut diff = 0.0;
    let mut n = 0;
    for (z0, z1) in f0.depth.iter().zip(&f1.depth) {
        assert_eq!(*z0 == 0.0, *z1 == 0.0);
        if *z0 > 0.0 {
            diff += ((z1 - z0) as f64).powi(2);
            n += 1;
        }
    }
    let sigma = (diff / n as f64).sqrt();
    assert!((sigma - 0.01).abs() < 0.002, "{sigma}");
}

#[test]
fn dataset_round_trip() {
    let (_, ds) = generate_dataset(&small_spec(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, ds.manifest);
    assert_eq!(back.groundtruth, ds.groundtruth);
    let scale = ds.manifest.depth_scale;
    for (a, b) in ds.frames.iter().zip(&back.frames) {
        assert_eq!(a.timestamp, b.timestamp);
        assert_eq!(a.feature, b.feature);
        assert_eq!(a.label, b.label);
        for (x, y) in a.color.iter().zip(&b.color) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
        }
        for (x, y) in a.depth.iter().zip(&b.depth) {
            // quantization bound, plus the f32 rounding of the decoded value
            let tol = 0.5 / scale + f32::EPSILON as f64 * *x as f64;
            assert!(((x - y) as f64).abs() <= tol, "{x} {y}");
        }
    }
}

#[test]
fn tum_lines_round_trip_bit_exactly() {
    let p = Pose::new(
        nalgebra::UnitQuaternion::from_euler_angles(0.1234567, -1.0e-7, 2.5),
        Vector3::new(1.0 / 3.0, -2.0e-12, 7.25),
    );
    let path = std::path::Path::new("x");
    let back = parse_tum(&tum_line(0.1 + 0.2, &p), path).unwrap();
    assert_eq!(back, vec![(0.1 + 0.2, p)]);
}

#[test]
fn truncated_feature_file_names_the_frame() {
    let (_, ds) = generate_dataset(&small_spec(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let path = dir.path().join("feature/000002.bin");
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 7]).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("000002.bin") && msg.contains("frame 2") && msg.contains("truncated"),
        "{msg}"
    );
}

#[test]
fn missing_file_is_named() {
    let (_, ds) = generate_dataset(&small_spec(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("depth/000001.png")).unwrap();
    let msg = read_dataset(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("000001.png"), "{msg}");
}

#[test]
fn raycast_depth_of_a_facing_plane_is_constant() {
    let scene = build_synthetic_scene(&SceneSpec::default()).unwrap();
    let cam = lfsplat::CameraIntrinsics::new(40.0, 40.0, 9.5, 9.5, 20, 20, 0.05, 20.0).unwrap();
    // straight down onto the floor, clear of the box
    let eye = Vector3::new(0.6, 0.6, 1.25);
    let c2w = Pose::look_at(&eye, &Vector3::new(0.6, 0.6, 0.0), &Vector3::y());
    let depth = raycast_depth(&scene, &c2w.inverse(), &cam);
    assert!(depth.iter().all(|&z| (z - 1.25).abs() < 1e-12), "{depth:?}");
}

#[test]
fn stored_depth_is_the_raycast_depth() {
    let (scene, ds) = generate_dataset(&small_spec(3)).unwrap();
    let cam = &ds.manifest.camera;
    for (f, c2w) in ds.frames.iter().zip(&ds.groundtruth) {
        let z = raycast_depth(&scene, &c2w.inverse(), cam);
        for (p, (&a, &b)) in f.depth.iter().zip(&z).enumerate() {
            if a > 0.0 {
                assert!((a as f64 - b).abs() <= 1e-6 * b, "pixel {p}: {a} vs {b}");
            }
        }
    }
}
