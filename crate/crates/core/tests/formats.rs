use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bbs_core::camera::{CameraTrajectory, Intrinsics};
use bbs_core::fixtures::{demo_room, furnished_room, random_outside_pose, random_scene, room_orbit};
use bbs_core::render::export::{
    decode_depth_png, decode_semantic_png, encode_depth_png, encode_semantic_png, write_frame,
};
use bbs_core::render::{normalize_depth, render_scene, RenderConfig};
use bbs_core::scene::{validate_scene, BoundingBoxScene};

fn assert_same_geometry(a: &BoundingBoxScene, b: &BoundingBoxScene) {
    assert_eq!(a.scene_id, b.scene_id);
    assert_eq!(a.categories, b.categories);
    assert_eq!(a.objects.len(), b.objects.len());
    for (x, y) in a.objects.iter().zip(&b.objects) {
        assert_eq!(x.object_id, y.object_id);
        assert_eq!(x.category_id, y.category_id);
        for (p, q) in x.boxes.iter().zip(&y.boxes) {
            assert!((p.center - q.center).length() <= 1e-9);
            assert!((p.half_extents - q.half_extents).length() <= 1e-9);
            assert!((1.0 - p.rotation.dot(&q.rotation).abs()) <= 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn scene_json_round_trip(seed in any::<u64>()) {
        let scene = random_scene(seed, 25);
        let back = BoundingBoxScene::from_json(&scene.to_json()).unwrap();
        prop_assert!(validate_scene(&back).errors.is_empty());
        assert_same_geometry(&scene, &back);
    }

    #[test]
    fn export_round_trip(seed in any::<u64>()) {
        let scene = random_scene(seed, 15);
        let pose = random_outside_pose(&mut ChaCha8Rng::seed_from_u64(seed));
        let cfg = RenderConfig::default();
        let img = render_scene(&scene, &Intrinsics::from_vfov(40, 30, 60.0), &pose, &cfg).unwrap();
        let (w, h, ids) = decode_semantic_png(&encode_semantic_png(&img, &scene.categories).unwrap()).unwrap();
        prop_assert_eq!((w, h), (40, 30));
        prop_assert_eq!(&ids, &img.semantic);
        let (_, _, raw) = decode_depth_png(&encode_depth_png(&img, &cfg).unwrap()).unwrap();
        for (q, n) in raw.iter().zip(normalize_depth(&img, &cfg)) {
            prop_assert!((*q as f64 / 65535.0 - n).abs() <= 1.0 / 65535.0);
        }
    }
}

#[test]
fn files_on_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for scene in [demo_room(), furnished_room(2, 60)] {
        let p = dir.path().join(format!("{}.json", scene.scene_id));
        scene.save(&p).unwrap();
        let back = BoundingBoxScene::load(&p).unwrap();
        assert!(validate_scene(&back).errors.is_empty());
        assert_same_geometry(&scene, &back);
        assert_eq!(back.content_hash(), scene.content_hash());
    }
    let traj = room_orbit(6.0, 5.0, 3.0, 9, Intrinsics::from_vfov(64, 48, 60.0));
    let p = dir.path().join("traj.json");
    traj.save(&p).unwrap();
    let back = CameraTrajectory::load(&p).unwrap();
    assert_eq!(back.intrinsics, traj.intrinsics);
    assert_eq!(back.frame_ids, traj.frame_ids);
    for (a, b) in back.poses.iter().zip(&traj.poses) {
        assert!((a.position - b.position).length() <= 1e-9);
        assert!((1.0 - a.orientation.dot(&b.orientation).abs()) <= 1e-9);
    }
}

#[test]
fn exported_frame_matches_render() {
    let scene = demo_room();
    let traj = room_orbit(6.0, 5.0, 3.0, 2, Intrinsics::from_vfov(48, 32, 60.0));
    let cfg = RenderConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let img = render_scene(&scene, &traj.intrinsics, &traj.poses[1], &cfg).unwrap();
    let files = write_frame(
        dir.path(),
        &img,
        &scene.categories,
        &cfg,
        &traj.poses[1],
        &traj.intrinsics,
    )
    .unwrap();
    let (_, _, ids) = decode_semantic_png(&std::fs::read(files.semantic).unwrap()).unwrap();
    assert_eq!(ids, img.semantic);
    let (_, _, raw) = decode_depth_png(&std::fs::read(files.depth).unwrap()).unwrap();
    let metric: Vec<f64> = raw
        .iter()
        .map(|&q| cfg.near + q as f64 / 65535.0 * (cfg.far - cfg.near))
        .collect();
    for (m, d) in metric.iter().zip(&img.depth) {
        assert!((m - d).abs() <= (cfg.far - cfg.near) / 65535.0);
    }
}

#[test]
fn malformed_documents_are_rejected_with_codes() {
    let err = BoundingBoxScene::from_json("{\"version\": 1").unwrap_err();
    assert_eq!(err.code(), "MALFORMED_JSON");
    let err = CameraTrajectory::from_json(r#"{"intrinsics": {"width": 4, "height": 4, "fx": 1, "fy": 1, "cx": 2, "cy": 2}, "frames": [{"frame_id": "a", "position": [0,0,0], "rotation_quat": [0,0,0,0]}]}"#).unwrap_err();
    assert_eq!(err.code(), "MALFORMED_POSE");
}
