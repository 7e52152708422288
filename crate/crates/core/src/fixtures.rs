//! Deterministic scenes and trajectories for tests, benches and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{look_at_pose, CameraTrajectory, Intrinsics, Pose};
use crate::dataset::{FilterRules, SourceFrame, SourceObject, SourceSceneRecord};
use crate::distill::{Image, ViewEntry};
use crate::geometry::{Obb, Quat, Vec3};
use crate::render::{render_trajectory, RenderConfig};
use crate::scene::{default_categories, BoundingBoxScene, SceneObject};

pub const WALL: u16 = 1;
pub const FLOOR: u16 = 2;
pub const CABINET: u16 = 3;
pub const BED: u16 = 4;
pub const CHAIR: u16 = 5;
pub const TABLE: u16 = 7;
pub const DOOR: u16 = 8;
pub const DESK: u16 = 14;
pub const CEILING: u16 = 22;

fn aabb(min: [f64; 3], max: [f64; 3]) -> Obb {
    Obb::from_min_max(min.into(), max.into()).expect("fixture box")
}

/// Room shell only: interior `[0,w] x [0,d] x [0,h]`, 0.1 m thick walls,
/// floor and ceiling.
pub fn room_shell(scene_id: &str, w: f64, d: f64, h: f64) -> BoundingBoxScene {
    let t = 0.1;
    BoundingBoxScene::new(scene_id, default_categories())
        .with_object(SceneObject::new(
            "floor",
            FLOOR,
            vec![aabb([-t, -t, -t], [w + t, d + t, 0.0])],
        ))
        .with_object(SceneObject::new(
            "ceiling",
            CEILING,
            vec![aabb([-t, -t, h], [w + t, d + t, h + t])],
        ))
        .with_object(SceneObject::new(
            "wall_s",
            WALL,
            vec![aabb([-t, -t, 0.0], [w + t, 0.0, h])],
        ))
        .with_object(SceneObject::new(
            "wall_n",
            WALL,
            vec![aabb([-t, d, 0.0], [w + t, d + t, h])],
        ))
        .with_object(SceneObject::new(
            "wall_w",
            WALL,
            vec![aabb([-t, 0.0, 0.0], [0.0, d, h])],
        ))
        .with_object(SceneObject::new(
            "wall_e",
            WALL,
            vec![aabb([w, 0.0, 0.0], [w + t, d, h])],
        ))
}

/// A 6 x 5 x 3 m bedroom with a door, bed, L-shaped desk, chair and a
/// rotated cabinet.
pub fn demo_room() -> BoundingBoxScene {
    let cabinet = Obb::new(
        Vec3::new(4.9, 4.3, 0.6),
        Vec3::new(0.5, 0.25, 0.6),
        Quat::from_axis_angle(Vec3::Z, 30f64.to_radians()),
    )
    .expect("fixture box");
    room_shell("demo_room", 6.0, 5.0, 3.0)
        .with_object(SceneObject::new(
            "door",
            DOOR,
            vec![aabb([2.5, -0.02, 0.0], [3.4, 0.03, 2.1])],
        ))
        .with_object(SceneObject::new(
            "bed",
            BED,
            vec![aabb([0.2, 2.8, 0.0], [2.2, 4.8, 0.55])],
        ))
        .with_object(SceneObject::new(
            "desk",
            DESK,
            vec![
                aabb([4.0, 0.3, 0.0], [5.8, 0.9, 0.75]),
                aabb([5.2, 0.9, 0.0], [5.8, 2.2, 0.75]),
            ],
        ))
        .with_object(SceneObject::new(
            "chair",
            CHAIR,
            vec![aabb([4.6, 1.1, 0.0], [5.0, 1.5, 0.9])],
        ))
        .with_object(SceneObject::new("cabinet", CABINET, vec![cabinet]))
}

/// Room shell plus seeded furniture boxes, `n_boxes` boxes in total.
pub fn furnished_room(seed: u64, n_boxes: usize) -> BoundingBoxScene {
    let (w, d, h) = (8.0, 7.0, 3.0);
    let mut scene = room_shell("furnished_room", w, d, h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cats = [CABINET, BED, CHAIR, 6, TABLE, 10, DESK, 15, 17, 39];
    let mut i = 0;
    while scene.box_count() < n_boxes {
        let half = Vec3::new(
            rng.random_range(0.1..0.6),
            rng.random_range(0.1..0.6),
            rng.random_range(0.1..0.6),
        );
        let c = Vec3::new(
            rng.random_range(0.7..w - 0.7),
            rng.random_range(0.7..d - 0.7),
            rng.random_range(half.z..h - 0.6),
        );
        let rot = Quat::from_axis_angle(Vec3::Z, rng.random_range(0.0..std::f64::consts::PI));
        let obb = Obb::new(c, half, rot).expect("fixture box");
        scene.objects.push(SceneObject::new(
            format!("item_{i:03}"),
            cats[i % cats.len()],
            vec![obb],
        ));
        i += 1;
    }
    scene
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Quat {
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let axis = axis.try_normalize().unwrap_or(Vec3::Z);
    Quat::from_axis_angle(axis, rng.random_range(0.0..std::f64::consts::TAU))
}

/// Up to `max_boxes` random boxes around the origin, roughly half rotated,
/// grouped into one- and two-box objects with categories 1..=9.
pub fn random_scene(seed: u64, max_boxes: usize) -> BoundingBoxScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = BoundingBoxScene::new(format!("random_{seed}"), default_categories());
    let n = rng.random_range(1..=max_boxes.max(1));
    let mut made = 0;
    let mut k = 0;
    while made < n {
        let count = if n - made >= 2 && rng.random_bool(0.3) { 2 } else { 1 };
        let mut boxes = Vec::new();
        for _ in 0..count {
            let c = Vec3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
            );
            let half = Vec3::new(
                rng.random_range(0.05..1.0),
                rng.random_range(0.05..1.0),
                rng.random_range(0.05..1.0),
            );
            let rot = if rng.random_bool(0.5) {
                random_rotation(&mut rng)
            } else {
                Quat::IDENTITY
            };
            boxes.push(Obb::new(c, half, rot).expect("random box"));
        }
        made += count;
        let cat = rng.random_range(1..10u16);
        scene.objects.push(SceneObject::new(format!("obj_{k:02}"), cat, boxes));
        k += 1;
    }
    scene
}

/// A camera on a sphere of radius 7-9 m looking near the origin.
pub fn random_outside_pose(rng: &mut ChaCha8Rng) -> Pose {
    loop {
        let dir = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.6..0.6),
        );
        let Some(dir) = dir.try_normalize() else { continue };
        let eye = dir * rng.random_range(7.0..9.0);
        let target = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.5..0.5),
        );
        if let Ok(p) = look_at_pose(eye, target, Vec3::Z) {
            return p;
        }
    }
}

/// `n` poses on a circle inside a `w x d x h` room, each looking across it.
pub fn room_orbit(w: f64, d: f64, h: f64, n: usize, intr: Intrinsics) -> CameraTrajectory {
    let c = Vec3::new(w / 2.0, d / 2.0, 0.5 * h);
    let r = 0.25 * w.min(d);
    let poses = (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let eye = c + Vec3::new(r * a.cos(), r * a.sin(), 0.1 * h);
            let target = c + Vec3::new(-r * a.sin(), r * a.cos(), -0.2 * h) * 2.0;
            look_at_pose(eye, target, Vec3::Z).expect("orbit pose")
        })
        .collect();
    CameraTrajectory::from_poses(intr, poses)
}

/// The demo room rendered from `n` orbit views at `width x height`, with
/// gray initial supervision.
pub fn distill_views(n: usize, width: u32, height: u32) -> (BoundingBoxScene, Vec<ViewEntry>) {
    let scene = demo_room();
    let traj = room_orbit(6.0, 5.0, 3.0, n, Intrinsics::from_vfov(width, height, 60.0));
    let bbis = render_trajectory(&scene, &traj, &RenderConfig::default()).expect("fixture renders");
    let views = bbis
        .into_iter()
        .zip(&traj.poses)
        .map(|(bbi, pose)| ViewEntry {
            frame_id: bbi.frame_id.clone(),
            pose: *pose,
            supervision: Image::filled(width, height, 0.5),
            bbi,
            generation_epoch: 0,
            last_strength: 0.0,
        })
        .collect();
    (scene, views)
}

/// Converts a scene and trajectory back into a source record, labeling each
/// object with its category name.
pub fn to_source_record(scene: &BoundingBoxScene, traj: &CameraTrajectory) -> SourceSceneRecord {
    SourceSceneRecord {
        scene_id: scene.scene_id.clone(),
        intrinsics: Some(traj.intrinsics),
        frames: traj
            .poses
            .iter()
            .zip(&traj.frame_ids)
            .map(|(p, id)| SourceFrame {
                frame_id: id.clone(),
                position: p.position.into(),
                rotation_quat: p.orientation.into(),
                photo_path: Some(format!("photos/{id}.jpg")),
            })
            .collect(),
        objects: scene
            .objects
            .iter()
            .map(|o| SourceObject {
                object_id: Some(o.object_id.clone()),
                label: scene
                    .category(o.category_id)
                    .map(|c| c.name.clone())
                    .unwrap_or_default(),
                boxes: o.boxes.clone(),
            })
            .collect(),
        points: Vec::new(),
    }
}

/// `n_scenes` furnished rooms of varying size, `n_frames` orbit views each.
pub fn source_corpus(n_scenes: usize, n_frames: usize, width: u32, height: u32) -> Vec<SourceSceneRecord> {
    let intr = Intrinsics::from_vfov(width, height, 60.0);
    (0..n_scenes)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
            let (w, d) = (rng.random_range(4.0..8.0), rng.random_range(4.0..7.0));
            let mut scene = room_shell(&format!("scene_{i:03}"), w, d, 3.0);
            let cats = [BED, CHAIR, TABLE, CABINET, DESK];
            for k in 0..6 {
                let half = Vec3::new(
                    rng.random_range(0.2..0.5),
                    rng.random_range(0.2..0.5),
                    rng.random_range(0.2..0.5),
                );
                let c = Vec3::new(rng.random_range(0.6..w - 0.6), rng.random_range(0.6..d - 0.6), half.z);
                let rot = Quat::from_axis_angle(Vec3::Z, rng.random_range(0.0..1.5));
                let b = Obb::new(c, half, rot).expect("fixture box");
                scene
                    .objects
                    .push(SceneObject::new(format!("item_{k}"), cats[k % cats.len()], vec![b]));
            }
            to_source_record(&scene, &room_orbit(w, d, 3.0, n_frames, intr))
        })
        .collect()
}

/// Rules and records where each record after the first trips exactly one
/// filter: EXCESSIVE_EXTENT, TOO_FEW_FRAMES, UNBOUNDED, DISALLOWED_CATEGORY,
/// INVALID_SCENE. The first record passes.
pub fn filter_corpus() -> (FilterRules, Vec<SourceSceneRecord>) {
    let intr = Intrinsics::from_vfov(16, 12, 60.0);
    let rules = FilterRules {
        max_extent_m: 15.0,
        category_whitelist: ["wall", "floor", "ceiling", "bed", "chair"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        min_frames: 4,
        require_bounded: true,
    };
    let room = |id: &str, w: f64| {
        room_shell(id, w, 4.0, 3.0).with_object(SceneObject::new(
            "bed",
            BED,
            vec![aabb([0.5, 0.5, 0.0], [2.0, 2.5, 0.5])],
        ))
    };
    let orbit = |w: f64, n: usize| room_orbit(w, 4.0, 3.0, n, intr);
    let ok = to_source_record(&room("ok", 5.0), &orbit(5.0, 4));
    let wide = to_source_record(&room("too_wide", 20.0), &orbit(20.0, 4));
    let short = to_source_record(&room("too_short", 5.0), &orbit(5.0, 2));
    let mut open = room("open", 5.0);
    open.objects
        .retain(|o| o.object_id != "ceiling" && o.object_id != "wall_n");
    let open = to_source_record(&open, &orbit(5.0, 4));
    let mut lamp = to_source_record(&room("lamp", 5.0), &orbit(5.0, 4));
    lamp.objects.push(SourceObject {
        object_id: Some("lamp".into()),
        label: "lamp".into(),
        boxes: vec![aabb([3.0, 3.0, 0.0], [3.3, 3.3, 1.5])],
    });
    let mut broken = to_source_record(&room("broken", 5.0), &orbit(5.0, 4));
    broken.objects[6].boxes[0].half_extents.z = 0.0;
    (rules, vec![ok, wide, short, open, lamp, broken])
}
