mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bbs_core::camera::{look_at_pose, Intrinsics, Pose};
use bbs_core::fixtures::{furnished_room, random_outside_pose, random_scene, room_orbit};
use bbs_core::geometry::{point_in_obb, Obb, Quat, Ray, Vec3};
use bbs_core::par;
use bbs_core::render::{
    render_bbi, render_bbi_from_voxels, render_bbi_linear, render_scene, render_trajectory, BvhAccel, RenderConfig,
};
use bbs_core::scene::{default_categories, BoundingBoxScene, SceneObject};
use bbs_core::voxel::{voxelize_scene, OverlapPolicy, VoxelGrid};

use common::{mismatches, oracle_render};

fn cfg() -> RenderConfig {
    RenderConfig::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bvh_matches_brute_force(seed in any::<u64>()) {
        let scene = random_scene(seed, 25);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let pose = random_outside_pose(&mut rng);
        let intr = Intrinsics::from_vfov(48, 32, 55.0);
        let img = render_scene(&scene, &intr, &pose, &cfg()).unwrap();
        let (sem, depth) = oracle_render(&scene, &intr, &pose, 0.01, 40.0);
        prop_assert_eq!(mismatches(&img.semantic, &img.depth, &sem, &depth, 1e-6), 0);
    }
}

#[test]
fn hit_sets_match_linear_scan_for_10k_rays() {
    let scene = random_scene(77, 500);
    let mut big = scene.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    while big.box_count() < 500 {
        let extra = random_scene(rng.random(), 25);
        for mut o in extra.objects {
            o.object_id = format!("x{}", big.objects.len());
            big.objects.push(o);
        }
    }
    let accel = BvhAccel::build_allow_empty(&big);
    let boxes: Vec<&Obb> = big.objects.iter().flat_map(|o| o.boxes.iter()).collect();
    for _ in 0..10_000 {
        let o = Vec3::new(
            rng.random_range(-6.0..6.0),
            rng.random_range(-6.0..6.0),
            rng.random_range(-4.0..4.0),
        );
        let d = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let Ok(ray) = Ray::new(o, d) else { continue };
        let expect: Vec<u32> = boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| common::ray_box(&ray, b).is_some())
            .map(|(i, _)| i as u32)
            .collect();
        assert_eq!(accel.all_hits(&ray), expect);
    }
}

#[test]
fn rotated_box_matches_ray_march() {
    let q = Quat::from_axis_angle(Vec3::Z, 45f64.to_radians());
    let b = Obb::new(Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.5, 0.7), q).unwrap();
    let scene = BoundingBoxScene::new("r", default_categories()).with_object(SceneObject::new("b", 3, vec![b]));
    let intr = Intrinsics::from_vfov(32, 24, 50.0);
    let pose = look_at_pose(Vec3::new(4.0, -3.0, 1.5), Vec3::ZERO, Vec3::Z).unwrap();
    let img = render_scene(&scene, &intr, &pose, &cfg()).unwrap();
    let step = 1e-4;
    let mut hits = 0;
    for row in 0..24 {
        for col in 0..32 {
            let ray = bbs_core::camera::pixel_ray(&intr, &pose, col as f64 + 0.5, row as f64 + 0.5);
            let mut t = 0.0;
            let mut found = None;
            while t < 10.0 {
                if point_in_obb(ray.at(t), &b) {
                    found = Some(t);
                    break;
                }
                t += step;
            }
            let i = img.index(col, row);
            match found {
                Some(t) => {
                    hits += 1;
                    assert_eq!(img.semantic[i], 3);
                    assert!(
                        img.depth[i] <= t + 1e-9 && img.depth[i] > t - step - 1e-9,
                        "{} vs {t}",
                        img.depth[i]
                    );
                }
                // A march can step over a grazing corner; the renderer may still hit it.
                None => assert!(img.semantic[i] == 0 || img.depth[i].is_finite()),
            }
        }
    }
    assert!(hits > 50);
}

#[test]
fn long_trajectory_with_sampled_oracle() {
    let scene = furnished_room(11, 200);
    let traj = room_orbit(8.0, 7.0, 3.0, 150, Intrinsics::from_vfov(24, 16, 60.0));
    let imgs = render_trajectory(&scene, &traj, &cfg()).unwrap();
    assert_eq!(imgs.len(), 150);
    for k in [0usize, 37, 74, 111, 149] {
        let (sem, depth) = oracle_render(&scene, &traj.intrinsics, &traj.poses[k], 0.01, 40.0);
        assert_eq!(
            mismatches(&imgs[k].semantic, &imgs[k].depth, &sem, &depth, 1e-6),
            0,
            "frame {k}"
        );
        assert_eq!(imgs[k].frame_id, traj.frame_ids[k]);
    }
}

#[test]
fn repeated_poses_and_thread_counts_give_identical_images() {
    let scene = furnished_room(5, 120);
    let accel = BvhAccel::build_allow_empty(&scene);
    let intr = Intrinsics::from_vfov(100, 70, 60.0);
    let pose = room_orbit(8.0, 7.0, 3.0, 3, intr).poses[1];
    let one = par::with_threads(Some(1), || render_bbi(&scene, &accel, &intr, &pose, &cfg()).unwrap());
    let three = par::with_threads(Some(3), || render_bbi(&scene, &accel, &intr, &pose, &cfg()).unwrap());
    let again = render_bbi(&scene, &accel, &intr, &pose, &cfg()).unwrap();
    assert!(one.bitwise_eq(&three) && one.bitwise_eq(&again));
    let linear = render_bbi_linear(&accel, &intr, &pose, &cfg()).unwrap();
    assert!(one.bitwise_eq(&linear));
}

#[test]
fn removing_an_object_never_brings_depth_closer() {
    let intr = Intrinsics::from_vfov(40, 30, 60.0);
    for seed in 0..10 {
        let scene = random_scene(seed, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = random_outside_pose(&mut rng);
        let full = render_scene(&scene, &intr, &pose, &cfg()).unwrap();
        let mut less = scene.clone();
        less.objects.remove(0);
        let reduced = render_scene(&less, &intr, &pose, &cfg()).unwrap();
        for (a, b) in full.depth.iter().zip(&reduced.depth) {
            assert!(b >= a);
        }
    }
}

#[test]
fn coupling_of_semantics_and_depth() {
    let intr = Intrinsics::from_vfov(40, 30, 60.0);
    let c = cfg();
    for seed in 0..5 {
        let scene = random_scene(seed, 25);
        let pose = random_outside_pose(&mut ChaCha8Rng::seed_from_u64(seed));
        let img = render_scene(&scene, &intr, &pose, &c).unwrap();
        let table: Vec<u16> = scene.categories.iter().map(|c| c.id).collect();
        for (s, d) in img.semantic.iter().zip(&img.depth) {
            assert_eq!(*s != 0, (c.near..=c.far).contains(d));
            assert!(table.contains(&(*s as u16)));
        }
    }
}

fn single_cell_grid(unit: f64) -> VoxelGrid {
    // Cell (1, 1, 1) occupied; grid origin at the world origin.
    let mut cells = vec![0u8; 27];
    cells[(3 + 1) * 3 + 1] = 3;
    VoxelGrid::from_parts(Vec3::ZERO, unit, [3, 3, 3], cells, default_categories()).unwrap()
}

#[test]
fn voxel_ahead_at_three_meters() {
    let unit = 0.2;
    let grid = single_cell_grid(unit);
    let center = Vec3::splat(1.5 * unit);
    // Camera looks along +x at the cell center from 3 m away.
    let eye = center - Vec3::X * 3.0;
    let pose = look_at_pose(eye, center, Vec3::Z).unwrap();
    let intr = Intrinsics::from_vfov(9, 9, 10.0);
    let img = render_bbi_from_voxels(&grid, &intr, &pose, &cfg()).unwrap();
    let i = img.index(4, 4);
    assert_eq!(img.semantic[i], 3);
    assert!((img.depth[i] - (3.0 - unit / 2.0)).abs() < 1e-9, "{}", img.depth[i]);
}

#[test]
fn empty_grid_renders_void() {
    let grid = VoxelGrid::from_parts(Vec3::ZERO, 0.5, [4, 4, 4], vec![0; 64], default_categories()).unwrap();
    let pose = look_at_pose(Vec3::new(-3.0, 1.0, 1.0), Vec3::splat(1.0), Vec3::Z).unwrap();
    let img = render_bbi_from_voxels(&grid, &Intrinsics::from_vfov(16, 12, 60.0), &pose, &cfg()).unwrap();
    assert_eq!(img.hit_count(), 0);
}

fn axis_aligned_scene(seed: u64) -> BoundingBoxScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = BoundingBoxScene::new("aa", default_categories());
    for i in 0..6 {
        let c = Vec3::new(
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            rng.random_range(-0.8..0.8),
        );
        let h = Vec3::new(
            rng.random_range(0.2..0.7),
            rng.random_range(0.2..0.7),
            rng.random_range(0.2..0.7),
        );
        s.objects.push(SceneObject::new(
            format!("o{i}"),
            (i % 9 + 1) as u16,
            vec![Obb::axis_aligned(c, h).unwrap()],
        ));
    }
    s
}

#[test]
fn voxel_render_agrees_with_box_render_at_fine_unit() {
    let intr = Intrinsics::from_vfov(64, 48, 60.0);
    for seed in 0..3 {
        let scene = axis_aligned_scene(seed);
        let grid = voxelize_scene(&scene, 0.05, OverlapPolicy::Center).unwrap();
        let pose = random_outside_pose(&mut ChaCha8Rng::seed_from_u64(seed + 40));
        let boxes = render_scene(&scene, &intr, &pose, &cfg()).unwrap();
        let vox = render_bbi_from_voxels(&grid, &intr, &pose, &cfg()).unwrap();
        let hit: Vec<usize> = (0..boxes.len()).filter(|&i| boxes.semantic[i] != 0).collect();
        let agree = hit.iter().filter(|&&i| boxes.semantic[i] == vox.semantic[i]).count();
        let frac = agree as f64 / hit.len() as f64;
        assert!(frac >= 0.95, "seed {seed}: {frac}");
    }
}

#[test]
fn camera_inside_every_box_sees_the_strongest_at_near() {
    let outer = Obb::axis_aligned(Vec3::ZERO, Vec3::splat(3.0)).unwrap();
    let inner = Obb::axis_aligned(Vec3::ZERO, Vec3::splat(1.0)).unwrap();
    let scene = BoundingBoxScene::new("in", default_categories())
        .with_object(SceneObject::new("room", 1, vec![outer]))
        .with_object(SceneObject::new("crate", 29, vec![inner]));
    let img = render_scene(&scene, &Intrinsics::from_vfov(8, 6, 60.0), &Pose::default(), &cfg()).unwrap();
    assert!(img.semantic.iter().all(|&s| s == 29));
    assert!(img.depth.iter().all(|&d| d == 0.01));
}
