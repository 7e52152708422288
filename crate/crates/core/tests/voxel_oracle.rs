mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bbs_core::fixtures::random_scene;
use bbs_core::geometry::{Obb, Quat, Vec3};
use bbs_core::scene::{default_categories, BoundingBoxScene, SceneObject};
use bbs_core::voxel::{
    voxelize_object, voxelize_scene, voxelize_scene_with, OverlapPolicy, VoxelGrid, VoxelizeOptions,
};

fn random_box(rng: &mut ChaCha8Rng) -> Obb {
    let c = Vec3::new(
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    );
    let h = Vec3::new(
        rng.random_range(0.05..0.9),
        rng.random_range(0.05..0.9),
        rng.random_range(0.05..0.9),
    );
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let q = match axis.try_normalize() {
        Some(a) if rng.random_bool(0.7) => Quat::from_axis_angle(a, rng.random_range(0.0..std::f64::consts::TAU)),
        _ => Quat::IDENTITY,
    };
    Obb::new(c, h, q).unwrap()
}

fn inside(b: &Obb, p: Vec3) -> bool {
    let l = b.rotation.conjugate().rotate(p - b.center);
    (0..3).all(|a| l[a].abs() <= b.half_extents[a])
}

/// Integer cell coordinates `floor(p / unit)` of every cell whose center lies
/// in the box, by scanning the corner bound.
fn center_oracle(b: &Obb, unit: f64) -> BTreeSet<[i64; 3]> {
    let (lo, hi) = common::corner_bound(b);
    let mut out = BTreeSet::new();
    let r = |v: f64| (v / unit).floor() as i64;
    for z in r(lo.z) - 1..=r(hi.z) + 1 {
        for y in r(lo.y) - 1..=r(hi.y) + 1 {
            for x in r(lo.x) - 1..=r(hi.x) + 1 {
                let c = Vec3::new(
                    (x as f64 + 0.5) * unit,
                    (y as f64 + 0.5) * unit,
                    (z as f64 + 0.5) * unit,
                );
                if inside(b, c) {
                    out.insert([x, y, z]);
                }
            }
        }
    }
    out
}

fn occupied(grid: &VoxelGrid) -> BTreeSet<[i64; 3]> {
    let base = [0, 1, 2].map(|a| (grid.origin[a] / grid.unit).round() as i64);
    (0..grid.len())
        .filter(|&i| grid.cells[i] != 0)
        .map(|i| {
            let c = grid.coords(i);
            [base[0] + c[0] as i64, base[1] + c[1] as i64, base[2] + c[2] as i64]
        })
        .collect()
}

#[test]
fn center_policy_equals_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in 0..100 {
        let b = random_box(&mut rng);
        let obj = SceneObject::new("b", 3, vec![b]);
        let grid = voxelize_object(&obj, 0.2, OverlapPolicy::Center).unwrap();
        assert_eq!(occupied(&grid), center_oracle(&b, 0.2), "box {k}: {b:?}");
    }
}

#[test]
fn small_cube_gives_eight_cells() {
    let b = Obb::from_min_max(Vec3::ZERO, Vec3::splat(0.4)).unwrap();
    let obj = SceneObject::new("c", 3, vec![b]);
    for policy in [OverlapPolicy::Center, OverlapPolicy::Overlap] {
        let g = voxelize_object(&obj, 0.2, policy).unwrap();
        assert_eq!(g.occupied_count(), 8, "{policy:?}");
    }
}

#[test]
fn center_is_subset_of_overlap() {
    for seed in 0..30 {
        let scene = random_scene(seed, 12);
        let bounds = bbs_core::scene::scene_bounds(&scene).unwrap();
        let mk = |policy| {
            let opts = VoxelizeOptions {
                bounds: Some(bounds),
                ..VoxelizeOptions::new(0.2, policy)
            };
            voxelize_scene_with(&scene, &opts).unwrap()
        };
        let (c, o) = (mk(OverlapPolicy::Center), mk(OverlapPolicy::Overlap));
        assert_eq!(c.dims, o.dims);
        for (a, b) in c.cells.iter().zip(&o.cells) {
            assert!(*a == 0 || *b != 0);
        }
    }
}

#[test]
fn shared_cells_go_to_the_smaller_object() {
    let big = Obb::from_min_max(Vec3::ZERO, Vec3::splat(1.0)).unwrap();
    let small = Obb::from_min_max(Vec3::splat(0.2), Vec3::splat(0.6)).unwrap();
    let scene = BoundingBoxScene::new("p", default_categories())
        .with_object(SceneObject::new("a_big", 1, vec![big]))
        .with_object(SceneObject::new("z_small", 5, vec![small]));
    let g = voxelize_scene(&scene, 0.2, OverlapPolicy::Center).unwrap();
    let small_cells = g.cells.iter().filter(|&&c| c == 5).count();
    assert_eq!(small_cells, 8);
    assert_eq!(g.occupied_count(), 125);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn binary_format_round_trips(seed in any::<u64>(), unit in prop_oneof![Just(0.1), Just(0.2), Just(0.25)]) {
        let scene = random_scene(seed, 6);
        let g = voxelize_scene(&scene, unit, OverlapPolicy::Overlap).unwrap();
        let back = VoxelGrid::read_from(g.to_bytes().as_slice()).unwrap();
        prop_assert_eq!(back, g);
    }
}
