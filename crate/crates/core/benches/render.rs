use criterion::{criterion_group, criterion_main, Criterion};

use bbs_core::camera::Intrinsics;
use bbs_core::fixtures::{furnished_room, room_orbit};
use bbs_core::par;
use bbs_core::render::{render_bbi, BvhAccel, RenderConfig};

fn render_threads(c: &mut Criterion) {
    let scene = furnished_room(7, 200);
    let accel = BvhAccel::build_allow_empty(&scene);
    let traj = room_orbit(8.0, 7.0, 3.0, 1, Intrinsics::from_vfov(768, 512, 60.0));
    let pose = traj.poses[0];
    let cfg = RenderConfig::default();

    let mut group = c.benchmark_group("render_768x512_200_boxes");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        par::with_threads(Some(1), || {
            b.iter(|| render_bbi(&scene, &accel, &traj.intrinsics, &pose, &cfg).unwrap())
        })
    });
    group.bench_function("parallel", |b| {
        par::with_threads(None, || {
            b.iter(|| render_bbi(&scene, &accel, &traj.intrinsics, &pose, &cfg).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, render_threads);
criterion_main!(benches);
