//! Brute-force oracles shared by the integration tests. They only use the
//! public quaternion and vector arithmetic, never the renderer's prepared
//! boxes or hierarchy.
#![allow(dead_code)]

use bbs_core::camera::{pixel_ray, Intrinsics, Pose};
use bbs_core::geometry::{Obb, Ray, Vec3};
use bbs_core::scene::BoundingBoxScene;

/// Ray parameter interval through a box, computed in the box frame by
/// rotating the ray with the conjugate quaternion.
pub fn ray_box(ray: &Ray, b: &Obb) -> Option<(f64, f64)> {
    let inv = b.rotation.conjugate();
    let o = inv.rotate(ray.origin - b.center);
    let d = inv.rotate(ray.direction);
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for a in 0..3 {
        let h = b.half_extents[a];
        if d[a] == 0.0 {
            if o[a] < -h || o[a] > h {
                return None;
            }
            continue;
        }
        let t1 = (-h - o[a]) / d[a];
        let t2 = (h - o[a]) / d[a];
        lo = lo.max(t1.min(t2));
        hi = hi.min(t1.max(t2));
    }
    (lo <= hi && hi >= 0.0).then_some((lo.max(0.0), hi))
}

/// World-space axis-aligned bound of a box from its eight corners.
pub fn corner_bound(b: &Obb) -> (Vec3, Vec3) {
    let mut min = Vec3::splat(f64::INFINITY);
    let mut max = Vec3::splat(f64::NEG_INFINITY);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                let local = Vec3::new(sx * b.half_extents.x, sy * b.half_extents.y, sz * b.half_extents.z);
                let p = b.center + b.rotation.rotate(local);
                min = min.min(p);
                max = max.max(p);
            }
        }
    }
    (min, max)
}

/// Object order under the tie-break rule: smaller union bound volume first,
/// then object id. Returns one rank per object.
pub fn ranks(scene: &BoundingBoxScene) -> Vec<usize> {
    let vols: Vec<f64> = scene
        .objects
        .iter()
        .map(|o| {
            let (mut lo, mut hi) = (Vec3::splat(f64::INFINITY), Vec3::splat(f64::NEG_INFINITY));
            for b in &o.boxes {
                let (a, c) = corner_bound(b);
                lo = lo.min(a);
                hi = hi.max(c);
            }
            let e = hi - lo;
            e.x * e.y * e.z
        })
        .collect();
    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.sort_by(|&a, &b| {
        vols[a]
            .partial_cmp(&vols[b])
            .unwrap()
            .then_with(|| scene.objects[a].object_id.cmp(&scene.objects[b].object_id))
    });
    let mut r = vec![0; order.len()];
    for (k, i) in order.into_iter().enumerate() {
        r[i] = k;
    }
    r
}

/// Per-pixel scan over every box of every object: nearest clipped entry
/// wins, exact ties go to the lower rank.
pub fn oracle_render(
    scene: &BoundingBoxScene,
    intr: &Intrinsics,
    pose: &Pose,
    near: f64,
    far: f64,
) -> (Vec<u8>, Vec<f64>) {
    let rk = ranks(scene);
    let n = (intr.width * intr.height) as usize;
    let mut sem = vec![0u8; n];
    let mut depth = vec![f64::INFINITY; n];
    for row in 0..intr.height {
        for col in 0..intr.width {
            let ray = pixel_ray(intr, pose, col as f64 + 0.5, row as f64 + 0.5);
            let mut best: Option<(f64, usize, u8)> = None;
            for (oi, obj) in scene.objects.iter().enumerate() {
                for b in &obj.boxes {
                    let Some((t0, t1)) = ray_box(&ray, b) else { continue };
                    if t1 < near {
                        continue;
                    }
                    let d = t0.max(near);
                    if d > far {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some((bd, br, _)) => d < bd || (d == bd && rk[oi] < br),
                    };
                    if better {
                        best = Some((d, rk[oi], obj.category_id as u8));
                    }
                }
            }
            if let Some((d, _, c)) = best {
                let i = (row * intr.width + col) as usize;
                sem[i] = c;
                depth[i] = d;
            }
        }
    }
    (sem, depth)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Pixels where semantics differ or depth differs by more than `tol`
/// relative.
pub fn mismatches(sem_a: &[u8], d_a: &[f64], sem_b: &[u8], d_b: &[f64], tol: f64) -> usize {
    sem_a
        .iter()
        .zip(sem_b)
        .zip(d_a.iter().zip(d_b))
        .filter(|((sa, sb), (da, db))| sa != sb || rel_err(**da, **db) > tol)
        .count()
}
