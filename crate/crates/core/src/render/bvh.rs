//! Median-split BVH over the oriented boxes of a scene.

use std::cmp::Ordering;

use crate::geometry::{Aabb, Obb, PreparedObb, Ray, Vec3};
use crate::scene::{precedence_ranks, BoundingBoxScene};

use super::RenderError;

/// Node bounds are grown by this much (meters) so world-space node tests
/// stay conservative against the box-frame test under rounding.
const NODE_PAD: f64 = 1e-7;

const NO_PRIM: u32 = u32::MAX;

/// One member box of one scene object, prepared for ray queries.
#[derive(Debug, Clone, Copy)]
pub struct Primitive {
    pub obb: PreparedObb,
    pub object: u32,
    pub box_index: u32,
    /// Precedence rank of the owning object; lower wins ties.
    pub rank: u32,
    pub category: u8,
}

#[derive(Debug, Clone, Copy)]
pub struct BvhNode {
    pub bounds: Aabb,
    /// Child node indices for inner nodes.
    pub left: u32,
    pub right: u32,
    /// Primitive index for leaves, `u32::MAX` for inner nodes.
    pub prim: u32,
}

impl BvhNode {
    pub fn is_leaf(&self) -> bool {
        self.prim != NO_PRIM
    }
}

#[derive(Debug, Clone)]
pub struct BvhAccel {
    pub prims: Vec<Primitive>,
    pub nodes: Vec<BvhNode>,
}

/// Closest accepted hit for one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub depth: f64,
    pub rank: u32,
    pub prim: u32,
}

impl Hit {
    /// Ordering used to pick a pixel's winner: nearer first, then stronger
    /// precedence, then lower primitive index (boxes of one object).
    #[inline]
    pub fn better_than(&self, other: &Hit) -> bool {
        match self.depth.total_cmp(&other.depth) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => (self.rank, self.prim) < (other.rank, other.prim),
        }
    }
}

/// Depth at which a box with ray interval `[t_near, t_far]` competes, given
/// the clip range. A box containing the near point competes at `near`.
#[inline]
pub fn clipped_depth(t_near: f64, t_far: f64, near: f64, far: f64) -> Option<f64> {
    if t_far < near {
        return None;
    }
    let d = t_near.max(near);
    if d > far {
        None
    } else {
        Some(d)
    }
}

pub(crate) fn prepare_primitives(scene: &BoundingBoxScene) -> Vec<Primitive> {
    let ranks = precedence_ranks(scene);
    let mut prims = Vec::with_capacity(scene.box_count());
    for (oi, obj) in scene.objects.iter().enumerate() {
        for (bi, b) in obj.boxes.iter().enumerate() {
            prims.push(Primitive {
                obb: Obb::prepare(b),
                object: oi as u32,
                box_index: bi as u32,
                rank: ranks[oi],
                category: obj.category_id as u8,
            });
        }
    }
    prims
}

/// Builds the hierarchy. Fails with `EMPTY_SCENE` when there are no boxes.
pub fn build_bvh(scene: &BoundingBoxScene) -> Result<BvhAccel, RenderError> {
    let accel = BvhAccel::build_allow_empty(scene);
    if accel.prims.is_empty() {
        Err(RenderError::EmptyScene)
    } else {
        Ok(accel)
    }
}

impl BvhAccel {
    /// Like [`build_bvh`] but an empty scene yields an empty hierarchy that
    /// every ray misses.
    pub fn build_allow_empty(scene: &BoundingBoxScene) -> BvhAccel {
        let prims = prepare_primitives(scene);
        let bounds: Vec<Aabb> = prims.iter().map(|p| p.obb.world_aabb().padded(NODE_PAD)).collect();
        let centroids: Vec<Vec3> = bounds.iter().map(Aabb::center).collect();
        let mut nodes = Vec::with_capacity(prims.len() * 2);
        if !prims.is_empty() {
            let mut idx: Vec<u32> = (0..prims.len() as u32).collect();
            build_node(&mut nodes, &mut idx, &bounds, &centroids);
        }
        BvhAccel { prims, nodes }
    }

    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }

    pub fn root_bounds(&self) -> Option<Aabb> {
        self.nodes.first().map(|n| n.bounds)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Closest hit within `[near, far]`, resolving exact depth ties by
    /// precedence rank.
    pub fn closest_hit(&self, ray: &Ray, near: f64, far: f64) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let fast = FastRay::new(ray);
        let mut best: Option<Hit> = None;
        let mut stack: [(u32, f64); 64] = [(0, 0.0); 64];
        let root = &self.nodes[0];
        stack[0] = (0, fast.entry(&root.bounds, near, far)?);
        let mut sp = 1usize;
        while sp > 0 {
            sp -= 1;
            let (ni, entry) = stack[sp];
            if let Some(b) = &best {
                if entry > b.depth {
                    continue;
                }
            }
            let node = &self.nodes[ni as usize];
            if node.is_leaf() {
                let prim = &self.prims[node.prim as usize];
                if let Some(h) = prim.obb.intersect(ray) {
                    if let Some(depth) = clipped_depth(h.t_near, h.t_far, near, far) {
                        let cand = Hit {
                            depth,
                            rank: prim.rank,
                            prim: node.prim,
                        };
                        if best.is_none_or(|b| cand.better_than(&b)) {
                            best = Some(cand);
                        }
                    }
                }
                continue;
            }
            let l = fast.entry(&self.nodes[node.left as usize].bounds, near, far);
            let r = fast.entry(&self.nodes[node.right as usize].bounds, near, far);
            // Push the farther child first so the nearer one is visited next.
            let (first, second) = match (l, r) {
                (Some(tl), Some(tr)) if tl <= tr => (Some((node.right, tr)), Some((node.left, tl))),
                (Some(tl), Some(tr)) => (Some((node.left, tl)), Some((node.right, tr))),
                (Some(tl), None) => (None, Some((node.left, tl))),
                (None, Some(tr)) => (None, Some((node.right, tr))),
                (None, None) => (None, None),
            };
            for item in [first, second].into_iter().flatten() {
                stack[sp] = item;
                sp += 1;
            }
        }
        best
    }

    /// Indices of every primitive whose box the ray intersects (t >= 0),
    /// ascending.
    pub fn all_hits(&self, ray: &Ray) -> Vec<u32> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let fast = FastRay::new(ray);
        let mut stack = vec![0u32];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if fast.entry(&node.bounds, 0.0, f64::INFINITY).is_none() {
                continue;
            }
            if node.is_leaf() {
                if self.prims[node.prim as usize].obb.intersect(ray).is_some() {
                    out.push(node.prim);
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        out.sort_unstable();
        out
    }

    /// Reference closest-hit by scanning every primitive.
    pub fn closest_hit_linear(&self, ray: &Ray, near: f64, far: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, prim) in self.prims.iter().enumerate() {
            if let Some(h) = prim.obb.intersect(ray) {
                if let Some(depth) = clipped_depth(h.t_near, h.t_far, near, far) {
                    let cand = Hit {
                        depth,
                        rank: prim.rank,
                        prim: i as u32,
                    };
                    if best.is_none_or(|b| cand.better_than(&b)) {
                        best = Some(cand);
                    }
                }
            }
        }
        best
    }
}

fn build_node(nodes: &mut Vec<BvhNode>, idx: &mut [u32], bounds: &[Aabb], centroids: &[Vec3]) -> u32 {
    let node_bounds = idx.iter().fold(Aabb::empty(), |acc, &i| acc.union(&bounds[i as usize]));
    let me = nodes.len() as u32;
    nodes.push(BvhNode {
        bounds: node_bounds,
        left: 0,
        right: 0,
        prim: NO_PRIM,
    });
    if idx.len() == 1 {
        nodes[me as usize].prim = idx[0];
        return me;
    }
    let cbounds = idx.iter().fold(Aabb::empty(), |acc, &i| {
        let c = centroids[i as usize];
        acc.union(&Aabb { min: c, max: c })
    });
    let axis = cbounds.longest_axis();
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][axis]
            .total_cmp(&centroids[b as usize][axis])
            .then(a.cmp(&b))
    });
    let (lo, hi) = idx.split_at_mut(mid);
    let left = build_node(nodes, lo, bounds, centroids);
    let right = build_node(nodes, hi, bounds, centroids);
    nodes[me as usize].left = left;
    nodes[me as usize].right = right;
    me
}

/// Ray with precomputed reciprocal direction for node tests.
struct FastRay {
    origin: [f64; 3],
    inv: [f64; 3],
    /// 1 where the direction component is negative: the slab is entered
    /// through its max face.
    neg: [usize; 3],
}

impl FastRay {
    fn new(ray: &Ray) -> Self {
        let d = ray.direction.to_array();
        let inv = [1.0 / d[0], 1.0 / d[1], 1.0 / d[2]];
        FastRay {
            origin: ray.origin.to_array(),
            inv,
            neg: inv.map(|v| v.is_sign_negative() as usize),
        }
    }

    /// Entry parameter into `b` clipped to `[near, far]`, if the clipped
    /// interval is nonempty. A zero direction component yields infinite
    /// slab parameters (NaN exactly on a face, which fails every
    /// comparison and so never tightens the interval).
    #[inline]
    fn entry(&self, b: &Aabb, near: f64, far: f64) -> Option<f64> {
        let bounds = [b.min.to_array(), b.max.to_array()];
        let mut t0 = near;
        let mut t1 = far;
        for a in 0..3 {
            let lo = (bounds[self.neg[a]][a] - self.origin[a]) * self.inv[a];
            let hi = (bounds[1 - self.neg[a]][a] - self.origin[a]) * self.inv[a];
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
        }
        (t0 <= t1).then_some(t0)
    }
}
