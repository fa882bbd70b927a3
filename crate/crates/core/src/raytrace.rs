//! Closest-hit ray casting against triangle meshes.

use crate::geometry::{Ray, Vec3};
use crate::surface::TriangleMesh;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub triangle: usize,
    /// Barycentric weights of the three corners.
    pub bary: [f64; 3],
}

/// Möller–Trumbore intersection; hits with `t` outside `(t_min, t_max)` are
/// rejected. Both faces count.
pub fn intersect_triangle(
    origin: &Vec3,
    dir: &Vec3,
    [a, b, c]: &[Vec3; 3],
    t_min: f64,
    t_max: f64,
) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > t_min && t < t_max).then_some((t, u, v))
}

/// Reference intersector: tests every triangle.
pub fn brute_force_hit(mesh: &TriangleMesh, ray: &Ray) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for t in 0..mesh.num_triangles() {
        let limit = best.map_or(ray.t_far, |h| h.t);
        if let Some((d, u, v)) = intersect_triangle(&ray.origin, &ray.direction, &mesh.corners(t), ray.t_near, limit) {
            best = Some(Hit {
                t: d,
                triangle: t,
                bary: [1.0 - u - v, u, v],
            });
        }
    }
    best
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    fn hit(&self, origin: &Vec3, inv_dir: &Vec3, t_min: f64, t_max: f64) -> bool {
        let (mut t0, mut t1) = (t_min, t_max);
        for a in 0..3 {
            let mut ta = (self.lo[a] - origin[a]) * inv_dir[a];
            let mut tb = (self.hi[a] - origin[a]) * inv_dir[a];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = if ta > t0 { ta } else { t0 };
            t1 = if tb < t1 { tb } else { t1 };
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, len: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

const LEAF_SIZE: usize = 4;

/// Median-split bounding volume hierarchy over a mesh's triangles.
#[derive(Clone, Debug)]
pub struct Bvh<'m> {
    mesh: &'m TriangleMesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl<'m> Bvh<'m> {
    pub fn build(mesh: &'m TriangleMesh) -> Self {
        let mut order: Vec<usize> = (0..mesh.num_triangles()).collect();
        let boxes: Vec<Aabb> = (0..mesh.num_triangles())
            .map(|t| {
                let mut b = Aabb::empty();
                for p in mesh.corners(t) {
                    b.grow(&p);
                }
                b
            })
            .collect();
        let centroids: Vec<Vec3> = boxes.iter().map(|b| (b.lo + b.hi) * 0.5).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            Self::split(&mut nodes, &mut order, 0, &boxes, &centroids);
        }
        Self { mesh, nodes, order }
    }

    fn split(nodes: &mut Vec<Node>, order: &mut [usize], start: usize, boxes: &[Aabb], centroids: &[Vec3]) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &t in order.iter() {
            bounds.merge(&boxes[t]);
            cbounds.grow(&centroids[t]);
        }
        let id = nodes.len();
        if order.len() <= LEAF_SIZE {
            nodes.push(Node::Leaf {
                bounds,
                start,
                len: order.len(),
            });
            return id;
        }
        nodes.push(Node::Leaf {
            bounds,
            start,
            len: 0,
        });
        let extent = cbounds.hi - cbounds.lo;
        let axis = extent.imax();
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]));
        let (lo, hi) = order.split_at_mut(mid);
        let left = Self::split(nodes, lo, start, boxes, centroids);
        let right = Self::split(nodes, hi, start + mid, boxes, centroids);
        nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    pub fn closest_hit(&self, ray: &Ray) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = ray.direction.map(|d| 1.0 / d);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let limit = best.map_or(ray.t_far, |h| h.t);
            match &self.nodes[n] {
                Node::Leaf { bounds, start, len } => {
                    if !bounds.hit(&ray.origin, &inv, ray.t_near, limit) {
                        continue;
                    }
                    for &t in &self.order[*start..*start + *len] {
                        let limit = best.map_or(ray.t_far, |h| h.t);
                        if let Some((d, u, v)) =
                            intersect_triangle(&ray.origin, &ray.direction, &self.mesh.corners(t), ray.t_near, limit)
                        {
                            best = Some(Hit {
                                t: d,
                                triangle: t,
                                bary: [1.0 - u - v, u, v],
                            });
                        }
                    }
                }
                Node::Inner { bounds, left, right } => {
                    if bounds.hit(&ray.origin, &inv, ray.t_near, limit) {
                        stack.push(*right);
                        stack.push(*left);
                    }
                }
            }
        }
        best
    }
}
