//! Mesh extraction: a density grid averaged over several query cameras,
//! marching cubes, and OBJ export.

mod tables;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use diffcore::{ParamStore, Real, Tape, Tensor};
use rand::Rng;

use crate::encoder::sample_features;
use crate::error::{config, Result};
use crate::field::{Field, FieldInput};
use crate::geometry::{fibonacci_hemisphere, Pose, Vec3};
use crate::model::SourceViews;
use crate::rendering::direction;
use crate::surface::{save_obj, scene_delta, triangle_area, SubMesh, SurfaceSampler, TriangleMesh};

pub use tables::{CORNERS, EDGES, EDGE_TABLE, TRIANGLE_TABLE};

/// Triangles smaller than this are dropped after extraction.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Densities sampled at the centres of an `R³` lattice of voxels filling
/// the cube `[-half, half]³`. Index `(i, j, k)` maps to `(k·R + j)·R + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub resolution: usize,
    pub half: f64,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn from_fn(resolution: usize, half: f64, f: impl Fn(&Vec3) -> f64) -> Self {
        let mut g = Self {
            resolution,
            half,
            values: Vec::with_capacity(resolution.pow(3)),
        };
        for k in 0..resolution {
            for j in 0..resolution {
                for i in 0..resolution {
                    let x = g.center(i, j, k);
                    g.values.push(f(&x));
                }
            }
        }
        g
    }

    pub fn voxel_size(&self) -> f64 {
        2.0 * self.half / self.resolution as f64
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let h = self.voxel_size();
        let c = |n: usize| -self.half + (n as f64 + 0.5) * h;
        Vec3::new(c(i), c(j), c(k))
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn centers(&self) -> Vec<Vec3> {
        let r = self.resolution;
        (0..r * r * r)
            .map(|n| self.center(n % r, (n / r) % r, n / (r * r)))
            .collect()
    }
}

/// Density at which a segment of the reference length is half opaque:
/// `ln 2 / δ_ref`.
pub fn default_iso(aabb_scale: f64, n_coarse: usize, n_fine: usize) -> f64 {
    std::f64::consts::LN_2 / scene_delta(aabb_scale, n_coarse, n_fine)
}

/// The default query cameras: `n` poses of the hemisphere lattice.
pub fn default_cameras(n: usize, radius: f64) -> Vec<Pose> {
    fibonacci_hemisphere(n, radius)
}

/// Sum after sorting, combined pairwise; the result does not depend on the
/// order of `v`.
pub fn order_invariant_sum(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    pairwise(v)
}

fn pairwise(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise(a) + pairwise(b)
    }
}

/// Evaluate `field` at every voxel centre once per camera, with the query
/// direction pointing from that camera to the voxel, and average. `map` is
/// the detached feature map of `views`.
#[allow(clippy::too_many_arguments)]
pub fn eval_density_grid<T: Real>(
    field: &Field,
    store: &ParamStore<T>,
    views: &SourceViews,
    map: &Tensor<T>,
    cameras: &[Pose],
    resolution: usize,
    aabb_scale: f64,
    chunk: usize,
) -> Result<DensityGrid> {
    if cameras.is_empty() {
        return Err(config("density grid needs at least one camera"));
    }
    if resolution < 2 || chunk == 0 {
        return Err(config("density grid needs resolution >= 2 and a positive chunk"));
    }
    let mut grid = DensityGrid {
        resolution,
        half: aabb_scale,
        values: Vec::new(),
    };
    let centers = grid.centers();
    let source_dirs = views.directions();
    let origins: Vec<Vec3> = cameras.iter().map(Pose::origin).collect();
    // SAFETY: plain float arithmetic; only subnormal results are affected.
    let values = unsafe {
        no_denormals::no_denormals(|| -> Result<Vec<f64>> {
            let mut values = Vec::with_capacity(centers.len());
            for pts in centers.chunks(chunk) {
                let tape = Tape::no_grad();
                let uv = views.project_all(pts);
                let features = sample_features(tape.constant(map.clone()), &uv, views.width(), views.height())?;
                let mut per_cam = vec![0.0; pts.len() * origins.len()];
                for (c, o) in origins.iter().enumerate() {
                    let dirs: Vec<Vec3> = pts.iter().map(|x| direction(o, x)).collect();
                    let input = FieldInput {
                        points: pts,
                        dirs: &dirs,
                        source_dirs: &source_dirs,
                        aabb_scale,
                    };
                    let out = field.forward(&tape, store, features, &input)?;
                    for (p, s) in out.sigma.value().data().iter().enumerate() {
                        per_cam[p * origins.len() + c] = s.as_f64();
                    }
                }
                for row in per_cam.chunks_mut(origins.len()) {
                    values.push(order_invariant_sum(row) / origins.len() as f64);
                }
            }
            Ok(values)
        })?
    };
    grid.values = values;
    Ok(grid)
}

/// Marching-cubes output in world coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LodMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Resolution of the grid the mesh was extracted from.
    pub resolution: usize,
}

impl LodMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Signed enclosed volume; positive when triangles wind outwards.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn to_triangle_mesh(&self) -> TriangleMesh {
        let submeshes = if self.triangles.is_empty() {
            Vec::new()
        } else {
            vec![SubMesh {
                name: "surface".into(),
                material: None,
                triangles: 0..self.triangles.len(),
            }]
        };
        TriangleMesh {
            positions: self.vertices.clone(),
            uvs: Vec::new(),
            triangles: self.triangles.clone(),
            submeshes,
            materials: Vec::new(),
        }
    }
}

/// Extract the `iso` level set of `grid` with linear interpolation along
/// cell edges. Corners below `iso` count as outside; faces wind
/// counter-clockwise seen from outside. Vertices on shared edges are welded.
pub fn marching_cubes(grid: &DensityGrid, iso: f64) -> LodMesh {
    let r = grid.resolution;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut vertex_at = |a: usize, b: usize, pa: Vec3, pb: Vec3, va: f64, vb: f64| -> u32 {
        let key = (a.min(b), a.max(b));
        *edge_vertex.entry(key).or_insert_with(|| {
            // Interpolate from the lower index so both neighbours agree bitwise.
            let (pa, pb, va, vb) = if a < b { (pa, pb, va, vb) } else { (pb, pa, vb, va) };
            let d = vb - va;
            let t = if d.abs() > 0.0 { ((iso - va) / d).clamp(0.0, 1.0) } else { 0.5 };
            vertices.push(pa + (pb - pa) * t);
            (vertices.len() - 1) as u32
        })
    };
    if r >= 2 {
        for k in 0..r - 1 {
            for j in 0..r - 1 {
                for i in 0..r - 1 {
                    let mut idx = [0usize; 8];
                    let mut val = [0.0; 8];
                    let mut case = 0usize;
                    for (c, off) in CORNERS.iter().enumerate() {
                        idx[c] = grid.index(i + off[0], j + off[1], k + off[2]);
                        val[c] = grid.values[idx[c]];
                        if val[c] < iso {
                            case |= 1 << c;
                        }
                    }
                    if EDGE_TABLE[case] == 0 {
                        continue;
                    }
                    let mut ev = [u32::MAX; 12];
                    for (e, &(a, b)) in EDGES.iter().enumerate() {
                        if EDGE_TABLE[case] & (1 << e) != 0 {
                            let pa = grid.center(i + CORNERS[a][0], j + CORNERS[a][1], k + CORNERS[a][2]);
                            let pb = grid.center(i + CORNERS[b][0], j + CORNERS[b][1], k + CORNERS[b][2]);
                            ev[e] = vertex_at(idx[a], idx[b], pa, pb, val[a], val[b]);
                        }
                    }
                    for tri in TRIANGLE_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                        triangles.push([ev[tri[0] as usize], ev[tri[1] as usize], ev[tri[2] as usize]]);
                    }
                }
            }
        }
    }
    cleanup(LodMesh {
        vertices,
        triangles,
        resolution: r,
    })
}

/// Drop triangles below [`MIN_TRIANGLE_AREA`] and unreferenced vertices.
fn cleanup(mesh: LodMesh) -> LodMesh {
    let kept: Vec<[u32; 3]> = mesh
        .triangles
        .into_iter()
        .filter(|t| {
            let [a, b, c] = t.map(|i| mesh.vertices[i as usize]);
            triangle_area(&a, &b, &c) >= MIN_TRIANGLE_AREA
        })
        .collect();
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    let triangles = kept
        .into_iter()
        .map(|t| {
            t.map(|i| {
                if remap[i as usize] == u32::MAX {
                    remap[i as usize] = vertices.len() as u32;
                    vertices.push(mesh.vertices[i as usize]);
                }
                remap[i as usize]
            })
        })
        .collect();
    LodMesh {
        vertices,
        triangles,
        resolution: mesh.resolution,
    }
}

pub fn export_obj(mesh: &LodMesh, path: &Path) -> Result<()> {
    save_obj(&mesh.to_triangle_mesh(), path)
}

/// `n` area-uniform points on the surface of `mesh`.
pub fn surface_points<R: Rng + ?Sized>(mesh: &TriangleMesh, n: usize, rng: &mut R) -> Result<Vec<Vec3>> {
    let sampler = SurfaceSampler::new(Arc::new(mesh.clone()), true)?;
    Ok(sampler.batch(n, 0.0, rng)?.samples.into_iter().map(|s| s.point).collect())
}

/// Symmetric chamfer distance: the mean nearest-neighbour distance from `a`
/// to `b` plus that from `b` to `a`, halved. Brute force, `O(|a|·|b|)`.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let one_way = |from: &[Vec3], to: &[Vec3]| -> f64 {
        from.iter()
            .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt())
            .sum::<f64>()
            / from.len() as f64
    };
    0.5 * (one_way(a, b) + one_way(b, a))
}
