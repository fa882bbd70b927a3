//! Procedural textured characters and posed renders of them.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ConceptArt, DatasetWriter};
use crate::error::{config, Result};
use crate::geometry::{fibonacci_hemisphere, orbit_pose, Camera, Intrinsics, Pose, Vec3};
use crate::imageio::RgbImage;
use crate::raytrace::Bvh;
use crate::surface::{Material, SubMesh, TriangleMesh};

pub const TEXTURE_FILE: &str = "texture.png";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    Sphere,
    CapsuleFigure,
    BlockyCharacter,
}

impl std::str::FromStr for Generator {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Generator::Sphere),
            "capsule-figure" => Ok(Generator::CapsuleFigure),
            "blocky-character" => Ok(Generator::BlockyCharacter),
            _ => Err(config(format!(
                "unknown generator `{s}` (expected sphere, capsule-figure or blocky-character)"
            ))),
        }
    }
}

impl std::fmt::Display for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Generator::Sphere => "sphere",
            Generator::CapsuleFigure => "capsule-figure",
            Generator::BlockyCharacter => "blocky-character",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub generator: Generator,
    pub palette_seed: u64,
    pub height: f64,
    pub resolution: u32,
    pub n_views: usize,
    pub camera_radius: f64,
    pub fov_deg: f64,
    pub aabb_scale: f64,
    pub texture_size: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            generator: Generator::CapsuleFigure,
            palette_seed: 0,
            height: 2.0,
            resolution: 128,
            n_views: 60,
            camera_radius: 4.0,
            fov_deg: 40.0,
            aabb_scale: 1.05,
            texture_size: 256,
        }
    }
}

impl SceneSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.resolution, self.resolution, self.fov_deg, self.aabb_scale)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 4 || self.n_views == 0 || self.texture_size < 16 {
            return Err(config("resolution >= 4, n_views >= 1 and texture_size >= 16 required"));
        }
        if !(self.height > 0.0 && self.camera_radius > self.aabb_scale * 3f64.sqrt() && self.aabb_scale > 0.0) {
            return Err(config("cameras must lie outside the scene cube"));
        }
        if self.height / 2.0 > self.aabb_scale {
            return Err(config("character taller than the scene cube"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Texture atlas

/// Square tiles of the texture atlas, one per body part.
const ATLAS_GRID: usize = 4;

#[derive(Clone, Copy, Debug)]
struct Tile {
    u0: f64,
    v0: f64,
    size: f64,
}

impl Tile {
    fn new(index: usize) -> Self {
        let size = 1.0 / ATLAS_GRID as f64;
        Self {
            u0: (index % ATLAS_GRID) as f64 * size,
            v0: (index / ATLAS_GRID) as f64 * size,
            size,
        }
    }

    /// Map local `(s, t) ∈ [0,1]²` into the tile with a half-texel inset.
    fn uv(&self, s: f64, t: f64) -> [f64; 2] {
        let inset = 0.02;
        let k = self.size * (1.0 - 2.0 * inset);
        [self.u0 + self.size * inset + s * k, self.v0 + self.size * inset + t * k]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Pattern {
    Stripes,
    Band,
    Face,
    Checker,
}

fn hsv(h: f64, s: f64, v: f64) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) as f32, (g + m) as f32, (b + m) as f32]
}

fn shade(c: [f32; 3], k: f32) -> [f32; 3] {
    c.map(|x| (x * k).clamp(0.0, 1.0))
}

/// Colour of a tile at local `(s, t)`, `t = 0` at the bottom.
fn pattern_color(pattern: Pattern, base: [f32; 3], accent: [f32; 3], s: f64, t: f64) -> [f32; 3] {
    match pattern {
        Pattern::Stripes => {
            if ((t * 4.0).floor() as i64) % 2 == 0 {
                base
            } else {
                accent
            }
        }
        Pattern::Band => {
            if t > 0.75 {
                accent
            } else {
                base
            }
        }
        Pattern::Checker => {
            if ((s * 4.0).floor() as i64 + (t * 2.0).floor() as i64) % 2 == 0 {
                base
            } else {
                shade(base, 0.7)
            }
        }
        Pattern::Face => {
            // Hair on the crown and the back of the head; eyes and mouth
            // around s = 0.5, which faces +x.
            let ds = s - 0.5;
            if t > 0.78 || ds.abs() > 0.3 && t > 0.45 {
                return accent;
            }
            let eye = |cs: f64| ((ds - cs) / 0.035).powi(2) + ((t - 0.58) / 0.06).powi(2) < 1.0;
            if eye(-0.07) || eye(0.07) {
                return [0.08, 0.08, 0.12];
            }
            if ds.abs() < 0.07 && (t - 0.38).abs() < 0.025 {
                return [0.65, 0.12, 0.15];
            }
            base
        }
    }
}

struct PartStyle {
    name: &'static str,
    pattern: Pattern,
    base: [f32; 3],
    accent: [f32; 3],
}

fn build_atlas(size: usize, parts: &[PartStyle]) -> RgbImage {
    let tile_px = size / ATLAS_GRID;
    RgbImage::from_fn(size, size, |x, y| {
        // Texture row 0 is v = 1.
        let (tx, ty) = (x / tile_px, (size - 1 - y) / tile_px);
        let index = ty * ATLAS_GRID + tx;
        let Some(p) = parts.get(index) else {
            return [1.0; 3];
        };
        let s = (x % tile_px) as f64 / tile_px as f64;
        let t = ((size - 1 - y) % tile_px) as f64 / tile_px as f64;
        pattern_color(p.pattern, p.base, p.accent, s, t)
    })
}

// ---------------------------------------------------------------------------
// Mesh construction

struct Builder {
    mesh: TriangleMesh,
}

impl Builder {
    fn new() -> Self {
        Self {
            mesh: TriangleMesh::default(),
        }
    }

    /// Append a `(nu × nv)`-quad parametric patch; `f(s, t)` gives the
    /// position and `(s, t)` also addresses the part's texture tile.
    fn patch(&mut self, nu: usize, nv: usize, tile: Tile, f: impl Fn(f64, f64) -> Vec3) {
        let base = self.mesh.positions.len() as u32;
        for j in 0..=nv {
            for i in 0..=nu {
                let (s, t) = (i as f64 / nu as f64, j as f64 / nv as f64);
                self.mesh.positions.push(f(s, t));
                self.mesh.uvs.push(tile.uv(s, t));
            }
        }
        let row = nu as u32 + 1;
        for j in 0..nv as u32 {
            for i in 0..nu as u32 {
                let a = base + j * row + i;
                let (b, c, d) = (a + 1, a + row + 1, a + row);
                for tri in [[a, b, c], [a, c, d]] {
                    let [p, q, r] = tri.map(|k| self.mesh.positions[k as usize]);
                    if (q - p).cross(&(r - p)).norm() > 1e-14 {
                        self.mesh.triangles.push(tri);
                    }
                }
            }
        }
    }

    fn begin_part(&self) -> usize {
        self.mesh.triangles.len()
    }

    fn end_part(&mut self, name: &str, material: usize, start: usize) {
        self.mesh.submeshes.push(SubMesh {
            name: name.to_string(),
            material: Some(material),
            triangles: start..self.mesh.triangles.len(),
        });
    }
}

/// Orthonormal frame `(e1, e2)` perpendicular to `axis`, with `e1` as close
/// to +x as possible so that `s = 0.5` of a wrapped patch faces the front.
fn frame(axis: &Vec3) -> (Vec3, Vec3) {
    let reference = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (reference - axis * axis.dot(&reference)).normalize();
    let e2 = axis.cross(&e1);
    (e1, e2)
}

/// Wrapped angle whose seam sits at `s = 0` (the back) and whose front is
/// at `s = 0.5`.
fn wrap(s: f64) -> f64 {
    2.0 * PI * s - PI
}

fn ellipsoid(b: &mut Builder, tile: Tile, center: Vec3, radii: Vec3, t_range: (f64, f64)) {
    b.patch(24, 12, tile, |s, t| {
        let tt = t_range.0 + (t_range.1 - t_range.0) * t;
        let theta = PI * (1.0 - tt);
        let phi = wrap(s);
        center
            + Vec3::new(
                radii.x * theta.sin() * phi.cos(),
                radii.y * theta.sin() * phi.sin(),
                radii.z * theta.cos(),
            )
    });
}

fn capsule(b: &mut Builder, tile: Tile, a: Vec3, c: Vec3, r: f64) {
    let axis = (c - a).normalize();
    let len = (c - a).norm();
    let (e1, e2) = frame(&axis);
    b.patch(16, 15, tile, |s, t| {
        let phi = wrap(s);
        let radial = e1 * phi.cos() + e2 * phi.sin();
        let (along, rad) = if t < 1.0 / 3.0 {
            let th = 0.5 * PI * 3.0 * t;
            (-r * th.cos(), r * th.sin())
        } else if t <= 2.0 / 3.0 {
            (len * (3.0 * t - 1.0), r)
        } else {
            let th = 0.5 * PI * (3.0 * t - 2.0);
            (len + r * th.sin(), r * th.cos())
        };
        a + axis * along + radial * rad
    });
}

/// Box spanning segment `a → c` with cross-section half extents `(hx, hy)`
/// along the frame of the segment.
fn oriented_box(b: &mut Builder, tile: Tile, a: Vec3, c: Vec3, hx: f64, hy: f64) {
    let axis = (c - a).normalize();
    let (e1, e2) = frame(&axis);
    let len = (c - a).norm();
    let at = |[i, j, k]: [f64; 3]| a + e1 * (i * hx) + e2 * (j * hy) + axis * (k * len);
    // Each face: box coordinates (i, j ∈ [-1, 1], k ∈ [0, 1]) as a function
    // of the patch parameters, and the region (s0, s1, t0, t1) of the tile
    // it shows. The front face (+e1) gets the centre of the tile.
    type FaceFn = fn(f64, f64) -> [f64; 3];
    let faces: [(FaceFn, [f64; 4]); 6] = [
        (|s, t| [1.0, 2.0 * s - 1.0, t], [0.25, 0.75, 0.0, 1.0]),
        (|s, t| [-1.0, 1.0 - 2.0 * s, t], [0.0, 0.15, 0.0, 1.0]),
        (|s, t| [1.0 - 2.0 * s, 1.0, t], [0.8, 0.95, 0.0, 1.0]),
        (|s, t| [2.0 * s - 1.0, -1.0, t], [0.8, 0.95, 0.0, 1.0]),
        (|s, t| [2.0 * t - 1.0, 2.0 * s - 1.0, 1.0], [0.3, 0.7, 0.85, 1.0]),
        (|s, t| [1.0 - 2.0 * t, 2.0 * s - 1.0, 0.0], [0.3, 0.7, 0.0, 0.1]),
    ];
    for (f, [s0, s1, t0, t1]) in faces {
        let first = b.mesh.uvs.len();
        b.patch(2, 2, tile, |s, t| at(f(s, t)));
        for (k, uv) in b.mesh.uvs[first..].iter_mut().enumerate() {
            let (s, t) = ((k % 3) as f64 / 2.0, (k / 3) as f64 / 2.0);
            *uv = tile.uv(s0 + (s1 - s0) * s, t0 + (t1 - t0) * t);
        }
    }
}

struct Part {
    style: PartStyle,
    shape: Shape,
}

enum Shape {
    Ellipsoid { center: Vec3, radii: Vec3, t_range: (f64, f64) },
    Capsule { a: Vec3, c: Vec3, r: f64 },
    Box { a: Vec3, c: Vec3, hx: f64, hy: f64 },
}

fn palette(rng: &mut ChaCha8Rng) -> impl FnMut(f64, f64) -> [f32; 3] + '_ {
    move |s, v| hsv(rng.random::<f64>(), s, v)
}

fn parts_for(generator: Generator, rng: &mut ChaCha8Rng) -> Vec<Part> {
    let skin = hsv(0.07 + 0.03 * rng.random::<f64>(), 0.35 + 0.2 * rng.random::<f64>(), 0.92);
    let mut color = palette(rng);
    let shirt = color(0.65, 0.85);
    let shirt_accent = color(0.7, 0.55);
    let pants = color(0.55, 0.5);
    let hair = color(0.6, 0.35);
    let boots = color(0.4, 0.3);
    let style = |name, pattern, base, accent| PartStyle {
        name,
        pattern,
        base,
        accent,
    };
    let mirror = |v: Vec3| Vec3::new(v.x, -v.y, v.z);
    match generator {
        Generator::Sphere => {
            let top = color(0.7, 0.9);
            let bottom = color(0.7, 0.7);
            vec![
                Part {
                    style: style("upper", Pattern::Checker, top, top),
                    shape: Shape::Ellipsoid {
                        center: Vec3::zeros(),
                        radii: Vec3::repeat(1.0),
                        t_range: (0.5, 1.0),
                    },
                },
                Part {
                    style: style("lower", Pattern::Stripes, bottom, shade(bottom, 0.6)),
                    shape: Shape::Ellipsoid {
                        center: Vec3::zeros(),
                        radii: Vec3::repeat(1.0),
                        t_range: (0.0, 0.5),
                    },
                },
            ]
        }
        Generator::CapsuleFigure => {
            let shoulder = Vec3::new(0.0, 0.30, 1.22);
            let hand = Vec3::new(0.04, 0.68, 0.58);
            let hip = Vec3::new(0.0, 0.13, 0.78);
            let foot = Vec3::new(0.02, 0.19, 0.1);
            vec![
                Part {
                    style: style("head", Pattern::Face, skin, hair),
                    shape: Shape::Ellipsoid {
                        center: Vec3::new(0.0, 0.0, 1.6),
                        radii: Vec3::new(0.27, 0.25, 0.3),
                        t_range: (0.0, 1.0),
                    },
                },
                Part {
                    style: style("torso", Pattern::Stripes, shirt, shirt_accent),
                    shape: Shape::Capsule {
                        a: Vec3::new(0.0, 0.0, 0.86),
                        c: Vec3::new(0.0, 0.0, 1.14),
                        r: 0.27,
                    },
                },
                Part {
                    style: style("arm_l", Pattern::Band, shirt, skin),
                    shape: Shape::Capsule { a: shoulder, c: hand, r: 0.08 },
                },
                Part {
                    style: style("arm_r", Pattern::Band, shirt, skin),
                    shape: Shape::Capsule {
                        a: mirror(shoulder),
                        c: mirror(hand),
                        r: 0.08,
                    },
                },
                Part {
                    style: style("leg_l", Pattern::Band, pants, boots),
                    shape: Shape::Capsule { a: hip, c: foot, r: 0.1 },
                },
                Part {
                    style: style("leg_r", Pattern::Band, pants, boots),
                    shape: Shape::Capsule {
                        a: mirror(hip),
                        c: mirror(foot),
                        r: 0.1,
                    },
                },
            ]
        }
        Generator::BlockyCharacter => {
            let shoulder = Vec3::new(0.0, 0.36, 1.32);
            let hand = Vec3::new(0.0, 0.72, 0.66);
            let hip = Vec3::new(0.0, 0.14, 0.8);
            let foot = Vec3::new(0.0, 0.18, 0.0);
            vec![
                Part {
                    style: style("head", Pattern::Face, skin, hair),
                    shape: Shape::Box {
                        a: Vec3::new(0.0, 0.0, 1.42),
                        c: Vec3::new(0.0, 0.0, 1.9),
                        hx: 0.22,
                        hy: 0.22,
                    },
                },
                Part {
                    style: style("torso", Pattern::Stripes, shirt, shirt_accent),
                    shape: Shape::Box {
                        a: Vec3::new(0.0, 0.0, 0.8),
                        c: Vec3::new(0.0, 0.0, 1.4),
                        hx: 0.17,
                        hy: 0.3,
                    },
                },
                Part {
                    style: style("arm_l", Pattern::Band, shirt, skin),
                    shape: Shape::Box {
                        a: shoulder,
                        c: hand,
                        hx: 0.08,
                        hy: 0.08,
                    },
                },
                Part {
                    style: style("arm_r", Pattern::Band, shirt, skin),
                    shape: Shape::Box {
                        a: mirror(shoulder),
                        c: mirror(hand),
                        hx: 0.08,
                        hy: 0.08,
                    },
                },
                Part {
                    style: style("leg_l", Pattern::Band, pants, boots),
                    shape: Shape::Box {
                        a: hip,
                        c: foot,
                        hx: 0.1,
                        hy: 0.1,
                    },
                },
                Part {
                    style: style("leg_r", Pattern::Band, pants, boots),
                    shape: Shape::Box {
                        a: mirror(hip),
                        c: mirror(foot),
                        hx: 0.1,
                        hy: 0.1,
                    },
                },
            ]
        }
    }
}

/// Build a character mesh and its texture atlas, normalized to
/// `spec.height` and centred on the origin.
pub fn generate_character(spec: &SceneSpec) -> Result<TriangleMesh> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.palette_seed);
    let parts = parts_for(spec.generator, &mut rng);
    let styles: Vec<PartStyle> = parts
        .iter()
        .map(|p| PartStyle {
            name: p.style.name,
            pattern: p.style.pattern,
            base: p.style.base,
            accent: p.style.accent,
        })
        .collect();
    let atlas = Arc::new(build_atlas(spec.texture_size, &styles));
    let mut b = Builder::new();
    for (i, part) in parts.iter().enumerate() {
        let tile = Tile::new(i);
        b.mesh.materials.push(Material {
            name: format!("{}_mat", part.style.name),
            kd: part.style.base,
            texture: Some(Arc::clone(&atlas)),
            texture_file: Some(TEXTURE_FILE.to_string()),
        });
        let start = b.begin_part();
        match part.shape {
            Shape::Ellipsoid { center, radii, t_range } => ellipsoid(&mut b, tile, center, radii, t_range),
            Shape::Capsule { a, c, r } => capsule(&mut b, tile, a, c, r),
            Shape::Box { a, c, hx, hy } => oriented_box(&mut b, tile, a, c, hx, hy),
        }
        b.end_part(part.style.name, i, start);
    }
    let mut mesh = b.mesh;
    normalize_height(&mut mesh, spec.height);
    mesh.validate()?;
    Ok(mesh)
}

/// Uniformly scale so the z extent equals `height`, then centre the
/// bounding box on the origin.
pub fn normalize_height(mesh: &mut TriangleMesh, height: f64) {
    let Some((lo, hi)) = mesh.bounds() else {
        return;
    };
    let k = height / (hi.z - lo.z);
    let center = (lo + hi) * 0.5;
    for p in &mut mesh.positions {
        *p = (*p - center) * k;
    }
    // Pin the extremes exactly so the height contract holds to rounding.
    let (lo, hi) = mesh.bounds().unwrap();
    let shift = -(lo.z + hi.z) * 0.5;
    for p in &mut mesh.positions {
        p.z += shift;
    }
}

/// The texture shared by all materials of a generated mesh.
pub fn atlas_of(mesh: &TriangleMesh) -> Option<&RgbImage> {
    mesh.materials.iter().find_map(|m| m.texture.as_deref())
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: RgbImage,
    /// Distance along each pixel's ray to the first hit; 0 for background.
    pub depth: Vec<f32>,
}

/// Albedo-only render on a white background, one ray per pixel centre.
pub fn render_view(mesh: &TriangleMesh, bvh: &Bvh<'_>, camera: &Camera) -> Result<RenderOutput> {
    let (w, h) = (camera.width() as usize, camera.height() as usize);
    let mut image = RgbImage::filled(w, h, [1.0; 3]);
    let mut depth = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let ray = camera.pixel_to_ray(x as f64, y as f64)?;
            if let Some(hit) = bvh.closest_hit(&ray) {
                let s = mesh.submesh_of(hit.triangle).expect("triangle belongs to a sub-mesh");
                image.set(x, y, mesh.color_at(s, hit.triangle, hit.bary, true)?);
                depth[y * w + x] = hit.t as f32;
            }
        }
    }
    Ok(RenderOutput { image, depth })
}

/// Lattice poses followed by the front / side / back equator views.
pub fn dataset_poses(spec: &SceneSpec) -> (Vec<Pose>, ConceptArt) {
    let mut poses = fibonacci_hemisphere(spec.n_views, spec.camera_radius);
    let n = poses.len();
    for az in [0.0, 90.0, 180.0] {
        poses.push(orbit_pose(az, 0.0, spec.camera_radius));
    }
    (
        poses,
        ConceptArt {
            front: n,
            side: n + 1,
            back: n + 2,
        },
    )
}

/// Generate a character and write a complete dataset directory.
pub fn render_dataset(mesh: &TriangleMesh, spec: &SceneSpec, out: &Path) -> Result<()> {
    spec.validate()?;
    let intrinsics = spec.intrinsics();
    let (poses, concept) = dataset_poses(spec);
    let bvh = Bvh::build(mesh);
    let writer = DatasetWriter::create(out, &intrinsics, concept)?;
    writer.write_mesh(mesh)?;
    for (i, pose) in poses.into_iter().enumerate() {
        let camera = Camera::new(intrinsics.clone(), pose)?;
        let r = render_view(mesh, &bvh, &camera)?;
        writer.write_view(i, &camera.pose, &r.image, Some(&r.depth))?;
    }
    Ok(())
}
