//! Textured triangle meshes and area-uniform surface sampling.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::imageio::RgbImage;

#[derive(Clone, Debug, PartialEq)]
pub struct Material {
    pub name: String,
    pub kd: [f32; 3],
    pub texture: Option<Arc<RgbImage>>,
    /// File name of the texture as referenced by the MTL file.
    pub texture_file: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubMesh {
    pub name: String,
    pub material: Option<usize>,
    pub triangles: Range<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    /// Per-vertex texture coordinates; empty when the mesh is untextured.
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<[u32; 3]>,
    pub submeshes: Vec<SubMesh>,
    pub materials: Vec<Material>,
}

pub fn triangle_area(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

impl TriangleMesh {
    pub fn num_vertices(&self) -> usize {
        self.positions.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.positions[i as usize])
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        triangle_area(&a, &b, &c)
    }

    /// Index of the sub-mesh containing triangle `t`.
    pub fn submesh_of(&self, t: usize) -> Option<usize> {
        let i = self.submeshes.partition_point(|s| s.triangles.end <= t);
        (i < self.submeshes.len() && self.submeshes[i].triangles.contains(&t)).then_some(i)
    }

    pub fn submesh_areas(&self) -> Vec<f64> {
        self.submeshes
            .iter()
            .map(|s| s.triangles.clone().map(|t| self.area(t)).sum())
            .collect()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.positions.first()?;
        Some(self.positions.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len() as u32;
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::DegenerateMesh(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if !self.uvs.is_empty() && self.uvs.len() != self.positions.len() {
            return Err(Error::DegenerateMesh("uv count differs from vertex count".into()));
        }
        let mut next = 0;
        for s in &self.submeshes {
            if s.triangles.start != next {
                return Err(Error::DegenerateMesh(format!(
                    "sub-mesh `{}` does not start where the previous one ended",
                    s.name
                )));
            }
            next = s.triangles.end;
        }
        if next != self.triangles.len() {
            return Err(Error::DegenerateMesh("sub-meshes do not cover all triangles".into()));
        }
        if self.positions.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::DegenerateMesh("non-finite vertex".into()));
        }
        Ok(())
    }

    /// Interpolated texture coordinate at barycentric `(w0, w1, w2)`.
    pub fn uv_at(&self, t: usize, w: [f64; 3]) -> Option<[f64; 2]> {
        if self.uvs.is_empty() {
            return None;
        }
        let tri = self.triangles[t];
        let mut uv = [0.0; 2];
        for k in 0..3 {
            let q = self.uvs[tri[k] as usize];
            uv[0] += w[k] * q[0];
            uv[1] += w[k] * q[1];
        }
        Some(uv)
    }

    /// Surface colour at barycentric `w` on triangle `t` of sub-mesh `s`.
    /// With `flat_fallback`, untextured parts use the material's Kd.
    pub fn color_at(&self, s: usize, t: usize, w: [f64; 3], flat_fallback: bool) -> Result<[f32; 3]> {
        let sub = &self.submeshes[s];
        let material = sub.material.map(|m| &self.materials[m]);
        let texture = material.and_then(|m| m.texture.as_deref());
        match (texture, self.uv_at(t, w)) {
            (Some(tex), Some(uv)) => Ok(sample_texture(tex, uv)),
            _ if flat_fallback => Ok(material.map_or([0.5; 3], |m| m.kd)),
            _ => Err(Error::DegenerateMesh(format!(
                "sub-mesh `{}` has no texture or UVs and flat fallback is disabled",
                sub.name
            ))),
        }
    }
}

/// Bilinear texture lookup with clamp-to-edge. `v = 0` is the bottom row.
pub fn sample_texture(tex: &RgbImage, uv: [f64; 2]) -> [f32; 3] {
    let (w, h) = (tex.width, tex.height);
    let x = (uv[0] * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let y = ((1.0 - uv[1]) * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
    let (p00, p10, p01, p11) = (tex.get(x0, y0), tex.get(x1, y0), tex.get(x0, y1), tex.get(x1, y1));
    std::array::from_fn(|c| {
        let top = p00[c] * (1.0 - fx) + p10[c] * fx;
        let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Split `n_total` proportionally to `areas` by largest remainder; equal
/// remainders favour the lower index.
pub fn allocate(areas: &[f64], n_total: usize) -> Result<Vec<usize>> {
    if areas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::DegenerateMesh(format!("invalid areas {areas:?}")));
    }
    let total: f64 = areas.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateMesh("all sub-mesh areas are zero".into()));
    }
    let quotas: Vec<f64> = areas.iter().map(|a| n_total as f64 * a / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..areas.len()).collect();
    let frac = |i: usize| quotas[i] - quotas[i].floor();
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    // Rounding can leave the floors a hair above n_total; never hand out
    // negative remainders.
    let mut remaining = n_total.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if areas[i] > 0.0 {
            counts[i] += 1;
            remaining -= 1;
        }
    }
    while counts.iter().sum::<usize>() > n_total {
        let i = (0..counts.len()).rev().find(|&i| counts[i] > 0).unwrap();
        counts[i] -= 1;
    }
    Ok(counts)
}

/// Area-uniform point on triangle `abc` from two uniform draws.
pub fn pick_point(a: &Vec3, b: &Vec3, c: &Vec3, r1: f64, r2: f64) -> Vec3 {
    let s = r1.sqrt();
    a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
}

/// Barycentric weights matching [`pick_point`].
pub fn pick_weights(r1: f64, r2: f64) -> [f64; 3] {
    let s = r1.sqrt();
    [1.0 - s, s * (1.0 - r2), s * r2]
}

/// Per-sample ray-segment length used to turn a predicted density into an
/// opacity: `(z_far - z_near) / (n_coarse + n_fine)`.
pub fn delta_estimate(z_near: f64, z_far: f64, n_coarse: usize, n_fine: usize) -> f64 {
    (z_far - z_near) / (n_coarse + n_fine) as f64
}

/// [`delta_estimate`] over the depth extent of the scene cube.
pub fn scene_delta(aabb_scale: f64, n_coarse: usize, n_fine: usize) -> f64 {
    delta_estimate(0.0, 2.0 * aabb_scale, n_coarse, n_fine)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSample {
    pub point: Vec3,
    pub color: [f32; 3],
    pub alpha_target: f64,
    pub view_dir: Vec3,
    pub submesh: usize,
    pub triangle: usize,
}

#[derive(Clone, Debug)]
pub struct SurfaceBatch {
    pub samples: Vec<SurfaceSample>,
    /// Segment length for `α̂ = 1 - exp(-σ̂ δ)`.
    pub delta: f64,
}

/// Precomputed per-sub-mesh triangle CDFs.
#[derive(Clone, Debug)]
pub struct SurfaceSampler {
    mesh: Arc<TriangleMesh>,
    areas: Vec<f64>,
    cdfs: Vec<Vec<f64>>,
    pub flat_fallback: bool,
}

impl SurfaceSampler {
    pub fn new(mesh: Arc<TriangleMesh>, flat_fallback: bool) -> Result<Self> {
        mesh.validate()?;
        let mut areas = Vec::new();
        let mut cdfs = Vec::new();
        for s in &mesh.submeshes {
            let mut acc = 0.0;
            let cdf: Vec<f64> = s
                .triangles
                .clone()
                .map(|t| {
                    acc += mesh.area(t);
                    acc
                })
                .collect();
            areas.push(acc);
            cdfs.push(cdf);
        }
        if !(areas.iter().sum::<f64>() > 0.0) {
            return Err(Error::DegenerateMesh("mesh has zero surface area".into()));
        }
        Ok(Self {
            mesh,
            areas,
            cdfs,
            flat_fallback,
        })
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn submesh_areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn batch<R: Rng + ?Sized>(&self, n: usize, delta: f64, rng: &mut R) -> Result<SurfaceBatch> {
        let counts = allocate(&self.areas, n)?;
        let mut samples = Vec::with_capacity(n);
        for (s, &count) in counts.iter().enumerate() {
            let sub = &self.mesh.submeshes[s];
            let cdf = &self.cdfs[s];
            for _ in 0..count {
                let x = rng.random::<f64>() * self.areas[s];
                let k = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
                let t = sub.triangles.start + k;
                let (r1, r2) = (rng.random::<f64>(), rng.random::<f64>());
                let [a, b, c] = self.mesh.corners(t);
                samples.push(SurfaceSample {
                    point: pick_point(&a, &b, &c, r1, r2),
                    color: self.mesh.color_at(s, t, pick_weights(r1, r2), self.flat_fallback)?,
                    alpha_target: 1.0,
                    view_dir: Vec3::zeros(),
                    submesh: s,
                    triangle: t,
                });
            }
        }
        Ok(SurfaceBatch { samples, delta })
    }
}

/// One-shot convenience over [`SurfaceSampler`].
pub fn surface_batch<R: Rng + ?Sized>(
    mesh: &TriangleMesh,
    n: usize,
    delta: f64,
    flat_fallback: bool,
    rng: &mut R,
) -> Result<SurfaceBatch> {
    SurfaceSampler::new(Arc::new(mesh.clone()), flat_fallback)?.batch(n, delta, rng)
}

// ---------------------------------------------------------------------------
// Wavefront OBJ / MTL

fn parse_index(tok: &str, len: usize, path: &Path) -> Result<usize> {
    let i: i64 = tok
        .parse()
        .map_err(|_| Error::format(path, format!("bad index `{tok}`")))?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        len as i64 + i
    } else {
        -1
    };
    if idx < 0 || idx as usize >= len {
        return Err(Error::format(path, format!("index {i} out of range (have {len})")));
    }
    Ok(idx as usize)
}

fn parse_floats<const N: usize>(rest: &[&str], path: &Path, line: usize) -> Result<[f64; N]> {
    if rest.len() < N {
        return Err(Error::format(path, format!("line {line}: expected {N} numbers")));
    }
    let mut out = [0.0; N];
    for (o, t) in out.iter_mut().zip(rest) {
        *o = t
            .parse()
            .map_err(|_| Error::format(path, format!("line {line}: bad number `{t}`")))?;
    }
    Ok(out)
}

pub fn parse_mtl(text: &str, dir: &Path, path: &Path) -> Result<Vec<Material>> {
    let mut materials: Vec<Material> = Vec::new();
    let mut textures: HashMap<PathBuf, Arc<RgbImage>> = HashMap::new();
    for (ln, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let Some((&key, rest)) = toks.split_first() else {
            continue;
        };
        match key {
            "newmtl" => materials.push(Material {
                name: rest.join(" "),
                kd: [1.0; 3],
                texture: None,
                texture_file: None,
            }),
            "Kd" => {
                let kd = parse_floats::<3>(rest, path, ln + 1)?;
                let m = materials
                    .last_mut()
                    .ok_or_else(|| Error::format(path, "Kd before newmtl"))?;
                m.kd = kd.map(|x| x as f32);
            }
            "map_Kd" => {
                let file = rest
                    .last()
                    .ok_or_else(|| Error::format(path, "map_Kd without file"))?
                    .to_string();
                let full = dir.join(&file);
                let tex = match textures.get(&full) {
                    Some(t) => Arc::clone(t),
                    None => {
                        let t = Arc::new(RgbImage::load_png(&full)?);
                        textures.insert(full, Arc::clone(&t));
                        t
                    }
                };
                let m = materials
                    .last_mut()
                    .ok_or_else(|| Error::format(path, "map_Kd before newmtl"))?;
                m.texture = Some(tex);
                m.texture_file = Some(file);
            }
            _ => {}
        }
    }
    Ok(materials)
}

/// Load an OBJ file, its MTL library and textures. `usemtl`, `g` and `o`
/// statements start new sub-meshes; polygons are fan-triangulated.
pub fn load_obj(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut positions = Vec::new();
    let mut tex_coords: Vec<[f64; 2]> = Vec::new();
    let mut materials: Vec<Material> = Vec::new();
    // Corners as (position index, optional uv index).
    let mut faces: Vec<[(usize, Option<usize>); 3]> = Vec::new();
    let mut groups: Vec<(String, Option<String>, usize)> = Vec::new();
    let mut current_name = String::from("default");
    let mut current_mtl: Option<String> = None;
    let start_group = |name: &str, mtl: &Option<String>, at: usize, groups: &mut Vec<_>| {
        if let Some(last) = groups.last_mut() {
            let last: &mut (String, Option<String>, usize) = last;
            if last.2 == at {
                // Nothing emitted yet under the previous header.
                *last = (name.to_string(), mtl.clone(), at);
                return;
            }
        }
        groups.push((name.to_string(), mtl.clone(), at));
    };
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let toks: Vec<&str> = line.split_whitespace().collect();
        let Some((&key, rest)) = toks.split_first() else {
            continue;
        };
        match key {
            "v" => {
                let [x, y, z] = parse_floats::<3>(rest, path, ln + 1)?;
                positions.push(Vec3::new(x, y, z));
            }
            "vt" => {
                let [u, v] = parse_floats::<2>(rest, path, ln + 1)?;
                tex_coords.push([u, v]);
            }
            "mtllib" => {
                for lib in rest {
                    let mpath = dir.join(lib);
                    let mtext = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
                    materials.extend(parse_mtl(&mtext, dir, &mpath)?);
                }
            }
            "usemtl" => {
                current_mtl = Some(rest.join(" "));
                start_group(&current_name, &current_mtl, faces.len(), &mut groups);
            }
            "g" | "o" => {
                current_name = if rest.is_empty() {
                    "default".into()
                } else {
                    rest.join(" ")
                };
                start_group(&current_name, &current_mtl, faces.len(), &mut groups);
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(Error::format(path, format!("line {}: face with < 3 corners", ln + 1)));
                }
                if groups.is_empty() {
                    groups.push((current_name.clone(), current_mtl.clone(), faces.len()));
                }
                let corners = rest
                    .iter()
                    .map(|c| {
                        let mut parts = c.split('/');
                        let v = parse_index(parts.next().unwrap_or(""), positions.len(), path)?;
                        let vt = match parts.next() {
                            Some(s) if !s.is_empty() => Some(parse_index(s, tex_coords.len(), path)?),
                            _ => None,
                        };
                        Ok((v, vt))
                    })
                    .collect::<Result<Vec<_>>>()?;
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }

    // Keep the position array when texture indices agree with position
    // indices (or are absent); otherwise split vertices per (v, vt) pair.
    let any_uv = faces.iter().flatten().any(|c| c.1.is_some());
    let aligned = faces
        .iter()
        .flatten()
        .all(|&(v, vt)| vt.is_none_or(|t| t == v))
        && (!any_uv || tex_coords.len() >= positions.len());
    let (out_pos, out_uv, triangles) = if !any_uv {
        let tris = faces.iter().map(|f| f.map(|c| c.0 as u32)).collect();
        (positions, Vec::new(), tris)
    } else if aligned {
        let uvs = (0..positions.len()).map(|i| tex_coords[i]).collect();
        let tris = faces.iter().map(|f| f.map(|c| c.0 as u32)).collect();
        (positions, uvs, tris)
    } else {
        let mut map: HashMap<(usize, Option<usize>), u32> = HashMap::new();
        let (mut pos, mut uvs) = (Vec::new(), Vec::new());
        let tris = faces
            .iter()
            .map(|f| {
                f.map(|c| {
                    *map.entry(c).or_insert_with(|| {
                        pos.push(positions[c.0]);
                        uvs.push(c.1.map_or([0.0, 0.0], |t| tex_coords[t]));
                        (pos.len() - 1) as u32
                    })
                })
            })
            .collect();
        (pos, uvs, tris)
    };

    let mut submeshes = Vec::new();
    for (i, (name, mtl, start)) in groups.iter().enumerate() {
        let end = groups.get(i + 1).map_or(faces.len(), |g| g.2);
        if end == *start {
            continue;
        }
        let material = match mtl {
            Some(m) => Some(
                materials
                    .iter()
                    .position(|x| &x.name == m)
                    .ok_or_else(|| Error::format(path, format!("unknown material `{m}`")))?,
            ),
            None => None,
        };
        submeshes.push(SubMesh {
            name: name.clone(),
            material,
            triangles: *start..end,
        });
    }
    let mesh = TriangleMesh {
        positions: out_pos,
        uvs: out_uv,
        triangles,
        submeshes,
        materials,
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Serialize as OBJ text. Coordinates use shortest round-trip formatting,
/// so loading the output reproduces every value exactly.
pub fn obj_text(mesh: &TriangleMesh, mtllib: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(lib) = mtllib {
        let _ = writeln!(s, "mtllib {lib}");
    }
    for p in &mesh.positions {
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for uv in &mesh.uvs {
        let _ = writeln!(s, "vt {} {}", uv[0], uv[1]);
    }
    let textured = !mesh.uvs.is_empty();
    let write_faces = |s: &mut String, range: Range<usize>| {
        for t in &mesh.triangles[range] {
            let [a, b, c] = t.map(|i| i + 1);
            let _ = if textured {
                writeln!(s, "f {a}/{a} {b}/{b} {c}/{c}")
            } else {
                writeln!(s, "f {a} {b} {c}")
            };
        }
    };
    if mesh.submeshes.is_empty() {
        write_faces(&mut s, 0..mesh.triangles.len());
    }
    for sub in &mesh.submeshes {
        let _ = writeln!(s, "o {}", sub.name);
        if let Some(m) = sub.material {
            let _ = writeln!(s, "usemtl {}", mesh.materials[m].name);
        }
        write_faces(&mut s, sub.triangles.clone());
    }
    s
}

pub fn mtl_text(materials: &[Material]) -> String {
    let mut s = String::new();
    for m in materials {
        let _ = writeln!(s, "newmtl {}", m.name);
        let _ = writeln!(s, "Kd {} {} {}", m.kd[0], m.kd[1], m.kd[2]);
        if let Some(f) = &m.texture_file {
            let _ = writeln!(s, "map_Kd {f}");
        }
    }
    s
}

/// Write `mesh` as OBJ at `path`. Materials, when present, go to a sibling
/// `.mtl` file; textures are expected to already exist next to it.
pub fn save_obj(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mtl_name = (!mesh.materials.is_empty()).then(|| {
        path.with_extension("mtl")
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_else(|| "mesh.mtl".into())
    });
    if let Some(name) = &mtl_name {
        let mpath = path.with_file_name(name);
        std::fs::write(&mpath, mtl_text(&mesh.materials)).map_err(|e| Error::io(&mpath, e))?;
    }
    std::fs::write(path, obj_text(mesh, mtl_name.as_deref())).map_err(|e| Error::io(path, e))
}
