//! On-disk dataset layout.
//!
//! ```text
//! <dir>/images/NNN.png      8-bit RGB views, white background
//! <dir>/poses/NNN.txt       4×4 camera-to-world matrix, one row per line
//! <dir>/depth/NNN.pfm       ray distance to the first hit, 0 for background
//! <dir>/intrinsics.json     {focal_px, cx, cy, width, height, distortion, aabb_scale}
//! <dir>/concept_art.json    {front, side, back}: view indices of the encoder inputs
//! <dir>/mesh.obj, mesh.mtl, texture.png
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, Intrinsics, Pose};
use crate::imageio::{read_pfm, write_pfm, RgbImage};
use crate::surface::{load_obj, save_obj, TriangleMesh};

pub const INTRINSICS_FILE: &str = "intrinsics.json";
pub const CONCEPT_FILE: &str = "concept_art.json";
pub const MESH_FILE: &str = "mesh.obj";

/// Indices of the three encoder input views.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptArt {
    pub front: usize,
    pub side: usize,
    pub back: usize,
}

impl ConceptArt {
    pub fn indices(&self) -> [usize; 3] {
        [self.front, self.side, self.back]
    }
}

pub fn view_name(i: usize) -> String {
    format!("{i:03}")
}

pub fn pose_text(pose: &Pose) -> String {
    let mut s = String::new();
    for row in pose.rows() {
        let _ = writeln!(s, "{} {} {} {}", row[0], row[1], row[2], row[3]);
    }
    s
}

pub fn parse_pose(text: &str, path: &Path) -> Result<Pose> {
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format(path, format!("bad number `{t}`"))))
        .collect::<Result<_>>()?;
    if values.len() != 16 {
        return Err(Error::format(path, format!("expected 16 numbers, found {}", values.len())));
    }
    let mut rows = [[0.0; 4]; 4];
    for (i, v) in values.iter().enumerate() {
        rows[i / 4][i % 4] = *v;
    }
    Pose::from_rows(rows).map_err(|e| Error::format(path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub struct DatasetWriter {
    dir: PathBuf,
}

impl DatasetWriter {
    pub fn create(dir: &Path, intrinsics: &Intrinsics, concept: ConceptArt) -> Result<Self> {
        intrinsics.validate()?;
        for sub in ["images", "poses", "depth"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        write_json(&dir.join(INTRINSICS_FILE), intrinsics)?;
        write_json(&dir.join(CONCEPT_FILE), &concept)?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn write_view(&self, i: usize, pose: &Pose, image: &RgbImage, depth: Option<&[f32]>) -> Result<()> {
        let name = view_name(i);
        image.save_png(&self.dir.join("images").join(format!("{name}.png")))?;
        let ppath = self.dir.join("poses").join(format!("{name}.txt"));
        std::fs::write(&ppath, pose_text(pose)).map_err(|e| Error::io(&ppath, e))?;
        if let Some(d) = depth {
            write_pfm(
                &self.dir.join("depth").join(format!("{name}.pfm")),
                image.width,
                image.height,
                d,
            )?;
        }
        Ok(())
    }

    /// Writes `mesh.obj`, `mesh.mtl` and the (single) texture image.
    pub fn write_mesh(&self, mesh: &TriangleMesh) -> Result<()> {
        for m in &mesh.materials {
            if let (Some(tex), Some(file)) = (&m.texture, &m.texture_file) {
                let p = self.dir.join(file);
                if !p.exists() {
                    tex.save_png(&p)?;
                }
            }
        }
        save_obj(mesh, &self.dir.join(MESH_FILE))
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub intrinsics: Intrinsics,
    pub cameras: Vec<Camera>,
    pub images: Vec<RgbImage>,
    pub concept: ConceptArt,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let intrinsics: Intrinsics = read_json(&dir.join(INTRINSICS_FILE))?;
        intrinsics.validate()?;
        let concept: ConceptArt = read_json(&dir.join(CONCEPT_FILE))?;
        let images_dir = dir.join("images");
        let mut indices: Vec<usize> = std::fs::read_dir(&images_dir)
            .map_err(|e| Error::io(&images_dir, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix(".png")?.parse().ok()
            })
            .collect();
        indices.sort_unstable();
        if indices.iter().enumerate().any(|(k, &i)| k != i) {
            return Err(Error::format(&images_dir, "view indices must be contiguous from 000"));
        }
        let mut cameras = Vec::with_capacity(indices.len());
        let mut images = Vec::with_capacity(indices.len());
        for &i in &indices {
            let name = view_name(i);
            let ppath = dir.join("poses").join(format!("{name}.txt"));
            let text = std::fs::read_to_string(&ppath).map_err(|e| Error::io(&ppath, e))?;
            cameras.push(Camera::new(intrinsics.clone(), parse_pose(&text, &ppath)?)?);
            let ipath = images_dir.join(format!("{name}.png"));
            let img = RgbImage::load_png(&ipath)?;
            if img.width != intrinsics.width as usize || img.height != intrinsics.height as usize {
                return Err(Error::format(&ipath, "image size differs from intrinsics"));
            }
            images.push(img);
        }
        if concept.indices().iter().any(|&i| i >= images.len()) {
            return Err(Error::format(dir.join(CONCEPT_FILE), "concept-art index out of range"));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            intrinsics,
            cameras,
            images,
            concept,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn load_depth(&self, i: usize) -> Result<Vec<f32>> {
        Ok(read_pfm(&self.dir.join("depth").join(format!("{}.pfm", view_name(i))))?.2)
    }

    pub fn load_mesh(&self) -> Result<TriangleMesh> {
        load_obj(&self.dir.join(MESH_FILE))
    }

    pub fn concept_images(&self) -> [&RgbImage; 3] {
        self.concept.indices().map(|i| &self.images[i])
    }

    pub fn concept_cameras(&self) -> [&Camera; 3] {
        self.concept.indices().map(|i| &self.cameras[i])
    }
}

/// Every `every`-th view among the first `n_lattice` is held out of
/// training; `every == 0` holds out nothing.
pub fn held_out_views(n_lattice: usize, every: usize) -> Vec<usize> {
    if every == 0 {
        return Vec::new();
    }
    (0..n_lattice).step_by(every).collect()
}
