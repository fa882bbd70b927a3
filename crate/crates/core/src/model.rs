//! The full model: shared encoder plus coarse and fine fields.

use std::path::Path;

use diffcore::{checkpoint, ParamStore, Real, Tape, Tensor, Var};
use nalgebra::Matrix3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{images_to_tensor, Encoder, EncoderConfig};
use crate::error::{config, Error, Result};
use crate::field::{Field, FieldConfig};
use crate::geometry::{Camera, Vec3};
use crate::imageio::RgbImage;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub field: FieldConfig,
    /// Seed of the parameter initialization.
    pub init_seed: u64,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub coarse: Field,
    pub fine: Field,
}

pub const COARSE_PREFIX: &str = "coarse";
pub const FINE_PREFIX: &str = "fine";

impl Model {
    /// Build the model and a freshly initialized parameter store.
    pub fn build<T: Real>(cfg: &ModelConfig) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let encoder = Encoder::new(&mut store, &cfg.encoder, &mut rng)?;
        let f = cfg.encoder.feature_channels();
        let coarse = Field::new(&mut store, COARSE_PREFIX, &cfg.field, f, &mut rng)?;
        let fine = Field::new(&mut store, FINE_PREFIX, &cfg.field, f, &mut rng)?;
        Ok((
            Self {
                config: cfg.clone(),
                encoder,
                coarse,
                fine,
            },
            store,
        ))
    }

    pub fn encode<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, views: &SourceViews) -> Result<Var<'t, T>> {
        let x = tape.constant(views.tensor()?);
        self.encoder.encode(tape, store, x)
    }

    /// Encode without recording gradients; the result can be re-inserted
    /// into later tapes as a constant.
    pub fn encode_detached<T: Real>(&self, store: &ParamStore<T>, views: &SourceViews) -> Result<Tensor<T>> {
        let tape = Tape::no_grad();
        let map = self.encode(&tape, store, views)?;
        Ok((*map.value()).clone())
    }

    pub fn save<T: Real>(&self, store: &ParamStore<T>, path: &Path) -> Result<()> {
        let manifest = serde_json::to_string(&self.config).expect("config serializes");
        checkpoint::save(path, store, &manifest).map_err(|e| match e {
            diffcore::TensorError::Io(err) => Error::io(path, err),
            other => other.into(),
        })
    }

    pub fn load<T: Real>(path: &Path) -> Result<(Self, ParamStore<T>)> {
        let archive = checkpoint::load::<T>(path).map_err(|e| match e {
            diffcore::TensorError::Io(err) => Error::io(path, err),
            other => Error::format(path, other.to_string()),
        })?;
        let cfg: ModelConfig =
            serde_json::from_str(&archive.manifest).map_err(|e| Error::format(path, format!("manifest: {e}")))?;
        let (model, mut store) = Self::build(&cfg)?;
        archive
            .restore_into(&mut store)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok((model, store))
    }
}

/// Pinhole projection reduced to a 3×3 matrix and translation.
#[derive(Clone, Copy, Debug)]
struct Projector {
    /// World-to-camera rotation.
    r: Matrix3<f64>,
    origin: Vec3,
    f: f64,
    cx: f64,
    cy: f64,
}

impl Projector {
    fn new(cam: &Camera) -> Self {
        Self {
            r: cam.pose.rotation().transpose(),
            origin: cam.pose.origin(),
            f: cam.intrinsics.focal_px,
            cx: cam.intrinsics.cx,
            cy: cam.intrinsics.cy,
        }
    }

    /// Continuous pixel coordinates; NaN when behind the camera.
    fn project(&self, x: &Vec3) -> [f64; 2] {
        let p = self.r * (x - self.origin);
        if p.z > 0.0 {
            [self.f * p.x / p.z + self.cx, self.f * p.y / p.z + self.cy]
        } else {
            [f64::NAN, f64::NAN]
        }
    }
}

/// The three posed input views (front, side, back).
#[derive(Clone, Debug)]
pub struct SourceViews {
    pub images: [RgbImage; 3],
    pub cameras: [Camera; 3],
    projectors: [Projector; 3],
}

impl SourceViews {
    pub fn new(images: [RgbImage; 3], cameras: [Camera; 3]) -> Result<Self> {
        let (w, h) = (images[0].width, images[0].height);
        for (img, cam) in images.iter().zip(&cameras) {
            if img.width != w || img.height != h {
                return Err(config("source views must share one resolution"));
            }
            if cam.width() as usize != w || cam.height() as usize != h {
                return Err(config("source camera size differs from its image"));
            }
        }
        let projectors = [
            Projector::new(&cameras[0]),
            Projector::new(&cameras[1]),
            Projector::new(&cameras[2]),
        ];
        Ok(Self {
            images,
            cameras,
            projectors,
        })
    }

    pub fn width(&self) -> usize {
        self.images[0].width
    }

    pub fn height(&self) -> usize {
        self.images[0].height
    }

    pub fn tensor<T: Real>(&self) -> Result<Tensor<T>> {
        images_to_tensor(&[&self.images[0], &self.images[1], &self.images[2]])
    }

    /// Forward axes of the source cameras.
    pub fn directions(&self) -> [Vec3; 3] {
        [
            self.cameras[0].pose.forward(),
            self.cameras[1].pose.forward(),
            self.cameras[2].pose.forward(),
        ]
    }

    /// Image-space projection of every point into every view, point-major.
    pub fn project_all(&self, points: &[Vec3]) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(points.len() * 3);
        for x in points {
            for p in &self.projectors {
                out.push(p.project(x));
            }
        }
        out
    }
}
