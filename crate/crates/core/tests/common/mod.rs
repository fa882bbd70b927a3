#![allow(dead_code)]

pub mod oracles;

use diffcore::ParamStore;
use turnaround::encoder::EncoderConfig;
use turnaround::field::{Combinator, FieldConfig};
use turnaround::geometry::{orbit_pose, Camera, Intrinsics};
use turnaround::imageio::RgbImage;
use turnaround::model::{Model, ModelConfig, SourceViews};

pub fn tiny_config(res: usize, combinator: Combinator) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            input_res: res,
            base: 4,
            f_coarse: 3,
            f_fine: 3,
            depth: 1,
        },
        field: FieldConfig {
            width: 8,
            heads: 2,
            n_freq: 2,
            combinator,
            ..Default::default()
        },
        init_seed: 11,
    }
}

pub fn tiny_model(res: usize) -> (Model, ParamStore<f64>) {
    Model::build(&tiny_config(res, Combinator::Mha)).unwrap()
}

pub fn source_views(res: usize) -> SourceViews {
    let k = Intrinsics::from_fov(res as u32, res as u32, 40.0, 1.05);
    let cams = [0.0, 90.0, 180.0].map(|az| Camera::new(k.clone(), orbit_pose(az, 0.0, 4.0)).unwrap());
    let imgs = [0usize, 1, 2].map(|s| {
        RgbImage::from_fn(res, res, |x, y| {
            let r = ((x * 7 + y * 3 + s * 5) % 11) as f32 / 10.0;
            [r, y as f32 / res as f32, 0.25 + 0.2 * s as f32]
        })
    });
    SourceViews::new(imgs, cams).unwrap()
}
