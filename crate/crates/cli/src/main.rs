use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use turnaround::config::RunConfig;
use turnaround::dataset::{held_out_views, Dataset};
use turnaround::datasetgen::{generate_character, render_dataset, Generator, SceneSpec};
use turnaround::eval::{attention_sweep, concept_views, eval_sweep};
use turnaround::geometry::{orbit_pose, Camera};
use turnaround::meshing::{default_cameras, default_iso, eval_density_grid, export_obj, marching_cubes};
use turnaround::model::Model;
use turnaround::rendering::render_image;
use turnaround::training::{finetune_scene, train, RunOutput};
use turnaround::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "turnaround", version, about = "Character radiance fields from three turnaround views")]
struct Cli {
    /// Seed for data generation, initialization and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (or file, for single-artifact commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic character and its posed renders.
    GenData {
        #[arg(long, default_value = "capsule-figure")]
        generator: Generator,
        #[arg(long, default_value_t = 128)]
        resolution: u32,
        #[arg(long, default_value_t = 60)]
        views: usize,
    },
    /// Train a model from scratch on one or more dataset directories.
    Train {
        #[arg(long = "data", required = true)]
        data: Vec<PathBuf>,
    },
    /// Tune only the multi-view MLPs of a trained model on one character.
    Finetune {
        #[command(flatten)]
        ckpt: CheckpointArgs,
        #[arg(long)]
        data: PathBuf,
    },
    /// Render one view of a character.
    Render {
        #[command(flatten)]
        ckpt: CheckpointArgs,
        #[arg(long)]
        data: PathBuf,
        /// Dataset view index; otherwise an orbit camera is used.
        #[arg(long)]
        view: Option<usize>,
        #[arg(long, default_value_t = 45.0)]
        azimuth: f64,
        #[arg(long, default_value_t = 0.0)]
        elevation: f64,
        #[arg(long, default_value_t = 4.0)]
        radius: f64,
    },
    /// Extract a mesh from the density field.
    Mesh {
        #[command(flatten)]
        ckpt: CheckpointArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = 8)]
        cameras: usize,
        /// Density iso level; defaults to the half-opacity density.
        #[arg(long)]
        iso: Option<f64>,
        #[arg(long, default_value_t = 4.0)]
        radius: f64,
    },
    /// Score held-out views and bin the results by azimuth.
    Eval {
        #[command(flatten)]
        ckpt: CheckpointArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        azimuth_step: f64,
        /// Views to score; defaults to the held-out lattice views.
        #[arg(long, value_delimiter = ',')]
        views: Vec<usize>,
    },
    /// Record mean attention logits on an orbit around the character.
    AttnSweep {
        #[command(flatten)]
        ckpt: CheckpointArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        azimuth_step: f64,
        #[arg(long, default_value_t = 0.0)]
        elevation: f64,
        #[arg(long, default_value_t = 4.0)]
        radius: f64,
        /// Render resolution of the sweep cameras.
        #[arg(long, default_value_t = 32)]
        resolution: u32,
    },
}

#[derive(Args, Debug)]
struct CheckpointArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.train.seed = s;
        cfg.model.init_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| Error::Io {
            path: d.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = run_config(cli)?;
    match &cli.command {
        Command::GenData {
            generator,
            resolution,
            views,
        } => {
            let spec = SceneSpec {
                generator: *generator,
                palette_seed: cli.seed.unwrap_or(0),
                resolution: *resolution,
                n_views: *views,
                ..Default::default()
            };
            let out = out_path(cli, "data");
            let mesh = generate_character(&spec)?;
            render_dataset(&mesh, &spec, &out)?;
            println!("wrote {} views to {}", views + 3, out.display());
        }
        Command::Train { data } => {
            let datasets = data
                .iter()
                .map(|d| Dataset::load(d).map(Arc::new))
                .collect::<Result<Vec<_>>>()?;
            let out = out_path(cli, "run");
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| Error::Io {
                path: out.join("config.txt"),
                source: e,
            })?;
            let (model, mut store) = Model::build::<f32>(&cfg.model)?;
            let s = train(&model, &mut store, &datasets, &cfg.train, &RunOutput::new(&out))?;
            report_training(&s);
        }
        Command::Finetune { ckpt, data } => {
            let (model, mut store) = Model::load::<f32>(&ckpt.checkpoint)?;
            let ds = Arc::new(Dataset::load(data)?);
            let out = out_path(cli, "finetune");
            let s = finetune_scene(&model, &mut store, ds, &cfg.train, &RunOutput::new(&out))?;
            report_training(&s);
        }
        Command::Render {
            ckpt,
            data,
            view,
            azimuth,
            elevation,
            radius,
        } => {
            let (model, store) = Model::load::<f32>(&ckpt.checkpoint)?;
            let ds = Dataset::load(data)?;
            let views = concept_views(&ds)?;
            let cam = match view {
                Some(v) => ds
                    .cameras
                    .get(*v)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("view {v} out of range")))?,
                None => Camera::new(ds.intrinsics.clone(), orbit_pose(*azimuth, *elevation, *radius))?,
            };
            let map = model.encode_detached(&store, &views)?;
            let img = render_image(
                &model,
                &store,
                &views,
                &map,
                &cam,
                ds.intrinsics.aabb_scale,
                &cfg.train.render,
                cfg.train.seed,
            )?;
            let out = out_path(cli, "render.png");
            create_parent(&out)?;
            img.save_png(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Mesh {
            ckpt,
            data,
            resolution,
            cameras,
            iso,
            radius,
        } => {
            let (model, store) = Model::load::<f32>(&ckpt.checkpoint)?;
            let ds = Dataset::load(data)?;
            let views = concept_views(&ds)?;
            let map = model.encode_detached(&store, &views)?;
            let aabb = ds.intrinsics.aabb_scale;
            let r = &cfg.train.render;
            let grid = eval_density_grid(
                &model.fine,
                &store,
                &views,
                &map,
                &default_cameras(*cameras, *radius),
                *resolution,
                aabb,
                r.chunk * 32,
            )?;
            let iso = iso.unwrap_or_else(|| default_iso(aabb, r.n_coarse, r.n_fine));
            let mesh = marching_cubes(&grid, iso);
            let out = out_path(cli, "mesh.obj");
            create_parent(&out)?;
            export_obj(&mesh, &out)?;
            println!(
                "wrote {} ({} vertices, {} triangles, iso {iso:.4})",
                out.display(),
                mesh.vertices.len(),
                mesh.triangles.len()
            );
        }
        Command::Eval {
            ckpt,
            data,
            azimuth_step,
            views,
        } => {
            let (model, store) = Model::load::<f32>(&ckpt.checkpoint)?;
            let ds = Dataset::load(data)?;
            let concept = ds.concept.indices();
            let views = if views.is_empty() {
                held_out_views(ds.len(), cfg.train.hold_out_every)
                    .into_iter()
                    .filter(|v| !concept.contains(v))
                    .collect()
            } else {
                views.clone()
            };
            let report = eval_sweep(
                &model,
                &store,
                &ds,
                &views,
                &cfg.train.render,
                *azimuth_step,
                cfg.train.seed,
            )?;
            let out = out_path(cli, "eval");
            std::fs::create_dir_all(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            report.write_views_csv(&out.join("views.csv"))?;
            report.write_bins_csv(&out.join("bins.csv"))?;
            println!(
                "{} views: mean PSNR {:.2} dB, mean SSIM {:.4}",
                report.views.len(),
                report.mean_psnr(),
                report.mean_ssim()
            );
        }
        Command::AttnSweep {
            ckpt,
            data,
            azimuth_step,
            elevation,
            radius,
            resolution,
        } => {
            let (model, store) = Model::load::<f32>(&ckpt.checkpoint)?;
            let ds = Dataset::load(data)?;
            let views = concept_views(&ds)?;
            let k = ds.intrinsics.scaled(*resolution as f64 / ds.intrinsics.width as f64);
            let trace = attention_sweep(
                &model,
                &store,
                &views,
                &k,
                *radius,
                *elevation,
                *azimuth_step,
                &cfg.train.render,
                cfg.train.seed,
            )?;
            let out = out_path(cli, "attention.csv");
            create_parent(&out)?;
            trace.write_csv(&out)?;
            println!("wrote {} ({} azimuths)", out.display(), trace.rows.len());
        }
    }
    Ok(())
}

fn report_training(s: &turnaround::training::TrainSummary) {
    let last = s.reports.last();
    println!(
        "{} iterations in {:.0}s; final total loss {:.5}; validation PSNR {}",
        s.reports.len(),
        s.seconds,
        last.map_or(f64::NAN, |r| r.total),
        s.final_val_psnr().map_or("n/a".to_string(), |v| format!("{v:.2} dB"))
    );
    if let Some(p) = &s.checkpoint {
        println!("checkpoint {}", p.display());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: category={} message={msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
