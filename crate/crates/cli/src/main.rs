//! `cnrf` command line: train feature volumes and the shared renderer, fit
//! novel scenes against frozen weights, render views, run edit scripts, fuse
//! volumes, evaluate against held-out views, and synthesize test datasets.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input/validation error,
//! 3 renderer-compatibility error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cnrf_core::edit::{fuse_max_norm, run_script_file};
use cnrf_core::math::derive_seed;
use cnrf_core::render::render_image;
use cnrf_core::scene::{import_llff, load_dataset, synthesize_scene, write_dataset, SceneDataset};
use cnrf_core::train::{
    evaluate, optimize_novel_scene, train_multi_scene, SceneSlot, TrainConfig, TrainHooks,
    TrainLogger,
};
use cnrf_core::{
    camera::orbit_cameras, image::write_png, image::write_ppm, Camera, Error, FeatureVolume,
    RenderParams, SyntheticSceneSpec, Vec3,
};

type Volume = FeatureVolume<f32>;
type Params = RenderParams<f32>;

#[derive(Parser)]
#[command(
    name = "cnrf",
    about = "Editable neural feature volumes: train, render, edit, evaluate",
    version
)]
struct Cli {
    /// Training/render configuration file (.json or .toml)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Typed config overrides, e.g. --set lr_net=1e-3 --set net.trunk_width=32
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print per-step progress
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Heldout,
    All,
}

#[derive(Args)]
struct DatasetArg {
    /// Dataset directory containing transforms.json (or an LLFF capture
    /// with --llff)
    #[arg(long)]
    dataset: PathBuf,
    /// Treat the dataset as an LLFF capture (poses_bounds.npy + images/)
    #[arg(long)]
    llff: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Jointly train the renderer and one volume per scene directory
    Train {
        /// Checkpoint/output directory
        #[arg(long)]
        out: PathBuf,
        /// Scene dataset directories
        #[arg(required = true)]
        scenes: Vec<PathBuf>,
        /// Treat scene directories as LLFF captures
        #[arg(long)]
        llff: bool,
    },
    /// Fit a new scene's volume against frozen renderer weights
    Optimize {
        #[arg(long)]
        net: PathBuf,
        /// Scene dataset directory
        #[arg(long)]
        scene: PathBuf,
        /// Output volume file
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        llff: bool,
    },
    /// Render dataset views or an orbit of novel cameras
    Render {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        llff: bool,
        #[arg(long, value_enum, default_value = "heldout")]
        split: Split,
        /// Render N cameras on a circle instead of dataset views
        #[arg(long)]
        orbit: Option<usize>,
        /// Orbit radius in world units (default: sized from the volume)
        #[arg(long)]
        radius: Option<f64>,
        /// Orbit elevation in degrees
        #[arg(long, default_value_t = 20.0)]
        elevation: f64,
        /// Image size for orbit renders without a dataset
        #[arg(long, default_value_t = 64)]
        size: u32,
        /// Also write lossless PPM next to each PNG
        #[arg(long)]
        ppm: bool,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a JSON edit script
    Edit {
        /// Script path; volume paths inside resolve relative to it
        script: PathBuf,
    },
    /// Fuse two volumes cellwise by larger feature norm
    Fuse {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render held-out views and report PSNR/SSIM as JSON
    Eval {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[command(flatten)]
        dataset: DatasetArg,
        #[arg(long, value_enum, default_value = "heldout")]
        split: Split,
        /// Write the JSON report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic dataset from a scene spec
    Synth {
        /// Scene spec JSON
        #[arg(long)]
        spec: PathBuf,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::Format { .. } | Error::Script(_) => 2,
        Error::IncompatibleScenes(_) => 3,
        Error::Io(_) | Error::NonFiniteLoss { .. } => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

/// Loads the config file (JSON or TOML by extension), applies `--set`
/// overrides, then `--seed`. Overrides are type-checked by deserializing the
/// patched document back into the schema.
fn load_config(cli: &Cli) -> Result<TrainConfig, Error> {
    let mut value = match &cli.config {
        None => serde_json::to_value(TrainConfig::desk()).expect("default config serializes"),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::format("config", format!("{}: {e}", path.display())))?;
            let is_toml = path.extension().and_then(|e| e.to_str()) == Some("toml");
            if is_toml {
                let parsed: toml::Value = toml::from_str(&text)
                    .map_err(|e| Error::format("config", e.to_string()))?;
                serde_json::to_value(parsed).map_err(|e| Error::format("config", e.to_string()))?
            } else {
                serde_json::from_str(&text)
                    .map_err(|e| Error::format("config", e.to_string()))?
            }
        }
    };
    for entry in &cli.set {
        let (key, raw) = entry.split_once('=').ok_or_else(|| {
            Error::invalid(format!("--set expects KEY=VALUE, got `{entry}`"))
        })?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        set_path(&mut value, &parts, parsed, key)?;
    }
    let mut cfg: TrainConfig = serde_json::from_value(value)
        .map_err(|e| Error::invalid(format!("config override rejected: {e}")))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn set_path(
    value: &mut serde_json::Value,
    parts: &[&str],
    parsed: serde_json::Value,
    key: &str,
) -> Result<(), Error> {
    let obj = value.as_object_mut().ok_or_else(|| {
        Error::invalid(format!("--set key `{key}` traverses a non-object value"))
    })?;
    if parts.len() == 1 {
        obj.insert(parts[0].to_string(), parsed);
        return Ok(());
    }
    let child = obj
        .entry(parts[0].to_string())
        .or_insert_with(|| serde_json::json!({}));
    set_path(child, &parts[1..], parsed, key)
}

fn load_scene(dir: &Path, llff: bool) -> Result<SceneDataset<f32>, Error> {
    if !dir.is_dir() {
        return Err(Error::invalid(format!(
            "scene directory not found: {}",
            dir.display()
        )));
    }
    if llff {
        import_llff(dir)
    } else {
        load_dataset(dir)
    }
}

fn split_views(ds: &SceneDataset<f32>, split: Split) -> Vec<usize> {
    match split {
        Split::Train => ds.train_idx.clone(),
        Split::Heldout => ds.heldout_idx.clone(),
        Split::All => (0..ds.len()).collect(),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.cmd {
        Cmd::Train { out, scenes, llff } => {
            let cfg = load_config(&cli)?;
            let verbose = cli.verbose;
            fs::create_dir_all(out)?;
            let mut slots = Vec::new();
            for (i, dir) in scenes.iter().enumerate() {
                let ds = load_scene(dir, *llff)?;
                slots.push(SceneSlot::new(ds, &cfg, derive_seed(cfg.seed, i as u64))?);
            }
            let mut params = Params::init(cfg.net, derive_seed(cfg.seed, 0x9e7))?;
            let mut logger = TrainLogger::to_file(&out.join("train_log.csv"))?;
            let mut progress = move |it: u64, scene: &str, m: &cnrf_core::train::StepMetrics| {
                if verbose > 0 && it % 50 == 0 {
                    eprintln!(
                        "iter {it} scene {scene} loss_r {:.5} loss_tv {:.3e} psnr {:.2}",
                        m.loss_r, m.loss_tv, m.psnr_running
                    );
                }
            };
            let mut hooks = TrainHooks {
                checkpoint_dir: Some(out),
                logger: &mut logger,
                progress: Some(&mut progress),
            };
            let steps = train_multi_scene(&mut slots, &mut params, &cfg, &mut hooks)?;
            if verbose > 0 {
                eprintln!("trained {steps} steps over {} scene(s)", slots.len());
            }
            println!("checkpoint written to {}", out.display());
            Ok(())
        }
        Cmd::Optimize {
            net,
            scene,
            out,
            llff,
        } => {
            let mut cfg = load_config(&cli)?;
            let params = Params::load(net)?;
            if cfg.net.feat_len != params.descriptor().feat_len {
                return Err(Error::invalid(format!(
                    "config feat_len {} disagrees with net feat_len {}",
                    cfg.net.feat_len,
                    params.descriptor().feat_len
                )));
            }
            cfg.net = *params.descriptor();
            let ds = load_scene(scene, *llff)?;
            let mut logger = TrainLogger::disabled();
            let mut hooks = TrainHooks::none(&mut logger);
            let volume = optimize_novel_scene(ds, &params, &cfg, &mut hooks)?;
            volume.save(out)?;
            println!("volume written to {}", out.display());
            Ok(())
        }
        Cmd::Render {
            net,
            volume,
            dataset,
            llff,
            split,
            orbit,
            radius,
            elevation,
            size,
            ppm,
            out,
        } => {
            let cfg = load_config(&cli)?;
            let params = Params::load(net)?;
            let vol = Volume::load(volume)?;
            if vol.renderer_hash() != 0 && vol.renderer_hash() != params.content_hash() {
                eprintln!(
                    "warning: volume was trained against a different renderer \
                     ({:016x} vs {:016x})",
                    vol.renderer_hash(),
                    params.content_hash()
                );
            }
            fs::create_dir_all(out)?;
            let rc = cfg.render_config::<f32>();
            let cameras: Vec<(String, Camera<f32>)> = match orbit {
                Some(n) => {
                    let template = match dataset {
                        Some(dir) => load_scene(dir, *llff)?.cameras[0],
                        None => {
                            let b = vol.bounds();
                            let half_diag = (b.extent() * 0.5).norm();
                            let r = radius.unwrap_or((half_diag * 3.0) as f64) as f32;
                            let near = (r - 1.3 * half_diag).max(0.05);
                            let far = r + 1.3 * half_diag;
                            Camera::new(
                                *size as f32,
                                *size as f32,
                                *size as f32 * 0.5,
                                *size as f32 * 0.5,
                                *size,
                                *size,
                                [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                                Vec3::zero(),
                                near,
                                far,
                            )?
                        }
                    };
                    let b = vol.bounds();
                    let center = b.center();
                    let half_diag = (b.extent() * 0.5).norm();
                    let r = radius.unwrap_or((half_diag * 3.0) as f64) as f32;
                    orbit_cameras(*n, r, (*elevation as f32).to_radians(), center, &template)?
                        .into_iter()
                        .enumerate()
                        .map(|(i, c)| (format!("orbit_{i:03}"), c))
                        .collect()
                }
                None => {
                    let dir = dataset.as_ref().ok_or_else(|| {
                        Error::invalid("render needs --dataset or --orbit")
                    })?;
                    let ds = load_scene(dir, *llff)?;
                    split_views(&ds, *split)
                        .into_iter()
                        .map(|i| (format!("view_{i:03}"), ds.cameras[i]))
                        .collect()
                }
            };
            for (name, cam) in &cameras {
                let img = render_image(&vol, &params, cam, &rc, cfg.seed)?;
                write_png(&img, &out.join(format!("{name}.png")))?;
                if *ppm {
                    write_ppm(&img, &out.join(format!("{name}.ppm")))?;
                }
            }
            println!("rendered {} image(s) to {}", cameras.len(), out.display());
            Ok(())
        }
        Cmd::Edit { script } => {
            let written = run_script_file::<f32>(script)?;
            println!("wrote {} volume(s): {}", written.len(), written.join(", "));
            Ok(())
        }
        Cmd::Fuse { a, b, out } => {
            let va = Volume::load(a)?;
            let vb = Volume::load(b)?;
            let fused = fuse_max_norm(&va, &vb)?;
            fused.save(out)?;
            println!("fused volume written to {}", out.display());
            Ok(())
        }
        Cmd::Eval {
            net,
            volume,
            dataset,
            split,
            out,
        } => {
            let cfg = load_config(&cli)?;
            let params = Params::load(net)?;
            let vol = Volume::load(volume)?;
            let ds = load_scene(&dataset.dataset, dataset.llff)?;
            let views = split_views(&ds, *split);
            let rc = cfg.render_config::<f32>();
            let report = evaluate(&vol, &params, &ds, &views, &rc, cfg.seed)?;
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            match out {
                Some(path) => fs::write(path, &json)?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Cmd::Synth { spec, out } => {
            let cfg = load_config(&cli)?;
            let text = fs::read_to_string(spec)
                .map_err(|e| Error::format("spec", format!("{}: {e}", spec.display())))?;
            let scene_spec: SyntheticSceneSpec = serde_json::from_str(&text)
                .map_err(|e| Error::format("spec", e.to_string()))?;
            let (ds, _) = synthesize_scene::<f32>(&scene_spec, cfg.seed)?;
            write_dataset(&ds, out)?;
            println!(
                "synthesized {} views ({} train, {} heldout) to {}",
                ds.len(),
                ds.train_idx.len(),
                ds.heldout_idx.len(),
                out.display()
            );
            Ok(())
        }
    }
}
