//! Single entry point for the navigation toolkit: scene generation,
//! single-episode planning, batch benchmarking, dataset export, dead
//! reckoning, occupancy metrics, and SVG rendering.
//!
//! Exit codes: 0 success, 1 navigation failure in single-episode mode,
//! 2 usage or I/O errors.

mod config;
mod render;

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use gridnav_core::deadreckon::{reconstruct, SensorLog};
use gridnav_core::grid::VoxelGrid;
use gridnav_core::occmetrics::{bce, iou, lovasz_hinge};
use gridnav_core::planner::{
    emit_samples, read_trajectory_jsonl, run_episode, EpisodeOutcome, EpisodeResult, WorldModel,
};
use gridnav_core::sim::{
    compute_metrics, compute_reference, generate_scene, ReferencePath, Scene,
};
use rayon::prelude::*;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "gridnav", version, about = "Occupancy-grid navigation toolkit")]
struct Cli {
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
    /// JSON configuration file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene and write `<out>.occ` plus `<out>.json`.
    GenScene {
        #[arg(long)]
        seed: Option<u64>,
        /// Map side length in meters.
        #[arg(long)]
        size: Option<f64>,
        /// Target blocked-cell fraction.
        #[arg(long)]
        density: Option<f64>,
        /// Number of dynamic obstacle discs.
        #[arg(long)]
        dynamic: Option<usize>,
        #[arg(long, default_value = "scene")]
        out: PathBuf,
    },
    /// Run one episode on a scene and write the trajectory as JSON Lines.
    Plan {
        /// Scene stem or path to its .occ/.json file.
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value = "trajectory.jsonl")]
        out: PathBuf,
    },
    /// Run a batch of episodes and write per-episode logs plus aggregate
    /// metrics (SR, SPL, NE, Cost, nDTW) as JSON and CSV.
    Bench {
        /// Scene stems or .occ/.json paths.
        #[arg(long, num_args = 0..)]
        scenes: Vec<PathBuf>,
        /// Generate this many scenes (seeds seed..seed+n) instead.
        #[arg(long)]
        generate: Option<usize>,
        #[arg(long, default_value = "bench-out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run episodes and export egocentric waypoint windows with occupancy
    /// crops.
    MakeDataset {
        #[arg(long, num_args = 0..)]
        scenes: Vec<PathBuf>,
        #[arg(long)]
        generate: Option<usize>,
        #[arg(long, default_value = "dataset-out")]
        out_dir: PathBuf,
        /// Waypoint horizon M.
        #[arg(long)]
        horizon: Option<usize>,
        /// Anchor stride in steps.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Reconstruct a trajectory from a `t, wheel_speed, mx, my` CSV log.
    Reckon {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "reckoned.jsonl")]
        out: PathBuf,
    },
    /// Compare a predicted occupancy grid (or logits file) against ground
    /// truth and report IoU, BCE, and Lovasz-hinge values.
    OccMetrics {
        /// Prediction: an .occ grid, or raw little-endian f32 logits with a
        /// `<file>.json` shape sidecar.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth .occ grid.
        #[arg(long)]
        gt: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a scene (and optionally a trajectory) to SVG.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value = "scene.svg")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.dump_config {
        println!("{}", cfg.to_json()?);
        return Ok(0);
    }
    let Some(command) = cli.command else {
        bail!("no subcommand given; see --help");
    };
    match command {
        Command::GenScene {
            seed,
            size,
            density,
            dynamic,
            out,
        } => {
            let mut params = cfg.scene.clone();
            if let Some(s) = size {
                params.size = s;
            }
            if let Some(d) = density {
                params.density = d;
            }
            if let Some(n) = dynamic {
                params.n_dynamic = n;
            }
            let seed = seed.unwrap_or(cfg.seed);
            let scene = generate_scene(seed, &params, &cfg.planner)?;
            scene.save(&out)?;
            println!(
                "wrote {}.occ and {}.json ({} boxes, {} discs)",
                out.display(),
                out.display(),
                scene.boxes.len(),
                scene.dynamic.len()
            );
            Ok(0)
        }
        Command::Plan { scene, out } => {
            let scene = Scene::load(scene_stem(&scene))?;
            let world = WorldModel::build(scene.voxels.clone(), &cfg.planner)?;
            let result = run_episode(&world, &scene.dynamic, scene.start, scene.goal, &cfg.planner)?;
            let mut w = BufWriter::new(fs::File::create(&out)?);
            result.trajectory.write_jsonl(&mut w)?;
            w.flush()?;
            println!(
                "outcome: {:?}, steps: {}, executed: {:.2} m, collisions: {}",
                result.outcome,
                result.trajectory.controls.len(),
                result.trajectory.executed_length(),
                result.collision_steps()
            );
            Ok(if result.outcome == EpisodeOutcome::Success {
                0
            } else {
                1
            })
        }
        Command::Bench {
            scenes,
            generate,
            out_dir,
            workers,
        } => {
            let scenes = collect_scenes(&scenes, generate, &cfg)?;
            if scenes.is_empty() {
                bail!("no scenes to run");
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers.max(1))
                .build()?;
            let runs: Result<Vec<(String, EpisodeResult, ReferencePath)>> = pool.install(|| {
                scenes
                    .par_iter()
                    .map(|(name, scene)| {
                        let (ep, reference) = run_scene(scene, &cfg)?;
                        Ok((name.clone(), ep, reference))
                    })
                    .collect()
            });
            let runs = runs?;
            let episodes: Vec<EpisodeResult> = runs.iter().map(|(_, e, _)| e.clone()).collect();
            let references: Vec<ReferencePath> =
                runs.iter().map(|(_, _, r)| r.clone()).collect();
            let report = compute_metrics(&episodes, &references, cfg.planner.goal_radius)?;

            fs::create_dir_all(&out_dir)?;
            let mut w = BufWriter::new(fs::File::create(out_dir.join("episodes.jsonl"))?);
            for ((name, _, _), row) in runs.iter().zip(&report.episodes) {
                let mut value = serde_json::to_value(row)?;
                value["scene"] = serde_json::Value::String(name.clone());
                serde_json::to_writer(&mut w, &value)?;
                writeln!(w)?;
            }
            w.flush()?;
            fs::write(
                out_dir.join("metrics.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "sr": report.sr,
                    "spl": report.spl,
                    "ne": report.ne,
                    "cost": report.cost,
                    "ndtw": report.ndtw,
                    "episodes": report.episodes.len(),
                }))?,
            )?;
            fs::write(
                out_dir.join("metrics.csv"),
                format!(
                    "sr,spl,ne,cost,ndtw,episodes\n{},{},{},{},{},{}\n",
                    report.sr,
                    report.spl,
                    report.ne,
                    report.cost,
                    report.ndtw,
                    report.episodes.len()
                ),
            )?;
            println!(
                "episodes: {}  SR: {:.3}  SPL: {:.3}  NE: {:.3} m  Cost: {:.3} s  nDTW: {:.3}",
                report.episodes.len(),
                report.sr,
                report.spl,
                report.ne,
                report.cost,
                report.ndtw
            );
            Ok(0)
        }
        Command::MakeDataset {
            scenes,
            generate,
            out_dir,
            horizon,
            stride,
        } => {
            let scenes = collect_scenes(&scenes, generate, &cfg)?;
            if scenes.is_empty() {
                bail!("no scenes to run");
            }
            let horizon = horizon.unwrap_or(cfg.planner.horizon);
            let stride = stride.unwrap_or(cfg.planner.stride);
            let crops_dir = out_dir.join("crops");
            fs::create_dir_all(&crops_dir)?;
            let mut w = BufWriter::new(fs::File::create(out_dir.join("dataset.jsonl"))?);
            let mut n_samples = 0usize;
            for (name, scene) in &scenes {
                let world = WorldModel::build(scene.voxels.clone(), &cfg.planner)?;
                let ep = run_episode(&world, &scene.dynamic, scene.start, scene.goal, &cfg.planner)?;
                let samples = emit_samples(&ep.trajectory, &world.voxels, horizon, stride)?;
                for s in samples {
                    let crop_name = format!("crops/{}_t{:05}.occ", name, s.anchor);
                    s.crop.save(out_dir.join(&crop_name))?;
                    let record = serde_json::json!({
                        "scene": name,
                        "t": s.anchor,
                        "waypoints": s.waypoints,
                        "crop_file": crop_name,
                    });
                    serde_json::to_writer(&mut w, &record)?;
                    writeln!(w)?;
                    n_samples += 1;
                }
            }
            w.flush()?;
            println!(
                "wrote {} samples from {} scenes to {}",
                n_samples,
                scenes.len(),
                out_dir.display()
            );
            Ok(0)
        }
        Command::Reckon { input, out } => {
            let log = read_sensor_csv(&input)?;
            let traj = reconstruct(&log, &cfg.reckon)?;
            let mut w = BufWriter::new(fs::File::create(&out)?);
            for (t, p) in log.t.iter().zip(&traj) {
                serde_json::to_writer(
                    &mut w,
                    &serde_json::json!({ "t": t, "x": p[0], "y": p[1], "yaw": p[2] }),
                )?;
                writeln!(w)?;
            }
            w.flush()?;
            println!("wrote {} poses to {}", traj.len(), out.display());
            Ok(0)
        }
        Command::OccMetrics { pred, gt, out } => {
            let gt_grid = VoxelGrid::load(&gt)?;
            let labels = grid_bits(&gt_grid);
            let logits = load_prediction(&pred, labels.len())?;
            let pred_bits: Vec<bool> = logits.iter().map(|&o| o > 0.0).collect();
            let report = serde_json::json!({
                "iou": iou(&pred_bits, &labels)?,
                "bce": bce(&logits, &labels)?,
                "lovasz": lovasz_hinge(&logits, &labels)?.0,
            });
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => fs::write(path, text)?,
                None => println!("{text}"),
            }
            Ok(0)
        }
        Command::Render {
            scene,
            trajectory,
            out,
        } => {
            let scene = Scene::load(scene_stem(&scene))?;
            let records = match trajectory {
                Some(path) => Some(read_trajectory_jsonl(BufReader::new(
                    fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?,
                ))?),
                None => None,
            };
            let svg = render::render_svg(&scene, records.as_deref());
            fs::write(&out, svg)?;
            println!("wrote {}", out.display());
            Ok(0)
        }
    }
}

/// Accepts a scene stem or a path to either of its files.
fn scene_stem(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("occ") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn collect_scenes(
    paths: &[PathBuf],
    generate: Option<usize>,
    cfg: &RunConfig,
) -> Result<Vec<(String, Scene)>> {
    if let Some(n) = generate {
        return (0..n as u64)
            .map(|i| {
                let seed = cfg.seed + i;
                let scene = generate_scene(seed, &cfg.scene, &cfg.planner)?;
                Ok((format!("gen{seed:05}"), scene))
            })
            .collect();
    }
    paths
        .iter()
        .map(|p| {
            let stem = scene_stem(p);
            let name = stem
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or("scene")
                .to_string();
            let scene = Scene::load(&stem)
                .with_context(|| format!("loading scene {}", stem.display()))?;
            Ok((name, scene))
        })
        .collect()
}

fn run_scene(scene: &Scene, cfg: &RunConfig) -> Result<(EpisodeResult, ReferencePath)> {
    let world = WorldModel::build(scene.voxels.clone(), &cfg.planner)?;
    let reference = compute_reference(&world, scene.start.position(), scene.goal, &cfg.planner)?
        .context("scene has no oracle reference path")?;
    let ep = run_episode(&world, &scene.dynamic, scene.start, scene.goal, &cfg.planner)?;
    Ok((ep, reference))
}

fn grid_bits(grid: &VoxelGrid) -> Vec<bool> {
    let m = grid.meta;
    let mut out = Vec::with_capacity(m.width * m.height * m.depth);
    for k in 0..m.depth {
        for y in 0..m.height {
            for x in 0..m.width {
                out.push(grid.get(x, y, k));
            }
        }
    }
    out
}

/// Prediction loader: an .occ grid becomes +-1 logits; anything else is raw
/// little-endian f32 logits with a `<file>.json` sidecar declaring
/// `{"shape": [W, H, D]}`.
fn load_prediction(path: &Path, expected: usize) -> Result<Vec<f64>> {
    if path.extension().and_then(|e| e.to_str()) == Some("occ") {
        let grid = VoxelGrid::load(path)?;
        let bits = grid_bits(&grid);
        if bits.len() != expected {
            bail!("prediction has {} voxels, ground truth {}", bits.len(), expected);
        }
        return Ok(bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect());
    }
    #[derive(serde::Deserialize)]
    struct Sidecar {
        shape: [usize; 3],
    }
    let sidecar_path = PathBuf::from(format!("{}.json", path.display()));
    let sidecar: Sidecar = serde_json::from_str(
        &fs::read_to_string(&sidecar_path)
            .with_context(|| format!("reading shape sidecar {}", sidecar_path.display()))?,
    )?;
    let n = sidecar.shape.iter().product::<usize>();
    if n != expected {
        bail!("logit shape {:?} does not match ground truth ({expected} voxels)", sidecar.shape);
    }
    let bytes = fs::read(path)?;
    if bytes.len() != 4 * n {
        bail!("logits file has {} bytes, expected {}", bytes.len(), 4 * n);
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_sensor_csv(path: &Path) -> Result<SensorLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    {
        let headers = reader.headers()?;
        let expected = ["t", "wheel_speed", "mx", "my"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            bail!("bad CSV header {:?}; expected {:?}", got, expected);
        }
    }
    let mut log = SensorLog::default();
    for record in reader.records() {
        let record = record?;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or_default();
        let field = |i: usize, name: &str| -> Result<f64> {
            record
                .get(i)
                .with_context(|| format!("line {line}: missing {name}"))?
                .parse::<f64>()
                .with_context(|| format!("line {line}: bad {name} value {:?}", record.get(i)))
        };
        log.t.push(field(0, "t")?);
        log.wheel_speed.push(field(1, "wheel_speed")?);
        let mx = field(2, "mx")?;
        let my = field(3, "my")?;
        log.mag.push([mx, my]);
    }
    log.validate().map_err(|e| anyhow::anyhow!("{path:?}: {e}", path = path.display()))?;
    Ok(log)
}
