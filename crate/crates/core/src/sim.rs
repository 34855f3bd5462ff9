//! Procedural scenes, dynamic obstacle motion, and navigation metrics.

use std::path::Path as FsPath;

use nalgebra::Vector2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Pose;
use crate::grid::{DistanceField, GridMeta, VoxelGrid};
use crate::guide::GuideCost;
use crate::planner::{EpisodeResult, PlannerConfig, WorldModel};
use crate::vo::ObstacleState;

/// Scene generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    /// Side length of the square map, meters.
    pub size: f64,
    /// Target fraction of blocked traversability cells.
    pub density: f64,
    pub n_dynamic: usize,
    /// Dynamic obstacle speed range, m/s.
    pub speed_range: [f64; 2],
    /// Dynamic obstacle radius range, meters.
    pub radius_range: [f64; 2],
    /// Static box side range, meters.
    pub box_side_range: [f64; 2],
    /// Fraction of boxes placed entirely above the height threshold; they
    /// exercise the traversability fusion rule without blocking anything.
    pub overhead_fraction: f64,
    /// Minimum free gap between separate obstacles (and to the walls);
    /// boxes may overlap into larger blobs, but slits narrower than this
    /// are never generated.
    pub min_gap: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            size: 20.0,
            density: 0.10,
            n_dynamic: 3,
            speed_range: [0.2, 0.8],
            radius_range: [0.2, 0.35],
            box_side_range: [0.3, 1.5],
            overhead_fraction: 0.15,
            min_gap: 0.9,
        }
    }
}

/// Axis-aligned box recorded in the scene sidecar.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StaticBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
    /// Occupied slice range [k_min, k_max), in slice indices.
    pub k_min: usize,
    pub k_max: usize,
}

/// A generated navigation problem: ground-truth occupancy, dynamic discs,
/// and a start/goal pair verified to be mutually reachable.
#[derive(Debug, Clone)]
pub struct Scene {
    pub voxels: VoxelGrid,
    pub dynamic: Vec<ObstacleState>,
    pub start: Pose,
    pub goal: Vector2<f64>,
    pub seed: u64,
    pub boxes: Vec<StaticBox>,
}

/// Sidecar JSON carried next to the OCCGRID file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSidecar {
    pub seed: u64,
    pub start: Pose,
    pub goal: [f64; 2],
    pub dynamic: Vec<ObstacleState>,
    pub boxes: Vec<StaticBox>,
}

impl Scene {
    pub fn sidecar(&self) -> SceneSidecar {
        SceneSidecar {
            seed: self.seed,
            start: self.start,
            goal: [self.goal.x, self.goal.y],
            dynamic: self.dynamic.clone(),
            boxes: self.boxes.clone(),
        }
    }

    /// Writes `<stem>.occ` and `<stem>.json`.
    pub fn save<P: AsRef<FsPath>>(&self, stem: P) -> Result<()> {
        let stem = stem.as_ref();
        self.voxels.save(stem.with_extension("occ"))?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(stem.with_extension("json"), json)?;
        Ok(())
    }

    pub fn load<P: AsRef<FsPath>>(stem: P) -> Result<Self> {
        let stem = stem.as_ref();
        let voxels = VoxelGrid::load(stem.with_extension("occ"))?;
        let sidecar: SceneSidecar =
            serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        Ok(Self {
            voxels,
            dynamic: sidecar.dynamic,
            start: sidecar.start,
            goal: Vector2::new(sidecar.goal[0], sidecar.goal[1]),
            seed: sidecar.seed,
            boxes: sidecar.boxes,
        })
    }
}

fn stamp_box(voxels: &mut VoxelGrid, b: &StaticBox) {
    let meta = voxels.meta;
    let x0 = ((b.min[0] - meta.origin[0]) / meta.cell_size).floor().max(0.0) as usize;
    let y0 = ((b.min[1] - meta.origin[1]) / meta.cell_size).floor().max(0.0) as usize;
    let x1 = (((b.max[0] - meta.origin[0]) / meta.cell_size).ceil() as usize).min(meta.width);
    let y1 = (((b.max[1] - meta.origin[1]) / meta.cell_size).ceil() as usize).min(meta.height);
    for k in b.k_min..b.k_max.min(meta.depth) {
        for y in y0..y1 {
            for x in x0..x1 {
                voxels.set(x, y, k, true);
            }
        }
    }
}

/// Free planar distance between two axis-aligned boxes; zero when they
/// touch or overlap.
fn box_gap(a: &StaticBox, b: &StaticBox) -> f64 {
    let gx = (a.min[0] - b.max[0]).max(b.min[0] - a.max[0]).max(0.0);
    let gy = (a.min[1] - b.max[1]).max(b.min[1] - a.max[1]).max(0.0);
    (gx * gx + gy * gy).sqrt()
}

/// Generates a scene by rejection sampling: boxes are stamped until the
/// blocked-cell fraction reaches the target density, then start/goal pairs
/// are drawn until an oracle guide path (lambda = 0) connects them on the
/// ground-truth roadmap.
pub fn generate_scene(seed: u64, params: &SceneParams, cfg: &PlannerConfig) -> Result<Scene> {
    if params.density >= 0.4 {
        return Err(Error::Domain(format!(
            "density {} too high; must be below 0.4",
            params.density
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = (params.size / 0.05).round() as usize;
    let meta = GridMeta::new(cells, cells, 10);
    let n_below = meta.slices_below_limit();
    let total_cells = (cells * cells) as f64;

    let mut voxels = VoxelGrid::new(meta);
    let mut blocked = vec![false; cells * cells];
    let mut blocked_count = 0usize;
    let mut boxes: Vec<StaticBox> = Vec::new();
    let mut attempts = 0;
    while (blocked_count as f64) < params.density * total_cells {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Generation("box placement budget exhausted".into()));
        }
        let side_x = rng.random_range(params.box_side_range[0]..=params.box_side_range[1]);
        let side_y = rng.random_range(params.box_side_range[0]..=params.box_side_range[1]);
        let cx = rng.random_range(0.0..params.size - side_x);
        let cy = rng.random_range(0.0..params.size - side_y);
        let overhead = rng.random_bool(params.overhead_fraction);
        let (k_min, k_max) = if overhead {
            (n_below, meta.depth)
        } else {
            // Ground boxes may also extend above the threshold.
            (0, rng.random_range(2..=meta.depth))
        };
        let b = StaticBox {
            min: [cx, cy],
            max: [cx + side_x, cy + side_y],
            k_min,
            k_max,
        };
        // No slits: a new box either merges with an existing one or keeps a
        // traversable gap, and never crowds the walls.
        let wall_gap = cx
            .min(cy)
            .min(params.size - (cx + side_x))
            .min(params.size - (cy + side_y));
        if wall_gap < params.min_gap {
            continue;
        }
        if boxes.iter().any(|other| {
            let g = box_gap(&b, other);
            g > 0.0 && g < params.min_gap
        }) {
            continue;
        }
        stamp_box(&mut voxels, &b);
        if b.k_min < n_below {
            let x0 = ((b.min[0] / meta.cell_size).floor().max(0.0)) as usize;
            let y0 = ((b.min[1] / meta.cell_size).floor().max(0.0)) as usize;
            let x1 = (((b.max[0] / meta.cell_size).ceil()) as usize).min(cells);
            let y1 = (((b.max[1] / meta.cell_size).ceil()) as usize).min(cells);
            for y in y0..y1 {
                for x in x0..x1 {
                    if !blocked[x + cells * y] {
                        blocked[x + cells * y] = true;
                        blocked_count += 1;
                    }
                }
            }
        }
        boxes.push(b);
    }

    let world = WorldModel::build(voxels.clone(), cfg)?;
    let oracle_cost = GuideCost {
        lambda: 0.0,
        d_pref: 0.0,
    };
    let margin = cfg.footprint.r_eff;

    let place_disc = |rng: &mut ChaCha8Rng| -> Result<ObstacleState> {
        for _ in 0..1000 {
            let radius = rng.random_range(params.radius_range[0]..=params.radius_range[1]);
            let p = Vector2::new(
                rng.random_range(radius..params.size - radius),
                rng.random_range(radius..params.size - radius),
            );
            if world.dist.at_point(p).unwrap_or(0.0) > radius + margin {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let speed = rng.random_range(params.speed_range[0]..=params.speed_range[1]);
                return Ok(ObstacleState {
                    center: p,
                    velocity: Vector2::new(speed * angle.cos(), speed * angle.sin()),
                    radius,
                });
            }
        }
        Err(Error::Generation("no free space for a dynamic disc".into()))
    };
    let mut dynamic = Vec::new();
    for _ in 0..params.n_dynamic {
        dynamic.push(place_disc(&mut rng)?);
    }

    for _ in 0..1000 {
        let sx = rng.random_range(0.5..params.size - 0.5);
        let sy = rng.random_range(0.5..params.size - 0.5);
        let gx = rng.random_range(0.5..params.size - 0.5);
        let gy = rng.random_range(0.5..params.size - 0.5);
        let start = Vector2::new(sx, sy);
        let goal = Vector2::new(gx, gy);
        if (goal - start).norm() < 0.25 * params.size {
            continue;
        }
        if world.dist.at_point(start).unwrap_or(0.0) <= margin
            || world.dist.at_point(goal).unwrap_or(0.0) <= margin
        {
            continue;
        }
        let Some(s) = world.roadmap.nearest_node(start, cfg.snap_radius, None) else {
            continue;
        };
        let Some(g) = world.roadmap.nearest_node(goal, cfg.snap_radius, None) else {
            continue;
        };
        if crate::guide::astar(&world.roadmap, s, g, &oracle_cost).is_none() {
            continue;
        }
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        return Ok(Scene {
            voxels,
            dynamic,
            start: Pose::new(sx, sy, yaw),
            goal,
            seed,
            boxes,
        });
    }
    Err(Error::Generation(
        "no mutually reachable start/goal pair found".into(),
    ))
}

/// Constant-velocity advance with elastic reflection at the bounds
/// [min_x, min_y, max_x, max_y].
pub fn step_obstacles(obstacles: &mut [ObstacleState], dt: f64, bounds: [f64; 4]) {
    for o in obstacles.iter_mut() {
        o.center += o.velocity * dt;
        for axis in 0..2 {
            let (lo, hi) = (bounds[axis], bounds[axis + 2]);
            if o.center[axis] < lo {
                o.center[axis] = lo + (lo - o.center[axis]);
                o.velocity[axis] = -o.velocity[axis];
            } else if o.center[axis] > hi {
                o.center[axis] = hi - (o.center[axis] - hi);
                o.velocity[axis] = -o.velocity[axis];
            }
        }
    }
}

/// Oracle shortest path used as the SPL length reference and the nDTW
/// reference path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferencePath {
    /// Shortest path length from start to goal, meters.
    pub length: f64,
    /// Polyline resampled at a uniform spacing.
    pub points: Vec<[f64; 2]>,
}

/// Spacing at which reference polylines are resampled, meters; one ground
/// cell so the DTW ground distance is dominated by cross-track error.
pub const REFERENCE_SPACING: f64 = 0.05;

/// Shortest-path reference on the ground-truth roadmap (lambda = 0), with
/// the start/goal connectors included. The lattice path is string-pulled
/// at the body clearance so the reference is taut rather than zig-zagging
/// along 8-connected moves.
pub fn compute_reference(
    world: &WorldModel,
    start: Vector2<f64>,
    goal: Vector2<f64>,
    cfg: &PlannerConfig,
) -> Result<Option<ReferencePath>> {
    let oracle = GuideCost {
        lambda: 0.0,
        d_pref: 0.0,
    };
    let Some(s) = world.roadmap.nearest_node(start, cfg.snap_radius, None) else {
        return Ok(None);
    };
    let Some(g) = world.roadmap.nearest_node(goal, cfg.snap_radius, None) else {
        return Ok(None);
    };
    let Some(path) = crate::guide::astar(&world.roadmap, s, g, &oracle) else {
        return Ok(None);
    };
    let mut polyline: Vec<[f64; 2]> = Vec::with_capacity(path.waypoints.len() + 2);
    polyline.push([start.x, start.y]);
    polyline.extend_from_slice(&path.waypoints);
    polyline.push([goal.x, goal.y]);
    let taut = string_pull(&polyline, &world.dist, cfg.footprint.r_eff);
    let length: f64 = taut
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .sum();
    Ok(Some(ReferencePath {
        length,
        points: densify(&taut, REFERENCE_SPACING),
    }))
}

/// Greedy shortcutting: from each kept vertex, jump to the farthest later
/// vertex whose straight segment keeps at least `clearance`.
fn string_pull(polyline: &[[f64; 2]], dist: &DistanceField, clearance: f64) -> Vec<[f64; 2]> {
    if polyline.len() <= 2 {
        return polyline.to_vec();
    }
    let pt = |p: &[f64; 2]| Vector2::new(p[0], p[1]);
    let mut out = vec![polyline[0]];
    let mut i = 0usize;
    while i + 1 < polyline.len() {
        let mut j = polyline.len() - 1;
        while j > i + 1 {
            let clear = crate::guide::edge_min_clearance(pt(&polyline[i]), pt(&polyline[j]), dist)
                .map(|c| c >= clearance)
                .unwrap_or(false);
            if clear {
                break;
            }
            j -= 1;
        }
        out.push(polyline[j]);
        i = j;
    }
    out
}

/// Resamples a polyline at a uniform spacing, keeping both endpoints.
pub fn densify(polyline: &[[f64; 2]], spacing: f64) -> Vec<[f64; 2]> {
    if polyline.len() < 2 {
        return polyline.to_vec();
    }
    let mut out = vec![polyline[0]];
    for w in polyline.windows(2) {
        let a = Vector2::new(w[0][0], w[0][1]);
        let b = Vector2::new(w[1][0], w[1][1]);
        let len = (b - a).norm();
        let n = (len / spacing).ceil().max(1.0) as usize;
        for i in 1..=n {
            let p = a + (b - a) * (i as f64 / n as f64);
            out.push([p.x, p.y]);
        }
    }
    out
}

/// Classic dynamic time warping with Euclidean ground distance.
pub fn dtw(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::INFINITY;
    }
    let ground = |p: &[f64; 2], q: &[f64; 2]| {
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    };
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for (i, pa) in a.iter().enumerate() {
        for j in 0..m {
            let d = ground(pa, &b[j]);
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            cur[j] = d + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m - 1]
}

/// Per-episode metric row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub success: bool,
    pub spl: f64,
    pub ne: f64,
    pub cost: f64,
    pub ndtw: f64,
    pub executed_length: f64,
    pub shortest_length: f64,
    pub collision_steps: usize,
    pub steps: usize,
}

/// Aggregate navigation metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sr: f64,
    pub spl: f64,
    pub ne: f64,
    pub cost: f64,
    pub ndtw: f64,
    pub episodes: Vec<EpisodeRow>,
}

/// Aggregates SR, SPL, NE, Cost (collision-seconds), and nDTW. The nDTW
/// threshold distance is the success radius.
pub fn compute_metrics(
    episodes: &[EpisodeResult],
    references: &[ReferencePath],
    goal_radius: f64,
) -> Result<MetricsReport> {
    if episodes.len() != references.len() {
        return Err(Error::Dimension {
            expected: episodes.len(),
            got: references.len(),
        });
    }
    if episodes.is_empty() {
        return Err(Error::Domain("empty episode batch".into()));
    }
    let mut rows = Vec::with_capacity(episodes.len());
    for (ep, reference) in episodes.iter().zip(references) {
        let executed = ep.trajectory.positions();
        let executed_length = ep.trajectory.executed_length();
        let success = ep.success();
        let spl = if success {
            reference.length / executed_length.max(reference.length)
        } else {
            0.0
        };
        let d = dtw(&executed, &reference.points);
        let ndtw = (-d / (reference.points.len() as f64 * goal_radius)).exp();
        rows.push(EpisodeRow {
            success,
            spl,
            ne: ep.final_goal_distance,
            cost: ep.collision_steps() as f64 * ep.trajectory.dt,
            ndtw,
            executed_length,
            shortest_length: reference.length,
            collision_steps: ep.collision_steps(),
            steps: ep.trajectory.controls.len(),
        });
    }
    let n = rows.len() as f64;
    Ok(MetricsReport {
        sr: rows.iter().filter(|r| r.success).count() as f64 / n,
        spl: rows.iter().map(|r| r.spl).sum::<f64>() / n,
        ne: rows.iter().map(|r| r.ne).sum::<f64>() / n,
        cost: rows.iter().map(|r| r.cost).sum::<f64>() / n,
        ndtw: rows.iter().map(|r| r.ndtw).sum::<f64>() / n,
        episodes: rows,
    })
}
