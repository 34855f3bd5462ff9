//! The A*+VO fusion loop and the egocentric dataset emitter.
//!
//! Each control step integrates the latest observation into the known map,
//! replans the global guide path every K steps (or when none exists),
//! picks the farthest visible waypoint as the local goal, and lets the VO
//! controller choose a safe command. Episodes record world-frame
//! trajectories; windows of future poses, re-expressed in each anchor's
//! egocentric frame, pair with occupancy crops to form dataset samples.

use std::io::{BufRead, Write};

use nalgebra::{Rotation2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Pose};
use crate::grid::{
    crop_egocentric, distance_field, fuse_traversability, DistanceField, TraversabilityMap,
    VoxelGrid,
};
use crate::guide::{
    build_roadmap, integrate_observation, plan_guide, select_local_goal, GuideCost, KnownMap,
    Path, Roadmap,
};
use crate::sim::step_obstacles;
use crate::vo::{select_control, ClearanceReport, Control, Footprint, ObstacleState, VoParams};

/// Everything the fusion loop needs, tunable from one place.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Control period, seconds.
    pub dt: f64,
    /// Success radius around the goal, meters.
    pub goal_radius: f64,
    pub max_steps: usize,
    /// Replan cadence K, control steps.
    pub replan_interval: usize,
    /// Start/goal snap radius onto the roadmap, meters.
    pub snap_radius: f64,
    /// Lattice pitch of the roadmap, meters.
    pub roadmap_spacing: f64,
    /// Free-space cap of the distance field, meters.
    pub edt_cap: f64,
    /// Dataset waypoint horizon M.
    pub horizon: usize,
    /// Dataset anchor stride, steps.
    pub stride: usize,
    pub guide: GuideCost,
    pub vo: VoParams,
    pub footprint: Footprint,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            goal_radius: 0.5,
            max_steps: 1000,
            replan_interval: 5,
            snap_radius: 1.0,
            roadmap_spacing: 0.2,
            edt_cap: 10.0,
            horizon: 8,
            stride: 1,
            guide: GuideCost::default(),
            vo: VoParams::default(),
            footprint: Footprint::default(),
        }
    }
}

/// Immutable per-scene planning context derived from the ground-truth
/// occupancy: traversability, clearance field, and the full roadmap.
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub voxels: VoxelGrid,
    pub trav: TraversabilityMap,
    pub dist: DistanceField,
    pub roadmap: Roadmap,
}

impl WorldModel {
    /// Clearance gate for roadmap nodes: body margin plus half the
    /// preferred clearance, so guide paths avoid pinches the controller
    /// would refuse to enter.
    pub fn roadmap_gate(cfg: &PlannerConfig) -> f64 {
        cfg.footprint.r_eff + 0.5 * cfg.guide.d_pref
    }

    pub fn build(voxels: VoxelGrid, cfg: &PlannerConfig) -> Result<Self> {
        let trav = fuse_traversability(&voxels);
        let dist = distance_field(&trav, cfg.edt_cap)?;
        let roadmap = build_roadmap(&trav, &dist, cfg.roadmap_spacing, Self::roadmap_gate(cfg))?;
        Ok(Self {
            voxels,
            trav,
            dist,
            roadmap,
        })
    }
}

/// Time-ordered pose sequence with the commands that produced it and the
/// rollout clearance evidence per step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub dt: f64,
    pub controls: Vec<Control>,
    pub reports: Vec<ClearanceReport>,
}

impl Trajectory {
    pub fn executed_length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1].position() - w[0].position()).norm())
            .sum()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.poses.iter().map(|p| [p.x, p.y]).collect()
    }
}

/// One JSONL record per step; the final record carries the pose only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub vx: Option<f64>,
    pub vy: Option<f64>,
    pub omega: Option<f64>,
    pub d_stat_min: Option<f64>,
    pub d_dyn_min: Option<f64>,
}

impl Trajectory {
    pub fn records(&self) -> Vec<TrajectoryRecord> {
        self.poses
            .iter()
            .enumerate()
            .map(|(t, p)| {
                let (control, report) = if t < self.controls.len() {
                    (Some(self.controls[t]), Some(self.reports[t]))
                } else {
                    (None, None)
                };
                TrajectoryRecord {
                    t,
                    x: p.x,
                    y: p.y,
                    yaw: p.yaw,
                    vx: control.map(|c| c.vx),
                    vy: control.map(|c| c.vy),
                    omega: control.map(|c| c.omega),
                    d_stat_min: report.map(|r| r.d_stat_min),
                    d_dyn_min: report.map(|r| r.d_dyn_min),
                }
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        for r in self.records() {
            serde_json::to_writer(&mut *w, &r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn read_trajectory_jsonl<R: BufRead>(r: R) -> Result<Vec<TrajectoryRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    Success,
    Timeout,
    Unreachable,
}

/// Mutable per-episode state threaded through fusion steps.
#[derive(Debug, Clone)]
pub struct FusionState {
    pub pose: Pose,
    pub goal: Vector2<f64>,
    /// Last commanded body velocity, robot frame.
    pub v_curr: Vector2<f64>,
    pub known: KnownMap,
    pub guide_path: Option<Path>,
    pub step: usize,
}

impl FusionState {
    pub fn new(start: Pose, goal: Vector2<f64>, world: &WorldModel, cfg: &PlannerConfig) -> Self {
        Self {
            pose: start,
            goal,
            v_curr: Vector2::zeros(),
            known: KnownMap::new(world.trav.meta, cfg.replan_interval),
            guide_path: None,
            step: 0,
        }
    }
}

/// Result of one fusion step.
#[derive(Debug, Clone, Copy)]
pub enum StepResult {
    Step {
        control: Control,
        report: ClearanceReport,
        /// False when the stop fallback was used.
        safe: bool,
    },
    /// The guide planner found no route on the (optimistic) known map.
    Unreachable,
}

/// One control step of the A*+VO fusion loop: observe, replan every K
/// steps, pick the local goal, select a safe control, advance the pose.
pub fn fusion_step(
    world: &WorldModel,
    obstacles: &[ObstacleState],
    state: &mut FusionState,
    cfg: &PlannerConfig,
) -> Result<StepResult> {
    integrate_observation(&mut state.known, &state.pose, &world.trav);

    if state.step % state.known.replan_interval == 0 || state.guide_path.is_none() {
        state.guide_path = plan_guide(
            &state.known,
            &world.roadmap,
            state.pose.position(),
            state.goal,
            &cfg.guide,
            cfg.snap_radius,
        )?;
    }
    let Some(path) = state.guide_path.as_ref() else {
        return Ok(StepResult::Unreachable);
    };

    let local_goal = select_local_goal(path, &state.pose, &state.known)?;
    let choice = select_control(
        &state.pose,
        state.v_curr,
        local_goal,
        obstacles,
        &world.dist,
        &cfg.footprint,
        &cfg.vo,
    );
    state.pose = choice.control.apply(&state.pose, cfg.dt);
    state.v_curr = choice.control.velocity();
    state.step += 1;
    Ok(StepResult::Step {
        control: choice.control,
        report: choice.report,
        safe: choice.safe,
    })
}

/// True iff the oriented rectangle footprint overlaps any blocked cell.
/// Exact rectangle-vs-cell test, independent of the r_eff margin.
pub fn footprint_hits_static(trav: &TraversabilityMap, pose: &Pose, fp: &Footprint) -> bool {
    let meta = trav.meta;
    let corners = fp.corners().map(|c| pose.to_world(c));
    let min_x = corners.iter().map(|c| c.x).fold(f64::INFINITY, f64::min);
    let max_x = corners.iter().map(|c| c.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = corners.iter().map(|c| c.y).fold(f64::INFINITY, f64::min);
    let max_y = corners.iter().map(|c| c.y).fold(f64::NEG_INFINITY, f64::max);
    let x0 = (((min_x - meta.origin[0]) / meta.cell_size).floor().max(0.0)) as usize;
    let y0 = (((min_y - meta.origin[1]) / meta.cell_size).floor().max(0.0)) as usize;
    let x1 = ((((max_x - meta.origin[0]) / meta.cell_size).ceil()).max(0.0) as usize).min(meta.width);
    let y1 = ((((max_y - meta.origin[1]) / meta.cell_size).ceil()).max(0.0) as usize).min(meta.height);

    for y in y0..y1 {
        for x in x0..x1 {
            if !trav.blocked(x, y) {
                continue;
            }
            if rect_square_overlap(pose, fp, meta.center_of(x, y), 0.5 * meta.cell_size) {
                return true;
            }
        }
    }
    false
}

fn rect_square_overlap(pose: &Pose, fp: &Footprint, center: Vector2<f64>, half: f64) -> bool {
    let rot = pose.rotation();
    let axes = [
        rot * Vector2::new(1.0, 0.0),
        rot * Vector2::new(0.0, 1.0),
        Vector2::new(1.0, 0.0),
        Vector2::new(0.0, 1.0),
    ];
    let rect_corners = fp.corners().map(|c| pose.to_world(c));
    let square_corners = [
        center + Vector2::new(-half, -half),
        center + Vector2::new(half, -half),
        center + Vector2::new(half, half),
        center + Vector2::new(-half, half),
    ];
    for axis in axes {
        let project = |pts: &[Vector2<f64>; 4]| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for p in pts {
                let v = p.dot(&axis);
                lo = lo.min(v);
                hi = hi.max(v);
            }
            (lo, hi)
        };
        let (alo, ahi) = project(&rect_corners);
        let (blo, bhi) = project(&square_corners);
        if ahi < blo || bhi < alo {
            return false;
        }
    }
    true
}

/// True iff the footprint rectangle overlaps the disc.
pub fn footprint_hits_disc(pose: &Pose, fp: &Footprint, center: Vector2<f64>, radius: f64) -> bool {
    let local = pose.to_local(center);
    let clamped = Vector2::new(
        local.x.clamp(-0.5 * fp.length, 0.5 * fp.length),
        local.y.clamp(-0.5 * fp.width, 0.5 * fp.width),
    );
    (local - clamped).norm() <= radius
}

/// A finished episode: trajectory, outcome, and ground-truth collision
/// accounting.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    pub outcome: EpisodeOutcome,
    /// Timesteps at which the true footprint overlapped a static cell.
    pub static_collision_steps: usize,
    /// Timesteps at which the true footprint overlapped a dynamic disc.
    pub dynamic_collision_steps: usize,
    pub goal: Vector2<f64>,
    pub final_goal_distance: f64,
    /// True iff every non-fallback selected control had a strictly
    /// positive-clearance rollout (the hard-safety invariant).
    pub hard_safety_held: bool,
}

impl EpisodeResult {
    pub fn collision_steps(&self) -> usize {
        self.static_collision_steps + self.dynamic_collision_steps
    }

    pub fn success(&self) -> bool {
        self.outcome == EpisodeOutcome::Success
    }
}

/// Runs the fusion loop until the goal radius is reached, the step budget
/// runs out, or the guide planner gives up. Collisions are counted against
/// the ground-truth map and obstacle discs, not the known map.
pub fn run_episode(
    world: &WorldModel,
    dynamic: &[ObstacleState],
    start: Pose,
    goal: Vector2<f64>,
    cfg: &PlannerConfig,
) -> Result<EpisodeResult> {
    let start_clear = world
        .dist
        .at_point(start.position())
        .ok_or(Error::OutOfBounds { x: start.x, y: start.y })?;
    if start_clear <= cfg.footprint.r_eff {
        return Err(Error::Domain(format!(
            "start pose has clearance {start_clear:.3} <= r_eff {:.3}",
            cfg.footprint.r_eff
        )));
    }

    let bounds = world.trav.meta.bounds();
    let mut obstacles = dynamic.to_vec();
    let mut state = FusionState::new(start, goal, world, cfg);
    let mut trajectory = Trajectory {
        poses: vec![start],
        dt: cfg.dt,
        controls: Vec::new(),
        reports: Vec::new(),
    };
    let mut static_hits = 0usize;
    let mut dynamic_hits = 0usize;
    let mut hard_safety_held = true;
    let mut outcome = EpisodeOutcome::Timeout;

    for _ in 0..cfg.max_steps {
        if (state.pose.position() - goal).norm() <= cfg.goal_radius {
            outcome = EpisodeOutcome::Success;
            break;
        }
        match fusion_step(world, &obstacles, &mut state, cfg)? {
            StepResult::Unreachable => {
                outcome = EpisodeOutcome::Unreachable;
                break;
            }
            StepResult::Step { control, report, safe } => {
                if safe && (report.d_stat_min <= 0.0 || report.d_dyn_min <= 0.0) {
                    hard_safety_held = false;
                }
                step_obstacles(&mut obstacles, cfg.dt, bounds);
                trajectory.poses.push(state.pose);
                trajectory.controls.push(control);
                trajectory.reports.push(report);
                if footprint_hits_static(&world.trav, &state.pose, &cfg.footprint) {
                    static_hits += 1;
                } else if obstacles
                    .iter()
                    .any(|o| footprint_hits_disc(&state.pose, &cfg.footprint, o.center, o.radius))
                {
                    dynamic_hits += 1;
                }
            }
        }
    }
    if outcome == EpisodeOutcome::Timeout
        && (state.pose.position() - goal).norm() <= cfg.goal_radius
    {
        outcome = EpisodeOutcome::Success;
    }

    let final_goal_distance = (state.pose.position() - goal).norm();
    Ok(EpisodeResult {
        trajectory,
        outcome,
        static_collision_steps: static_hits,
        dynamic_collision_steps: dynamic_hits,
        goal,
        final_goal_distance,
        hard_safety_held,
    })
}

/// Egocentric waypoint window anchored at one trajectory step, paired with
/// the occupancy crop at the anchor pose.
#[derive(Debug, Clone)]
pub struct DatasetSample {
    pub anchor: usize,
    /// M (x, y, theta) triples in the anchor's egocentric frame.
    pub waypoints: Vec<[f64; 3]>,
    pub crop: VoxelGrid,
}

/// Emits one sample per anchor at the given stride while a full M-step
/// window of future poses exists; shorter tails are skipped, not padded.
pub fn emit_samples(
    traj: &Trajectory,
    world: &VoxelGrid,
    horizon: usize,
    stride: usize,
) -> Result<Vec<DatasetSample>> {
    if horizon < 1 {
        return Err(Error::Domain("horizon must be at least 1".into()));
    }
    if stride < 1 {
        return Err(Error::Domain("stride must be at least 1".into()));
    }
    let last = traj.poses.len().saturating_sub(1);
    let mut out = Vec::new();
    let mut anchor = 0usize;
    while anchor + horizon <= last {
        let base = traj.poses[anchor];
        let inv_rot = Rotation2::new(-base.yaw);
        let waypoints = (1..=horizon)
            .map(|m| {
                let p = traj.poses[anchor + m];
                let rel = inv_rot * (p.position() - base.position());
                [rel.x, rel.y, wrap_angle(p.yaw - base.yaw)]
            })
            .collect();
        out.push(DatasetSample {
            anchor,
            waypoints,
            crop: crop_egocentric(world, &base),
        });
        anchor += stride;
    }
    Ok(out)
}

/// Squared L2 trajectory error over all waypoint coordinates.
pub fn traj_error(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            (p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)
        })
        .sum())
}
