//! Truncated velocity-obstacle local controller.
//!
//! Candidate holonomic controls are screened by two hard constraints — a
//! per-corner truncated VO test against every dynamic obstacle and a
//! short-horizon rollout against the static clearance field — then ranked
//! by a soft cost mixing tracking, smoothness, speed, goal alignment, and
//! clearance terms. No safe candidate means stop.

use nalgebra::{Rotation2, Vector2};
use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Pose};
use crate::grid::DistanceField;

/// Oriented-rectangle robot body.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Footprint {
    /// Body length along robot +x, meters.
    pub length: f64,
    /// Body width along robot +y, meters.
    pub width: f64,
    /// Scalar margin subtracted from clearance queries; defaults to half
    /// the rectangle diagonal so the margin disc covers the body.
    pub r_eff: f64,
}

impl Footprint {
    pub fn new(length: f64, width: f64) -> Self {
        Self {
            length,
            width,
            r_eff: 0.5 * (length * length + width * width).sqrt(),
        }
    }

    /// The four rectangle corners in the robot frame.
    pub fn corners(&self) -> [Vector2<f64>; 4] {
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [
            Vector2::new(hl, hw),
            Vector2::new(hl, -hw),
            Vector2::new(-hl, -hw),
            Vector2::new(-hl, hw),
        ]
    }
}

impl Default for Footprint {
    fn default() -> Self {
        Self::new(0.4, 0.3)
    }
}

/// Holonomic command: translational velocity in the robot frame plus a yaw
/// rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Control {
    pub const STOP: Control = Control {
        vx: 0.0,
        vy: 0.0,
        omega: 0.0,
    };

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.vx, self.vy)
    }

    /// Advances a pose by this command over `dt`: position moves by the
    /// rotated body velocity at the current yaw, then yaw advances.
    pub fn apply(&self, pose: &Pose, dt: f64) -> Pose {
        let world_v = pose.rotation() * self.velocity();
        Pose::new(
            pose.x + world_v.x * dt,
            pose.y + world_v.y * dt,
            pose.yaw + self.omega * dt,
        )
    }
}

/// Dynamic obstacle disc under a constant-velocity prediction model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ObstacleState {
    pub center: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub radius: f64,
}

impl ObstacleState {
    pub fn predicted_center(&self, t: f64) -> Vector2<f64> {
        self.center + self.velocity * t
    }
}

/// Controller parameters. All weights are non-negative.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VoParams {
    /// VO truncation horizon, seconds.
    pub t_vo: f64,
    /// Rollout horizon, seconds.
    pub t_look: f64,
    /// Rollout integration step, seconds.
    pub dt: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Candidate grids; each axis includes 0 so stopping is always on offer.
    pub vx_candidates: Vec<f64>,
    pub vy_candidates: Vec<f64>,
    pub omega_candidates: Vec<f64>,
    pub w_v: f64,
    pub w_curr: f64,
    pub w_speed: f64,
    pub w_omega: f64,
    pub w_a: f64,
    pub w_c: f64,
    pub eps_c: f64,
    pub d_pref: f64,
    /// Heading error beyond which the controller turns in place, radians.
    pub turn_threshold: f64,
    /// Goal-approach speed gain.
    pub k_p: f64,
    /// Heading-correction gain.
    pub k_omega: f64,
}

impl Default for VoParams {
    fn default() -> Self {
        let omega_candidates = (0..9).map(|i| -1.5 + 0.375 * i as f64).collect();
        Self {
            t_vo: 3.0,
            t_look: 1.5,
            dt: 0.1,
            v_max: 1.0,
            omega_max: 1.5,
            vx_candidates: vec![-0.2, 0.0, 0.25, 0.5, 0.75, 1.0],
            vy_candidates: vec![-0.4, -0.2, 0.0, 0.2, 0.4],
            omega_candidates,
            w_v: 1.0,
            w_curr: 0.5,
            w_speed: 0.2,
            w_omega: 0.3,
            w_a: 0.5,
            w_c: 0.05,
            eps_c: 0.01,
            d_pref: 0.3,
            turn_threshold: std::f64::consts::FRAC_PI_2,
            k_p: 1.0,
            k_omega: 2.0,
        }
    }
}

/// Minimum clearances observed along a rollout, margins already subtracted.
/// Values are negative on penetration; dynamic clearance is infinite when
/// there are no obstacles.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClearanceReport {
    pub d_stat_min: f64,
    pub d_dyn_min: f64,
}

/// World-frame velocity of each footprint corner under a command:
/// v_c = R(yaw) * (vx, vy) + omega x (R(yaw) * r_c), with the planar cross
/// product omega x r = (-omega * r_y, omega * r_x).
pub fn corner_velocities(fp: &Footprint, yaw: f64, u: &Control) -> [Vector2<f64>; 4] {
    let rot = Rotation2::new(yaw);
    let body = rot * u.velocity();
    fp.corners().map(|c| {
        let r = rot * c;
        body + Vector2::new(-u.omega * r.y, u.omega * r.x)
    })
}

/// Truncated VO test for one corner against one obstacle.
///
/// Rejects iff the corner is already inside the inflated disc, or all of:
/// closing (relative velocity points toward the obstacle), the relative
/// velocity direction lies inside the collision cone of half-angle
/// asin(r/d), and the relative speed reaches the inflated disc within
/// `t_vo`.
pub fn vo_rejects(
    p_corner: Vector2<f64>,
    v_corner: Vector2<f64>,
    obs: &ObstacleState,
    r_inflated: f64,
    t_vo: f64,
) -> bool {
    let p_rel = p_corner - obs.center;
    let v_rel = v_corner - obs.velocity;
    let d = p_rel.norm();
    if d <= r_inflated {
        return true;
    }
    // Geometric closing test: approach means the dot product is negative.
    if p_rel.dot(&v_rel) >= 0.0 {
        return false;
    }
    let speed = v_rel.norm();
    let cos_to_center = (-p_rel).dot(&v_rel) / (d * speed);
    let sin_half = (r_inflated / d).min(1.0);
    let cos_half = (1.0 - sin_half * sin_half).max(0.0).sqrt();
    if cos_to_center < cos_half {
        return false;
    }
    speed * t_vo >= d - r_inflated
}

/// Integrates the command over `t_look`, advancing obstacles at constant
/// velocity, and reports the worst static and dynamic clearances. Leaving
/// the map counts as static penetration of one cell.
pub fn rollout(
    pose: &Pose,
    u: &Control,
    fp: &Footprint,
    params: &VoParams,
    dist: &DistanceField,
    obstacles: &[ObstacleState],
) -> (ClearanceReport, bool) {
    let cell = dist.meta.cell_size;
    let mut cur = *pose;
    let mut t = 0.0;
    let mut report = ClearanceReport {
        d_stat_min: f64::INFINITY,
        d_dyn_min: f64::INFINITY,
    };

    let sample = |pose: &Pose, t: f64, report: &mut ClearanceReport| {
        let d_stat = match dist.at_point(pose.position()) {
            Some(v) => v - fp.r_eff,
            None => -cell,
        };
        report.d_stat_min = report.d_stat_min.min(d_stat);
        for obs in obstacles {
            let d = (pose.position() - obs.predicted_center(t)).norm() - obs.radius - fp.r_eff;
            report.d_dyn_min = report.d_dyn_min.min(d);
        }
    };

    sample(&cur, t, &mut report);
    let mut remaining = params.t_look;
    while remaining > 1e-12 {
        let step = params.dt.min(remaining);
        cur = u.apply(&cur, step);
        t += step;
        remaining -= step;
        sample(&cur, t, &mut report);
    }

    let collides = report.d_stat_min <= 0.0 || report.d_dyn_min <= 0.0;
    (report, collides)
}

/// Soft clearance penalties. Static clearance is penalized below d_pref;
/// dynamic clearance below 1.5 * d_pref at twice the weight. Denominators
/// are clamped at eps_c so pre-filtered negative clearances stay finite.
pub fn clearance_costs(report: &ClearanceReport, params: &VoParams) -> (f64, f64) {
    let j_stat = if report.d_stat_min < params.d_pref {
        params.w_c / (report.d_stat_min + params.eps_c).max(params.eps_c)
    } else {
        0.0
    };
    let j_dyn = if report.d_dyn_min < 1.5 * params.d_pref {
        2.0 * params.w_c / (report.d_dyn_min + params.eps_c).max(params.eps_c)
    } else {
        0.0
    };
    (j_stat, j_dyn)
}

/// Desired command toward the local goal: heading-aligned forward drive by
/// default, in-place turning when the heading error exceeds the threshold.
pub fn desired_command(pose: &Pose, local_goal: Vector2<f64>, params: &VoParams) -> (Vector2<f64>, f64) {
    let to_goal = local_goal - pose.position();
    let dist = to_goal.norm();
    if dist < 1e-12 {
        return (Vector2::zeros(), 0.0);
    }
    let phi = wrap_angle(to_goal.y.atan2(to_goal.x) - pose.yaw);
    let omega_des = (params.k_omega * phi).clamp(-params.omega_max, params.omega_max);
    if phi.abs() > params.turn_threshold {
        (Vector2::zeros(), omega_des)
    } else {
        (
            Vector2::new(params.v_max.min(params.k_p * dist), 0.0),
            omega_des,
        )
    }
}

/// Weighted candidate objective. `goal_dir` is the world-frame unit vector
/// toward the local goal, or zero to skip the alignment term.
#[allow(clippy::too_many_arguments)]
pub fn control_cost(
    u: &Control,
    v_curr: Vector2<f64>,
    desired: (Vector2<f64>, f64),
    goal_dir: Vector2<f64>,
    clearance: (f64, f64),
    yaw: f64,
    params: &VoParams,
) -> f64 {
    let v = u.velocity();
    let (v_des, omega_des) = desired;
    let mut cost = params.w_v * (v - v_des).norm() + params.w_curr * (v - v_curr).norm()
        - params.w_speed * v.norm()
        + params.w_omega * (u.omega - omega_des).abs()
        + clearance.0
        + clearance.1;
    let speed = v.norm();
    if speed > 0.0 && goal_dir.norm() > 0.0 {
        let v_hat = (Rotation2::new(yaw) * v) / speed;
        cost += params.w_a * speed * (1.0 - v_hat.dot(&goal_dir));
    }
    cost
}

/// Selected control plus the rollout evidence that justified it.
#[derive(Debug, Clone, Copy)]
pub struct ControlChoice {
    pub control: Control,
    pub report: ClearanceReport,
    /// False when no candidate was safe and the stop fallback was returned.
    pub safe: bool,
}

/// Scans the candidate grid, keeps candidates passing both hard
/// constraints (per-corner truncated VO with r_inflated = radius + r_eff/2,
/// and a collision-free rollout), and returns the soft-cost minimizer.
/// Ties resolve lexicographically on (vx, vy, omega). With no safe
/// candidate the robot stops.
pub fn select_control(
    pose: &Pose,
    v_curr: Vector2<f64>,
    local_goal: Vector2<f64>,
    obstacles: &[ObstacleState],
    dist: &DistanceField,
    fp: &Footprint,
    params: &VoParams,
) -> ControlChoice {
    let desired = desired_command(pose, local_goal, params);
    let to_goal = local_goal - pose.position();
    let goal_dir = if to_goal.norm() > 1e-12 {
        to_goal / to_goal.norm()
    } else {
        Vector2::zeros()
    };
    let corners: Vec<Vector2<f64>> = fp.corners().iter().map(|&c| pose.to_world(c)).collect();

    let mut best: Option<(f64, Control, ClearanceReport)> = None;
    for &vx in &params.vx_candidates {
        for &vy in &params.vy_candidates {
            for &omega in &params.omega_candidates {
                let u = Control { vx, vy, omega };
                let corner_vels = corner_velocities(fp, pose.yaw, &u);
                let vo_safe = obstacles.iter().all(|obs| {
                    let r_inflated = obs.radius + 0.5 * fp.r_eff;
                    corners
                        .iter()
                        .zip(corner_vels.iter())
                        .all(|(&p, &v)| !vo_rejects(p, v, obs, r_inflated, params.t_vo))
                });
                if !vo_safe {
                    continue;
                }
                let (report, collides) = rollout(pose, &u, fp, params, dist, obstacles);
                if collides {
                    continue;
                }
                let cost = control_cost(
                    &u,
                    v_curr,
                    desired,
                    goal_dir,
                    clearance_costs(&report, params),
                    pose.yaw,
                    params,
                );
                let better = match &best {
                    None => true,
                    Some((bc, bu, _)) => {
                        cost < *bc
                            || (cost == *bc
                                && (u.vx, u.vy, u.omega) < (bu.vx, bu.vy, bu.omega))
                    }
                };
                if better {
                    best = Some((cost, u, report));
                }
            }
        }
    }

    match best {
        Some((_, control, report)) => ControlChoice {
            control,
            report,
            safe: true,
        },
        None => ControlChoice {
            control: Control::STOP,
            report: ClearanceReport {
                d_stat_min: 0.0,
                d_dyn_min: 0.0,
            },
            safe: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{distance_field, GridMeta, TraversabilityMap};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn corner_velocities_pure_translation() {
        let fp = Footprint::new(0.6, 0.4);
        let u = Control { vx: 1.0, vy: 0.0, omega: 0.0 };
        let vels = corner_velocities(&fp, FRAC_PI_2, &u);
        for v in vels {
            assert_relative_eq!(v.x, 0.0, epsilon = 1e-12);
            assert_relative_eq!(v.y, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn corner_velocities_pure_rotation() {
        let fp = Footprint {
            length: 2.0,
            width: 0.0,
            r_eff: 1.0,
        };
        // Corner at (1, 0) under omega = 1 moves at (0, 1).
        let u = Control { vx: 0.0, vy: 0.0, omega: 1.0 };
        let vels = corner_velocities(&fp, 0.0, &u);
        assert_relative_eq!(vels[0].x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(vels[0].y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn corner_velocities_linear_in_control() {
        let fp = Footprint::new(0.5, 0.3);
        let yaw = 0.4;
        let a = Control { vx: 0.3, vy: -0.1, omega: 0.7 };
        let b = Control { vx: -0.2, vy: 0.5, omega: -0.3 };
        let sum = Control {
            vx: a.vx + b.vx,
            vy: a.vy + b.vy,
            omega: a.omega + b.omega,
        };
        let va = corner_velocities(&fp, yaw, &a);
        let vb = corner_velocities(&fp, yaw, &b);
        let vs = corner_velocities(&fp, yaw, &sum);
        for c in 0..4 {
            assert_relative_eq!(vs[c].x, va[c].x + vb[c].x, epsilon = 1e-12);
            assert_relative_eq!(vs[c].y, va[c].y + vb[c].y, epsilon = 1e-12);
        }
    }

    fn obstacle_at(x: f64, y: f64, vx: f64, vy: f64, r: f64) -> ObstacleState {
        ObstacleState {
            center: Vector2::new(x, y),
            velocity: Vector2::new(vx, vy),
            radius: r,
        }
    }

    #[test]
    fn vo_dead_center_approach_rejected() {
        let obs = obstacle_at(2.0, 0.0, 0.0, 0.0, 0.5);
        // Corner at origin heading straight at the obstacle at 1 m/s.
        assert!(vo_rejects(
            Vector2::zeros(),
            Vector2::new(1.0, 0.0),
            &obs,
            0.5,
            2.0
        ));
    }

    #[test]
    fn vo_receding_accepted() {
        let obs = obstacle_at(2.0, 0.0, 0.0, 0.0, 0.5);
        assert!(!vo_rejects(
            Vector2::zeros(),
            Vector2::new(-1.0, 0.0),
            &obs,
            0.5,
            10.0
        ));
    }

    #[test]
    fn vo_truncation_accepts_slow_approach() {
        let obs = obstacle_at(2.0, 0.0, 0.0, 0.0, 0.5);
        // Closing at 0.5 m/s: reaches the inflated disc in 3 s > T_VO = 2 s.
        assert!(!vo_rejects(
            Vector2::zeros(),
            Vector2::new(0.5, 0.0),
            &obs,
            0.5,
            2.0
        ));
    }

    #[test]
    fn vo_already_overlapping_rejected() {
        let obs = obstacle_at(0.1, 0.0, 0.0, 0.0, 0.5);
        assert!(vo_rejects(
            Vector2::zeros(),
            Vector2::new(0.0, 0.0),
            &obs,
            0.5,
            1.0
        ));
    }

    #[test]
    fn vo_outside_cone_accepted() {
        let obs = obstacle_at(2.0, 0.0, 0.0, 0.0, 0.2);
        // Closing but aimed far above the disc: asin(0.2/2) ~ 5.7 degrees.
        assert!(!vo_rejects(
            Vector2::zeros(),
            Vector2::new(0.7, 0.7),
            &obs,
            0.2,
            10.0
        ));
    }

    proptest! {
        // Galilean invariance: shifting both velocities leaves the verdict.
        #[test]
        fn vo_galilean_invariance(
            px in -3.0..3.0f64, py in -3.0..3.0f64,
            vx in -2.0..2.0f64, vy in -2.0..2.0f64,
            ox in -2.0..2.0f64, oy in -2.0..2.0f64,
            sx in -5.0..5.0f64, sy in -5.0..5.0f64,
        ) {
            let p = Vector2::new(3.0 + px, py);
            let obs = obstacle_at(0.0, 0.0, ox, oy, 0.4);
            let shifted = obstacle_at(0.0, 0.0, ox + sx, oy + sy, 0.4);
            let v = Vector2::new(vx, vy);
            let a = vo_rejects(p, v, &obs, 0.5, 2.5);
            let b = vo_rejects(p, v + Vector2::new(sx, sy), &shifted, 0.5, 2.5);
            prop_assert_eq!(a, b);
        }
    }

    fn open_field(side: usize) -> DistanceField {
        let meta = GridMeta::new(side, side, 1);
        distance_field(&TraversabilityMap::new(meta), 10.0).unwrap()
    }

    #[test]
    fn rollout_zero_control_free_space() {
        let dist = open_field(200);
        let fp = Footprint::new(0.5, 0.36);
        let pose = Pose::new(5.0, 5.0, 0.0);
        let (report, collides) = rollout(
            &pose,
            &Control::STOP,
            &fp,
            &VoParams::default(),
            &dist,
            &[],
        );
        assert!(!collides);
        assert_relative_eq!(
            report.d_stat_min,
            dist.at_point(pose.position()).unwrap() - fp.r_eff
        );
        assert_eq!(report.d_dyn_min, f64::INFINITY);
    }

    #[test]
    fn rollout_into_wall_collides() {
        let meta = GridMeta::new(200, 200, 1);
        let mut t = TraversabilityMap::new(meta);
        for y in 0..200 {
            for x in 110..114 {
                t.set_blocked(x, y, true);
            }
        }
        let dist = distance_field(&t, 10.0).unwrap();
        let fp = Footprint::new(0.5, 0.36);
        // Wall face at 5.5 m, robot at 5.0 m driving forward at 1 m/s.
        let pose = Pose::new(5.0, 5.0, 0.0);
        let u = Control { vx: 1.0, vy: 0.0, omega: 0.0 };
        let params = VoParams {
            t_look: 1.0,
            ..VoParams::default()
        };
        let (_, collides) = rollout(&pose, &u, &fp, &params, &dist, &[]);
        assert!(collides);
    }

    #[test]
    fn rollout_grazing_disc_matches_fine_oracle() {
        let dist = open_field(400);
        let fp = Footprint::new(0.5, 0.36);
        let pose = Pose::new(4.0, 10.0, 0.0);
        let u = Control { vx: 1.0, vy: 0.0, omega: 0.0 };
        let obs = obstacle_at(10.0, 9.0, -0.5, 0.3, 0.4);
        let params = VoParams::default();
        let (report, _) = rollout(&pose, &u, &fp, &params, &dist, &[obs]);

        // Fine-step oracle at dt = 1 ms.
        let fine = VoParams {
            dt: 0.001,
            ..params.clone()
        };
        let (oracle, _) = rollout(&pose, &u, &fp, &fine, &dist, &[obs]);
        let tol = 2.0 * params.v_max * params.dt;
        assert!(
            (report.d_dyn_min - oracle.d_dyn_min).abs() <= tol,
            "{} vs {}",
            report.d_dyn_min,
            oracle.d_dyn_min
        );
    }

    #[test]
    fn rollout_leaving_map_collides() {
        let dist = open_field(100); // 5 m square
        let fp = Footprint::new(0.5, 0.36);
        let pose = Pose::new(4.9, 2.5, 0.0);
        let u = Control { vx: 1.0, vy: 0.0, omega: 0.0 };
        let (report, collides) = rollout(&pose, &u, &fp, &VoParams::default(), &dist, &[]);
        assert!(collides);
        assert_eq!(report.d_stat_min, -0.05);
    }

    #[test]
    fn clearance_cost_values() {
        let params = VoParams {
            w_c: 1.0,
            eps_c: 0.01,
            d_pref: 0.3,
            ..VoParams::default()
        };
        // Boundary: no penalty at exactly d_pref.
        let (j, _) = clearance_costs(
            &ClearanceReport { d_stat_min: 0.3, d_dyn_min: 10.0 },
            &params,
        );
        assert_eq!(j, 0.0);
        let (j, _) = clearance_costs(
            &ClearanceReport { d_stat_min: 0.1, d_dyn_min: 10.0 },
            &params,
        );
        assert_relative_eq!(j, 1.0 / 0.11, epsilon = 1e-12);
        let (_, j) = clearance_costs(
            &ClearanceReport { d_stat_min: 10.0, d_dyn_min: 0.4 },
            &params,
        );
        assert_relative_eq!(j, 2.0 / 0.41, epsilon = 1e-12);
    }

    #[test]
    fn clearance_cost_monotone_on_penalized_region() {
        let params = VoParams::default();
        let mut last_stat = f64::INFINITY;
        let mut last_dyn = f64::INFINITY;
        for i in 0..60 {
            let d = 0.001 + 0.005 * i as f64;
            let (js, jd) = clearance_costs(
                &ClearanceReport { d_stat_min: d, d_dyn_min: d },
                &params,
            );
            assert!(js <= last_stat);
            assert!(jd <= last_dyn);
            last_stat = js;
            last_dyn = jd;
        }
    }

    #[test]
    fn desired_command_cases() {
        let params = VoParams::default();
        let pose = Pose::new(0.0, 0.0, 0.0);
        // Straight ahead, 2 m away: full speed, no turn.
        let (v, w) = desired_command(&pose, Vector2::new(2.0, 0.0), &params);
        assert_relative_eq!(v.x, 1.0);
        assert_relative_eq!(v.y, 0.0);
        assert_relative_eq!(w, 0.0);
        // Directly behind: in-place turn at the omega clamp.
        let (v, w) = desired_command(&pose, Vector2::new(-2.0, 0.0), &params);
        assert_eq!(v.norm(), 0.0);
        assert_relative_eq!(w.abs(), params.omega_max);
        // Goal at the pose: all zeros.
        let (v, w) = desired_command(&pose, Vector2::zeros(), &params);
        assert_eq!(v.norm(), 0.0);
        assert_eq!(w, 0.0);
    }

    #[test]
    fn control_cost_cases() {
        let params = VoParams::default();
        let v_des = Vector2::new(0.8, 0.0);
        let desired = (v_des, 0.0);
        let goal_dir = Vector2::new(1.0, 0.0);
        // Perfect tracking, aligned, clear: only the speed reward remains.
        let u = Control { vx: 0.8, vy: 0.0, omega: 0.0 };
        let j = control_cost(&u, v_des, desired, goal_dir, (0.0, 0.0), 0.0, &params);
        assert_relative_eq!(j, -params.w_speed * 0.8, epsilon = 1e-12);
        // Stopping pays the tracking and smoothness prices.
        let u = Control { vx: 0.0, vy: 0.0, omega: 0.0 };
        let j = control_cost(
            &u,
            Vector2::new(0.5, 0.0),
            (v_des, 0.3),
            goal_dir,
            (0.0, 0.0),
            0.0,
            &params,
        );
        assert_relative_eq!(
            j,
            params.w_v * 0.8 + params.w_curr * 0.5 + params.w_omega * 0.3,
            epsilon = 1e-12
        );
        // Perpendicular motion contributes exactly w_a * |v|.
        let u = Control { vx: 0.0, vy: 0.5, omega: 0.0 };
        let j_perp = control_cost(&u, u.velocity(), (u.velocity(), 0.0), goal_dir, (0.0, 0.0), 0.0, &params);
        assert_relative_eq!(j_perp, -params.w_speed * 0.5 + params.w_a * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn control_cost_zero_weights_is_zero() {
        let params = VoParams {
            w_v: 0.0,
            w_curr: 0.0,
            w_speed: 0.0,
            w_omega: 0.0,
            w_a: 0.0,
            w_c: 0.0,
            ..VoParams::default()
        };
        let u = Control { vx: 0.7, vy: -0.2, omega: 1.0 };
        let j = control_cost(
            &u,
            Vector2::new(0.1, 0.1),
            (Vector2::new(0.5, 0.0), -0.4),
            Vector2::new(0.0, 1.0),
            (0.0, 0.0),
            0.9,
            &params,
        );
        assert_eq!(j, 0.0);
    }

    // Independent brute-force reference for the full selection rule.
    fn exhaustive_best(
        pose: &Pose,
        v_curr: Vector2<f64>,
        goal: Vector2<f64>,
        obstacles: &[ObstacleState],
        dist: &DistanceField,
        fp: &Footprint,
        params: &VoParams,
    ) -> Option<Control> {
        let desired = desired_command(pose, goal, params);
        let to_goal = goal - pose.position();
        let goal_dir = if to_goal.norm() > 1e-12 {
            to_goal / to_goal.norm()
        } else {
            Vector2::zeros()
        };
        let corners: Vec<Vector2<f64>> = fp.corners().iter().map(|&c| pose.to_world(c)).collect();
        let mut entries: Vec<(f64, (f64, f64, f64))> = Vec::new();
        for &vx in &params.vx_candidates {
            for &vy in &params.vy_candidates {
                for &omega in &params.omega_candidates {
                    let u = Control { vx, vy, omega };
                    let vels = corner_velocities(fp, pose.yaw, &u);
                    let mut ok = true;
                    for obs in obstacles {
                        for (p, v) in corners.iter().zip(vels.iter()) {
                            if vo_rejects(*p, *v, obs, obs.radius + 0.5 * fp.r_eff, params.t_vo) {
                                ok = false;
                            }
                        }
                    }
                    if !ok {
                        continue;
                    }
                    let (report, collides) = rollout(pose, &u, fp, params, dist, obstacles);
                    if collides {
                        continue;
                    }
                    let c = control_cost(
                        &u,
                        v_curr,
                        desired,
                        goal_dir,
                        clearance_costs(&report, params),
                        pose.yaw,
                        params,
                    );
                    entries.push((c, (vx, vy, omega)));
                }
            }
        }
        entries
            .into_iter()
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()))
            .map(|(_, (vx, vy, omega))| Control { vx, vy, omega })
    }

    #[test]
    fn select_control_matches_exhaustive_scan() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(77);
        let meta = GridMeta::new(200, 200, 1);
        let mut t = TraversabilityMap::new(meta);
        for y in 0..200 {
            for x in 0..200 {
                if rng.random_bool(0.01) {
                    t.set_blocked(x, y, true);
                }
            }
        }
        let dist = distance_field(&t, 10.0).unwrap();
        let fp = Footprint::new(0.5, 0.36);
        let params = VoParams::default();
        for _ in 0..50 {
            let pose = Pose::new(
                rng.random_range(1.0..9.0),
                rng.random_range(1.0..9.0),
                rng.random_range(-PI..PI),
            );
            let v_curr = Vector2::new(rng.random_range(-0.5..1.0), rng.random_range(-0.4..0.4));
            let goal = Vector2::new(rng.random_range(1.0..9.0), rng.random_range(1.0..9.0));
            let obstacles: Vec<ObstacleState> = (0..rng.random_range(0..4))
                .map(|_| {
                    obstacle_at(
                        rng.random_range(1.0..9.0),
                        rng.random_range(1.0..9.0),
                        rng.random_range(-0.8..0.8),
                        rng.random_range(-0.8..0.8),
                        rng.random_range(0.2..0.5),
                    )
                })
                .collect();
            let got = select_control(&pose, v_curr, goal, &obstacles, &dist, &fp, &params);
            let want = exhaustive_best(&pose, v_curr, goal, &obstacles, &dist, &fp, &params);
            match want {
                Some(u) => {
                    assert!(got.safe);
                    assert_eq!(got.control, u);
                }
                None => assert!(!got.safe),
            }
        }
    }

    #[test]
    fn select_control_boxed_in_stops() {
        let meta = GridMeta::new(100, 100, 1);
        let mut t = TraversabilityMap::new(meta);
        // Occupy everything except a single free cell around the robot.
        for y in 0..100 {
            for x in 0..100 {
                if !(48..53).contains(&x) || !(48..53).contains(&y) {
                    t.set_blocked(x, y, true);
                }
            }
        }
        let dist = distance_field(&t, 10.0).unwrap();
        let fp = Footprint::new(0.5, 0.36);
        let pose = Pose::new(2.525, 2.525, 0.0);
        let got = select_control(
            &pose,
            Vector2::zeros(),
            Vector2::new(4.0, 2.5),
            &[],
            &dist,
            &fp,
            &VoParams::default(),
        );
        assert!(!got.safe);
        assert_eq!(got.control, Control::STOP);
    }

    #[test]
    fn select_control_no_obstacles_moves_toward_goal() {
        let dist = open_field(400);
        let fp = Footprint::new(0.5, 0.36);
        let pose = Pose::new(5.0, 10.0, 0.0);
        let got = select_control(
            &pose,
            Vector2::zeros(),
            Vector2::new(10.0, 10.0),
            &[],
            &dist,
            &fp,
            &VoParams::default(),
        );
        assert!(got.safe);
        assert!(got.control.vx > 0.0);
    }

    #[test]
    fn select_control_head_on_disc_keeps_clearance() {
        let dist = open_field(400);
        let fp = Footprint::new(0.5, 0.36);
        let pose = Pose::new(5.0, 10.0, 0.0);
        // Disc closing head-on along the goal axis.
        let obs = obstacle_at(8.0, 10.0, -0.6, 0.0, 0.4);
        let params = VoParams::default();
        let got = select_control(
            &pose,
            Vector2::new(0.5, 0.0),
            Vector2::new(12.0, 10.0),
            &[obs],
            &dist,
            &fp,
            &params,
        );
        if got.safe {
            let (report, collides) = rollout(&pose, &got.control, &fp, &params, &dist, &[obs]);
            assert!(!collides);
            assert!(report.d_dyn_min > 0.0);
        }
    }
}
