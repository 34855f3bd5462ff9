//! 2D trajectory reconstruction from wheel encoders and a magnetometer.
//!
//! The pipeline detects stationary intervals (ZUPT), removes the hard-iron
//! magnetometer bias with an algebraic circle fit, converts corrected field
//! readings into unwrapped heading observations, fuses them in a
//! [yaw, yaw_rate] Kalman filter under a constant angular velocity model
//! (ZUPT enters as a yaw_rate = 0 pseudo-measurement), applies RTS
//! smoothing, and integrates speed along the smoothed heading.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::wrap_angle;

/// Timestamped encoder and magnetometer streams.
#[derive(Debug, Clone, Default)]
pub struct SensorLog {
    /// Seconds, strictly increasing.
    pub t: Vec<f64>,
    /// Meters per second.
    pub wheel_speed: Vec<f64>,
    /// Raw planar field samples (mx, my).
    pub mag: Vec<[f64; 2]>,
}

impl SensorLog {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.len() != self.wheel_speed.len() || self.t.len() != self.mag.len() {
            return Err(Error::Dimension {
                expected: self.t.len(),
                got: self.wheel_speed.len().min(self.mag.len()),
            });
        }
        if self.t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("timestamps must be strictly increasing".into()));
        }
        Ok(())
    }

    /// Per-step intervals, length len() - 1.
    pub fn dts(&self) -> Vec<f64> {
        self.t.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Filter state: mean [yaw, yaw_rate] with covariance.
#[derive(Debug, Clone, Copy)]
pub struct KfState {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// Reconstruction parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReckonConfig {
    /// Speeds below this magnitude count as stationary, m/s.
    pub zupt_speed_eps: f64,
    /// Centered window length for the stationarity test, samples.
    pub zupt_window: usize,
    /// White-noise-acceleration PSD on yaw_rate.
    pub q_yaw_rate: f64,
    /// Magnetometer heading variance, rad^2.
    pub r_mag: f64,
    /// ZUPT pseudo-measurement variance on yaw_rate.
    pub r_zupt: f64,
    /// Added to magnetic heading to obtain true heading, rad.
    pub declination: f64,
}

impl Default for ReckonConfig {
    fn default() -> Self {
        Self {
            zupt_speed_eps: 0.02,
            zupt_window: 5,
            q_yaw_rate: 0.05,
            r_mag: 0.1,
            r_zupt: 1e-4,
            declination: 0.0,
        }
    }
}

/// Prior used by both the filter and the batch formulation: zero mean with
/// these variances on yaw and yaw_rate.
pub const PRIOR_VAR_YAW: f64 = 100.0;
pub const PRIOR_VAR_RATE: f64 = 25.0;

/// Sample i is stationary iff every speed in a centered window of
/// `zupt_window` samples (clipped at the ends) is below the threshold.
pub fn detect_zupt(log: &SensorLog, cfg: &ReckonConfig) -> Vec<bool> {
    let n = log.wheel_speed.len();
    let w = cfg.zupt_window.max(1);
    let half_lo = (w - 1) / 2;
    let half_hi = w / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half_lo);
            let hi = (i + half_hi).min(n - 1);
            log.wheel_speed[lo..=hi]
                .iter()
                .all(|&v| v.abs() < cfg.zupt_speed_eps)
        })
        .collect()
}

/// Least-squares circle-fit center of the magnetometer cloud (algebraic
/// fit, computed about the cloud mean for conditioning).
pub fn hard_iron_offset(samples: &[[f64; 2]]) -> Result<[f64; 2]> {
    if samples.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|s| s[0]).sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s[1]).sum::<f64>() / n;

    // Solve x^2 + y^2 + d*x + e*y + f = 0 in least squares; the center is
    // (-d/2, -e/2).
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for s in samples {
        let x = s[0] - mean_x;
        let y = s[1] - mean_y;
        let row = Vector3::new(x, y, 1.0);
        let b = -(x * x + y * y);
        ata += row * row.transpose();
        atb += row * b;
    }
    // A singular or near-singular normal matrix means a collinear cloud.
    let det = ata.determinant();
    let scale = ata[(0, 0)].max(ata[(1, 1)]).max(ata[(2, 2)]).max(1e-300);
    if !det.is_finite() || det.abs() < 1e-9 * scale * scale * scale {
        return Err(Error::Degenerate("collinear magnetometer cloud".into()));
    }
    let sol = ata
        .lu()
        .solve(&atb)
        .ok_or_else(|| Error::Degenerate("collinear magnetometer cloud".into()))?;
    Ok([mean_x - sol.x / 2.0, mean_y - sol.y / 2.0])
}

/// Heading observations from bias-corrected field readings, unwrapped so
/// consecutive valid samples differ by less than pi. Samples whose
/// corrected field is (numerically) zero are flagged invalid.
pub fn mag_yaw(mag: &[[f64; 2]], offset: [f64; 2], declination: f64) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(mag.len());
    let mut prev: Option<f64> = None;
    for m in mag {
        let cx = m[0] - offset[0];
        let cy = m[1] - offset[1];
        if (cx * cx + cy * cy).sqrt() < 1e-12 {
            out.push(None);
            continue;
        }
        let raw = cy.atan2(cx) + declination;
        let unwrapped = match prev {
            None => raw,
            Some(p) => p + wrap_angle(raw - p),
        };
        prev = Some(unwrapped);
        out.push(Some(unwrapped));
    }
    out
}

fn transition(dt: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, dt, 0.0, 1.0)
}

fn process_noise(dt: f64, q: f64) -> Matrix2<f64> {
    // Discretized white-noise acceleration on yaw_rate.
    let dt2 = dt * dt;
    let dt3 = dt2 * dt;
    Matrix2::new(q * dt3 / 3.0, q * dt2 / 2.0, q * dt2 / 2.0, q * dt)
}

fn symmetrize(m: &mut Matrix2<f64>) {
    let s = (*m + m.transpose()) * 0.5;
    *m = s;
}

/// Joseph-form scalar measurement update; h selects the observed component.
fn scalar_update(state: &mut KfState, h: Vector2<f64>, z: f64, r: f64) -> Result<()> {
    let s = (h.transpose() * state.cov * h)[(0, 0)] + r;
    if !(s > 0.0) {
        return Err(Error::Degenerate("non-positive innovation variance".into()));
    }
    let k = state.cov * h / s;
    let innovation = z - h.dot(&state.mean);
    state.mean += k * innovation;
    let ikh = Matrix2::identity() - k * h.transpose();
    state.cov = ikh * state.cov * ikh.transpose() + k * r * k.transpose();
    symmetrize(&mut state.cov);
    Ok(())
}

/// Forward Kalman pass plus Rauch-Tung-Striebel backward smoothing.
///
/// Valid heading observations update yaw; stationary samples additionally
/// apply a yaw_rate = 0 pseudo-measurement. The smoothed state at the last
/// step equals the filtered state.
pub fn kf_rts(
    yaw_obs: &[Option<f64>],
    zupt: &[bool],
    dts: &[f64],
    cfg: &ReckonConfig,
) -> Result<Vec<KfState>> {
    let n = yaw_obs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if zupt.len() != n {
        return Err(Error::Dimension { expected: n, got: zupt.len() });
    }
    if dts.len() + 1 != n {
        return Err(Error::Dimension { expected: n - 1, got: dts.len() });
    }
    if dts.iter().any(|&dt| dt <= 0.0) {
        return Err(Error::Domain("dt must be positive".into()));
    }

    let prior = KfState {
        mean: Vector2::zeros(),
        cov: Matrix2::new(PRIOR_VAR_YAW, 0.0, 0.0, PRIOR_VAR_RATE),
    };
    let mut filtered: Vec<KfState> = Vec::with_capacity(n);
    let mut predicted: Vec<KfState> = Vec::with_capacity(n);
    let mut state = prior;
    for k in 0..n {
        if k > 0 {
            let f = transition(dts[k - 1]);
            state.mean = f * state.mean;
            state.cov = f * state.cov * f.transpose() + process_noise(dts[k - 1], cfg.q_yaw_rate);
            symmetrize(&mut state.cov);
        }
        predicted.push(state);
        if let Some(z) = yaw_obs[k] {
            scalar_update(&mut state, Vector2::new(1.0, 0.0), z, cfg.r_mag)?;
        }
        if zupt[k] {
            scalar_update(&mut state, Vector2::new(0.0, 1.0), 0.0, cfg.r_zupt)?;
        }
        filtered.push(state);
    }

    let mut smoothed = filtered.clone();
    for k in (0..n - 1).rev() {
        let f = transition(dts[k]);
        let p_pred = predicted[k + 1].cov;
        let inv = p_pred
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular predicted covariance".into()))?;
        let gain = filtered[k].cov * f.transpose() * inv;
        smoothed[k].mean =
            filtered[k].mean + gain * (smoothed[k + 1].mean - predicted[k + 1].mean);
        smoothed[k].cov = filtered[k].cov
            + gain * (smoothed[k + 1].cov - p_pred) * gain.transpose();
        symmetrize(&mut smoothed[k].cov);
    }
    Ok(smoothed)
}

/// Integrates ZUPT-regularized speed along the smoothed heading.
/// Returns (x, y, yaw) triples; yaw is wrapped for export.
pub fn integrate_trajectory(
    wheel_speed: &[f64],
    yaw: &[f64],
    zupt: &[bool],
    dts: &[f64],
) -> Result<Vec<[f64; 3]>> {
    let n = wheel_speed.len();
    if yaw.len() != n || zupt.len() != n {
        return Err(Error::Dimension { expected: n, got: yaw.len().min(zupt.len()) });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if dts.len() + 1 != n {
        return Err(Error::Dimension { expected: n - 1, got: dts.len() });
    }
    let mut out = Vec::with_capacity(n);
    let (mut x, mut y) = (0.0f64, 0.0f64);
    out.push([x, y, wrap_angle(yaw[0])]);
    for i in 0..n - 1 {
        let v = if zupt[i] { 0.0 } else { wheel_speed[i] };
        x += v * yaw[i].cos() * dts[i];
        y += v * yaw[i].sin() * dts[i];
        out.push([x, y, wrap_angle(yaw[i + 1])]);
    }
    Ok(out)
}

/// Full pipeline: ZUPT, hard-iron calibration, heading observations,
/// KF + RTS, integration.
pub fn reconstruct(log: &SensorLog, cfg: &ReckonConfig) -> Result<Vec<[f64; 3]>> {
    log.validate()?;
    if log.is_empty() {
        return Ok(Vec::new());
    }
    let zupt = detect_zupt(log, cfg);
    let offset = hard_iron_offset(&log.mag)?;
    let yaw_obs = mag_yaw(&log.mag, offset, cfg.declination);
    let dts = log.dts();
    let smoothed = kf_rts(&yaw_obs, &zupt, &dts, cfg)?;
    let yaw: Vec<f64> = smoothed.iter().map(|s| s.mean.x).collect();
    integrate_trajectory(&log.wheel_speed, &yaw, &zupt, &dts)
}
