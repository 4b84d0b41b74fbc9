//! Pose fusion of wheel/IMU odometry with GNSS positions.
//!
//! State is `(x, y, θ)`. Prediction uses the unicycle model driven by the
//! measured `(v, ω)`; GNSS fixes update position through `H = [I₂ 0]`.
//! The covariance is updated in Joseph form and symmetrized every step.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::drive::{integrate_unicycle, GnssFix, OdometrySample, RobotState};
use super::SimError;
use crate::ingest::normalize_angle;

/// Variance floor keeping the filter strictly positive definite when the
/// configured noise is zero.
const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub t_s: f64,
    /// `[x, y, θ]`.
    pub mean: [f64; 3],
    /// Row-major 3×3 covariance.
    pub covariance: [[f64; 3]; 3],
}

impl PoseEstimate {
    pub fn new(t_s: f64, mean: [f64; 3], covariance: [[f64; 3]; 3]) -> Self {
        Self { t_s, mean, covariance }
    }

    pub fn cov_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.covariance[i][j])
    }

    pub fn is_spd(&self) -> bool {
        let p = self.cov_matrix();
        (p - p.transpose()).norm() < 1e-10 && p.cholesky().is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EkfNoise {
    pub v_sd_mps: f64,
    pub omega_sd_rps: f64,
    pub gnss_sd_m: f64,
}

fn to_estimate(t: f64, x: &Vector3<f64>, p: &Matrix3<f64>) -> PoseEstimate {
    PoseEstimate { t_s: t, mean: [x[0], x[1], x[2]], covariance: std::array::from_fn(|i| std::array::from_fn(|j| p[(i, j)])) }
}

fn check_spd(p: &Matrix3<f64>, t: f64) -> Result<(), SimError> {
    if p.iter().all(|v| v.is_finite()) && p.cholesky().is_some() {
        Ok(())
    } else {
        Err(SimError::FilterDivergence { t_s: t })
    }
}

/// Runs the filter over time-ordered streams. The returned trace has the
/// initial estimate followed by one estimate per odometry sample, each
/// stamped with that sample's end time.
pub fn ekf_fuse(
    odometry: &[OdometrySample],
    gnss: &[GnssFix],
    initial: &PoseEstimate,
    noise: &EkfNoise,
) -> Result<Vec<PoseEstimate>, SimError> {
    let mut x = Vector3::from(initial.mean);
    let mut p = initial.cov_matrix();
    p = 0.5 * (p + p.transpose());
    check_spd(&p, initial.t_s)?;
    let m = Matrix2::new(noise.v_sd_mps.powi(2) + MIN_VARIANCE, 0.0, 0.0, noise.omega_sd_rps.powi(2) + MIN_VARIANCE);
    let r = Matrix2::identity() * (noise.gnss_sd_m.powi(2) + MIN_VARIANCE);
    let h = Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);

    let mut trace = Vec::with_capacity(odometry.len() + 1);
    let mut fix_iter = gnss.iter().peekable();
    let mut apply_fixes = |t: f64, x: &mut Vector3<f64>, p: &mut Matrix3<f64>| -> Result<(), SimError> {
        while let Some(fix) = fix_iter.next_if(|f| f.t_s <= t + 1e-9) {
            let z = Vector2::new(fix.position.x_m, fix.position.y_m);
            let s = h * *p * h.transpose() + r;
            let s_inv = s.try_inverse().ok_or(SimError::FilterDivergence { t_s: fix.t_s })?;
            let k = *p * h.transpose() * s_inv;
            *x += k * (z - h * *x);
            x[2] = normalize_angle(x[2]);
            let ikh = Matrix3::identity() - k * h;
            *p = ikh * *p * ikh.transpose() + k * r * k.transpose();
            *p = 0.5 * (*p + p.transpose());
            check_spd(p, fix.t_s)?;
        }
        Ok(())
    };

    apply_fixes(initial.t_s, &mut x, &mut p)?;
    trace.push(to_estimate(initial.t_s, &x, &p));
    for od in odometry {
        let th = x[2];
        let dt = od.dt_s;
        let (v, w) = (od.v_mps, od.omega_rps);
        // Jacobians of the exact-arc step, evaluated with the small-ω limit
        let moved = integrate_unicycle(
            &RobotState { x_m: x[0], y_m: x[1], heading_rad: th, v_mps: v, omega_rps: w },
            dt,
        );
        let th_mid = th + 0.5 * w * dt;
        let f = Matrix3::new(
            1.0, 0.0, -v * dt * th_mid.sin(),
            0.0, 1.0, v * dt * th_mid.cos(),
            0.0, 0.0, 1.0,
        );
        let g = Matrix3x2::new(
            dt * th_mid.cos(), 0.0,
            dt * th_mid.sin(), 0.0,
            0.0, dt,
        );
        x = Vector3::new(moved.x_m, moved.y_m, moved.heading_rad);
        p = f * p * f.transpose() + g * m * g.transpose();
        p = 0.5 * (p + p.transpose());
        check_spd(&p, od.t_s)?;
        apply_fixes(od.t_s, &mut x, &mut p)?;
        trace.push(to_estimate(od.t_s, &x, &p));
    }
    Ok(trace)
}

/// Odometry-only integration from the initial mean, same alignment as [`ekf_fuse`].
pub fn dead_reckon(odometry: &[OdometrySample], initial: &PoseEstimate) -> Vec<[f64; 3]> {
    let mut s = RobotState {
        x_m: initial.mean[0],
        y_m: initial.mean[1],
        heading_rad: initial.mean[2],
        v_mps: 0.0,
        omega_rps: 0.0,
    };
    let mut out = Vec::with_capacity(odometry.len() + 1);
    out.push(initial.mean);
    for od in odometry {
        s.v_mps = od.v_mps;
        s.omega_rps = od.omega_rps;
        s = integrate_unicycle(&s, od.dt_s);
        out.push([s.x_m, s.y_m, s.heading_rad]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldsim::drive::{simulate_drive, DriveConfig, GnssConfig, OdometryNoise};
    use crate::PlanarPoint;

    fn init(state: &RobotState, sd: f64) -> PoseEstimate {
        let v = sd * sd;
        PoseEstimate::new(0.0, [state.x_m, state.y_m, state.heading_rad], [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]])
    }

    #[test]
    fn noiseless_tracks_truth() {
        let plan = [PlanarPoint::new(0.0, 0.0), PlanarPoint::new(10.0, 0.0), PlanarPoint::new(10.0, 4.0)];
        let log = simulate_drive(
            &plan,
            0.5,
            &DriveConfig::default(),
            &OdometryNoise::default(),
            &GnssConfig { rate_hz: 1.0, noise_sd_m: 0.0 },
            2,
        )
        .unwrap();
        let noise = EkfNoise { v_sd_mps: 0.0, omega_sd_rps: 0.0, gnss_sd_m: 0.0 };
        let trace = ekf_fuse(&log.odometry, &log.gnss, &init(&log.truth[0].state, 1e-3), &noise).unwrap();
        assert_eq!(trace.len(), log.truth.len());
        for (e, t) in trace.iter().zip(&log.truth) {
            assert!((e.mean[0] - t.state.x_m).abs() < 1e-6);
            assert!((e.mean[1] - t.state.y_m).abs() < 1e-6);
            assert!(e.is_spd());
        }
    }

    #[test]
    fn gnss_update_shrinks_trace() {
        let od: Vec<OdometrySample> =
            (1..=50).map(|k| OdometrySample { t_s: k as f64 * 0.02, dt_s: 0.02, v_mps: 1.0, omega_rps: 0.1 }).collect();
        let fix = [GnssFix { t_s: 1.0, position: PlanarPoint::new(1.0, 0.05) }];
        let noise = EkfNoise { v_sd_mps: 0.1, omega_sd_rps: 0.1, gnss_sd_m: 0.3 };
        let start = RobotState { x_m: 0.0, y_m: 0.0, heading_rad: 0.0, v_mps: 0.0, omega_rps: 0.0 };
        let with = ekf_fuse(&od, &fix, &init(&start, 0.5), &noise).unwrap();
        let without = ekf_fuse(&od, &[], &init(&start, 0.5), &noise).unwrap();
        let tr = |e: &PoseEstimate| e.covariance[0][0] + e.covariance[1][1] + e.covariance[2][2];
        assert!(tr(with.last().unwrap()) < tr(without.last().unwrap()));
    }

    #[test]
    fn rejects_non_spd_initial() {
        let bad = PoseEstimate::new(0.0, [0.0; 3], [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let noise = EkfNoise { v_sd_mps: 0.1, omega_sd_rps: 0.1, gnss_sd_m: 0.3 };
        assert!(matches!(ekf_fuse(&[], &[], &bad, &noise), Err(SimError::FilterDivergence { .. })));
    }
}
