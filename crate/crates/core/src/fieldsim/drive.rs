use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::ingest::normalize_angle;
use crate::PlanarPoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x_m: f64,
    pub y_m: f64,
    /// (-π, π]
    pub heading_rad: f64,
    pub v_mps: f64,
    pub omega_rps: f64,
}

impl RobotState {
    pub fn position(&self) -> PlanarPoint {
        PlanarPoint::new(self.x_m, self.y_m)
    }
}

/// Advances the unicycle `ẋ = v cosθ, ẏ = v sinθ, θ̇ = ω` by `dt` holding
/// `v` and `ω` constant (exact circular-arc step).
pub fn integrate_unicycle(s: &RobotState, dt: f64) -> RobotState {
    let (v, w, th) = (s.v_mps, s.omega_rps, s.heading_rad);
    let (x, y) = if w.abs() < 1e-12 {
        (s.x_m + v * dt * th.cos(), s.y_m + v * dt * th.sin())
    } else {
        let r = v / w;
        (s.x_m + r * ((th + w * dt).sin() - th.sin()), s.y_m - r * ((th + w * dt).cos() - th.cos()))
    };
    RobotState { x_m: x, y_m: y, heading_rad: normalize_angle(th + w * dt), ..*s }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriveConfig {
    pub dt_s: f64,
    pub capture_radius_m: f64,
    pub lookahead_m: f64,
    pub max_omega_rps: f64,
    /// Extra time allowed per waypoint beyond twice the nominal leg time.
    pub waypoint_slack_s: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self { dt_s: 0.02, capture_radius_m: 0.3, lookahead_m: 0.5, max_omega_rps: 2.0, waypoint_slack_s: 30.0 }
    }
}

/// Odometry noise: white noise on both rates plus a constant gyro bias.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryNoise {
    pub v_sd_mps: f64,
    pub omega_sd_rps: f64,
    pub omega_bias_rps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthSample {
    pub t_s: f64,
    pub state: RobotState,
}

/// Measured rates over the step `(t_s - dt_s, t_s]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometrySample {
    pub t_s: f64,
    pub dt_s: f64,
    pub v_mps: f64,
    pub omega_rps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnssFix {
    pub t_s: f64,
    pub position: PlanarPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveLog {
    /// One state per integration step, starting at t = 0.
    pub truth: Vec<TruthSample>,
    /// `odometry[k]` covers `truth[k] → truth[k + 1]`.
    pub odometry: Vec<OdometrySample>,
    pub gnss: Vec<GnssFix>,
}

impl DriveLog {
    pub fn duration_s(&self) -> f64 {
        self.truth.last().map_or(0.0, |s| s.t_s)
    }

    /// Truth indices at a fixed sampling rate, starting at t = 0.
    pub fn sample_indices(&self, rate_hz: f64) -> Vec<usize> {
        let period = 1.0 / rate_hz;
        let mut next = 0.0;
        let mut out = Vec::new();
        for (i, s) in self.truth.iter().enumerate() {
            if s.t_s + 1e-9 >= next {
                out.push(i);
                next += period;
            }
        }
        out
    }
}

/// GNSS settings for a drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnssConfig {
    pub rate_hz: f64,
    pub noise_sd_m: f64,
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd.max(0.0)).expect("finite non-negative sd")
}

/// Drives the waypoint list with a pure-pursuit follower at constant speed.
pub fn simulate_drive(
    plan: &[PlanarPoint],
    speed_mps: f64,
    cfg: &DriveConfig,
    odom_noise: &OdometryNoise,
    gnss: &GnssConfig,
    seed: u64,
) -> Result<DriveLog, SimError> {
    if plan.is_empty() {
        return Err(SimError::Plan("empty plan".into()));
    }
    if !(speed_mps > 0.0) || !(cfg.dt_s > 0.0) || !(gnss.rate_hz > 0.0) {
        return Err(SimError::Plan("speed, step and GNSS rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v_noise = normal(odom_noise.v_sd_mps);
    let w_noise = normal(odom_noise.omega_sd_rps);
    let g_noise = normal(gnss.noise_sd_m);

    let heading0 = plan.get(1).map_or(0.0, |p| (p.y_m - plan[0].y_m).atan2(p.x_m - plan[0].x_m));
    let mut state = RobotState { x_m: plan[0].x_m, y_m: plan[0].y_m, heading_rad: heading0, v_mps: 0.0, omega_rps: 0.0 };
    let mut log = DriveLog { truth: Vec::new(), odometry: Vec::new(), gnss: Vec::new() };
    let gnss_period = 1.0 / gnss.rate_hz;
    let mut next_fix = 0.0;
    let mut t = 0.0;
    let mut step: u64 = 0;
    let mut target = 1;
    let mut leg_start_t = 0.0;

    let record = |state: &RobotState, t: f64, log: &mut DriveLog, rng: &mut ChaCha8Rng, next_fix: &mut f64| {
        log.truth.push(TruthSample { t_s: t, state: *state });
        if t + 1e-9 >= *next_fix {
            let position =
                PlanarPoint::new(state.x_m + g_noise.sample(rng), state.y_m + g_noise.sample(rng));
            log.gnss.push(GnssFix { t_s: t, position });
            *next_fix += gnss_period;
        }
    };
    record(&state, t, &mut log, &mut rng, &mut next_fix);

    while target < plan.len() {
        let goal = plan[target];
        let pos = state.position();
        if pos.distance(&goal) <= cfg.capture_radius_m {
            target += 1;
            leg_start_t = t;
            continue;
        }
        let leg = plan[target - 1].distance(&goal);
        if t - leg_start_t > 2.0 * leg / speed_mps + cfg.waypoint_slack_s {
            return Err(SimError::Stuck { waypoint: target, t_s: t });
        }
        // lookahead point along the current leg
        let from = plan[target - 1];
        let (dx, dy) = (goal.x_m - from.x_m, goal.y_m - from.y_m);
        let len = (dx * dx + dy * dy).sqrt();
        let look = if len > 0.0 {
            let (ux, uy) = (dx / len, dy / len);
            let along = ((pos.x_m - from.x_m) * ux + (pos.y_m - from.y_m) * uy).clamp(0.0, len);
            let s = (along + cfg.lookahead_m).min(len);
            PlanarPoint::new(from.x_m + s * ux, from.y_m + s * uy)
        } else {
            goal
        };
        let ld = pos.distance(&look).max(1e-6);
        let alpha = normalize_angle((look.y_m - pos.y_m).atan2(look.x_m - pos.x_m) - state.heading_rad);
        let omega = (2.0 * speed_mps * alpha.sin() / ld).clamp(-cfg.max_omega_rps, cfg.max_omega_rps);
        state.v_mps = speed_mps;
        state.omega_rps = omega;

        let meas_v = speed_mps + v_noise.sample(&mut rng);
        let meas_w = omega + odom_noise.omega_bias_rps + w_noise.sample(&mut rng);
        state = integrate_unicycle(&state, cfg.dt_s);
        step += 1;
        t = step as f64 * cfg.dt_s;
        log.odometry.push(OdometrySample { t_s: t, dt_s: cfg.dt_s, v_mps: meas_v, omega_rps: meas_w });
        record(&state, t, &mut log, &mut rng, &mut next_fix);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quiet() -> GnssConfig {
        GnssConfig { rate_hz: 1.0, noise_sd_m: 0.0 }
    }

    #[test]
    fn straight_row_closed_form() {
        let plan = [PlanarPoint::new(0.0, 0.0), PlanarPoint::new(20.0, 0.0)];
        let log = simulate_drive(&plan, 0.5, &DriveConfig::default(), &OdometryNoise::default(), &quiet(), 1).unwrap();
        for s in &log.truth {
            assert_eq!(s.state.omega_rps, 0.0);
            assert!((s.state.x_m - 0.5 * s.t_s).abs() < 1e-9);
            assert_eq!(s.state.y_m, 0.0);
        }
        let end = log.truth.last().unwrap().state;
        assert!((20.0 - end.x_m) <= 0.3 + 1e-9);
    }

    #[test]
    fn open_loop_arc() {
        let (v, w, t_end): (f64, f64, f64) = (0.5, 0.2, 10.0);
        let mut s = RobotState { x_m: 0.0, y_m: 0.0, heading_rad: 0.0, v_mps: v, omega_rps: w };
        let dt: f64 = 0.02;
        for _ in 0..(t_end / dt).round() as usize {
            s = integrate_unicycle(&s, dt);
        }
        let r = v / w;
        assert_relative_eq!(s.x_m, r * (w * t_end).sin(), epsilon = dt * dt);
        assert_relative_eq!(s.y_m, r * (1.0 - (w * t_end).cos()), epsilon = dt * dt);
        assert_relative_eq!(s.heading_rad, w * t_end, epsilon = 1e-9);
    }

    #[test]
    fn sample_count_matches_rate() {
        let plan = [PlanarPoint::new(0.0, 0.0), PlanarPoint::new(30.0, 0.0), PlanarPoint::new(30.0, 5.0)];
        let log = simulate_drive(&plan, 1.0, &DriveConfig::default(), &OdometryNoise::default(), &quiet(), 3).unwrap();
        for rate in [1.0, 2.0, 5.0] {
            let n = log.sample_indices(rate).len() as f64;
            let expected = log.duration_s() * rate;
            assert!((n - expected).abs() <= 1.0 + 1e-9, "rate {rate}: {n} vs {expected}");
        }
        assert_eq!(log.odometry.len() + 1, log.truth.len());
        assert!((log.gnss.len() as f64 - log.duration_s()).abs() <= 1.0);
    }

    #[test]
    fn corners_are_followed() {
        let plan = super::super::plan_serpentine(PlanarPoint::new(0.0, 0.0), PlanarPoint::new(20.0, 10.0), 3.0, 1.0).unwrap();
        let log = simulate_drive(&plan, 1.0, &DriveConfig::default(), &OdometryNoise::default(), &quiet(), 9).unwrap();
        let last = log.truth.last().unwrap().state.position();
        assert!(last.distance(plan.last().unwrap()) <= 0.3 + 1e-9);
    }

    #[test]
    fn unreachable_waypoint_reported() {
        let cfg = DriveConfig { max_omega_rps: 0.01, waypoint_slack_s: 5.0, ..DriveConfig::default() };
        let plan = [PlanarPoint::new(0.0, 0.0), PlanarPoint::new(5.0, 0.0), PlanarPoint::new(5.0, 0.5)];
        let err = simulate_drive(&plan, 1.0, &cfg, &OdometryNoise::default(), &quiet(), 1).unwrap_err();
        assert!(matches!(err, SimError::Stuck { waypoint: 2, .. }), "{err:?}");
    }

    #[test]
    fn deterministic_per_seed() {
        let plan = [PlanarPoint::new(0.0, 0.0), PlanarPoint::new(10.0, 0.0)];
        let noise = OdometryNoise { v_sd_mps: 0.05, omega_sd_rps: 0.05, omega_bias_rps: 0.01 };
        let g = GnssConfig { rate_hz: 1.0, noise_sd_m: 0.3 };
        let a = simulate_drive(&plan, 1.0, &DriveConfig::default(), &noise, &g, 5).unwrap();
        let b = simulate_drive(&plan, 1.0, &DriveConfig::default(), &noise, &g, 5).unwrap();
        assert_eq!(a, b);
    }
}
