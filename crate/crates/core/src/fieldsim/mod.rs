//! Synthetic ground truth and virtual surveys.
//!
//! A scenario draws a Gaussian random field, plans a serpentine path over
//! it, drives a unicycle robot along the path, and samples the field through
//! a sensor model with additive mount bias and relative noise. Robot surveys
//! report EKF-fused positions; hand-held surveys report GNSS positions.
//! Every random stream derives from the scenario seed.

mod drive;
mod ekf;
mod field;
mod path;

pub use drive::{
    integrate_unicycle, simulate_drive, DriveConfig, DriveLog, GnssConfig, GnssFix, OdometryNoise, OdometrySample,
    RobotState, TruthSample,
};
pub use ekf::{dead_reckon, ekf_fuse, EkfNoise, PoseEstimate};
pub use field::{generate_field, FieldGenerator, FieldTruth, MAX_FIELD_CELLS};
pub use path::plan_serpentine;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{bias_at, interference_profile, table1_rows, InterferenceProfile, SensorMountConfig};
use crate::geocore::unproject;
use crate::ingest::{SurveyRecord, SurveySource, ECA_MAX_MSM};
use crate::{GeoPoint, GridSpec, PlanarPoint, Survey, VariogramModel};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("field generation failed: {0}")]
    Generation(String),
    #[error("path plan: {0}")]
    Plan(String),
    #[error("follower stuck before waypoint {waypoint} at t = {t_s:.2} s")]
    Stuck { waypoint: usize, t_s: f64 },
    #[error("pose filter covariance lost positive definiteness at t = {t_s:.3} s")]
    FilterDivergence { t_s: f64 },
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Calibration(#[from] crate::calibration::CalibrationError),
    #[error(transparent)]
    Geo(#[from] crate::geocore::GeoError),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
}

/// A simulated sensor reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub eca_msm: f64,
    /// Position fell outside the truth grid and was clamped.
    pub position_clamped: bool,
    /// Value was clamped to the sensor range.
    pub range_clamped: bool,
}

/// Truth (bilinear) + additive bias + Gaussian noise, clamped to the sensor range.
pub fn sense_eca<R: Rng + ?Sized>(
    truth: &FieldTruth,
    position: &PlanarPoint,
    bias_msm: f64,
    noise_sd_msm: f64,
    rng: &mut R,
) -> Reading {
    let (base, position_clamped) = truth.sample(position);
    let noise = if noise_sd_msm > 0.0 {
        Normal::new(0.0, noise_sd_msm).expect("positive sd").sample(rng)
    } else {
        0.0
    };
    let raw = base + bias_msm + noise;
    let value = raw.clamp(0.0, ECA_MAX_MSM);
    Reading { eca_msm: value, position_clamped, range_clamped: value != raw }
}

/// Parameters of the truth field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub grid: GridSpec,
    pub model: VariogramModel,
    pub mean_msm: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            grid: GridSpec::new(PlanarPoint::new(0.0, 0.0), 1.0, 50, 30).expect("static grid"),
            model: VariogramModel { nugget: 0.2, partial_sill: 5.0, range_m: 5.0 },
            mean_msm: 19.0,
        }
    }
}

/// Sensor noise sd = `absolute_msm + relative · reading`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    pub absolute_msm: f64,
    pub relative: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self { absolute_msm: 0.0, relative: 0.04 }
    }
}

impl SensorNoise {
    pub fn sd_for(&self, reading: f64) -> f64 {
        self.absolute_msm + self.relative * reading.abs()
    }
}

fn default_profile() -> InterferenceProfile {
    interference_profile(&table1_rows()).expect("bundled table")
}

/// Survey site used when a scenario does not name one.
pub fn default_datum() -> GeoPoint {
    // 33°58'24.5"N 117°19'10.3"W
    GeoPoint { latitude_deg: 33.0 + 58.0 / 60.0 + 24.5 / 3600.0, longitude_deg: -(117.0 + 19.0 / 60.0 + 10.3 / 3600.0) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    pub field: FieldSpec,
    pub datum: GeoPoint,
    pub start_epoch_s: f64,
    pub mount: SensorMountConfig,
    #[serde(default = "default_profile")]
    pub profile: InterferenceProfile,
    pub sensor_noise: SensorNoise,
    pub gnss_noise_sd_m: f64,
    pub gnss_rate_hz: f64,
    pub odometry: OdometryNoise,
    pub sample_rate_hz: f64,
    pub handheld_speed_mps: f64,
    pub robot_speed_mps: f64,
    pub row_spacing_m: f64,
    pub margin_m: f64,
    pub drive: DriveConfig,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            field: FieldSpec::default(),
            datum: default_datum(),
            start_epoch_s: 1_615_536_000.0,
            mount: SensorMountConfig::prototype(),
            profile: default_profile(),
            sensor_noise: SensorNoise::default(),
            gnss_noise_sd_m: 0.3,
            gnss_rate_hz: 1.0,
            odometry: OdometryNoise { v_sd_mps: 0.02, omega_sd_rps: 0.05, omega_bias_rps: 0.01 },
            sample_rate_hz: 1.0,
            handheld_speed_mps: 1.0,
            robot_speed_mps: 0.25,
            row_spacing_m: 3.0,
            margin_m: 1.0,
            drive: DriveConfig::default(),
            seed: 1,
        }
    }
}

impl SimScenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: SimScenario = serde_json::from_str(text).map_err(|e| SimError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("sample_rate_hz", self.sample_rate_hz),
            ("gnss_rate_hz", self.gnss_rate_hz),
            ("handheld_speed_mps", self.handheld_speed_mps),
            ("robot_speed_mps", self.robot_speed_mps),
            ("row_spacing_m", self.row_spacing_m),
            ("drive.dt_s", self.drive.dt_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SimError::Scenario(format!("{name} must be positive")));
            }
        }
        let non_negative = [
            ("gnss_noise_sd_m", self.gnss_noise_sd_m),
            ("sensor_noise.absolute_msm", self.sensor_noise.absolute_msm),
            ("sensor_noise.relative", self.sensor_noise.relative),
            ("odometry.v_sd_mps", self.odometry.v_sd_mps),
            ("odometry.omega_sd_rps", self.odometry.omega_sd_rps),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SimError::Scenario(format!("{name} must be non-negative")));
            }
        }
        self.datum.validate()?;
        self.field.model.validate().map_err(|e| SimError::Scenario(e.to_string()))?;
        Ok(())
    }

    /// Sub-stream seed for one stochastic component.
    fn stream(&self, id: u64) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(id);
        rng.random()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurveyMode {
    Handheld,
    Robot,
}

impl SurveyMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SurveyMode::Handheld => "handheld",
            SurveyMode::Robot => "robot",
        }
    }
}

/// Survey plus the simulation byproducts that tests and reports look at.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSurvey {
    pub survey: Survey,
    /// True planar sensor positions, one per record.
    pub true_positions: Vec<PlanarPoint>,
    /// Reported planar positions, one per record.
    pub reported_positions: Vec<PlanarPoint>,
    /// Additive bias injected into every reading.
    pub bias_msm: f64,
    pub drive: DriveLog,
    pub n_position_clamped: usize,
    pub n_range_clamped: usize,
}

/// A scenario with its realized truth field.
pub struct Simulation {
    pub scenario: SimScenario,
    pub truth: FieldTruth,
}

impl Simulation {
    pub fn new(scenario: SimScenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let f = &scenario.field;
        let truth = generate_field(f.grid, f.model, f.mean_msm, scenario.stream(1))?;
        Ok(Self { scenario, truth })
    }

    pub fn plan(&self) -> Result<Vec<PlanarPoint>, SimError> {
        let g = &self.truth.grid;
        plan_serpentine(g.origin, g.max_corner(), self.scenario.row_spacing_m, self.scenario.margin_m)
    }

    pub fn survey(&self, mode: SurveyMode) -> Result<VirtualSurvey, SimError> {
        let sc = &self.scenario;
        let (speed, mode_id) = match mode {
            SurveyMode::Handheld => (sc.handheld_speed_mps, 10),
            SurveyMode::Robot => (sc.robot_speed_mps, 20),
        };
        let plan = self.plan()?;
        let gnss = GnssConfig { rate_hz: sc.gnss_rate_hz, noise_sd_m: sc.gnss_noise_sd_m };
        let drive = simulate_drive(&plan, speed, &sc.drive, &sc.odometry, &gnss, sc.stream(mode_id))?;
        let samples = drive.sample_indices(sc.sample_rate_hz);

        let (bias, reported): (f64, Vec<PlanarPoint>) = match mode {
            SurveyMode::Robot => {
                let s0 = drive.truth[0].state;
                let v0 = sc.gnss_noise_sd_m.max(0.05).powi(2);
                let init = PoseEstimate::new(0.0, [s0.x_m, s0.y_m, s0.heading_rad], [[v0, 0.0, 0.0], [0.0, v0, 0.0], [0.0, 0.0, 0.01]]);
                let noise = EkfNoise {
                    v_sd_mps: sc.odometry.v_sd_mps,
                    omega_sd_rps: sc.odometry.omega_sd_rps.max(sc.odometry.omega_bias_rps.abs()),
                    gnss_sd_m: sc.gnss_noise_sd_m,
                };
                let trace = ekf_fuse(&drive.odometry, &drive.gnss, &init, &noise)?;
                let pos = samples.iter().map(|&i| PlanarPoint::new(trace[i].mean[0], trace[i].mean[1])).collect();
                (bias_at(&sc.profile, &sc.mount)?, pos)
            }
            SurveyMode::Handheld => {
                let mut rng = ChaCha8Rng::seed_from_u64(sc.stream(mode_id + 1));
                let n = Normal::new(0.0, sc.gnss_noise_sd_m).expect("validated sd");
                let pos = samples
                    .iter()
                    .map(|&i| {
                        let s = drive.truth[i].state;
                        PlanarPoint::new(s.x_m + n.sample(&mut rng), s.y_m + n.sample(&mut rng))
                    })
                    .collect();
                (0.0, pos)
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(sc.stream(mode_id + 2));
        let mut records = Vec::with_capacity(samples.len());
        let mut true_positions = Vec::with_capacity(samples.len());
        let (mut n_pos, mut n_range) = (0, 0);
        for (&i, rep) in samples.iter().zip(&reported) {
            let truth_pos = drive.truth[i].state.position();
            let (clean, _) = self.truth.sample(&truth_pos);
            let sd = sc.sensor_noise.sd_for(clean + bias);
            let reading = sense_eca(&self.truth, &truth_pos, bias, sd, &mut rng);
            n_pos += usize::from(reading.position_clamped);
            n_range += usize::from(reading.range_clamped);
            records.push(SurveyRecord {
                timestamp: sc.start_epoch_s + drive.truth[i].t_s,
                position: unproject(&sc.datum, rep)?,
                eca_msm: reading.eca_msm,
                source: SurveySource::Simulated,
            });
            true_positions.push(truth_pos);
        }
        let mut metadata = BTreeMap::new();
        metadata.insert("mode".into(), mode.as_str().into());
        metadata.insert("seed".into(), sc.seed.to_string());
        metadata.insert("speed_mps".into(), speed.to_string());
        metadata.insert("injected_bias_msm".into(), bias.to_string());
        metadata.insert("source".into(), SurveySource::Simulated.as_str().into());
        Ok(VirtualSurvey {
            survey: Survey::new(records, metadata)?,
            true_positions,
            reported_positions: reported,
            bias_msm: bias,
            drive,
            n_position_clamped: n_pos,
            n_range_clamped: n_range,
        })
    }
}

/// Generates the scenario's truth and runs one virtual survey.
pub fn run_virtual_survey(scenario: &SimScenario, mode: SurveyMode) -> Result<Survey, SimError> {
    Ok(Simulation::new(scenario.clone())?.survey(mode)?.survey)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geocore::project_to_plane;

    fn small_scenario() -> SimScenario {
        SimScenario {
            field: FieldSpec {
                grid: GridSpec::new(PlanarPoint::new(0.0, 0.0), 1.0, 20, 10).unwrap(),
                ..FieldSpec::default()
            },
            row_spacing_m: 4.0,
            ..SimScenario::default()
        }
    }

    #[test]
    fn handheld_noiseless_matches_truth() {
        let sc = SimScenario {
            sensor_noise: SensorNoise { absolute_msm: 0.0, relative: 0.0 },
            gnss_noise_sd_m: 0.0,
            ..small_scenario()
        };
        let sim = Simulation::new(sc).unwrap();
        let vs = sim.survey(SurveyMode::Handheld).unwrap();
        assert!(vs.survey.len() > 20);
        for (r, p) in vs.survey.records().iter().zip(&vs.true_positions) {
            assert_eq!(r.eca_msm, sim.truth.sample(p).0);
            let back = project_to_plane(&sim.scenario.datum, &r.position).unwrap();
            assert!(back.distance(p) < 1e-6);
        }
    }

    #[test]
    fn sensor_bias_and_clamps() {
        let sim = Simulation::new(small_scenario()).unwrap();
        let p = PlanarPoint::new(3.3, 4.4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base = sim.truth.sample(&p).0;
        let r = sense_eca(&sim.truth, &p, 13.0, 0.0, &mut rng);
        assert_eq!(r.eca_msm, base + 13.0);
        assert!(!r.position_clamped && !r.range_clamped);
        assert_eq!(sense_eca(&sim.truth, &p, 5000.0, 0.0, &mut rng).eca_msm, 1000.0);
        assert_eq!(sense_eca(&sim.truth, &p, -5000.0, 0.0, &mut rng).eca_msm, 0.0);
        assert!(sense_eca(&sim.truth, &PlanarPoint::new(-5.0, 0.0), 0.0, 0.0, &mut rng).position_clamped);
        for _ in 0..200 {
            let v = sense_eca(&sim.truth, &p, 0.0, 400.0, &mut rng).eca_msm;
            assert!((0.0..=1000.0).contains(&v));
        }
    }

    #[test]
    fn robot_injects_mount_bias() {
        let sim = Simulation::new(small_scenario()).unwrap();
        let vs = sim.survey(SurveyMode::Robot).unwrap();
        let expected = bias_at(&sim.scenario.profile, &sim.scenario.mount).unwrap();
        assert_eq!(vs.bias_msm, expected);
        assert_eq!(vs.survey.metadata["mode"], "robot");
    }

    #[test]
    fn slower_survey_more_samples() {
        let sc = small_scenario();
        let fast = run_virtual_survey(&SimScenario { robot_speed_mps: 0.5, ..sc.clone() }, SurveyMode::Robot).unwrap();
        let slow = run_virtual_survey(&SimScenario { robot_speed_mps: 0.25, ..sc }, SurveyMode::Robot).unwrap();
        let ratio = slow.len() as f64 / fast.len() as f64;
        assert!((ratio - 2.0).abs() < 0.15, "ratio {ratio}");
    }

    #[test]
    fn full_determinism() {
        let sc = small_scenario();
        let a = run_virtual_survey(&sc, SurveyMode::Robot).unwrap();
        let b = run_virtual_survey(&sc, SurveyMode::Robot).unwrap();
        assert_eq!(crate::ingest::write_survey_csv(&a), crate::ingest::write_survey_csv(&b));
    }

    #[test]
    fn scenario_json_defaults() {
        let sc = SimScenario::from_json(r#"{"seed": 7, "robot_speed_mps": 0.3}"#).unwrap();
        assert_eq!(sc.seed, 7);
        assert_eq!(sc.robot_speed_mps, 0.3);
        assert_eq!(sc.sensor_noise.relative, 0.04);
        assert!(sc.profile.orientation(0.0).is_some());
        assert!(SimScenario::from_json(r#"{"sample_rate_hz": 0}"#).is_err());
        let text = serde_json::to_string(&SimScenario::default()).unwrap();
        assert_eq!(SimScenario::from_json(&text).unwrap(), SimScenario::default());
    }
}
