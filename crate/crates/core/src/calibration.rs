//! Robot-induced additive bias on ECa readings.
//!
//! Two sources of evidence are supported: paired surveys over the same path
//! (hand-held vs. robot-mounted sensor) and the distance-interference table,
//! where the sensor is read at increasing horizontal distances from the
//! chassis and compared with a control reading taken without the robot.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geocore::{project_to_plane, GeoError};
use crate::ingest::Survey;
use crate::stats::{linear_fit, FitDegeneracy, LinearFit};

/// Interference measurements shipped with the crate (25 rows, θ ∈ {0°, 90°}).
pub const TABLE1_CSV: &str = include_str!("../fixtures/table1.csv");

pub const DEFAULT_PAIRING_BIN_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("surveys share fewer than 2 along-path bins ({matched} matched)")]
    NoOverlap { matched: usize },
    #[error("bin width must be positive")]
    InvalidBinWidth,
    #[error("regression degenerate: {0:?}")]
    Degenerate(FitDegeneracy),
    #[error("orientation {0}° not present in the interference profile")]
    UnsupportedOrientation(f64),
    #[error("interference table: {0}")]
    Table(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_b - mean_a`.
    pub offset: f64,
    /// OLS of b-bin means on a-bin means.
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    pub n_pairs: usize,
}

/// Cumulative along-path distance of each record in a local plane.
fn along_path_m(survey: &Survey, datum: &crate::GeoPoint) -> Result<Vec<f64>, GeoError> {
    let mut out = Vec::with_capacity(survey.len());
    let mut prev: Option<crate::PlanarPoint> = None;
    let mut acc = 0.0;
    for r in survey.records() {
        let p = project_to_plane(datum, &r.position)?;
        if let Some(q) = prev {
            acc += p.distance(&q);
        }
        out.push(acc);
        prev = Some(p);
    }
    Ok(out)
}

fn bin_means(values: &[f64], dist: &[f64], width: f64) -> BTreeMap<u64, f64> {
    let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for (&v, &d) in values.iter().zip(dist) {
        let e = acc.entry((d / width).floor() as u64).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Compares two surveys of the same path by averaging each within bins of
/// cumulative along-path distance and regressing b on a over shared bins.
pub fn paired_offset(a: &Survey, b: &Survey, bin_width_m: f64) -> Result<CalibrationReport, CalibrationError> {
    if !(bin_width_m > 0.0) {
        return Err(CalibrationError::InvalidBinWidth);
    }
    let datum = match a.records().first() {
        Some(r) => r.position,
        None => return Err(CalibrationError::NoOverlap { matched: 0 }),
    };
    let bins_a = bin_means(&a.values(), &along_path_m(a, &datum)?, bin_width_m);
    let bins_b = bin_means(&b.values(), &along_path_m(b, &datum)?, bin_width_m);
    let (xs, ys): (Vec<f64>, Vec<f64>) = bins_a
        .iter()
        .filter_map(|(k, &va)| bins_b.get(k).map(|&vb| (va, vb)))
        .unzip();
    if xs.len() < 2 {
        return Err(CalibrationError::NoOverlap { matched: xs.len() });
    }
    let mean_a = crate::stats::mean(&xs).unwrap();
    let mean_b = crate::stats::mean(&ys).unwrap();
    let fit = linear_fit(&xs, &ys).map_err(CalibrationError::Degenerate)?;
    Ok(CalibrationReport {
        mean_a,
        mean_b,
        offset: mean_b - mean_a,
        slope: fit.slope,
        intercept: fit.intercept,
        pearson_r: fit.pearson_r,
        n_pairs: xs.len(),
    })
}

/// Outcome of bias removal: corrected survey plus indices whose corrected
/// value dropped to zero or below (kept, but flagged).
#[derive(Debug, Clone, PartialEq)]
pub struct BiasCorrection {
    pub survey: Survey,
    pub nonpositive: Vec<usize>,
}

pub fn apply_bias_correction(survey: &Survey, offset: f64) -> BiasCorrection {
    let values: Vec<f64> = survey.values().iter().map(|v| v - offset).collect();
    let nonpositive = values.iter().enumerate().filter(|(_, v)| **v <= 0.0).map(|(i, _)| i).collect();
    let mut out = survey.with_values(&values);
    out.metadata.insert("bias_correction_msm".into(), offset.to_string());
    BiasCorrection { survey: out, nonpositive }
}

/// One line of the interference table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub config: String,
    pub theta_deg: f64,
    /// Reading without the robot present.
    pub control: f64,
    /// `(distance_cm, reading)` pairs.
    pub readings: Vec<(f64, f64)>,
}

/// Parses `config,theta_deg,control,d<cm>...` rows.
pub fn parse_profile_table<R: Read>(input: R) -> Result<Vec<ProfileRow>, CalibrationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (config_col, theta_col, control_col) = match (find("config"), find("theta_deg"), find("control")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(CalibrationError::Table("need config, theta_deg and control columns".into())),
    };
    let dist_cols: Vec<(usize, f64)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix('d').and_then(|d| d.parse::<f64>().ok()).map(|d| (i, d)))
        .collect();
    if dist_cols.is_empty() {
        return Err(CalibrationError::Table("no distance columns".into()));
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64, CalibrationError> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| CalibrationError::Table(format!("row {} column {} not numeric", n + 1, i + 1)))
        };
        let readings = dist_cols
            .iter()
            .filter(|(i, _)| rec.get(*i).is_some_and(|s| !s.is_empty()))
            .map(|&(i, d)| num(i).map(|v| (d, v)))
            .collect::<Result<Vec<_>, _>>()?;
        if readings.is_empty() {
            return Err(CalibrationError::Table(format!("row {} has no distance readings", n + 1)));
        }
        rows.push(ProfileRow {
            config: rec.get(config_col).unwrap_or_default().to_string(),
            theta_deg: num(theta_col)?,
            control: num(control_col)?,
            readings,
        });
    }
    Ok(rows)
}

/// The shipped interference table.
pub fn table1_rows() -> Vec<ProfileRow> {
    parse_profile_table(TABLE1_CSV.as_bytes()).expect("bundled table parses")
}

/// Aggregate of all rows at one distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub distance_cm: f64,
    pub n_rows: usize,
    /// Mean of `reading - control`.
    pub mean_offset: f64,
    /// Regression of reading on control; `None` when degenerate (< 2 rows or no spread).
    pub regression: Option<LinearFit<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationProfile {
    pub theta_deg: f64,
    /// Strictly increasing distance.
    pub entries: Vec<DistanceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceProfile {
    pub orientations: Vec<OrientationProfile>,
}

impl InterferenceProfile {
    pub fn orientation(&self, theta_deg: f64) -> Option<&OrientationProfile> {
        self.orientations.iter().find(|o| o.theta_deg == theta_deg)
    }
}

/// Per-orientation, per-distance offsets and regressions against control.
pub fn interference_profile(rows: &[ProfileRow]) -> Result<InterferenceProfile, CalibrationError> {
    if rows.is_empty() {
        return Err(CalibrationError::Table("no rows".into()));
    }
    let mut thetas: Vec<f64> = rows.iter().map(|r| r.theta_deg).collect();
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    let mut orientations = Vec::new();
    for theta in thetas {
        let mut per_dist: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
        for row in rows.iter().filter(|r| r.theta_deg == theta) {
            for &(d, reading) in &row.readings {
                match per_dist.iter_mut().find(|(pd, _, _)| *pd == d) {
                    Some((_, controls, readings)) => {
                        controls.push(row.control);
                        readings.push(reading);
                    }
                    None => per_dist.push((d, vec![row.control], vec![reading])),
                }
            }
        }
        per_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        let entries = per_dist
            .into_iter()
            .map(|(d, controls, readings)| {
                let diffs: Vec<f64> = readings.iter().zip(&controls).map(|(r, c)| r - c).collect();
                DistanceEntry {
                    distance_cm: d,
                    n_rows: diffs.len(),
                    mean_offset: crate::stats::mean(&diffs).unwrap(),
                    regression: linear_fit(&controls, &readings).ok(),
                }
            })
            .collect();
        orientations.push(OrientationProfile { theta_deg: theta, entries });
    }
    Ok(InterferenceProfile { orientations })
}

/// Sensor mount geometry. `d_h_mm = ∞` denotes a sensor carried away from
/// the robot (no interference).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorMountConfig {
    pub d_h_mm: f64,
    pub d_v_mm: f64,
    pub theta_deg: f64,
    pub alpha_deg: f64,
    pub beta_deg: f64,
}

impl SensorMountConfig {
    /// Mount geometry of the built prototype.
    pub fn prototype() -> Self {
        Self { d_h_mm: 235.0, d_v_mm: 50.0, theta_deg: 0.0, alpha_deg: 18.4, beta_deg: 12.2 }
    }

    pub fn handheld() -> Self {
        Self { d_h_mm: f64::INFINITY, ..Self::prototype() }
    }
}

impl Default for SensorMountConfig {
    fn default() -> Self {
        Self::prototype()
    }
}

/// Additive bias at the mount distance: piecewise-linear in the tabulated
/// mean offsets, clamped to the end knots, zero for an infinite distance.
pub fn bias_at(profile: &InterferenceProfile, mount: &SensorMountConfig) -> Result<f64, CalibrationError> {
    let orient = profile
        .orientation(mount.theta_deg)
        .filter(|o| !o.entries.is_empty())
        .ok_or(CalibrationError::UnsupportedOrientation(mount.theta_deg))?;
    if mount.d_h_mm.is_infinite() {
        return Ok(0.0);
    }
    let d = mount.d_h_mm / 10.0;
    let knots = &orient.entries;
    let first = &knots[0];
    let last = &knots[knots.len() - 1];
    if d <= first.distance_cm {
        return Ok(first.mean_offset);
    }
    if d >= last.distance_cm {
        return Ok(last.mean_offset);
    }
    let i = knots.partition_point(|k| k.distance_cm <= d);
    let (lo, hi) = (&knots[i - 1], &knots[i]);
    if d == lo.distance_cm {
        return Ok(lo.mean_offset);
    }
    let t = (d - lo.distance_cm) / (hi.distance_cm - lo.distance_cm);
    Ok(lo.mean_offset + t * (hi.mean_offset - lo.mean_offset))
}
