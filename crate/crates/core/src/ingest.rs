//! Survey log parsing and ECa/pose stream synchronization.
//!
//! Survey CSV schema: `timestamp,lat,lon,eca_msm` (extra columns ignored).
//! Pose CSV schema: `timestamp,lat,lon,heading_rad` (heading may be empty).
//! Timestamps are epoch seconds or ISO-8601; both normalize to epoch seconds.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geocore::{project_to_plane, unproject, GeoError, GeoPoint};

/// Sensor full-scale range in mS/m.
pub const ECA_MAX_MSM: f64 = 1000.0;
/// Default pairing tolerance between an ECa sample and a pose.
pub const DEFAULT_MAX_GAP_S: f64 = 0.5;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: missing required column(s) {0:?}")]
    Schema(Vec<String>),
    #[error("empty survey: no usable data rows")]
    EmptySurvey,
    #[error("timestamps not non-decreasing: first offending data row {row}")]
    Ordering { row: usize },
    #[error("no pose samples to synchronize against")]
    NoPose,
    #[error("max_gap_s must be positive")]
    InvalidGap,
    #[error("survey records come from more than one source")]
    MixedSources,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurveySource {
    Handheld,
    Robot,
    Simulated,
}

impl SurveySource {
    pub fn as_str(&self) -> &'static str {
        match self {
            SurveySource::Handheld => "handheld",
            SurveySource::Robot => "robot",
            SurveySource::Simulated => "simulated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    /// Epoch seconds.
    pub timestamp: f64,
    pub position: GeoPoint,
    pub eca_msm: f64,
    pub source: SurveySource,
}

impl SurveyRecord {
    pub fn is_valid(&self) -> bool {
        self.timestamp.is_finite()
            && self.position.validate().is_ok()
            && self.eca_msm.is_finite()
            && (0.0..=ECA_MAX_MSM).contains(&self.eca_msm)
    }
}

/// Time-ordered readings from one acquisition source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survey {
    records: Vec<SurveyRecord>,
    pub metadata: BTreeMap<String, String>,
}

impl Survey {
    /// Checks ordering and single-source invariants.
    pub fn new(records: Vec<SurveyRecord>, metadata: BTreeMap<String, String>) -> Result<Self, IngestError> {
        if let Some(i) = records.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
            return Err(IngestError::Ordering { row: i + 2 });
        }
        if let Some(first) = records.first() {
            if records.iter().any(|r| r.source != first.source) {
                return Err(IngestError::MixedSources);
            }
        }
        Ok(Self { records, metadata })
    }

    pub fn records(&self) -> &[SurveyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn source(&self) -> Option<SurveySource> {
        self.records.first().map(|r| r.source)
    }

    pub fn values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eca_msm).collect()
    }

    pub fn mean_eca(&self) -> Option<f64> {
        crate::stats::mean(&self.values())
    }

    /// Keeps records whose index is in `keep` (sorted ascending).
    pub fn subset(&self, keep: &[usize]) -> Survey {
        Survey {
            records: keep.iter().map(|&i| self.records[i]).collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// Same positions and timestamps, new values. Lengths must match.
    pub fn with_values(&self, values: &[f64]) -> Survey {
        assert_eq!(values.len(), self.records.len(), "one value per record");
        Survey {
            records: self
                .records
                .iter()
                .zip(values)
                .map(|(r, &v)| SurveyRecord { eca_msm: v, ..*r })
                .collect(),
            metadata: self.metadata.clone(),
        }
    }
}

/// Per-file parse outcome. Row numbers count data rows from 1 (header excluded).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseSummary {
    pub rows_total: usize,
    pub rows_ok: usize,
    pub rows_rejected: Vec<usize>,
}

/// Parses an epoch-seconds or ISO-8601 timestamp to epoch seconds.
pub fn parse_timestamp(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    let to_secs = |secs: i64, nanos: u32| secs as f64 + f64::from(nanos) * 1e-9;
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(to_secs(dt.timestamp(), dt.timestamp_subsec_nanos()));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(ndt) = NaiveDateTime::parse_from_str(s, fmt) {
            let utc = ndt.and_utc();
            return Some(to_secs(utc.timestamp(), utc.timestamp_subsec_nanos()));
        }
    }
    None
}

fn column_indices(headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>, IngestError> {
    let names: Vec<String> = headers.iter().map(|h| h.trim().to_ascii_lowercase()).collect();
    let mut idx = Vec::with_capacity(required.len());
    let mut missing = Vec::new();
    for &req in required {
        match names.iter().position(|n| n == req) {
            Some(i) => idx.push(i),
            None => missing.push(req.to_string()),
        }
    }
    if missing.is_empty() {
        Ok(idx)
    } else {
        Err(IngestError::Schema(missing))
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Parses a survey log. Unparseable rows are skipped and listed in the summary.
pub fn parse_survey_log<R: Read>(input: R, source: SurveySource) -> Result<(Survey, ParseSummary), IngestError> {
    let mut rdr = csv_reader(input);
    let cols = column_indices(rdr.headers()?, &["timestamp", "lat", "lon", "eca_msm"])?;
    let mut records = Vec::new();
    let mut row_numbers = Vec::new();
    let mut rejected = Vec::new();
    let mut total = 0;
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        total += 1;
        let parsed = row.ok().and_then(|row| {
            let field = |k: usize| row.get(cols[k]);
            let timestamp = parse_timestamp(field(0)?)?;
            let lat: f64 = field(1)?.parse().ok()?;
            let lon: f64 = field(2)?.parse().ok()?;
            let eca_msm: f64 = field(3)?.parse().ok()?;
            let rec = SurveyRecord { timestamp, position: GeoPoint::new(lat, lon).ok()?, eca_msm, source };
            rec.is_valid().then_some(rec)
        });
        match parsed {
            Some(rec) => {
                records.push(rec);
                row_numbers.push(row_no);
            }
            None => rejected.push(row_no),
        }
    }
    if records.is_empty() {
        return Err(IngestError::EmptySurvey);
    }
    if let Some(i) = records.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(IngestError::Ordering { row: row_numbers[i + 1] });
    }
    let summary = ParseSummary { rows_total: total, rows_ok: records.len(), rows_rejected: rejected };
    let mut metadata = BTreeMap::new();
    metadata.insert("source".to_string(), source.as_str().to_string());
    Ok((Survey::new(records, metadata)?, summary))
}

/// Writes a survey in the ingest CSV schema. Values use shortest round-trip
/// formatting so that parsing the output reproduces the records exactly.
pub fn write_survey_csv(survey: &Survey) -> String {
    let mut out = String::from("timestamp,lat,lon,eca_msm\n");
    for r in survey.records() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.timestamp, r.position.latitude_deg, r.position.longitude_deg, r.eca_msm
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub timestamp: f64,
    pub position: GeoPoint,
    /// Normalized to (-π, π].
    pub heading_rad: Option<f64>,
}

/// Wraps an angle to (-π, π].
pub fn normalize_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

pub fn parse_pose_log<R: Read>(input: R) -> Result<(Vec<PoseSample>, ParseSummary), IngestError> {
    let mut rdr = csv_reader(input);
    let headers = rdr.headers()?.clone();
    let cols = column_indices(&headers, &["timestamp", "lat", "lon"])?;
    let heading_col = headers.iter().position(|h| h.trim().eq_ignore_ascii_case("heading_rad"));
    let mut poses = Vec::new();
    let mut row_numbers = Vec::new();
    let mut rejected = Vec::new();
    let mut total = 0;
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        total += 1;
        let parsed = row.ok().and_then(|row| {
            let timestamp = parse_timestamp(row.get(cols[0])?)?;
            let lat: f64 = row.get(cols[1])?.parse().ok()?;
            let lon: f64 = row.get(cols[2])?.parse().ok()?;
            let heading_rad = match heading_col.and_then(|c| row.get(c)).filter(|s| !s.is_empty()) {
                Some(s) => Some(normalize_angle(s.parse::<f64>().ok().filter(|h| h.is_finite())?)),
                None => None,
            };
            Some(PoseSample { timestamp, position: GeoPoint::new(lat, lon).ok()?, heading_rad })
        });
        match parsed {
            Some(p) => {
                poses.push(p);
                row_numbers.push(row_no);
            }
            None => rejected.push(row_no),
        }
    }
    if poses.is_empty() {
        return Err(IngestError::NoPose);
    }
    if let Some(i) = poses.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(IngestError::Ordering { row: row_numbers[i + 1] });
    }
    let rows_ok = poses.len();
    Ok((poses, ParseSummary { rows_total: total, rows_ok, rows_rejected: rejected }))
}

/// Reads a sensor-only stream with `timestamp,eca_msm` columns.
pub fn parse_eca_stream<R: Read>(input: R) -> Result<(Vec<(f64, f64)>, ParseSummary), IngestError> {
    let mut rdr = csv_reader(input);
    let cols = column_indices(rdr.headers()?, &["timestamp", "eca_msm"])?;
    let mut samples = Vec::new();
    let mut row_numbers = Vec::new();
    let mut rejected = Vec::new();
    let mut total = 0;
    for (i, row) in rdr.records().enumerate() {
        total += 1;
        let parsed = row.ok().and_then(|row| {
            let t = parse_timestamp(row.get(cols[0])?)?;
            let v: f64 = row.get(cols[1])?.parse().ok()?;
            (0.0..=ECA_MAX_MSM).contains(&v).then_some((t, v))
        });
        match parsed {
            Some(s) => {
                samples.push(s);
                row_numbers.push(i + 1);
            }
            None => rejected.push(i + 1),
        }
    }
    if samples.is_empty() {
        return Err(IngestError::EmptySurvey);
    }
    if let Some(i) = samples.windows(2).position(|w| w[1].0 < w[0].0) {
        return Err(IngestError::Ordering { row: row_numbers[i + 1] });
    }
    let rows_ok = samples.len();
    Ok((samples, ParseSummary { rows_total: total, rows_ok, rows_rejected: rejected }))
}

/// Attaches a position to each `(timestamp, eca)` sample.
///
/// Samples bracketed by two poses that are both within `max_gap_s` are
/// linearly interpolated (in the local planar frame of the earlier pose);
/// if only one neighbouring pose is close enough its position is used;
/// otherwise the sample is dropped. Returns the survey and the drop count.
pub fn sync_streams(
    eca: &[(f64, f64)],
    poses: &[PoseSample],
    max_gap_s: f64,
    source: SurveySource,
) -> Result<(Survey, usize), IngestError> {
    if poses.is_empty() {
        return Err(IngestError::NoPose);
    }
    if !(max_gap_s > 0.0) {
        return Err(IngestError::InvalidGap);
    }
    let mut records = Vec::with_capacity(eca.len());
    let mut dropped = 0;
    for &(t, value) in eca {
        // first pose strictly after t
        let hi = poses.partition_point(|p| p.timestamp <= t);
        let before = hi.checked_sub(1).map(|i| &poses[i]);
        let after = poses.get(hi);
        let near = |p: &&PoseSample| (p.timestamp - t).abs() <= max_gap_s;
        let position = match (before.filter(near), after.filter(near)) {
            (Some(b), _) if b.timestamp == t => Some(b.position),
            (Some(b), Some(a)) => {
                let frac = (t - b.timestamp) / (a.timestamp - b.timestamp);
                let pa = project_to_plane(&b.position, &a.position)?;
                Some(unproject(&b.position, &crate::PlanarPoint::new(frac * pa.x_m, frac * pa.y_m))?)
            }
            (Some(b), None) => Some(b.position),
            (None, Some(a)) => Some(a.position),
            (None, None) => None,
        };
        match position {
            Some(position) => records.push(SurveyRecord { timestamp: t, position, eca_msm: value, source }),
            None => dropped += 1,
        }
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("source".to_string(), source.as_str().to_string());
    metadata.insert("sync_max_gap_s".to_string(), max_gap_s.to_string());
    Ok((Survey::new(records, metadata)?, dropped))
}
