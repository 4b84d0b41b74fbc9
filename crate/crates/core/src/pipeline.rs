//! End-to-end survey processing.
//!
//! `run_pipeline` takes one or more survey logs through
//! ingest → screen → bias correction → variogram → kriging → statistics and
//! comparison → rendering, writing each survey's artifacts as soon as they
//! exist and a `report.json` at the end. All surveys are kriged onto one
//! shared grid so that rasters compare cell by cell. Outputs hold no
//! wall-clock values or absolute paths, so repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    apply_bias_correction, bias_at, interference_profile, paired_offset, parse_profile_table, table1_rows,
    CalibrationReport, SensorMountConfig, DEFAULT_PAIRING_BIN_M,
};
use crate::geocore::{
    grid_from_bounds, points_geojson, project_to_plane, write_ascii_grid, GeoJsonPoint,
};
use crate::geostat::{
    dedup_points, empirical_variogram, fit_exponential, histogram, quantile_classes, raster_pearson, raster_stats,
    simple_krige, FitStatus, Histogram, DEFAULT_BIN_WIDTH_M, DEFAULT_MAX_LAG_M,
};
use crate::ingest::{parse_survey_log, ParseSummary};
use crate::render::{render_map, render_panel, Palette, DEFAULT_CLASSES, DEFAULT_SCALE};
use crate::screening::screen_survey;
use crate::{
    EmpiricalVariogram, GeoPoint, GridSpec, KrigingConfig, PlanarPoint, Raster, RasterStats, SamplePoint,
    ScreeningReport, Survey, SurveySource, VariogramModel,
};

pub const DEFAULT_CELL_SIZE_M: f64 = 0.5;
pub const DEFAULT_HISTOGRAM_BINS: usize = 20;
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Screen,
    Calibrate,
    Variogram,
    Krige,
    Compare,
    Render,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Screen => "screen",
            Stage::Calibrate => "calibrate",
            Stage::Variogram => "variogram",
            Stage::Krige => "krige",
            Stage::Compare => "compare",
            Stage::Render => "render",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        Self { stage, message: message.to_string() }
    }
}

fn at<E: fmt::Display>(stage: Stage, context: &str) -> impl FnOnce(E) -> PipelineError + '_ {
    move |e| PipelineError::new(stage, format!("{context}: {e}"))
}

/// How a survey's additive bias is determined.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BiasSource {
    #[default]
    None,
    Fixed { offset_msm: f64 },
    /// Interference table (bundled one when `table` is absent) evaluated at a mount.
    Profile {
        #[serde(default = "SensorMountConfig::prototype")]
        mount: SensorMountConfig,
        #[serde(default)]
        table: Option<PathBuf>,
    },
    /// Paired-survey offset against another (named) survey.
    Paired { reference: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyInput {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_source")]
    pub source: SurveySource,
    #[serde(default)]
    pub bias: BiasSource,
}

fn default_source() -> SurveySource {
    SurveySource::Handheld
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariogramSettings {
    pub bin_width_m: f64,
    pub max_lag_m: f64,
    /// Fixed model; the model is fitted when absent.
    pub model: Option<VariogramModel>,
}

impl Default for VariogramSettings {
    fn default() -> Self {
        Self { bin_width_m: DEFAULT_BIN_WIDTH_M, max_lag_m: DEFAULT_MAX_LAG_M, model: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KrigingSettings {
    pub neighborhood_k: usize,
    /// Defaults to three effective ranges of the model.
    pub max_search_radius_m: Option<f64>,
    pub dedup_radius_m: f64,
    /// Known mean; defaults to the mean of the processed survey values.
    pub mean_msm: Option<f64>,
}

impl Default for KrigingSettings {
    fn default() -> Self {
        Self {
            neighborhood_k: crate::geostat::DEFAULT_NEIGHBORHOOD_K,
            max_search_radius_m: None,
            dedup_radius_m: crate::geostat::DEFAULT_DEDUP_RADIUS_M,
            mean_msm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub surveys: Vec<SurveyInput>,
    /// Projection origin; defaults to the first record of the first survey.
    pub datum: Option<GeoPoint>,
    pub screening: bool,
    pub variogram: VariogramSettings,
    pub cell_size_m: f64,
    pub kriging: KrigingSettings,
    pub n_classes: usize,
    pub palette: Palette,
    pub png_scale: usize,
    pub histogram_bins: usize,
    pub pairing_bin_m: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            surveys: Vec::new(),
            datum: None,
            screening: true,
            variogram: VariogramSettings::default(),
            cell_size_m: DEFAULT_CELL_SIZE_M,
            kriging: KrigingSettings::default(),
            n_classes: DEFAULT_CLASSES,
            palette: Palette::default(),
            png_scale: DEFAULT_SCALE,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            pairing_bin_m: DEFAULT_PAIRING_BIN_M,
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Parses a JSON config. Relative survey and table paths are resolved
    /// against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: PipelineConfig = serde_json::from_str(text).map_err(at(Stage::Config, "invalid JSON"))?;
        for s in &mut cfg.surveys {
            if s.path.is_relative() {
                s.path = base_dir.join(&s.path);
            }
            if let BiasSource::Profile { table: Some(t), .. } = &mut s.bias {
                if t.is_relative() {
                    *t = base_dir.join(&*t);
                }
            }
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base_dir.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::new(Stage::Config, m));
        if self.surveys.is_empty() {
            return err("no surveys configured".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.surveys {
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return err(format!("survey name {:?} must be non-empty [A-Za-z0-9_-]", s.name));
            }
            if !names.insert(s.name.as_str()) {
                return err(format!("duplicate survey name {:?}", s.name));
            }
            if !s.path.exists() {
                return err(format!("survey file {} does not exist", s.path.display()));
            }
            match &s.bias {
                BiasSource::Paired { reference } => {
                    match self.surveys.iter().find(|o| &o.name == reference) {
                        None => return err(format!("{}: unknown reference survey {reference:?}", s.name)),
                        Some(o) if matches!(o.bias, BiasSource::Paired { .. }) => {
                            return err(format!("{}: reference {reference:?} is itself paired", s.name))
                        }
                        Some(_) => {}
                    }
                }
                BiasSource::Fixed { offset_msm } if !offset_msm.is_finite() => {
                    return err(format!("{}: offset must be finite", s.name))
                }
                BiasSource::Profile { table: Some(t), .. } if !t.exists() => {
                    return err(format!("{}: interference table {} does not exist", s.name, t.display()))
                }
                _ => {}
            }
        }
        if !(self.cell_size_m > 0.0) || !self.cell_size_m.is_finite() {
            return err("cell_size_m must be positive".into());
        }
        if self.n_classes == 0 || self.png_scale == 0 || self.histogram_bins == 0 {
            return err("n_classes, png_scale and histogram_bins must be positive".into());
        }
        if !(self.pairing_bin_m > 0.0) {
            return err("pairing_bin_m must be positive".into());
        }
        if !(self.variogram.bin_width_m > 0.0) || !(self.variogram.max_lag_m > 0.0) {
            return err("variogram bin width and max lag must be positive".into());
        }
        Ok(())
    }
}

/// Reads one survey log.
pub fn load_survey(path: &Path, source: SurveySource) -> Result<(Survey, ParseSummary), PipelineError> {
    let file = fs::File::open(path).map_err(at(Stage::Ingest, &path.display().to_string()))?;
    parse_survey_log(file, source).map_err(at(Stage::Ingest, &path.display().to_string()))
}

/// Samples in the plane of `datum`.
pub fn project_survey(survey: &Survey, datum: &GeoPoint) -> Result<Vec<SamplePoint>, PipelineError> {
    survey
        .records()
        .iter()
        .map(|r| Ok(SamplePoint::new(project_to_plane(datum, &r.position)?, r.eca_msm)))
        .collect::<Result<_, crate::geocore::GeoError>>()
        .map_err(at(Stage::Krige, "projection"))
}

/// Grid anchored at the south-west corner of all samples, covering them.
pub fn shared_grid(point_sets: &[&[SamplePoint]], cell_size_m: f64) -> Result<GridSpec, PipelineError> {
    let mut min = PlanarPoint::new(f64::INFINITY, f64::INFINITY);
    let mut max = PlanarPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in point_sets.iter().flat_map(|s| s.iter()) {
        min = PlanarPoint::new(min.x_m.min(p.position.x_m), min.y_m.min(p.position.y_m));
        max = PlanarPoint::new(max.x_m.max(p.position.x_m), max.y_m.max(p.position.y_m));
    }
    // keep points on the max edge inside the last cell
    let max = PlanarPoint::new(max.x_m + 1e-9, max.y_m + 1e-9);
    grid_from_bounds(min, max, cell_size_m).map_err(at(Stage::Krige, "grid"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariogramArtifact {
    pub empirical: EmpiricalVariogram,
    pub model: VariogramModel,
    /// `fixed` when the model came from the configuration.
    pub status: String,
    pub weighted_residual: Option<f64>,
}

/// Variogram of deduplicated samples; fits unless a model is given.
pub fn variogram_stage(points: &[SamplePoint], settings: &VariogramSettings) -> Result<VariogramArtifact, PipelineError> {
    let empirical = empirical_variogram(points, settings.bin_width_m, settings.max_lag_m)
        .map_err(at(Stage::Variogram, "empirical variogram"))?;
    match settings.model {
        Some(model) => {
            model.validate().map_err(at(Stage::Variogram, "configured model"))?;
            Ok(VariogramArtifact { empirical, model, status: "fixed".into(), weighted_residual: None })
        }
        None => {
            let fit = fit_exponential(&empirical).map_err(at(Stage::Variogram, "exponential fit"))?;
            let status = match fit.status {
                FitStatus::Converged => "converged",
                FitStatus::NuggetOnly => "nugget_only",
                FitStatus::Degenerate => "degenerate",
            };
            Ok(VariogramArtifact {
                empirical,
                model: fit.model,
                status: status.into(),
                weighted_residual: Some(fit.weighted_residual),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingSummary {
    pub mean_msm: f64,
    pub neighborhood_k: usize,
    pub max_search_radius_m: f64,
    pub dedup_radius_m: f64,
    pub n_points: usize,
    pub n_points_dedup: usize,
    pub jittered_cells: usize,
    pub failed_cells: usize,
    pub missing_cells: usize,
}

/// Dedups and kriges samples onto `grid`.
pub fn krige_stage(
    points: &[SamplePoint],
    model: &VariogramModel,
    settings: &KrigingSettings,
    grid: &GridSpec,
) -> Result<(Raster, KrigingSummary), PipelineError> {
    let values: Vec<f64> = points.iter().map(|p| p.value).collect();
    let mean = match settings.mean_msm {
        Some(m) => m,
        None => crate::stats::mean(&values).ok_or_else(|| PipelineError::new(Stage::Krige, "no samples"))?,
    };
    let mut cfg = KrigingConfig::for_model(mean, model);
    cfg.neighborhood_k = settings.neighborhood_k;
    cfg.dedup_radius_m = settings.dedup_radius_m;
    if let Some(r) = settings.max_search_radius_m {
        cfg.max_search_radius_m = r;
    } else if !(cfg.max_search_radius_m > 0.0) {
        // flat model: correlation length is meaningless, search everywhere
        cfg.max_search_radius_m = grid.width_m().hypot(grid.height_m()).max(1.0);
    }
    let dedup = dedup_points(points, cfg.dedup_radius_m);
    let out = simple_krige(&dedup, model, &cfg, grid).map_err(at(Stage::Krige, "simple kriging"))?;
    let summary = KrigingSummary {
        mean_msm: mean,
        neighborhood_k: cfg.neighborhood_k,
        max_search_radius_m: cfg.max_search_radius_m,
        dedup_radius_m: cfg.dedup_radius_m,
        n_points: points.len(),
        n_points_dedup: dedup.len(),
        jittered_cells: out.jittered_cells.len(),
        failed_cells: out.failed_cells.len(),
        missing_cells: grid.n_cells() - out.raster.n_present(),
    };
    Ok((out.raster, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub kind: String,
    pub offset_msm: f64,
    pub nonpositive_records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyReport {
    pub name: String,
    pub input_file: String,
    pub source: SurveySource,
    pub ingest: ParseSummary,
    pub screening: Option<ScreeningReport>,
    pub bias: BiasSummary,
    pub n_records: usize,
    pub mean_raw_msm: f64,
    pub mean_processed_msm: f64,
    pub variogram: VariogramModel,
    pub variogram_status: String,
    pub kriging: KrigingSummary,
    pub map_stats: RasterStats,
    pub class_breaks: Vec<f64>,
    pub histogram: Histogram<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: String,
    pub b: String,
    pub map_pearson_r: Option<f64>,
    /// `mean(b) − mean(a)` over the two maps.
    pub map_mean_difference_msm: f64,
    /// Paired along-path comparison of the screened surveys before bias correction.
    pub paired_raw: Option<CalibrationReport>,
    /// Same after bias correction.
    pub paired_corrected: Option<CalibrationReport>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub datum: GeoPoint,
    pub spec: GridSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub screening_enabled: bool,
    pub grid: GridReport,
    pub surveys: Vec<SurveyReport>,
    pub comparisons: Vec<ComparisonReport>,
    /// Output file names relative to the output directory, sorted.
    pub artifacts: Vec<String>,
}

/// Everything the run produced, in memory.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: RunReport,
    pub rasters: BTreeMap<String, Raster>,
    pub surveys: BTreeMap<String, Survey>,
}

struct Prepared {
    input: SurveyInput,
    ingest: ParseSummary,
    raw_mean: f64,
    screening: Option<ScreeningReport>,
    screened: Survey,
}

fn resolve_bias(p: &Prepared, prepared: &[Prepared], pairing_bin_m: f64) -> Result<(String, f64), PipelineError> {
    match &p.input.bias {
        BiasSource::None => Ok(("none".into(), 0.0)),
        BiasSource::Fixed { offset_msm } => Ok(("fixed".into(), *offset_msm)),
        BiasSource::Profile { mount, table } => {
            let rows = match table {
                None => table1_rows(),
                Some(path) => {
                    let f = fs::File::open(path).map_err(at(Stage::Calibrate, &path.display().to_string()))?;
                    parse_profile_table(f).map_err(at(Stage::Calibrate, &path.display().to_string()))?
                }
            };
            let profile = interference_profile(&rows).map_err(at(Stage::Calibrate, "interference profile"))?;
            Ok(("profile".into(), bias_at(&profile, mount).map_err(at(Stage::Calibrate, &p.input.name))?))
        }
        BiasSource::Paired { reference } => {
            let r = prepared.iter().find(|q| &q.input.name == reference).expect("validated reference");
            let rep = paired_offset(&r.screened, &p.screened, pairing_bin_m)
                .map_err(at(Stage::Calibrate, &format!("{} vs {reference}", p.input.name)))?;
            Ok(("paired".into(), rep.offset))
        }
    }
}

fn write_artifact(dir: &Path, name: String, bytes: &[u8], manifest: &mut Vec<String>) -> Result<(), PipelineError> {
    fs::write(dir.join(&name), bytes).map_err(at(Stage::Write, &name))?;
    manifest.push(name);
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>, PipelineError> {
    let mut s = serde_json::to_string_pretty(v).map_err(at(Stage::Write, "serialize"))?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Runs every stage and writes the artifacts into `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    cfg.validate()?;
    let out_dir = &cfg.output_dir;
    fs::create_dir_all(out_dir).map_err(at(Stage::Write, &out_dir.display().to_string()))?;
    let mut manifest = Vec::new();

    let mut prepared = Vec::with_capacity(cfg.surveys.len());
    for input in &cfg.surveys {
        let (survey, ingest) = load_survey(&input.path, input.source)?;
        let raw_mean = survey.mean_eca().expect("non-empty survey");
        let (screened, screening) = if cfg.screening {
            let (s, r) = screen_survey(&survey).map_err(at(Stage::Screen, &input.name))?;
            (s, Some(r))
        } else {
            (survey, None)
        };
        prepared.push(Prepared { input: input.clone(), ingest, raw_mean, screening, screened });
    }

    let mut corrected = Vec::with_capacity(prepared.len());
    let mut biases = Vec::with_capacity(prepared.len());
    for p in &prepared {
        let (kind, offset) = resolve_bias(p, &prepared, cfg.pairing_bin_m)?;
        let bc = apply_bias_correction(&p.screened, offset);
        biases.push(BiasSummary { kind, offset_msm: offset, nonpositive_records: bc.nonpositive.len() });
        corrected.push(bc.survey);
    }

    let datum = match cfg.datum {
        Some(d) => d,
        None => corrected[0].records()[0].position,
    };
    let points: Vec<Vec<SamplePoint>> =
        corrected.iter().map(|s| project_survey(s, &datum)).collect::<Result<_, _>>()?;
    let point_refs: Vec<&[SamplePoint]> = points.iter().map(|p| p.as_slice()).collect();
    let grid = shared_grid(&point_refs, cfg.cell_size_m)?;

    let mut reports = Vec::with_capacity(prepared.len());
    let mut rasters = BTreeMap::new();
    for (i, p) in prepared.iter().enumerate() {
        let name = &p.input.name;
        let dedup = dedup_points(&points[i], cfg.kriging.dedup_radius_m);
        let vario = variogram_stage(&dedup, &cfg.variogram).map_err(|e| PipelineError::new(e.stage, format!("{name}: {}", e.message)))?;
        write_artifact(out_dir, format!("variogram_{name}.json"), &to_json(&vario)?, &mut manifest)?;

        let (raster, kriging) = krige_stage(&points[i], &vario.model, &cfg.kriging, &grid)
            .map_err(|e| PipelineError::new(e.stage, format!("{name}: {}", e.message)))?;
        write_artifact(out_dir, format!("map_{name}.asc"), write_ascii_grid(&raster).as_bytes(), &mut manifest)?;

        let geo: Vec<GeoJsonPoint> = corrected[i]
            .records()
            .iter()
            .map(|r| GeoJsonPoint { position: r.position, eca_msm: r.eca_msm, variance: None })
            .collect();
        write_artifact(out_dir, format!("points_{name}.geojson"), &to_json(&points_geojson(&geo))?, &mut manifest)?;

        let map_stats = raster_stats(&raster).map_err(at(Stage::Compare, name))?;
        let class_breaks = if cfg.n_classes >= 2 {
            quantile_classes(&raster, cfg.n_classes).map_err(at(Stage::Compare, name))?
        } else {
            Vec::new()
        };
        let hist = histogram(&raster, cfg.histogram_bins).map_err(at(Stage::Compare, name))?;

        let png = render_map(&raster, cfg.n_classes, cfg.palette, cfg.png_scale).map_err(at(Stage::Render, name))?;
        write_artifact(out_dir, format!("map_{name}.png"), &png, &mut manifest)?;
        let panel = render_panel(&raster, cfg.n_classes, cfg.palette, cfg.histogram_bins).map_err(at(Stage::Render, name))?;
        write_artifact(out_dir, format!("panel_{name}.png"), &panel, &mut manifest)?;

        reports.push(SurveyReport {
            name: name.clone(),
            input_file: p.input.path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            source: p.input.source,
            ingest: p.ingest.clone(),
            screening: p.screening.clone(),
            bias: biases[i].clone(),
            n_records: corrected[i].len(),
            mean_raw_msm: p.raw_mean,
            mean_processed_msm: corrected[i].mean_eca().expect("non-empty survey"),
            variogram: vario.model,
            variogram_status: vario.status,
            kriging,
            map_stats,
            class_breaks,
            histogram: hist,
        });
        rasters.insert(name.clone(), raster);
    }

    let mut comparisons = Vec::new();
    for i in 0..prepared.len() {
        for j in i + 1..prepared.len() {
            let (a, b) = (&prepared[i].input.name, &prepared[j].input.name);
            let mut notes = Vec::new();
            let map_pearson_r = match raster_pearson(&rasters[a], &rasters[b]) {
                Ok(r) => Some(r),
                Err(e) => {
                    notes.push(format!("map correlation: {e}"));
                    None
                }
            };
            let mut paired = |x: &Survey, y: &Survey, label: &str| match paired_offset(x, y, cfg.pairing_bin_m) {
                Ok(r) => Some(r),
                Err(e) => {
                    notes.push(format!("{label}: {e}"));
                    None
                }
            };
            let paired_raw = paired(&prepared[i].screened, &prepared[j].screened, "paired_raw");
            let paired_corrected = paired(&corrected[i], &corrected[j], "paired_corrected");
            comparisons.push(ComparisonReport {
                a: a.clone(),
                b: b.clone(),
                map_pearson_r,
                map_mean_difference_msm: reports[j].map_stats.mean - reports[i].map_stats.mean,
                paired_raw,
                paired_corrected,
                notes,
            });
        }
    }

    manifest.push(REPORT_FILE.to_string());
    manifest.sort();
    let report = RunReport {
        seed: cfg.seed,
        screening_enabled: cfg.screening,
        grid: GridReport { datum, spec: grid },
        surveys: reports,
        comparisons,
        artifacts: manifest,
    };
    fs::write(out_dir.join(REPORT_FILE), to_json(&report)?).map_err(at(Stage::Write, REPORT_FILE))?;

    let surveys = prepared.iter().zip(corrected).map(|(p, s)| (p.input.name.clone(), s)).collect();
    Ok(PipelineOutput { report, rasters, surveys })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{write_survey_csv, SurveyRecord};
    use crate::geocore::unproject;

    fn synthetic(dir: &Path, name: &str, shift: f64) -> PathBuf {
        let datum = GeoPoint::new(33.97, -117.32).unwrap();
        let mut records = Vec::new();
        let mut t = 0.0;
        for row in 0..6 {
            for k in 0..=20 {
                let x = if row % 2 == 0 { k as f64 } else { 20.0 - k as f64 };
                let y = row as f64 * 2.0;
                let v = 20.0 + 3.0 * (x / 4.0).sin() + 2.0 * (y / 3.0).cos() + shift;
                records.push(SurveyRecord {
                    timestamp: t,
                    position: unproject(&datum, &PlanarPoint::new(x, y)).unwrap(),
                    eca_msm: v,
                    source: SurveySource::Handheld,
                });
                t += 1.0;
            }
        }
        let path = dir.join(format!("{name}.csv"));
        fs::write(&path, write_survey_csv(&Survey::new(records, BTreeMap::new()).unwrap())).unwrap();
        path
    }

    fn config(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            surveys: vec![
                SurveyInput { name: "a".into(), path: synthetic(dir, "a", 0.0), source: SurveySource::Handheld, bias: BiasSource::None },
                SurveyInput {
                    name: "b".into(),
                    path: synthetic(dir, "b", 10.0),
                    source: SurveySource::Robot,
                    bias: BiasSource::Paired { reference: "a".into() },
                },
            ],
            cell_size_m: 1.0,
            png_scale: 2,
            output_dir: dir.join("out"),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn shifted_twin_is_recovered() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline(&config(dir.path())).unwrap();
        let cmp = &out.report.comparisons[0];
        assert!((cmp.paired_raw.as_ref().unwrap().offset - 10.0).abs() < 1e-9);
        assert!(cmp.paired_corrected.as_ref().unwrap().offset.abs() < 1e-9);
        assert!(cmp.map_pearson_r.unwrap() > 0.999);
        assert!((out.report.surveys[1].bias.offset_msm - 10.0).abs() < 1e-9);
        for f in &out.report.artifacts {
            assert!(dir.path().join("out").join(f).exists(), "{f}");
        }
        assert_eq!(out.report.artifacts.len(), 11);
    }

    #[test]
    fn screening_is_a_noop_on_clean_data() {
        let dir = tempfile::tempdir().unwrap();
        let on = run_pipeline(&config(dir.path())).unwrap();
        let mut cfg = config(dir.path());
        cfg.screening = false;
        let off = run_pipeline(&cfg).unwrap();
        assert_eq!(on.report.surveys[0].screening.as_ref().unwrap().n_removed, 0);
        assert_eq!(on.rasters, off.rasters);
    }

    #[test]
    fn errors_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(dir.path());
        cfg.surveys[0].path = dir.path().join("missing.csv");
        assert_eq!(run_pipeline(&cfg).unwrap_err().stage, Stage::Config);

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "timestamp,lat\n1,2\n").unwrap();
        let mut cfg = config(dir.path());
        cfg.surveys[0].path = bad;
        let e = run_pipeline(&cfg).unwrap_err();
        assert_eq!(e.stage, Stage::Ingest);
        assert!(e.to_string().starts_with("ingest stage failed"));
    }

    #[test]
    fn config_json_resolves_paths() {
        let cfg = PipelineConfig::from_json(
            r#"{"surveys": [{"name": "h", "path": "h.csv"},
                            {"name": "r", "path": "r.csv", "source": "robot", "bias": {"kind": "profile"}}],
                "cell_size_m": 0.5}"#,
            Path::new("/data"),
        )
        .unwrap();
        assert_eq!(cfg.surveys[0].path, Path::new("/data/h.csv"));
        assert_eq!(cfg.surveys[1].bias, BiasSource::Profile { mount: SensorMountConfig::prototype(), table: None });
        assert_eq!(cfg.output_dir, Path::new("/data/out"));
        assert!(cfg.screening);
    }
}
