//! `ecamap` command-line front end.
//!
//! Each subcommand runs one processing step on files and writes its
//! artifacts into `--out`; `pipeline` runs the whole chain from a JSON
//! config. Errors name the failing stage and exit with status 1.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ecamap::calibration::{
    apply_bias_correction, bias_at, interference_profile, paired_offset, parse_profile_table, table1_rows,
    SensorMountConfig, DEFAULT_PAIRING_BIN_M,
};
use ecamap::fieldsim::{SimScenario, Simulation, SurveyMode};
use ecamap::geocore::{points_geojson, read_ascii_grid, write_ascii_grid, GeoJsonPoint};
use ecamap::geostat::{dedup_points, raster_pearson, raster_stats, DEFAULT_BIN_WIDTH_M, DEFAULT_MAX_LAG_M};
use ecamap::ingest::{parse_eca_stream, parse_pose_log, sync_streams, write_survey_csv, DEFAULT_MAX_GAP_S};
use ecamap::pipeline::{
    krige_stage, load_survey, project_survey, run_pipeline, shared_grid, variogram_stage, BiasSource,
    KrigingSettings, PipelineConfig, PipelineError, Stage, SurveyInput, VariogramArtifact, VariogramSettings,
    DEFAULT_CELL_SIZE_M, DEFAULT_HISTOGRAM_BINS,
};
use ecamap::render::{render_map, render_panel, Palette, DEFAULT_CLASSES, DEFAULT_SCALE};
use ecamap::screening::screen_survey;
use ecamap::{Raster, Survey, SurveySource, VariogramModel};

#[derive(Parser)]
#[command(name = "ecamap", version, about = "Soil ECa survey processing and mapping")]
struct Cli {
    /// JSON config: pipeline config for `pipeline`, scenario for `simulate`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed (used by `simulate` and recorded by `pipeline`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: out, or the config's output_dir].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a survey log, or sync a sensor stream with a pose log.
    Ingest(IngestArgs),
    /// Remove log-domain outliers from a survey.
    Screen(ScreenArgs),
    /// Quantify or remove robot-induced bias.
    Calibrate(CalibrateArgs),
    /// Empirical variogram and exponential fit.
    Variogram(VariogramArgs),
    /// Simple kriging onto a regular grid.
    Krige(KrigeArgs),
    /// Compare two ASCII-grid maps cell by cell.
    Compare(CompareArgs),
    /// Generate a synthetic field and virtual surveys.
    Simulate(SimulateArgs),
    /// Render an ASCII grid to PNG.
    Render(RenderArgs),
    /// Run the full chain from a JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Handheld,
    Robot,
    Simulated,
}

impl From<SourceArg> for SurveySource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Handheld => SurveySource::Handheld,
            SourceArg::Robot => SurveySource::Robot,
            SourceArg::Simulated => SurveySource::Simulated,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PaletteArg {
    Spectral,
    Viridis,
    Grayscale,
}

impl From<PaletteArg> for Palette {
    fn from(p: PaletteArg) -> Self {
        match p {
            PaletteArg::Spectral => Palette::Spectral,
            PaletteArg::Viridis => Palette::Viridis,
            PaletteArg::Grayscale => Palette::Grayscale,
        }
    }
}

#[derive(Args)]
struct SurveyArg {
    /// Survey CSV (`timestamp,lat,lon,eca_msm`).
    input: PathBuf,
    #[arg(long, value_enum, default_value = "handheld")]
    source: SourceArg,
    /// Artifact name; defaults to the input file stem.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    survey: SurveyArg,
    /// Pose log; INPUT is then a `timestamp,eca_msm` stream.
    #[arg(long)]
    pose: Option<PathBuf>,
    /// Largest sensor-to-pose time gap in seconds.
    #[arg(long, default_value_t = DEFAULT_MAX_GAP_S)]
    max_gap: f64,
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    survey: SurveyArg,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Reference (hand-held) survey for a paired comparison.
    #[arg(long, requires = "robot")]
    reference: Option<PathBuf>,
    /// Robot survey for a paired comparison.
    #[arg(long, requires = "reference")]
    robot: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PAIRING_BIN_M)]
    bin_width: f64,
    /// Interference table CSV; the bundled table is used when absent.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Horizontal sensor distance from the chassis in mm.
    #[arg(long)]
    d_h_mm: Option<f64>,
    /// Sensor orientation in degrees.
    #[arg(long)]
    theta: Option<f64>,
    /// Subtract this offset (mS/m) from INPUT and write the corrected survey.
    #[arg(long, requires = "input", allow_hyphen_values = true)]
    offset: Option<f64>,
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct VariogramArgs {
    #[command(flatten)]
    survey: SurveyArg,
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH_M)]
    bin_width: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_LAG_M)]
    max_lag: f64,
}

#[derive(Args)]
struct KrigeArgs {
    #[command(flatten)]
    survey: SurveyArg,
    #[arg(long, default_value_t = DEFAULT_CELL_SIZE_M)]
    cell_size: f64,
    /// Variogram JSON (artifact or bare model); fitted when absent.
    #[arg(long)]
    variogram: Option<PathBuf>,
    #[arg(long)]
    neighbors: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {}

#[derive(Args)]
struct RenderArgs {
    /// ESRI ASCII grid.
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CLASSES)]
    classes: usize,
    #[arg(long, value_enum, default_value = "spectral")]
    palette: PaletteArg,
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    scale: usize,
    #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
    bins: usize,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    cell_size: Option<f64>,
    /// Fixed bias (mS/m) removed from every robot survey.
    #[arg(long, allow_hyphen_values = true)]
    offset: Option<f64>,
    #[arg(long)]
    classes: Option<usize>,
    /// Skip outlier screening.
    #[arg(long)]
    no_screen: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let (stage, result) = match cli.command {
        Command::Ingest(a) => (Stage::Ingest, ingest(&a, &out)),
        Command::Screen(a) => (Stage::Screen, screen(&a, &out)),
        Command::Calibrate(a) => (Stage::Calibrate, calibrate(&a, &out)),
        Command::Variogram(a) => (Stage::Variogram, variogram(&a, &out)),
        Command::Krige(a) => (Stage::Krige, krige(&a, &out)),
        Command::Compare(a) => (Stage::Compare, compare(&a, &out)),
        Command::Simulate(_) => {
            return simulate(cli.config.as_deref(), cli.seed, &out).context("simulate failed");
        }
        Command::Render(a) => (Stage::Render, render(&a, &out)),
        Command::Pipeline(a) => (Stage::Config, pipeline(&a, cli.config.as_deref(), cli.seed, cli.out.as_deref())),
    };
    // core pipeline errors already name their stage
    result.map_err(|e| if e.is::<PipelineError>() { e } else { e.context(failed(stage)) })
}

fn failed(stage: Stage) -> String {
    format!("{stage} stage failed")
}

fn artifact_name(explicit: &Option<String>, path: &Path) -> Result<String> {
    let name = match explicit {
        Some(n) => n.clone(),
        None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        bail!("name {name:?} must be non-empty [A-Za-z0-9_-]; pass --name");
    }
    Ok(name)
}

fn write_out(dir: &Path, file: &str, bytes: &[u8]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(file);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn pretty(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn read_survey(a: &SurveyArg) -> Result<(Survey, String)> {
    let name = artifact_name(&a.name, &a.input)?;
    let (survey, _) = load_survey(&a.input, a.source.into())?;
    Ok((survey, name))
}

fn ingest(a: &IngestArgs, out: &Path) -> Result<()> {
    let name = artifact_name(&a.survey.name, &a.survey.input)?;
    let source: SurveySource = a.survey.source.into();
    let open = |p: &Path| fs::File::open(p).with_context(|| p.display().to_string());
    let (survey, summary, dropped) = match &a.pose {
        Some(pose_path) => {
            let (eca, summary) = parse_eca_stream(open(&a.survey.input)?)?;
            let (poses, _) = parse_pose_log(open(pose_path)?)?;
            let (survey, dropped) = sync_streams(&eca, &poses, a.max_gap, source)?;
            (survey, summary, dropped)
        }
        None => {
            let (survey, summary) = load_survey(&a.survey.input, source)?;
            (survey, summary, 0)
        }
    };
    let file = format!("survey_{name}.csv");
    write_out(out, &file, write_survey_csv(&survey).as_bytes())?;
    let report = json!({
        "name": name,
        "output": file,
        "parse": summary,
        "dropped_unsynced": dropped,
        "n_records": survey.len(),
        "mean_eca_msm": survey.mean_eca(),
    });
    print!("{}", pretty(&report)?);
    Ok(())
}

fn screen(a: &ScreenArgs, out: &Path) -> Result<()> {
    let (survey, name) = read_survey(&a.survey)?;
    let (kept, report) = screen_survey(&survey)?;
    write_out(out, &format!("screened_{name}.csv"), write_survey_csv(&kept).as_bytes())?;
    let text = pretty(&report)?;
    write_out(out, &format!("screening_{name}.json"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn calibrate(a: &CalibrateArgs, out: &Path) -> Result<()> {
    if let (Some(offset), Some(input)) = (a.offset, &a.input) {
        let name = artifact_name(&None, input)?;
        let (survey, _) = load_survey(input, SurveySource::Robot)?;
        let bc = apply_bias_correction(&survey, offset);
        write_out(out, &format!("corrected_{name}.csv"), write_survey_csv(&bc.survey).as_bytes())?;
        let report = json!({
            "offset_msm": offset,
            "n_records": bc.survey.len(),
            "nonpositive_records": bc.nonpositive.len(),
            "mean_raw_msm": survey.mean_eca(),
            "mean_corrected_msm": bc.survey.mean_eca(),
        });
        print!("{}", pretty(&report)?);
        return Ok(());
    }
    if let (Some(reference), Some(robot)) = (&a.reference, &a.robot) {
        let (sa, _) = load_survey(reference, SurveySource::Handheld)?;
        let (sb, _) = load_survey(robot, SurveySource::Robot)?;
        let report = paired_offset(&sa, &sb, a.bin_width)?;
        let text = pretty(&report)?;
        write_out(out, "calibration.json", text.as_bytes())?;
        print!("{text}");
        return Ok(());
    }
    let rows = match &a.table {
        Some(p) => parse_profile_table(fs::File::open(p).with_context(|| p.display().to_string())?)?,
        None => table1_rows(),
    };
    let profile = interference_profile(&rows)?;
    let mut mount = SensorMountConfig::prototype();
    if let Some(d) = a.d_h_mm {
        mount.d_h_mm = d;
    }
    if let Some(t) = a.theta {
        mount.theta_deg = t;
    }
    let bias = bias_at(&profile, &mount)?;
    let report = json!({ "mount": mount, "bias_msm": bias, "profile": profile });
    let text = pretty(&report)?;
    write_out(out, "interference_profile.json", text.as_bytes())?;
    print!("{}", pretty(&json!({ "mount": mount, "bias_msm": bias }))?);
    Ok(())
}

fn survey_points(survey: &Survey) -> Result<Vec<ecamap::SamplePoint>> {
    let datum = survey.records().first().context("empty survey")?.position;
    Ok(project_survey(survey, &datum)?)
}

fn variogram(a: &VariogramArgs, out: &Path) -> Result<()> {
    let (survey, name) = read_survey(&a.survey)?;
    let points = dedup_points(&survey_points(&survey)?, KrigingSettings::default().dedup_radius_m);
    let settings = VariogramSettings { bin_width_m: a.bin_width, max_lag_m: a.max_lag, model: None };
    let art = variogram_stage(&points, &settings)?;
    write_out(out, &format!("variogram_{name}.json"), pretty(&art)?.as_bytes())?;
    let summary = json!({
        "model": art.model,
        "status": art.status,
        "effective_range_m": art.model.effective_range(),
        "sill": art.model.sill(),
        "weighted_residual": art.weighted_residual,
    });
    print!("{}", pretty(&summary)?);
    Ok(())
}

fn read_model(path: &Path) -> Result<VariogramModel> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    if let Ok(art) = serde_json::from_str::<VariogramArtifact>(&text) {
        return Ok(art.model);
    }
    serde_json::from_str::<VariogramModel>(&text)
        .with_context(|| format!("{}: neither a variogram artifact nor a model", path.display()))
}

fn krige(a: &KrigeArgs, out: &Path) -> Result<()> {
    let (survey, name) = read_survey(&a.survey)?;
    let points = survey_points(&survey)?;
    let mut settings = KrigingSettings::default();
    if let Some(k) = a.neighbors {
        settings.neighborhood_k = k;
    }
    let model = match &a.variogram {
        Some(p) => read_model(p)?,
        None => {
            let dedup = dedup_points(&points, settings.dedup_radius_m);
            let art = variogram_stage(&dedup, &VariogramSettings::default())?;
            write_out(out, &format!("variogram_{name}.json"), pretty(&art)?.as_bytes())?;
            art.model
        }
    };
    let grid = shared_grid(&[&points], a.cell_size)?;
    let (raster, summary) = krige_stage(&points, &model, &settings, &grid)?;
    write_out(out, &format!("map_{name}.asc"), write_ascii_grid(&raster).as_bytes())?;
    let geo: Vec<GeoJsonPoint> = survey
        .records()
        .iter()
        .map(|r| GeoJsonPoint { position: r.position, eca_msm: r.eca_msm, variance: None })
        .collect();
    write_out(out, &format!("points_{name}.geojson"), pretty(&points_geojson(&geo))?.as_bytes())?;
    print!("{}", pretty(&json!({ "model": model, "grid": grid, "kriging": summary }))?);
    Ok(())
}

fn read_raster(path: &Path) -> Result<Raster> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    read_ascii_grid(&text).with_context(|| path.display().to_string())
}

fn compare(a: &CompareArgs, out: &Path) -> Result<()> {
    let (ra, rb) = (read_raster(&a.a)?, read_raster(&a.b)?);
    let (sa, sb) = (raster_stats(&ra)?, raster_stats(&rb)?);
    let report = json!({
        "a": a.a.file_name().map(|f| f.to_string_lossy()),
        "b": a.b.file_name().map(|f| f.to_string_lossy()),
        "pearson_r": raster_pearson(&ra, &rb)?,
        "mean_difference_msm": sb.mean - sa.mean,
        "stats_a": sa,
        "stats_b": sb,
    });
    let text = pretty(&report)?;
    write_out(out, "compare.json", text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn simulate(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut scenario = match config {
        Some(p) => SimScenario::from_json(&fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => SimScenario::default(),
    };
    if let Some(s) = seed {
        scenario.seed = s;
    }
    let sim = Simulation::new(scenario)?;
    let truth = Raster::from_values(sim.truth.grid, sim.truth.values.clone())?;
    write_out(out, "truth.asc", write_ascii_grid(&truth).as_bytes())?;
    let mut summaries = Vec::new();
    for mode in [SurveyMode::Handheld, SurveyMode::Robot] {
        let vs = sim.survey(mode)?;
        let file = format!("{}.csv", mode.as_str());
        write_out(out, &file, write_survey_csv(&vs.survey).as_bytes())?;
        summaries.push(json!({
            "mode": mode.as_str(),
            "file": file,
            "n_records": vs.survey.len(),
            "mean_eca_msm": vs.survey.mean_eca(),
            "injected_bias_msm": vs.bias_msm,
            "position_clamped": vs.n_position_clamped,
            "range_clamped": vs.n_range_clamped,
        }));
    }
    let sc = &sim.scenario;
    write_out(out, "scenario.json", pretty(sc)?.as_bytes())?;
    // Ready-made config that maps both surveys in the truth frame.
    let cfg = PipelineConfig {
        surveys: vec![
            SurveyInput { name: "handheld".into(), path: "handheld.csv".into(), source: SurveySource::Handheld, bias: BiasSource::None },
            SurveyInput {
                name: "robot".into(),
                path: "robot.csv".into(),
                source: SurveySource::Robot,
                bias: BiasSource::Profile { mount: sc.mount, table: None },
            },
        ],
        datum: Some(sc.datum),
        output_dir: "maps".into(),
        seed: sc.seed,
        ..PipelineConfig::default()
    };
    write_out(out, "pipeline.json", pretty(&cfg)?.as_bytes())?;
    let report: Value = json!({ "seed": sc.seed, "truth": "truth.asc", "surveys": summaries });
    print!("{}", pretty(&report)?);
    Ok(())
}

fn render(a: &RenderArgs, out: &Path) -> Result<()> {
    let name = artifact_name(&a.name, &a.input)?;
    let name = name.strip_prefix("map_").unwrap_or(&name).to_string();
    let raster = read_raster(&a.input)?;
    let palette: Palette = a.palette.into();
    write_out(out, &format!("map_{name}.png"), &render_map(&raster, a.classes, palette, a.scale)?)?;
    write_out(out, &format!("panel_{name}.png"), &render_panel(&raster, a.classes, palette, a.bins)?)?;
    Ok(())
}

fn pipeline(a: &PipelineArgs, config: Option<&Path>, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let path = config.context("pipeline needs --config <file>")?;
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = PipelineConfig::from_json(&text, base)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    if let Some(c) = a.cell_size {
        cfg.cell_size_m = c;
    }
    if let Some(k) = a.classes {
        cfg.n_classes = k;
    }
    if a.no_screen {
        cfg.screening = false;
    }
    if let Some(offset) = a.offset {
        for s in cfg.surveys.iter_mut().filter(|s| s.source == SurveySource::Robot) {
            s.bias = BiasSource::Fixed { offset_msm: offset };
        }
    }
    let result = run_pipeline(&cfg)?;
    let summary: Vec<Value> = result
        .report
        .surveys
        .iter()
        .map(|s| json!({ "name": s.name, "bias_msm": s.bias.offset_msm, "map_mean_msm": s.map_stats.mean }))
        .collect();
    let comparisons: Vec<Value> = result
        .report
        .comparisons
        .iter()
        .map(|c| json!({ "a": c.a, "b": c.b, "map_pearson_r": c.map_pearson_r }))
        .collect();
    print!(
        "{}",
        pretty(&json!({ "output_dir": cfg.output_dir, "surveys": summary, "comparisons": comparisons }))?
    );
    Ok(())
}
