//! Batch orchestration: pipeline configuration, per-dataset processing
//! (ingest -> segment -> unalias -> background -> denoise -> flow -> resp),
//! text/CSV/PGM/SVG artifact emission, and the subcommand entry points used
//! by the `rtpc` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::core_model::{MagnitudeSeries, Roi, SeriesHeader, Signal1D, VelocitySeries};
use crate::correction::{
    apply_background, denoise, fit_background, select_stationary_tissue, unalias,
    BackgroundModel, BackgroundOrder, DenoiseMode,
};
use crate::dicom::{load_series, read_portable, write_portable, IngestConfig};
use crate::flow_quant::{compute_flow_curve, FlowCurve};
use crate::phantom::{generate, PhantomConfig};
use crate::plot::{line_chart, Series};
use crate::resp_analysis::{
    average_ccfc, cycle_parameter, label_cycles, resample_resp, resp_period_s, segment_cycles,
    sweep_delay, Cycle, DiffAnalysis, RespParameter, RespPhase, ALL_PARAMETERS, CCFC_POINTS,
    RESP_BAND_HZ,
};
use crate::segmentation::{
    segment_cardiac_frequency, segment_region_growing, FreqSegParams, GrowParams,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("malformed csv {path}: {reason}")]
    MalformedCsv { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Stage {
            stage,
            message: err.to_string(),
        }
    }
}

// --- configuration ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum SegmentationConfig {
    Grow(GrowParams),
    Frequency(FreqSegParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrectionSettings {
    /// Stationary-tissue search ring around the ROI, mm.
    pub ring_mm: f64,
    /// Max temporal velocity std for a stationary pixel, cm/s.
    pub std_threshold_cm_s: f64,
    /// Min temporal-mean magnitude percentile within the ring.
    pub mag_percentile: f64,
    pub order: BackgroundOrder,
    pub denoise: Option<DenoiseMode>,
    pub unalias: bool,
}

impl Default for CorrectionSettings {
    fn default() -> Self {
        Self {
            ring_mm: 5.0,
            std_threshold_cm_s: 0.3,
            mag_percentile: 25.0,
            order: BackgroundOrder::Plane,
            denoise: None,
            unalias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespSettings {
    /// CSV file `time_s,value` with uniformly spaced samples.
    pub resp_file: PathBuf,
    /// Delay sweep step; defaults to one frame duration.
    #[serde(default)]
    pub grid_step_s: Option<f64>,
    #[serde(default = "default_min_cycles")]
    pub min_cycles: usize,
    #[serde(default = "default_slope_epsilon")]
    pub slope_epsilon: f64,
    #[serde(default = "default_cardiac_band")]
    pub cardiac_band_hz: (f64, f64),
}

fn default_min_cycles() -> usize {
    3
}
fn default_slope_epsilon() -> f64 {
    0.05
}
fn default_cardiac_band() -> (f64, f64) {
    (0.5, 2.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// `.rtp` file, DICOM directory, multi-frame DICOM file, or DICOMDIR.
    pub input: PathBuf,
    #[serde(default)]
    pub ingest: IngestConfig,
    pub segmentation: SegmentationConfig,
    #[serde(default)]
    pub correction: CorrectionSettings,
    #[serde(default)]
    pub resp: Option<RespSettings>,
    pub output_dir: PathBuf,
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Canonical hash of the analysis settings for the run manifest.
    /// The output directory is excluded: it routes artifacts but does not
    /// change any result.
    pub fn sha256_hex(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hex(&hasher.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(out, "{b:02x}");
    }
    out
}

// --- atomic artifact writing ---

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".to_string(),
    });
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

// --- per-dataset pipeline ---

#[derive(Debug, Clone)]
pub struct DiffRow {
    pub parameter: RespParameter,
    pub intensity_percent: f64,
    pub delay_s: f64,
    pub n_ex: usize,
    pub n_in: usize,
}

#[derive(Debug)]
pub struct DatasetReport {
    pub id: String,
    pub header: SeriesHeader,
    pub roi: Roi,
    pub flow: FlowCurve,
    pub background: BackgroundModel,
    pub cycles: Option<Vec<Cycle>>,
    pub diff: Option<DiffAnalysis>,
    pub diff_rows: Vec<DiffRow>,
    /// (stage, seconds); reported in the manifest only, never in results.tsv.
    pub timings: Vec<(&'static str, f64)>,
}

/// Reads a `time_s,value` CSV into a uniformly sampled signal.
pub fn read_signal_csv(path: &Path) -> Result<Signal1D, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::MalformedCsv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let bad = |reason: &str| CliError::MalformedCsv {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if i == 0 && line.chars().any(|c| c.is_ascii_alphabetic()) {
            continue; // header row
        }
        let mut parts = line.split(',');
        let t: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("unparseable time column"))?;
        let v: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("unparseable value column"))?;
        times.push(t);
        values.push(v);
    }
    if values.len() < 2 {
        return Err(bad("need at least two samples"));
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return Err(bad("non-increasing time column"));
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt.max(1.0) {
            return Err(bad("time column is not uniformly spaced"));
        }
    }
    Signal1D::new(values, dt, times[0]).map_err(|e| bad(&e.to_string()))
}

fn ingest_input(
    input: &Path,
    config: &IngestConfig,
) -> Result<(VelocitySeries, MagnitudeSeries), CliError> {
    if input.extension().map(|e| e == "rtp").unwrap_or(false) {
        read_portable(input).map_err(|e| CliError::stage("ingest", e))
    } else {
        load_series(input, config).map_err(|e| CliError::stage("ingest", e))
    }
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn write_flow_csv(out_dir: &Path, header: &SeriesHeader, flow: &FlowCurve) -> Result<(), CliError> {
    let mut csv = String::from("time_s,flow_ml_min,area_mm2,max_vel_cm_s\n");
    for (t, q) in flow.flow.samples.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            fixed(header.frame_time_s(t)),
            fixed(*q),
            fixed(flow.roi_area_mm2[t]),
            fixed(flow.max_velocity_cm_s[t]),
        );
    }
    write_atomic(&out_dir.join("flow.csv"), csv.as_bytes())
}

fn write_masks(out_dir: &Path, roi: &Roi) -> Result<(), CliError> {
    let dir = out_dir.join("masks");
    match roi {
        Roi::Static(m) => write_atomic(&dir.join("roi.pgm"), &m.to_pgm()),
        Roi::Dynamic(ms) => {
            for (t, m) in ms.iter().enumerate() {
                write_atomic(&dir.join(format!("frame_{t:04}.pgm")), &m.to_pgm())?;
            }
            Ok(())
        }
    }
}

fn write_flow_plot(
    out_dir: &Path,
    header: &SeriesHeader,
    flow: &FlowCurve,
) -> Result<(), CliError> {
    let series = Series {
        label: "flow".to_string(),
        x: (0..flow.flow.len()).map(|t| header.frame_time_s(t)).collect(),
        y: flow.flow.samples.clone(),
    };
    let svg = line_chart("Flow rate", "time (s)", "flow (mL/min)", &[series])
        .map_err(|e| CliError::stage("plot", e))?;
    write_atomic(&out_dir.join("plots").join("flow.svg"), svg.as_bytes())
}

fn write_diff_artifacts(out_dir: &Path, diff: &DiffAnalysis) -> Result<(), CliError> {
    let mut csv = String::from("parameter,delay_s,diff_percent\n");
    for p in &diff.points {
        let _ = writeln!(
            csv,
            "{},{},{}",
            p.parameter.as_str(),
            fixed(p.delay_s),
            fixed(p.diff_percent)
        );
    }
    write_atomic(&out_dir.join("diff_curves.csv"), csv.as_bytes())?;

    for parameter in ALL_PARAMETERS {
        let pts: Vec<&crate::resp_analysis::DiffPoint> = diff
            .points
            .iter()
            .filter(|p| p.parameter == parameter)
            .collect();
        if pts.is_empty() {
            continue;
        }
        let series = Series {
            label: parameter.as_str().to_string(),
            x: pts.iter().map(|p| p.delay_s).collect(),
            y: pts.iter().map(|p| p.diff_percent).collect(),
        };
        let svg = line_chart(
            &format!("Diff_Ex-In: {}", parameter.as_str()),
            "delay (s)",
            "Diff (%)",
            &[series],
        )
        .map_err(|e| CliError::stage("plot", e))?;
        write_atomic(
            &out_dir
                .join("plots")
                .join(format!("diff_{}.svg", parameter.as_str())),
            svg.as_bytes(),
        )?;
    }
    Ok(())
}

fn write_ccfc_plot(
    out_dir: &Path,
    flow: &Signal1D,
    cycles: &[Cycle],
    phases: &[RespPhase],
) -> Result<(), CliError> {
    let collect = |phase: RespPhase| -> Vec<Cycle> {
        cycles
            .iter()
            .zip(phases)
            .filter(|(_, p)| **p == phase)
            .map(|(c, _)| *c)
            .collect()
    };
    let ex = collect(RespPhase::Expiration);
    let ins = collect(RespPhase::Inspiration);
    if ex.is_empty() || ins.is_empty() {
        return Ok(());
    }
    let mut series = Vec::new();
    for (label, group) in [("expiration", &ex), ("inspiration", &ins)] {
        let avg = average_ccfc(flow, group, CCFC_POINTS).map_err(|e| CliError::stage("resp", e))?;
        series.push(Series {
            label: label.to_string(),
            x: (0..CCFC_POINTS)
                .map(|i| i as f64 / (CCFC_POINTS - 1) as f64)
                .collect(),
            y: avg.points,
        });
    }
    let svg = line_chart(
        "Average CCFC by respiratory phase",
        "cycle fraction",
        "flow (mL/min)",
        &series,
    )
    .map_err(|e| CliError::stage("plot", e))?;
    write_atomic(&out_dir.join("plots").join("ccfc.svg"), svg.as_bytes())
}

/// Runs the full pipeline for one dataset, writing artifacts for every
/// completed stage into `out_dir` (kept even when a later stage fails).
pub fn run_dataset(
    config: &PipelineConfig,
    id: &str,
    out_dir: &Path,
) -> Result<DatasetReport, CliError> {
    let mut timings: Vec<(&'static str, f64)> = Vec::new();
    let timed = |stage: &'static str, start: Instant, timings: &mut Vec<(&'static str, f64)>| {
        timings.push((stage, start.elapsed().as_secs_f64()));
    };

    let t0 = Instant::now();
    let (vel, mag) = ingest_input(&config.input, &config.ingest)?;
    let header = vel.header.clone();
    timed("ingest", t0, &mut timings);

    let t0 = Instant::now();
    let roi = match &config.segmentation {
        SegmentationConfig::Grow(p) => {
            segment_region_growing(&mag, &vel, p).map_err(|e| CliError::stage("segment", e))?
        }
        SegmentationConfig::Frequency(p) => {
            segment_cardiac_frequency(&vel, p).map_err(|e| CliError::stage("segment", e))?
        }
    };
    roi.validate(&header).map_err(|e| CliError::stage("segment", e))?;
    write_masks(out_dir, &roi)?;
    timed("segment", t0, &mut timings);

    let t0 = Instant::now();
    let vel = if config.correction.unalias {
        unalias(&vel, &roi)
    } else {
        vel
    };
    timed("unalias", t0, &mut timings);

    let t0 = Instant::now();
    let stationary = select_stationary_tissue(
        &vel,
        &mag,
        &roi,
        config.correction.ring_mm,
        config.correction.std_threshold_cm_s,
        config.correction.mag_percentile,
    )
    .map_err(|e| CliError::stage("background", e))?;
    let background = fit_background(&vel, &stationary, config.correction.order)
        .map_err(|e| CliError::stage("background", e))?;
    let vel = apply_background(&vel, &background).map_err(|e| CliError::stage("background", e))?;
    timed("background", t0, &mut timings);

    let t0 = Instant::now();
    let vel = match config.correction.denoise {
        Some(mode) => denoise(&vel, mode).map_err(|e| CliError::stage("denoise", e))?,
        None => vel,
    };
    timed("denoise", t0, &mut timings);

    let t0 = Instant::now();
    let flow = compute_flow_curve(&vel, &roi).map_err(|e| CliError::stage("flow", e))?;
    write_flow_csv(out_dir, &header, &flow)?;
    write_flow_plot(out_dir, &header, &flow)?;
    timed("flow", t0, &mut timings);

    let mut cycles = None;
    let mut diff = None;
    let mut diff_rows = Vec::new();
    if let Some(resp_cfg) = &config.resp {
        let t0 = Instant::now();
        if !resp_cfg.resp_file.exists() {
            return Err(CliError::Stage {
                stage: "resp",
                message: format!("file not found: {}", resp_cfg.resp_file.display()),
            });
        }
        let belt = read_signal_csv(&resp_cfg.resp_file)?;
        let belt_on_frames =
            resample_resp(&belt, &flow.flow).map_err(|e| CliError::stage("resp", e))?;
        let cyc = segment_cycles(&flow.flow, resp_cfg.cardiac_band_hz, resp_cfg.min_cycles)
            .map_err(|e| CliError::stage("resp", e))?;
        let t_r = resp_period_s(&belt, RESP_BAND_HZ).map_err(|e| CliError::stage("resp", e))?;
        let step = resp_cfg.grid_step_s.unwrap_or_else(|| header.frame_duration_s());
        let analysis = sweep_delay(
            &flow.flow,
            &belt_on_frames,
            &cyc,
            t_r,
            step,
            resp_cfg.min_cycles,
            resp_cfg.slope_epsilon,
        )
        .map_err(|e| CliError::stage("resp", e))?;
        write_diff_artifacts(out_dir, &analysis)?;

        for parameter in ALL_PARAMETERS {
            if let Some(best) = analysis.best_delay(parameter) {
                diff_rows.push(DiffRow {
                    parameter,
                    intensity_percent: best.diff_percent,
                    delay_s: best.delay_s,
                    n_ex: best.n_expiration,
                    n_in: best.n_inspiration,
                });
            }
        }
        // CCFC overlay at the MeanFlow best delay
        if let Some(best) = analysis.best_delay(RespParameter::MeanFlow) {
            let phases = label_cycles(
                &flow.flow,
                &belt_on_frames,
                &cyc,
                best.delay_s,
                t_r,
                resp_cfg.slope_epsilon,
            );
            write_ccfc_plot(out_dir, &flow.flow, &cyc, &phases)?;
        }
        cycles = Some(cyc);
        diff = Some(analysis);
        timed("resp", t0, &mut timings);
    }

    Ok(DatasetReport {
        id: id.to_string(),
        header,
        roi,
        flow,
        background,
        cycles,
        diff,
        diff_rows,
        timings,
    })
}

// --- results table ---

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Appends one dataset's row group (or error row) to the results text.
fn push_row_group(out: &mut String, outcome: &Result<DatasetReport, CliError>, id: &str) {
    match outcome {
        Ok(r) => {
            let _ = writeln!(
                out,
                "{id}\tsummary\tstatus=ok\tn_frames={}\trows={}\tcols={}\tvenc_cm_s={}\tframe_duration_ms={}",
                r.header.n_frames,
                r.header.rows,
                r.header.cols,
                fixed(r.header.venc_cm_s),
                fixed(r.header.frame_duration_ms),
            );
            let (area_mean, _) = mean_std(&r.flow.roi_area_mm2);
            let area_min = r.flow.roi_area_mm2.iter().cloned().fold(f64::INFINITY, f64::min);
            let area_max = r
                .flow
                .roi_area_mm2
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(
                out,
                "{id}\troi\tarea_mean_mm2={}\tarea_min_mm2={}\tarea_max_mm2={}",
                fixed(area_mean),
                fixed(area_min),
                fixed(area_max),
            );
            let vmax = r
                .flow
                .max_velocity_cm_s
                .iter()
                .cloned()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            let _ = writeln!(
                out,
                "{id}\tflow\tmean_ml_min={}\tpeak_ml_min={}\tmin_ml_min={}\tmax_vel_cm_s={}",
                fixed(r.flow.mean_flow_ml_min()),
                fixed(r.flow.peak_flow_ml_min),
                fixed(r.flow.min_flow_ml_min),
                fixed(vmax),
            );
            let _ = writeln!(
                out,
                "{id}\tbackground\torder={:?}\ta={}\tb={}\tc={}\tresidual_rms={}\tn_stationary={}",
                r.background.order,
                fixed(r.background.a),
                fixed(r.background.b),
                fixed(r.background.c),
                fixed(r.background.residual_rms_cm_s),
                r.background.stationary_mask.count(),
            );
            if let Some(cycles) = &r.cycles {
                let dt = r.flow.flow.sample_period_s;
                let periods: Vec<f64> = cycles.iter().map(|c| c.period_s(dt)).collect();
                let (p_mean, p_std) = mean_std(&periods);
                let amps: Vec<f64> = cycles
                    .iter()
                    .map(|c| cycle_parameter(&r.flow.flow, c, RespParameter::Amplitude))
                    .collect();
                let svs: Vec<f64> = cycles
                    .iter()
                    .map(|c| cycle_parameter(&r.flow.flow, c, RespParameter::StrokeVolume))
                    .collect();
                let _ = writeln!(
                    out,
                    "{id}\tcycles\tn={}\tperiod_mean_s={}\tperiod_std_s={}\tamplitude_mean_ml_min={}\tstroke_volume_mean_ml={}",
                    cycles.len(),
                    fixed(p_mean),
                    fixed(p_std),
                    fixed(mean_std(&amps).0),
                    fixed(mean_std(&svs).0),
                );
            }
            for row in &r.diff_rows {
                let _ = writeln!(
                    out,
                    "{id}\tdiff\tparameter={}\tintensity_percent={}\tdelay_s={}\tn_ex={}\tn_in={}",
                    row.parameter.as_str(),
                    fixed(row.intensity_percent),
                    fixed(row.delay_s),
                    row.n_ex,
                    row.n_in,
                );
            }
        }
        Err(e) => {
            let (stage, message) = match e {
                CliError::Stage { stage, message } => (*stage, message.clone()),
                other => ("run", other.to_string()),
            };
            let _ = writeln!(
                out,
                "{id}\terror\tstage={stage}\tmessage={}",
                message.replace(['\t', '\n'], " "),
            );
        }
    }
}

pub fn results_header(config_hash: &str) -> String {
    format!(
        "# rtpc {VERSION}\n# config_sha256 {config_hash}\ndataset\trecord\tfields\n"
    )
}

// --- manifest ---

#[derive(Serialize)]
struct ManifestDataset {
    id: String,
    status: String,
    timings_s: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct Manifest {
    version: String,
    config_sha256: String,
    datasets: Vec<ManifestDataset>,
}

fn write_manifest(
    out_dir: &Path,
    config_hash: &str,
    outcomes: &[(String, Result<DatasetReport, CliError>)],
) -> Result<(), CliError> {
    let manifest = Manifest {
        version: VERSION.to_string(),
        config_sha256: config_hash.to_string(),
        datasets: outcomes
            .iter()
            .map(|(id, o)| ManifestDataset {
                id: id.clone(),
                status: match o {
                    Ok(_) => "ok".to_string(),
                    Err(e) => format!("error: {e}"),
                },
                timings_s: match o {
                    Ok(r) => r
                        .timings
                        .iter()
                        .map(|(s, t)| (s.to_string(), *t))
                        .collect(),
                    Err(_) => Vec::new(),
                },
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(&out_dir.join("manifest.json"), &bytes)
}

// --- subcommand entry points ---

fn dataset_id(input: &Path, taken: &mut Vec<String>) -> String {
    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let mut id = stem.clone();
    let mut k = 1;
    while taken.contains(&id) {
        k += 1;
        id = format!("{stem}_{k}");
    }
    taken.push(id.clone());
    id
}

/// `run`: one dataset, or a `--batch` list of inputs sharing the config.
/// Returns the number of failed datasets (0 = success).
pub fn cmd_run(
    config_path: &Path,
    batch: Option<&Path>,
    output_override: Option<&Path>,
    jobs: usize,
    seed_override: Option<(usize, usize)>,
) -> Result<usize, CliError> {
    let mut config = PipelineConfig::from_file(config_path)?;
    if let Some(out) = output_override {
        config.output_dir = out.to_path_buf();
    }
    if let Some(seed) = seed_override {
        if let SegmentationConfig::Grow(p) = &mut config.segmentation {
            p.seed = seed;
        }
    }
    let config_hash = config.sha256_hex();

    let inputs: Vec<PathBuf> = match batch {
        None => vec![config.input.clone()],
        Some(list) => {
            let text = fs::read_to_string(list)
                .map_err(|e| CliError::Config(format!("{}: {e}", list.display())))?;
            let v: Vec<PathBuf> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(PathBuf::from)
                .collect();
            if v.is_empty() {
                return Err(CliError::Config(format!(
                    "batch list {} is empty",
                    list.display()
                )));
            }
            v
        }
    };
    let batch_mode = batch.is_some();

    let mut taken = Vec::new();
    let jobs_list: Vec<(String, PathBuf, PathBuf)> = inputs
        .iter()
        .map(|input| {
            let id = dataset_id(input, &mut taken);
            let out_dir = if batch_mode {
                config.output_dir.join(&id)
            } else {
                config.output_dir.clone()
            };
            (id, input.clone(), out_dir)
        })
        .collect();

    let jobs = jobs.max(1).min(jobs_list.len());
    let next = Mutex::new(0usize);
    let mut outcomes: Vec<Option<(String, Result<DatasetReport, CliError>)>> =
        (0..jobs_list.len()).map(|_| None).collect();
    let outcomes_mutex = Mutex::new(&mut outcomes);

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = {
                    let mut guard = next.lock().unwrap();
                    let i = *guard;
                    if i >= jobs_list.len() {
                        return;
                    }
                    *guard += 1;
                    i
                };
                let (id, input, out_dir) = &jobs_list[i];
                log::info!("processing dataset {id}");
                let mut cfg = config.clone();
                cfg.input = input.clone();
                let outcome = run_dataset(&cfg, id, out_dir);
                outcomes_mutex.lock().unwrap()[i] = Some((id.clone(), outcome));
            });
        }
    });

    // aggregate in input order regardless of completion order
    let outcomes: Vec<(String, Result<DatasetReport, CliError>)> =
        outcomes.into_iter().map(|o| o.expect("all jobs ran")).collect();

    let mut results = results_header(&config_hash);
    for (id, outcome) in &outcomes {
        push_row_group(&mut results, outcome, id);
    }
    write_atomic(&config.output_dir.join("results.tsv"), results.as_bytes())?;
    write_manifest(&config.output_dir, &config_hash, &outcomes)?;

    let failures = outcomes.iter().filter(|(_, o)| o.is_err()).count();
    for (id, outcome) in &outcomes {
        if let Err(e) = outcome {
            eprintln!("{id}: {e}");
        }
    }
    Ok(failures)
}

/// `simulate`: phantom generation -> .rtp + ground-truth artifacts.
pub fn cmd_simulate(config_path: &Path, output_dir: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let config: PhantomConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let out = generate(&config).map_err(|e| CliError::stage("simulate", e))?;

    fs::create_dir_all(output_dir)?;
    write_portable(&out.velocity, &out.magnitude, &output_dir.join("phantom.rtp"))
        .map_err(|e| CliError::stage("simulate", e))?;

    let header = config.header();
    let mut csv = String::from("time_s,flow_ml_min\n");
    for (t, q) in out.truth.flow_ml_min.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", fixed(header.frame_time_s(t)), fixed(*q));
    }
    write_atomic(&output_dir.join("truth_flow.csv"), csv.as_bytes())?;

    let masks_dir = output_dir.join("truth_masks");
    for (t, m) in out.truth.masks.iter().enumerate() {
        write_atomic(&masks_dir.join(format!("frame_{t:04}.pgm")), &m.to_pgm())?;
    }

    if let Some(belt) = &out.resp_signal {
        let mut csv = String::from("time_s,value\n");
        for (i, v) in belt.samples.iter().enumerate() {
            let _ = writeln!(csv, "{},{}", fixed(belt.time_at(i)), fixed(*v));
        }
        write_atomic(&output_dir.join("resp.csv"), csv.as_bytes())?;
    }

    let mut truth = serde_json::to_vec_pretty(&serde_json::json!({
        "cardiac_freq_hz": out.truth.cardiac_freq_hz,
        "background": out.truth.background,
        "resp": out.truth.resp,
    }))
    .expect("truth serializes");
    truth.push(b'\n');
    write_atomic(&output_dir.join("truth.json"), &truth)?;
    Ok(())
}

/// `ingest`: DICOM input -> .rtp.
pub fn cmd_ingest(
    input: &Path,
    ingest_config: &IngestConfig,
    output: &Path,
) -> Result<(), CliError> {
    let (vel, mag) = load_series(input, ingest_config).map_err(|e| CliError::stage("ingest", e))?;
    if let Some(parent) = output.parent() {
        fs::create_dir_all(parent)?;
    }
    write_portable(&vel, &mag, output).map_err(|e| CliError::stage("ingest", e))
}

/// `plot`: CSV artifacts -> SVG charts.
pub fn cmd_plot(
    flow_csv: &Path,
    resp_csv: Option<&Path>,
    diff_csv: Option<&Path>,
    output_dir: &Path,
) -> Result<(), CliError> {
    let text = fs::read_to_string(flow_csv).map_err(|e| CliError::MalformedCsv {
        path: flow_csv.to_path_buf(),
        reason: e.to_string(),
    })?;
    let bad = |reason: &str| CliError::MalformedCsv {
        path: flow_csv.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut times = Vec::new();
    let mut flows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if i == 0 && line.starts_with("time_s") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 2 {
            return Err(bad("expected at least two columns"));
        }
        times.push(cols[0].trim().parse::<f64>().map_err(|_| bad("bad time"))?);
        flows.push(cols[1].trim().parse::<f64>().map_err(|_| bad("bad flow"))?);
    }
    if times.is_empty() {
        return Err(bad("no data rows"));
    }

    let mut series = vec![Series {
        label: "flow".to_string(),
        x: times.clone(),
        y: flows,
    }];
    if let Some(resp) = resp_csv {
        let belt = read_signal_csv(resp)?;
        series.push(Series {
            label: "resp (a.u.)".to_string(),
            x: (0..belt.len()).map(|i| belt.time_at(i)).collect(),
            y: belt.samples,
        });
    }
    let svg = line_chart("Flow rate", "time (s)", "flow (mL/min)", &series)
        .map_err(|e| CliError::stage("plot", e))?;
    write_atomic(&output_dir.join("flow.svg"), svg.as_bytes())?;

    if let Some(diff_path) = diff_csv {
        let text = fs::read_to_string(diff_path).map_err(|e| CliError::MalformedCsv {
            path: diff_path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut by_param: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("parameter")) {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(CliError::MalformedCsv {
                    path: diff_path.to_path_buf(),
                    reason: "expected parameter,delay_s,diff_percent".to_string(),
                });
            }
            let entry = match by_param.iter_mut().find(|(p, _, _)| p == cols[0]) {
                Some(e) => e,
                None => {
                    by_param.push((cols[0].to_string(), Vec::new(), Vec::new()));
                    by_param.last_mut().unwrap()
                }
            };
            entry.1.push(cols[1].trim().parse::<f64>().map_err(|_| {
                CliError::MalformedCsv {
                    path: diff_path.to_path_buf(),
                    reason: "bad delay".to_string(),
                }
            })?);
            entry.2.push(cols[2].trim().parse::<f64>().map_err(|_| {
                CliError::MalformedCsv {
                    path: diff_path.to_path_buf(),
                    reason: "bad diff".to_string(),
                }
            })?);
        }
        for (param, x, y) in by_param {
            let svg = line_chart(
                &format!("Diff_Ex-In: {param}"),
                "delay (s)",
                "Diff (%)",
                &[Series {
                    label: param.clone(),
                    x,
                    y,
                }],
            )
            .map_err(|e| CliError::stage("plot", e))?;
            write_atomic(&output_dir.join(format!("diff_{param}.svg")), svg.as_bytes())?;
        }
    }
    Ok(())
}

/// `export`: merges several results.tsv files into one (row groups kept in
/// input order, metadata rewritten).
pub fn cmd_export(inputs: &[PathBuf], output: &Path) -> Result<(), CliError> {
    let mut out = format!("# rtpc {VERSION}\n# merged {} files\ndataset\trecord\tfields\n", inputs.len());
    for path in inputs {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for line in text.lines() {
            if line.starts_with('#') || line.starts_with("dataset\t") {
                continue;
            }
            out.push_str(line);
            out.push('\n');
        }
    }
    write_atomic(output, out.as_bytes())
}
