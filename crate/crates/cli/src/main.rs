//! `polhdr`: simulate, calibrate and fuse polarization-mosaic snapshots.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polhdr_core::calibrate::{
    estimate_exposures, log_grid, sweep_csv, sweep_extinction_error, sweep_trend, SweepScenario,
};
use polhdr_core::config::PipelineConfig;
use polhdr_core::forward::{reference_hdr, simulate_capture};
use polhdr_core::fusion::{fuse_bracket, fuse_hdr, tonemap_reinhard, Bracket, HdrImage};
use polhdr_core::io::{load_ldr, load_pfm, save_ldr, save_pfm};
use polhdr_core::metrics::evaluate;
use polhdr_core::mosaic::{demux, MosaicFrame};
use polhdr_core::pipeline::{provenance, run_pipeline, AtStage, CalibrationReport, Stage, StageError};
use polhdr_core::{Error, Image2D, LdrImage, Polarity, PolarityStack, SceneLight};

type CliResult<T = ()> = Result<T, StageError>;

#[derive(Parser)]
#[command(name = "polhdr", version, about = "Snapshot HDR from polarization mosaic cameras")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a raw mosaic frame from a linear scene (PFM).
    Simulate(SimulateArgs),
    /// Split a raw mosaic frame into the four polarity images.
    Demux(DemuxArgs),
    /// Estimate per-polarity exposures from a polarity stack.
    Calibrate(CalibrateArgs),
    /// Merge a polarity stack into linear HDR using a calibration report.
    Fuse(FuseArgs),
    /// Merge an exposure bracket with known times into linear HDR.
    FuseBracket(FuseBracketArgs),
    /// Compare a reconstruction against a reference (PSNR/SSIM).
    Eval(EvalArgs),
    /// Estimator error against polarizer extinction ratio.
    Sweep(SweepArgs),
    /// Raw frame to HDR in one go: demux, calibrate, fuse, tone map.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Flat TOML config; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> CliResult<PipelineConfig> {
        match &self.config {
            Some(path) => PipelineConfig::load(path).at(Stage::Config),
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Args)]
struct ThresholdArgs {
    /// Lower validity threshold on the 8-bit scale.
    #[arg(long)]
    pmin: Option<f64>,
    /// Upper validity threshold on the 8-bit scale.
    #[arg(long)]
    pmax: Option<f64>,
}

impl ThresholdArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.pmin {
            cfg.p_min = v;
        }
        if let Some(v) = self.pmax {
            cfg.p_max = v;
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Linear scene radiance (PFM, one value per superpixel).
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    dolp: Option<f64>,
    #[arg(long)]
    aop_deg: Option<f64>,
    /// Front polarizer angle in degrees.
    #[arg(long)]
    phi_deg: Option<f64>,
    /// Extinction ratio of both polarizers (0 is ideal).
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    bits: Option<u8>,
    #[arg(long)]
    gain: Option<f64>,
    #[arg(long)]
    time: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    read_noise: Option<f64>,
    #[arg(long)]
    shot_noise: bool,
    #[command(flatten)]
    config: ConfigArg,
    /// Raw mosaic output (PNG or PGM).
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth linear HDR (PFM); defaults to `<out>_gt.pfm`.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct DemuxArgs {
    input: PathBuf,
    /// r, g1, g2, b or luma.
    #[arg(long, default_value = "luma")]
    channel: String,
    /// Outputs are written as `<prefix>000.png` … `<prefix>135.png`.
    #[arg(long)]
    out_prefix: String,
    /// Significant bits when the container is wider than the data.
    #[arg(long)]
    bits: Option<u8>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// The four polarity images in 0°, 45°, 90°, 135° order.
    #[arg(num_args = 4, required = true)]
    stack: Vec<PathBuf>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    /// Histogram bin width in degrees.
    #[arg(long)]
    bin_deg: Option<f64>,
    #[arg(long)]
    bits: Option<u8>,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ToneArgs {
    /// Also write a tone-mapped preview here.
    #[arg(long)]
    tonemap: Option<PathBuf>,
    #[arg(long)]
    key: Option<f64>,
    /// White point percentile; 0 disables burn-out.
    #[arg(long)]
    white_percentile: Option<f64>,
}

impl ToneArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.key {
            cfg.tonemap_key = v;
        }
        if let Some(v) = self.white_percentile {
            cfg.tonemap_white_percentile = v;
        }
    }
}

#[derive(Args)]
struct FuseArgs {
    /// The four polarity images in 0°, 45°, 90°, 135° order.
    #[arg(num_args = 4, required = true)]
    stack: Vec<PathBuf>,
    /// Report written by `calibrate`; its config is the base config.
    #[arg(long)]
    calib: PathBuf,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long)]
    bits: Option<u8>,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    tone: ToneArgs,
    /// Per-pixel count of contributing images (8-bit PNG/PGM).
    #[arg(long)]
    coverage_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FuseBracketArgs {
    /// Exposure times, one per line in shot order (`time` or `name,time`).
    #[arg(long)]
    times: PathBuf,
    #[arg(required = true, num_args = 2..)]
    shots: Vec<PathBuf>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long)]
    bits: Option<u8>,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    coverage_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Restrict linear metrics to non-zero pixels of this image (e.g. a
    /// coverage map).
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Also compare both images after tone mapping with the reference's curve.
    #[arg(long)]
    tonemap: bool,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value_t = 1e-4)]
    rho_min: f64,
    #[arg(long, default_value_t = 1e-1)]
    rho_max: f64,
    #[arg(long, default_value_t = 40)]
    steps: usize,
    /// True angle between the polarizers, degrees.
    #[arg(long, default_value_t = 10.0)]
    theta_deg: f64,
    /// Incident polarization relative to the front polarizer's axis, degrees.
    #[arg(long, default_value_t = 0.0)]
    incident_deg: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    input: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[arg(long)]
    bits: Option<u8>,
    #[command(flatten)]
    tone: ToneArgs,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    coverage_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(Error::from).at(Stage::Io)
}

fn load_stack(paths: &[PathBuf], bits: Option<u8>, stage: Stage) -> CliResult<PolarityStack> {
    let mut images = Vec::with_capacity(4);
    for p in paths {
        images.push(load_ldr(p, bits).at(Stage::Io)?);
    }
    let images: [LdrImage; 4] = images
        .try_into()
        .map_err(|_| Error::InvalidInput("exactly four polarity images are required".into()))
        .at(stage)?;
    PolarityStack::new(images).at(stage)
}

fn hash_inputs(paths: &[PathBuf]) -> CliResult<Vec<(String, Vec<u8>)>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), read_bytes(p)?)))
        .collect()
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Codec(e.to_string()))
        .at(Stage::Io)?;
    fs::write(path, text + "\n").map_err(Error::from).at(Stage::Io)
}

fn to_json<T: serde::Serialize>(v: &T) -> CliResult<serde_json::Value> {
    serde_json::to_value(v)
        .map_err(|e| Error::Codec(e.to_string()))
        .at(Stage::Io)
}

fn save_coverage(hdr: &HdrImage, path: &Path) -> CliResult {
    let (w, h) = hdr.image.dims();
    let data = hdr.coverage.iter().map(|c| f64::from(*c)).collect();
    let img = Image2D::new(w, h, data)
        .and_then(|i| LdrImage::new(i, 8))
        .at(Stage::Io)?;
    save_ldr(&img, path).at(Stage::Io)
}

fn write_hdr_outputs(
    hdr: &HdrImage,
    cfg: &PipelineConfig,
    out: &Path,
    tonemap: Option<&Path>,
    coverage: Option<&Path>,
) -> CliResult {
    save_pfm(&hdr.image, out).at(Stage::Io)?;
    if let Some(path) = coverage {
        save_coverage(hdr, path)?;
    }
    if let Some(path) = tonemap {
        let preview = tonemap_reinhard(&hdr.image, &cfg.tonemap_params()).at(Stage::Tonemap)?;
        save_ldr(&preview, path).at(Stage::Io)?;
    }
    if hdr.covered_count() < hdr.coverage.len() {
        eprintln!(
            "warning: {} of {} pixels have no well-exposed sample",
            hdr.coverage.len() - hdr.covered_count(),
            hdr.coverage.len()
        );
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult {
    let mut cfg = a.config.load()?;
    let overrides = [
        (a.dolp, &mut cfg.sim_dolp),
        (a.aop_deg, &mut cfg.sim_aop_deg),
        (a.phi_deg, &mut cfg.sim_phi_deg),
        (a.rho, &mut cfg.sim_rho),
        (a.gain, &mut cfg.sim_gain),
        (a.time, &mut cfg.sim_time),
        (a.read_noise, &mut cfg.sim_read_noise),
    ];
    for (value, slot) in overrides {
        if let Some(v) = value {
            *slot = v;
        }
    }
    if let Some(v) = a.bits {
        cfg.sim_bits = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.sim_shot_noise |= a.shot_noise;
    cfg.validate().at(Stage::Config)?;

    let radiance = load_pfm(&a.scene).at(Stage::Io)?;
    let (dolp, aop) = cfg.scene_polarization();
    let scene = SceneLight::new(radiance, dolp, aop).at(Stage::Simulate)?;
    let rig = cfg.rig().at(Stage::Config)?;
    let sensor = cfg.sensor().at(Stage::Config)?;
    let frame = simulate_capture(&scene, &rig, &sensor, cfg.sim_time, cfg.seed).at(Stage::Simulate)?;
    let truth = reference_hdr(&scene, &rig, &sensor, cfg.sim_time).at(Stage::Simulate)?;

    save_ldr(frame.image(), &a.out).at(Stage::Io)?;
    let truth_path = a.truth.clone().unwrap_or_else(|| {
        let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("raw");
        a.out.with_file_name(format!("{stem}_gt.pfm"))
    });
    save_pfm(&truth, &truth_path).at(Stage::Io)?;
    Ok(())
}

fn cmd_demux(a: &DemuxArgs) -> CliResult {
    let channel = a.channel.parse().at(Stage::Config)?;
    let frame = MosaicFrame::new(load_ldr(&a.input, a.bits).at(Stage::Io)?).at(Stage::Demux)?;
    let stack = demux(&frame, channel).at(Stage::Demux)?;
    for p in Polarity::ALL {
        let path = format!("{}{}.png", a.out_prefix, p.label());
        save_ldr(stack.get(p), &path).at(Stage::Io)?;
    }
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs) -> CliResult {
    let mut cfg = a.config.load()?;
    a.thresholds.apply(&mut cfg);
    if let Some(v) = a.bin_deg {
        cfg.hist_bin_deg = v;
    }
    cfg.validate().at(Stage::Config)?;
    let stack = load_stack(&a.stack, a.bits, Stage::Calibrate)?;
    let thresholds = cfg.thresholds(stack.bit_depth()).at(Stage::Config)?;
    let estimate = estimate_exposures(&stack, &thresholds, cfg.bin_width()).at(Stage::Calibrate)?;
    let inputs = hash_inputs(&a.stack)?;
    let prov = provenance(&cfg, inputs.iter().map(|(n, b)| (n.as_str(), b.as_slice())));
    let report = CalibrationReport::new(estimate, cfg, prov);
    write_json(&a.report, &to_json(&report)?)
}

fn cmd_fuse(a: &FuseArgs) -> CliResult {
    let calib_text = fs::read_to_string(&a.calib).map_err(Error::from).at(Stage::Io)?;
    let calib: CalibrationReport = serde_json::from_str(&calib_text)
        .map_err(|e| Error::Codec(format!("{}: {e}", a.calib.display())))
        .at(Stage::Io)?;
    calib.estimate.validate().at(Stage::Fuse)?;
    let mut cfg = match &a.config.config {
        Some(_) => a.config.load()?,
        None => calib.config.clone(),
    };
    a.thresholds.apply(&mut cfg);
    a.tone.apply(&mut cfg);
    cfg.validate().at(Stage::Config)?;
    let stack = load_stack(&a.stack, a.bits, Stage::Fuse)?;
    let thresholds = cfg.thresholds(stack.bit_depth()).at(Stage::Config)?;
    let hdr = fuse_hdr(&stack, &calib.estimate, &thresholds, &cfg.fusion_params()).at(Stage::Fuse)?;
    write_hdr_outputs(&hdr, &cfg, &a.out, a.tone.tonemap.as_deref(), a.coverage_out.as_deref())
}

/// Reads one exposure time per non-empty line; the time is the last
/// comma-separated field. A non-numeric first line is treated as a header.
fn parse_times(text: &str) -> polhdr_core::Result<Vec<f64>> {
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.rsplit(',').next().unwrap_or(line).trim();
        match field.parse::<f64>() {
            Ok(t) => times.push(t),
            Err(_) if times.is_empty() && i == 0 => continue,
            Err(_) => {
                return Err(Error::InvalidInput(format!(
                    "line {}: bad exposure time {field:?}",
                    i + 1
                )))
            }
        }
    }
    Ok(times)
}

fn cmd_fuse_bracket(a: &FuseBracketArgs) -> CliResult {
    let mut cfg = a.config.load()?;
    a.thresholds.apply(&mut cfg);
    cfg.validate().at(Stage::Config)?;
    let text = fs::read_to_string(&a.times).map_err(Error::from).at(Stage::Io)?;
    let times = parse_times(&text).at(Stage::Fuse)?;
    if times.len() != a.shots.len() {
        return Err(Error::InvalidInput(format!(
            "{} exposure times for {} shots",
            times.len(),
            a.shots.len()
        )))
        .at(Stage::Fuse);
    }
    let mut snapshots = Vec::with_capacity(times.len());
    for (path, t) in a.shots.iter().zip(times) {
        snapshots.push((load_ldr(path, a.bits).at(Stage::Io)?, t));
    }
    snapshots.sort_by(|x, y| x.1.total_cmp(&y.1));
    let depth = snapshots[0].0.bit_depth();
    let bracket = Bracket::new(snapshots).at(Stage::Fuse)?;
    let thresholds = cfg.thresholds(depth).at(Stage::Config)?;
    let hdr = fuse_bracket(&bracket, &thresholds, &cfg.fusion_params()).at(Stage::Fuse)?;
    write_hdr_outputs(&hdr, &cfg, &a.out, None, a.coverage_out.as_deref())
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let cfg = a.config.load()?;
    let reference = load_pfm(&a.reference).at(Stage::Io)?;
    let test = load_pfm(&a.test).at(Stage::Io)?;
    let mask: Option<Vec<bool>> = match &a.mask {
        Some(p) => Some(
            load_ldr(p, None)
                .at(Stage::Io)?
                .data()
                .iter()
                .map(|v| *v > 0.0)
                .collect(),
        ),
        None => None,
    };
    let tone = cfg.tonemap_params();
    let report = evaluate(&reference, &test, mask.as_deref(), a.tonemap.then_some(&tone)).at(Stage::Eval)?;

    let mut paths = vec![a.reference.clone(), a.test.clone()];
    paths.extend(a.mask.clone());
    let inputs = hash_inputs(&paths)?;
    let prov = provenance(&cfg, inputs.iter().map(|(n, b)| (n.as_str(), b.as_slice())));
    let mut value = to_json(&report)?;
    value["config"] = to_json(&cfg)?;
    value["provenance"] = to_json(&prov)?;
    write_json(&a.report, &value)
}

fn cmd_sweep(a: &SweepArgs) -> CliResult {
    let scenario = SweepScenario {
        theta_true: a.theta_deg.to_radians(),
        incident_angle: a.incident_deg.to_radians(),
        ..SweepScenario::default()
    };
    let grid = log_grid(a.rho_min, a.rho_max, a.steps).at(Stage::Sweep)?;
    let rows = sweep_extinction_error(&grid, &scenario).at(Stage::Sweep)?;
    fs::write(&a.out, sweep_csv(&rows)).map_err(Error::from).at(Stage::Io)?;
    if let Ok(trend) = sweep_trend(&rows, a.rho_min, a.rho_max) {
        eprintln!(
            "log-log fit: slope {:.4}, R² {:.4}; error vs log ρ R² {:.4}; monotone: {}",
            trend.log_log.slope, trend.log_log.r_squared, trend.semi_log.r_squared, trend.monotone
        );
    }
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs) -> CliResult {
    let mut cfg = a.config.load()?;
    a.thresholds.apply(&mut cfg);
    a.tone.apply(&mut cfg);
    let frame = MosaicFrame::new(load_ldr(&a.input, a.bits).at(Stage::Io)?).at(Stage::Demux)?;
    let out = run_pipeline(&frame, &cfg, false)?;
    write_hdr_outputs(
        &out.hdr,
        &cfg,
        &a.out,
        a.tone.tonemap.as_deref(),
        a.coverage_out.as_deref(),
    )?;
    if let Some(path) = &a.report {
        let bytes = read_bytes(&a.input)?;
        let prov = provenance(&cfg, [(a.input.to_str().unwrap_or("input"), bytes.as_slice())]);
        let report = CalibrationReport::new(out.estimate, cfg, prov);
        write_json(path, &to_json(&report)?)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Demux(a) => cmd_demux(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::FuseBracket(a) => cmd_fuse_bracket(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on bad arguments, which would collide with the
    // config-stage code, so argument errors are mapped to 1 here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
