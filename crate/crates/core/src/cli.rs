//! Command-line front end. Every command writes plain data (CSV for curves
//! and waveforms, JSON for structured objects) plus a manifest describing
//! how to reproduce it.
//!
//! Exit codes: 0 ok, 2 usage, 3 infeasible parameters, 4 runtime failure.
//! Failures print `{"error": kind, "message": ...}` on stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::backend::{compose_tiles, MockSampler, SamplerRequest, SamplerResponse};
use crate::calibration::{load_calibration, CalibrationTable, DeviceConstraints};
use crate::dynamics::{
    anneal_evolve, pinned_initial_state, trotter_evolve, EvolutionConfig, IsingModel, SampleSet,
    StateVector, StepOrder, TrotterConfig,
};
use crate::lattice::{make_heavy_hex, three_edge_coloring, HeavyHexLattice};
use crate::observables::{
    correlation_matrix, distance_binned_correlation, load_reference_csv, magnetization,
    rmse_vs_reference, CurvePoint, DistanceBinnedCorrelation, MagnetizationCurve, Scope, Source,
};
use crate::pegasus::{
    make_pegasus, random_native_embed, tile_heavy_hex, DefectList, Embedding, SearchOutcome,
    TileTemplate, TilingResult,
};
use crate::scalar::{fmt17, Real};
use crate::schedule::{
    build_hgain_schedules, build_reverse_schedule, derive_params, plan_fixed_time_sweep, plan_sweep,
    waveform_csv, AnnealSchedule, DerivedParams, HGainSchedule, SSelection, ScheduleError,
    ScheduleKind, SweepMethod, SweepPlan, DEFAULT_RAMP_DOWN_NS,
};

/// Directory searched for calibration files given by bare name.
pub const CALIBRATION_DIR_ENV: &str = "HEXQA_CALIBRATION_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "hexqa", version, about = "Anneal schedules equivalent to kicked-Ising circuits on heavy-hex lattices")]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Equivalent anneal fraction and pause for one (theta_h, N, j).
    Derive(DeriveArgs),
    /// Reverse-anneal, h-gain or idealised hold schedule.
    Schedule(ScheduleArgs),
    /// Schedules over a theta_h sweep, or over s at fixed anneal time.
    Sweep(SweepArgs),
    /// Native Pegasus embeddings: translated tiles or randomized search.
    Embed(EmbedArgs),
    /// Exact Trotter-circuit or anneal simulation; per-site <Z>.
    Simulate(SimulateArgs),
    /// Mock sampler: evolve, gauge, sample and de-tile.
    Sample(SampleArgs),
    /// Observables, correlations and RMSE from sample files.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args, Clone)]
pub struct DeviceArgs {
    /// Calibration CSV, or `synthetic` / `synthetic-realistic`.
    #[arg(long, default_value = "synthetic")]
    pub calibration: String,
    /// Built-in profile name or JSON file.
    #[arg(long, default_value = "advantage_system6.2")]
    pub device_profile: String,
    #[arg(long, value_enum, default_value_t = SelectionArg::Grid)]
    pub s_selection: SelectionArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SelectionArg {
    Grid,
    Continuous,
}

impl From<SelectionArg> for SSelection {
    fn from(s: SelectionArg) -> Self {
        match s {
            SelectionArg::Grid => SSelection::Grid,
            SelectionArg::Continuous => SSelection::Continuous,
        }
    }
}

#[derive(Debug, Args)]
pub struct DeriveArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub theta: f64,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub j: f64,
    #[command(flatten)]
    pub device: DeviceArgs,
    /// Exit 0 even when the parameters cannot be programmed.
    #[arg(long)]
    pub allow_infeasible: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Reverse,
    Hgain,
    /// Pause only, no quenches (idealised evolution).
    Hold,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Output of `derive`; replaces --theta/--steps/--j.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub j: Option<f64>,
    #[arg(long, value_enum, default_value_t = MethodArg::Reverse)]
    pub method: MethodArg,
    #[arg(long, default_value_t = DEFAULT_RAMP_DOWN_NS)]
    pub ramp_down_ns: f64,
    #[command(flatten)]
    pub device: DeviceArgs,
    #[arg(long)]
    pub allow_infeasible: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Two-column (t_us, s) CSV.
    #[arg(long)]
    pub waveform: Option<PathBuf>,
    /// Two-column (t_us, g) CSV for h-gain schedules.
    #[arg(long)]
    pub hgain_waveform: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub j: f64,
    #[arg(long, default_value_t = 100)]
    pub angles: usize,
    #[arg(long, value_enum, default_value_t = SweepMethodArg::Reverse)]
    pub method: SweepMethodArg,
    /// Sweep s at this total anneal time (µs) instead of theta_h.
    #[arg(long)]
    pub fixed_time: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub s_step: f64,
    #[arg(long, default_value_t = DEFAULT_RAMP_DOWN_NS)]
    pub ramp_down_ns: f64,
    #[command(flatten)]
    pub device: DeviceArgs,
    /// Full plan as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One row per entry.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SweepMethodArg {
    Reverse,
    Hgain,
}

impl From<SweepMethodArg> for SweepMethod {
    fn from(m: SweepMethodArg) -> Self {
        match m {
            SweepMethodArg::Reverse => SweepMethod::ReverseAnneal,
            SweepMethodArg::Hgain => SweepMethod::HGain,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EmbedMode {
    Tile,
    Search,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Lattice JSON file or kind (`eagle127`, `falcon27`, `hexgrid(8,8)`).
    #[arg(long, default_value = "eagle127")]
    pub lattice: String,
    #[arg(long, default_value_t = 16)]
    pub pegasus_size: usize,
    #[arg(long)]
    pub defects: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EmbedMode::Tile)]
    pub mode: EmbedMode,
    #[arg(long, default_value_t = 10_000)]
    pub attempts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct LatticeArgs {
    /// Lattice JSON file or kind (`eagle127`, `falcon27`, `hexgrid(m,n)`).
    #[arg(long, default_value = "falcon27")]
    pub lattice: String,
    /// Restrict to the first N nodes reached by BFS from node 0.
    #[arg(long)]
    pub fragment: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimMode {
    Trotter,
    Anneal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub lattice: LatticeArgs,
    #[arg(long, value_enum, default_value_t = SimMode::Trotter)]
    pub mode: SimMode,
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
    /// Output of `schedule` (anneal mode).
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Coupler value; defaults to the schedule's derived j_qa.
    #[arg(long, allow_negative_numbers = true)]
    pub j: Option<f64>,
    #[arg(long, default_value = "synthetic")]
    pub calibration: String,
    #[arg(long, default_value_t = 1e-10)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
    pub transverse_sign: i8,
    #[arg(long, default_value_t = 27)]
    pub qubit_cap: usize,
    /// Per-site <Z> CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Final state as JSON.
    #[arg(long)]
    pub state: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Sampler request JSON; replaces the model/schedule flags.
    #[arg(long)]
    pub request: Option<PathBuf>,
    #[command(flatten)]
    pub lattice: LatticeArgs,
    /// Embeddings from `embed`; the model is tiled onto each of them.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub j: Option<f64>,
    #[arg(long, default_value = "synthetic")]
    pub calibration: String,
    #[arg(long, default_value_t = 1000)]
    pub reads: u64,
    #[arg(long, default_value_t = 0)]
    pub gauges: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_reinitialize: bool,
    #[arg(long, default_value_t = 1e-10)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 14)]
    pub qubit_cap: usize,
    /// Response JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Pooled samples of all tiles as CSV.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Sample CSV, optionally `PATH@THETA`; repeat for a curve.
    #[arg(long = "samples", required = true)]
    pub samples: Vec<String>,
    /// `mean`, `site:<node>`, `corr` or `dist:<anchor>`.
    #[arg(long, default_value = "mean")]
    pub observable: String,
    /// Needed for `dist:`.
    #[command(flatten)]
    pub lattice: LatticeArgs,
    /// Reference curve CSV (theta_h,value) for the RMSE.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// RMSE report JSON.
    #[arg(long)]
    pub rmse_out: Option<PathBuf>,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn infeasible(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Infeasible(msg.into()))
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Infeasible(String);

fn exit_code(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<Usage>().is_some() {
        return EXIT_USAGE;
    }
    if e.downcast_ref::<Infeasible>().is_some() {
        return EXIT_INFEASIBLE;
    }
    if let Some(s) = e.downcast_ref::<ScheduleError>() {
        return match s {
            ScheduleError::OutsideWindow { .. }
            | ScheduleError::RampDownTooLong { .. }
            | ScheduleError::AnnealTimeTooShort(_) => EXIT_INFEASIBLE,
            ScheduleError::ThetaOutOfRange(_)
            | ScheduleError::NoSteps
            | ScheduleError::NotFerromagnetic(_) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        };
    }
    EXIT_RUNTIME
}

fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn main_with_args<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            eprintln!("{}", error_json("usage", &e.to_string()));
            return EXIT_USAGE;
        }
    };
    let recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, recorded) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            let kind = match code {
                EXIT_USAGE => "usage",
                EXIT_INFEASIBLE => "infeasible",
                _ => "runtime",
            };
            eprintln!("{}", error_json(kind, &format!("{e:#}")));
            code
        }
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building worker pool")?;
    pool.install(|| {
        let mut ctx = Ctx::new(&cli.command, argv);
        match &cli.command {
            Command::Derive(a) => cmd_derive(a, &mut ctx),
            Command::Schedule(a) => cmd_schedule(a, &mut ctx),
            Command::Sweep(a) => cmd_sweep(a, &mut ctx),
            Command::Embed(a) => cmd_embed(a, &mut ctx),
            Command::Simulate(a) => cmd_simulate(a, &mut ctx),
            Command::Sample(a) => cmd_sample(a, &mut ctx),
            Command::Analyze(a) => cmd_analyze(a, &mut ctx),
        }
    })
}

/// Everything needed to re-run a command bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub seeds: Vec<u64>,
    pub calibration_id: Option<String>,
    pub device_profile_id: Option<String>,
    pub outputs: Vec<String>,
}

struct Ctx {
    manifest: RunManifest,
}

impl Ctx {
    fn new(cmd: &Command, args: Vec<String>) -> Self {
        let name = match cmd {
            Command::Derive(_) => "derive",
            Command::Schedule(_) => "schedule",
            Command::Sweep(_) => "sweep",
            Command::Embed(_) => "embed",
            Command::Simulate(_) => "simulate",
            Command::Sample(_) => "sample",
            Command::Analyze(_) => "analyze",
        };
        Ctx {
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: name.into(),
                args,
                seeds: Vec::new(),
                calibration_id: None,
                device_profile_id: None,
                outputs: Vec::new(),
            },
        }
    }

    /// Writes `content` to `path`, or stdout when no path is given.
    fn emit(&mut self, path: Option<&Path>, content: &str) -> Result<()> {
        match path {
            Some(p) => {
                std::fs::write(p, content).with_context(|| format!("writing {}", p.display()))?;
                self.manifest.outputs.push(p.display().to_string());
            }
            None => print!("{content}"),
        }
        Ok(())
    }

    /// Writes the manifest next to the first file output.
    fn finish(&self) -> Result<()> {
        if let Some(first) = self.manifest.outputs.first() {
            let path = format!("{first}.manifest.json");
            std::fs::write(&path, to_json_pretty(&self.manifest)?)
                .with_context(|| format!("writing {path}"))?;
        }
        Ok(())
    }
}

/// JSON writer that prints every float with 17 significant digits.
struct Sig17;

impl serde_json::ser::Formatter for Sig17 {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        write!(w, "{v:.16e}")
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, v: f32) -> std::io::Result<()> {
        write!(w, "{:.16e}", f64::from(v))
    }
}

/// Compact JSON with 17-significant-digit floats and a trailing newline.
pub fn to_json_17<S: Serialize>(value: &S) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17);
    value.serialize(&mut ser)?;
    let mut s = String::from_utf8(buf)?;
    s.push('\n');
    Ok(s)
}

fn to_json_pretty<S: Serialize>(value: &S) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_calibration_arg(spec: &str) -> Result<CalibrationTable<f64>> {
    match spec {
        "synthetic" | "synthetic-linear" => return Ok(CalibrationTable::synthetic_linear(1001)),
        "synthetic-realistic" => return Ok(CalibrationTable::synthetic_realistic(1001)),
        _ => {}
    }
    let mut path = PathBuf::from(spec);
    if !path.exists() {
        if let Ok(dir) = std::env::var(CALIBRATION_DIR_ENV) {
            path = Path::new(&dir).join(spec);
        }
    }
    let text = read(&path)?;
    let id = path.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
    Ok(load_calibration(&text, &id)?)
}

pub fn load_device_arg(spec: &str) -> Result<DeviceConstraints> {
    if let Ok(dc) = DeviceConstraints::preset(spec) {
        return Ok(dc);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(usage(format!("unknown device profile `{spec}`")));
    }
    Ok(DeviceConstraints::from_json(&read(path)?)?)
}

pub fn load_lattice_arg(args: &LatticeArgs) -> Result<HeavyHexLattice> {
    let path = Path::new(&args.lattice);
    let lattice = if path.exists() {
        HeavyHexLattice::from_json(&read(path)?)?
    } else {
        let kind = args
            .lattice
            .parse()
            .map_err(|e| usage(format!("lattice `{}`: {e}", args.lattice)))?;
        make_heavy_hex(kind)?
    };
    match args.fragment {
        Some(n) => Ok(lattice.bfs_fragment(0, n)?),
        None => Ok(lattice),
    }
}

/// Decimal input like 1.5708 for π/2 is snapped to π/2.
fn snap_theta(theta: f64) -> f64 {
    let half_pi = std::f64::consts::FRAC_PI_2;
    if theta > half_pi && theta - half_pi < 1e-4 {
        half_pi
    } else {
        theta
    }
}

fn cmd_derive(a: &DeriveArgs, ctx: &mut Ctx) -> Result<()> {
    let cal = load_calibration_arg(&a.device.calibration)?;
    let dc = load_device_arg(&a.device.device_profile)?;
    ctx.manifest.calibration_id = Some(cal.device_id().into());
    ctx.manifest.device_profile_id = Some(dc.device_id.clone());
    let p = derive_params(snap_theta(a.theta), a.steps, a.j, &cal, &dc, a.device.s_selection.into())?;
    ctx.emit(a.out.as_deref(), &to_json_17(&p)?)?;
    ctx.finish()?;
    if !p.is_feasible() && !a.allow_infeasible {
        return Err(infeasible(p.feasible.reasons().join("; ")));
    }
    Ok(())
}

/// What `schedule` writes and `simulate` / `sample` read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDoc {
    pub params: Option<DerivedParams<f64>>,
    pub schedule: AnnealSchedule<f64>,
    pub hgain: Option<HGainSchedule<f64>>,
}

fn cmd_schedule(a: &ScheduleArgs, ctx: &mut Ctx) -> Result<()> {
    let cal = load_calibration_arg(&a.device.calibration)?;
    let dc = load_device_arg(&a.device.device_profile)?;
    ctx.manifest.calibration_id = Some(cal.device_id().into());
    ctx.manifest.device_profile_id = Some(dc.device_id.clone());
    let p: DerivedParams<f64> = match &a.params {
        Some(path) => serde_json::from_str(&read(path)?).context("parsing derived parameters")?,
        None => {
            let (Some(theta), Some(steps), Some(j)) = (a.theta, a.steps, a.j) else {
                return Err(usage("give --params or all of --theta, --steps, --j"));
            };
            derive_params(snap_theta(theta), steps, j, &cal, &dc, a.device.s_selection.into())?
        }
    };
    if !p.is_feasible() && !a.allow_infeasible && !matches!(a.method, MethodArg::Hold) {
        return Err(infeasible(p.feasible.reasons().join("; ")));
    }
    let (schedule, hgain) = match a.method {
        MethodArg::Reverse => (build_reverse_schedule(&p, &dc)?, None),
        MethodArg::Hgain => {
            let (s, g) = build_hgain_schedules(&p, &dc, a.ramp_down_ns)?;
            (s, Some(g))
        }
        MethodArg::Hold => (AnnealSchedule::hold(p.s_star, p.pause_us()), None),
    };
    if let Some(w) = &a.waveform {
        ctx.emit(Some(w), &waveform_csv("s", &schedule.points))?;
    }
    if let (Some(w), Some(g)) = (&a.hgain_waveform, &hgain) {
        ctx.emit(Some(w), &waveform_csv("g", &g.points))?;
    }
    let doc = ScheduleDoc {
        params: Some(p),
        schedule,
        hgain,
    };
    ctx.emit(a.out.as_deref(), &to_json_17(&doc)?)?;
    ctx.finish()
}

fn sweep_table(plan: &SweepPlan<f64>) -> String {
    let mut out = String::from("value,s_star,pause_us,t_from_b_ns,t_from_a_ns,duration_us,feasible,issues\n");
    let opt = |x: Option<f64>| x.map(fmt17).unwrap_or_default();
    for e in &plan.entries {
        let p = e.params.as_ref();
        let s_star = p.map(|p| p.s_star).or_else(|| {
            e.schedule.as_ref().map(|s| s.points[1].1)
        });
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},\"{}\"",
            fmt17(e.value),
            opt(s_star),
            opt(e.pause_us),
            opt(p.map(|p| p.t_from_b_ns)),
            opt(p.and_then(|p| p.t_from_a_ns)),
            opt(e.schedule.as_ref().map(|s| s.duration_us())),
            e.feasible,
            e.issues.join("; ").replace('"', "'")
        );
    }
    out
}

fn cmd_sweep(a: &SweepArgs, ctx: &mut Ctx) -> Result<()> {
    let dc = load_device_arg(&a.device.device_profile)?;
    ctx.manifest.device_profile_id = Some(dc.device_id.clone());
    let plan = match a.fixed_time {
        Some(at) => plan_fixed_time_sweep(at, a.j, a.method.into(), &dc, a.s_step)?,
        None => {
            let cal = load_calibration_arg(&a.device.calibration)?;
            ctx.manifest.calibration_id = Some(cal.device_id().into());
            plan_sweep(
                a.steps,
                a.j,
                a.angles,
                a.method.into(),
                &cal,
                &dc,
                a.device.s_selection.into(),
                a.ramp_down_ns,
            )
        }
    };
    if let Some(t) = &a.table {
        ctx.emit(Some(t), &sweep_table(&plan))?;
    }
    if a.out.is_some() || a.table.is_none() {
        ctx.emit(a.out.as_deref(), &to_json_17(&plan)?)?;
    }
    ctx.finish()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedDoc {
    pub mode: String,
    pub found: bool,
    pub attempts_used: Option<usize>,
    pub embeddings: Vec<Embedding>,
}

fn cmd_embed(a: &EmbedArgs, ctx: &mut Ctx) -> Result<()> {
    let lattice = load_lattice_arg(&LatticeArgs {
        lattice: a.lattice.clone(),
        fragment: None,
    })?;
    let defects = match &a.defects {
        Some(p) => DefectList::from_json(&read(p)?)?,
        None => DefectList::default(),
    };
    let pg = make_pegasus(a.pegasus_size, &defects)?;
    let doc = match a.mode {
        EmbedMode::Tile => {
            let template = TileTemplate::eagle127_p16();
            if lattice.n_nodes() != template.base.map.len() {
                return Err(usage("tile mode ships a template for eagle127 only; use --mode search"));
            }
            let tiling = tile_heavy_hex(&lattice, &pg, &template);
            EmbedDoc {
                mode: "tile".into(),
                found: !tiling.embeddings.is_empty(),
                attempts_used: None,
                embeddings: tiling.embeddings,
            }
        }
        EmbedMode::Search => {
            ctx.manifest.seeds.push(a.seed);
            let outcome = random_native_embed(&lattice, &pg, a.attempts, a.seed);
            EmbedDoc {
                mode: "search".into(),
                found: outcome.embedding().is_some(),
                attempts_used: Some(outcome.attempts_used()),
                embeddings: match outcome {
                    SearchOutcome::Found { embedding, .. } => vec![embedding],
                    SearchOutcome::NotFound { .. } => vec![],
                },
            }
        }
    };
    ctx.emit(a.out.as_deref(), &to_json_pretty(&doc)?)?;
    ctx.finish()
}

fn z_csv(labels: &[usize], z: &[f64]) -> String {
    let mut out = String::from("node,z\n");
    for (l, v) in labels.iter().zip(z) {
        let _ = writeln!(out, "{l},{}", fmt17(*v));
    }
    out
}

fn read_schedule_doc(path: &Option<PathBuf>) -> Result<ScheduleDoc> {
    let p = path.as_ref().ok_or_else(|| usage("--schedule is required"))?;
    serde_json::from_str(&read(p)?).context("parsing schedule document")
}

/// Coupler value and field for a schedule document: the derived j unless
/// overridden; h = 1 when the schedule carries an h-gain waveform.
fn model_for(lattice: &HeavyHexLattice, doc: &ScheduleDoc, j: Option<f64>) -> Result<IsingModel<f64>> {
    let j = j
        .or(doc.params.as_ref().map(|p| p.j_qa))
        .ok_or_else(|| usage("--j is required when the schedule has no derived parameters"))?;
    let h = if doc.hgain.is_some() { 1.0 } else { 0.0 };
    Ok(IsingModel::from_lattice(lattice, j, h))
}

fn simulate_trotter<T: Real>(
    lattice: &HeavyHexLattice,
    theta: f64,
    steps: usize,
    cap: usize,
) -> Result<(Vec<f64>, String)> {
    let coloring = three_edge_coloring(lattice)?;
    let mut cfg = TrotterConfig::new(steps, T::lit(theta));
    cfg.step_order = StepOrder::RxThenRzz;
    cfg.qubit_cap = cap;
    let psi: StateVector<T> = trotter_evolve(lattice, &coloring, &cfg)?;
    Ok((psi.z_expectations(), to_json_17(&psi)?))
}

fn cmd_simulate(a: &SimulateArgs, ctx: &mut Ctx) -> Result<()> {
    let lattice = load_lattice_arg(&a.lattice)?;
    let labels: Vec<usize> = (0..lattice.n_nodes()).collect();
    let (z, state_json) = match a.mode {
        SimMode::Trotter => {
            let theta = a.theta.ok_or_else(|| usage("--theta is required in trotter mode"))?;
            let steps = a.steps.ok_or_else(|| usage("--steps is required in trotter mode"))?;
            match a.precision {
                Precision::F64 => simulate_trotter::<f64>(&lattice, theta, steps, a.qubit_cap)?,
                Precision::F32 => simulate_trotter::<f32>(&lattice, theta, steps, a.qubit_cap)?,
            }
        }
        SimMode::Anneal => {
            let doc = read_schedule_doc(&a.schedule)?;
            let cal = load_calibration_arg(&a.calibration)?;
            ctx.manifest.calibration_id = Some(cal.device_id().into());
            let model = model_for(&lattice, &doc, a.j)?;
            let cfg = EvolutionConfig {
                tolerance: a.tolerance,
                transverse_sign: a.transverse_sign,
                qubit_cap: a.qubit_cap,
                ..EvolutionConfig::default()
            };
            let initial = match doc.schedule.kind {
                ScheduleKind::Forward => {
                    pinned_initial_state(&model, &doc.schedule, doc.hgain.as_ref(), &cal, a.transverse_sign)?
                }
                _ => StateVector::zero_state(lattice.n_nodes()),
            };
            let psi = anneal_evolve(&model, &doc.schedule, doc.hgain.as_ref(), &cal, &cfg, &initial)?;
            (psi.z_expectations(), to_json_17(&psi)?)
        }
    };
    ctx.emit(a.out.as_deref(), &z_csv(&labels, &z))?;
    if let Some(p) = &a.state {
        ctx.emit(Some(p), &state_json)?;
    }
    ctx.finish()
}

fn read_embeddings(path: &Path) -> Result<TilingResult> {
    let doc: EmbedDoc = serde_json::from_str(&read(path)?).context("parsing embeddings")?;
    let used_nodes = doc.embeddings.iter().flat_map(|e| e.map.iter().copied()).collect();
    Ok(TilingResult {
        embeddings: doc.embeddings,
        used_nodes,
    })
}

fn cmd_sample(a: &SampleArgs, ctx: &mut Ctx) -> Result<()> {
    let cal = load_calibration_arg(&a.calibration)?;
    ctx.manifest.calibration_id = Some(cal.device_id().into());
    let mut theta = None;
    let req: SamplerRequest<f64> = match &a.request {
        Some(p) => serde_json::from_str(&read(p)?).context("parsing sampler request")?,
        None => {
            let lattice = load_lattice_arg(&a.lattice)?;
            let doc = read_schedule_doc(&a.schedule)?;
            theta = doc.params.as_ref().map(|p| p.theta_h);
            let model = model_for(&lattice, &doc, a.j)?;
            let (model, tiles) = match &a.embeddings {
                Some(p) => {
                    let (m, t) = compose_tiles(&model, &read_embeddings(p)?)?;
                    (m, Some(t))
                }
                None => (model, None),
            };
            let initial_state = (doc.schedule.kind == ScheduleKind::Reverse).then(|| vec![1i8; model.n_nodes()]);
            SamplerRequest {
                model,
                tiles,
                schedule: doc.schedule,
                hgain: doc.hgain,
                initial_state,
                num_reads: a.reads,
                gauges: a.gauges,
                reinitialize_state: !a.no_reinitialize,
                seed: a.seed,
            }
        }
    };
    ctx.manifest.seeds.push(req.seed);
    let sampler = MockSampler::new(
        cal,
        EvolutionConfig {
            tolerance: a.tolerance,
            qubit_cap: a.qubit_cap,
            ..EvolutionConfig::default()
        },
    );
    let resp: SamplerResponse = sampler.run(&req)?;
    if let Some(p) = &a.samples {
        ctx.emit(Some(p), &pooled_csv(&resp, theta)?)?;
    }
    if a.out.is_some() || a.samples.is_none() {
        ctx.emit(a.out.as_deref(), &to_json_17(&resp)?)?;
    }
    ctx.finish()
}

/// All tiles pooled into one CSV (tiles share labels after de-tiling).
fn pooled_csv(resp: &SamplerResponse, theta: Option<f64>) -> Result<String> {
    let first = resp.tiles.first().ok_or_else(|| anyhow!("no tiles in response"))?;
    if resp.tiles.iter().any(|t| t.labels != first.labels) {
        bail!("tiles carry different labels; use the JSON response");
    }
    let pooled = SampleSet::aggregate(
        first.labels.clone(),
        resp.tiles
            .iter()
            .flat_map(|t| t.records.iter().map(|r| (r.spins.clone(), r.multiplicity))),
        first.metadata.clone(),
    );
    let mut out = String::new();
    if let Some(t) = theta {
        let _ = writeln!(out, "# theta_h={}", fmt17(t));
    }
    out.push_str(&pooled.to_csv());
    Ok(out)
}

/// `PATH@THETA`, or the `# theta_h=` comment in the file.
fn read_samples_arg(spec: &str) -> Result<(f64, SampleSet)> {
    let (path, theta) = match spec.rsplit_once('@') {
        Some((p, t)) => (
            p,
            Some(t.parse::<f64>().map_err(|_| usage(format!("bad theta in `{spec}`")))?),
        ),
        None => (spec, None),
    };
    let text = read(Path::new(path))?;
    let theta = theta.or_else(|| {
        text.lines()
            .filter_map(|l| l.trim().strip_prefix("# theta_h="))
            .find_map(|v| v.trim().parse().ok())
    });
    let theta = theta.ok_or_else(|| usage(format!("no theta_h for `{path}`; use PATH@THETA")))?;
    Ok((theta, SampleSet::from_csv(&text)?))
}

fn cmd_analyze(a: &AnalyzeArgs, ctx: &mut Ctx) -> Result<()> {
    let mut sets = a
        .samples
        .iter()
        .map(|s| read_samples_arg(s))
        .collect::<Result<Vec<_>>>()?;
    sets.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite theta"));
    let obs = a.observable.as_str();
    if obs == "corr" {
        if sets.len() != 1 {
            return Err(usage("corr takes exactly one sample file"));
        }
        let m = correlation_matrix::<f64>(Source::Samples(&sets[0].1))?;
        ctx.emit(a.out.as_deref(), &m.to_csv())?;
        return ctx.finish();
    }
    if let Some(anchor) = obs.strip_prefix("dist:") {
        let anchor: usize = anchor.parse().map_err(|_| usage(format!("bad anchor in `{obs}`")))?;
        let lattice = load_lattice_arg(&a.lattice)?;
        let mut per_theta = Vec::new();
        for (theta, set) in &sets {
            let bins = distance_binned_correlation::<f64>(Source::Samples(set), &lattice, anchor)?;
            per_theta.push((*theta, bins.bins));
        }
        let d = DistanceBinnedCorrelation { anchor, per_theta };
        ctx.emit(a.out.as_deref(), &d.to_csv())?;
        return ctx.finish();
    }
    let scope: Scope = obs.parse().map_err(usage)?;
    let points = sets
        .iter()
        .map(|(theta, set)| {
            let m = magnetization::<f64>(Source::Samples(set), scope)?;
            Ok(CurvePoint {
                theta_h: *theta,
                value: m.value,
                stderr: m.stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let curve = MagnetizationCurve::new(scope, points)?;
    ctx.emit(a.out.as_deref(), &curve.to_csv())?;
    if let Some(r) = &a.reference {
        let reference = load_reference_csv(&read(r)?)?;
        let report = rmse_vs_reference(&curve, &reference, &r.display().to_string())?;
        let text = to_json_17(&report)?;
        match &a.rmse_out {
            Some(p) => ctx.emit(Some(p), &text)?,
            None => eprint!("{text}"),
        }
    }
    ctx.finish()
}
