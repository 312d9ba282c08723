//! Command-line surface for the ganguard engine.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ganguard_core::engine::{
    detect_stream, evaluate, run, train_baseline, tune, BaselineMode, EngineConfig, GroundTruth,
    TrainingCache,
};
use ganguard_core::features::make_windows;
use ganguard_core::io::{
    generate_synthetic, load_baseline, load_dataset, load_report, save_baseline, save_dataset,
    save_report, summary, write_trace_csv, DatasetFile, RunManifest, SyntheticSpec,
};
use ganguard_core::Error as CoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Output directory used when `--out` is absent.
pub const OUT_ENV: &str = "GANGUARD_OUT";

#[derive(Debug, Parser)]
#[command(name = "ganguard", version, about = "GAN and reliability-tuned novelty detection for vibration streams")]
struct Cli {
    /// Output directory (default: $GANGUARD_OUT, then the current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Train an untuned baseline on consecutive windows.
    Train(TrainArgs),
    /// Tune thresholds of a saved baseline.
    Tune(TuneArgs),
    /// Monitor a dataset with a tuned baseline and no retraining.
    Detect(DetectArgs),
    /// Full pipeline: train, tune and monitor, static or dynamic.
    Run(RunArgs),
    /// Render a saved report to a summary and a score trace.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Static,
    Dynamic,
}

impl From<ModeArg> for BaselineMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Static => BaselineMode::Static,
            ModeArg::Dynamic => BaselineMode::Dynamic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Bin,
    Csv,
}

/// Engine settings; flags override the `--config` file.
#[derive(Debug, Clone, Default, Args)]
struct EngineArgs {
    /// TOML file with engine settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Window length in samples.
    #[arg(long)]
    dl: Option<usize>,
    /// Training windows per baseline.
    #[arg(long)]
    tl: Option<usize>,
    /// Windows per detection iteration.
    #[arg(long)]
    vl: Option<usize>,
    /// Target system reliability index.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Monte Carlo histogram sampling iterations.
    #[arg(long)]
    mchs_iters: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// TOML stream description; the four-damage benchmark when absent.
    #[arg(long)]
    stream: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the length of every class.
    #[arg(long)]
    windows_per_class: Option<usize>,
    #[arg(long, value_enum, default_value = "bin")]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// First training window.
    #[arg(long, default_value_t = 0)]
    start: usize,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    baseline: PathBuf,
    /// Where to write the tuned bundle (default: <out>/baseline.ggbm).
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// First monitored window (default: right after the training windows).
    #[arg(long)]
    start: Option<usize>,
    /// Skip evaluation against the dataset's class boundaries.
    #[arg(long)]
    no_truth: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    data: Option<PathBuf>,
    /// Replay a previous run.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    no_truth: bool,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn out_dir(flag: Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = flag
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let out = cli.out;
    match cli.command {
        Command::Simulate(a) => simulate(a, &out_dir(out)?),
        Command::Train(a) => train(a, &out_dir(out)?),
        Command::Tune(a) => tune_cmd(a, out),
        Command::Detect(a) => detect(a, &out_dir(out)?),
        Command::Run(a) => run_cmd(a, out),
        Command::Report(a) => report(a, &out_dir(out)?),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

impl EngineArgs {
    /// Applies flags on top of `base` (or the config file) and validates.
    fn resolve(&self, base: EngineConfig) -> CliResult<EngineConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_toml(p)?,
            None => base,
        };
        if let Some(v) = self.dl {
            cfg.d_l = v;
        }
        if let Some(v) = self.tl {
            cfg.t_l = v;
        }
        if let Some(v) = self.vl {
            cfg.v_l = v;
        }
        if let Some(v) = self.beta {
            cfg.beta = v;
        }
        if let Some(v) = self.mode {
            cfg.mode = v.into();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.gan.epochs = v;
        }
        if let Some(v) = self.latent_dim {
            cfg.gan.latent_dim = v;
        }
        if let Some(v) = self.mchs_iters {
            cfg.mchs_iterations = Some(v);
        }
        cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn simulate(a: SimulateArgs, out: &Path) -> CliResult<()> {
    let mut spec = match &a.stream {
        Some(p) => read_toml::<SyntheticSpec>(p)?,
        None => SyntheticSpec::benchmark(0),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.windows_per_class {
        for c in &mut spec.classes {
            c.windows = n;
        }
    }
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let synth = generate_synthetic(&spec)?;
    let boundaries = synth
        .boundaries
        .iter()
        .map(|&w| (w * spec.window_len) as u64)
        .collect();
    let data = DatasetFile::new(synth.stream, boundaries)?;
    let path = out.join(match a.format {
        FormatArg::Bin => "dataset.ggds",
        FormatArg::Csv => "dataset.csv",
    });
    save_dataset(&path, &data)?;
    println!("{}", path.display());
    Ok(())
}

fn windows_of(data: &DatasetFile, d_l: usize) -> CliResult<Vec<ganguard_core::features::TimeSeriesWindow>> {
    Ok(make_windows(data.stream(), d_l)?)
}

fn load_data(path: &Path) -> CliResult<DatasetFile> {
    load_dataset(path)
        .with_context(|| format!("loading dataset {}", path.display()))
        .map_err(Failure::Runtime)
}

fn train(a: TrainArgs, out: &Path) -> CliResult<()> {
    let cfg = a.engine.resolve(EngineConfig::default())?;
    let data = load_data(&a.data)?;
    let windows = windows_of(&data, cfg.d_l)?;
    let end = a.start + cfg.t_l;
    if end > windows.len() {
        return Err(Failure::Usage(format!(
            "training needs windows {}..{end}, dataset has {}",
            a.start,
            windows.len()
        )));
    }
    let baseline = train_baseline(&windows[a.start..end], &cfg, 0)?;
    let path = out.join("baseline.ggbm");
    save_baseline(&path, &baseline)?;
    println!("{}", path.display());
    Ok(())
}

fn tune_cmd(a: TuneArgs, out: Option<PathBuf>) -> CliResult<()> {
    let mut baseline = load_baseline(&a.baseline)
        .with_context(|| format!("loading baseline {}", a.baseline.display()))?;
    let base = EngineConfig {
        d_l: baseline.window_len,
        ..EngineConfig::default()
    };
    let mut cfg = a.engine.resolve(base)?;
    if cfg.d_l != baseline.window_len {
        return Err(Failure::Usage(format!(
            "--dl {} does not match the baseline window length {}",
            cfg.d_l, baseline.window_len
        )));
    }
    cfg.d_l = baseline.window_len;
    let tuning = tune(&mut baseline, &cfg)?;
    let path = match a.output {
        Some(p) => p,
        None => out_dir(out)?.join("baseline.ggbm"),
    };
    save_baseline(&path, &baseline)?;
    let [t1, t2, t3] = tuning.system.thresholds();
    println!("{} thresholds {t1} {t2} {t3}", path.display());
    Ok(())
}

fn detect(a: DetectArgs, out: &Path) -> CliResult<()> {
    let baseline = load_baseline(&a.baseline)
        .with_context(|| format!("loading baseline {}", a.baseline.display()))?;
    if baseline.system.is_none() {
        return Err(Failure::Usage("baseline is not tuned; run `tune` first".into()));
    }
    let data = load_data(&a.data)?;
    let windows = windows_of(&data, baseline.window_len)?;
    let start = a.start.unwrap_or(baseline.training_windows.end);
    if start >= windows.len() {
        return Err(Failure::Usage(format!(
            "start window {start} beyond dataset of {} windows",
            windows.len()
        )));
    }
    let mut rep = detect_stream(&baseline, &windows[start..])?;
    if !a.no_truth && !data.boundaries().is_empty() {
        let bounds: Vec<usize> = data
            .window_boundaries(baseline.window_len)
            .into_iter()
            .filter(|&b| b >= start)
            .collect();
        evaluate(&mut rep, &GroundTruth::new(bounds, 0)?, BaselineMode::Static);
    }
    write_outputs(&rep, &out.join("report.json"), &out.join("trace.csv"))
}

fn write_outputs(
    rep: &ganguard_core::engine::DetectionReport,
    report_path: &Path,
    trace_path: &Path,
) -> CliResult<()> {
    save_report(report_path, rep)?;
    write_trace_csv(trace_path, rep)?;
    print!("{}", summary(rep));
    Ok(())
}

fn run_cmd(a: RunArgs, out: Option<PathBuf>) -> CliResult<()> {
    let manifest = match &a.manifest {
        Some(p) => {
            let m = RunManifest::load(p).with_context(|| format!("loading manifest {}", p.display()))?;
            m.verify_dataset()?;
            let mut m2 = m.clone();
            if let Some(dir) = out.clone() {
                std::fs::create_dir_all(&dir)
                    .with_context(|| format!("creating output directory {}", dir.display()))?;
                m2.report = dir.join("report.json");
                m2.trace = dir.join("trace.csv");
            }
            m2.config = a.engine.resolve(m.config)?;
            m2
        }
        None => {
            let data = a.data.expect("clap requires --data without --manifest");
            let cfg = a.engine.resolve(EngineConfig::default())?;
            let dir = out_dir(out)?;
            RunManifest::new(
                cfg,
                &data,
                !a.no_truth,
                &dir.join("report.json"),
                &dir.join("trace.csv"),
            )?
        }
    };
    let cfg = &manifest.config;
    let data = load_data(&manifest.dataset)?;
    let windows = windows_of(&data, cfg.d_l)?;
    let truth = if manifest.use_ground_truth && !data.boundaries().is_empty() {
        Some(GroundTruth::new(data.window_boundaries(cfg.d_l), cfg.t_l)?)
    } else {
        None
    };
    let rep = run(&windows, cfg, truth.as_ref(), &mut TrainingCache::new())?;
    let manifest_path = manifest
        .report
        .parent()
        .unwrap_or(Path::new("."))
        .join("manifest.json");
    manifest.save(&manifest_path)?;
    write_outputs(&rep, &manifest.report, &manifest.trace)
}

fn report(a: ReportArgs, out: &Path) -> CliResult<()> {
    let rep = load_report(&a.report)
        .with_context(|| format!("loading report {}", a.report.display()))?;
    let s = summary(&rep);
    let mut json = serde_json::to_vec_pretty(&s).context("encoding summary")?;
    json.push(b'\n');
    ganguard_core::io::atomic_write(&out.join("summary.json"), &json)?;
    write_trace_csv(&out.join("trace.csv"), &rep)?;
    print!("{s}");
    Ok(())
}
