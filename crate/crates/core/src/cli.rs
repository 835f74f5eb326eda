//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 when the pipeline fails (the failing stage is
//! named on stderr), 2 for usage errors. `STYLUS_THREADS` caps the worker pool.

use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::audio::{read_wav, write_wav, WavEncoding};
use crate::codec::Codec;
use crate::config;
use crate::denoiser::{read_weights_header, SDNZ_MAGIC};
use crate::diffusion::{ddim_invert, ddim_sample, ZeroDenoiser};
use crate::dsp::{istft, stft};
use crate::error::Error;
use crate::hooks::AttentionHookSet;
use crate::metrics::{relative_l2, snr_db};
use crate::pipeline::{
    proxy_metrics, write_sweep_csv, AudioSource, Engine, PhaseMode, SweepAxis, TransferConfig, TransferRequest,
    METRICS_HEADER,
};
use crate::tensor_io::{read_tnsr, read_tnsr_header, TNSR_MAGIC};

pub const THREADS_ENV: &str = "STYLUS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "melstyle", version, about = "Training-free mel-spectrogram style transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transfer the style of one clip (or a blend of two) onto a content clip.
    Transfer(TransferArgs),
    /// Repeat a transfer over values of alpha, gamma or beta.
    Sweep(SweepArgs),
    /// Report the inversion/sampling round-trip error and STFT round-trip SNR.
    Roundtrip(RoundtripArgs),
    /// Compare content-phase and Griffin-Lim reconstruction of one stylized mel.
    GlCompare(GlCompareArgs),
    /// Recompute proxy metrics for a stylized mel.
    Metrics(MetricsArgs),
    /// Print the header of a TNSR, SDNZ or WAV file.
    Inspect(InspectArgs),
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must be in [0, 1], got {v}"))
    }
}

fn at_least_one(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(n),
        _ => Err(format!("must be an integer of at least 1, got `{s}`")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Content,
    GriffinLim,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run config file (key = value).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Diffusion steps T.
    #[arg(long, value_parser = at_least_one)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct StyleArgs {
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    /// Second style reference, mixed in by --beta.
    #[arg(long)]
    pub style_b: Option<PathBuf>,
    #[arg(long, value_parser = unit_interval)]
    pub beta: Option<f64>,
    /// Style guidance scale (default 0.9).
    #[arg(long, value_parser = unit_interval)]
    pub alpha: Option<f64>,
    /// Query preservation (default 0.75).
    #[arg(long, value_parser = unit_interval)]
    pub gamma: Option<f64>,
    #[arg(long, value_enum)]
    pub phase: Option<PhaseArg>,
    #[arg(long, value_parser = at_least_one)]
    pub gl_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[command(flatten)]
    pub style: StyleArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub style: StyleArgs,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_parser = ["alpha", "gamma", "beta"])]
    pub axis: String,
    #[arg(long, value_delimiter = ',', value_parser = unit_interval, default_value = "0,0.25,0.5,0.75,1")]
    pub values: Vec<f64>,
    #[arg(long, default_value = "sweep")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserArg {
    Toy,
    Zero,
}

#[derive(Debug, Args)]
pub struct RoundtripArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "toy")]
    pub denoiser: DenoiserArg,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct GlCompareArgs {
    #[arg(long)]
    pub content: PathBuf,
    /// Defaults to the content clip.
    #[arg(long)]
    pub style: Option<PathBuf>,
    #[arg(long, value_parser = at_least_one)]
    pub gl_iters: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value = "gl_compare")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// A stylized_mel.tnsr, or a result directory containing one.
    #[arg(long)]
    pub mel: PathBuf,
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long)]
    pub style: PathBuf,
    #[arg(long)]
    pub style_b: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// A failure, split by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn require(path: &Path) -> CliResult<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(usage(format!("no such file: {}", path.display())))
    }
}

fn existing(path: &Path) -> CliResult<AudioSource> {
    Ok(AudioSource::Path(require(path)?.to_path_buf()))
}

fn base_config(run: &RunArgs) -> CliResult<TransferConfig> {
    let mut cfg = match &run.config {
        Some(p) => config::load(p).map_err(usage)?,
        None => TransferConfig::default(),
    };
    if let Some(t) = run.steps {
        cfg.steps = t;
    }
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// `beta_sweep` lets `--style-b` stand without `--beta`.
fn request(style: &StyleArgs, run: &RunArgs, beta_sweep: bool) -> CliResult<TransferRequest> {
    match (&style.style_b, style.beta) {
        (Some(_), None) if !beta_sweep => return Err(usage("--style-b requires --beta")),
        (None, Some(_)) => return Err(usage("--beta requires --style-b")),
        _ => {}
    }
    let mut cfg = base_config(run)?;
    let p = &mut cfg.params;
    if let Some(a) = style.alpha {
        p.alpha = a;
    }
    if let Some(g) = style.gamma {
        p.gamma = g;
    }
    if style.beta.is_some() {
        p.beta = style.beta;
    } else if beta_sweep {
        p.beta = Some(0.0);
    }
    if let Some(phase) = style.phase {
        cfg.phase_mode = match phase {
            PhaseArg::Content => PhaseMode::ContentPhase,
            PhaseArg::GriffinLim => PhaseMode::GriffinLim,
        };
    }
    if let Some(n) = style.gl_iters {
        cfg.gl_iters = n;
    }
    let req = TransferRequest {
        content: existing(&style.content)?,
        style: existing(&style.style)?,
        style_b: style.style_b.as_deref().map(existing).transpose()?,
        config: cfg,
    };
    Ok(req)
}

fn cmd_transfer(args: &TransferArgs, out: &mut dyn Write) -> CliResult<()> {
    let req = request(&args.style, &args.run, false)?;
    req.validate().map_err(usage)?;
    let result = crate::pipeline::run_transfer(&req)?;
    result.write(&args.out)?;
    let m = result.diagnostics.metrics;
    writeln!(
        out,
        "content_proxy={:.6} style_proxy={:.6} out={}",
        m.content_proxy,
        m.style_proxy,
        args.out.display()
    )
    .ok();
    Ok(())
}

fn cmd_sweep(args: &SweepArgs, out: &mut dyn Write) -> CliResult<()> {
    let axis: SweepAxis = args.axis.parse().map_err(usage)?;
    let beta_sweep = axis == SweepAxis::Beta;
    if beta_sweep && args.style.style_b.is_none() {
        return Err(usage("a beta sweep needs --style-b"));
    }
    let req = request(&args.style, &args.run, beta_sweep)?;
    req.validate().map_err(usage)?;
    let points = crate::pipeline::run_sweep(&req, axis, &args.values)?;
    for p in &points {
        p.result.write(args.out.join(format!("{}_{:.4}", axis.name(), p.value)))?;
    }
    let csv_path = args.out.join("sweep.csv");
    write_sweep_csv(&csv_path, axis, &points)?;
    let text = std::fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write!(out, "{text}").ok();
    Ok(())
}

/// SNR over samples at least one FFT length away from either end.
fn interior_snr(reference: &[f64], estimate: &[f64], margin: usize) -> f64 {
    let n = reference.len().min(estimate.len());
    let (a, b) = if n > 2 * margin { (margin, n - margin) } else { (0, n) };
    snr_db(&reference[a..b], &estimate[a..b])
}

fn cmd_roundtrip(args: &RoundtripArgs, out: &mut dyn Write) -> CliResult<()> {
    let source = existing(&args.input)?;
    let cfg = base_config(&args.run)?;
    cfg.validate().map_err(usage)?;
    let engine = match args.denoiser {
        DenoiserArg::Toy => Engine::new(cfg.clone())?,
        DenoiserArg::Zero => {
            let codec = Codec::new(cfg.codec)?;
            Engine::with_components(cfg.clone(), Arc::new(codec), Arc::new(ZeroDenoiser), 1)?
        }
    };
    let wave = source.load(cfg.audio.sample_rate).map_err(|e| stage("load", e))?;
    let spec = stft(&wave, &cfg.audio.stft).map_err(|e| stage("analyze", e))?;
    let back = istft(&spec).map_err(|e| stage("analyze", e))?;
    let stft_snr = interior_snr(wave.samples(), back.samples(), cfg.audio.stft.n_fft);

    let prepared = engine.prepare(&wave, &wave, None)?;
    let z0 = &prepared.content.z0;
    let mut hooks = AttentionHookSet::none();
    let traj = ddim_invert(z0, engine.schedule(), engine.denoiser(), &mut hooks).map_err(|e| stage("invert", e))?;
    let z_t = traj.last().expect("trajectory is never empty");
    let rec = ddim_sample(z_t, engine.schedule(), engine.denoiser(), &mut hooks).map_err(|e| stage("sample", e))?;
    let err = relative_l2(rec.tensor.iter(), z0.tensor.iter());
    writeln!(out, "roundtrip_err={err:.6e} stft_snr_db={stft_snr:.3}").ok();
    Ok(())
}

fn stage(name: &'static str, e: Error) -> Failure {
    Failure::Runtime(Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn cmd_gl_compare(args: &GlCompareArgs, out: &mut dyn Write) -> CliResult<()> {
    let content = existing(&args.content)?;
    let style = match &args.style {
        Some(p) => existing(p)?,
        None => content.clone(),
    };
    let mut cfg = base_config(&args.run)?;
    if let Some(n) = args.gl_iters {
        cfg.gl_iters = n;
    }
    cfg.validate().map_err(usage)?;
    let sr = cfg.audio.sample_rate;
    let engine = Engine::new(cfg.clone())?;
    let cw = content.load(sr).map_err(|e| stage("load content", e))?;
    let sw = style.load(sr).map_err(|e| stage("load style", e))?;
    let prepared = engine.prepare(&cw, &sw, None)?;
    let (mel, _) = engine.stylize(&prepared, &cfg.params)?;
    let (phase_wave, _) = engine
        .reconstruct(&prepared, &mel, PhaseMode::ContentPhase)
        .map_err(|e| stage("reconstruct", e))?;
    let (gl_wave, residuals) = engine
        .reconstruct(&prepared, &mel, PhaseMode::GriffinLim)
        .map_err(|e| stage("reconstruct", e))?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_wav(args.out.join("phase_preserving.wav"), &phase_wave, WavEncoding::Float32)?;
    write_wav(args.out.join("griffin_lim.wav"), &gl_wave, WavEncoding::Float32)?;
    let phase_snr = snr_db(cw.samples(), phase_wave.samples());
    let gl_snr = snr_db(cw.samples(), gl_wave.samples());
    let last = residuals.and_then(|r| r.last().copied()).unwrap_or(f64::NAN);
    writeln!(
        out,
        "phase_snr_db={phase_snr:.3} gl_snr_db={gl_snr:.3} gl_residual={last:.6} samples={}",
        phase_wave.len()
    )
    .ok();
    Ok(())
}

fn cmd_metrics(args: &MetricsArgs, out: &mut dyn Write) -> CliResult<()> {
    let mel_path = if args.mel.is_dir() {
        args.mel.join("stylized_mel.tnsr")
    } else {
        args.mel.clone()
    };
    require(&mel_path)?;
    let content = existing(&args.content)?;
    let style = existing(&args.style)?;
    let style_b = args.style_b.as_deref().map(existing).transpose()?;
    let cfg = match &args.config {
        Some(p) => config::load(p).map_err(usage)?,
        None => TransferConfig::default(),
    };
    let mel = read_tnsr(&mel_path)?
        .into_dimensionality::<ndarray::Ix2>()
        .map_err(|_| Error::Shape(format!("{} is not a 2-D mel", mel_path.display())))?;
    let engine = Engine::new(cfg.clone())?;
    let sr = cfg.audio.sample_rate;
    let analyze = |src: &AudioSource, name: &'static str| -> CliResult<ndarray::Array2<f64>> {
        let w = src.load(sr).map_err(|e| stage(name, e))?;
        Ok(engine.analyze(&w).map_err(|e| stage("analyze", e))?.mel.values)
    };
    let c = analyze(&content, "load content")?;
    let s = analyze(&style, "load style")?;
    let b = style_b.as_ref().map(|x| analyze(x, "load style b")).transpose()?;
    let m = proxy_metrics(&mel, &c, &s, b.as_ref());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).map_err(Error::from)?;
    w.write_record([
        "none".to_string(),
        String::new(),
        format!("{:.9}", m.content_proxy),
        format!("{:.9}", m.style_proxy),
        m.style_b_proxy.map(|v| format!("{v:.9}")).unwrap_or_default(),
    ])
    .map_err(Error::from)?;
    let bytes = w.into_inner().map_err(|e| usage(e.to_string()))?;
    out.write_all(&bytes).ok();
    Ok(())
}

fn cmd_inspect(args: &InspectArgs, out: &mut dyn Write) -> CliResult<()> {
    let path = require(&args.path)?;
    let mut magic = [0u8; 8];
    let n = std::fs::File::open(path)
        .and_then(|mut f| f.read(&mut magic))
        .map_err(|e| Error::io(path, e))?;
    let magic = &magic[..n];
    if magic.starts_with(TNSR_MAGIC.as_bytes()) {
        let h = read_tnsr_header(path)?;
        writeln!(out, "format=tnsr dtype={} dims={:?} numel={}", h.dtype, h.dims, h.numel()).ok();
    } else if magic.starts_with(SDNZ_MAGIC.as_bytes()) {
        let (cfg, blobs) = read_weights_header(path)?;
        writeln!(out, "format=sdnz config={}", serde_json::to_string(&cfg).map_err(Error::from)?).ok();
        for b in blobs {
            writeln!(out, "blob name={} shape={:?} sha256={}", b.name, b.shape, b.sha256).ok();
        }
    } else if magic.starts_with(b"RIFF") {
        let w = read_wav(path)?;
        writeln!(
            out,
            "format=wav sample_rate={} samples={} seconds={:.3} peak={:.6}",
            w.sample_rate(),
            w.len(),
            w.duration_secs(),
            w.peak()
        )
        .ok();
    } else {
        return Err(usage(format!("{}: unrecognized file format", path.display())));
    }
    Ok(())
}

/// Applies `STYLUS_THREADS` to the global worker pool.
fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // The pool can only be built once per process; later calls keep the first size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Transfer(a) => cmd_transfer(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Roundtrip(a) => cmd_roundtrip(a, out),
        Command::GlCompare(a) => cmd_gl_compare(a, out),
        Command::Metrics(a) => cmd_metrics(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    }
}

fn print_usage(subcommand: Option<&OsString>) {
    let mut cmd = <Cli as clap::CommandFactory>::command();
    cmd.build();
    let name = subcommand.and_then(|s| s.to_str());
    let usage = match name.and_then(|n| cmd.find_subcommand_mut(n)) {
        Some(sub) => sub.render_usage(),
        None => cmd.render_usage(),
    };
    eprintln!("\n{usage}");
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = e.exit_code();
            if code == 2 && !e.to_string().contains("Usage:") {
                print_usage(args.get(1));
            }
            return code;
        }
    };
    match execute(&cli, &mut std::io::stdout().lock()) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            print_usage(args.get(1));
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}
