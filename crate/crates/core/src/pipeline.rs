//! End-to-end style transfer.
//!
//! ```text
//! waveform -> STFT (content phase kept) -> normalized mel -> align/pad -> encode
//!          -> DDIM inversion, capturing attention features per (t, layer)
//!          -> AdaIN initialization of the output latent
//!          -> DDIM sampling with style injection -> decode -> crop
//!          -> denormalize with the content clip's range -> waveform
//! ```
//!
//! An [`Engine`] holds the filterbank, codec, denoiser and schedule. Its
//! [`Prepared`] state (both inversions and their feature caches) can be
//! sampled many times with different [`StyleParams`], which is how sweeps
//! avoid repeating the inversions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{adain_to_stats, channel_stats, AdainTarget, StyleParams};
use crate::audio::{load_wav, write_wav, WavEncoding, Waveform};
use crate::codec::{Branch, Codec, CodecSpec, LatentCodec, LatentState};
use crate::denoiser::{DenoiserConfig, ToyDenoiser};
use crate::diffusion::{
    ddim_invert, ddim_sample_trajectory, make_schedule, Denoiser, NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN,
    DEFAULT_STEPS,
};
use crate::dsp::{
    align_frames, griffin_lim, mel_invert, mel_project, phase_preserving_reconstruct, stft, ComplexSpectrogram,
    GriffinLimInit, MelFilterbank, MelScale, MelSpectrogram, StftConfig,
};
use crate::error::{Error, Result, StageExt};
use crate::hooks::{AttentionHookSet, FeatureCache, InjectSources};
use crate::metrics::{content_proxy, style_proxy};
use crate::tensor_io::write_tnsr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub stft: StftConfig,
    pub n_mels: usize,
    pub f_min: f64,
    /// Defaults to the Nyquist frequency.
    pub f_max: Option<f64>,
    pub mel_scale: MelScale,
    pub floor_db: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            sample_rate: 22050,
            stft: StftConfig::default(),
            n_mels: 80,
            f_min: 0.0,
            f_max: None,
            mel_scale: MelScale::Slaney,
            floor_db: -80.0,
        }
    }
}

impl AudioConfig {
    pub fn filterbank(&self) -> Result<MelFilterbank> {
        let f_max = self.f_max.unwrap_or(self.sample_rate as f64 / 2.0);
        MelFilterbank::new(self.sample_rate, self.stft.n_fft, self.n_mels, self.f_min, f_max, self.mel_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseMode {
    #[default]
    ContentPhase,
    GriffinLim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlInit {
    #[default]
    Zero,
    /// Uniform random phase from the request seed.
    Random,
}

/// Every knob of a transfer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub audio: AudioConfig,
    pub codec: CodecSpec,
    pub denoiser: DenoiserConfig,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub params: StyleParams,
    pub phase_mode: PhaseMode,
    pub gl_iters: usize,
    pub gl_init: GlInit,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        let denoiser = DenoiserConfig::default();
        let params = StyleParams {
            injection_layers: denoiser.decoder_layer_ids(),
            ..StyleParams::default()
        };
        TransferConfig {
            audio: AudioConfig::default(),
            codec: CodecSpec::default(),
            denoiser,
            steps: DEFAULT_STEPS,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
            params,
            phase_mode: PhaseMode::ContentPhase,
            gl_iters: 32,
            gl_init: GlInit::Zero,
            seed: 0,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.codec.validate()?;
        self.denoiser.validate()?;
        self.audio.stft.validate()?;
        make_schedule(self.steps, self.beta_min, self.beta_max)?;
        if self.gl_iters == 0 {
            return Err(Error::InvalidArgument("gl_iters must be at least 1".into()));
        }
        if self.codec.latent_channels != self.denoiser.in_channels {
            return Err(Error::InvalidArgument(format!(
                "codec produces {} channels, denoiser expects {}",
                self.codec.latent_channels, self.denoiser.in_channels
            )));
        }
        let unknown: Vec<_> = self
            .params
            .injection_layers
            .iter()
            .filter(|l| !self.denoiser.attn_layer_ids.contains(l))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "injection layers {unknown:?} are not attention layers of the denoiser"
            )));
        }
        Ok(())
    }
}

/// Where a clip comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum AudioSource {
    Path(PathBuf),
    Wave(Waveform),
}

impl AudioSource {
    pub fn load(&self, sample_rate: u32) -> Result<Waveform> {
        match self {
            AudioSource::Path(p) => load_wav(p, sample_rate),
            AudioSource::Wave(w) => w.resampled(sample_rate),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferRequest {
    pub content: AudioSource,
    pub style: AudioSource,
    pub style_b: Option<AudioSource>,
    pub config: TransferConfig,
}

impl TransferRequest {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        match (&self.style_b, self.config.params.beta) {
            (Some(_), None) => Err(Error::InvalidArgument("a second style requires beta".into())),
            (None, Some(_)) => Err(Error::InvalidArgument("beta requires a second style".into())),
            _ => Ok(()),
        }
    }
}

/// STFT and normalized mel of one clip.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub waveform: Waveform,
    pub spectrogram: ComplexSpectrogram,
    pub mel: MelSpectrogram,
}

/// One inverted clip.
#[derive(Debug, Clone)]
pub struct BranchState {
    pub analysis: Analysis,
    /// Aligned and padded mel image that was encoded.
    pub image: Array2<f64>,
    pub z0: LatentState,
    pub z_t: LatentState,
    pub cache: FeatureCache,
}

/// Inverted content and style clips, ready for sampling.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub content: BranchState,
    pub style: BranchState,
    pub style_b: Option<BranchState>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub timings_ms: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub values: usize,
    pub bytes: usize,
}

impl CacheStats {
    fn of(cache: &FeatureCache) -> Self {
        CacheStats {
            entries: cache.len(),
            values: cache.numel(),
            bytes: cache.numel() * std::mem::size_of::<f64>(),
        }
    }
}

/// Content and style similarity proxies of an output mel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxyMetrics {
    pub content_proxy: f64,
    pub style_proxy: f64,
    pub style_b_proxy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub n_mels: usize,
    pub n_frames: usize,
    pub latent_shape: [usize; 3],
    pub steps: usize,
    pub params: StyleParams,
    pub phase_mode: PhaseMode,
    pub caches: BTreeMap<String, CacheStats>,
    /// L2 norm of the output latent at `t = T, ..., 0`.
    pub latent_norms: Vec<f64>,
    pub gl_residuals: Option<Vec<f64>>,
    pub metrics: ProxyMetrics,
    pub timings_ms: BTreeMap<String, f64>,
}

impl Diagnostics {
    /// Pretty JSON with sorted keys.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::to_value(self)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    pub waveform: Waveform,
    pub mel: MelSpectrogram,
    pub diagnostics: Diagnostics,
}

pub const METRICS_HEADER: [&str; 5] = ["axis", "value", "content_proxy", "style_proxy", "style_b_proxy"];

fn metrics_row(axis: &str, value: Option<f64>, m: &ProxyMetrics) -> [String; 5] {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
    [
        axis.to_string(),
        opt(value),
        format!("{:.9}", m.content_proxy),
        format!("{:.9}", m.style_proxy),
        opt(m.style_b_proxy),
    ]
}

impl TransferResult {
    /// Writes `output.wav`, `stylized_mel.tnsr`, `diagnostics.json` and `metrics.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_wav(dir.join("output.wav"), &self.waveform, WavEncoding::Float32)?;
        write_tnsr(dir.join("stylized_mel.tnsr"), &self.mel.values.clone().into_dyn())?;
        let path = dir.join("diagnostics.json");
        std::fs::write(&path, self.diagnostics.to_json()?).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
        w.write_record(METRICS_HEADER)?;
        w.write_record(metrics_row("none", None, &self.diagnostics.metrics))?;
        w.flush().map_err(|e| Error::io(dir.join("metrics.csv"), e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Alpha,
    Gamma,
    Beta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::Gamma => "gamma",
            SweepAxis::Beta => "beta",
        }
    }

    pub fn apply(self, params: &StyleParams, value: f64) -> StyleParams {
        let mut p = params.clone();
        match self {
            SweepAxis::Alpha => p.alpha = value,
            SweepAxis::Gamma => p.gamma = value,
            SweepAxis::Beta => p.beta = Some(value),
        }
        p
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepAxis::Alpha),
            "gamma" => Ok(SweepAxis::Gamma),
            "beta" => Ok(SweepAxis::Beta),
            other => Err(Error::InvalidArgument(format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub result: TransferResult,
}

/// Writes one metrics row per sweep value.
pub fn write_sweep_csv(path: impl AsRef<Path>, axis: SweepAxis, points: &[SweepPoint]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for p in points {
        w.write_record(metrics_row(axis.name(), Some(p.value), &p.result.diagnostics.metrics))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

/// Cyclically repeats or crops frames to exactly `n`.
fn fit_frames(image: &Array2<f64>, n: usize) -> Array2<f64> {
    let have = image.ncols();
    Array2::from_shape_fn((image.nrows(), n), |(r, c)| image[[r, c % have]])
}

/// Pads rows and columns up to multiples of `m` by edge replication.
fn pad_to_multiple(image: &Array2<f64>, m: usize) -> Array2<f64> {
    let (rows, cols) = image.dim();
    let up = |n: usize| n.div_ceil(m) * m;
    Array2::from_shape_fn((up(rows), up(cols)), |(r, c)| image[[r.min(rows - 1), c.min(cols - 1)]])
}

/// Proxies of an output mel against content and style mels. Style mels are
/// tiled or cropped to the output's frame count first.
pub fn proxy_metrics(
    output: &Array2<f64>,
    content: &Array2<f64>,
    style: &Array2<f64>,
    style_b: Option<&Array2<f64>>,
) -> ProxyMetrics {
    let n = output.ncols();
    ProxyMetrics {
        content_proxy: content_proxy(output, content),
        style_proxy: style_proxy(output, &fit_frames(style, n)),
        style_b_proxy: style_b.map(|b| style_proxy(output, &fit_frames(b, n))),
    }
}

/// Reusable transfer machinery.
pub struct Engine {
    config: TransferConfig,
    filterbank: MelFilterbank,
    codec: Arc<dyn LatentCodec>,
    denoiser: Arc<dyn Denoiser>,
    schedule: NoiseSchedule,
    latent_multiple: usize,
}

impl Engine {
    /// Builds the built-in codec and toy denoiser described by `config`.
    pub fn new(config: TransferConfig) -> Result<Self> {
        config.validate()?;
        let codec = Codec::new(config.codec)?;
        let denoiser = ToyDenoiser::new(config.denoiser.clone())?;
        let multiple = config.denoiser.spatial_multiple();
        Engine::with_components(config, Arc::new(codec), Arc::new(denoiser), multiple)
    }

    /// Uses caller-provided components. Latent sides must be multiples of
    /// `latent_multiple` for the denoiser.
    pub fn with_components(
        config: TransferConfig,
        codec: Arc<dyn LatentCodec>,
        denoiser: Arc<dyn Denoiser>,
        latent_multiple: usize,
    ) -> Result<Self> {
        config.params.validate()?;
        let filterbank = config.audio.filterbank()?;
        let schedule = make_schedule(config.steps, config.beta_min, config.beta_max)?;
        Ok(Engine {
            config,
            filterbank,
            codec,
            denoiser,
            schedule,
            latent_multiple: latent_multiple.max(1),
        })
    }

    pub fn config(&self) -> &TransferConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn denoiser(&self) -> &dyn Denoiser {
        self.denoiser.as_ref()
    }

    pub fn codec(&self) -> &dyn LatentCodec {
        self.codec.as_ref()
    }

    /// Image sides are padded to multiples of this.
    pub fn image_multiple(&self) -> usize {
        self.codec.spatial_factor() * self.latent_multiple
    }

    pub fn analyze(&self, waveform: &Waveform) -> Result<Analysis> {
        let audio = &self.config.audio;
        let waveform = waveform.resampled(audio.sample_rate)?;
        let spectrogram = stft(&waveform, &audio.stft)?;
        let mel = mel_project(&spectrogram.magnitude(), &self.filterbank, audio.floor_db)?;
        Ok(Analysis {
            waveform,
            spectrogram,
            mel,
        })
    }

    fn invert(&self, analysis: Analysis, n_frames: usize, branch: Branch) -> Result<BranchState> {
        let fitted = fit_frames(&analysis.mel.values, n_frames);
        let image = pad_to_multiple(&fitted, self.image_multiple());
        let z0 = LatentState::new(self.codec.encode_image(&image).stage("encode")?, 0, branch);
        let mut cache = FeatureCache::new(branch);
        let layers = &self.config.params.injection_layers;
        let mut traj = ddim_invert(
            &z0,
            &self.schedule,
            self.denoiser.as_ref(),
            &mut AttentionHookSet::capture(layers, &mut cache),
        )
        .stage("invert")?;
        let z_t = traj.pop().expect("trajectory is never empty");
        Ok(BranchState {
            analysis,
            image,
            z0,
            z_t,
            cache,
        })
    }

    /// Analyzes and inverts all clips. The inversions run concurrently.
    pub fn prepare(&self, content: &Waveform, style: &Waveform, style_b: Option<&Waveform>) -> Result<Prepared> {
        let mut timings_ms = BTreeMap::new();
        let start = Instant::now();
        let ca = self.analyze(content).stage("analyze")?;
        let sa = self.analyze(style).stage("analyze")?;
        let ba = style_b.map(|w| self.analyze(w)).transpose().stage("analyze")?;
        timings_ms.insert("analyze".to_string(), ms(start));

        let n_mels = ca.mel.n_mels();
        let n_frames = ca.mel.n_frames();
        let start = Instant::now();
        let (c, (s, b)) = rayon::join(
            || self.invert(ca, n_frames, Branch::Content),
            || {
                rayon::join(
                    || self.invert(sa, n_frames, Branch::Style),
                    || ba.map(|a| self.invert(a, n_frames, Branch::StyleB)).transpose(),
                )
            },
        );
        timings_ms.insert("invert".to_string(), ms(start));
        Ok(Prepared {
            content: c?,
            style: s?,
            style_b: b?,
            n_mels,
            n_frames,
            timings_ms,
        })
    }

    fn initial_latent(&self, p: &Prepared, params: &StyleParams) -> Result<LatentState> {
        let zc = &p.content.z_t;
        if !params.adain_enabled {
            return Ok(LatentState::new(zc.tensor.clone(), zc.timestep, Branch::Output));
        }
        let (mut mean, mut std) = channel_stats(&p.style.z_t.tensor);
        if let (Some(beta), Some(b), AdainTarget::Blend) = (params.beta, &p.style_b, params.adain_target) {
            let (mb, sb) = channel_stats(&b.z_t.tensor);
            let lerp = |a: f64, b: f64| if beta == 0.0 { a } else if beta == 1.0 { b } else { (1.0 - beta) * a + beta * b };
            mean = mean.iter().zip(&mb).map(|(&a, &b)| lerp(a, b)).collect();
            std = std.iter().zip(&sb).map(|(&a, &b)| lerp(a, b)).collect();
        }
        Ok(LatentState::new(
            adain_to_stats(&zc.tensor, &mean, &std)?,
            zc.timestep,
            Branch::Output,
        ))
    }

    fn to_mel(&self, p: &Prepared, z0: &LatentState) -> Result<MelSpectrogram> {
        let image = self.codec.decode_image(&z0.tensor)?;
        let cropped = image.slice(s![..p.n_mels, ..p.n_frames]).to_owned();
        Ok(MelSpectrogram::from_image(
            cropped,
            p.content.analysis.mel.norm_meta,
            self.filterbank.id(),
        ))
    }

    /// Injected reverse sampling. Returns the stylized mel and the latent
    /// norm along the trajectory.
    pub fn stylize(&self, p: &Prepared, params: &StyleParams) -> Result<(MelSpectrogram, Vec<f64>)> {
        params.validate()?;
        if params.beta.is_some() && p.style_b.is_none() {
            return Err(Error::InvalidArgument("beta requires a second style".into()));
        }
        let steps = 1..=self.schedule.steps();
        let layers = &params.injection_layers;
        p.content.cache.check_complete(steps.clone(), layers).stage("sample")?;
        p.style.cache.check_complete(steps.clone(), layers).stage("sample")?;
        if let (Some(_), Some(b)) = (params.beta, &p.style_b) {
            b.cache.check_complete(steps, layers).stage("sample")?;
        }
        let z_t = self.initial_latent(p, params).stage("adain")?;
        let sources = InjectSources {
            content: &p.content.cache,
            style: &p.style.cache,
            style_b: params.beta.and(p.style_b.as_ref()).map(|b| &b.cache),
            params,
        };
        let traj = ddim_sample_trajectory(
            &z_t,
            &self.schedule,
            self.denoiser.as_ref(),
            &mut AttentionHookSet::inject(sources),
        )
        .stage("sample")?;
        let norms = traj
            .iter()
            .map(|z| z.tensor.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let mel = self.to_mel(p, traj.last().expect("trajectory is never empty")).stage("decode")?;
        Ok((mel, norms))
    }

    /// Decoded content latent after plain inversion and sampling, without any hooks.
    pub fn content_roundtrip(&self, p: &Prepared) -> Result<MelSpectrogram> {
        let traj = ddim_sample_trajectory(
            &p.content.z_t,
            &self.schedule,
            self.denoiser.as_ref(),
            &mut AttentionHookSet::none(),
        )
        .stage("sample")?;
        self.to_mel(p, traj.last().expect("trajectory is never empty")).stage("decode")
    }

    /// Turns a stylized mel into audio. Returns GL residuals in Griffin-Lim mode.
    pub fn reconstruct(
        &self,
        p: &Prepared,
        mel: &MelSpectrogram,
        mode: PhaseMode,
    ) -> Result<(Waveform, Option<Vec<f64>>)> {
        let content = &p.content.analysis;
        match mode {
            PhaseMode::ContentPhase => Ok((
                phase_preserving_reconstruct(mel, &content.spectrogram, &self.filterbank)?,
                None,
            )),
            PhaseMode::GriffinLim => {
                let aligned = align_frames(mel, content.spectrogram.n_frames())?;
                let mag = mel_invert(&aligned, &self.filterbank)?;
                let init = match self.config.gl_init {
                    GlInit::Zero => GriffinLimInit::Zero,
                    GlInit::Random => GriffinLimInit::Random(self.config.seed),
                };
                let out = griffin_lim(
                    &mag,
                    &self.config.audio.stft,
                    self.config.gl_iters,
                    init,
                    self.config.audio.sample_rate,
                    content.waveform.len(),
                )?;
                Ok((out.waveform, Some(out.residuals)))
            }
        }
    }

    pub fn metrics(&self, p: &Prepared, mel: &MelSpectrogram) -> ProxyMetrics {
        proxy_metrics(
            &mel.values,
            &p.content.analysis.mel.values,
            &p.style.analysis.mel.values,
            p.style_b.as_ref().map(|b| &b.analysis.mel.values),
        )
    }

    /// Samples, reconstructs and scores one parameter setting.
    pub fn finish(&self, p: &Prepared, params: &StyleParams) -> Result<TransferResult> {
        let mut timings_ms = p.timings_ms.clone();
        let start = Instant::now();
        let (mel, latent_norms) = self.stylize(p, params)?;
        timings_ms.insert("sample".to_string(), ms(start));
        let start = Instant::now();
        let (waveform, gl_residuals) = self
            .reconstruct(p, &mel, self.config.phase_mode)
            .stage("reconstruct")?;
        timings_ms.insert("reconstruct".to_string(), ms(start));
        let mut caches = BTreeMap::new();
        caches.insert("content".to_string(), CacheStats::of(&p.content.cache));
        caches.insert("style".to_string(), CacheStats::of(&p.style.cache));
        if let Some(b) = &p.style_b {
            caches.insert("style_b".to_string(), CacheStats::of(&b.cache));
        }
        let (c, h, w) = p.content.z0.shape();
        let diagnostics = Diagnostics {
            n_mels: p.n_mels,
            n_frames: p.n_frames,
            latent_shape: [c, h, w],
            steps: self.schedule.steps(),
            params: params.clone(),
            phase_mode: self.config.phase_mode,
            caches,
            latent_norms,
            gl_residuals,
            metrics: self.metrics(p, &mel),
            timings_ms,
        };
        Ok(TransferResult {
            waveform,
            mel,
            diagnostics,
        })
    }

    pub fn transfer(&self, content: &Waveform, style: &Waveform, style_b: Option<&Waveform>) -> Result<TransferResult> {
        let p = self.prepare(content, style, style_b)?;
        self.finish(&p, &self.config.params)
    }

    /// One transfer per value along `axis`, reusing the inversions in `p`.
    pub fn sweep(&self, p: &Prepared, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepPoint>> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "{} must be in [0, 1], got {v}",
                axis.name()
            )));
        }
        values
            .par_iter()
            .map(|&value| {
                let params = axis.apply(&self.config.params, value);
                Ok(SweepPoint {
                    value,
                    result: self.finish(p, &params)?,
                })
            })
            .collect()
    }
}

fn load_sources(req: &TransferRequest) -> Result<(Waveform, Waveform, Option<Waveform>)> {
    let sr = req.config.audio.sample_rate;
    let content = req.content.load(sr).stage("load content")?;
    let style = req.style.load(sr).stage("load style")?;
    let style_b = req.style_b.as_ref().map(|s| s.load(sr)).transpose().stage("load style b")?;
    Ok((content, style, style_b))
}

pub fn run_transfer(req: &TransferRequest) -> Result<TransferResult> {
    req.validate().stage("config")?;
    let (content, style, style_b) = load_sources(req)?;
    let engine = Engine::new(req.config.clone()).stage("setup")?;
    engine.transfer(&content, &style, style_b.as_ref())
}

pub fn run_sweep(req: &TransferRequest, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepPoint>> {
    req.config.validate().stage("config")?;
    if axis == SweepAxis::Beta && req.style_b.is_none() {
        return Err(Error::InvalidArgument("a beta sweep needs a second style".into())).stage("config");
    }
    let (content, style, style_b) = load_sources(req)?;
    let engine = Engine::new(req.config.clone()).stage("setup")?;
    let p = engine.prepare(&content, &style, style_b.as_ref())?;
    engine.sweep(&p, axis, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals;

    fn small_config() -> TransferConfig {
        TransferConfig {
            steps: 4,
            ..TransferConfig::default()
        }
    }

    #[test]
    fn fit_and_pad_helpers() {
        let img = ndarray::arr2(&[[1.0, 2.0, 3.0]]);
        assert_eq!(fit_frames(&img, 5), ndarray::arr2(&[[1.0, 2.0, 3.0, 1.0, 2.0]]));
        assert_eq!(fit_frames(&img, 2), ndarray::arr2(&[[1.0, 2.0]]));
        let padded = pad_to_multiple(&img, 4);
        assert_eq!(padded.dim(), (4, 4));
        assert_eq!(padded[[3, 3]], 3.0);
    }

    #[test]
    fn transfer_produces_finite_audio_of_content_length() {
        let engine = Engine::new(small_config()).unwrap();
        let content = signals::harmonic_notes(22050, 0.5, &[220.0, 330.0], 4);
        let style = signals::noise_bursts(22050, 0.7, 4.0, 1);
        let r = engine.transfer(&content, &style, None).unwrap();
        assert_eq!(r.waveform.len(), content.len());
        assert!(r.waveform.samples().iter().all(|v| v.is_finite()));
        assert!(r.mel.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(r.diagnostics.latent_norms.len(), 5);
        assert_eq!(r.diagnostics.caches["content"].entries, 4 * 4);
    }

    #[test]
    fn phase_mode_leaves_mel_unchanged() {
        let content = signals::harmonic_notes(22050, 0.5, &[220.0, 330.0], 4);
        let style = signals::bell_notes(22050, 0.5, &[660.0]);
        let a = Engine::new(small_config()).unwrap().transfer(&content, &style, None).unwrap();
        let gl = TransferConfig {
            phase_mode: PhaseMode::GriffinLim,
            gl_iters: 2,
            ..small_config()
        };
        let b = Engine::new(gl).unwrap().transfer(&content, &style, None).unwrap();
        assert_eq!(a.mel, b.mel);
        assert_eq!(b.diagnostics.gl_residuals.as_ref().map(Vec::len), Some(2));
    }

    #[test]
    fn unknown_injection_layer_is_rejected() {
        let mut cfg = small_config();
        cfg.params.injection_layers.insert(17);
        assert!(Engine::new(cfg).is_err());
    }

    #[test]
    fn beta_requires_second_style() {
        let mut cfg = small_config();
        cfg.params.beta = Some(0.5);
        let engine = Engine::new(cfg).unwrap();
        let w = signals::sine(22050, 0.3, 440.0, 0.5);
        let err = engine.transfer(&w, &w, None).unwrap_err();
        assert!(err.to_string().contains("second style"));
    }

    #[test]
    fn uncaptured_layer_fails_before_sampling() {
        let engine = Engine::new(small_config()).unwrap();
        let w = signals::sine(22050, 0.3, 440.0, 0.5);
        let p = engine.prepare(&w, &w, None).unwrap();
        let mut params = engine.config().params.clone();
        params.injection_layers.insert(0);
        let err = engine.stylize(&p, &params).unwrap_err();
        assert_eq!(err.stage(), Some("sample"));
        assert!(err.to_string().contains("layer 0"));
    }
}
