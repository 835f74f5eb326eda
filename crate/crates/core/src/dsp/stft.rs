use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Periodic Hann.
    Hann,
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: WindowKind,
    /// Window length; the window is zero-padded to `n_fft` and centred.
    pub win_length: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            n_fft: 1024,
            hop: 256,
            window: WindowKind::Hann,
            win_length: 1024,
        }
    }
}

impl StftConfig {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        StftConfig {
            n_fft,
            hop,
            window: WindowKind::Hann,
            win_length: n_fft,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Analysis window, `n_fft` samples long.
    pub fn window(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_fft];
        let offset = (self.n_fft - self.win_length) / 2;
        for i in 0..self.win_length {
            w[offset + i] = match self.window {
                WindowKind::Hann => 0.5 - 0.5 * (2.0 * PI * i as f64 / self.win_length as f64).cos(),
                WindowKind::Rectangular => 1.0,
            };
        }
        w
    }

    /// Checks the shape constraints and the constant-overlap-add condition.
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.n_fft % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "n_fft must be even and >= 2, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::InvalidArgument(format!(
                "hop must satisfy 0 < hop <= n_fft, got hop={} n_fft={}",
                self.hop, self.n_fft
            )));
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return Err(Error::InvalidArgument(format!(
                "win_length must be in 1..={}, got {}",
                self.n_fft, self.win_length
            )));
        }
        let w = self.window();
        let overlap_sum = |f: &dyn Fn(f64) -> f64| -> (f64, f64) {
            (0..self.hop)
                .map(|n| (n..self.n_fft).step_by(self.hop).map(|i| f(w[i])).sum::<f64>())
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(s), hi.max(s)))
        };
        let (lo, hi) = overlap_sum(&|x| x);
        if lo <= 0.0 || (hi - lo) > 1e-9 * hi {
            return Err(Error::NonInvertible(format!(
                "{:?} window of length {} is not constant-overlap-add at hop {}",
                self.window, self.win_length, self.hop
            )));
        }
        let (lo_sq, _) = overlap_sum(&|x| x * x);
        if lo_sq <= 1e-12 {
            return Err(Error::NonInvertible(
                "squared window overlap-add vanishes".into(),
            ));
        }
        Ok(())
    }
}

/// Complex STFT frames `[n_bins x n_frames]` plus what is needed to invert them.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: Array2<Complex64>,
    pub config: StftConfig,
    pub origin_length: usize,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn n_bins(&self) -> usize {
        self.frames.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.frames.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.frames.mapv(|c| c.norm())
    }

    /// Unit phasors `exp(i * angle)`; bins with zero magnitude get phase 0.
    pub fn phase(&self) -> Array2<Complex64> {
        self.frames.mapv(|c| {
            let n = c.norm();
            if n > 0.0 {
                c / n
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
    }

    fn check(&self) -> Result<()> {
        self.config.validate()?;
        if self.n_bins() != self.config.n_bins() {
            return Err(Error::Shape(format!(
                "spectrogram has {} bins, config n_fft={} implies {}",
                self.n_bins(),
                self.config.n_fft,
                self.config.n_bins()
            )));
        }
        if self.frames.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite spectrogram entry".into()));
        }
        Ok(())
    }
}

/// Reusable FFT plans and window for one configuration.
pub(crate) struct StftPlan {
    pub cfg: StftConfig,
    window: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        Ok(StftPlan {
            cfg,
            window: cfg.window(),
            fwd: planner.plan_fft_forward(cfg.n_fft),
            inv: planner.plan_fft_inverse(cfg.n_fft),
        })
    }

    pub fn n_frames_for(&self, len: usize) -> usize {
        1 + len / self.cfg.hop
    }

    /// Length of the padded-domain signal covered by `n_frames` frames.
    pub fn padded_len(&self, n_frames: usize) -> usize {
        (n_frames - 1) * self.cfg.hop + self.cfg.n_fft
    }

    /// Reflect-pads `x` by `n_fft / 2` on each side.
    pub fn pad_reflect(&self, x: &[f64]) -> Vec<f64> {
        let pad = self.cfg.n_fft / 2;
        let n = x.len();
        let mut out = Vec::with_capacity(n + 2 * pad);
        out.extend((1..=pad).rev().map(|i| x[i]));
        out.extend_from_slice(x);
        out.extend((0..pad).map(|i| x[n - 2 - i]));
        out
    }

    /// STFT of an already padded signal, frames at multiples of `hop`.
    pub fn analyze(&self, padded: &[f64], n_frames: usize) -> Array2<Complex64> {
        let n_fft = self.cfg.n_fft;
        let n_bins = self.cfg.n_bins();
        let mut out = Array2::zeros((n_bins, n_frames));
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        for m in 0..n_frames {
            let start = m * self.cfg.hop;
            for i in 0..n_fft {
                let s = padded.get(start + i).copied().unwrap_or(0.0);
                buf[i] = Complex64::new(s * self.window[i], 0.0);
            }
            self.fwd.process(&mut buf);
            for k in 0..n_bins {
                out[[k, m]] = buf[k];
            }
        }
        out
    }

    /// Least-squares overlap-add inverse into the padded domain.
    pub fn synthesize(&self, frames: &Array2<Complex64>) -> Vec<f64> {
        let n_fft = self.cfg.n_fft;
        let n_bins = self.cfg.n_bins();
        let n_frames = frames.ncols();
        let len = self.padded_len(n_frames);
        let mut acc = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let scale = 1.0 / n_fft as f64;
        for m in 0..n_frames {
            for k in 0..n_bins {
                buf[k] = frames[[k, m]];
            }
            for k in n_bins..n_fft {
                buf[k] = frames[[n_fft - k, m]].conj();
            }
            self.inv.process(&mut buf);
            let start = m * self.cfg.hop;
            for i in 0..n_fft {
                let w = self.window[i];
                acc[start + i] += buf[i].re * scale * w;
                norm[start + i] += w * w;
            }
        }
        let peak = norm.iter().cloned().fold(0.0, f64::max);
        let floor = peak * 1e-10;
        acc.iter()
            .zip(&norm)
            .map(|(&a, &n)| if n > floor { a / n } else { 0.0 })
            .collect()
    }

    /// Centre crop of a padded-domain signal back to `len` samples.
    pub fn crop(&self, padded: &[f64], len: usize) -> Vec<f64> {
        let pad = self.cfg.n_fft / 2;
        (0..len)
            .map(|i| padded.get(pad + i).copied().unwrap_or(0.0))
            .collect()
    }
}

/// Short-time Fourier transform with reflect-padded centred frames.
pub fn stft(w: &Waveform, cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    let plan = StftPlan::new(*cfg)?;
    if w.len() < cfg.n_fft {
        return Err(Error::InputTooShort {
            len: w.len(),
            need: cfg.n_fft,
        });
    }
    let padded = plan.pad_reflect(w.samples());
    let n_frames = plan.n_frames_for(w.len());
    Ok(ComplexSpectrogram {
        frames: plan.analyze(&padded, n_frames),
        config: *cfg,
        origin_length: w.len(),
        sample_rate: w.sample_rate(),
    })
}

/// Inverse STFT by windowed overlap-add with squared-window normalization,
/// trimmed or zero-padded to the source length.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform> {
    s.check()?;
    let plan = StftPlan::new(s.config)?;
    if s.n_frames() == 0 {
        return Ok(Waveform::silence(s.origin_length, s.sample_rate));
    }
    let padded = plan.synthesize(&s.frames);
    Waveform::new(plan.crop(&padded, s.origin_length), s.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::snr_db;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::rng::Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.uniform() * 2.0 - 1.0).collect()
    }

    #[test]
    fn zero_waveform_gives_zero_spectrogram() {
        let w = Waveform::silence(22050, 22050);
        let s = stft(&w, &StftConfig::default()).unwrap();
        assert!(s.frames.iter().all(|c| c.norm() == 0.0));
        assert_eq!(s.n_bins(), 513);
        assert_eq!(s.n_frames(), 1 + 22050 / 256);
    }

    #[test]
    fn bin_centred_sine_peaks_in_its_bin() {
        let cfg = StftConfig::default();
        let sr = 22050;
        let k = 40;
        let f = k as f64 * sr as f64 / cfg.n_fft as f64;
        let x: Vec<f64> = (0..sr)
            .map(|n| (2.0 * PI * f * n as f64 / sr as f64).sin())
            .collect();
        let s = stft(&Waveform::new(x, sr as u32).unwrap(), &cfg).unwrap();
        let mag = s.magnitude();
        for m in 4..s.n_frames() - 4 {
            let col = mag.column(m);
            let argmax = (0..col.len())
                .max_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap())
                .unwrap();
            assert_eq!(argmax, k, "frame {m}");
        }
    }

    #[test]
    fn noise_roundtrip_snr() {
        let x = noise(22050, 7);
        let w = Waveform::new(x.clone(), 22050).unwrap();
        let y = istft(&stft(&w, &StftConfig::default()).unwrap()).unwrap();
        assert_eq!(y.len(), x.len());
        let snr = snr_db(&x[1024..21026], &y.samples()[1024..21026]);
        assert!(snr >= 60.0, "snr {snr}");
    }

    #[test]
    fn too_short_input() {
        let w = Waveform::new(vec![0.1; 1000], 22050).unwrap();
        let err = stft(&w, &StftConfig::default()).unwrap_err();
        assert!(err.to_string().contains("input too short"));
    }

    #[test]
    fn non_cola_hop_is_rejected() {
        let cfg = StftConfig::new(1024, 300);
        let w = Waveform::new(noise(4096, 1), 22050).unwrap();
        let err = stft(&w, &cfg).unwrap_err();
        assert!(err.to_string().contains("non-invertible configuration"));
        // rectangular windows are COLA whenever hop divides the length
        let rect = StftConfig {
            window: WindowKind::Rectangular,
            ..StftConfig::new(1024, 256)
        };
        assert!(rect.validate().is_ok());
        assert!(StftConfig::new(1024, 512).validate().is_ok());
    }

    #[test]
    fn zero_spectrogram_inverts_to_silence() {
        let cfg = StftConfig::default();
        let s = ComplexSpectrogram {
            frames: Array2::zeros((cfg.n_bins(), 20)),
            config: cfg,
            origin_length: 19 * 256,
            sample_rate: 22050,
        };
        let y = istft(&s).unwrap();
        assert!(y.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_frame_reproduces_frame_content() {
        let cfg = StftConfig::new(64, 16);
        let plan = StftPlan::new(cfg).unwrap();
        let frame: Vec<f64> = noise(64, 3);
        let spec = plan.analyze(&frame, 1);
        let back = plan.synthesize(&spec);
        let w = cfg.window();
        // window-square normalisation divides w * (w * x) by w^2
        for i in 1..64 {
            assert!((back[i] - frame[i]).abs() < 1e-10, "sample {i}");
            assert!(w[i] > 0.0);
        }
        assert_eq!(back[0], 0.0);
    }

    #[test]
    fn bin_count_mismatch_is_an_error() {
        let s = ComplexSpectrogram {
            frames: Array2::zeros((100, 4)),
            config: StftConfig::default(),
            origin_length: 1024,
            sample_rate: 22050,
        };
        assert!(matches!(istft(&s), Err(Error::Shape(_))));
    }
}
