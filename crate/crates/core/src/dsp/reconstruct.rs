use ndarray::{Array2, Zip};
use rustfft::num_complex::Complex64;

use super::mel::{mel_invert, MelFilterbank, MelSpectrogram};
use super::stft::{istft, ComplexSpectrogram, StftConfig, StftPlan};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Largest frame-count difference [`align_frames`] absorbs.
pub const MAX_FRAME_PAD: usize = 2;

/// Pads (by repeating the last frame) or crops `mel` to `target` frames when
/// the difference is at most [`MAX_FRAME_PAD`].
pub fn align_frames(mel: &MelSpectrogram, target: usize) -> Result<MelSpectrogram> {
    let have = mel.n_frames();
    if have == target {
        return Ok(mel.clone());
    }
    if have.abs_diff(target) > MAX_FRAME_PAD || have == 0 {
        return Err(Error::FrameMismatch {
            mel: have,
            phase: target,
        });
    }
    let values = Array2::from_shape_fn((mel.n_mels(), target), |(r, c)| {
        mel.values[[r, c.min(have - 1)]]
    });
    Ok(MelSpectrogram {
        values,
        ..mel.clone()
    })
}

/// Combines stylized mel magnitudes with the content clip's STFT phase and
/// inverts the result.
pub fn phase_preserving_reconstruct(
    stylized_mel: &MelSpectrogram,
    content_phase: &ComplexSpectrogram,
    fb: &MelFilterbank,
) -> Result<Waveform> {
    let mel = align_frames(stylized_mel, content_phase.n_frames())?;
    let mag = mel_invert(&mel, fb)?;
    if mag.nrows() != content_phase.n_bins() {
        return Err(Error::Shape(format!(
            "filterbank produces {} bins, spectrogram has {}",
            mag.nrows(),
            content_phase.n_bins()
        )));
    }
    let phase = content_phase.phase();
    let frames = Zip::from(&mag)
        .and(&phase)
        .map_collect(|&m, &p| p * m);
    istft(&ComplexSpectrogram {
        frames,
        ..content_phase.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GriffinLimInit {
    /// All phases zero; deterministic and gives a monotone residual.
    Zero,
    /// Uniform random phases from the given seed.
    Random(u64),
}

#[derive(Debug, Clone)]
pub struct GriffinLimOutput {
    pub waveform: Waveform,
    /// Spectral convergence `|| |STFT(x_k)| - mag || / ||mag||` for each iterate.
    pub residuals: Vec<f64>,
}

/// Griffin-Lim phase retrieval.
///
/// Iterates in the reflect-padded signal domain, so each inverse/forward pair
/// is an orthogonal projection onto consistent spectrograms; the residual is
/// measured in the two-sided spectrum norm (interior bins counted twice),
/// which is the norm that projection is orthogonal in.
pub fn griffin_lim(
    mag: &Array2<f64>,
    cfg: &StftConfig,
    n_iters: usize,
    init: GriffinLimInit,
    sample_rate: u32,
    origin_length: usize,
) -> Result<GriffinLimOutput> {
    if n_iters == 0 {
        return Err(Error::InvalidArgument("griffin-lim needs at least one iteration".into()));
    }
    if mag.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
        return Err(Error::InvalidArgument("magnitudes must be finite and >= 0".into()));
    }
    let plan = StftPlan::new(*cfg)?;
    if mag.nrows() != cfg.n_bins() {
        return Err(Error::Shape(format!(
            "magnitude has {} bins, config implies {}",
            mag.nrows(),
            cfg.n_bins()
        )));
    }
    let n_frames = mag.ncols();
    if n_frames == 0 {
        return Err(Error::InvalidArgument("empty magnitude spectrogram".into()));
    }
    let last_bin = cfg.n_bins() - 1;
    let bin_weight = |k: usize| if k == 0 || k == last_bin { 1.0 } else { 2.0 };
    let mag_norm = mag
        .indexed_iter()
        .map(|((k, _), &m)| bin_weight(k) * m * m)
        .sum::<f64>()
        .sqrt();

    let mut estimate: Array2<Complex64> = match init {
        GriffinLimInit::Zero => mag.mapv(|m| Complex64::new(m, 0.0)),
        GriffinLimInit::Random(seed) => {
            let mut rng = Rng::seed_from_u64(seed);
            mag.mapv(|m| Complex64::from_polar(m, 2.0 * std::f64::consts::PI * rng.uniform()))
        }
    };

    let mut residuals = Vec::with_capacity(n_iters);
    for _ in 0..n_iters {
        let signal = plan.synthesize(&estimate);
        let rebuilt = plan.analyze(&signal, n_frames);
        let mut err = 0.0;
        for ((k, m), s) in rebuilt.indexed_iter() {
            let d = s.norm() - mag[[k, m]];
            err += bin_weight(k) * d * d;
        }
        residuals.push(if mag_norm > 0.0 { err.sqrt() / mag_norm } else { 0.0 });
        Zip::from(&mut estimate)
            .and(&rebuilt)
            .and(mag)
            .for_each(|e, &s, &m| {
                let n = s.norm();
                *e = if n > 0.0 { s * (m / n) } else { Complex64::new(m, 0.0) };
            });
    }
    let padded = plan.synthesize(&estimate);
    let waveform = Waveform::new(plan.crop(&padded, origin_length), sample_rate)?;
    Ok(GriffinLimOutput {
        waveform,
        residuals,
    })
}

/// Frame-wise STFT magnitude of a waveform.
pub fn magnitude_of(w: &Waveform, cfg: &StftConfig) -> Result<Array2<f64>> {
    Ok(super::stft(w, cfg)?.magnitude())
}
