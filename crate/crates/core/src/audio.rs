//! Mono waveforms, WAV I/O and sample-rate conversion.

use std::path::Path;

use crate::error::{Error, Result};

/// A mono, finite-valued audio signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be > 0".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Waveform {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Truncates or zero-pads to exactly `len` samples.
    pub fn fit_to(&self, len: usize) -> Waveform {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Converts to `target_rate`; returns a clone when the rates already match.
    pub fn resampled(&self, target_rate: u32) -> Result<Waveform> {
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        if target_rate == 0 {
            return Err(Error::InvalidArgument("target rate must be > 0".into()));
        }
        Ok(Waveform {
            samples: resample(&self.samples, self.sample_rate, target_rate),
            sample_rate: target_rate,
        })
    }
}

const SINC_ZERO_CROSSINGS: f64 = 32.0;

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// The kernel spans 32 zero crossings of the lower of the two Nyquist rates
/// on each side, which gives roughly 70 dB of stopband rejection and a
/// transition band about 6% of the output Nyquist wide. Computation is direct
/// (no polyphase tables), so cost is O(len * kernel width).
pub fn resample(input: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    if input.is_empty() || from_rate == to_rate {
        return input.to_vec();
    }
    let ratio = to_rate as f64 / from_rate as f64;
    let out_len = ((input.len() as f64) * ratio).round() as usize;
    // cutoff relative to the input sample rate
    let cutoff = 0.5 * ratio.min(1.0) * 0.97;
    let half_width = SINC_ZERO_CROSSINGS / (2.0 * cutoff);
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 / ratio;
        let lo = ((t - half_width).ceil().max(0.0)) as usize;
        let hi = ((t + half_width).floor() as usize).min(input.len() - 1);
        let mut acc = 0.0;
        for (k, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
            let d = t - k as f64;
            let arg = 2.0 * cutoff * d;
            let sinc = if arg.abs() < 1e-12 {
                1.0
            } else {
                (std::f64::consts::PI * arg).sin() / (std::f64::consts::PI * arg)
            };
            let u = (d / half_width + 1.0) * 0.5; // position within the window, 0..1
            let win = 0.42 - 0.5 * (2.0 * std::f64::consts::PI * u).cos()
                + 0.08 * (4.0 * std::f64::consts::PI * u).cos();
            acc += x * 2.0 * cutoff * sinc * win;
        }
        out.push(acc);
    }
    out
}

/// Reads a RIFF/WAVE file (PCM 8/16/24/32-bit or IEEE float32), downmixing
/// all channels by averaging.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

/// Reads a WAV file and converts it to `sample_rate`.
pub fn load_wav(path: impl AsRef<Path>, sample_rate: u32) -> Result<Waveform> {
    read_wav(path)?.resampled(sample_rate)
}

/// Sample encoding used by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform, encoding: WavEncoding) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                writer.write_sample(v)?;
            }
            WavEncoding::Float32 => writer.write_sample(s as f32)?,
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, sr: u32, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / sr as f64).sin())
            .collect()
    }

    #[test]
    fn rejects_non_finite_samples() {
        assert!(Waveform::new(vec![0.0, f64::NAN], 8000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn resample_preserves_in_band_tone() {
        let x = tone(440.0, 44100, 44100);
        let y = resample(&x, 44100, 22050);
        assert_eq!(y.len(), 22050);
        let expected = tone(440.0, 22050, 22050);
        // ignore kernel edge regions
        let err: f64 = (2000..20000).map(|i| (y[i] - expected[i]).abs()).fold(0.0, f64::max);
        assert!(err < 1e-3, "max error {err}");
    }

    #[test]
    fn resample_rejects_above_nyquist() {
        // 15 kHz is above the 11.025 kHz output Nyquist and must be attenuated
        let x = tone(15000.0, 44100, 44100);
        let y = resample(&x, 44100, 22050);
        let rms = (y[2000..20000].iter().map(|v| v * v).sum::<f64>() / 18000.0).sqrt();
        assert!(rms < 1e-3, "alias rms {rms}");
    }

    #[test]
    fn wav_roundtrip_with_stereo_downmix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 22050,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(16384i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let wave = read_wav(&path).unwrap();
        assert_eq!(wave.len(), 100);
        assert!((wave.samples()[0] - 0.25).abs() < 1e-9);

        let path2 = dir.path().join("f.wav");
        let src = Waveform::new(vec![0.5, -0.25, 0.125], 22050).unwrap();
        write_wav(&path2, &src, WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&path2).unwrap(), src);
    }
}
