//! Deterministic synthetic test audio.
//!
//! These signals stand in for recorded clips in tests, examples and the
//! acceptance suite, so that every run sees identical input.

use std::f64::consts::PI;

use crate::audio::Waveform;
use crate::rng::Rng;

fn samples(sr: u32, secs: f64) -> usize {
    (sr as f64 * secs).round() as usize
}

fn wave(x: Vec<f64>, sr: u32) -> Waveform {
    Waveform::new(x, sr).expect("synthetic signals are finite")
}

pub fn sine(sr: u32, secs: f64, freq: f64, amp: f64) -> Waveform {
    let n = samples(sr, secs);
    wave(
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / sr as f64).sin())
            .collect(),
        sr,
    )
}

pub fn two_tone(sr: u32, secs: f64, f1: f64, f2: f64) -> Waveform {
    let n = samples(sr, secs);
    wave(
        (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                0.4 * (2.0 * PI * f1 * t).sin() + 0.3 * (2.0 * PI * f2 * t).sin()
            })
            .collect(),
        sr,
    )
}

/// Linear frequency sweep from `f0` to `f1`.
pub fn linear_chirp(sr: u32, secs: f64, f0: f64, f1: f64) -> Waveform {
    let n = samples(sr, secs);
    let k = (f1 - f0) / secs;
    wave(
        (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                0.5 * (2.0 * PI * (f0 * t + 0.5 * k * t * t)).sin()
            })
            .collect(),
        sr,
    )
}

/// Exponential frequency sweep from `f0` to `f1`.
pub fn exp_chirp(sr: u32, secs: f64, f0: f64, f1: f64) -> Waveform {
    let n = samples(sr, secs);
    let rate = (f1 / f0).ln() / secs;
    wave(
        (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                0.5 * (2.0 * PI * f0 * ((rate * t).exp() - 1.0) / rate).sin()
            })
            .collect(),
        sr,
    )
}

pub fn white_noise(sr: u32, secs: f64, amp: f64, seed: u64) -> Waveform {
    let mut rng = Rng::seed_from_u64(seed);
    let n = samples(sr, secs);
    wave((0..n).map(|_| amp * (2.0 * rng.uniform() - 1.0)).collect(), sr)
}

/// White noise through a one-pole low-pass.
pub fn lowpass_noise(sr: u32, secs: f64, seed: u64) -> Waveform {
    let mut rng = Rng::seed_from_u64(seed);
    let n = samples(sr, secs);
    let mut y = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        y = 0.95 * y + 0.05 * (2.0 * rng.uniform() - 1.0);
        out.push(3.0 * y);
    }
    wave(out, sr)
}

pub fn am_tone(sr: u32, secs: f64, carrier: f64, rate: f64) -> Waveform {
    let n = samples(sr, secs);
    wave(
        (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                0.5 * (0.6 + 0.4 * (2.0 * PI * rate * t).sin()) * (2.0 * PI * carrier * t).sin()
            })
            .collect(),
        sr,
    )
}

fn note_envelope(t: f64, len: f64) -> f64 {
    let attack = 0.01;
    let a = (t / attack).min(1.0);
    a * (-3.0 * t / len).exp()
}

/// A melody of equal-length notes, each with `n_harmonics` partials at
/// 1/h amplitude and a plucked envelope.
pub fn harmonic_notes(sr: u32, secs: f64, freqs: &[f64], n_harmonics: usize) -> Waveform {
    partial_notes(sr, secs, freqs, |h| (h as f64, 1.0 / h as f64), n_harmonics)
}

/// Odd-harmonic (square-like) timbre.
pub fn reed_notes(sr: u32, secs: f64, freqs: &[f64]) -> Waveform {
    partial_notes(sr, secs, freqs, |h| ((2 * h - 1) as f64, 1.0 / (2 * h - 1) as f64), 6)
}

/// Inharmonic bell-like partials.
pub fn bell_notes(sr: u32, secs: f64, freqs: &[f64]) -> Waveform {
    const RATIOS: [f64; 5] = [1.0, 2.76, 5.40, 8.93, 13.34];
    partial_notes(sr, secs, freqs, |h| (RATIOS[h - 1], 0.8f64.powi(h as i32 - 1)), 5)
}

fn partial_notes(
    sr: u32,
    secs: f64,
    freqs: &[f64],
    partial: impl Fn(usize) -> (f64, f64),
    n_partials: usize,
) -> Waveform {
    let n = samples(sr, secs);
    let note_len = secs / freqs.len().max(1) as f64;
    let nyquist = sr as f64 / 2.0;
    let mut out = vec![0.0; n];
    for (i, x) in out.iter_mut().enumerate() {
        let t = i as f64 / sr as f64;
        let idx = ((t / note_len) as usize).min(freqs.len() - 1);
        let local = t - idx as f64 * note_len;
        let f0 = freqs[idx];
        let mut s = 0.0;
        for h in 1..=n_partials {
            let (ratio, amp) = partial(h);
            if f0 * ratio < nyquist {
                s += amp * (2.0 * PI * f0 * ratio * local).sin();
            }
        }
        *x = 0.3 * note_envelope(local, note_len) * s;
    }
    wave(out, sr)
}

/// Decaying noise bursts at a fixed tempo, a percussion stand-in.
pub fn noise_bursts(sr: u32, secs: f64, per_second: f64, seed: u64) -> Waveform {
    let mut rng = Rng::seed_from_u64(seed);
    let n = samples(sr, secs);
    let period = 1.0 / per_second;
    let mut hp_prev = 0.0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr as f64;
        let local = t % period;
        let white = 2.0 * rng.uniform() - 1.0;
        let bright = white - 0.7 * hp_prev;
        hp_prev = white;
        out.push(0.5 * (-25.0 * local).exp() * bright);
    }
    wave(out, sr)
}

/// Ten one-second signals covering tones, sweeps and noise.
pub fn golden_set(sr: u32) -> Vec<(&'static str, Waveform)> {
    let bin_freq = 40.0 * sr as f64 / 1024.0;
    vec![
        ("sine_bin40", sine(sr, 1.0, bin_freq, 0.5)),
        ("sine_440", sine(sr, 1.0, 440.0, 0.5)),
        ("two_tone", two_tone(sr, 1.0, 330.0, 1250.0)),
        ("linear_chirp", linear_chirp(sr, 1.0, 100.0, 4000.0)),
        ("exp_chirp", exp_chirp(sr, 1.0, 80.0, 6000.0)),
        ("white_noise", white_noise(sr, 1.0, 0.3, 11)),
        ("lowpass_noise", lowpass_noise(sr, 1.0, 12)),
        ("am_tone", am_tone(sr, 1.0, 660.0, 5.0)),
        ("harmonic_notes", harmonic_notes(sr, 1.0, &[220.0, 277.2, 329.6, 440.0], 6)),
        ("bell_notes", bell_notes(sr, 1.0, &[523.3, 392.0])),
    ]
}

/// A named content/style clip pair.
pub struct ClipPair {
    pub name: &'static str,
    pub content: Waveform,
    pub style: Waveform,
}

/// Content melodies paired with contrasting style timbres.
pub fn clip_pairs(sr: u32, secs: f64) -> Vec<ClipPair> {
    let melody_a = [220.0, 246.9, 277.2, 329.6, 293.7, 246.9, 220.0, 196.0];
    let melody_b = [392.0, 349.2, 329.6, 261.6, 293.7, 329.6];
    let melody_c = [146.8, 174.6, 220.0, 196.0];
    vec![
        ClipPair {
            name: "piano_to_bursts",
            content: harmonic_notes(sr, secs, &melody_a, 6),
            style: noise_bursts(sr, secs, 4.0, 21),
        },
        ClipPair {
            name: "piano_to_bell",
            content: harmonic_notes(sr, secs, &melody_b, 5),
            style: bell_notes(sr, secs, &[659.3, 784.0, 523.3]),
        },
        ClipPair {
            name: "reed_to_noise",
            content: reed_notes(sr, secs, &melody_c),
            style: lowpass_noise(sr, secs, 22),
        },
        ClipPair {
            name: "bell_to_reed",
            content: bell_notes(sr, secs, &melody_b),
            style: reed_notes(sr, secs, &[110.0, 130.8, 98.0]),
        },
    ]
}
