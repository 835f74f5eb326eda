//! Signal-level and spectrogram-level comparison measures.
//!
//! The two proxies stand in for embedding-based content and style scores:
//!
//! - content proxy: cosine similarity of the normalized log-mel images of
//!   the output and the content clip;
//! - style proxy: cosine similarity of the time-averaged mel band energy
//!   distributions of the output and the style clip.
//!
//! They are only meant to expose trends across sweeps, not absolute quality.

use ndarray::{Array1, Array2, Axis};

/// `10 log10(|ref|^2 / |ref - est|^2)`; infinite for an exact match.
pub fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let n = reference.len().min(estimate.len());
    let signal: f64 = reference[..n].iter().map(|x| x * x).sum();
    let noise: f64 = reference[..n]
        .iter()
        .zip(&estimate[..n])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if noise == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (signal / noise).log10()
    }
}

/// `|a - b| / |b|`, with `|a - b|` returned when `b` is zero.
pub fn relative_l2<'a>(a: impl IntoIterator<Item = &'a f64>, b: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

pub fn cosine_similarity<'a>(
    a: impl IntoIterator<Item = &'a f64>,
    b: impl IntoIterator<Item = &'a f64>,
) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.into_iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Cosine similarity of two mel images over their common frames.
pub fn content_proxy(output: &Array2<f64>, content: &Array2<f64>) -> f64 {
    let frames = output.ncols().min(content.ncols());
    let a = output.slice(ndarray::s![.., ..frames]);
    let b = content.slice(ndarray::s![.., ..frames]);
    cosine_similarity(a.iter(), b.iter())
}

fn band_distribution(mel: &Array2<f64>) -> Array1<f64> {
    let mean = mel
        .mean_axis(Axis(1))
        .unwrap_or_else(|| Array1::zeros(mel.nrows()));
    let total = mean.sum();
    if total > 0.0 {
        mean / total
    } else {
        mean
    }
}

/// Cosine similarity of time-averaged band energy distributions.
pub fn style_proxy(output: &Array2<f64>, style: &Array2<f64>) -> f64 {
    let a = band_distribution(output);
    let b = band_distribution(style);
    cosine_similarity(a.iter(), b.iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn snr_of_identical_signals_is_infinite() {
        assert_eq!(snr_db(&[1.0, 2.0], &[1.0, 2.0]), f64::INFINITY);
        let snr = snr_db(&[1.0, 0.0], &[0.9, 0.0]);
        assert!((snr - 20.0).abs() < 1e-9);
    }

    #[test]
    fn proxies_are_one_for_identical_inputs() {
        let m = arr2(&[[0.1, 0.5], [0.9, 0.2]]);
        assert!((content_proxy(&m, &m) - 1.0).abs() < 1e-12);
        assert!((style_proxy(&m, &m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn style_proxy_ignores_time_order() {
        let a = arr2(&[[0.1, 0.5], [0.9, 0.2]]);
        let b = arr2(&[[0.5, 0.1], [0.2, 0.9]]);
        assert!((style_proxy(&a, &b) - 1.0).abs() < 1e-12);
        assert!(content_proxy(&a, &b) < 1.0);
    }
}
