use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MelScale {
    /// Linear below 1 kHz, logarithmic above (Auditory Toolbox convention).
    Slaney,
    Htk,
}

impl MelScale {
    pub fn hz_to_mel(self, hz: f64) -> f64 {
        match self {
            MelScale::Htk => 2595.0 * (1.0 + hz / 700.0).log10(),
            MelScale::Slaney => {
                let f_sp = 200.0 / 3.0;
                let min_log_hz = 1000.0;
                let min_log_mel = min_log_hz / f_sp;
                let logstep = 6.4f64.ln() / 27.0;
                if hz >= min_log_hz {
                    min_log_mel + (hz / min_log_hz).ln() / logstep
                } else {
                    hz / f_sp
                }
            }
        }
    }

    pub fn mel_to_hz(self, mel: f64) -> f64 {
        match self {
            MelScale::Htk => 700.0 * (10f64.powf(mel / 2595.0) - 1.0),
            MelScale::Slaney => {
                let f_sp = 200.0 / 3.0;
                let min_log_hz = 1000.0;
                let min_log_mel = min_log_hz / f_sp;
                let logstep = 6.4f64.ln() / 27.0;
                if mel >= min_log_mel {
                    min_log_hz * (logstep * (mel - min_log_mel)).exp()
                } else {
                    f_sp * mel
                }
            }
        }
    }
}

/// Triangular mel filters `[n_mels x n_bins]` and their pseudo-inverse.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    pinv: Array2<f64>,
    pub f_min: f64,
    pub f_max: f64,
    pub sample_rate: u32,
    id: String,
}

impl MelFilterbank {
    /// Peak-normalized (height 1, no area normalization) triangular filters.
    pub fn new(
        sample_rate: u32,
        n_fft: usize,
        n_mels: usize,
        f_min: f64,
        f_max: f64,
        scale: MelScale,
    ) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_mels == 0 || !(0.0..f_max).contains(&f_min) || f_max > nyquist {
            return Err(Error::InvalidArgument(format!(
                "bad mel range: n_mels={n_mels} f_min={f_min} f_max={f_max} (nyquist {nyquist})"
            )));
        }
        let n_bins = n_fft / 2 + 1;
        let mel_lo = scale.hz_to_mel(f_min);
        let mel_hi = scale.hz_to_mel(f_max);
        let points: Vec<f64> = (0..n_mels + 2)
            .map(|i| scale.mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut weights = Array2::zeros((n_mels, n_bins));
        for m in 0..n_mels {
            let (lo, centre, hi) = (points[m], points[m + 1], points[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * sample_rate as f64 / n_fft as f64;
                let rise = (f - lo) / (centre - lo);
                let fall = (hi - f) / (hi - centre);
                weights[[m, k]] = rise.min(fall).max(0.0);
            }
        }
        Self::from_weights(weights, sample_rate, f_min, f_max)
    }

    /// Wraps an arbitrary nonnegative weight matrix.
    pub fn from_weights(weights: Array2<f64>, sample_rate: u32, f_min: f64, f_max: f64) -> Result<Self> {
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("filterbank weights must be finite and >= 0".into()));
        }
        if let Some((row, _)) = weights
            .outer_iter()
            .enumerate()
            .find(|(_, r)| !r.iter().any(|&w| w > 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "mel filter {row} has no positive weight; use fewer mels or a larger n_fft"
            )));
        }
        let pinv = pseudo_inverse(&weights)?;
        let id = fingerprint(&weights, sample_rate);
        Ok(MelFilterbank {
            weights,
            pinv,
            f_min,
            f_max,
            sample_rate,
            id,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Moore-Penrose pseudo-inverse, `[n_bins x n_mels]`.
    pub fn pinv(&self) -> &Array2<f64> {
        &self.pinv
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.ncols()
    }

    /// Content hash of the weights and sample rate.
    pub fn id(&self) -> &str {
        &self.id
    }
}

fn fingerprint(weights: &Array2<f64>, sample_rate: u32) -> String {
    let mut h = Sha256::new();
    h.update((weights.nrows() as u64).to_le_bytes());
    h.update((weights.ncols() as u64).to_le_bytes());
    h.update(sample_rate.to_le_bytes());
    for w in weights.iter() {
        h.update(w.to_le_bytes());
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn pseudo_inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (rows, cols) = a.dim();
    let m = DMatrix::from_fn(rows, cols, |i, j| a[[i, j]]);
    let svd = m.svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = max_sv * rows.max(cols) as f64 * f64::EPSILON;
    let p = svd
        .pseudo_inverse(eps)
        .map_err(|e| Error::InvalidArgument(format!("pseudo-inverse failed: {e}")))?;
    Ok(Array2::from_shape_fn((cols, rows), |(i, j)| p[(i, j)]))
}

/// dB range used to map log-amplitudes onto [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormMeta {
    pub floor_db: f64,
    pub min_val: f64,
    pub max_val: f64,
}

impl NormMeta {
    pub fn normalize(&self, db: f64) -> f64 {
        (db - self.min_val) / (self.max_val - self.min_val)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * (self.max_val - self.min_val) + self.min_val
    }
}

/// Normalized log-mel image `[n_mels x n_frames]` with values in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub norm_meta: NormMeta,
    pub filterbank_id: String,
}

impl MelSpectrogram {
    /// Attaches normalization metadata to an image, clamping into [0,1].
    pub fn from_image(values: Array2<f64>, norm_meta: NormMeta, filterbank_id: impl Into<String>) -> Self {
        MelSpectrogram {
            values: values.mapv(|v| v.clamp(0.0, 1.0)),
            norm_meta,
            filterbank_id: filterbank_id.into(),
        }
    }

    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Projects linear magnitudes onto the mel filters, converts to dB with a
/// floor clamp, and min-max normalizes using `(floor_db, peak_db)`.
pub fn mel_project(mag: &Array2<f64>, fb: &MelFilterbank, floor_db: f64) -> Result<MelSpectrogram> {
    if mag.nrows() != fb.n_bins() {
        return Err(Error::Shape(format!(
            "magnitude has {} bins, filterbank expects {}",
            mag.nrows(),
            fb.n_bins()
        )));
    }
    if let Some(((row, col), &value)) = mag.indexed_iter().find(|(_, &v)| !(v >= 0.0)) {
        return Err(Error::NegativeMagnitude { row, col, value });
    }
    let mel = fb.weights().dot(mag);
    let db = mel.mapv(|m| (20.0 * m.max(f64::MIN_POSITIVE).log10()).max(floor_db));
    let peak = db.iter().cloned().fold(floor_db, f64::max);
    let norm_meta = NormMeta {
        floor_db,
        min_val: floor_db,
        // a silent clip still needs a nonempty range
        max_val: if peak > floor_db { peak } else { floor_db + 1.0 },
    };
    Ok(MelSpectrogram {
        values: db.mapv(|d| norm_meta.normalize(d)),
        norm_meta,
        filterbank_id: fb.id().to_string(),
    })
}

/// Undoes normalization and dB conversion, then maps back to linear
/// frequency with the filterbank pseudo-inverse, clamping negatives to 0.
///
/// Cells at the floor (value 0) are treated as silence.
pub fn mel_invert(m: &MelSpectrogram, fb: &MelFilterbank) -> Result<Array2<f64>> {
    if m.filterbank_id != fb.id() {
        return Err(Error::FilterbankMismatch {
            expected: m.filterbank_id.clone(),
            actual: fb.id().to_string(),
        });
    }
    if m.n_mels() != fb.n_mels() {
        return Err(Error::Shape(format!(
            "mel has {} bands, filterbank has {}",
            m.n_mels(),
            fb.n_mels()
        )));
    }
    let amp = m.values.mapv(|v| {
        if v <= 0.0 {
            0.0
        } else {
            10f64.powf(m.norm_meta.denormalize(v) / 20.0)
        }
    });
    Ok(fb.pinv().dot(&amp).mapv(|x| x.max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;

    fn default_fb() -> MelFilterbank {
        MelFilterbank::new(22050, 1024, 80, 0.0, 11025.0, MelScale::Slaney).unwrap()
    }

    #[test]
    fn slaney_scale_roundtrip_and_knee() {
        let s = MelScale::Slaney;
        assert!((s.hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
        for hz in [0.0, 300.0, 1000.0, 4000.0, 11025.0] {
            assert!((s.mel_to_hz(s.hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn filters_are_nonnegative_and_nonempty() {
        let fb = default_fb();
        assert_eq!(fb.weights().dim(), (80, 513));
        assert!(fb.weights().iter().all(|&w| w >= 0.0));
        for row in fb.weights().outer_iter() {
            assert!(row.iter().any(|&w| w > 0.0));
        }
        // adjacent filters overlap
        for m in 0..79 {
            let overlap = fb
                .weights()
                .row(m)
                .iter()
                .zip(fb.weights().row(m + 1).iter())
                .any(|(a, b)| *a > 0.0 && *b > 0.0);
            assert!(overlap, "filters {m} and {} do not overlap", m + 1);
        }
    }

    #[test]
    fn too_many_mels_is_rejected() {
        assert!(MelFilterbank::new(22050, 64, 80, 0.0, 11025.0, MelScale::Slaney).is_err());
    }

    #[test]
    fn all_zero_magnitudes_normalize_to_zero() {
        let fb = default_fb();
        let mel = mel_project(&Array2::zeros((513, 10)), &fb, -80.0).unwrap();
        assert!(mel.values.iter().all(|&v| v == 0.0));
        assert!(mel.norm_meta.min_val < mel.norm_meta.max_val);
        let back = mel_invert(&mel, &fb).unwrap();
        assert!(back.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn global_peak_maps_to_one() {
        let fb = default_fb();
        let mut mag = Array2::from_elem((513, 6), 0.01);
        mag[[200, 3]] = 50.0;
        let mel = mel_project(&mag, &fb, -80.0).unwrap();
        let max = mel.values.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 1.0);
        assert!(mel.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn toy_identity_filterbank_passes_energies() {
        // 2 mels over 2 bins: mel energies equal the input before the log
        let fb = MelFilterbank::from_weights(arr2(&[[1.0, 0.0], [0.0, 1.0]]), 4, 0.0, 2.0).unwrap();
        let mag = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let mel_energy = fb.weights().dot(&mag);
        assert_eq!(mel_energy, mag);
        let mel = mel_project(&mag, &fb, -80.0).unwrap();
        assert_eq!(mel.values[[0, 0]], 1.0);
        assert_eq!(mel.values[[1, 1]], 1.0);
        assert_eq!(mel.values[[0, 1]], 0.0);
    }

    #[test]
    fn square_filterbank_inverts_exactly() {
        let n = 9;
        let mut w = Array2::<f64>::eye(n);
        for i in 0..n - 1 {
            w[[i, i + 1]] = 0.3;
        }
        let fb = MelFilterbank::from_weights(w, 16, 0.0, 8.0).unwrap();
        let mag = Array2::from_shape_fn((n, 5), |(i, j)| 0.5 + (i * 5 + j) as f64 * 0.1);
        let mel = mel_project(&mag, &fb, -80.0).unwrap();
        let back = mel_invert(&mel, &fb).unwrap();
        for (a, b) in mag.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 1e-6 * a.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn negative_magnitude_is_rejected() {
        let fb = default_fb();
        let mut mag = Array2::zeros((513, 2));
        mag[[3, 1]] = -1.0;
        assert!(matches!(
            mel_project(&mag, &fb, -80.0),
            Err(Error::NegativeMagnitude { row: 3, col: 1, .. })
        ));
    }

    #[test]
    fn mismatched_filterbank_is_rejected() {
        let fb = default_fb();
        let other = MelFilterbank::new(22050, 1024, 64, 0.0, 11025.0, MelScale::Slaney).unwrap();
        let mel = mel_project(&Array2::from_elem((513, 3), 1.0), &fb, -80.0).unwrap();
        assert!(matches!(mel_invert(&mel, &other), Err(Error::FilterbankMismatch { .. })));
    }

    proptest! {
        #[test]
        fn normalization_roundtrips_in_db(db in -80.0f64..40.0, peak in -79.0f64..60.0) {
            let meta = NormMeta { floor_db: -80.0, min_val: -80.0, max_val: peak };
            prop_assert!((meta.denormalize(meta.normalize(db)) - db).abs() < 1e-9);
        }

        #[test]
        fn project_in_unit_range_and_invert_nonnegative(
            vals in proptest::collection::vec(0.0f64..100.0, 513 * 3)
        ) {
            let fb = default_fb();
            let mag = Array2::from_shape_vec((513, 3), vals).unwrap();
            let mel = mel_project(&mag, &fb, -80.0).unwrap();
            prop_assert!(mel.values.iter().all(|v| (0.0..=1.0).contains(v)));
            let back = mel_invert(&mel, &fb).unwrap();
            prop_assert!(back.iter().all(|&v| v >= 0.0));
        }
    }
}
