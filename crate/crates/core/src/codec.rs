//! Invertible maps between mel images and diffusion latents.
//!
//! Two built-in codecs stand in for a learned autoencoder:
//!
//! - `identity`: the mel image itself as a 1-channel latent, rescaled from
//!   [0,1] to [-1,1];
//! - `strided-orthogonal`: non-overlapping `f x f` patches of the rescaled
//!   image multiplied by a fixed seeded orthogonal `f^2 x f^2` matrix, giving
//!   `f^2` channels at `1/f` resolution. Exactly invertible and norm
//!   preserving.
//!
//! Anything implementing [`LatentCodec`] can be plugged into the pipeline in
//! place of these, e.g. an adapter around pretrained autoencoder weights.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Which trajectory a latent belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Content,
    Style,
    StyleB,
    Output,
}

/// A latent tensor `[channels x height x width]` at a diffusion timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub tensor: Array3<f64>,
    pub timestep: usize,
    pub branch: Branch,
}

impl LatentState {
    pub fn new(tensor: Array3<f64>, timestep: usize, branch: Branch) -> Self {
        LatentState {
            tensor,
            timestep,
            branch,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.tensor.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.tensor.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodecKind {
    Identity,
    StridedOrthogonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecSpec {
    pub kind: CodecKind,
    pub spatial_factor: usize,
    pub latent_channels: usize,
    /// Seed of the orthogonal patch basis.
    pub seed: u64,
}

impl Default for CodecSpec {
    fn default() -> Self {
        CodecSpec::strided_orthogonal(2)
    }
}

impl CodecSpec {
    pub fn identity() -> Self {
        CodecSpec {
            kind: CodecKind::Identity,
            spatial_factor: 1,
            latent_channels: 1,
            seed: 0,
        }
    }

    pub fn strided_orthogonal(factor: usize) -> Self {
        CodecSpec {
            kind: CodecKind::StridedOrthogonal,
            spatial_factor: factor,
            latent_channels: factor * factor,
            seed: 0x5eed_c0de,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            CodecKind::Identity => self.spatial_factor == 1 && self.latent_channels == 1,
            CodecKind::StridedOrthogonal => {
                self.spatial_factor >= 1 && self.latent_channels == self.spatial_factor * self.spatial_factor
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "inconsistent codec spec: {:?} with factor {} and {} channels",
                self.kind, self.spatial_factor, self.latent_channels
            )))
        }
    }

    pub fn build(&self) -> Result<Codec> {
        Codec::new(*self)
    }
}

/// Adapter seam for mel-image autoencoders.
pub trait LatentCodec: Send + Sync {
    fn latent_channels(&self) -> usize;

    /// Image dimensions must be multiples of this.
    fn spatial_factor(&self) -> usize;

    /// Maps a `[n_mels x n_frames]` image in [0,1] to `[c x h x w]`.
    fn encode_image(&self, image: &Array2<f64>) -> Result<Array3<f64>>;

    /// Maps a latent back to an image, clamped to [0,1].
    fn decode_image(&self, latent: &Array3<f64>) -> Result<Array2<f64>>;
}

/// Built-in codec; holds the patch basis for the orthogonal kind.
#[derive(Debug, Clone)]
pub struct Codec {
    spec: CodecSpec,
    /// Rows are orthonormal basis vectors, `[f^2 x f^2]`.
    basis: Array2<f64>,
}

impl Codec {
    pub fn new(spec: CodecSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.latent_channels;
        let basis = match spec.kind {
            CodecKind::Identity => Array2::eye(1),
            CodecKind::StridedOrthogonal => seeded_orthogonal(n, spec.seed),
        };
        Ok(Codec { spec, basis })
    }

    pub fn spec(&self) -> &CodecSpec {
        &self.spec
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }
}

/// Gram-Schmidt on a seeded Gaussian matrix.
fn seeded_orthogonal(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v = rng.normal_vec(n, 1.0);
        // two passes keep the basis orthogonal to rounding precision
        for _ in 0..2 {
            for r in &rows {
                let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| rows[i][j])
}

impl LatentCodec for Codec {
    fn latent_channels(&self) -> usize {
        self.spec.latent_channels
    }

    fn spatial_factor(&self) -> usize {
        self.spec.spatial_factor
    }

    fn encode_image(&self, image: &Array2<f64>) -> Result<Array3<f64>> {
        let f = self.spec.spatial_factor;
        let (rows, cols) = image.dim();
        if rows == 0 || cols == 0 || rows % f != 0 || cols % f != 0 {
            return Err(Error::Shape(format!(
                "mel image {rows}x{cols} is not divisible by codec factor {f}"
            )));
        }
        let (h, w) = (rows / f, cols / f);
        let c = self.spec.latent_channels;
        let mut out = Array3::zeros((c, h, w));
        let mut patch = vec![0.0; c];
        for i in 0..h {
            for j in 0..w {
                for (p, slot) in patch.iter_mut().enumerate() {
                    *slot = 2.0 * image[[i * f + p / f, j * f + p % f]] - 1.0;
                }
                for ch in 0..c {
                    out[[ch, i, j]] = (0..c).map(|p| self.basis[[ch, p]] * patch[p]).sum();
                }
            }
        }
        Ok(out)
    }

    fn decode_image(&self, latent: &Array3<f64>) -> Result<Array2<f64>> {
        let f = self.spec.spatial_factor;
        let (c, h, w) = latent.dim();
        if c != self.spec.latent_channels {
            return Err(Error::Shape(format!(
                "latent has {c} channels, codec expects {}",
                self.spec.latent_channels
            )));
        }
        let mut out = Array2::zeros((h * f, w * f));
        for i in 0..h {
            for j in 0..w {
                for p in 0..c {
                    let v: f64 = (0..c).map(|ch| self.basis[[ch, p]] * latent[[ch, i, j]]).sum();
                    out[[i * f + p / f, j * f + p % f]] = ((v + 1.0) * 0.5).clamp(0.0, 1.0);
                }
            }
        }
        Ok(out)
    }
}

/// Encodes a mel spectrogram into a `t = 0` latent for `branch`.
pub fn encode(m: &MelSpectrogram, codec: &dyn LatentCodec, branch: Branch) -> Result<LatentState> {
    Ok(LatentState::new(codec.encode_image(&m.values)?, 0, branch))
}

/// Decodes a latent into a mel image in [0,1].
pub fn decode(z: &LatentState, codec: &dyn LatentCodec) -> Result<Array2<f64>> {
    codec.decode_image(&z.tensor)
}
