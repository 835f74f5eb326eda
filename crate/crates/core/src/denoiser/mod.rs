//! A small deterministic UNet-like noise predictor.
//!
//! Layout for `depth = D`:
//!
//! ```text
//! in_proj (1x1)
//! enc{l}: res block, then 2x2 average pool and 1x1 channel lift   l = 0..D
//! attention blocks, encoder half          (bottleneck tokens)
//! mid: res block
//! attention blocks, decoder half          (bottleneck tokens)
//! dec{l}: nearest 2x upsample, 1x1 channel drop, average with skip, res block
//! out_proj (1x1) * output_gain
//! ```
//!
//! The network is fully convolutional apart from the bottleneck attention,
//! so any latent whose height and width are multiples of `2^D` is accepted.
//!
//! Weights are random but structured: the 1x1 projections are orthonormal
//! with the decoder side transposed from the encoder side, and attention
//! keys share most of their projection with queries. Self-attention then
//! averages over tokens with similar features, which is the behavior that
//! key/value injection manipulates.

mod layers;
mod weights;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array3, ArrayD, ArrayView2, ArrayView4, Ix2, Ix4, IxDyn, Zip};
use serde::{Deserialize, Serialize};

use crate::attention::AttentionTensors;
use crate::codec::LatentState;
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::hooks::AttentionHookSet;
use crate::rng::Rng;

pub use weights::{load_weights, read_weights_header, save_weights, BlobInfo, SDNZ_MAGIC};

const TEMB_DIM: usize = 32;
/// Typical per-channel magnitude of bottleneck tokens for mel latents.
const TOKEN_SCALE: f64 = 0.5;

/// Where weights come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Seeded(u64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub heads: usize,
    /// Attention block ids in execution order, strictly increasing.
    pub attn_layer_ids: Vec<usize>,
    /// How many of `attn_layer_ids` sit before the mid block.
    pub encoder_attn_blocks: usize,
    /// Multiplier on the final projection.
    pub output_gain: f64,
    /// Logit scale of the query/key projections.
    pub attn_sharpness: f64,
    /// Step size of each attention block toward its output, in [0,1].
    pub attn_mix: f64,
    pub weight_source: WeightSource,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            in_channels: 4,
            base_channels: 16,
            depth: 2,
            heads: 2,
            attn_layer_ids: (0..6).collect(),
            encoder_attn_blocks: 2,
            output_gain: 0.3,
            attn_sharpness: 8.0,
            attn_mix: 0.5,
            weight_source: WeightSource::Seeded(42),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.depth == 0 {
            return bad("denoiser depth must be at least 1".into());
        }
        if self.in_channels == 0 || self.base_channels == 0 || self.heads == 0 {
            return bad("denoiser channel and head counts must be positive".into());
        }
        if self.bottleneck_channels() % self.heads != 0 {
            return bad(format!(
                "{} bottleneck channels do not split into {} heads",
                self.bottleneck_channels(),
                self.heads
            ));
        }
        if self.attn_layer_ids.windows(2).any(|w| w[1] <= w[0]) {
            return bad("attn_layer_ids must be strictly increasing".into());
        }
        if self.encoder_attn_blocks > self.attn_layer_ids.len() {
            return bad("more encoder attention blocks than attention ids".into());
        }
        if !self.output_gain.is_finite() || !self.attn_sharpness.is_finite() {
            return bad("non-finite denoiser gain".into());
        }
        if !(0.0..=1.0).contains(&self.attn_mix) {
            return bad(format!("attn_mix must be in [0, 1], got {}", self.attn_mix));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        if level == 0 {
            self.base_channels
        } else {
            2 * self.base_channels
        }
    }

    pub fn bottleneck_channels(&self) -> usize {
        self.channels(self.depth)
    }

    /// Height and width must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    /// The attention ids after the mid block.
    pub fn decoder_layer_ids(&self) -> BTreeSet<usize> {
        self.attn_layer_ids[self.encoder_attn_blocks..].iter().copied().collect()
    }

    /// Names and shapes of every weight tensor, in file order.
    pub fn weight_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        let b = self.base_channels;
        v.push(("in_proj".to_string(), vec![b, self.in_channels]));
        let res = |v: &mut Vec<(String, Vec<usize>)>, name: &str, ch: usize| {
            v.push((format!("{name}.conv1"), vec![ch, ch, 3, 3]));
            v.push((format!("{name}.conv2"), vec![ch, ch, 3, 3]));
            v.push((format!("{name}.film"), vec![2 * ch, TEMB_DIM]));
        };
        for l in 0..self.depth {
            res(&mut v, &format!("enc{l}"), self.channels(l));
            v.push((format!("down{l}"), vec![self.channels(l + 1), self.channels(l)]));
        }
        let c = self.bottleneck_channels();
        for &id in &self.attn_layer_ids {
            for p in ["wq", "wk", "wv", "wo"] {
                v.push((format!("attn{id}.{p}"), vec![c, c]));
            }
        }
        res(&mut v, "mid", c);
        for l in (0..self.depth).rev() {
            v.push((format!("up{l}"), vec![self.channels(l), self.channels(l + 1)]));
            res(&mut v, &format!("dec{l}"), self.channels(l));
        }
        v.push(("out_proj".to_string(), vec![self.in_channels, b]));
        v
    }
}

/// Rounds to the nearest f32 so weights survive the f32 file format exactly.
fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

/// `rows x cols` with orthonormal rows (`rows <= cols`) or columns.
fn orthonormal(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let (n, m) = (rows.min(cols), rows.max(cols));
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v = rng.normal_vec(m, 1.0);
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let short = Array2::from_shape_fn((n, m), |(i, j)| basis[i][j]);
    if rows <= cols {
        short
    } else {
        short.t().to_owned()
    }
}

fn seeded_weights(cfg: &DenoiserConfig, seed: u64) -> BTreeMap<String, ArrayD<f64>> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut w: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
    let gauss = |rng: &mut Rng, shape: &[usize], std: f64| {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.normal() * std)
    };
    for (name, shape) in cfg.weight_shapes() {
        let t = if name == "in_proj" {
            orthonormal(shape[0], shape[1], &mut rng).into_dyn()
        } else if name == "out_proj" {
            let in_proj = w["in_proj"].view().into_dimensionality::<Ix2>().expect("2-D");
            in_proj.t().mapv(|v| -v).into_dyn()
        } else if name.starts_with("down") {
            orthonormal(shape[0], shape[1], &mut rng).into_dyn()
        } else if let Some(level) = name.strip_prefix("up") {
            let down = w[&format!("down{level}")].view().into_dimensionality::<Ix2>().expect("2-D");
            down.t().to_owned().into_dyn()
        } else if name.ends_with(".conv1") || name.ends_with(".conv2") {
            let fan_in = (shape[1] * 9) as f64;
            gauss(&mut rng, &shape, 0.3 / fan_in.sqrt())
        } else if name.ends_with(".film") {
            gauss(&mut rng, &shape, 0.05)
        } else if name.ends_with(".wq") {
            // a token with per-channel scale TOKEN_SCALE has a self logit of
            // about `attn_sharpness`
            let c = shape[0] as f64;
            let d = (shape[1] / cfg.heads) as f64;
            let var = cfg.attn_sharpness / (c * TOKEN_SCALE * TOKEN_SCALE * d.sqrt());
            gauss(&mut rng, &shape, var.sqrt())
        } else if name.ends_with(".wk") {
            let base = name.trim_end_matches(".wk");
            let wq = w[&format!("{base}.wq")].clone();
            let std = wq.iter().map(|v| v * v).sum::<f64>().sqrt() / (wq.len() as f64).sqrt();
            let noise = gauss(&mut rng, &shape, 0.1 * std);
            wq + noise
        } else if name.ends_with(".wv") {
            orthonormal(shape[0], shape[1], &mut rng).into_dyn()
        } else if name.ends_with(".wo") {
            let base = name.trim_end_matches(".wo");
            let wv = w[&format!("{base}.wv")].view().into_dimensionality::<Ix2>().expect("2-D");
            wv.t().to_owned().into_dyn()
        } else {
            unreachable!("unhandled weight {name}")
        };
        w.insert(name, t.mapv(f32_exact));
    }
    w
}

/// The toy denoiser: config plus immutable named weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser {
    config: DenoiserConfig,
    weights: BTreeMap<String, ArrayD<f64>>,
}

impl ToyDenoiser {
    /// Builds from `config.weight_source`.
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        match &config.weight_source {
            WeightSource::Seeded(seed) => {
                let weights = seeded_weights(&config, *seed);
                Ok(ToyDenoiser { config, weights })
            }
            WeightSource::File(path) => {
                let path = path.clone();
                let mut d = load_weights(&path)?;
                d.config.weight_source = WeightSource::File(path);
                Ok(d)
            }
        }
    }

    pub fn seeded(seed: u64) -> Self {
        ToyDenoiser::new(DenoiserConfig {
            weight_source: WeightSource::Seeded(seed),
            ..DenoiserConfig::default()
        })
        .expect("default config is valid")
    }

    /// Assembles a denoiser from named weights, checking names and shapes.
    pub fn from_weights(config: DenoiserConfig, weights: BTreeMap<String, ArrayD<f64>>) -> Result<Self> {
        config.validate()?;
        let expected = config.weight_shapes();
        for (name, shape) in &expected {
            let t = weights
                .get(name)
                .ok_or_else(|| Error::format("denoiser weights", format!("missing blob `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "blob `{name}` is {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
        }
        if weights.len() != expected.len() {
            return Err(Error::format("denoiser weights", "unexpected extra blobs"));
        }
        Ok(ToyDenoiser { config, weights })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn weights(&self) -> &BTreeMap<String, ArrayD<f64>> {
        &self.weights
    }

    /// Hex sha256 over every blob in file order.
    pub fn checksum(&self) -> String {
        weights::checksum(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_weights(self, path)
    }

    fn w2(&self, name: &str) -> ArrayView2<'_, f64> {
        self.weights[name].view().into_dimensionality::<Ix2>().expect("validated 2-D weight")
    }

    fn w4(&self, name: &str) -> ArrayView4<'_, f64> {
        self.weights[name].view().into_dimensionality::<Ix4>().expect("validated 4-D weight")
    }

    fn res_block(&self, name: &str, x: &Array3<f64>, temb: &Array1<f64>) -> Array3<f64> {
        let mut h = layers::conv3x3(&x.mapv(layers::silu), self.w4(&format!("{name}.conv1")));
        let f = self.w2(&format!("{name}.film")).dot(temb);
        layers::film(&mut h, &f);
        h.mapv_inplace(layers::silu);
        let h = layers::conv3x3(&h, self.w4(&format!("{name}.conv2")));
        x + &h
    }

    fn attn_block(
        &self,
        id: usize,
        tokens: &Array2<f64>,
        t: usize,
        hooks: &mut AttentionHookSet<'_>,
    ) -> Result<Array2<f64>> {
        let (q, k, v) = (
            tokens.dot(&self.w2(&format!("attn{id}.wq"))),
            tokens.dot(&self.w2(&format!("attn{id}.wk"))),
            tokens.dot(&self.w2(&format!("attn{id}.wv"))),
        );
        let d = q.ncols() / self.config.heads;
        let heads = (0..self.config.heads)
            .map(|h| AttentionTensors {
                q: layers::head_cols(&q, h, d).to_owned(),
                k: layers::head_cols(&k, h, d).to_owned(),
                v: layers::head_cols(&v, h, d).to_owned(),
                layer_id: id,
                timestep: t,
            })
            .collect();
        let outs = hooks.attend(id, t, heads)?;
        let mut merged = Array2::zeros(q.dim());
        for (h, o) in outs.iter().enumerate() {
            if o.dim() != (q.nrows(), d) {
                return Err(Error::Shape(format!(
                    "attention layer {id} head {h} returned {:?}, expected {:?}",
                    o.dim(),
                    (q.nrows(), d)
                )));
            }
            merged.slice_mut(ndarray::s![.., h * d..(h + 1) * d]).assign(o);
        }
        let update = merged.dot(&self.w2(&format!("attn{id}.wo")));
        let mix = self.config.attn_mix;
        Ok(Zip::from(tokens).and(&update).map_collect(|&x, &u| x + mix * (u - x)))
    }

    /// Forward pass on a `[c x h x w]` latent.
    pub fn forward(&self, z: &Array3<f64>, t: usize, hooks: &mut AttentionHookSet<'_>) -> Result<Array3<f64>> {
        let cfg = &self.config;
        let (c, h, w) = z.dim();
        let m = cfg.spatial_multiple();
        if c != cfg.in_channels || h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Shape(format!(
                "latent {c}x{h}x{w} needs {} channels and sides divisible by {m}",
                cfg.in_channels
            )));
        }
        let temb = layers::timestep_embedding(t, TEMB_DIM);
        let mut x = layers::pointwise(z, self.w2("in_proj"));
        let mut skips = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            x = self.res_block(&format!("enc{l}"), &x, &temb);
            skips.push(x.clone());
            x = layers::pointwise(&layers::avg_pool2(&x), self.w2(&format!("down{l}")));
        }
        let (_, bh, bw) = x.dim();
        let mut tokens = layers::to_tokens(&x);
        let (enc_ids, dec_ids) = cfg.attn_layer_ids.split_at(cfg.encoder_attn_blocks);
        for &id in enc_ids {
            tokens = self.attn_block(id, &tokens, t, hooks)?;
        }
        x = self.res_block("mid", &layers::from_tokens(&tokens, bh, bw), &temb);
        tokens = layers::to_tokens(&x);
        for &id in dec_ids {
            tokens = self.attn_block(id, &tokens, t, hooks)?;
        }
        x = layers::from_tokens(&tokens, bh, bw);
        for l in (0..cfg.depth).rev() {
            x = layers::pointwise(&layers::upsample2(&x), self.w2(&format!("up{l}")));
            x += &skips[l];
            x *= 0.5;
            x = self.res_block(&format!("dec{l}"), &x, &temb);
        }
        let mut eps = layers::pointwise(&x, self.w2("out_proj"));
        eps.mapv_inplace(|v| v * cfg.output_gain);
        Ok(eps)
    }
}

impl Denoiser for ToyDenoiser {
    fn predict_noise(&self, z: &LatentState, t: usize, hooks: &mut AttentionHookSet<'_>) -> Result<Array3<f64>> {
        self.forward(&z.tensor, t, hooks)
    }
}
