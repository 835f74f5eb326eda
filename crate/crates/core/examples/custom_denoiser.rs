//! Plugging a user-defined noise predictor into the engine.

use std::sync::Arc;

use melstyle::codec::{Codec, CodecSpec, LatentState};
use melstyle::diffusion::Denoiser;
use melstyle::hooks::AttentionHookSet;
use melstyle::pipeline::{Engine, TransferConfig};
use melstyle::signals;
use ndarray::Array3;

/// Predicts noise as a fixed fraction of the latent. It has no attention
/// layers, so the injection set must be empty and only AdaIN carries style.
struct Shrink(f64);

impl Denoiser for Shrink {
    fn predict_noise(&self, z: &LatentState, _t: usize, _hooks: &mut AttentionHookSet<'_>) -> melstyle::Result<Array3<f64>> {
        Ok(z.tensor.mapv(|v| v * self.0))
    }
}

fn main() -> melstyle::Result<()> {
    let mut config = TransferConfig {
        codec: CodecSpec::identity(),
        ..TransferConfig::default()
    };
    config.params.injection_layers.clear();
    let codec = Codec::new(config.codec)?;
    let engine = Engine::with_components(config, Arc::new(codec), Arc::new(Shrink(0.05)), 1)?;

    let content = signals::harmonic_notes(22050, 1.0, &[196.0, 247.0], 5);
    let style = signals::noise_bursts(22050, 1.0, 6.0, 9);
    let result = engine.transfer(&content, &style, None)?;
    let m = result.diagnostics.metrics;
    println!("content proxy {:.4}, style proxy {:.4}", m.content_proxy, m.style_proxy);
    println!("output {} samples, peak {:.3}", result.waveform.len(), result.waveform.peak());
    Ok(())
}
