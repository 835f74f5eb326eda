//! Interpolating between two style references with beta.

use melstyle::attention::BlendSpace;
use melstyle::pipeline::{Engine, TransferConfig};
use melstyle::signals;

fn main() -> melstyle::Result<()> {
    let sr = 22050;
    let content = signals::harmonic_notes(sr, 2.0, &[220.0, 277.2, 329.6, 277.2], 6);
    let bells = signals::bell_notes(sr, 2.0, &[659.3, 784.0]);
    let noise = signals::lowpass_noise(sr, 2.0, 3);

    let engine = Engine::new(TransferConfig::default())?;
    let prepared = engine.prepare(&content, &bells, Some(&noise))?;
    println!("beta   bells   noise   |output - key/value|");
    for beta in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let mut params = engine.config().params.clone();
        params.beta = Some(beta);
        let (mel, _) = engine.stylize(&prepared, &params)?;
        params.blend_space = BlendSpace::KeyValue;
        let (kv, _) = engine.stylize(&prepared, &params)?;
        let m = engine.metrics(&prepared, &mel);
        let gap = mel.values.iter().zip(kv.values.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "{beta:.2}   {:.4}  {:.4}  {gap:.2e}",
            m.style_proxy,
            m.style_b_proxy.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
