//! Style transfer between two synthesized clips.
//!
//! ```text
//! cargo run --release --example transfer [out_dir]
//! ```

use melstyle::audio::{write_wav, WavEncoding};
use melstyle::pipeline::{Engine, TransferConfig};
use melstyle::signals;

fn main() -> melstyle::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/examples/transfer".into());
    let pair = signals::clip_pairs(22050, 3.0).swap_remove(0);

    let engine = Engine::new(TransferConfig::default())?;
    let result = engine.transfer(&pair.content, &pair.style, None)?;
    result.write(&out)?;
    write_wav(format!("{out}/content.wav"), &pair.content, WavEncoding::Pcm16)?;
    write_wav(format!("{out}/style.wav"), &pair.style, WavEncoding::Pcm16)?;

    let d = &result.diagnostics;
    println!("{}: {} mels x {} frames, latent {:?}", pair.name, d.n_mels, d.n_frames, d.latent_shape);
    println!("content proxy {:.4}, style proxy {:.4}", d.metrics.content_proxy, d.metrics.style_proxy);
    for (stage, ms) in &d.timings_ms {
        println!("  {stage:<12} {ms:>8.1} ms");
    }
    println!("wrote {out}");
    Ok(())
}
