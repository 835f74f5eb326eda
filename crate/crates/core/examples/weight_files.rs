//! Saving, inspecting and reloading toy denoiser weights.

use melstyle::denoiser::{load_weights, read_weights_header, ToyDenoiser};

fn main() -> melstyle::Result<()> {
    let dir = std::env::temp_dir().join("melstyle-weights");
    std::fs::create_dir_all(&dir).ok();
    let path = dir.join("toy.sdnz");

    let toy = ToyDenoiser::seeded(42);
    toy.save(&path)?;
    let (config, blobs) = read_weights_header(&path)?;
    println!("{} blobs, bottleneck {} channels", blobs.len(), config.bottleneck_channels());
    for b in blobs.iter().take(5) {
        println!("  {:<24} {:?} {}", b.name, b.shape, &b.sha256[..16]);
    }

    let reloaded = load_weights(&path)?;
    println!("checksum {}", toy.checksum());
    println!("reloaded matches: {}", reloaded.checksum() == toy.checksum());
    Ok(())
}
