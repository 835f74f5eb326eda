//! STFT, mel projection and pseudo-inverse on a chirp, with the mel written
//! out as a PGM image.

use melstyle::dsp::{istft, mel_invert, mel_project, stft, MelFilterbank, MelScale, StftConfig};
use melstyle::metrics::{relative_l2, snr_db};
use melstyle::signals;
use melstyle::tensor_io::write_pgm;

fn main() -> melstyle::Result<()> {
    let sr = 22050;
    let cfg = StftConfig::default();
    let wave = signals::exp_chirp(sr, 2.0, 100.0, 8000.0);

    let spec = stft(&wave, &cfg)?;
    let back = istft(&spec)?;
    let n = cfg.n_fft;
    println!(
        "STFT round trip interior SNR {:.1} dB",
        snr_db(&wave.samples()[n..wave.len() - n], &back.samples()[n..wave.len() - n])
    );

    let fb = MelFilterbank::new(sr, cfg.n_fft, 80, 0.0, sr as f64 / 2.0, MelScale::Slaney)?;
    let mag = spec.magnitude();
    let mel = mel_project(&mag, &fb, -80.0)?;
    println!("mel {:?}, filterbank {}", mel.values.dim(), fb.id());
    println!("normalization {:?}", mel.norm_meta);

    let approx = mel_invert(&mel, &fb)?;
    println!("pseudo-inverse magnitude error {:.3}", relative_l2(approx.iter(), mag.iter()));

    let out = std::env::args().nth(1).unwrap_or_else(|| "target/examples/chirp_mel.pgm".into());
    if let Some(dir) = std::path::Path::new(&out).parent() {
        std::fs::create_dir_all(dir).ok();
    }
    write_pgm(&out, &mel.values)?;
    println!("wrote {out}");
    Ok(())
}
