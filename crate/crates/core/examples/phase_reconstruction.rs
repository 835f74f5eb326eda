//! Content-phase reconstruction against Griffin-Lim on the golden signals.

use melstyle::metrics::snr_db;
use melstyle::pipeline::{Engine, PhaseMode, TransferConfig};
use melstyle::signals;

fn main() -> melstyle::Result<()> {
    let engine = Engine::new(TransferConfig {
        steps: 20,
        ..TransferConfig::default()
    })?;
    println!("{:<16} {:>12} {:>12} {:>10}", "signal", "phase dB", "GL dB", "GL resid");
    for (name, w) in signals::golden_set(22050) {
        let prepared = engine.prepare(&w, &w, None)?;
        let (mel, _) = engine.stylize(&prepared, &engine.config().params)?;
        let (phase, _) = engine.reconstruct(&prepared, &mel, PhaseMode::ContentPhase)?;
        let (gl, residuals) = engine.reconstruct(&prepared, &mel, PhaseMode::GriffinLim)?;
        println!(
            "{name:<16} {:>12.2} {:>12.2} {:>10.4}",
            snr_db(w.samples(), phase.samples()),
            snr_db(w.samples(), gl.samples()),
            residuals.and_then(|r| r.last().copied()).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
