//! Alpha and gamma sweeps sharing one pair of inversions.

use melstyle::pipeline::{Engine, SweepAxis, TransferConfig};
use melstyle::signals;

fn main() -> melstyle::Result<()> {
    let engine = Engine::new(TransferConfig::default())?;
    let values = [0.0, 0.25, 0.5, 0.75, 1.0];
    for pair in signals::clip_pairs(22050, 1.5) {
        let prepared = engine.prepare(&pair.content, &pair.style, None)?;
        println!("{}", pair.name);
        for axis in [SweepAxis::Alpha, SweepAxis::Gamma] {
            let points = engine.sweep(&prepared, axis, &values)?;
            let row: Vec<String> = points
                .iter()
                .map(|p| format!("{:.5}", p.result.diagnostics.metrics.content_proxy))
                .collect();
            println!("  content proxy over {:<5} {}", axis.name(), row.join("  "));
        }
    }
    Ok(())
}
