//! Reading a run config and printing every effective setting.

use melstyle::config;

const EXAMPLE: &str = "\
# lighter run with Griffin-Lim output
diffusion.steps = 30
style.alpha = 0.7          # weaker style
style.injection_layers = 4,5
style.time_window = 1..20
reconstruct.phase = griffin-lim
reconstruct.gl_iters = 64
";

fn main() -> melstyle::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => config::load(path)?,
        None => config::parse(EXAMPLE)?,
    };
    cfg.validate()?;
    print!("{}", config::render(&cfg));
    Ok(())
}
