//! Deterministic inversion followed by sampling, with the toy denoiser and
//! with a zero predictor whose trajectory has a closed form.

use melstyle::codec::{Branch, LatentState};
use melstyle::denoiser::ToyDenoiser;
use melstyle::diffusion::{ddim_invert, ddim_sample, make_schedule, NoiseSchedule, ZeroDenoiser};
use melstyle::hooks::AttentionHookSet;
use melstyle::metrics::relative_l2;
use melstyle::rng::Rng;
use ndarray::Array3;

fn main() -> melstyle::Result<()> {
    let mut rng = Rng::seed_from_u64(7);
    let z0 = LatentState::new(Array3::from_shape_fn((4, 40, 64), |_| rng.normal()), 0, Branch::Content);
    let toy = ToyDenoiser::seeded(42);
    let mut hooks = AttentionHookSet::none();

    for steps in [10, 25, 50] {
        let schedule = make_schedule(steps, 0.00085, 0.012)?;
        let trajectory = ddim_invert(&z0, &schedule, &toy, &mut hooks)?;
        let back = ddim_sample(trajectory.last().unwrap(), &schedule, &toy, &mut hooks)?;
        println!(
            "T={steps:<3} alpha_bar_T={:.4} relative error {:.2e}",
            schedule.alpha_bar(steps),
            relative_l2(back.tensor.iter(), z0.tensor.iter())
        );
    }

    let schedule = NoiseSchedule::default();
    let trajectory = ddim_invert(&z0, &schedule, &ZeroDenoiser, &mut hooks)?;
    let z_t = trajectory.last().unwrap();
    let expected = z0.tensor.mapv(|v| v * schedule.alpha_bar(schedule.steps()).sqrt());
    println!("zero predictor: |z_T - sqrt(alpha_bar_T) z_0| / |..| = {:.1e}", relative_l2(z_t.tensor.iter(), expected.iter()));
    Ok(())
}
