//! Capturing attention features during inversion and injecting them by hand.

use std::collections::BTreeSet;

use melstyle::attention::StyleParams;
use melstyle::codec::{Branch, LatentState};
use melstyle::denoiser::ToyDenoiser;
use melstyle::diffusion::{ddim_invert, ddim_sample, make_schedule};
use melstyle::hooks::{AttentionHookSet, FeatureCache, InjectSources};
use melstyle::metrics::relative_l2;
use melstyle::rng::Rng;
use ndarray::Array3;

fn main() -> melstyle::Result<()> {
    let toy = ToyDenoiser::seeded(42);
    let schedule = make_schedule(20, 0.00085, 0.012)?;
    let layers: BTreeSet<usize> = toy.config().decoder_layer_ids();
    let mut rng = Rng::seed_from_u64(1);
    let mut latent = |branch| LatentState::new(Array3::from_shape_fn((4, 16, 32), |_| rng.normal()), 0, branch);
    let (content, style) = (latent(Branch::Content), latent(Branch::Style));

    let mut caches = Vec::new();
    let mut ends = Vec::new();
    for z in [&content, &style] {
        let mut cache = FeatureCache::new(z.branch);
        let traj = ddim_invert(z, &schedule, &toy, &mut AttentionHookSet::capture(&layers, &mut cache))?;
        println!("{:?}: {} cached entries, {} values", z.branch, cache.len(), cache.numel());
        ends.push(traj.last().unwrap().clone());
        caches.push(cache);
    }
    let plain = ddim_sample(&ends[0], &schedule, &toy, &mut AttentionHookSet::none())?;

    for alpha in [0.0, 0.5, 1.0] {
        let params = StyleParams {
            alpha,
            injection_layers: layers.clone(),
            ..StyleParams::default()
        };
        let sources = InjectSources {
            content: &caches[0],
            style: &caches[1],
            style_b: None,
            params: &params,
        };
        let out = ddim_sample(&ends[0], &schedule, &toy, &mut AttentionHookSet::inject(sources))?;
        println!(
            "alpha {alpha:.1}: distance from plain sampling {:.3e}",
            relative_l2(out.tensor.iter(), plain.tensor.iter())
        );
    }
    Ok(())
}
