use std::sync::OnceLock;

use melstyle::metrics::relative_l2;
use melstyle::pipeline::{Engine, Prepared, TransferConfig};
use melstyle::signals;
use proptest::prelude::*;

const SR: u32 = 22050;

fn small() -> TransferConfig {
    TransferConfig {
        steps: 6,
        ..TransferConfig::default()
    }
}

fn shared() -> &'static (Engine, Prepared) {
    static CELL: OnceLock<(Engine, Prepared)> = OnceLock::new();
    CELL.get_or_init(|| {
        let engine = Engine::new(small()).unwrap();
        let pair = signals::clip_pairs(SR, 0.8).swap_remove(0);
        let style_b = signals::bell_notes(SR, 1.1, &[880.0, 660.0]);
        let p = engine.prepare(&pair.content, &pair.style, Some(&style_b)).unwrap();
        (engine, p)
    })
}

#[test]
fn inversion_order_does_not_matter() {
    let engine = Engine::new(small()).unwrap();
    let a = signals::harmonic_notes(SR, 0.6, &[262.0, 330.0], 4);
    let b = signals::reed_notes(SR, 0.6, &[196.0]);
    let ab = engine.prepare(&a, &b, None).unwrap();
    let ba = engine.prepare(&b, &a, None).unwrap();
    let keys: Vec<_> = ab.content.cache.keys().collect();
    assert_eq!(keys, ba.style.cache.keys().collect::<Vec<_>>());
    for (t, l) in keys {
        assert_eq!(ab.content.cache.get(t, l).unwrap(), ba.style.cache.get(t, l).unwrap());
    }
    assert_eq!(ab.content.z_t.tensor, ba.style.z_t.tensor);
}

#[test]
fn caches_cover_every_injection_point() {
    let (engine, p) = shared();
    let layers = &engine.config().params.injection_layers;
    for cache in [&p.content.cache, &p.style.cache, &p.style_b.as_ref().unwrap().cache] {
        cache.check_complete(1..=6, layers).unwrap();
        assert_eq!(cache.len(), 6 * layers.len());
    }
}

#[test]
fn disabled_injection_is_plain_sampling() {
    let (engine, p) = shared();
    let rt = engine.content_roundtrip(p).unwrap();
    let mut params = engine.config().params.clone();
    params.adain_enabled = false;
    params.cfg_enabled = false;
    params.query_preservation = false;
    params.inject_key = false;
    params.inject_value = false;
    let (mel, _) = engine.stylize(p, &params).unwrap();
    assert!(relative_l2(mel.values.iter(), rt.values.iter()) < 1e-12);

    let mut params = engine.config().params.clone();
    params.adain_enabled = false;
    params.time_window = Some((40, 50));
    let (mel, _) = engine.stylize(p, &params).unwrap();
    assert!(relative_l2(mel.values.iter(), rt.values.iter()) < 1e-12);
}

#[test]
fn each_switch_changes_the_output() {
    let (engine, p) = shared();
    let base = engine.config().params.clone();
    let (reference, _) = engine.stylize(p, &base).unwrap();
    let variants = [
        ("adain", { let mut q = base.clone(); q.adain_enabled = false; q }),
        ("key", { let mut q = base.clone(); q.inject_key = false; q }),
        ("value", { let mut q = base.clone(); q.inject_value = false; q }),
        ("query", { let mut q = base.clone(); q.query_preservation = false; q }),
        ("cfg", { let mut q = base.clone(); q.cfg_enabled = false; q }),
    ];
    for (name, params) in variants {
        let (mel, _) = engine.stylize(p, &params).unwrap();
        assert!(mel.values != reference.values, "{name} had no effect");
    }
}

#[test]
fn repeated_stylize_is_bitwise_stable() {
    let (engine, p) = shared();
    let params = engine.config().params.clone();
    let a = engine.stylize(p, &params).unwrap();
    let b = engine.stylize(p, &params).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn stylized_mel_is_bounded_and_finite(
        alpha in 0.0f64..=1.0,
        gamma in 0.0f64..=1.0,
        beta in prop::option::of(0.0f64..=1.0),
    ) {
        let (engine, p) = shared();
        let mut params = engine.config().params.clone();
        params.alpha = alpha;
        params.gamma = gamma;
        params.beta = beta;
        let (mel, norms) = engine.stylize(p, &params).unwrap();
        prop_assert_eq!(mel.values.dim(), (p.n_mels, p.n_frames));
        prop_assert!(mel.values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(norms.iter().all(|n| n.is_finite()));
    }

    #[test]
    fn beta_blend_style_proxy_lies_between_endpoints(beta in 0.05f64..0.95) {
        // the proxy of the blend against style B is bounded by the two single-style runs
        let (engine, p) = shared();
        let proxy_b = |b: f64| {
            let mut params = engine.config().params.clone();
            params.beta = Some(b);
            let (mel, _) = engine.stylize(p, &params).unwrap();
            engine.metrics(p, &mel).style_b_proxy.unwrap()
        };
        let (lo, hi) = (proxy_b(0.0), proxy_b(1.0));
        let mid = proxy_b(beta);
        prop_assert!(mid >= lo.min(hi) - 1e-3 && mid <= lo.max(hi) + 1e-3, "{} not in [{}, {}]", mid, lo, hi);
    }
}
