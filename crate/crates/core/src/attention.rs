//! Self-attention math and the style-injection operators built on it.
//!
//! All tensors here are per-head `[tokens x dim]` matrices. The injection
//! operators are:
//!
//! - query preservation: `Q_bar = gamma * Q_content + (1 - gamma) * Q_output`;
//! - guided blending: `(1 - alpha) * Attn(Q, K_c, V_c) + alpha * Attn(Q, K_s, V_s)`,
//!   which equals `phi_c + alpha * (phi_s - phi_c)` but hits both endpoints
//!   exactly in floating point;
//! - two-style mixing by `beta`, in output space or key/value space;
//! - AdaIN re-normalization of latents.

use std::collections::BTreeSet;

use ndarray::{Array2, Array3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::codec::{Branch, LatentState};
use crate::error::{Error, Result};

/// Query, key and value of one head at one attention layer and timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensors {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub layer_id: usize,
    pub timestep: usize,
}

fn check_qkv(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<()> {
    if q.ncols() != k.ncols() {
        return Err(Error::Shape(format!(
            "query dim {} != key dim {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(Error::Shape(format!(
            "{} keys but {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    if k.nrows() == 0 {
        return Err(Error::Shape("attention over zero tokens".into()));
    }
    Ok(())
}

/// Row-wise softmax with max subtraction, in place.
pub fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|s| (s - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
}

/// Attention weights `softmax(Q K^T / sqrt(dim))`.
pub fn attention_weights(q: &Array2<f64>, k: &Array2<f64>) -> Array2<f64> {
    let scale = 1.0 / (q.ncols().max(1) as f64).sqrt();
    let mut scores = q.dot(&k.t());
    scores.mapv_inplace(|s| s * scale);
    softmax_rows(&mut scores);
    scores
}

/// Scaled dot-product attention `softmax(Q K^T / sqrt(dim)) V`.
pub fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    check_qkv(q, k, v)?;
    Ok(attention_weights(q, k).dot(v))
}

fn same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `w * a + (1 - w) * b`, exact at `w = 0` and `w = 1`.
fn mix(a: &Array2<f64>, b: &Array2<f64>, w: f64) -> Array2<f64> {
    if w == 1.0 {
        return a.clone();
    }
    if w == 0.0 {
        return b.clone();
    }
    Zip::from(a).and(b).map_collect(|&x, &y| w * x + (1.0 - w) * y)
}

/// Convex combination of content and output queries.
pub fn preserve_query(q_content: &Array2<f64>, q_output: &Array2<f64>, gamma: f64) -> Result<Array2<f64>> {
    same_shape(q_content, q_output, "query preservation")?;
    Ok(mix(q_content, q_output, gamma))
}

/// Interpolates two attention outputs by the style guidance scale.
pub fn blend_outputs(phi_content: &Array2<f64>, phi_style: &Array2<f64>, alpha: f64) -> Result<Array2<f64>> {
    same_shape(phi_content, phi_style, "guided blend")?;
    Ok(mix(phi_style, phi_content, alpha))
}

/// Attention against the content and style branches, blended by `alpha`.
pub fn guided_blend(
    q: &Array2<f64>,
    k_content: &Array2<f64>,
    v_content: &Array2<f64>,
    k_style: &Array2<f64>,
    v_style: &Array2<f64>,
    alpha: f64,
) -> Result<Array2<f64>> {
    check_qkv(q, k_content, v_content)?;
    check_qkv(q, k_style, v_style)?;
    if v_content.ncols() != v_style.ncols() {
        return Err(Error::Shape("content and style values differ in width".into()));
    }
    // endpoints skip the branch that would be weighted by zero
    if alpha == 0.0 {
        return attention(q, k_content, v_content);
    }
    if alpha == 1.0 {
        return attention(q, k_style, v_style);
    }
    let phi_c = attention(q, k_content, v_content)?;
    let phi_s = attention(q, k_style, v_style)?;
    blend_outputs(&phi_c, &phi_s, alpha)
}

/// Where two style references are mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlendSpace {
    /// Mix the two guided attention outputs.
    #[default]
    Output,
    /// Mix the style keys and values, then attend once.
    KeyValue,
}

/// Two-style interpolation: `(1 - beta) * phi_A + beta * phi_B`, where each
/// `phi` is a guided blend against the shared content branch.
pub fn multi_style_blend(
    q: &Array2<f64>,
    style_a: (&Array2<f64>, &Array2<f64>),
    style_b: (&Array2<f64>, &Array2<f64>),
    beta: f64,
    alpha: f64,
    content: (&Array2<f64>, &Array2<f64>),
    space: BlendSpace,
) -> Result<Array2<f64>> {
    let (k_c, v_c) = content;
    if beta == 0.0 {
        return guided_blend(q, k_c, v_c, style_a.0, style_a.1, alpha);
    }
    if beta == 1.0 {
        return guided_blend(q, k_c, v_c, style_b.0, style_b.1, alpha);
    }
    match space {
        BlendSpace::Output => {
            let phi_a = guided_blend(q, k_c, v_c, style_a.0, style_a.1, alpha)?;
            let phi_b = guided_blend(q, k_c, v_c, style_b.0, style_b.1, alpha)?;
            Ok(mix(&phi_b, &phi_a, beta))
        }
        BlendSpace::KeyValue => {
            same_shape(style_a.0, style_b.0, "style keys")?;
            same_shape(style_a.1, style_b.1, "style values")?;
            let k = mix(style_b.0, style_a.0, beta);
            let v = mix(style_b.1, style_a.1, beta);
            guided_blend(q, k_c, v_c, &k, &v, alpha)
        }
    }
}

/// Smallest standard deviation used as an AdaIN divisor.
pub const ADAIN_SIGMA_FLOOR: f64 = 1e-5;

/// Per-channel mean and (population) standard deviation over spatial positions.
pub fn channel_stats(z: &Array3<f64>) -> (Vec<f64>, Vec<f64>) {
    z.axis_iter(Axis(0))
        .map(|ch| {
            let n = ch.len() as f64;
            let mean = ch.sum() / n;
            let var = ch.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .unzip()
}

/// Re-normalizes each channel of `z` to the given mean and std.
pub fn adain_to_stats(z: &Array3<f64>, mean: &[f64], std: &[f64]) -> Result<Array3<f64>> {
    let c = z.len_of(Axis(0));
    if mean.len() != c || std.len() != c {
        return Err(Error::Shape(format!(
            "{c} channels but {} target statistics",
            mean.len().min(std.len())
        )));
    }
    let (mu, sigma) = channel_stats(z);
    let mut out = z.clone();
    for (ch, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        let s = sigma[ch].max(ADAIN_SIGMA_FLOOR);
        plane.mapv_inplace(|x| std[ch] * (x - mu[ch]) / s + mean[ch]);
    }
    Ok(out)
}

/// Adaptive instance normalization: content structure with style statistics.
pub fn adain_init(z_content: &LatentState, z_style: &LatentState) -> Result<LatentState> {
    if z_content.shape() != z_style.shape() {
        return Err(Error::Shape(format!(
            "AdaIN content {:?} vs style {:?}",
            z_content.shape(),
            z_style.shape()
        )));
    }
    let (mean, std) = channel_stats(&z_style.tensor);
    Ok(LatentState::new(
        adain_to_stats(&z_content.tensor, &mean, &std)?,
        z_content.timestep,
        Branch::Output,
    ))
}

/// Which statistics the AdaIN initialization targets when two styles are mixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdainTarget {
    /// Per-channel statistics interpolated by beta (style A at 0, B at 1).
    #[default]
    Blend,
    /// Always style A.
    StyleA,
}

/// Style-transfer controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    /// Style guidance scale in [0,1].
    pub alpha: f64,
    /// Query preservation weight in [0,1].
    pub gamma: f64,
    /// Mix between style A (0) and style B (1), when a second style is given.
    pub beta: Option<f64>,
    pub injection_layers: BTreeSet<usize>,
    pub adain_enabled: bool,
    /// When false, style K/V simply replace the output's (no guided blend).
    pub cfg_enabled: bool,
    /// When false, the output branch's own queries are used unmodified.
    pub query_preservation: bool,
    pub inject_key: bool,
    pub inject_value: bool,
    pub blend_space: BlendSpace,
    pub adain_target: AdainTarget,
    /// Inclusive timestep range in which injection is active; all steps when unset.
    pub time_window: Option<(usize, usize)>,
}

impl Default for StyleParams {
    fn default() -> Self {
        StyleParams {
            alpha: 0.9,
            gamma: 0.75,
            beta: None,
            injection_layers: BTreeSet::new(),
            adain_enabled: true,
            cfg_enabled: true,
            query_preservation: true,
            inject_key: true,
            inject_value: true,
            blend_space: BlendSpace::Output,
            adain_target: AdainTarget::Blend,
            time_window: None,
        }
    }
}

impl StyleParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("gamma", self.gamma)?;
        if let Some(b) = self.beta {
            unit("beta", b)?;
        }
        if let Some((lo, hi)) = self.time_window {
            if lo > hi {
                return Err(Error::InvalidArgument(format!("empty time window {lo}..={hi}")));
            }
        }
        Ok(())
    }

    pub fn injects_at(&self, timestep: usize) -> bool {
        self.time_window
            .map_or(true, |(lo, hi)| (lo..=hi).contains(&timestep))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use ndarray::arr2;
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.normal())
    }

    fn naive_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
        let d = q.ncols() as f64;
        let mut out = Array2::zeros((q.nrows(), v.ncols()));
        for i in 0..q.nrows() {
            let scores: Vec<f64> = (0..k.nrows())
                .map(|j| (0..q.ncols()).map(|c| q[[i, c]] * k[[j, c]]).sum::<f64>() / d.sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for j in 0..k.nrows() {
                for c in 0..v.ncols() {
                    out[[i, c]] += scores[j].exp() / z * v[[j, c]];
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = Rng::seed_from_u64(2);
        let q = random(5, 4, &mut rng);
        let k = random(5, 4, &mut rng);
        let v = random(5, 4, &mut rng);
        let fast = attention(&q, &k, &v).unwrap();
        let slow = naive_attention(&q, &k, &v);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn single_token_returns_its_value() {
        let q = arr2(&[[0.3, -1.0], [2.0, 0.5], [0.0, 0.0]]);
        let k = arr2(&[[1.0, 1.0]]);
        let v = arr2(&[[4.0, -2.0, 7.0]]);
        let out = attention(&q, &k, &v).unwrap();
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![4.0, -2.0, 7.0]);
        }
    }

    #[test]
    fn saturated_one_hot_queries_select_values() {
        let q = Array2::<f64>::eye(3) * 1000.0;
        let k = Array2::<f64>::eye(3);
        let v = arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let out = attention(&q, &k, &v).unwrap();
        for (a, b) in out.iter().zip(v.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let q = Array2::zeros((2, 3));
        let k = Array2::zeros((2, 4));
        let v = Array2::zeros((2, 4));
        assert!(attention(&q, &k, &v).is_err());
        assert!(attention(&q, &Array2::zeros((2, 3)), &Array2::zeros((3, 2))).is_err());
    }

    #[test]
    fn preserve_query_endpoints_and_default() {
        let mut rng = Rng::seed_from_u64(3);
        let qc = random(4, 3, &mut rng);
        let qo = random(4, 3, &mut rng);
        assert_eq!(preserve_query(&qc, &qo, 1.0).unwrap(), qc);
        assert_eq!(preserve_query(&qc, &qo, 0.0).unwrap(), qo);
        let one = Array2::ones((1, 1));
        let zero = Array2::zeros((1, 1));
        assert_eq!(preserve_query(&one, &zero, 0.75).unwrap()[[0, 0]], 0.75);
        assert!(preserve_query(&qc, &random(3, 3, &mut rng), 0.5).is_err());
    }

    #[test]
    fn guided_blend_endpoints_are_exact() {
        let mut rng = Rng::seed_from_u64(4);
        let q = random(5, 4, &mut rng);
        let (kc, vc) = (random(6, 4, &mut rng), random(6, 3, &mut rng));
        let (ks, vs) = (random(7, 4, &mut rng), random(7, 3, &mut rng));
        let phi_c = attention(&q, &kc, &vc).unwrap();
        let phi_s = attention(&q, &ks, &vs).unwrap();
        assert_eq!(guided_blend(&q, &kc, &vc, &ks, &vs, 0.0).unwrap(), phi_c);
        assert_eq!(guided_blend(&q, &kc, &vc, &ks, &vs, 1.0).unwrap(), phi_s);
        let c = Array2::zeros((1, 1));
        let s = Array2::ones((1, 1));
        assert_eq!(blend_outputs(&c, &s, 0.9).unwrap()[[0, 0]], 0.9);
    }

    #[test]
    fn beta_endpoints_match_single_style() {
        let mut rng = Rng::seed_from_u64(5);
        let q = random(5, 4, &mut rng);
        let (kc, vc) = (random(6, 4, &mut rng), random(6, 3, &mut rng));
        let (ka, va) = (random(6, 4, &mut rng), random(6, 3, &mut rng));
        let (kb, vb) = (random(6, 4, &mut rng), random(6, 3, &mut rng));
        for space in [BlendSpace::Output, BlendSpace::KeyValue] {
            let at0 = multi_style_blend(&q, (&ka, &va), (&kb, &vb), 0.0, 0.9, (&kc, &vc), space).unwrap();
            let at1 = multi_style_blend(&q, (&ka, &va), (&kb, &vb), 1.0, 0.9, (&kc, &vc), space).unwrap();
            assert_eq!(at0, guided_blend(&q, &kc, &vc, &ka, &va, 0.9).unwrap());
            assert_eq!(at1, guided_blend(&q, &kc, &vc, &kb, &vb, 0.9).unwrap());
        }
    }

    #[test]
    fn beta_distance_from_style_a_grows() {
        let mut rng = Rng::seed_from_u64(6);
        let q = random(8, 4, &mut rng);
        let (kc, vc) = (random(8, 4, &mut rng), random(8, 4, &mut rng));
        let (ka, va) = (random(8, 4, &mut rng), random(8, 4, &mut rng));
        let (kb, vb) = (random(8, 4, &mut rng), random(8, 4, &mut rng));
        let phi_a = guided_blend(&q, &kc, &vc, &ka, &va, 0.9).unwrap();
        let mut last = 0.0;
        for beta in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let out = multi_style_blend(&q, (&ka, &va), (&kb, &vb), beta, 0.9, (&kc, &vc), BlendSpace::Output).unwrap();
            let d = (&out - &phi_a).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(d >= last, "beta {beta}: {d} < {last}");
            last = d;
        }
    }

    fn latent(c: usize, h: usize, w: usize, rng: &mut Rng, scale: f64, shift: f64) -> LatentState {
        LatentState::new(
            Array3::from_shape_fn((c, h, w), |_| rng.normal() * scale + shift),
            50,
            Branch::Content,
        )
    }

    #[test]
    fn adain_fixed_point_and_statistics() {
        let mut rng = Rng::seed_from_u64(7);
        let zc = latent(4, 5, 6, &mut rng, 1.3, 0.2);
        let zs = latent(4, 5, 6, &mut rng, 0.4, -1.0);
        let same = adain_init(&zc, &zc).unwrap();
        for (a, b) in same.tensor.iter().zip(zc.tensor.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        let out = adain_init(&zc, &zs).unwrap();
        let (m_out, s_out) = channel_stats(&out.tensor);
        let (m_sty, s_sty) = channel_stats(&zs.tensor);
        for ch in 0..4 {
            assert!((m_out[ch] - m_sty[ch]).abs() < 1e-5);
            assert!((s_out[ch] - s_sty[ch]).abs() < 1e-5);
        }
        assert_eq!(out.branch, Branch::Output);
    }

    #[test]
    fn adain_constant_channel_takes_style_mean() {
        let mut rng = Rng::seed_from_u64(8);
        let mut zc = latent(2, 4, 4, &mut rng, 1.0, 0.0);
        zc.tensor.index_axis_mut(Axis(0), 1).fill(3.0);
        let zs = latent(2, 4, 4, &mut rng, 0.5, 0.7);
        let out = adain_init(&zc, &zs).unwrap();
        let (m_sty, _) = channel_stats(&zs.tensor);
        for v in out.tensor.index_axis(Axis(0), 1).iter() {
            assert!((v - m_sty[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn adain_shape_mismatch() {
        let mut rng = Rng::seed_from_u64(9);
        assert!(adain_init(&latent(2, 4, 4, &mut rng, 1.0, 0.0), &latent(2, 4, 5, &mut rng, 1.0, 0.0)).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(StyleParams::default().validate().is_ok());
        let bad = StyleParams { alpha: 1.5, ..StyleParams::default() };
        assert!(bad.validate().unwrap_err().to_string().contains("[0, 1]"));
        let bad = StyleParams { beta: Some(-0.1), ..StyleParams::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn guided_blend_is_linear_in_alpha(seed in 0u64..1000, alpha in 0.0f64..=1.0) {
            let mut rng = Rng::seed_from_u64(seed);
            let q = random(4, 3, &mut rng);
            let (kc, vc) = (random(5, 3, &mut rng), random(5, 2, &mut rng));
            let (ks, vs) = (random(5, 3, &mut rng), random(5, 2, &mut rng));
            let at = guided_blend(&q, &kc, &vc, &ks, &vs, alpha).unwrap();
            let at0 = guided_blend(&q, &kc, &vc, &ks, &vs, 0.0).unwrap();
            let at1 = guided_blend(&q, &kc, &vc, &ks, &vs, 1.0).unwrap();
            for ((a, b), c) in at.iter().zip(at0.iter()).zip(at1.iter()) {
                prop_assert!((a - ((1.0 - alpha) * b + alpha * c)).abs() < 1e-9);
            }
        }

        #[test]
        fn attention_rows_are_convex_combinations(seed in 0u64..1000) {
            let mut rng = Rng::seed_from_u64(seed);
            let q = random(6, 4, &mut rng) * 3.0;
            let k = random(7, 4, &mut rng);
            let v = random(7, 5, &mut rng);
            let w = attention_weights(&q, &k);
            for row in w.rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            }
            let out = attention(&q, &k, &v).unwrap();
            for col in 0..5 {
                let lo = v.column(col).iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = v.column(col).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for r in 0..6 {
                    prop_assert!(out[[r, col]] >= lo - 1e-12 && out[[r, col]] <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn preserved_query_is_between_inputs(seed in 0u64..1000, gamma in 0.0f64..=1.0) {
            let mut rng = Rng::seed_from_u64(seed);
            let qc = random(3, 3, &mut rng);
            let qo = random(3, 3, &mut rng);
            let qb = preserve_query(&qc, &qo, gamma).unwrap();
            for ((b, c), o) in qb.iter().zip(qc.iter()).zip(qo.iter()) {
                prop_assert!(*b >= c.min(*o) - 1e-12 && *b <= c.max(*o) + 1e-12);
            }
        }
    }
}
