//! Plain-text run configuration.
//!
//! ```text
//! file   := line*
//! line   := blank | comment | key ws* "=" ws* value ws* comment?
//! comment:= "#" any*
//! key    := section "." name | "seed"
//! ```
//!
//! Files are UTF-8. Keys may appear at most once; unknown keys are errors.
//! Every key is optional and falls back to [`TransferConfig::default`].
//! Lists are comma-separated, ranges are written `a..b` (inclusive), and
//! optional values accept `none`.
//!
//! | key | value |
//! |---|---|
//! | `audio.sample_rate` | Hz |
//! | `stft.n_fft`, `stft.hop`, `stft.win_length` | samples |
//! | `stft.window` | `hann` \| `rectangular` |
//! | `mel.n_mels`, `mel.f_min`, `mel.floor_db` | number |
//! | `mel.f_max` | Hz or `none` (Nyquist) |
//! | `mel.scale` | `slaney` \| `htk` |
//! | `codec.kind` | `identity` \| `strided-orthogonal` |
//! | `codec.factor`, `codec.channels`, `codec.seed` | integer |
//! | `denoiser.base_channels`, `.depth`, `.heads`, `.encoder_attn_blocks` | integer |
//! | `denoiser.attn_layer_ids` | list |
//! | `denoiser.output_gain`, `.attn_sharpness`, `.attn_mix` | number |
//! | `denoiser.seed` | integer, seeded weights |
//! | `denoiser.weights` | path to an SDNZ file |
//! | `diffusion.steps`, `diffusion.beta_min`, `diffusion.beta_max` | number |
//! | `style.alpha`, `style.gamma` | [0, 1] |
//! | `style.beta` | [0, 1] or `none` |
//! | `style.injection_layers` | list or `decoder` |
//! | `style.adain`, `.cfg`, `.query_preservation`, `.inject_key`, `.inject_value` | `true` \| `false` |
//! | `style.blend_space` | `output` \| `key-value` |
//! | `style.adain_target` | `blend` \| `style-a` |
//! | `style.time_window` | range or `none` |
//! | `reconstruct.phase` | `content-phase` \| `griffin-lim` |
//! | `reconstruct.gl_iters` | integer |
//! | `reconstruct.gl_init` | `zero` \| `random` |
//! | `seed` | integer |
//!
//! The denoiser's input channel count always follows `codec.channels`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::denoiser::WeightSource;
use crate::error::{Error, Result};
use crate::pipeline::TransferConfig;

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| err(line, format!("`{key}` expects a number, got `{v}`")))
}

fn boolean(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(err(line, format!("`{key}` expects true or false, got `{v}`"))),
    }
}

/// Parses through the type's serde name.
fn named<T: DeserializeOwned>(line: usize, key: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_string()))
        .map_err(|_| err(line, format!("unknown value `{v}` for `{key}`")))
}

fn optional<T>(v: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
    if v == "none" {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

fn list(line: usize, key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| num(line, key, s.trim())).collect()
}

fn range(line: usize, key: &str, v: &str) -> Result<(usize, usize)> {
    let (a, b) = v
        .split_once("..")
        .ok_or_else(|| err(line, format!("`{key}` expects a range a..b, got `{v}`")))?;
    Ok((num(line, key, a.trim())?, num(line, key, b.trim())?))
}

fn name_of<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("not a unit enum: {other:?}"),
    }
}

fn join(v: impl IntoIterator<Item = usize>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Applies one `key = value` pair. `line` is only used in error messages.
pub fn apply(cfg: &mut TransferConfig, line: usize, key: &str, v: &str) -> Result<()> {
    let a = &mut cfg.audio;
    let d = &mut cfg.denoiser;
    let p = &mut cfg.params;
    match key {
        "audio.sample_rate" => a.sample_rate = num(line, key, v)?,
        "stft.n_fft" => a.stft.n_fft = num(line, key, v)?,
        "stft.hop" => a.stft.hop = num(line, key, v)?,
        "stft.win_length" => a.stft.win_length = num(line, key, v)?,
        "stft.window" => a.stft.window = named(line, key, v)?,
        "mel.n_mels" => a.n_mels = num(line, key, v)?,
        "mel.f_min" => a.f_min = num(line, key, v)?,
        "mel.f_max" => a.f_max = optional(v, |v| num(line, key, v))?,
        "mel.scale" => a.mel_scale = named(line, key, v)?,
        "mel.floor_db" => a.floor_db = num(line, key, v)?,
        "codec.kind" => cfg.codec.kind = named(line, key, v)?,
        "codec.factor" => cfg.codec.spatial_factor = num(line, key, v)?,
        "codec.channels" => cfg.codec.latent_channels = num(line, key, v)?,
        "codec.seed" => cfg.codec.seed = num(line, key, v)?,
        "denoiser.base_channels" => d.base_channels = num(line, key, v)?,
        "denoiser.depth" => d.depth = num(line, key, v)?,
        "denoiser.heads" => d.heads = num(line, key, v)?,
        "denoiser.attn_layer_ids" => d.attn_layer_ids = list(line, key, v)?,
        "denoiser.encoder_attn_blocks" => d.encoder_attn_blocks = num(line, key, v)?,
        "denoiser.output_gain" => d.output_gain = num(line, key, v)?,
        "denoiser.attn_sharpness" => d.attn_sharpness = num(line, key, v)?,
        "denoiser.attn_mix" => d.attn_mix = num(line, key, v)?,
        "denoiser.seed" => d.weight_source = WeightSource::Seeded(num(line, key, v)?),
        "denoiser.weights" => d.weight_source = WeightSource::File(PathBuf::from(v)),
        "diffusion.steps" => cfg.steps = num(line, key, v)?,
        "diffusion.beta_min" => cfg.beta_min = num(line, key, v)?,
        "diffusion.beta_max" => cfg.beta_max = num(line, key, v)?,
        "style.alpha" => p.alpha = num(line, key, v)?,
        "style.gamma" => p.gamma = num(line, key, v)?,
        "style.beta" => p.beta = optional(v, |v| num(line, key, v))?,
        "style.injection_layers" => {
            p.injection_layers = if v == "decoder" {
                d.decoder_layer_ids()
            } else {
                list(line, key, v)?.into_iter().collect::<BTreeSet<_>>()
            }
        }
        "style.adain" => p.adain_enabled = boolean(line, key, v)?,
        "style.cfg" => p.cfg_enabled = boolean(line, key, v)?,
        "style.query_preservation" => p.query_preservation = boolean(line, key, v)?,
        "style.inject_key" => p.inject_key = boolean(line, key, v)?,
        "style.inject_value" => p.inject_value = boolean(line, key, v)?,
        "style.blend_space" => p.blend_space = named(line, key, v)?,
        "style.adain_target" => p.adain_target = named(line, key, v)?,
        "style.time_window" => p.time_window = optional(v, |v| range(line, key, v))?,
        "reconstruct.phase" => cfg.phase_mode = named(line, key, v)?,
        "reconstruct.gl_iters" => cfg.gl_iters = num(line, key, v)?,
        "reconstruct.gl_init" => cfg.gl_init = named(line, key, v)?,
        "seed" => cfg.seed = num(line, key, v)?,
        _ => return Err(err(line, format!("unknown key `{key}`"))),
    }
    cfg.denoiser.in_channels = cfg.codec.latent_channels;
    Ok(())
}

/// Parses a config, starting from `base`.
pub fn parse_onto(base: TransferConfig, text: &str) -> Result<TransferConfig> {
    let mut cfg = base;
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split_once('#').map_or(raw, |(c, _)| c).trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(err(line, format!("duplicate key `{key}`")));
        }
        apply(&mut cfg, line, key, value.trim())?;
    }
    Ok(cfg)
}

pub fn parse(text: &str) -> Result<TransferConfig> {
    parse_onto(TransferConfig::default(), text)
}

pub fn load(path: impl AsRef<Path>) -> Result<TransferConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

/// Writes every key in a form [`parse`] reads back to the same config.
pub fn render(cfg: &TransferConfig) -> String {
    let a = &cfg.audio;
    let d = &cfg.denoiser;
    let p = &cfg.params;
    let opt = |v: Option<String>| v.unwrap_or_else(|| "none".to_string());
    let mut out = Vec::new();
    let mut kv = |k: &str, v: String| out.push(format!("{k} = {v}"));
    kv("audio.sample_rate", a.sample_rate.to_string());
    kv("stft.n_fft", a.stft.n_fft.to_string());
    kv("stft.hop", a.stft.hop.to_string());
    kv("stft.win_length", a.stft.win_length.to_string());
    kv("stft.window", name_of(&a.stft.window));
    kv("mel.n_mels", a.n_mels.to_string());
    kv("mel.f_min", a.f_min.to_string());
    kv("mel.f_max", opt(a.f_max.map(|f| f.to_string())));
    kv("mel.scale", name_of(&a.mel_scale));
    kv("mel.floor_db", a.floor_db.to_string());
    kv("codec.kind", name_of(&cfg.codec.kind));
    kv("codec.factor", cfg.codec.spatial_factor.to_string());
    kv("codec.channels", cfg.codec.latent_channels.to_string());
    kv("codec.seed", cfg.codec.seed.to_string());
    kv("denoiser.base_channels", d.base_channels.to_string());
    kv("denoiser.depth", d.depth.to_string());
    kv("denoiser.heads", d.heads.to_string());
    kv("denoiser.attn_layer_ids", join(d.attn_layer_ids.iter().copied()));
    kv("denoiser.encoder_attn_blocks", d.encoder_attn_blocks.to_string());
    kv("denoiser.output_gain", d.output_gain.to_string());
    kv("denoiser.attn_sharpness", d.attn_sharpness.to_string());
    kv("denoiser.attn_mix", d.attn_mix.to_string());
    match &d.weight_source {
        WeightSource::Seeded(s) => kv("denoiser.seed", s.to_string()),
        WeightSource::File(path) => kv("denoiser.weights", path.display().to_string()),
    }
    kv("diffusion.steps", cfg.steps.to_string());
    kv("diffusion.beta_min", cfg.beta_min.to_string());
    kv("diffusion.beta_max", cfg.beta_max.to_string());
    kv("style.alpha", p.alpha.to_string());
    kv("style.gamma", p.gamma.to_string());
    kv("style.beta", opt(p.beta.map(|b| b.to_string())));
    kv("style.injection_layers", join(p.injection_layers.iter().copied()));
    kv("style.adain", p.adain_enabled.to_string());
    kv("style.cfg", p.cfg_enabled.to_string());
    kv("style.query_preservation", p.query_preservation.to_string());
    kv("style.inject_key", p.inject_key.to_string());
    kv("style.inject_value", p.inject_value.to_string());
    kv("style.blend_space", name_of(&p.blend_space));
    kv("style.adain_target", name_of(&p.adain_target));
    kv("style.time_window", opt(p.time_window.map(|(a, b)| format!("{a}..{b}"))));
    kv("reconstruct.phase", name_of(&cfg.phase_mode));
    kv("reconstruct.gl_iters", cfg.gl_iters.to_string());
    kv("reconstruct.gl_init", name_of(&cfg.gl_init));
    kv("seed", cfg.seed.to_string());
    out.push(String::new());
    out.join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::BlendSpace;
    use crate::codec::CodecKind;
    use crate::pipeline::PhaseMode;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(parse("# nothing\n\n").unwrap(), TransferConfig::default());
    }

    #[test]
    fn values_and_comments() {
        let cfg = parse(
            "style.alpha = 0.5   # weaker\n\
             style.beta = 0.25\n\
             style.time_window = 10..40\n\
             style.blend_space = key-value\n\
             style.injection_layers = 4,5\n\
             codec.kind = identity\n\
             codec.factor = 1\n\
             codec.channels = 1\n\
             reconstruct.phase = griffin-lim\n\
             mel.f_max = 8000\n",
        )
        .unwrap();
        assert_eq!(cfg.params.alpha, 0.5);
        assert_eq!(cfg.params.beta, Some(0.25));
        assert_eq!(cfg.params.time_window, Some((10, 40)));
        assert_eq!(cfg.params.blend_space, BlendSpace::KeyValue);
        assert_eq!(cfg.params.injection_layers, BTreeSet::from([4, 5]));
        assert_eq!(cfg.codec.kind, CodecKind::Identity);
        assert_eq!(cfg.denoiser.in_channels, 1);
        assert_eq!(cfg.phase_mode, PhaseMode::GriffinLim);
        assert_eq!(cfg.audio.f_max, Some(8000.0));
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse("seed = 1\nstyle.alpah = 0.3\n").unwrap_err();
        assert_eq!(e.to_string(), "config error at line 2: unknown key `style.alpah`");
        let e = parse("style.adain = yes\n").unwrap_err();
        assert!(e.to_string().contains("true or false"));
        let e = parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(e.to_string().contains("line 2: duplicate key"));
        assert!(parse("mel.scale = bark").is_err());
        assert!(parse("just words").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = TransferConfig::default();
        cfg.params.beta = Some(0.3);
        cfg.params.time_window = Some((2, 9));
        cfg.denoiser.weight_source = WeightSource::File("w.sdnz".into());
        cfg.gl_iters = 7;
        assert_eq!(parse(&render(&cfg)).unwrap(), cfg);
        assert_eq!(parse(&render(&TransferConfig::default())).unwrap(), TransferConfig::default());
    }
}
