//! Attention feature capture and injection.
//!
//! A denoiser hands every self-attention call to an [`AttentionHookSet`],
//! which either runs plain attention, records the layer's Q/K/V into a
//! [`FeatureCache`], or replaces the computation with the style-injection
//! operators from [`crate::attention`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array2, Ix2};
use serde::{Deserialize, Serialize};

use crate::attention::{attention, guided_blend, multi_style_blend, preserve_query, AttentionTensors, StyleParams};
use crate::codec::Branch;
use crate::error::{Error, Result};
use crate::tensor_io::{read_tnsr, write_tnsr};

/// Q/K/V per `(timestep, layer)`, one [`AttentionTensors`] per head.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    branch: Branch,
    entries: BTreeMap<(usize, usize), Vec<AttentionTensors>>,
}

#[derive(Serialize, Deserialize)]
struct SpillManifest {
    branch: Branch,
    entries: Vec<SpillEntry>,
}

#[derive(Serialize, Deserialize)]
struct SpillEntry {
    timestep: usize,
    layer: usize,
    heads: usize,
}

impl FeatureCache {
    pub fn new(branch: Branch) -> Self {
        FeatureCache {
            branch,
            entries: BTreeMap::new(),
        }
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, timestep: usize, layer: usize, heads: Vec<AttentionTensors>) {
        self.entries.insert((timestep, layer), heads);
    }

    pub fn get(&self, timestep: usize, layer: usize) -> Result<&[AttentionTensors]> {
        self.entries
            .get(&(timestep, layer))
            .map(Vec::as_slice)
            .ok_or(Error::MissingCacheEntry { timestep, layer })
    }

    pub fn keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.keys().copied()
    }

    /// Fails with the first `(t, layer)` in `timesteps x layers` that is absent.
    pub fn check_complete(&self, timesteps: impl IntoIterator<Item = usize>, layers: &BTreeSet<usize>) -> Result<()> {
        for t in timesteps {
            for &layer in layers {
                self.get(t, layer)?;
            }
        }
        Ok(())
    }

    /// Total stored values across all entries.
    pub fn numel(&self) -> usize {
        self.entries
            .values()
            .flatten()
            .map(|a| a.q.len() + a.k.len() + a.v.len())
            .sum()
    }

    /// Writes every entry as TNSR files plus a `manifest.json` into `dir`.
    /// Values are stored as f32.
    pub fn spill(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = SpillManifest {
            branch: self.branch,
            entries: Vec::with_capacity(self.entries.len()),
        };
        for (&(timestep, layer), heads) in &self.entries {
            for (h, a) in heads.iter().enumerate() {
                for (name, m) in [("q", &a.q), ("k", &a.k), ("v", &a.v)] {
                    let file = dir.join(spill_name(timestep, layer, h, name));
                    write_tnsr(&file, &m.clone().into_dyn())?;
                }
            }
            manifest.entries.push(SpillEntry {
                timestep,
                layer,
                heads: heads.len(),
            });
        }
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    /// Reads a cache written by [`FeatureCache::spill`].
    pub fn load_spilled(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: SpillManifest = serde_json::from_str(&text)?;
        let mut cache = FeatureCache::new(manifest.branch);
        for e in manifest.entries {
            let mut heads = Vec::with_capacity(e.heads);
            for h in 0..e.heads {
                let load = |name: &str| -> Result<Array2<f64>> {
                    let file = dir.join(spill_name(e.timestep, e.layer, h, name));
                    read_tnsr(&file)?
                        .into_dimensionality::<Ix2>()
                        .map_err(|_| Error::format(file.display().to_string(), "expected a 2-D tensor"))
                };
                heads.push(AttentionTensors {
                    q: load("q")?,
                    k: load("k")?,
                    v: load("v")?,
                    layer_id: e.layer,
                    timestep: e.timestep,
                });
            }
            cache.insert(e.timestep, e.layer, heads);
        }
        Ok(cache)
    }
}

fn spill_name(timestep: usize, layer: usize, head: usize, name: &str) -> String {
    format!("t{timestep:03}_l{layer:02}_h{head}_{name}.tnsr")
}

/// Per-layer behavior of an [`AttentionHookSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookMode {
    Off,
    Capture,
    Inject,
}

/// Cached features and parameters used by inject mode.
#[derive(Debug, Clone, Copy)]
pub struct InjectSources<'a> {
    pub content: &'a FeatureCache,
    pub style: &'a FeatureCache,
    pub style_b: Option<&'a FeatureCache>,
    pub params: &'a StyleParams,
}

/// Hook configuration for one denoiser pass (or one sampler run).
///
/// Each layer has exactly one mode, so a layer can never capture and inject
/// in the same pass.
#[derive(Debug, Default)]
pub struct AttentionHookSet<'a> {
    modes: BTreeMap<usize, HookMode>,
    capture: Option<&'a mut FeatureCache>,
    inject: Option<InjectSources<'a>>,
}

impl<'a> AttentionHookSet<'a> {
    /// All layers off.
    pub fn none() -> Self {
        AttentionHookSet::default()
    }

    pub fn capture(layers: &BTreeSet<usize>, cache: &'a mut FeatureCache) -> Self {
        AttentionHookSet {
            modes: layers.iter().map(|&l| (l, HookMode::Capture)).collect(),
            capture: Some(cache),
            inject: None,
        }
    }

    /// Injects at `sources.params.injection_layers`.
    pub fn inject(sources: InjectSources<'a>) -> Self {
        AttentionHookSet {
            modes: sources
                .params
                .injection_layers
                .iter()
                .map(|&l| (l, HookMode::Inject))
                .collect(),
            capture: None,
            inject: Some(sources),
        }
    }

    pub fn mode(&self, layer: usize) -> HookMode {
        self.modes.get(&layer).copied().unwrap_or(HookMode::Off)
    }

    /// Runs one attention layer for all heads and returns the per-head outputs.
    pub fn attend(&mut self, layer: usize, timestep: usize, heads: Vec<AttentionTensors>) -> Result<Vec<Array2<f64>>> {
        match self.mode(layer) {
            HookMode::Off => plain(&heads),
            HookMode::Capture => {
                let out = plain(&heads)?;
                if let Some(cache) = self.capture.as_deref_mut() {
                    cache.insert(timestep, layer, heads);
                }
                Ok(out)
            }
            HookMode::Inject => {
                let src = self
                    .inject
                    .ok_or_else(|| Error::InvalidArgument("inject mode without sources".into()))?;
                if !src.params.injects_at(timestep) {
                    return plain(&heads);
                }
                inject(&src, layer, timestep, &heads)
            }
        }
    }
}

fn plain(heads: &[AttentionTensors]) -> Result<Vec<Array2<f64>>> {
    heads.iter().map(|a| attention(&a.q, &a.k, &a.v)).collect()
}

fn head<'c>(cached: &'c [AttentionTensors], h: usize, timestep: usize, layer: usize) -> Result<&'c AttentionTensors> {
    cached.get(h).ok_or(Error::MissingCacheEntry { timestep, layer })
}

fn inject(src: &InjectSources<'_>, layer: usize, timestep: usize, heads: &[AttentionTensors]) -> Result<Vec<Array2<f64>>> {
    let p = src.params;
    let content = src.content.get(timestep, layer)?;
    let style = src.style.get(timestep, layer)?;
    let style_b = match (p.beta, src.style_b) {
        (Some(_), Some(cache)) => Some(cache.get(timestep, layer)?),
        (Some(_), None) => return Err(Error::InvalidArgument("beta set without a second style cache".into())),
        _ => None,
    };
    // without the guided blend the style branch alone is attended, i.e. alpha = 1
    let alpha = if p.cfg_enabled { p.alpha } else { 1.0 };
    heads
        .iter()
        .enumerate()
        .map(|(h, own)| {
            let c = head(content, h, timestep, layer)?;
            let s = head(style, h, timestep, layer)?;
            let q = if p.query_preservation {
                preserve_query(&c.q, &own.q, p.gamma)?
            } else {
                own.q.clone()
            };
            let kv = |a: &'_ AttentionTensors| -> (Array2<f64>, Array2<f64>) {
                let k = if p.inject_key { a.k.clone() } else { own.k.clone() };
                let v = if p.inject_value { a.v.clone() } else { own.v.clone() };
                (k, v)
            };
            let (k_s, v_s) = kv(s);
            match (p.beta, style_b) {
                (Some(beta), Some(b)) => {
                    let (k_b, v_b) = kv(head(b, h, timestep, layer)?);
                    multi_style_blend(&q, (&k_s, &v_s), (&k_b, &v_b), beta, alpha, (&c.k, &c.v), p.blend_space)
                }
                _ => guided_blend(&q, &c.k, &c.v, &k_s, &v_s, alpha),
            }
        })
        .collect()
}
