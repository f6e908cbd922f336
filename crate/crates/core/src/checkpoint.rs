//! Single-file parameter archive.
//!
//! Layout: the magic line `STSMAMBA-CKPT\n`, the manifest byte length as a
//! little-endian `u64`, the UTF-8 `key = value` manifest, then every array as
//! little-endian `f32` in manifest order. The manifest carries
//! `format_version`, `seed`, every `model.*` field, one
//! `array.<name> = d0xd1x...` line per array, and free-form `meta.*` keys.

use std::fs;
use std::path::Path;

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::kv::KvDoc;
use crate::model::{Model, ModelParams};
use crate::stem::BnStats;
use crate::tensor::Tensor;

pub const MAGIC: &[u8] = b"STSMAMBA-CKPT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub seed: u64,
    /// `meta.*` entries, stored without the prefix.
    pub meta: KvDoc,
}

fn bad(msg: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(msg.into())
}

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

fn parse_shape(text: &str) -> Result<Vec<usize>> {
    text.split('x')
        .map(|d| d.trim().parse::<usize>().map_err(|_| bad(format!("bad dimension {d:?}"))))
        .collect()
}

fn arrays(model: &Model<f32>) -> Vec<(String, &Tensor<f32>)> {
    let mut out = model.params.tensors();
    out.push(("bn.running_mean".into(), &model.bn.mean));
    out.push(("bn.running_var".into(), &model.bn.var));
    out
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut doc = KvDoc::new();
    doc.set("format_version", FORMAT_VERSION);
    doc.set("seed", ckpt.seed);
    ckpt.model.config.write_kv(&mut doc, "model.");
    let arrays = arrays(&ckpt.model);
    for (name, t) in &arrays {
        doc.set(format!("array.{name}"), shape_text(&t.shape));
    }
    for (k, v) in ckpt.meta.iter() {
        doc.set(format!("meta.{k}"), v);
    }
    let manifest = doc.to_string();
    let floats: usize = arrays.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + manifest.len() + 4 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for (_, t) in arrays {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing magic header"))?;
    if rest.len() < 8 {
        return Err(bad("truncated manifest length"));
    }
    let (len_bytes, rest) = rest.split_at(8);
    let len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes"));
    if len > rest.len() as u64 {
        return Err(bad(format!("manifest length {len} exceeds file size")));
    }
    let (text, payload) = rest.split_at(len as usize);
    let text = std::str::from_utf8(text).map_err(|_| bad("manifest is not UTF-8"))?;
    let doc = KvDoc::parse(text).map_err(|e| bad(format!("manifest {e}")))?;
    let version: u32 = doc.parse_value("format_version").map_err(|e| bad(e.to_string()))?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let seed: u64 = doc.parse_value("seed").map_err(|e| bad(e.to_string()))?;
    let mut config = ModelConfig::default();
    config
        .apply_kv(&doc, "model.", true)
        .map_err(|e| bad(e.to_string()))?;
    config.validate().map_err(|e| bad(e.to_string()))?;

    let mut declared = Vec::new();
    let mut meta = KvDoc::new();
    for (k, v) in doc.iter() {
        if let Some(name) = k.strip_prefix("array.") {
            declared.push((name.to_string(), parse_shape(v)?));
        } else if let Some(name) = k.strip_prefix("meta.") {
            meta.set(name, v);
        } else if !(k == "format_version" || k == "seed" || k.starts_with("model.")) {
            return Err(bad(format!("unknown manifest key {k:?}")));
        }
    }
    // size check before any allocation driven by the config
    let expected = config
        .param_count_checked()
        .and_then(|n| n.checked_add(2 * config.stem_features))
        .ok_or_else(|| bad("configuration size overflows"))?;
    if payload.len() % 4 != 0 || payload.len() / 4 != expected {
        return Err(bad(format!(
            "payload holds {} bytes, configuration needs {expected} floats",
            payload.len()
        )));
    }
    let mut model = Model {
        params: ModelParams::zeros(&config),
        bn: BnStats::new(config.stem_features),
        config,
    };
    {
        let mut slots = model.params.tensors_mut();
        slots.push(("bn.running_mean".into(), &mut model.bn.mean));
        slots.push(("bn.running_var".into(), &mut model.bn.var));
        if slots.len() != declared.len() {
            return Err(bad(format!("{} arrays declared, {} expected", declared.len(), slots.len())));
        }
        let mut floats = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        for ((name, slot), (dname, dshape)) in slots.into_iter().zip(&declared) {
            if name != *dname || slot.shape != *dshape {
                return Err(bad(format!(
                    "array {dname:?} {} does not match expected {name:?} {}",
                    shape_text(dshape),
                    shape_text(&slot.shape)
                )));
            }
            for v in slot.data.iter_mut() {
                *v = floats.next().expect("payload length checked");
            }
        }
    }
    if !model.params.is_finite() || !model.bn.mean.is_finite() || !model.bn.var.is_finite() {
        return Err(bad("non-finite parameter values"));
    }
    if model.bn.var.data.iter().any(|&v| v < 0.0) {
        return Err(bad("negative running variance"));
    }
    Ok(Checkpoint { model, seed, meta })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, encode(ckpt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}
