//! Hand-built classifiers that are exact on noise-free, unmixed scenes.

use stsm_core::{Model, ModelConfig, ModelParams};
use stsm_core::stem::BnStats;

use crate::error::{HarnessError, Result};
use crate::render::PixelClassifier;

/// Stem pre-activation offset; keeps every feature where GELU is the identity.
const OFFSET: f32 = 8.0;

/// Model parameters that implement the nearest-template rule on the center
/// pixel. Every mixer block is silenced (zero output projection), each stem
/// feature `k` computes `T * <template_k(t), x(t)> + OFFSET` per date, and the
/// head subtracts half the squared template norm. `templates[k]` is the
/// date-major `T x C` profile of class `k`.
pub fn template_oracle_model(cfg: &ModelConfig, templates: &[Vec<f32>]) -> Result<Model<f32>> {
    cfg.validate()?;
    let (t_n, c_n, f_n) = (cfg.time_steps, cfg.channels, cfg.stem_features);
    if templates.len() != cfg.num_classes || f_n < cfg.num_classes {
        return Err(HarnessError::Config(format!(
            "{} templates for {} classes and {f_n} stem features",
            templates.len(),
            cfg.num_classes
        )));
    }
    if templates.iter().any(|t| t.len() != t_n * c_n) {
        return Err(HarnessError::Config("template length differs from T x C".into()));
    }
    let mut params = ModelParams::<f32>::zeros(cfg);
    params.stem.gamma.data.fill(1.0);
    let scale = 1.0 / (1.0 + stsm_core::stem::BN_EPS as f32).sqrt();
    for (k, tpl) in templates.iter().enumerate() {
        for t in 0..t_n {
            for c in 0..c_n {
                // center tap of the 3x3 kernel
                let idx = (((t * f_n + k) * c_n + c) * 3 + 1) * 3 + 1;
                params.stem.weight.data[idx] = t_n as f32 * tpl[t * c_n + c];
            }
            params.stem.bias.data[t * f_n + k] = OFFSET;
        }
        params.head_w.data[k * cfg.num_classes + k] = 1.0;
        let norm: f32 = tpl.iter().map(|v| v * v).sum();
        params.head_b.data[k] = -0.5 * norm * scale;
    }
    Ok(Model {
        config: cfg.clone(),
        params,
        bn: BnStats::new(f_n),
    })
}

/// Nearest template by squared distance on the center pixel's profile.
#[derive(Debug, Clone)]
pub struct NearestTemplate {
    pub templates: Vec<Vec<f32>>,
    pub time_steps: usize,
    pub channels: usize,
    pub patch: usize,
}

impl PixelClassifier for NearestTemplate {
    fn patch(&self) -> usize {
        self.patch
    }

    fn classify(&self, patches: &[f32], count: usize) -> Result<Vec<usize>> {
        let p2 = self.patch * self.patch;
        let per = self.time_steps * self.channels * p2;
        if patches.len() != count * per {
            return Err(HarnessError::Config("patch buffer size".into()));
        }
        let center = p2 / 2;
        Ok(patches
            .chunks_exact(per)
            .map(|s| {
                let profile: Vec<f32> = (0..self.time_steps * self.channels).map(|ch| s[ch * p2 + center]).collect();
                let dist = |t: &Vec<f32>| -> f32 { t.iter().zip(&profile).map(|(a, b)| (a - b) * (a - b)).sum() };
                (0..self.templates.len())
                    .min_by(|&a, &b| dist(&self.templates[a]).total_cmp(&dist(&self.templates[b])))
                    .expect("at least one template")
            })
            .collect())
    }
}
