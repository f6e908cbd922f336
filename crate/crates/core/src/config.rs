//! Architecture hyperparameters.

use crate::error::{CoreError, Result};
use crate::kv::{fmt_f64, KvDoc};

/// Every architecture hyperparameter of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Number of acquisition dates per sample.
    pub time_steps: usize,
    /// Spectral channels per acquisition date.
    pub channels: usize,
    /// Stem output features per time step.
    pub stem_features: usize,
    pub height: usize,
    pub width: usize,
    /// Query/key projection width of the token attention.
    pub hidden_dim: usize,
    /// SSM state size per inner channel.
    pub state_dim: usize,
    /// Width of the causal depthwise convolution inside the Mamba block.
    pub conv_width: usize,
    /// Mamba inner width multiplier.
    pub expand: usize,
    pub lambda_temporal: f64,
    pub lambda_spectral: f64,
    pub lambda_spatial: f64,
    /// Number of stacked temporal -> spectral -> spatial stages.
    pub blocks: usize,
    pub num_classes: usize,
    /// Rescale selected tokens by their normalized importance so the query
    /// and key projections receive gradient.
    pub score_scaling: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            time_steps: 23,
            channels: 6,
            stem_features: 18,
            height: 13,
            width: 13,
            hidden_dim: 64,
            state_dim: 16,
            conv_width: 4,
            expand: 2,
            lambda_temporal: 0.3,
            lambda_spectral: 0.8,
            lambda_spatial: 0.3,
            blocks: 1,
            num_classes: 11,
            score_scaling: false,
        }
    }
}

/// `max(1, floor(ratio * n))`.
///
/// A 1e-9 slack absorbs products such as `0.57 * 100` landing just below
/// an integer.
pub fn sparse_len(ratio: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let k = (ratio * n as f64 + 1e-9).floor();
    (k.max(1.0) as usize).min(n)
}

pub fn check_ratio(name: &str, ratio: f64) -> Result<()> {
    if ratio.is_finite() && ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(CoreError::Config(format!("{name} must lie in (0, 1], got {ratio}")))
    }
}

impl ModelConfig {
    /// Same architecture with every ratio at 1. A module whose ratio is 1
    /// scans all of its tokens in source order.
    pub fn dense_baseline(&self) -> Self {
        Self {
            lambda_temporal: 1.0,
            lambda_spectral: 1.0,
            lambda_spatial: 1.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("time_steps", self.time_steps),
            ("channels", self.channels),
            ("stem_features", self.stem_features),
            ("height", self.height),
            ("width", self.width),
            ("hidden_dim", self.hidden_dim),
            ("state_dim", self.state_dim),
            ("conv_width", self.conv_width),
            ("expand", self.expand),
            ("blocks", self.blocks),
            ("num_classes", self.num_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CoreError::Config(format!("{name} must be at least 1")));
            }
        }
        if self.height % 2 == 0 || self.width % 2 == 0 {
            return Err(CoreError::Config(format!(
                "patch must have odd height and width, got {}x{}",
                self.height, self.width
            )));
        }
        check_ratio("lambda_temporal", self.lambda_temporal)?;
        check_ratio("lambda_spectral", self.lambda_spectral)?;
        check_ratio("lambda_spatial", self.lambda_spatial)?;
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Flattened index of the patch center.
    pub fn center_index(&self) -> usize {
        (self.pixels() - 1) / 2
    }

    pub fn input_channels(&self) -> usize {
        self.time_steps * self.channels
    }

    /// Floats per input sample.
    pub fn input_len(&self) -> usize {
        self.input_channels() * self.pixels()
    }

    /// Floats per stem output sample.
    pub fn feature_len(&self) -> usize {
        self.time_steps * self.stem_features * self.pixels()
    }

    /// Temporal token dimension.
    pub fn temporal_dim(&self) -> usize {
        self.stem_features * self.pixels()
    }

    pub fn temporal_tokens(&self) -> usize {
        sparse_len(self.lambda_temporal, self.time_steps)
    }

    pub fn spectral_tokens(&self) -> usize {
        sparse_len(self.lambda_spectral, self.stem_features)
    }

    pub fn spatial_tokens(&self) -> usize {
        sparse_len(self.lambda_spatial, self.pixels())
    }

    /// Writes every field as `<prefix><field> = value`.
    pub fn write_kv(&self, doc: &mut KvDoc, prefix: &str) {
        let ints = [
            ("time_steps", self.time_steps),
            ("channels", self.channels),
            ("stem_features", self.stem_features),
            ("height", self.height),
            ("width", self.width),
            ("hidden_dim", self.hidden_dim),
            ("state_dim", self.state_dim),
            ("conv_width", self.conv_width),
            ("expand", self.expand),
            ("blocks", self.blocks),
            ("num_classes", self.num_classes),
        ];
        for (k, v) in ints {
            doc.set(format!("{prefix}{k}"), v);
        }
        doc.set(format!("{prefix}lambda_temporal"), fmt_f64(self.lambda_temporal));
        doc.set(format!("{prefix}lambda_spectral"), fmt_f64(self.lambda_spectral));
        doc.set(format!("{prefix}lambda_spatial"), fmt_f64(self.lambda_spatial));
        doc.set(format!("{prefix}score_scaling"), self.score_scaling);
    }

    pub const KEYS: [&'static str; 15] = [
        "time_steps",
        "channels",
        "stem_features",
        "height",
        "width",
        "hidden_dim",
        "state_dim",
        "conv_width",
        "expand",
        "lambda_temporal",
        "lambda_spectral",
        "lambda_spatial",
        "blocks",
        "num_classes",
        "score_scaling",
    ];

    /// Overwrites the fields present in `doc` under `prefix`. With
    /// `require_all`, a missing field is an error.
    pub fn apply_kv(&mut self, doc: &KvDoc, prefix: &str, require_all: bool) -> Result<()> {
        let cfg_err = |e: crate::kv::KvError| CoreError::Config(e.to_string());
        for key in Self::KEYS {
            let full = format!("{prefix}{key}");
            if doc.get(&full).is_none() {
                if require_all {
                    return Err(CoreError::Config(format!("missing key {full:?}")));
                }
                continue;
            }
            match key {
                "time_steps" => self.time_steps = doc.parse_value(&full).map_err(cfg_err)?,
                "channels" => self.channels = doc.parse_value(&full).map_err(cfg_err)?,
                "stem_features" => self.stem_features = doc.parse_value(&full).map_err(cfg_err)?,
                "height" => self.height = doc.parse_value(&full).map_err(cfg_err)?,
                "width" => self.width = doc.parse_value(&full).map_err(cfg_err)?,
                "hidden_dim" => self.hidden_dim = doc.parse_value(&full).map_err(cfg_err)?,
                "state_dim" => self.state_dim = doc.parse_value(&full).map_err(cfg_err)?,
                "conv_width" => self.conv_width = doc.parse_value(&full).map_err(cfg_err)?,
                "expand" => self.expand = doc.parse_value(&full).map_err(cfg_err)?,
                "lambda_temporal" => self.lambda_temporal = doc.parse_value(&full).map_err(cfg_err)?,
                "lambda_spectral" => self.lambda_spectral = doc.parse_value(&full).map_err(cfg_err)?,
                "lambda_spatial" => self.lambda_spatial = doc.parse_value(&full).map_err(cfg_err)?,
                "blocks" => self.blocks = doc.parse_value(&full).map_err(cfg_err)?,
                "num_classes" => self.num_classes = doc.parse_value(&full).map_err(cfg_err)?,
                "score_scaling" => self.score_scaling = doc.parse_value(&full).map_err(cfg_err)?,
                _ => unreachable!("every key is handled"),
            }
        }
        Ok(())
    }

    /// Trainable parameter count, or `None` on overflow. Lets readers reject
    /// absurd configurations before allocating anything.
    pub fn param_count_checked(&self) -> Option<usize> {
        let mamba = |d: usize| -> Option<usize> {
            let e = d.checked_mul(self.expand)?;
            let r = d.div_ceil(16);
            let per_e = (2 * d)
                .checked_add(2)?
                .checked_add(self.conv_width)?
                .checked_add(1)?
                .checked_add(r.checked_add(self.state_dim.checked_mul(2)?)?)?
                .checked_add(r)?
                .checked_add(1)?
                .checked_add(self.state_dim)?
                .checked_add(1)?
                .checked_add(d)?;
            e.checked_mul(per_e)?.checked_add(d.checked_mul(2)?)
        };
        let (t, f, c, k) = (self.time_steps, self.stem_features, self.channels, self.num_classes);
        let hw = self.height.checked_mul(self.width)?;
        let fhw = f.checked_mul(hw)?;
        let d = self.hidden_dim;
        let stem = t
            .checked_mul(f)?
            .checked_mul(c.checked_mul(9)?.checked_add(1)?)?
            .checked_add(f.checked_mul(2)?)?;
        let stage = fhw
            .checked_add(hw)?
            .checked_mul(d.checked_mul(2)?)?
            .checked_add(mamba(fhw)?)?
            .checked_add(mamba(hw)?)?
            .checked_add(mamba(f)?)?;
        let head = f.checked_mul(k)?.checked_add(k)?;
        stage.checked_mul(self.blocks)?.checked_add(stem)?.checked_add(head)
    }
}
