use stsm_core::ModelConfig;
use stsm_data::PatchSet;

use crate::error::{HarnessError, Result};

/// Borrowed model inputs with 0-based labels.
#[derive(Debug, Clone)]
pub struct LabeledSet<'a> {
    pub inputs: &'a [f32],
    pub labels: Vec<usize>,
    pub sample_len: usize,
}

impl<'a> LabeledSet<'a> {
    pub fn new(inputs: &'a [f32], labels: Vec<usize>, sample_len: usize) -> Result<Self> {
        if sample_len == 0 || inputs.len() != labels.len() * sample_len {
            return Err(HarnessError::Config(format!(
                "{} values do not hold {} samples of {sample_len}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            sample_len,
        })
    }

    /// View of a patch split, checked against the model geometry.
    pub fn from_patches(set: &'a PatchSet, cfg: &ModelConfig) -> Result<Self> {
        if set.channels != cfg.input_channels() || set.patch != cfg.height || set.patch != cfg.width {
            return Err(HarnessError::Config(format!(
                "{} patches are {} x {} x {}, the model expects {} x {} x {}",
                set.split,
                set.channels,
                set.patch,
                set.patch,
                cfg.input_channels(),
                cfg.height,
                cfg.width
            )));
        }
        let labels = set
            .labels
            .iter()
            .map(|&l| {
                let idx = (l as usize).wrapping_sub(1);
                if idx < cfg.num_classes {
                    Ok(idx)
                } else {
                    Err(HarnessError::Config(format!("label {l} outside 1..={}", cfg.num_classes)))
                }
            })
            .collect::<Result<_>>()?;
        Self::new(&set.patches, labels, set.sample_len())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &'a [f32] {
        &self.inputs[i * self.sample_len..(i + 1) * self.sample_len]
    }

    /// Contiguous run of samples `start..end`.
    pub fn range(&self, start: usize, end: usize) -> &'a [f32] {
        &self.inputs[start * self.sample_len..end * self.sample_len]
    }
}
