//! Full classifier: stem, stacked temporal/spectral/spatial stages, and a
//! linear head on the time-averaged center pixel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::SparseSelection;
use crate::config::ModelConfig;
use crate::error::{ensure_finite, CoreError, Result};
use crate::linalg::{gemm, Op};
use crate::modules::{
    attention_module_backward, attention_module_forward, select_opts, spatial_module_backward,
    spatial_module_forward, AttentionModuleCache, SpatialModuleCache, StageParams,
};
use crate::scalar::Scalar;
use crate::stem::{stem_backward, stem_forward, BatchStats, BnStats, NormMode, StemCache, StemDims, StemParams};
use crate::tensor::Tensor;

/// Every trainable tensor. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub stem: StemParams<S>,
    pub stages: Vec<StageParams<S>>,
    /// `features x classes`.
    pub head_w: Tensor<S>,
    pub head_b: Tensor<S>,
}

pub fn stem_dims(cfg: &ModelConfig) -> StemDims {
    StemDims {
        time_steps: cfg.time_steps,
        channels: cfg.channels,
        features: cfg.stem_features,
        height: cfg.height,
        width: cfg.width,
    }
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            stem: StemParams::zeros(stem_dims(cfg)),
            stages: (0..cfg.blocks).map(|_| StageParams::zeros(cfg)).collect(),
            head_w: Tensor::zeros(&[cfg.stem_features, cfg.num_classes]),
            head_b: Tensor::zeros(&[cfg.num_classes]),
        }
    }

    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem = StemParams::init(stem_dims(cfg), &mut rng);
        let stages = (0..cfg.blocks).map(|_| StageParams::init(cfg, &mut rng)).collect();
        let bound = 1.0 / (cfg.stem_features as f64).sqrt();
        let head_w = (0..cfg.stem_features * cfg.num_classes)
            .map(|_| S::from_f64(rng.gen_range(-bound..=bound)))
            .collect();
        Self {
            stem,
            stages,
            head_w: Tensor::from_vec(&[cfg.stem_features, cfg.num_classes], head_w),
            head_b: Tensor::zeros(&[cfg.num_classes]),
        }
    }

    /// Named tensors in a fixed order; the order is the checkpoint layout.
    pub fn tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = vec![
            ("stem.weight".to_string(), &self.stem.weight),
            ("stem.bias".to_string(), &self.stem.bias),
            ("stem.gamma".to_string(), &self.stem.gamma),
            ("stem.beta".to_string(), &self.stem.beta),
        ];
        for (i, st) in self.stages.iter().enumerate() {
            out.push((format!("stage{i}.temporal_attn.wq"), &st.temporal_attn.wq));
            out.push((format!("stage{i}.temporal_attn.wk"), &st.temporal_attn.wk));
            out.push((format!("stage{i}.spectral_attn.wq"), &st.spectral_attn.wq));
            out.push((format!("stage{i}.spectral_attn.wk"), &st.spectral_attn.wk));
            for (block, m) in [
                ("temporal_mamba", &st.temporal_mamba),
                ("spectral_mamba", &st.spectral_mamba),
                ("spatial_mamba", &st.spatial_mamba),
            ] {
                for (name, t) in m.tensors() {
                    out.push((format!("stage{i}.{block}.{name}"), t));
                }
            }
        }
        out.push(("head.weight".to_string(), &self.head_w));
        out.push(("head.bias".to_string(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = vec![
            ("stem.weight".to_string(), &mut self.stem.weight),
            ("stem.bias".to_string(), &mut self.stem.bias),
            ("stem.gamma".to_string(), &mut self.stem.gamma),
            ("stem.beta".to_string(), &mut self.stem.beta),
        ];
        for (i, st) in self.stages.iter_mut().enumerate() {
            out.push((format!("stage{i}.temporal_attn.wq"), &mut st.temporal_attn.wq));
            out.push((format!("stage{i}.temporal_attn.wk"), &mut st.temporal_attn.wk));
            out.push((format!("stage{i}.spectral_attn.wq"), &mut st.spectral_attn.wq));
            out.push((format!("stage{i}.spectral_attn.wk"), &mut st.spectral_attn.wk));
            for (block, m) in [
                ("temporal_mamba", &mut st.temporal_mamba),
                ("spectral_mamba", &mut st.spectral_mamba),
                ("spatial_mamba", &mut st.spatial_mamba),
            ] {
                for (name, t) in m.tensors_mut() {
                    out.push((format!("stage{i}.{block}.{name}"), t));
                }
            }
        }
        out.push(("head.weight".to_string(), &mut self.head_w));
        out.push(("head.bias".to_string(), &mut self.head_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn fill_zero(&mut self) {
        for (_, t) in self.tensors_mut() {
            t.data.fill(S::zero());
        }
    }
}

/// Per-stage selections of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct StageTrace {
    pub temporal: Vec<SparseSelection>,
    pub spectral: Vec<SparseSelection>,
    pub spatial: Vec<SparseSelection>,
}

/// Recurrence steps one forward pass executes per sample, over all modules.
pub fn scan_steps_per_sample(cfg: &ModelConfig) -> usize {
    cfg.blocks
        * (cfg.temporal_tokens() + cfg.time_steps * (cfg.spectral_tokens() + cfg.spatial_tokens()))
}

struct StageCache<S> {
    temporal: AttentionModuleCache<S>,
    spectral: AttentionModuleCache<S>,
    spatial: SpatialModuleCache<S>,
}

struct ForwardCache<S> {
    batch: usize,
    stem: StemCache<S>,
    stages: Vec<StageCache<S>>,
    pooled: Vec<S>,
}

/// Parameters plus normalization buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub params: ModelParams<S>,
    pub bn: BnStats<S>,
}

/// Result of one training forward/backward on a chunk.
#[derive(Debug, Clone)]
pub struct StepStats<S> {
    /// Sum of per-example losses in the chunk.
    pub loss_sum: f64,
    pub correct: usize,
    pub batch_stats: BatchStats<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            params: ModelParams::init(&config, seed),
            bn: BnStats::new(config.stem_features),
            config,
        })
    }

    pub fn cast<T: Scalar>(&self) -> Model<T> {
        let mut params = ModelParams::<T>::zeros(&self.config);
        for ((_, dst), (_, src)) in params.tensors_mut().into_iter().zip(self.params.tensors()) {
            *dst = src.cast();
        }
        Model {
            config: self.config.clone(),
            params,
            bn: BnStats {
                mean: self.bn.mean.cast(),
                var: self.bn.var.cast(),
            },
        }
    }

    fn check_input(&self, input: &[S], batch: usize) -> Result<()> {
        if batch == 0 || input.len() != batch * self.config.input_len() {
            return Err(CoreError::Shape(format!(
                "expected {batch} x {} x {} x {} input values, got {}",
                self.config.input_channels(),
                self.config.height,
                self.config.width,
                input.len()
            )));
        }
        ensure_finite("model input", input)
    }

    fn run(
        &self,
        input: &[S],
        batch: usize,
        mode: NormMode,
        keep: bool,
    ) -> (Vec<S>, Vec<StageTrace>, Option<ForwardCache<S>>, Option<BatchStats<S>>) {
        let cfg = &self.config;
        let (mut x, stem_cache, batch_stats) =
            stem_forward(&self.params.stem, &self.bn, input, batch, stem_dims(cfg), mode, keep);
        let mut traces = Vec::with_capacity(cfg.blocks);
        let mut caches = Vec::with_capacity(cfg.blocks);
        for st in &self.params.stages {
            let (t_out, t_cache) = attention_module_forward(
                &st.temporal_attn,
                &st.temporal_mamba,
                &x,
                batch,
                cfg.time_steps,
                cfg.temporal_dim(),
                cfg.lambda_temporal,
                select_opts(cfg, cfg.lambda_temporal),
                keep,
            );
            let (s_out, s_cache) = attention_module_forward(
                &st.spectral_attn,
                &st.spectral_mamba,
                &t_out.output,
                batch * cfg.time_steps,
                cfg.stem_features,
                cfg.pixels(),
                cfg.lambda_spectral,
                select_opts(cfg, cfg.lambda_spectral),
                keep,
            );
            drop(t_out.output);
            let (p_out, p_cache) = spatial_module_forward(
                &st.spatial_mamba,
                &s_out.output,
                batch * cfg.time_steps,
                cfg.stem_features,
                cfg.pixels(),
                cfg.lambda_spatial,
                cfg.lambda_spatial >= 1.0,
                keep,
            );
            x = p_out.output;
            traces.push(StageTrace {
                temporal: t_out.selections,
                spectral: s_out.selections,
                spatial: p_out.selections,
            });
            if let (Some(temporal), Some(spectral), Some(spatial)) = (t_cache, s_cache, p_cache) {
                caches.push(StageCache {
                    temporal,
                    spectral,
                    spatial,
                });
            }
        }
        let pooled = self.pool(&x, batch);
        let classes = cfg.num_classes;
        let mut logits = vec![S::zero(); batch * classes];
        for row in logits.chunks_exact_mut(classes) {
            row.copy_from_slice(&self.params.head_b.data);
        }
        gemm(
            batch,
            cfg.stem_features,
            classes,
            S::one(),
            &pooled,
            Op::N,
            &self.params.head_w.data,
            Op::N,
            S::one(),
            &mut logits,
        );
        let cache = stem_cache.map(|stem| ForwardCache {
            batch,
            stem,
            stages: caches,
            pooled,
        });
        (logits, traces, cache, batch_stats)
    }

    /// Center pixel averaged over dates, `batch x features`.
    fn pool(&self, x: &[S], batch: usize) -> Vec<S> {
        let cfg = &self.config;
        let (t_n, f_n, hw, c) = (cfg.time_steps, cfg.stem_features, cfg.pixels(), cfg.center_index());
        let inv_t = S::one() / S::from_usize(t_n);
        let mut pooled = vec![S::zero(); batch * f_n];
        for b in 0..batch {
            for t in 0..t_n {
                for f in 0..f_n {
                    pooled[b * f_n + f] += x[((b * t_n + t) * f_n + f) * hw + c] * inv_t;
                }
            }
        }
        pooled
    }

    /// Inference logits, `batch x classes`, using running statistics.
    pub fn logits(&self, input: &[S], batch: usize) -> Result<Vec<S>> {
        self.check_input(input, batch)?;
        let (logits, _, _, _) = self.run(input, batch, NormMode::Running, false);
        ensure_finite("logits", &logits)?;
        Ok(logits)
    }

    /// Inference logits plus the token selections made by every module.
    pub fn logits_traced(&self, input: &[S], batch: usize) -> Result<(Vec<S>, Vec<StageTrace>)> {
        self.check_input(input, batch)?;
        let (logits, traces, _, _) = self.run(input, batch, NormMode::Running, false);
        ensure_finite("logits", &logits)?;
        Ok((logits, traces))
    }

    pub fn predict(&self, input: &[S], batch: usize) -> Result<Vec<usize>> {
        let logits = self.logits(input, batch)?;
        Ok(logits.chunks_exact(self.config.num_classes).map(argmax).collect())
    }

    /// Training forward and backward on one chunk with batch statistics.
    /// Gradients of `scale * sum(loss)` are accumulated into `grads`; the
    /// running statistics are left for the caller to update.
    pub fn accumulate_gradients(
        &self,
        input: &[S],
        labels: &[usize],
        scale: S,
        grads: &mut ModelParams<S>,
    ) -> Result<StepStats<S>> {
        let cfg = &self.config;
        let batch = labels.len();
        self.check_input(input, batch)?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= cfg.num_classes) {
            return Err(CoreError::Contract(format!(
                "label {bad} outside 0..{}",
                cfg.num_classes
            )));
        }
        let (logits, _, cache, batch_stats) = self.run(input, batch, NormMode::Batch, true);
        let cache = cache.expect("kept cache");
        let classes = cfg.num_classes;
        let mut d_logits = vec![S::zero(); logits.len()];
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for ((row, d), &y) in logits.chunks_exact(classes).zip(d_logits.chunks_exact_mut(classes)).zip(labels) {
            let (loss, probs) = cross_entropy(row, y);
            loss_sum += loss.as_f64();
            if argmax(row) == y {
                correct += 1;
            }
            for (k, (g, p)) in d.iter_mut().zip(probs).enumerate() {
                let target = if k == y { S::one() } else { S::zero() };
                *g = (p - target) * scale;
            }
        }
        if !loss_sum.is_finite() {
            return Err(CoreError::NonFinite("training loss".into()));
        }
        self.backward(&cache, &d_logits, grads);
        Ok(StepStats {
            loss_sum,
            correct,
            batch_stats: batch_stats.expect("batch statistics"),
        })
    }

    fn backward(&self, cache: &ForwardCache<S>, d_logits: &[S], grads: &mut ModelParams<S>) {
        let cfg = &self.config;
        let batch = cache.batch;
        let (t_n, f_n, hw, c, classes) = (
            cfg.time_steps,
            cfg.stem_features,
            cfg.pixels(),
            cfg.center_index(),
            cfg.num_classes,
        );
        gemm(f_n, batch, classes, S::one(), &cache.pooled, Op::T, d_logits, Op::N, S::one(), &mut grads.head_w.data);
        for row in d_logits.chunks_exact(classes) {
            for (g, v) in grads.head_b.data.iter_mut().zip(row) {
                *g += *v;
            }
        }
        let mut d_pooled = vec![S::zero(); batch * f_n];
        gemm(batch, classes, f_n, S::one(), d_logits, Op::N, &self.params.head_w.data, Op::T, S::zero(), &mut d_pooled);
        let inv_t = S::one() / S::from_usize(t_n);
        let mut d_x = vec![S::zero(); batch * cfg.feature_len()];
        for b in 0..batch {
            for t in 0..t_n {
                for f in 0..f_n {
                    d_x[((b * t_n + t) * f_n + f) * hw + c] = d_pooled[b * f_n + f] * inv_t;
                }
            }
        }
        for ((st, sc), g) in self
            .params
            .stages
            .iter()
            .zip(&cache.stages)
            .zip(grads.stages.iter_mut())
            .rev()
        {
            d_x = spatial_module_backward(&st.spatial_mamba, &sc.spatial, &d_x, &mut g.spatial_mamba);
            d_x = attention_module_backward(
                &st.spectral_attn,
                &st.spectral_mamba,
                &sc.spectral,
                &d_x,
                &mut g.spectral_attn,
                &mut g.spectral_mamba,
            );
            d_x = attention_module_backward(
                &st.temporal_attn,
                &st.temporal_mamba,
                &sc.temporal,
                &d_x,
                &mut g.temporal_attn,
                &mut g.temporal_mamba,
            );
        }
        stem_backward(&self.params.stem, &cache.stem, &d_x, stem_dims(cfg), &mut grads.stem);
    }

    /// Mean training loss on a chunk under batch statistics, without gradients.
    pub fn batch_loss(&self, input: &[S], labels: &[usize]) -> Result<f64> {
        let batch = labels.len();
        self.check_input(input, batch)?;
        let (logits, _, _, _) = self.run(input, batch, NormMode::Batch, false);
        let total: f64 = logits
            .chunks_exact(self.config.num_classes)
            .zip(labels)
            .map(|(row, &y)| cross_entropy(row, y).0.as_f64())
            .sum();
        Ok(total / batch as f64)
    }
}

pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Loss and softmax probabilities for one row of logits.
pub fn cross_entropy<S: Scalar>(logits: &[S], label: usize) -> (S, Vec<S>) {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: S = exps.iter().copied().sum();
    let loss = sum.ln() - (logits[label] - max);
    (loss, exps.into_iter().map(|e| e / sum).collect())
}
