//! The three sparse deformable Mamba modules.
//!
//! Stem features are stored `batch x T x F x (H*W)`. The same buffer is read
//! three ways:
//! - temporal: `batch` sequences of `T` tokens of width `F*H*W`;
//! - spectral: `batch*T` sequences of `F` tokens of width `H*W`;
//! - spatial: `batch*T` sequences of `H*W` tokens of width `F` (strided).
//!
//! Each module picks a short, reordered subsequence, runs it through a Mamba
//! block and adds the result back onto the picked positions.

use rand::Rng;

use crate::attention::{attention_from_projections, importance_scores, pick_by_importance, Pick, SelectOptions, SparseSelection};
use crate::config::ModelConfig;
use crate::error::{ensure_finite, CoreError, Result};
use crate::linalg::{gemm, Op};
use crate::mamba::{mamba_backward, mamba_forward_batch, MambaCache, MambaDims, MambaParams};
use crate::scalar::Scalar;
use crate::scatter::scatter_add;
use crate::spatial::{angles_to_center, pick_by_angle};
use crate::tensor::Tensor;

/// Query and key projections, both `dim x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<S> {
    pub wq: Tensor<S>,
    pub wk: Tensor<S>,
}

impl<S: Scalar> AttentionParams<S> {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            wq: Tensor::zeros(&[dim, hidden]),
            wk: Tensor::zeros(&[dim, hidden]),
        }
    }

    pub fn init<R: Rng>(dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut draw = |_| S::from_f64(rng.gen_range(-bound..=bound));
        Self {
            wq: Tensor::from_vec(&[dim, hidden], (0..dim * hidden).map(&mut draw).collect()),
            wk: Tensor::from_vec(&[dim, hidden], (0..dim * hidden).map(&mut draw).collect()),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wq.shape[1]
    }
}

/// Parameters of one temporal -> spectral -> spatial stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams<S> {
    pub temporal_attn: AttentionParams<S>,
    pub temporal_mamba: MambaParams<S>,
    pub spectral_attn: AttentionParams<S>,
    pub spectral_mamba: MambaParams<S>,
    pub spatial_mamba: MambaParams<S>,
}

impl<S: Scalar> StageParams<S> {
    fn dims(cfg: &ModelConfig) -> [MambaDims; 3] {
        let m = |d| MambaDims::new(d, cfg.expand, cfg.state_dim, cfg.conv_width);
        [m(cfg.temporal_dim()), m(cfg.pixels()), m(cfg.stem_features)]
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let [t, s, p] = Self::dims(cfg);
        Self {
            temporal_attn: AttentionParams::zeros(cfg.temporal_dim(), cfg.hidden_dim),
            temporal_mamba: MambaParams::zeros(t),
            spectral_attn: AttentionParams::zeros(cfg.pixels(), cfg.hidden_dim),
            spectral_mamba: MambaParams::zeros(s),
            spatial_mamba: MambaParams::zeros(p),
        }
    }

    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let [t, s, p] = Self::dims(cfg);
        Self {
            temporal_attn: AttentionParams::init(cfg.temporal_dim(), cfg.hidden_dim, rng),
            temporal_mamba: MambaParams::init(t, rng),
            spectral_attn: AttentionParams::init(cfg.pixels(), cfg.hidden_dim, rng),
            spectral_mamba: MambaParams::init(s, rng),
            spatial_mamba: MambaParams::init(p, rng),
        }
    }
}

/// Module output plus one selection per processed sequence.
#[derive(Debug, Clone)]
pub struct ModuleOutput<S> {
    pub output: Vec<S>,
    pub selections: Vec<SparseSelection>,
}

impl<S> ModuleOutput<S> {
    /// Recurrence steps executed by the module's scan, summed over sequences.
    pub fn scan_steps(&self) -> usize {
        self.selections.iter().map(SparseSelection::len).sum()
    }
}

#[derive(Debug)]
pub struct AttentionModuleCache<S> {
    seqs: usize,
    n: usize,
    dim: usize,
    picks: Vec<Pick<S>>,
    scaling: Option<ScalingCache<S>>,
    mamba: MambaCache<S>,
}

#[derive(Debug)]
struct ScalingCache<S> {
    input: Vec<S>,
    q: Vec<S>,
    k: Vec<S>,
    attn: Vec<S>,
}

/// Attention-ranked module over `seqs` contiguous sequences of `n x dim` tokens.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_module_forward<S: Scalar>(
    attn_p: &AttentionParams<S>,
    mamba_p: &MambaParams<S>,
    x: &[S],
    seqs: usize,
    n: usize,
    dim: usize,
    ratio: f64,
    opts: SelectOptions,
    keep: bool,
) -> (ModuleOutput<S>, Option<AttentionModuleCache<S>>) {
    let hidden = attn_p.hidden();
    let rows = seqs * n;
    let mut q = vec![S::zero(); rows * hidden];
    let mut k = vec![S::zero(); rows * hidden];
    gemm(rows, dim, hidden, S::one(), x, Op::N, &attn_p.wq.data, Op::N, S::zero(), &mut q);
    gemm(rows, dim, hidden, S::one(), x, Op::N, &attn_p.wk.data, Op::N, S::zero(), &mut k);
    let mut attn = vec![S::zero(); seqs * n * n];
    let mut picks = Vec::with_capacity(seqs);
    for s in 0..seqs {
        let a = &mut attn[s * n * n..(s + 1) * n * n];
        attention_from_projections(
            &q[s * n * hidden..(s + 1) * n * hidden],
            &k[s * n * hidden..(s + 1) * n * hidden],
            n,
            hidden,
            a,
        );
        let scores = importance_scores(a, n);
        picks.push(pick_by_importance(&scores, ratio, opts));
    }
    let len = picks.first().map_or(0, |p| p.selection.len());
    let mut gathered = vec![S::zero(); seqs * len * dim];
    for (s, pick) in picks.iter().enumerate() {
        for (r, (&i, &f)) in pick.selection.indices.iter().zip(&pick.factors).enumerate() {
            let src = &x[(s * n + i) * dim..(s * n + i + 1) * dim];
            let dst = &mut gathered[(s * len + r) * dim..(s * len + r + 1) * dim];
            for (d, v) in dst.iter_mut().zip(src) {
                *d = *v * f;
            }
        }
    }
    let (processed, mcache) = mamba_forward_batch(mamba_p, &gathered, seqs, len, keep);
    drop(gathered);
    let mut output = x.to_vec();
    for (s, pick) in picks.iter().enumerate() {
        scatter_add(
            &mut output[s * n * dim..(s + 1) * n * dim],
            &processed[s * len * dim..(s + 1) * len * dim],
            dim,
            &pick.selection.indices,
        );
    }
    let selections = picks.iter().map(|p| p.selection.clone()).collect();
    let cache = mcache.map(|mamba| AttentionModuleCache {
        seqs,
        n,
        dim,
        scaling: opts.score_scaling.then(|| ScalingCache {
            input: x.to_vec(),
            q,
            k,
            attn,
        }),
        picks,
        mamba,
    });
    (ModuleOutput { output, selections }, cache)
}

pub(crate) fn attention_module_backward<S: Scalar>(
    attn_p: &AttentionParams<S>,
    mamba_p: &MambaParams<S>,
    cache: &AttentionModuleCache<S>,
    d_out: &[S],
    attn_g: &mut AttentionParams<S>,
    mamba_g: &mut MambaParams<S>,
) -> Vec<S> {
    let AttentionModuleCache {
        seqs, n, dim, ..
    } = *cache;
    let len = cache.picks.first().map_or(0, |p| p.selection.len());
    let mut d_processed = vec![S::zero(); seqs * len * dim];
    for (s, pick) in cache.picks.iter().enumerate() {
        for (r, &i) in pick.selection.indices.iter().enumerate() {
            d_processed[(s * len + r) * dim..(s * len + r + 1) * dim]
                .copy_from_slice(&d_out[(s * n + i) * dim..(s * n + i + 1) * dim]);
        }
    }
    let d_gathered = mamba_backward(mamba_p, &cache.mamba, &d_processed, mamba_g);
    drop(d_processed);
    let mut d_in = d_out.to_vec();
    for (s, pick) in cache.picks.iter().enumerate() {
        for (r, (&i, &f)) in pick.selection.indices.iter().zip(&pick.factors).enumerate() {
            let g = &d_gathered[(s * len + r) * dim..(s * len + r + 1) * dim];
            for (d, v) in d_in[(s * n + i) * dim..(s * n + i + 1) * dim].iter_mut().zip(g) {
                *d += *v * f;
            }
        }
    }
    let Some(sc) = &cache.scaling else {
        return d_in;
    };

    // factor_r = score_r / mean(kept scores), score = column mean of attn
    let hidden = attn_p.hidden();
    let inv_sqrt = S::one() / S::from_usize(hidden).sqrt();
    let inv_n = S::one() / S::from_usize(n);
    let inv_len = S::one() / S::from_usize(len);
    let mut d_q = vec![S::zero(); seqs * n * hidden];
    let mut d_k = vec![S::zero(); seqs * n * hidden];
    let mut d_logits = vec![S::zero(); n * n];
    for (s, pick) in cache.picks.iter().enumerate() {
        let idx = &pick.selection.indices;
        let scores: Vec<S> = idx
            .iter()
            .map(|&i| {
                let a = &sc.attn[s * n * n..(s + 1) * n * n];
                (0..n).map(|m| a[m * n + i]).sum::<S>() * inv_n
            })
            .collect();
        let mean = scores.iter().copied().sum::<S>() * inv_len;
        let d_factor: Vec<S> = idx
            .iter()
            .enumerate()
            .map(|(r, &i)| {
                let g = &d_gathered[(s * len + r) * dim..(s * len + r + 1) * dim];
                let v = &sc.input[(s * n + i) * dim..(s * n + i + 1) * dim];
                g.iter().zip(v).map(|(a, b)| *a * *b).sum::<S>()
            })
            .collect();
        let weighted: S = d_factor.iter().zip(&scores).map(|(d, sc)| *d * *sc).sum();
        let mut d_col = vec![S::zero(); n];
        for (r, &i) in idx.iter().enumerate() {
            d_col[i] = d_factor[r] / mean - weighted * inv_len / (mean * mean);
        }
        // d attn[m, c] = d_col[c] / n, then softmax backward per row
        let a = &sc.attn[s * n * n..(s + 1) * n * n];
        for m in 0..n {
            let row = &a[m * n..(m + 1) * n];
            let dot: S = (0..n).map(|c| row[c] * d_col[c] * inv_n).sum();
            for c in 0..n {
                d_logits[m * n + c] = row[c] * (d_col[c] * inv_n - dot) * inv_sqrt;
            }
        }
        let qs = &sc.q[s * n * hidden..(s + 1) * n * hidden];
        let ks = &sc.k[s * n * hidden..(s + 1) * n * hidden];
        gemm(n, n, hidden, S::one(), &d_logits, Op::N, ks, Op::N, S::zero(), &mut d_q[s * n * hidden..(s + 1) * n * hidden]);
        gemm(n, n, hidden, S::one(), &d_logits, Op::T, qs, Op::N, S::zero(), &mut d_k[s * n * hidden..(s + 1) * n * hidden]);
    }
    let rows = seqs * n;
    gemm(dim, rows, hidden, S::one(), &sc.input, Op::T, &d_q, Op::N, S::one(), &mut attn_g.wq.data);
    gemm(dim, rows, hidden, S::one(), &sc.input, Op::T, &d_k, Op::N, S::one(), &mut attn_g.wk.data);
    gemm(rows, hidden, dim, S::one(), &d_q, Op::N, &attn_p.wq.data, Op::T, S::one(), &mut d_in);
    gemm(rows, hidden, dim, S::one(), &d_k, Op::N, &attn_p.wk.data, Op::T, S::one(), &mut d_in);
    d_in
}

#[derive(Debug)]
pub struct SpatialModuleCache<S> {
    seqs: usize,
    features: usize,
    pixels: usize,
    selections: Vec<SparseSelection>,
    mamba: MambaCache<S>,
}

/// Angle-ranked module over `seqs` blocks of `features x pixels` maps.
pub(crate) fn spatial_module_forward<S: Scalar>(
    mamba_p: &MambaParams<S>,
    x: &[S],
    seqs: usize,
    features: usize,
    pixels: usize,
    ratio: f64,
    natural_order: bool,
    keep: bool,
) -> (ModuleOutput<S>, Option<SpatialModuleCache<S>>) {
    let block = features * pixels;
    let mut tokens = vec![S::zero(); block];
    let mut angles = vec![S::zero(); pixels];
    let mut selections = Vec::with_capacity(seqs);
    for s in 0..seqs {
        let src = &x[s * block..(s + 1) * block];
        for f in 0..features {
            for p in 0..pixels {
                tokens[p * features + f] = src[f * pixels + p];
            }
        }
        angles_to_center(&tokens, pixels, features, &mut angles);
        selections.push(pick_by_angle(&angles, ratio, natural_order));
    }
    let len = selections.first().map_or(0, SparseSelection::len);
    let mut gathered = vec![S::zero(); seqs * len * features];
    for (s, sel) in selections.iter().enumerate() {
        for (r, &p) in sel.indices.iter().enumerate() {
            for f in 0..features {
                gathered[(s * len + r) * features + f] = x[s * block + f * pixels + p];
            }
        }
    }
    let (processed, mcache) = mamba_forward_batch(mamba_p, &gathered, seqs, len, keep);
    let mut output = x.to_vec();
    for (s, sel) in selections.iter().enumerate() {
        for (r, &p) in sel.indices.iter().enumerate() {
            for f in 0..features {
                output[s * block + f * pixels + p] += processed[(s * len + r) * features + f];
            }
        }
    }
    let cache = mcache.map(|mamba| SpatialModuleCache {
        seqs,
        features,
        pixels,
        selections: selections.clone(),
        mamba,
    });
    (ModuleOutput { output, selections }, cache)
}

pub(crate) fn spatial_module_backward<S: Scalar>(
    mamba_p: &MambaParams<S>,
    cache: &SpatialModuleCache<S>,
    d_out: &[S],
    mamba_g: &mut MambaParams<S>,
) -> Vec<S> {
    let SpatialModuleCache {
        seqs,
        features,
        pixels,
        ..
    } = *cache;
    let block = features * pixels;
    let len = cache.selections.first().map_or(0, SparseSelection::len);
    let mut d_processed = vec![S::zero(); seqs * len * features];
    for (s, sel) in cache.selections.iter().enumerate() {
        for (r, &p) in sel.indices.iter().enumerate() {
            for f in 0..features {
                d_processed[(s * len + r) * features + f] = d_out[s * block + f * pixels + p];
            }
        }
    }
    let d_gathered = mamba_backward(mamba_p, &cache.mamba, &d_processed, mamba_g);
    let mut d_in = d_out.to_vec();
    for (s, sel) in cache.selections.iter().enumerate() {
        for (r, &p) in sel.indices.iter().enumerate() {
            for f in 0..features {
                d_in[s * block + f * pixels + p] += d_gathered[(s * len + r) * features + f];
            }
        }
    }
    d_in
}

fn check_features<S: Scalar>(features: &[S], batch: usize, cfg: &ModelConfig) -> Result<()> {
    cfg.validate()?;
    if batch == 0 || features.len() != batch * cfg.feature_len() {
        return Err(CoreError::Shape(format!(
            "expected {batch} x {} x {} x {} features, got {} values",
            cfg.time_steps * cfg.stem_features,
            cfg.height,
            cfg.width,
            features.len()
        )));
    }
    ensure_finite("module input", features)
}

/// A module at ratio 1 is dense: every token, source order.
pub(crate) fn select_opts(cfg: &ModelConfig, ratio: f64) -> SelectOptions {
    SelectOptions {
        score_scaling: cfg.score_scaling,
        natural_order: ratio >= 1.0,
    }
}

/// Temporal module: `T` tokens of width `F*H*W` per sample.
pub fn sdtm_forward<S: Scalar>(
    features: &[S],
    batch: usize,
    cfg: &ModelConfig,
    stage: &StageParams<S>,
) -> Result<ModuleOutput<S>> {
    check_features(features, batch, cfg)?;
    let (out, _) = attention_module_forward(
        &stage.temporal_attn,
        &stage.temporal_mamba,
        features,
        batch,
        cfg.time_steps,
        cfg.temporal_dim(),
        cfg.lambda_temporal,
        select_opts(cfg, cfg.lambda_temporal),
        false,
    );
    Ok(out)
}

/// Spectral module: each date of each sample is its own sequence of `F`
/// tokens of width `H*W`.
pub fn sdspem_forward<S: Scalar>(
    features: &[S],
    batch: usize,
    cfg: &ModelConfig,
    stage: &StageParams<S>,
) -> Result<ModuleOutput<S>> {
    check_features(features, batch, cfg)?;
    let (out, _) = attention_module_forward(
        &stage.spectral_attn,
        &stage.spectral_mamba,
        features,
        batch * cfg.time_steps,
        cfg.stem_features,
        cfg.pixels(),
        cfg.lambda_spectral,
        select_opts(cfg, cfg.lambda_spectral),
        false,
    );
    Ok(out)
}

/// Spatial module: each date of each sample is its own sequence of `H*W`
/// pixel tokens of width `F`, ranked by angle to the center pixel.
pub fn sdspam_forward<S: Scalar>(
    features: &[S],
    batch: usize,
    cfg: &ModelConfig,
    stage: &StageParams<S>,
) -> Result<ModuleOutput<S>> {
    check_features(features, batch, cfg)?;
    let (out, _) = spatial_module_forward(
        &stage.spatial_mamba,
        features,
        batch * cfg.time_steps,
        cfg.stem_features,
        cfg.pixels(),
        cfg.lambda_spatial,
        cfg.lambda_spatial >= 1.0,
        false,
    );
    Ok(out)
}
