use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stsm_core::attention::{attention_matrix, importance_scores, select_tokens};
use stsm_core::modules::{sdspam_forward, sdspem_forward, sdtm_forward};
use stsm_core::scatter::scatter_residual;
use stsm_core::spatial::{spatial_angle_attention, topk_sparse_spatial};
use stsm_core::{Axis, ModelConfig, ModelParams, SelectOptions, SparseSelection, TokenSequence};

use crate::{ensure, err};

fn random(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn floor_len(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 1e-9).floor() as usize).max(1)
}

fn attention_rows(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut checked = 0;
    for _ in 0..300 {
        let n = rng.gen_range(1..=24);
        let dim = rng.gen_range(1..=12);
        let hidden = rng.gen_range(1..=8);
        let tokens = random(rng, n * dim, 3.0);
        let wq = random(rng, dim * hidden, 1.0);
        let wk = random(rng, dim * hidden, 1.0);
        let attn = attention_matrix(&tokens, n, dim, &wq, &wk, hidden).map_err(err)?;
        for row in attn.chunks_exact(n) {
            let sum: f64 = row.iter().sum();
            ensure((sum - 1.0).abs() <= 1e-5, || format!("row sums to {sum}"))?;
            ensure((sum / n as f64 - 1.0 / n as f64).abs() <= 1e-5, || "row mean is not 1/N".into())?;
            ensure(row.iter().all(|v| *v > 0.0 && *v <= 1.0), || "entry outside (0, 1]".into())?;
        }
        let scores = importance_scores(&attn, n);
        let total: f64 = scores.iter().sum();
        ensure((total - 1.0).abs() <= 1e-9, || format!("importance scores sum to {total}"))?;
        checked += 1;
    }
    // column means carry information where row means cannot
    let tokens = random(rng, 8 * 4, 3.0);
    let w = random(rng, 4 * 4, 1.5);
    let attn = attention_matrix(&tokens, 8, 4, &w, &w, 4).map_err(err)?;
    let scores = importance_scores(&attn, 8);
    let spread = scores.iter().fold(0f64, |a, s| a.max((s - 0.125).abs()));
    ensure(spread > 1e-3, || "column means are all 1/N on random input".into())?;
    Ok(checked)
}

/// Contracts shared by both selectors; ordering is checked from rank `from` on.
fn check_selection(sel: &SparseSelection, n: usize, ratio: f64, descending: bool, from: usize) -> Result<(), String> {
    ensure(sel.len() == floor_len(ratio, n), || {
        format!("{} tokens kept of {n} at ratio {ratio}", sel.len())
    })?;
    let mut seen = vec![false; n];
    for &i in &sel.indices {
        ensure(i < n && !seen[i], || format!("index {i} repeated or out of range"))?;
        seen[i] = true;
    }
    for w in from..sel.len().saturating_sub(1) {
        let (a, b) = (sel.scores[w], sel.scores[w + 1]);
        let ordered = if descending { a >= b } else { a <= b };
        ensure(ordered, || format!("scores out of order: {a} then {b}"))?;
        if a == b {
            ensure(sel.indices[w] < sel.indices[w + 1], || "tie not broken by index".into())?;
        }
    }
    Ok(())
}

fn selections(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut checked = 0;
    for _ in 0..500 {
        let n = rng.gen_range(1..=40);
        let dim = rng.gen_range(1..=4);
        let ratio = [0.1, 0.3, 0.5, 0.8, 1.0, rng.gen_range(0.01..=1.0)][rng.gen_range(0..6)];
        let seq = TokenSequence::new(random(rng, n * dim, 1.0), dim, Axis::Temporal).map_err(err)?;
        // coarse scores force ties
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
        let (kept, sel) = select_tokens(&seq, &scores, ratio, SelectOptions::default()).map_err(err)?;
        check_selection(&sel, n, ratio, true, 0)?;
        ensure(kept.source_indices == sel.indices, || "source indices differ".into())?;
        for (r, &i) in sel.indices.iter().enumerate() {
            ensure(kept.token(r) == seq.token(i), || "kept token altered without scaling".into())?;
        }
        if ratio >= 1.0 {
            ensure(sel.len() == n, || "unit ratio dropped tokens".into())?;
        }

        let side = 2 * rng.gen_range(0..4) + 1;
        let dim = rng.gen_range(1..=5);
        let tokens = random(rng, side * side * dim, 1.0);
        let angles = spatial_angle_attention(&tokens, side, side, dim).map_err(err)?;
        let sel = topk_sparse_spatial(&angles, ratio).map_err(err)?;
        // the center leads even when another pixel ties it at angle 0
        check_selection(&sel, side * side, ratio, false, 1)?;
        ensure(sel.indices[0] == (side * side - 1) / 2, || "center pixel not first".into())?;
        ensure(
            angles.iter().all(|a| (0.0..=std::f64::consts::PI).contains(a)),
            || "angle outside [0, pi]".into(),
        )?;
        let scaled: Vec<f64> = tokens.iter().map(|v| v * 3.0).collect();
        let again = topk_sparse_spatial(&spatial_angle_attention(&scaled, side, side, dim).map_err(err)?, ratio)
            .map_err(err)?;
        ensure(again.indices == sel.indices, || "spatial selection changed under scaling".into())?;
        checked += 2;
    }
    Ok(checked)
}

fn scatter(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    for _ in 0..200 {
        let n = rng.gen_range(1..=30);
        let dim = rng.gen_range(1..=6);
        let k = rng.gen_range(1..=n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let sel = SparseSelection {
            indices: order[..k].to_vec(),
            scores: vec![0.0; k],
            ratio: k as f64 / n as f64,
            source_len: n,
        };
        let full = random(rng, n * dim, 10.0);
        let processed = random(rng, k * dim, 1.0);
        let out = scatter_residual(&full, &processed, dim, &sel).map_err(err)?;
        for i in 0..n {
            let row = &out[i * dim..(i + 1) * dim];
            let src = &full[i * dim..(i + 1) * dim];
            match sel.rank_of(i) {
                None => ensure(
                    row.iter().zip(src).all(|(a, b)| a.to_bits() == b.to_bits()),
                    || format!("unselected row {i} changed"),
                )?,
                Some(r) => {
                    for j in 0..dim {
                        ensure(row[j] == src[j] + processed[r * dim + j], || "selected row mis-added".into())?;
                    }
                }
            }
        }
        let zeros = vec![0.0; k * dim];
        let same = scatter_residual(&full, &zeros, dim, &sel).map_err(err)?;
        ensure(same == full, || "zero residual is not the identity".into())?;
    }
    Ok(200)
}

fn small_config() -> ModelConfig {
    ModelConfig {
        time_steps: 9,
        channels: 3,
        stem_features: 7,
        height: 5,
        width: 5,
        hidden_dim: 6,
        state_dim: 4,
        lambda_temporal: 0.5,
        lambda_spectral: 0.5,
        lambda_spatial: 0.4,
        num_classes: 4,
        ..ModelConfig::default()
    }
}

/// Reorders the `groups` blocks of `block` values of each of `batch` samples.
fn permute_groups(x: &[f64], batch: usize, groups: usize, block: usize, perm: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in 0..batch {
        for (new, &old) in perm.iter().enumerate() {
            let src = (b * groups + old) * block;
            let dst = (b * groups + new) * block;
            out[dst..dst + block].copy_from_slice(&x[src..src + block]);
        }
    }
    out
}

fn equivariance(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let cfg = small_config();
    let params = ModelParams::<f64>::init(&cfg, 5);
    let stage = &params.stages[0];
    let batch = 3;
    let (t, f, hw) = (cfg.time_steps, cfg.stem_features, cfg.pixels());
    let mut checked = 0;
    for _ in 0..20 {
        let x = random(rng, batch * t * f * hw, 2.0);

        // temporal: permute dates within each sample
        let mut perm: Vec<usize> = (0..t).collect();
        perm.shuffle(rng);
        let base = sdtm_forward(&x, batch, &cfg, stage).map_err(err)?;
        let moved = sdtm_forward(&permute_groups(&x, batch, t, f * hw, &perm), batch, &cfg, stage).map_err(err)?;
        for (a, b) in base.selections.iter().zip(&moved.selections) {
            // position p of the permuted input holds original date perm[p]
            let mut mapped: Vec<usize> = b.indices.iter().map(|&p| perm[p]).collect();
            let mut orig = a.indices.clone();
            mapped.sort_unstable();
            orig.sort_unstable();
            ensure(mapped == orig, || "temporal selection is not permutation-equivariant".into())?;
        }

        // spectral: permute features within every date
        let mut perm: Vec<usize> = (0..f).collect();
        perm.shuffle(rng);
        let base = sdspem_forward(&x, batch, &cfg, stage).map_err(err)?;
        let moved =
            sdspem_forward(&permute_groups(&x, batch * t, f, hw, &perm), batch, &cfg, stage).map_err(err)?;
        for (a, b) in base.selections.iter().zip(&moved.selections) {
            let mut mapped: Vec<usize> = b.indices.iter().map(|&p| perm[p]).collect();
            let mut orig = a.indices.clone();
            mapped.sort_unstable();
            orig.sort_unstable();
            ensure(mapped == orig, || "spectral selection is not permutation-equivariant".into())?;
        }

        // spatial: center first in every sequence
        let out = sdspam_forward(&x, batch, &cfg, stage).map_err(err)?;
        ensure(
            out.selections.iter().all(|s| s.indices[0] == (hw - 1) / 2),
            || "spatial module did not lead with the center".into(),
        )?;
        checked += 3;
    }
    Ok(checked)
}

/// Attention rows, selection contracts, scatter pass-through, spatial angle
/// properties and selection equivariance, under one minute.
pub fn run() -> Result<String, String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rows = attention_rows(&mut rng)?;
    let sels = selections(&mut rng)?;
    let scat = scatter(&mut rng)?;
    let eq = equivariance(&mut rng)?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{rows} attention matrices, {sels} selections, {scat} scatters, {eq} equivariance cases in {secs:.1}s"
    ))
}
