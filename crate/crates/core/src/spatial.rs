//! Spatial token ranking by spectral angle to the patch center.

use crate::attention::{rank_ascending, SparseSelection};
use crate::config::{check_ratio, sparse_len};
use crate::error::{ensure_finite, CoreError, Result};
use crate::scalar::Scalar;

/// Norm below which a token counts as having no direction.
pub const ZERO_NORM: f64 = 1e-12;

/// Angle (radians) between every spatial token and the center token.
/// `tokens` is `height*width x dim` in raster order.
pub fn spatial_angle_attention<S: Scalar>(tokens: &[S], height: usize, width: usize, dim: usize) -> Result<Vec<S>> {
    if height % 2 == 0 || width % 2 == 0 {
        return Err(CoreError::Config(format!("spatial grid {height}x{width} has no center pixel")));
    }
    if dim == 0 || tokens.len() != height * width * dim {
        return Err(CoreError::Shape(format!(
            "{} values for a {height}x{width} grid of width-{dim} tokens",
            tokens.len()
        )));
    }
    ensure_finite("spatial tokens", tokens)?;
    let mut out = vec![S::zero(); height * width];
    angles_to_center(tokens, height * width, dim, &mut out);
    Ok(out)
}

/// Unchecked kernel: `pixels` tokens of width `dim`, center at `(pixels-1)/2`.
pub(crate) fn angles_to_center<S: Scalar>(tokens: &[S], pixels: usize, dim: usize, out: &mut [S]) {
    let c = (pixels - 1) / 2;
    let center = &tokens[c * dim..(c + 1) * dim];
    let norm_c = center.iter().map(|v| *v * *v).sum::<S>().sqrt();
    let eps = S::from_f64(ZERO_NORM);
    let pi = S::from_f64(std::f64::consts::PI);
    for (i, slot) in out.iter_mut().enumerate().take(pixels) {
        if i == c {
            *slot = S::zero();
            continue;
        }
        let tok = &tokens[i * dim..(i + 1) * dim];
        let norm_i = tok.iter().map(|v| *v * *v).sum::<S>().sqrt();
        if norm_i < eps || norm_c < eps {
            *slot = pi;
            continue;
        }
        let dot = tok.iter().zip(center).map(|(a, b)| *a * *b).sum::<S>();
        let cos = (dot / (norm_i * norm_c)).max(-S::one()).min(S::one());
        *slot = cos.acos();
    }
}

/// Keeps the `max(1, floor(ratio * n))` pixels with the smallest angle,
/// ascending; the center (angle 0) always leads.
pub fn topk_sparse_spatial<S: Scalar>(angles: &[S], ratio: f64) -> Result<SparseSelection> {
    check_ratio("spatial sparsity ratio", ratio)?;
    if angles.is_empty() || angles.len() % 2 == 0 {
        return Err(CoreError::Shape(format!("{} angles do not form an odd grid", angles.len())));
    }
    let pi = S::from_f64(std::f64::consts::PI);
    if let Some(v) = angles.iter().find(|v| !(**v >= S::zero() && **v <= pi)) {
        return Err(CoreError::Contract(format!("angle {v} outside [0, pi]")));
    }
    Ok(pick_by_angle(angles, ratio, false))
}

pub(crate) fn pick_by_angle<S: Scalar>(angles: &[S], ratio: f64, natural_order: bool) -> SparseSelection {
    let n = angles.len();
    let c = (n - 1) / 2;
    let k = sparse_len(ratio, n);
    // the center must lead even if another pixel also sits at angle 0
    let mut rest: Vec<usize> = rank_ascending(angles, n).into_iter().filter(|&i| i != c).collect();
    rest.truncate(k - 1);
    let mut indices = Vec::with_capacity(k);
    indices.push(c);
    indices.extend(rest);
    if natural_order {
        indices.sort_unstable();
    }
    SparseSelection {
        scores: indices.iter().map(|&i| angles[i].as_f64()).collect(),
        indices,
        ratio,
        source_len: n,
    }
}
