//! Zero-order-hold selective state space recurrence.
//!
//! For every inner channel `j` and state slot `n`:
//!
//! ```text
//! h_0     = 0
//! h_t     = exp(dt_t[j] * A[j, n]) * h_{t-1} + dt_t[j] * B_t[n] * x_t[j]
//! y_t[j]  = sum_n C_t[n] * h_t[j, n] + D[j] * x_t[j]
//! ```

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Shapes of one scan call: `len` steps, `channels` inner channels, `state` slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanDims {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

/// Runs the recurrence on one sequence. `x`, `delta` are `len x channels`,
/// `a` is `channels x state`, `b`, `c` are `len x state`, `d_skip` has
/// `channels` entries.
///
/// Rejects `delta <= 0` and `a >= 0`, the regime where the discrete
/// transition factor leaves `(0, 1)`.
#[allow(clippy::too_many_arguments)]
pub fn selective_scan<S: Scalar>(
    x: &[S],
    delta: &[S],
    a: &[S],
    b: &[S],
    c: &[S],
    d_skip: &[S],
    dims: ScanDims,
) -> Result<Vec<S>> {
    let ScanDims {
        len,
        channels,
        state,
    } = dims;
    let expect = [
        ("x", x.len(), len * channels),
        ("delta", delta.len(), len * channels),
        ("A", a.len(), channels * state),
        ("B", b.len(), len * state),
        ("C", c.len(), len * state),
        ("D", d_skip.len(), channels),
    ];
    for (name, got, want) in expect {
        if got != want {
            return Err(CoreError::Shape(format!("scan {name}: {got} values, expected {want}")));
        }
    }
    if let Some(v) = delta.iter().find(|v| !(**v > S::zero())) {
        return Err(CoreError::Contract(format!("scan step sizes must be positive, found {v}")));
    }
    if let Some(v) = a.iter().find(|v| !(**v < S::zero())) {
        return Err(CoreError::Contract(format!("scan transition rates must be negative, found {v}")));
    }
    let mut y = vec![S::zero(); len * channels];
    scan_forward(x, delta, a, b, c, d_skip, dims, &mut y, None);
    Ok(y)
}

/// Unchecked recurrence. When `states` is given it receives `h_t` for every
/// step as a `len x channels x state` array.
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_forward<S: Scalar>(
    x: &[S],
    delta: &[S],
    a: &[S],
    b: &[S],
    c: &[S],
    d_skip: &[S],
    dims: ScanDims,
    y: &mut [S],
    mut states: Option<&mut [S]>,
) {
    let ScanDims {
        len,
        channels,
        state,
    } = dims;
    let mut h = vec![S::zero(); channels * state];
    for t in 0..len {
        let bt = &b[t * state..(t + 1) * state];
        let ct = &c[t * state..(t + 1) * state];
        for j in 0..channels {
            let xt = x[t * channels + j];
            let dt = delta[t * channels + j];
            let dx = dt * xt;
            let hj = &mut h[j * state..(j + 1) * state];
            let aj = &a[j * state..(j + 1) * state];
            for ((h, &an), &bn) in hj.iter_mut().zip(aj).zip(bt) {
                *h = (dt * an).exp_fast() * *h + dx * bn;
            }
            y[t * channels + j] = dot(ct, hj) + d_skip[j] * xt;
        }
        if let Some(buf) = states.as_deref_mut() {
            buf[t * channels * state..(t + 1) * channels * state].copy_from_slice(&h);
        }
    }
}

/// Eight running partial sums so short reductions vectorize.
#[inline(always)]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut lanes = [S::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    let mut tail = S::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    lanes.iter().copied().sum::<S>() + tail
}

#[inline(always)]
fn sum<S: Scalar>(a: &[S]) -> S {
    let mut lanes = [S::zero(); 8];
    let mut chunks = a.chunks_exact(8);
    for x in &mut chunks {
        for k in 0..8 {
            lanes[k] += x[k];
        }
    }
    lanes.iter().copied().sum::<S>() + chunks.remainder().iter().copied().sum::<S>()
}

/// Gradients of one scan. Output slices are accumulated into, not overwritten.
pub(crate) struct ScanGrads<'a, S> {
    pub x: &'a mut [S],
    pub delta: &'a mut [S],
    pub a: &'a mut [S],
    pub b: &'a mut [S],
    pub c: &'a mut [S],
    pub d_skip: &'a mut [S],
}

/// Reverse pass using the `states` recorded by [`scan_forward`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn scan_backward<S: Scalar>(
    x: &[S],
    delta: &[S],
    a: &[S],
    b: &[S],
    c: &[S],
    d_skip: &[S],
    states: &[S],
    dy: &[S],
    dims: ScanDims,
    grads: ScanGrads<'_, S>,
) {
    let ScanDims {
        len,
        channels,
        state,
    } = dims;
    let plane = channels * state;
    let mut dh = vec![S::zero(); plane];
    let zeros = vec![S::zero(); state];
    let mut g_state = vec![S::zero(); state];
    let mut g_dt_terms = vec![S::zero(); state];
    for t in (0..len).rev() {
        let bt = &b[t * state..(t + 1) * state];
        let ct = &c[t * state..(t + 1) * state];
        let ht = &states[t * plane..(t + 1) * plane];
        for j in 0..channels {
            let idx = t * channels + j;
            let g_y = dy[idx];
            let xt = x[idx];
            let dt = delta[idx];
            grads.d_skip[j] += g_y * xt;
            let aj = &a[j * state..(j + 1) * state];
            let dhj = &mut dh[j * state..(j + 1) * state];
            let htj = &ht[j * state..(j + 1) * state];
            let gct = &mut grads.c[t * state..(t + 1) * state];
            for n in 0..state {
                gct[n] += htj[n] * g_y;
            }
            let hprev = if t > 0 {
                &states[(t - 1) * plane + j * state..(t - 1) * plane + (j + 1) * state]
            } else {
                &zeros[..]
            };
            let gbt = &mut grads.b[t * state..(t + 1) * state];
            let gaj = &mut grads.a[j * state..(j + 1) * state];
            for n in 0..state {
                let g = dhj[n] + ct[n] * g_y;
                let abar = (dt * aj[n]).exp_fast();
                let carry = abar * hprev[n];
                g_state[n] = g;
                g_dt_terms[n] = g * (aj[n] * carry + bt[n] * xt);
                gaj[n] += g * dt * carry;
                gbt[n] += g * dt * xt;
                dhj[n] = g * abar;
            }
            grads.delta[idx] += sum(&g_dt_terms);
            grads.x[idx] += d_skip[j] * g_y + dt * dot(&g_state, bt);
        }
    }
}
