use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stsm_core::scan::{selective_scan, ScanDims};

use crate::{ensure, err};

struct Instance {
    dims: ScanDims,
    x: Vec<f64>,
    delta: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let dims = ScanDims {
        len: rng.gen_range(1..=16),
        channels: rng.gen_range(1..=6),
        state: rng.gen_range(1..=5),
    };
    let mut v = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
    Instance {
        x: v(dims.len * dims.channels, -2.0, 2.0),
        delta: v(dims.len * dims.channels, 1e-3, 1.5),
        a: v(dims.channels * dims.state, -3.0, -0.05),
        b: v(dims.len * dims.state, -1.5, 1.5),
        c: v(dims.len * dims.state, -1.5, 1.5),
        d: v(dims.channels, -1.0, 1.0),
        dims,
    }
}

/// The recurrence one step at a time.
fn naive(s: &Instance) -> Vec<f64> {
    let ScanDims { len, channels, state } = s.dims;
    let mut y = vec![0.0; len * channels];
    for j in 0..channels {
        let mut h = vec![0.0; state];
        for t in 0..len {
            let dt = s.delta[t * channels + j];
            let xt = s.x[t * channels + j];
            let mut out = s.d[j] * xt;
            for n in 0..state {
                h[n] = (dt * s.a[j * state + n]).exp() * h[n] + dt * s.b[t * state + n] * xt;
                out += s.c[t * state + n] * h[n];
            }
            y[t * channels + j] = out;
        }
    }
    y
}

fn scan(s: &Instance) -> Result<Vec<f64>, String> {
    selective_scan(&s.x, &s.delta, &s.a, &s.b, &s.c, &s.d, s.dims).map_err(err)
}

/// 200 random float64 instances against the step-by-step recurrence, plus a
/// causality check that perturbs one step.
pub fn run() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0f64;
    for _ in 0..200 {
        let s = instance(&mut rng);
        let got = scan(&s)?;
        for (g, w) in got.iter().zip(naive(&s)) {
            worst = worst.max((g - w).abs());
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;

    let mut causal = 0;
    for _ in 0..100 {
        let mut s = instance(&mut rng);
        if s.dims.len < 2 {
            continue;
        }
        let before = scan(&s)?;
        let t = rng.gen_range(1..s.dims.len);
        let ch = s.dims.channels;
        for j in 0..ch {
            s.x[t * ch + j] += 1.0;
        }
        let after = scan(&s)?;
        ensure(before[..t * ch] == after[..t * ch], || format!("output before step {t} changed"))?;
        ensure(before[t * ch..] != after[t * ch..], || "perturbation had no effect".into())?;
        causal += 1;
    }
    Ok(format!("200 instances, max deviation {worst:.1e}; {causal} causality perturbations"))
}
