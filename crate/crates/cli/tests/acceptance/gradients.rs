use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stsm_core::{Model, ModelConfig, ModelParams};

use crate::{ensure, err};

fn tiny(score_scaling: bool) -> ModelConfig {
    ModelConfig {
        time_steps: 4,
        channels: 2,
        stem_features: 3,
        height: 5,
        width: 5,
        hidden_dim: 4,
        state_dim: 3,
        conv_width: 3,
        expand: 2,
        lambda_temporal: 0.5,
        lambda_spectral: 0.7,
        lambda_spatial: 0.4,
        blocks: 1,
        num_classes: 3,
        score_scaling,
    }
}

/// Every parameter entry against a central difference; returns (agreeing, total).
fn check(score_scaling: bool) -> Result<(usize, usize), String> {
    let cfg = tiny(score_scaling);
    let mut model = Model::<f64>::new(cfg.clone(), 11).map_err(err)?;
    for st in model.params.stages.iter_mut() {
        for m in [&mut st.temporal_mamba, &mut st.spectral_mamba, &mut st.spatial_mamba] {
            m.out_w.data.iter_mut().for_each(|v| *v *= 3.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch = 3;
    let x: Vec<f64> = (0..batch * cfg.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y: Vec<usize> = (0..batch).map(|i| i % cfg.num_classes).collect();

    let mut grads = ModelParams::zeros(&cfg);
    model
        .accumulate_gradients(&x, &y, 1.0 / batch as f64, &mut grads)
        .map_err(err)?;
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, t)| t.data.clone()).collect();
    let h = 1e-5;
    let (mut good, mut total) = (0, 0);
    for (idx, g) in analytic.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let orig = model.params.tensors()[idx].1.data[i];
            model.params.tensors_mut()[idx].1.data[i] = orig + h;
            let up = model.batch_loss(&x, &y).map_err(err)?;
            model.params.tensors_mut()[idx].1.data[i] = orig - h;
            let down = model.batch_loss(&x, &y).map_err(err)?;
            model.params.tensors_mut()[idx].1.data[i] = orig;
            let n = (up - down) / (2.0 * h);
            total += 1;
            if (n - a).abs() / (n.abs() + a.abs()).max(1e-6) < 1e-3 {
                good += 1;
            }
        }
    }
    Ok((good, total))
}

/// Full-model analytic gradients on the tiny configuration, with and without
/// attention score scaling.
pub fn run() -> Result<String, String> {
    let started = Instant::now();
    let mut parts = Vec::new();
    for scaling in [false, true] {
        let (good, total) = check(scaling)?;
        let frac = good as f64 / total as f64;
        ensure(frac >= 0.99, || {
            format!("score_scaling={scaling}: {good}/{total} entries within 1e-3")
        })?;
        parts.push(format!("score_scaling={scaling} {good}/{total}"));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{} in {secs:.1}s", parts.join(", ")))
}
