use stsm_core::config::sparse_len;
use stsm_core::model::scan_steps_per_sample;
use stsm_core::{Model, ModelConfig};

use crate::{ensure, err};

/// Sequence lengths at the default ratios, both from the arithmetic and from
/// the selections a default model actually makes.
pub fn run() -> Result<String, String> {
    let cfg = ModelConfig::default();
    ensure(cfg.lambda_temporal == 0.3 && cfg.lambda_spatial == 0.3, || "default ratios changed".into())?;
    ensure(cfg.time_steps == 23 && cfg.height == 13 && cfg.width == 13, || "default geometry changed".into())?;
    ensure(sparse_len(0.3, 23) == 6, || format!("temporal length {}", sparse_len(0.3, 23)))?;
    ensure(sparse_len(0.3, 169) == 50, || format!("spatial length {}", sparse_len(0.3, 169)))?;
    ensure(cfg.temporal_tokens() == 6 && cfg.spatial_tokens() == 50, || "config token counts".into())?;

    let model = Model::<f32>::new(cfg.clone(), 0).map_err(err)?;
    let input: Vec<f32> = (0..cfg.input_len()).map(|i| ((i * 37) % 101) as f32 / 101.0).collect();
    let (_, traces) = model.logits_traced(&input, 1).map_err(err)?;
    let trace = &traces[0];
    ensure(trace.temporal.len() == 1 && trace.temporal[0].len() == 6, || {
        format!("traced temporal length {}", trace.temporal[0].len())
    })?;
    ensure(trace.spatial.iter().all(|s| s.len() == 50), || "traced spatial length".into())?;

    let dense = cfg.dense_baseline();
    let (sparse_t, dense_t) = (cfg.temporal_tokens(), dense.temporal_tokens());
    let saving = 1.0 - sparse_t as f64 / dense_t as f64;
    ensure(dense_t == 23 && saving >= 0.7, || format!("temporal saving {saving:.3}"))?;
    let (s, d) = (scan_steps_per_sample(&cfg), scan_steps_per_sample(&dense));
    Ok(format!(
        "temporal {sparse_t} of {dense_t} ({:.1}% fewer steps), spatial 50 of 169, whole model {s} vs {d} scan steps",
        100.0 * saving
    ))
}
