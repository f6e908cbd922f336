use stsm_core::Model;

use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::samples::LabeledSet;

/// Samples per inference call.
pub const EVAL_CHUNK: usize = 64;

/// 0-based predictions for every sample, in order.
pub fn predict_all(model: &Model<f32>, set: &LabeledSet<'_>) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(set.len());
    let mut start = 0;
    while start < set.len() {
        let end = (start + EVAL_CHUNK).min(set.len());
        out.extend(model.predict(set.range(start, end), end - start)?);
        start = end;
    }
    Ok(out)
}

pub fn evaluate(model: &Model<f32>, set: &LabeledSet<'_>) -> Result<MetricsReport> {
    let predicted = predict_all(model, set)?;
    MetricsReport::from_predictions(&predicted, &set.labels, model.config.num_classes)
}
