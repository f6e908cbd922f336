//! Grid over temporal and spectral sparsity ratios.

use std::fmt::Write as _;

use stsm_core::model::scan_steps_per_sample;
use stsm_core::{Model, ModelConfig};

use crate::error::Result;
use crate::eval::evaluate;
use crate::metrics::MetricsReport;
use crate::samples::LabeledSet;
use crate::train::{train, TrainConfig};

pub const DEFAULT_RATIOS: [f64; 3] = [0.8, 0.5, 0.3];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub lambda_temporal: f64,
    pub lambda_spectral: f64,
    pub temporal_tokens: usize,
    pub spectral_tokens: usize,
    pub spatial_tokens: usize,
    pub scan_steps: usize,
    pub best_epoch: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub ratios: Vec<f64>,
    /// Row-major: temporal ratio selects the row.
    pub cells: Vec<AblationCell>,
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

impl AblationTable {
    pub fn cell(&self, row: usize, col: usize) -> &AblationCell {
        &self.cells[row * self.ratios.len() + col]
    }

    /// Tab-separated: the `OA\AA\Kappa` grid (percent) with temporal ratios
    /// down and spectral ratios across, a blank line, then one detail row per cell.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("temporal\\spectral");
        for r in &self.ratios {
            write!(out, "\t{r}").expect("write to string");
        }
        out.push('\n');
        for (i, rt) in self.ratios.iter().enumerate() {
            write!(out, "{rt}").expect("write to string");
            for j in 0..self.ratios.len() {
                let m = &self.cell(i, j).report;
                write!(out, "\t{}\\{}\\{}", pct(m.oa), pct(m.aa), pct(m.kappa)).expect("write to string");
            }
            out.push('\n');
        }
        out.push_str("\nlambda_temporal\tlambda_spectral\ttemporal_tokens\tspectral_tokens\tspatial_tokens\tscan_steps\tbest_epoch\toa\taa\tkappa\n");
        for c in &self.cells {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.lambda_temporal,
                c.lambda_spectral,
                c.temporal_tokens,
                c.spectral_tokens,
                c.spatial_tokens,
                c.scan_steps,
                c.best_epoch,
                c.report.oa,
                c.report.aa,
                c.report.kappa
            )
            .expect("write to string");
        }
        out
    }
}

/// Trains and scores one model per `(temporal, spectral)` ratio pair. Every
/// cell starts from `model_seed` and shares the training configuration.
#[allow(clippy::too_many_arguments)]
pub fn ablation_grid(
    base: &ModelConfig,
    ratios: &[f64],
    model_seed: u64,
    train_cfg: &TrainConfig,
    train_set: &LabeledSet<'_>,
    val_set: &LabeledSet<'_>,
    test_set: &LabeledSet<'_>,
    mut on_cell: impl FnMut(&AblationCell),
) -> Result<AblationTable> {
    let mut cells = Vec::with_capacity(ratios.len() * ratios.len());
    for &lt in ratios {
        for &ls in ratios {
            let cfg = ModelConfig {
                lambda_temporal: lt,
                lambda_spectral: ls,
                ..base.clone()
            };
            let model = Model::<f32>::new(cfg.clone(), model_seed)?;
            let outcome = train(model, train_set, val_set, train_cfg, |_| Ok(()))?;
            let report = evaluate(&outcome.best, test_set)?;
            let cell = AblationCell {
                lambda_temporal: lt,
                lambda_spectral: ls,
                temporal_tokens: cfg.temporal_tokens(),
                spectral_tokens: cfg.spectral_tokens(),
                spatial_tokens: cfg.spatial_tokens(),
                scan_steps: scan_steps_per_sample(&cfg),
                best_epoch: outcome.best_epoch,
                report,
            };
            on_cell(&cell);
            cells.push(cell);
        }
    }
    Ok(AblationTable {
        ratios: ratios.to_vec(),
        cells,
    })
}
