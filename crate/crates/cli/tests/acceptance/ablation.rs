use stsm_core::ModelConfig;
use stsm_data::{DatasetSpec, SplitCounts};
use stsm_harness::{ablation_grid, LabeledSet, TrainConfig, DEFAULT_RATIOS};

use crate::{ensure, err};

/// The full 3x3 grid with the default model on a reduced dataset, so the
/// whole grid runs in minutes; values are reported, not ranked.
pub fn run() -> Result<String, String> {
    let spec = DatasetSpec {
        counts: SplitCounts {
            train: 5,
            val: 5,
            test: 20,
        },
        ..DatasetSpec::default()
    };
    let (_, data) = spec.generate().map_err(err)?;
    let base = ModelConfig::default();
    let train = LabeledSet::from_patches(&data.train, &base).map_err(err)?;
    let val = LabeledSet::from_patches(&data.val, &base).map_err(err)?;
    let test = LabeledSet::from_patches(&data.test, &base).map_err(err)?;
    let cfg = TrainConfig {
        batch_size: 16,
        epochs: 2,
        learning_rate: 3e-4,
        micro_batch: 16,
        ..TrainConfig::default()
    };
    let table = ablation_grid(&base, &DEFAULT_RATIOS, 0, &cfg, &train, &val, &test, |c| {
        println!(
            "  cell temporal {} spectral {}: OA {:.4} AA {:.4} kappa {:.4}",
            c.lambda_temporal, c.lambda_spectral, c.report.oa, c.report.aa, c.report.kappa
        );
    })
    .map_err(err)?;

    ensure(table.cells.len() == 9, || format!("{} cells", table.cells.len()))?;
    let temporal = [18, 11, 6];
    let spectral = [14, 9, 5];
    for (i, _) in DEFAULT_RATIOS.iter().enumerate() {
        for (j, _) in DEFAULT_RATIOS.iter().enumerate() {
            let c = table.cell(i, j);
            ensure(
                c.temporal_tokens == temporal[i] && c.spectral_tokens == spectral[j] && c.spatial_tokens == 50,
                || format!("cell ({i}, {j}) scans {}/{}/{} tokens", c.temporal_tokens, c.spectral_tokens, c.spatial_tokens),
            )?;
            let m = &c.report;
            ensure(
                [m.oa, m.aa, m.kappa].iter().all(|v| v.is_finite()) && m.samples() == test.len() as u64,
                || format!("cell ({i}, {j}) has an incomplete report"),
            )?;
        }
    }
    let text = table.to_delimited();
    let grid: Vec<&str> = text.lines().take(4).collect();
    ensure(
        grid[1..].iter().all(|l| l.split('\t').skip(1).all(|c| c.split('\\').count() == 3)),
        || "grid cells are not OA\\AA\\Kappa".into(),
    )?;
    for line in &grid {
        println!("  {line}");
    }
    Ok(format!("9 cells complete on {} training patches", train.len()))
}
