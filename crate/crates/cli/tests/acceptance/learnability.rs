use std::time::Instant;

use stsm_core::{Model, ModelConfig};
use stsm_data::DatasetSpec;
use stsm_harness::{evaluate, train, LabeledSet, MetricsReport, TrainConfig, TrainEvent};

use crate::{ensure, err};

/// Whole budget for the default model: training plus the test evaluation.
const BUDGET_SECS: f64 = 1800.0;
/// Training share of the budget; the 11000-sample evaluation needs the rest.
const TRAIN_SECS: f64 = 1250.0;

struct Row {
    name: &'static str,
    report: MetricsReport,
    epochs: usize,
    best_epoch: usize,
    train_secs: f64,
    total_secs: f64,
    stop_reason: String,
}

fn run_one(
    name: &'static str,
    cfg: ModelConfig,
    tc: &TrainConfig,
    data: &stsm_data::PatchDataset,
) -> Result<Row, String> {
    let started = Instant::now();
    let train_set = LabeledSet::from_patches(&data.train, &cfg).map_err(err)?;
    let val_set = LabeledSet::from_patches(&data.val, &cfg).map_err(err)?;
    let test_set = LabeledSet::from_patches(&data.test, &cfg).map_err(err)?;
    let model = Model::<f32>::new(cfg, 0).map_err(err)?;
    let outcome = train(model, &train_set, &val_set, tc, |event| {
        if let TrainEvent::Epoch { record, .. } = event {
            println!(
                "  {name} epoch {}: loss {:.4} train acc {:.4} val OA {:.4} ({:.0}s)",
                record.epoch,
                record.train_loss,
                record.train_accuracy,
                record.val_oa.unwrap_or(f64::NAN),
                record.seconds
            );
        }
        Ok(())
    })
    .map_err(err)?;
    let train_secs = started.elapsed().as_secs_f64();
    let report = evaluate(&outcome.best, &test_set).map_err(err)?;
    Ok(Row {
        name,
        report,
        epochs: outcome.curve.len(),
        best_epoch: outcome.best_epoch,
        train_secs,
        total_secs: started.elapsed().as_secs_f64(),
        stop_reason: outcome.stop_reason,
    })
}

/// The default model on the default dataset, then the dense baseline under
/// the same training configuration.
pub fn run() -> Result<String, String> {
    let spec = DatasetSpec::default();
    let (_, data) = spec.generate().map_err(err)?;
    ensure(
        data.train.len() == 1100 && data.test.len() == 11_000,
        || format!("dataset has {} train / {} test", data.train.len(), data.test.len()),
    )?;
    let tc = TrainConfig {
        batch_size: 16,
        epochs: 100,
        learning_rate: 3e-4,
        micro_batch: 16,
        target_val_oa: Some(0.97),
        max_seconds: Some(TRAIN_SECS),
        ..TrainConfig::default()
    };
    let sparse = run_one("sparse", ModelConfig::default(), &tc, &data)?;
    let dense = run_one("dense", ModelConfig::default().dense_baseline(), &tc, &data)?;

    println!("  model   OA      AA      Kappa   epochs  best  train_s  total_s");
    for r in [&sparse, &dense] {
        println!(
            "  {:<7} {:.4}  {:.4}  {:.4}  {:>6}  {:>4}  {:>7.0}  {:>7.0}  ({})",
            r.name,
            r.report.oa,
            r.report.aa,
            r.report.kappa,
            r.epochs,
            r.best_epoch,
            r.train_secs,
            r.total_secs,
            r.stop_reason
        );
    }
    ensure(sparse.total_secs <= BUDGET_SECS, || {
        format!("default model took {:.0}s", sparse.total_secs)
    })?;
    ensure(sparse.report.oa >= 0.9, || format!("default model test OA {:.4}", sparse.report.oa))?;
    ensure(dense.report.oa > 2.0 / 11.0, || format!("dense baseline test OA {:.4}", dense.report.oa))?;
    Ok(format!(
        "sparse OA {:.4} in {:.0}s, dense OA {:.4} in {:.0}s",
        sparse.report.oa, sparse.total_secs, dense.report.oa, dense.total_secs
    ))
}
