use std::fs;
use std::path::{Path, PathBuf};

use stsm_core::checkpoint::{self, Checkpoint};
use stsm_core::kv::{fmt_f64, KvDoc};
use stsm_core::{Model, ModelConfig};
use stsm_data::store::{read_dataset, write_dataset, DatasetManifest, DatasetSpec};
use stsm_data::{roster, PatchDataset, Split};
use stsm_harness::{
    ablation_grid, curve_csv, evaluate, render_map, train, LabeledSet, TrainConfig, TrainEvent, DEFAULT_RATIOS,
};

use crate::args::Command;
use crate::config::{load_config_file, path_or, resolve, seed, RunManifest};
use crate::error::{io_at, CliError, Result};

pub const DEFAULT_DATA_DIR: &str = "stsm-data";

fn class_names() -> Vec<&'static str> {
    roster().iter().map(|c| c.name).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_at(dir))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(io_at(path))
}

fn cfg_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Parses the command line layers and dispatches.
pub fn run(command: Command) -> Result<()> {
    let name = command.name();
    let file = match &command.common().config {
        Some(p) => Some(load_config_file(p, name)?),
        None => None,
    };
    let doc = resolve(name, file, &command.flag_overrides())?;
    match command {
        Command::Generate(_) => generate(doc),
        Command::Train(_) => train_cmd(doc),
        Command::Eval(_) => eval_cmd(doc),
        Command::Ablate(_) => ablate_cmd(doc),
        Command::PredictMap(_) => predict_map(doc),
    }
}

fn dataset_spec(doc: &KvDoc, base: DatasetSpec) -> Result<DatasetSpec> {
    let mut spec = base;
    spec.apply_kv(doc, "data.", false)?;
    if doc.get("seed").is_some() {
        spec.seed = seed(doc)?;
    }
    Ok(spec)
}

fn print_counts(ds: &PatchDataset) {
    let names = class_names();
    println!("{:<20} {:>7} {:>7} {:>7}", "class", "train", "val", "test");
    let counts: Vec<Vec<usize>> = Split::ALL.iter().map(|&s| ds.split(s).class_counts(names.len())).collect();
    for (i, n) in names.iter().enumerate() {
        println!("{n:<20} {:>7} {:>7} {:>7}", counts[0][i], counts[1][i], counts[2][i]);
    }
    println!(
        "{:<20} {:>7} {:>7} {:>7}",
        "total",
        ds.train.len(),
        ds.val.len(),
        ds.test.len()
    );
}

fn generate(doc: KvDoc) -> Result<()> {
    let spec = dataset_spec(&doc, DatasetSpec::default())?;
    spec.validate()?;
    let out = path_or(&doc, "paths.out", DEFAULT_DATA_DIR);
    let (_, ds) = spec.generate()?;
    let manifest = write_dataset(&out, &spec, &ds)?;
    print_counts(&ds);
    let mut resolved = KvDoc::new();
    resolved.set("seed", spec.seed);
    spec.write_kv(&mut resolved, "data.");
    resolved.set("paths.out", out.display());
    let mut run = RunManifest::new("generate", resolved);
    run.artifact("dataset_manifest", &out.join(stsm_data::store::MANIFEST_FILE));
    for (split, e) in &manifest.splits {
        run.artifact(&format!("{}.patches", split.name()), &out.join(&e.file));
        run.artifact(&format!("{}.labels", split.name()), &out.join(&e.labels_file));
        run.run.set(format!("{}.sha256", split.name()), &e.sha256);
    }
    let path = run.write(&out)?;
    println!("dataset: {}", out.display());
    println!("manifest: {}", path.display());
    Ok(())
}

fn load_data(doc: &KvDoc) -> Result<(PathBuf, DatasetManifest, PatchDataset)> {
    let dir = path_or(doc, "paths.data", DEFAULT_DATA_DIR);
    let (manifest, ds) = read_dataset(&dir)?;
    Ok((dir, manifest, ds))
}

/// Model configuration whose geometry defaults to the dataset's.
fn model_config(doc: &KvDoc, data: &DatasetManifest) -> Result<ModelConfig> {
    let mut cfg = ModelConfig {
        time_steps: data.spec.scene.time_steps,
        channels: stsm_data::BANDS.len(),
        height: data.spec.patch,
        width: data.spec.patch,
        num_classes: roster().len(),
        ..Default::default()
    };
    cfg.apply_kv(doc, "model.", false)?;
    cfg.validate()?;
    if (cfg.time_steps, cfg.channels, cfg.height, cfg.width, cfg.num_classes)
        != (data.spec.scene.time_steps, stsm_data::BANDS.len(), data.spec.patch, data.spec.patch, roster().len())
    {
        return Err(CliError::Config(format!(
            "model geometry {}x{} dates x bands, {}x{} patch, {} classes does not match the dataset",
            cfg.time_steps, cfg.channels, cfg.height, cfg.width, cfg.num_classes
        )));
    }
    Ok(cfg)
}

fn train_config(doc: &KvDoc) -> Result<TrainConfig> {
    let mut tc = TrainConfig {
        seed: seed(doc)?,
        ..Default::default()
    };
    tc.apply_kv(doc, "train.", false)?;
    tc.validate()?;
    Ok(tc)
}

fn save_checkpoint(path: &Path, model: &Model<f32>, seed: u64, meta: KvDoc) -> Result<()> {
    let ckpt = Checkpoint {
        model: model.clone(),
        seed,
        meta,
    };
    checkpoint::save(path, &ckpt).map_err(|e| match e {
        stsm_core::CoreError::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

fn split_sha(data: &DatasetManifest, split: Split) -> String {
    data.entry(split).map(|e| e.sha256.clone()).unwrap_or_default()
}

fn train_cmd(doc: KvDoc) -> Result<()> {
    let (data_dir, data, ds) = load_data(&doc)?;
    let cfg = model_config(&doc, &data)?;
    let tc = train_config(&doc)?;
    let model_seed = seed(&doc)?;
    let out = path_or(&doc, "paths.out", "stsm-train");
    create_dir(&out)?;
    let train_set = LabeledSet::from_patches(&ds.train, &cfg)?;
    let val_set = LabeledSet::from_patches(&ds.val, &cfg)?;
    println!(
        "training {} parameters on {} samples, validating on {}",
        cfg.param_count_checked().unwrap_or(0),
        train_set.len(),
        val_set.len()
    );
    let model = Model::<f32>::new(cfg.clone(), model_seed)?;
    let mut checkpoints = Vec::new();
    let outcome = train(model, &train_set, &val_set, &tc, |event| {
        match event {
            TrainEvent::Epoch { record, improved } => {
                let val = record.val_oa.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
                println!(
                    "epoch {:>3}  loss {:.4}  train acc {:.2}  val OA {val}{}  ({:.1}s)",
                    record.epoch,
                    record.train_loss,
                    100.0 * record.train_accuracy,
                    if improved { " *" } else { "" },
                    record.seconds
                );
            }
            TrainEvent::Checkpoint { epoch, model } => {
                let path = out.join(format!("epoch-{epoch}.ckpt"));
                let mut meta = KvDoc::new();
                meta.set("kind", "periodic");
                meta.set("epoch", epoch);
                save_checkpoint(&path, model, model_seed, meta).map_err(|e| {
                    stsm_harness::HarnessError::Io(std::io::Error::other(e.to_string()))
                })?;
                checkpoints.push(path);
            }
        }
        Ok(())
    })?;
    let best_path = out.join("best.ckpt");
    let last_path = out.join("last.ckpt");
    let best_val = outcome.curve[outcome.best_epoch - 1].val_oa;
    let mut meta = KvDoc::new();
    meta.set("kind", "best");
    meta.set("epoch", outcome.best_epoch);
    meta.set("val_oa", best_val.map_or_else(|| "none".into(), fmt_f64));
    meta.set("train_sha256", split_sha(&data, Split::Train));
    save_checkpoint(&best_path, &outcome.best, model_seed, meta)?;
    let mut meta = KvDoc::new();
    meta.set("kind", "last");
    meta.set("epoch", outcome.curve.len());
    meta.set("train_sha256", split_sha(&data, Split::Train));
    save_checkpoint(&last_path, &outcome.last, model_seed, meta)?;
    let curve_path = out.join("loss_curve.csv");
    write_file(&curve_path, curve_csv(&outcome.curve))?;

    let mut resolved = KvDoc::new();
    resolved.set("seed", model_seed);
    resolved.set("paths.data", data_dir.display());
    resolved.set("paths.out", out.display());
    cfg.write_kv(&mut resolved, "model.");
    tc.write_kv(&mut resolved, "train.");
    let mut run = RunManifest::new("train", resolved);
    run.artifact("best_checkpoint", &best_path);
    run.artifact("last_checkpoint", &last_path);
    run.artifact("loss_curve", &curve_path);
    for (i, p) in checkpoints.iter().enumerate() {
        run.artifact(&format!("periodic_checkpoint.{i}"), p);
    }
    run.run.set("best_epoch", outcome.best_epoch);
    run.run.set("best_val_oa", best_val.map_or_else(|| "none".into(), fmt_f64));
    run.run.set("epochs_run", outcome.curve.len());
    run.run.set("stop_reason", &outcome.stop_reason);
    run.run.set("dataset_train_sha256", split_sha(&data, Split::Train));
    let manifest_path = run.write(&out)?;
    println!("{}", outcome.stop_reason);
    println!("best epoch {}", outcome.best_epoch);
    for p in [&best_path, &last_path, &curve_path, &manifest_path] {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn parse_split(doc: &KvDoc) -> Result<Split> {
    match doc.get("eval.split").unwrap_or("test") {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(CliError::Config(format!("unknown split {other:?}; use train, val or test"))),
    }
}

fn load_checkpoint(doc: &KvDoc, default: &str) -> Result<(PathBuf, Checkpoint)> {
    let path = path_or(doc, "paths.checkpoint", default);
    let ckpt = checkpoint::load(&path).map_err(|e| match e {
        stsm_core::CoreError::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })?;
    Ok((path, ckpt))
}

fn eval_cmd(doc: KvDoc) -> Result<()> {
    let split = parse_split(&doc)?;
    let (ckpt_path, ckpt) = load_checkpoint(&doc, "stsm-train/best.ckpt")?;
    let (data_dir, data, ds) = load_data(&doc)?;
    let out = path_or(&doc, "paths.out", "stsm-eval");
    create_dir(&out)?;
    let set = LabeledSet::from_patches(ds.split(split), &ckpt.model.config)?;
    if set.is_empty() {
        return Err(CliError::Data(format!("the {} split is empty", split.name())));
    }
    let report = evaluate(&ckpt.model, &set)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("{} split, {} samples", split.name(), set.len());
    print!("{}", report.table(&class_names()));
    let mut metrics = report.to_kv("");
    metrics.set("split", split.name());
    metrics.set("dataset_sha256", split_sha(&data, split));
    let metrics_path = out.join("metrics.txt");
    write_file(&metrics_path, metrics.to_string())?;

    let mut resolved = KvDoc::new();
    resolved.set("paths.checkpoint", ckpt_path.display());
    resolved.set("paths.data", data_dir.display());
    resolved.set("paths.out", out.display());
    resolved.set("eval.split", split.name());
    let mut run = RunManifest::new("eval", resolved);
    run.artifact("metrics", &metrics_path);
    run.run.set("oa", fmt_f64(report.oa));
    let manifest_path = run.write(&out)?;
    println!("wrote {}", metrics_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn parse_ratios(doc: &KvDoc) -> Result<Vec<f64>> {
    let Some(text) = doc.get("ablate.ratios") else {
        return Ok(DEFAULT_RATIOS.to_vec());
    };
    let ratios: Vec<f64> = text
        .split(',')
        .map(|r| r.trim().parse::<f64>().map_err(|e| cfg_err(format!("ratio {r:?}: {e}"))))
        .collect::<Result<_>>()?;
    if ratios.is_empty() || ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        return Err(CliError::Config(format!("ratios {text:?} must lie in (0, 1]")));
    }
    Ok(ratios)
}

fn ablate_cmd(doc: KvDoc) -> Result<()> {
    let (data_dir, data, ds) = load_data(&doc)?;
    let cfg = model_config(&doc, &data)?;
    let tc = train_config(&doc)?;
    let ratios = parse_ratios(&doc)?;
    let model_seed = seed(&doc)?;
    let out = path_or(&doc, "paths.out", "stsm-ablate");
    create_dir(&out)?;
    let train_set = LabeledSet::from_patches(&ds.train, &cfg)?;
    let val_set = LabeledSet::from_patches(&ds.val, &cfg)?;
    let test_set = LabeledSet::from_patches(&ds.test, &cfg)?;
    if test_set.is_empty() {
        return Err(CliError::Data("the test split is empty".into()));
    }
    let table = ablation_grid(&cfg, &ratios, model_seed, &tc, &train_set, &val_set, &test_set, |c| {
        println!(
            "temporal {} spectral {}: tokens {}/{}/{}, {} scan steps, OA {:.2} AA {:.2} Kappa {:.2}",
            c.lambda_temporal,
            c.lambda_spectral,
            c.temporal_tokens,
            c.spectral_tokens,
            c.spatial_tokens,
            c.scan_steps,
            100.0 * c.report.oa,
            100.0 * c.report.aa,
            100.0 * c.report.kappa
        );
    })?;
    let text = table.to_delimited();
    let table_path = out.join("ablation.tsv");
    write_file(&table_path, &text)?;
    print!("{text}");

    let mut resolved = KvDoc::new();
    resolved.set("seed", model_seed);
    resolved.set("paths.data", data_dir.display());
    resolved.set("paths.out", out.display());
    resolved.set(
        "ablate.ratios",
        ratios.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(","),
    );
    cfg.write_kv(&mut resolved, "model.");
    tc.write_kv(&mut resolved, "train.");
    let mut run = RunManifest::new("ablate", resolved);
    run.artifact("table", &table_path);
    run.run.set("cells", table.cells.len());
    let manifest_path = run.write(&out)?;
    println!("wrote {}", table_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn predict_map(doc: KvDoc) -> Result<()> {
    let (ckpt_path, ckpt) = load_checkpoint(&doc, "stsm-train/best.ckpt")?;
    let base = match doc.get("paths.data") {
        Some(dir) => read_manifest_only(Path::new(dir))?.spec,
        None => DatasetSpec::default(),
    };
    // only the scene matters here; split counts are not drawn
    let spec = dataset_spec(&doc, base)?;
    spec.scene.validate()?;
    let cfg = &ckpt.model.config;
    if spec.scene.time_steps != cfg.time_steps || cfg.channels != stsm_data::BANDS.len() {
        return Err(CliError::Config(format!(
            "scene has {} dates of {} bands, the checkpoint expects {} x {}",
            spec.scene.time_steps,
            stsm_data::BANDS.len(),
            cfg.time_steps,
            cfg.channels
        )));
    }
    let out = path_or(&doc, "paths.out", "stsm-map");
    create_dir(&out)?;
    let scene = spec.generate_scene()?;
    let palette: Vec<[u8; 3]> = roster().iter().map(|c| c.color).collect();
    let (map, report) = render_map(&ckpt.model, &scene, &palette)?;
    let map_path = out.join("map.ppm");
    write_file(&map_path, map.to_ppm())?;
    let metrics_path = out.join("metrics.txt");
    write_file(&metrics_path, report.to_kv("").to_string())?;
    print!("{}", report.table(&class_names()));

    let mut resolved = KvDoc::new();
    resolved.set("seed", spec.seed);
    resolved.set("paths.checkpoint", ckpt_path.display());
    if let Some(d) = doc.get("paths.data") {
        resolved.set("paths.data", d);
    }
    resolved.set("paths.out", out.display());
    spec.write_kv(&mut resolved, "data.");
    let mut run = RunManifest::new("predict-map", resolved);
    run.artifact("map", &map_path);
    run.artifact("metrics", &metrics_path);
    let manifest_path = run.write(&out)?;
    for p in [&map_path, &metrics_path, &manifest_path] {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn read_manifest_only(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(stsm_data::store::MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_at(&path))?;
    Ok(DatasetManifest::parse(&text)?)
}
