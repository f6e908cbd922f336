//! Mini-batch training with Adam and best-validation model selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stsm_core::kv::{fmt_f64, KvDoc};
use stsm_core::{CoreError, Model, ModelParams};

use crate::adam::Adam;
use crate::error::{HarnessError, Result};
use crate::eval::evaluate;
use crate::samples::LabeledSet;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
    /// Emit a checkpoint event every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Samples per forward/backward chunk. Normalization statistics are
    /// computed per chunk.
    pub micro_batch: usize,
    /// Stop once validation OA reaches this value.
    pub target_val_oa: Option<f64>,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Stop when another epoch as long as the last would overrun this many
    /// seconds of training. Wall-clock dependent, so runs using it are not
    /// reproducible.
    pub max_seconds: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            epochs: 100,
            learning_rate: 1e-3,
            seed: 0,
            checkpoint_every: 0,
            micro_batch: 32,
            target_val_oa: None,
            patience: None,
            max_seconds: None,
        }
    }
}

fn parse_opt_f64(v: &str) -> std::result::Result<Option<f64>, String> {
    if v == "none" {
        return Ok(None);
    }
    v.parse().map(Some).map_err(|e| format!("{v:?}: {e}"))
}

fn parse_opt_usize(v: &str) -> std::result::Result<Option<usize>, String> {
    if v == "none" {
        return Ok(None);
    }
    v.parse().map(Some).map_err(|e| format!("{v:?}: {e}"))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 9] = [
        "batch_size",
        "epochs",
        "learning_rate",
        "seed",
        "checkpoint_every",
        "micro_batch",
        "target_val_oa",
        "patience",
        "max_seconds",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.batch_size == 0 || self.epochs == 0 || self.micro_batch == 0 {
            return bad("batch_size, epochs and micro_batch must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if let Some(t) = self.target_val_oa {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("target validation OA {t} outside [0, 1]"));
            }
        }
        if self.patience == Some(0) {
            return bad("patience must be at least 1".into());
        }
        if let Some(t) = self.max_seconds {
            if !(t.is_finite() && t > 0.0) {
                return bad(format!("time budget {t} must be positive"));
            }
        }
        Ok(())
    }

    pub fn write_kv(&self, doc: &mut KvDoc, prefix: &str) {
        doc.set(format!("{prefix}batch_size"), self.batch_size);
        doc.set(format!("{prefix}epochs"), self.epochs);
        doc.set(format!("{prefix}learning_rate"), fmt_f64(self.learning_rate));
        doc.set(format!("{prefix}seed"), self.seed);
        doc.set(format!("{prefix}checkpoint_every"), self.checkpoint_every);
        doc.set(format!("{prefix}micro_batch"), self.micro_batch);
        doc.set(
            format!("{prefix}target_val_oa"),
            self.target_val_oa.map_or_else(|| "none".into(), fmt_f64),
        );
        doc.set(
            format!("{prefix}patience"),
            self.patience.map_or_else(|| "none".into(), |p| p.to_string()),
        );
        doc.set(
            format!("{prefix}max_seconds"),
            self.max_seconds.map_or_else(|| "none".into(), fmt_f64),
        );
    }

    /// Overrides fields present under `prefix`.
    pub fn apply_kv(&mut self, doc: &KvDoc, prefix: &str, require_all: bool) -> Result<()> {
        for key in Self::KEYS {
            let full = format!("{prefix}{key}");
            let Some(v) = doc.get(&full) else {
                if require_all {
                    return Err(HarnessError::Config(format!("missing key {full:?}")));
                }
                continue;
            };
            let err = |e: String| HarnessError::Config(format!("bad value for {full:?}: {e}"));
            let num = |v: &str| v.parse::<usize>().map_err(|e| err(format!("{v:?}: {e}")));
            match key {
                "batch_size" => self.batch_size = num(v)?,
                "epochs" => self.epochs = num(v)?,
                "learning_rate" => self.learning_rate = v.parse().map_err(|e| err(format!("{v:?}: {e}")))?,
                "seed" => self.seed = v.parse().map_err(|e| err(format!("{v:?}: {e}")))?,
                "checkpoint_every" => self.checkpoint_every = num(v)?,
                "micro_batch" => self.micro_batch = num(v)?,
                "target_val_oa" => self.target_val_oa = parse_opt_f64(v).map_err(err)?,
                "patience" => self.patience = parse_opt_usize(v).map_err(err)?,
                "max_seconds" => self.max_seconds = parse_opt_f64(v).map_err(err)?,
                _ => unreachable!("listed key"),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// `None` without a validation set.
    pub val_oa: Option<f64>,
    pub seconds: f64,
}

pub enum TrainEvent<'a> {
    Epoch {
        record: &'a EpochRecord,
        improved: bool,
    },
    Checkpoint {
        epoch: usize,
        model: &'a Model<f32>,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation OA (the last epoch
    /// without a validation set).
    pub best: Model<f32>,
    pub best_epoch: usize,
    pub last: Model<f32>,
    pub curve: Vec<EpochRecord>,
    pub stop_reason: String,
}

/// Loss curve as `epoch,train_loss,train_accuracy,val_oa` lines.
pub fn curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_accuracy,val_oa\n");
    for r in curve {
        let val = r.val_oa.map_or_else(String::new, fmt_f64);
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch,
            fmt_f64(r.train_loss),
            fmt_f64(r.train_accuracy),
            val
        ));
    }
    out
}

fn gather(set: &LabeledSet<'_>, idx: &[usize], inputs: &mut Vec<f32>, labels: &mut Vec<usize>) {
    inputs.clear();
    labels.clear();
    for &i in idx {
        inputs.extend_from_slice(set.sample(i));
        labels.push(set.labels[i]);
    }
}

/// Trains `model` on `train`, scoring `val` after every epoch.
pub fn train(
    mut model: Model<f32>,
    train: &LabeledSet<'_>,
    val: &LabeledSet<'_>,
    cfg: &TrainConfig,
    mut on_event: impl FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(HarnessError::Config("training set is empty".into()));
    }
    let sample_len = model.config.input_len();
    if train.sample_len != sample_len || (!val.is_empty() && val.sample_len != sample_len) {
        return Err(HarnessError::Config(format!(
            "samples hold {} values, the model expects {sample_len}",
            train.sample_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(&model.config, cfg.learning_rate as f32);
    let mut grads = ModelParams::<f32>::zeros(&model.config);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut inputs = Vec::with_capacity(cfg.micro_batch * sample_len);
    let mut labels = Vec::with_capacity(cfg.micro_batch);
    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, Model<f32>)> = None;
    let mut since_best = 0;
    let mut stop_reason = format!("completed {} epochs", cfg.epochs);
    let run_started = Instant::now();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f32;
            for chunk in batch.chunks(cfg.micro_batch) {
                gather(train, chunk, &mut inputs, &mut labels);
                let stats = match model.accumulate_gradients(&inputs, &labels, scale, &mut grads) {
                    Ok(s) => s,
                    Err(CoreError::NonFinite(_)) => {
                        return Err(HarnessError::NonFiniteLoss { epoch, batch: batch_idx })
                    }
                    Err(e) => return Err(e.into()),
                };
                loss_sum += stats.loss_sum;
                correct += stats.correct;
                model.bn.update(&stats.batch_stats);
            }
            if !grads.is_finite() {
                return Err(HarnessError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            opt.step(&mut model.params, &grads);
        }
        let val_oa = if val.is_empty() {
            None
        } else {
            Some(evaluate(&model, val)?.oa)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_oa,
            seconds: started.elapsed().as_secs_f64(),
        };
        let score = val_oa.unwrap_or(f64::INFINITY);
        let improved = best.as_ref().map_or(true, |(b, _, _)| score > *b || val_oa.is_none());
        if improved {
            best = Some((score, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        on_event(TrainEvent::Epoch {
            record: &record,
            improved,
        })?;
        curve.push(record);
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            on_event(TrainEvent::Checkpoint { epoch, model: &model })?;
        }
        if let (Some(target), Some(oa)) = (cfg.target_val_oa, val_oa) {
            if oa >= target {
                stop_reason = format!("validation OA {oa:.4} reached the target {target} at epoch {epoch}");
                break;
            }
        }
        if let Some(p) = cfg.patience {
            if since_best >= p {
                stop_reason = format!("no validation improvement for {p} epochs (stopped at epoch {epoch})");
                break;
            }
        }
        if let Some(budget) = cfg.max_seconds {
            let spent = run_started.elapsed().as_secs_f64();
            if epoch < cfg.epochs && spent + started.elapsed().as_secs_f64() > budget {
                stop_reason = format!("time budget of {budget}s would be exceeded (stopped at epoch {epoch})");
                break;
            }
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        curve,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use stsm_core::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            time_steps: 3,
            channels: 2,
            stem_features: 4,
            height: 5,
            width: 5,
            hidden_dim: 4,
            state_dim: 2,
            conv_width: 2,
            num_classes: 2,
            ..Default::default()
        }
    }

    fn toy(n: usize) -> (Vec<f32>, Vec<usize>) {
        let len = tiny().input_len();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 2;
            x.extend((0..len).map(|k| if c == 0 { 0.2 + 0.01 * (k % 7) as f32 } else { 0.8 - 0.01 * (k % 5) as f32 }));
            y.push(c);
        }
        (x, y)
    }

    #[test]
    fn one_small_step_does_not_raise_the_loss() {
        let (x, y) = toy(2);
        let set = LabeledSet::new(&x, y.clone(), tiny().input_len()).unwrap();
        let model = Model::<f32>::new(tiny(), 1).unwrap();
        let before = model.batch_loss(&x, &y).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            learning_rate: 1e-5,
            ..Default::default()
        };
        let out = train(model, &set, &set, &cfg, |_| Ok(())).unwrap();
        let after = out.last.batch_loss(&x, &y).unwrap();
        assert!(after <= before, "{after} > {before}");
        assert_eq!(out.curve.len(), 1);
    }

    #[test]
    fn fixed_seed_gives_identical_curves() {
        let (x, y) = toy(12);
        let set = LabeledSet::new(&x, y, tiny().input_len()).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            micro_batch: 2,
            learning_rate: 1e-2,
            seed: 5,
            ..Default::default()
        };
        let run = || train(Model::<f32>::new(tiny(), 2).unwrap(), &set, &set, &cfg, |_| Ok(())).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(curve_csv(&a.curve), curve_csv(&b.curve));
        assert_eq!(a.best, b.best);
        assert_eq!(a.last, b.last);
    }

    #[test]
    fn non_finite_loss_names_the_batch() {
        let (x, y) = toy(4);
        let set = LabeledSet::new(&x, y, tiny().input_len()).unwrap();
        let mut model = Model::<f32>::new(tiny(), 3).unwrap();
        model.params.head_b.data[0] = f32::INFINITY;
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..Default::default()
        };
        match train(model, &set, &set, &cfg, |_| Ok(())) {
            Err(HarnessError::NonFiniteLoss { epoch: 1, batch: 0 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn checkpoint_events_follow_the_cadence() {
        let (x, y) = toy(4);
        let set = LabeledSet::new(&x, y, tiny().input_len()).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            checkpoint_every: 2,
            ..Default::default()
        };
        let mut seen = Vec::new();
        let mut epochs = 0;
        train(Model::new(tiny(), 4).unwrap(), &set, &set, &cfg, |e| {
            match e {
                TrainEvent::Checkpoint { epoch, .. } => seen.push(epoch),
                TrainEvent::Epoch { .. } => epochs += 1,
            }
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![2, 4]);
        assert_eq!(epochs, 5);
    }

    #[test]
    fn target_oa_stops_early_and_best_is_tracked() {
        let (x, y) = toy(8);
        let set = LabeledSet::new(&x, y, tiny().input_len()).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 4,
            learning_rate: 1e-2,
            target_val_oa: Some(1.0),
            ..Default::default()
        };
        let out = train(Model::new(tiny(), 6).unwrap(), &set, &set, &cfg, |_| Ok(())).unwrap();
        assert!(out.curve.len() < 50, "{}", out.stop_reason);
        assert_eq!(out.curve.last().unwrap().val_oa, Some(1.0));
        assert_eq!(out.best_epoch, out.curve.len());
        assert_eq!(out.best, out.last);
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = TrainConfig {
            target_val_oa: Some(0.9),
            patience: Some(3),
            max_seconds: Some(12.5),
            ..Default::default()
        };
        let mut doc = KvDoc::new();
        cfg.write_kv(&mut doc, "train.");
        let mut back = TrainConfig::default();
        back.apply_kv(&doc, "train.", true).unwrap();
        assert_eq!(back, cfg);
        let mut bad = KvDoc::new();
        bad.set("train.epochs", "x");
        assert!(TrainConfig::default().apply_kv(&bad, "train.", false).is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { max_seconds: Some(0.0), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn tiny_time_budget_stops_after_one_epoch() {
        let (x, y) = toy(8);
        let set = LabeledSet::new(&x, y, tiny().input_len()).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 4,
            max_seconds: Some(1e-9),
            ..Default::default()
        };
        let out = train(Model::new(tiny(), 6).unwrap(), &set, &set, &cfg, |_| Ok(())).unwrap();
        assert_eq!(out.curve.len(), 1);
        assert!(out.stop_reason.contains("time budget"), "{}", out.stop_reason);
    }
}
