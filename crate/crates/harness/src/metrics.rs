//! Overall accuracy, average accuracy and Cohen's kappa from a confusion matrix.

use std::fmt::Write as _;

use stsm_core::kv::{fmt_f64, KvDoc};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub num_classes: usize,
    /// Row = true class, column = predicted class.
    pub confusion: Vec<u64>,
    pub oa: f64,
    /// Mean recall over classes that have samples.
    pub aa: f64,
    pub kappa: f64,
    /// Recall per class; `None` when the class has no samples.
    pub per_class: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn from_confusion(num_classes: usize, confusion: Vec<u64>) -> Result<Self> {
        if num_classes == 0 || confusion.len() != num_classes * num_classes {
            return Err(HarnessError::Config(format!(
                "confusion matrix of {} entries is not {num_classes} x {num_classes}",
                confusion.len()
            )));
        }
        let n = num_classes;
        let total: u64 = confusion.iter().sum();
        if total == 0 {
            return Err(HarnessError::Config("no samples to score".into()));
        }
        let rows: Vec<u64> = (0..n).map(|i| confusion[i * n..(i + 1) * n].iter().sum()).collect();
        let cols: Vec<u64> = (0..n).map(|j| (0..n).map(|i| confusion[i * n + j]).sum()).collect();
        let trace: u64 = (0..n).map(|i| confusion[i * n + i]).sum();
        let oa = trace as f64 / total as f64;
        let mut warnings = Vec::new();
        let per_class: Vec<Option<f64>> = (0..n)
            .map(|i| {
                if rows[i] == 0 {
                    warnings.push(format!("class {} has no samples; excluded from AA", i + 1));
                    None
                } else {
                    Some(confusion[i * n + i] as f64 / rows[i] as f64)
                }
            })
            .collect();
        let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
        let aa = defined.iter().sum::<f64>() / defined.len() as f64;
        let chance: u128 = rows.iter().zip(&cols).map(|(&r, &c)| r as u128 * c as u128).sum();
        let pe = chance as f64 / (total as f64 * total as f64);
        let kappa = if chance == total as u128 * total as u128 {
            // a single class on both axes: agreement is total by construction
            warnings.push("chance agreement is 1; kappa set to 1".into());
            1.0
        } else {
            (oa - pe) / (1.0 - pe)
        };
        Ok(Self {
            num_classes,
            confusion,
            oa,
            aa,
            kappa,
            per_class,
            warnings,
        })
    }

    /// Both slices hold 0-based class indices.
    pub fn from_predictions(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(HarnessError::Config(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        let mut confusion = vec![0u64; num_classes * num_classes];
        for (&p, &t) in predicted.iter().zip(truth) {
            if p >= num_classes || t >= num_classes {
                return Err(HarnessError::Config(format!("class index outside 0..{num_classes}")));
            }
            confusion[t * num_classes + p] += 1;
        }
        Self::from_confusion(num_classes, confusion)
    }

    pub fn samples(&self) -> u64 {
        self.confusion.iter().sum()
    }

    /// Chance agreement `sum_c row_c * col_c / total^2`.
    pub fn expected_agreement(&self) -> f64 {
        let n = self.num_classes;
        let total = self.samples() as f64;
        (0..n)
            .map(|c| {
                let row: u64 = self.confusion[c * n..(c + 1) * n].iter().sum();
                let col: u64 = (0..n).map(|i| self.confusion[i * n + c]).sum();
                row as f64 * col as f64
            })
            .sum::<f64>()
            / (total * total)
    }

    /// `oa`, `aa`, `kappa`, per-class accuracies and the confusion rows.
    pub fn to_kv(&self, prefix: &str) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set(format!("{prefix}samples"), self.samples());
        doc.set(format!("{prefix}oa"), fmt_f64(self.oa));
        doc.set(format!("{prefix}aa"), fmt_f64(self.aa));
        doc.set(format!("{prefix}kappa"), fmt_f64(self.kappa));
        let n = self.num_classes;
        for (i, acc) in self.per_class.iter().enumerate() {
            let v = acc.map_or_else(|| "undefined".to_string(), fmt_f64);
            doc.set(format!("{prefix}class.{}.accuracy", i + 1), v);
            let row: Vec<String> = self.confusion[i * n..(i + 1) * n].iter().map(u64::to_string).collect();
            doc.set(format!("{prefix}class.{}.confusion", i + 1), row.join(","));
        }
        doc
    }

    /// Human-readable per-class table followed by OA, AA and Kappa in percent.
    pub fn table(&self, names: &[&str]) -> String {
        let mut out = String::new();
        let width = names.iter().map(|n| n.len()).max().unwrap_or(5).max(5);
        for (i, acc) in self.per_class.iter().enumerate() {
            let name = names.get(i).copied().unwrap_or("?");
            match acc {
                Some(a) => writeln!(out, "{name:<width$}  {:>6.2}", 100.0 * a),
                None => writeln!(out, "{name:<width$}  {:>6}", "n/a"),
            }
            .expect("write to string");
        }
        for (label, v) in [("OA", self.oa), ("AA", self.aa), ("Kappa", self.kappa)] {
            writeln!(out, "{label:<width$}  {:>6.2}", 100.0 * v).expect("write to string");
        }
        out
    }
}
