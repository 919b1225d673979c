//! Variant ablations and single-key sweeps: train, evaluate, tabulate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_protocol, EvalProtocol};
use crate::nets::Variant;
use crate::syndata::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Variant label, or `key=value` for sweeps.
    pub label: String,
    pub variant: Variant,
    pub seed: u64,
    pub rank1: f64,
    pub rank10: f64,
    pub rank20: f64,
    pub map: f64,
    pub iccs_gap: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub runs: usize,
    pub rank1: f64,
    pub rank10: f64,
    pub rank20: f64,
    pub map: f64,
}

impl AblationTable {
    /// Means per label, in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut labels: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !labels.contains(&r.label.as_str()) {
                labels.push(&r.label);
            }
        }
        labels
            .into_iter()
            .map(|label| {
                let rows: Vec<_> = self.rows.iter().filter(|r| r.label == label).collect();
                let n = rows.len() as f64;
                let mean = |f: fn(&AblationRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
                SummaryRow {
                    label: label.to_string(),
                    runs: rows.len(),
                    rank1: mean(|r| r.rank1),
                    rank10: mean(|r| r.rank10),
                    rank20: mean(|r| r.rank20),
                    map: mean(|r| r.map),
                }
            })
            .collect()
    }

    /// Rows for `label` ordered by seed.
    pub fn runs(&self, label: &str) -> Vec<&AblationRow> {
        let mut rows: Vec<_> = self.rows.iter().filter(|r| r.label == label).collect();
        rows.sort_by_key(|r| r.seed);
        rows
    }

    /// One line per run.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Input(format!("csv: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Input(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }

    /// Per-label means in percent.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16} {:>4} {:>8} {:>8} {:>8} {:>8}", "method", "runs", "R1", "R10", "R20", "mAP");
        for r in self.summary() {
            let _ = writeln!(
                s,
                "{:<16} {:>4} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                r.label,
                r.runs,
                100.0 * r.rank1,
                100.0 * r.rank10,
                100.0 * r.rank20,
                100.0 * r.map
            );
        }
        s
    }
}

fn run_one(config: &TrainConfig, label: String, dataset: &Dataset, protocol: &EvalProtocol) -> Result<AblationRow> {
    let out = train(config, dataset, None, false, &mut |_| {})?;
    let report = evaluate_protocol(&out.bundle, dataset, protocol)?;
    Ok(AblationRow {
        label,
        variant: config.variant,
        seed: config.seed,
        rank1: report.rank(1),
        rank10: report.rank(10),
        rank20: report.rank(20),
        map: report.map,
        iccs_gap: report.iccs_gap(),
    })
}

/// Train and evaluate every `(variant, seed)`.
pub fn run_ablation(
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    dataset: &Dataset,
    protocol: &EvalProtocol,
    on_run: &mut dyn FnMut(&AblationRow),
) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::config("variants", "an ablation needs at least one variant and one seed"));
    }
    let mut table = AblationTable::default();
    for &variant in variants {
        for &seed in seeds {
            let cfg = TrainConfig {
                variant,
                seed,
                ..base.clone()
            };
            let row = run_one(&cfg, variant.label().to_string(), dataset, protocol)?;
            on_run(&row);
            table.rows.push(row);
        }
    }
    Ok(table)
}

/// Train and evaluate `base` with `key` set to each of `values`.
pub fn sweep(
    base: &TrainConfig,
    key: &str,
    values: &[String],
    seeds: &[u64],
    dataset: &Dataset,
    protocol: &EvalProtocol,
    on_run: &mut dyn FnMut(&AblationRow),
) -> Result<AblationTable> {
    if values.is_empty() || seeds.is_empty() {
        return Err(Error::config(key, "a sweep needs at least one value and one seed"));
    }
    let mut table = AblationTable::default();
    for value in values {
        let mut cfg = base.clone();
        cfg.apply_override(key, value)?;
        cfg.validate()?;
        for &seed in seeds {
            let cfg = TrainConfig { seed, ..cfg.clone() };
            let row = run_one(&cfg, format!("{key}={value}"), dataset, protocol)?;
            on_run(&row);
            table.rows.push(row);
        }
    }
    Ok(table)
}
