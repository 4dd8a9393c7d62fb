//! Per-run metric records and the mean ± s.d. summary table.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Attack;
use crate::adapters::AdapterKind;
use crate::error::{LabError, Result};
use crate::seq2seq::RpeMode;

/// One evaluation of one trained model. TER is in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fingerprint: String,
    pub seed: u64,
    pub adapter: AdapterKind,
    pub rpe_mode: RpeMode,
    pub attack: Attack,
    pub split: String,
    pub beam: usize,
    pub n_samples: usize,
    pub bleu: f64,
    pub chrf: f64,
    pub ter: f64,
    pub token_accuracy: f64,
    pub best_epoch: usize,
    pub trainable_fraction: f64,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=100.0).contains(&self.bleu) && (0.0..=100.0).contains(&self.chrf) && self.ter >= 0.0;
        if !ok {
            return Err(LabError::Data(format!(
                "metric out of range: bleu {} chrf {} ter {}",
                self.bleu, self.chrf, self.ter
            )));
        }
        Ok(())
    }
}

pub fn append_jsonl(path: &Path, r: &MetricsReport) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(r)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let r: MetricsReport =
                serde_json::from_str(l).map_err(|e| LabError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            r.validate()?;
            Ok(r)
        })
        .collect()
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub adapter: AdapterKind,
    pub rpe_mode: RpeMode,
    pub attack: Attack,
    pub split: String,
    pub seeds: Vec<u64>,
    pub bleu: (f64, f64),
    pub chrf: (f64, f64),
    pub ter: (f64, f64),
    pub token_accuracy: (f64, f64),
}

/// Row label in the style "RGCN w/o RPE", with any attack appended.
pub fn row_label(adapter: AdapterKind, rpe: RpeMode, attack: Attack) -> String {
    let mut s = format!(
        "{} {}",
        adapter.name().to_uppercase(),
        match rpe {
            RpeMode::On => "w/ RPE",
            RpeMode::Off => "w/o RPE",
            RpeMode::Shuffle => "w/ shuffled RPE",
        }
    );
    if attack == Attack::Graph {
        s.push_str(" (graph attack)");
    }
    s
}

fn rpe_rank(r: RpeMode) -> u8 {
    match r {
        RpeMode::On => 0,
        RpeMode::Off => 1,
        RpeMode::Shuffle => 2,
    }
}

/// Group records by (split, attack, rpe mode, adapter) and average over seeds.
pub fn aggregate(reports: &[MetricsReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, u8, u8, usize), Vec<&MetricsReport>> = BTreeMap::new();
    for r in reports {
        let adapter_rank = AdapterKind::ALL.iter().position(|&k| k == r.adapter).unwrap_or(usize::MAX);
        let key = (r.split.clone(), (r.attack == Attack::Graph) as u8, rpe_rank(r.rpe_mode), adapter_rank);
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_values()
        .map(|mut rs| {
            rs.sort_by_key(|r| r.seed);
            let col = |f: fn(&MetricsReport) -> f64| mean_sd(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let first = rs[0];
            SummaryRow {
                label: row_label(first.adapter, first.rpe_mode, first.attack),
                adapter: first.adapter,
                rpe_mode: first.rpe_mode,
                attack: first.attack,
                split: first.split.clone(),
                seeds: rs.iter().map(|r| r.seed).collect(),
                bleu: col(|r| r.bleu),
                chrf: col(|r| r.chrf),
                ter: col(|r| r.ter),
                token_accuracy: col(|r| r.token_accuracy),
            }
        })
        .collect()
}

/// Plain-text table with one row per configuration.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<34} {:>5} {:>6} {:>15} {:>15} {:>15}\n",
        "model", "split", "seeds", "BLEU", "chrF++", "TER"
    );
    for r in rows {
        let f = |(m, sd): (f64, f64)| format!("{m:.2} ± {sd:.2}");
        s.push_str(&format!(
            "{:<34} {:>5} {:>6} {:>15} {:>15} {:>15}\n",
            r.label,
            r.split,
            r.seeds.len(),
            f(r.bleu),
            f(r.chrf),
            f(r.ter)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: u64, adapter: AdapterKind, rpe: RpeMode, bleu: f64) -> MetricsReport {
        MetricsReport {
            fingerprint: "x".into(),
            seed,
            adapter,
            rpe_mode: rpe,
            attack: Attack::None,
            split: "test".into(),
            beam: 5,
            n_samples: 10,
            bleu,
            chrf: 50.0,
            ter: 40.0,
            token_accuracy: 0.5,
            best_epoch: 1,
            trainable_fraction: 0.1,
        }
    }

    #[test]
    fn mean_sd_values() {
        let (m, sd) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((sd - 1.0).abs() < 1e-12);
        assert_eq!(mean_sd(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn aggregate_groups_and_orders() {
        let rs = vec![
            rec(2, AdapterKind::Rgcn, RpeMode::Off, 30.0),
            rec(1, AdapterKind::Mlp, RpeMode::On, 40.0),
            rec(1, AdapterKind::Rgcn, RpeMode::Off, 20.0),
        ];
        let rows = aggregate(&rs);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].label, "MLP w/ RPE");
        assert_eq!(rows[1].label, "RGCN w/o RPE");
        assert_eq!(rows[1].seeds, vec![1, 2]);
        assert_eq!(rows[1].bleu.0, 25.0);
        assert_eq!(render_table(&rows), render_table(&aggregate(&rs)));
    }
}
