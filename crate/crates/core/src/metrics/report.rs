//! Method comparison tables: M1 vs M2 per model, relative improvement per
//! cell and the mean improvement footer.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{format_percent1, mean_improvement, relative_improvement, MetricRow};

/// A relative improvement in percent, or undefined when the baseline is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Delta {
    Value(f64),
    Undefined,
}

impl Delta {
    pub fn value(self) -> Option<f64> {
        match self {
            Delta::Value(v) => Some(v),
            Delta::Undefined => None,
        }
    }

    pub fn render(self) -> String {
        match self {
            Delta::Value(v) => format!("{}%", format_percent1(v)),
            Delta::Undefined => "n/a".to_string(),
        }
    }
}

impl Serialize for Delta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.value().serialize(s)
    }
}

pub type MethodMetrics = MetricRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub model: String,
    pub m1: MethodMetrics,
    pub m2: MethodMetrics,
}

#[derive(Debug, Clone, Serialize)]
struct DeltaRow {
    hit: BTreeMap<usize, Delta>,
    macro_f1: BTreeMap<usize, Delta>,
}

/// Input and rendering of an M1 (generation+mapping) vs M2 (likelihood
/// ranking) comparison across one or more models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub ks: Vec<usize>,
    #[serde(default = "default_m1")]
    pub m1_name: String,
    #[serde(default = "default_m2")]
    pub m2_name: String,
    pub models: Vec<ModelComparison>,
}

fn default_m1() -> String {
    "GenMap".into()
}

fn default_m2() -> String {
    "LL-Rank".into()
}

impl ComparisonTable {
    pub fn new(ks: Vec<usize>, models: Vec<ModelComparison>) -> Self {
        Self {
            ks,
            m1_name: default_m1(),
            m2_name: default_m2(),
            models,
        }
    }

    fn cell(map: &BTreeMap<usize, f64>, k: usize) -> f64 {
        map.get(&k).copied().unwrap_or(f64::NAN)
    }

    pub fn hit_delta(&self, model: usize, k: usize) -> Delta {
        let m = &self.models[model];
        relative_improvement(Self::cell(&m.m1.hit, k), Self::cell(&m.m2.hit, k))
    }

    pub fn macro_f1_delta(&self, model: usize, k: usize) -> Delta {
        let m = &self.models[model];
        relative_improvement(Self::cell(&m.m1.macro_f1, k), Self::cell(&m.m2.macro_f1, k))
    }

    fn mean_of(&self, f: impl Fn(usize) -> Delta) -> Delta {
        let values: Vec<f64> = (0..self.models.len())
            .filter_map(|i| f(i).value())
            .collect();
        mean_improvement(&values).map_or(Delta::Undefined, Delta::Value)
    }

    /// Mean Hit@k improvement across models; undefined cells are skipped.
    pub fn mean_hit_delta(&self, k: usize) -> Delta {
        self.mean_of(|i| self.hit_delta(i, k))
    }

    pub fn mean_macro_f1_delta(&self, k: usize) -> Delta {
        self.mean_of(|i| self.macro_f1_delta(i, k))
    }

    fn delta_row(&self, f_hit: impl Fn(usize) -> Delta, f_f1: impl Fn(usize) -> Delta) -> DeltaRow {
        DeltaRow {
            hit: self.ks.iter().map(|&k| (k, f_hit(k))).collect(),
            macro_f1: self.ks.iter().map(|&k| (k, f_f1(k))).collect(),
        }
    }

    /// JSON document with inputs, per-model deltas and the mean row.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct ModelOut<'a> {
            model: &'a str,
            m1: &'a MethodMetrics,
            m2: &'a MethodMetrics,
            delta: DeltaRow,
        }
        #[derive(Serialize)]
        struct Out<'a> {
            ks: &'a [usize],
            m1_name: &'a str,
            m2_name: &'a str,
            models: Vec<ModelOut<'a>>,
            mean_delta: DeltaRow,
        }
        let models = self
            .models
            .iter()
            .enumerate()
            .map(|(i, m)| ModelOut {
                model: &m.model,
                m1: &m.m1,
                m2: &m.m2,
                delta: self.delta_row(|k| self.hit_delta(i, k), |k| self.macro_f1_delta(i, k)),
            })
            .collect();
        serde_json::to_value(Out {
            ks: &self.ks,
            m1_name: &self.m1_name,
            m2_name: &self.m2_name,
            models,
            mean_delta: self.delta_row(|k| self.mean_hit_delta(k), |k| self.mean_macro_f1_delta(k)),
        })
        .expect("comparison serializes")
    }

    /// Aligned plain-text table: M1, M2 and Δ rows per model, mean Δ footer.
    pub fn render_text(&self) -> String {
        let mut header = vec!["Model".to_string(), "Scoring".to_string()];
        for k in &self.ks {
            header.push(format!("Hit@{k}"));
            header.push(format!("Macro-F1@{k}"));
        }
        let mut rows: Vec<Vec<String>> = vec![header];
        let fmt2 = |v: f64| {
            if v.is_nan() {
                "-".to_string()
            } else {
                format!("{v:.2}")
            }
        };
        for (i, m) in self.models.iter().enumerate() {
            for (label, metrics) in [
                (format!("M1: {}", self.m1_name), &m.m1),
                (format!("M2: {}", self.m2_name), &m.m2),
            ] {
                let mut row = vec![
                    if label.starts_with("M1") {
                        m.model.clone()
                    } else {
                        String::new()
                    },
                    label,
                ];
                for &k in &self.ks {
                    row.push(fmt2(Self::cell(&metrics.hit, k)));
                    row.push(fmt2(Self::cell(&metrics.macro_f1, k)));
                }
                rows.push(row);
            }
            let mut row = vec![String::new(), "Δ".to_string()];
            for &k in &self.ks {
                row.push(self.hit_delta(i, k).render());
                row.push(self.macro_f1_delta(i, k).render());
            }
            rows.push(row);
        }
        let mut footer = vec!["mean Δ".to_string(), String::new()];
        for &k in &self.ks {
            footer.push(self.mean_hit_delta(k).render());
            footer.push(self.mean_macro_f1_delta(k).render());
        }
        rows.push(footer);

        let ncols = rows[0].len();
        let widths: Vec<usize> = (0..ncols)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * (ncols - 1));
        let mut out = String::new();
        for (ri, row) in rows.iter().enumerate() {
            let is_block_start = ri > 0 && (ri - 1) % 3 == 0;
            if ri == 1 || is_block_start || ri == rows.len() - 1 {
                let _ = writeln!(out, "{rule}");
            }
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    let pad = widths[c] - s.chars().count();
                    if c < 2 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}
