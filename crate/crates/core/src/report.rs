//! Structured experiment records and tabular series.

use serde::Serialize;
use std::collections::BTreeMap;

/// Result record of one experiment. Maps are ordered so that serialisation is
/// byte-stable; wall-clock data lives only in [`Timing`], which determinism
/// checks strip.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub map: String,
    pub seed: u64,
    pub config: BTreeMap<String, BTreeMap<String, String>>,
    pub scalars: BTreeMap<String, Option<f64>>,
    pub series: BTreeMap<String, Vec<Option<f64>>>,
    pub flags: BTreeMap<String, bool>,
    pub notes: BTreeMap<String, String>,
    pub unreliable: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Timing {
    pub started: String,
    pub wall_seconds: f64,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl ExperimentReport {
    pub fn new(experiment: &str, map: &str, seed: u64) -> Self {
        ExperimentReport { experiment: experiment.into(), map: map.into(), seed, ..Default::default() }
    }

    /// Records a scalar; non-finite values become `null` with a `nonfinite.<name>` flag.
    pub fn scalar(&mut self, name: &str, value: f64) -> &mut Self {
        if !value.is_finite() {
            self.flags.insert(format!("nonfinite.{name}"), true);
        }
        self.scalars.insert(name.into(), finite(value));
        self
    }

    pub fn opt_scalar(&mut self, name: &str, value: Option<f64>) -> &mut Self {
        match value {
            Some(v) => self.scalar(name, v),
            None => {
                self.scalars.insert(name.into(), None);
                self
            }
        }
    }

    pub fn series(&mut self, name: &str, values: &[f64]) -> &mut Self {
        if values.iter().any(|v| !v.is_finite()) {
            self.flags.insert(format!("nonfinite.{name}"), true);
        }
        self.series.insert(name.into(), values.iter().map(|&v| finite(v)).collect());
        self
    }

    pub fn flag(&mut self, name: &str, on: bool) -> &mut Self {
        self.flags.insert(name.into(), on);
        self
    }

    pub fn note(&mut self, name: &str, text: impl Into<String>) -> &mut Self {
        self.notes.insert(name.into(), text.into());
        self
    }

    pub fn mark_unreliable(&mut self, reason: impl Into<String>) -> &mut Self {
        let r = reason.into();
        if !self.unreliable.contains(&r) {
            self.unreliable.push(r);
        }
        self
    }

    pub fn is_unreliable(&self) -> bool {
        !self.unreliable.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scalars.get(name).copied().flatten()
    }

    /// Copies every entry of `other` under `prefix.`.
    pub fn absorb(&mut self, prefix: &str, other: &ExperimentReport) {
        for (k, v) in &other.scalars {
            self.scalars.insert(format!("{prefix}.{k}"), *v);
        }
        for (k, v) in &other.series {
            self.series.insert(format!("{prefix}.{k}"), v.clone());
        }
        for (k, v) in &other.flags {
            self.flags.insert(format!("{prefix}.{k}"), *v);
        }
        for (k, v) in &other.notes {
            self.notes.insert(format!("{prefix}.{k}"), v.clone());
        }
        for r in &other.unreliable {
            self.mark_unreliable(format!("{prefix}: {r}"));
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    /// Floats use 17 significant digits so they round-trip exactly.
    pub fn render(&self) -> String {
        match self {
            Cell::Num(x) if x.is_finite() => format!("{x:.16e}"),
            Cell::Num(x) => format!("{x}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table { headers: headers.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonfinite_scalars_become_null() {
        let mut r = ExperimentReport::new("x", "m", 1);
        r.scalar("a", 1.5).scalar("b", f64::NAN);
        assert_eq!(r.get("a"), Some(1.5));
        assert_eq!(r.scalars["b"], None);
        assert!(r.flags["nonfinite.b"]);
        assert!(r.to_json().contains("\"b\": null"));
    }

    #[test]
    fn floats_round_trip() {
        let x = 0.1f64 + 0.2;
        let s = Cell::Num(x).render();
        assert_eq!(s.parse::<f64>().unwrap(), x);
    }
}
