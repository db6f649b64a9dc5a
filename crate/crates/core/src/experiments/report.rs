//! Structured experiment reports and their on-disk formats.
//!
//! `report.json` is canonical and byte-reproducible for a fixed config:
//! maps are ordered, runtime goes to a separate `metadata.json`, and every
//! file embeds the config hash and the conventions version.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::calculus::MixedIntegralTable;
use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub criterion: String,
    pub passed: bool,
    /// Enforced verdicts decide the exit status; informational ones do not.
    pub enforced: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Verdict {
    /// value <= threshold, enforced.
    pub fn le(criterion: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Verdict {
        Verdict {
            criterion: criterion.to_string(),
            passed: value <= threshold,
            enforced: true,
            value,
            threshold,
            detail: detail.into(),
        }
    }

    /// |value| <= threshold, enforced.
    pub fn abs_le(criterion: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Verdict {
        Verdict {
            criterion: criterion.to_string(),
            passed: value.abs() <= threshold,
            enforced: true,
            value,
            threshold,
            detail: detail.into(),
        }
    }

    pub fn flag(criterion: &str, passed: bool, detail: impl Into<String>) -> Verdict {
        Verdict {
            criterion: criterion.to_string(),
            passed,
            enforced: true,
            value: if passed { 1.0 } else { 0.0 },
            threshold: 1.0,
            detail: detail.into(),
        }
    }

    pub fn informational(mut self) -> Verdict {
        self.enforced = false;
        self
    }
}

/// One per-(epsilon, probe) record; metric values keyed by name.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub epsilon: f64,
    pub probe: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
    pub values: BTreeMap<String, f64>,
}

impl Row {
    pub fn new(epsilon: f64, probe: &str) -> Row {
        Row {
            epsilon,
            probe: probe.to_string(),
            failed: None,
            values: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: f64) -> &mut Self {
        self.values.insert(key.to_string(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Fit {
    pub name: String,
    /// Slope of log(value) against log(1/epsilon).
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares fit of log(y) against log(1/eps); requires y > 0 points.
pub fn fit_loglog(name: &str, points: &[(f64, f64)]) -> Option<Fit> {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|(e, y)| *e > 0.0 && *y > 1e-300)
        .map(|(e, y)| ((1.0 / e).ln(), y.ln()))
        .collect();
    if data.len() < 2 {
        return None;
    }
    let n = data.len() as f64;
    let mx = data.iter().map(|p| p.0).sum::<f64>() / n;
    let my = data.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &data {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some(Fit {
        name: name.to_string(),
        slope,
        intercept: my - slope * mx,
        points: data.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub n: usize,
    pub points_per_axis: usize,
    pub spacing: f64,
    pub total_points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub conventions: String,
    pub config_hash: String,
    pub grid: GridSummary,
    pub alpha_top: f64,
    pub gate: Vec<Verdict>,
    pub rows: Vec<Row>,
    pub fits: Vec<Fit>,
    pub verdicts: Vec<Verdict>,
    pub tables: Vec<MixedIntegralTable>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config_hash: &str, grid: GridSummary) -> ExperimentReport {
        ExperimentReport {
            experiment: experiment.to_string(),
            conventions: crate::CONVENTIONS_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            grid,
            alpha_top: f64::NAN,
            gate: Vec::new(),
            rows: Vec::new(),
            fits: Vec::new(),
            verdicts: Vec::new(),
            tables: Vec::new(),
            notes: Vec::new(),
            runtime_seconds: 0.0,
        }
    }

    /// All enforced verdicts (gate included) pass.
    pub fn all_passed(&self) -> bool {
        self.gate
            .iter()
            .chain(self.verdicts.iter())
            .filter(|v| v.enforced)
            .all(|v| v.passed)
    }

    /// Any row carries a solver failure.
    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| r.failed.is_some())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Write report.json, metadata.json, tables/*.csv, and plotdata/*.dat.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json())?;
        #[derive(Serialize)]
        struct Metadata<'a> {
            experiment: &'a str,
            config_hash: &'a str,
            runtime_seconds: f64,
        }
        let meta = Metadata {
            experiment: &self.experiment,
            config_hash: &self.config_hash,
            runtime_seconds: self.runtime_seconds,
        };
        fs::write(
            dir.join("metadata.json"),
            serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n",
        )?;

        let tables_dir = dir.join("tables");
        fs::create_dir_all(&tables_dir)?;
        fs::write(tables_dir.join("rows.csv"), self.rows_csv())?;
        for (i, t) in self.tables.iter().enumerate() {
            let mut csv = format!("# config {}\n", self.config_hash);
            csv.push_str(&t.csv());
            fs::write(tables_dir.join(format!("mixed_integrals_{i:02}.csv")), csv)?;
        }

        let plot_dir = dir.join("plotdata");
        fs::create_dir_all(&plot_dir)?;
        for (probe, key, series) in self.plot_series() {
            let mut out = format!(
                "# {} {} config {} conventions {}\n",
                probe, key, self.config_hash, self.conventions
            );
            for (e, v) in series {
                out.push_str(&format!("{e:.12e} {v:.12e}\n"));
            }
            let fname = format!("{}_{}.dat", sanitize(&probe), sanitize(&key));
            fs::write(plot_dir.join(fname), out)?;
        }
        Ok(())
    }

    fn rows_csv(&self) -> String {
        let mut keys: Vec<String> = Vec::new();
        for r in &self.rows {
            for k in r.values.keys() {
                if !keys.contains(k) {
                    keys.push(k.clone());
                }
            }
        }
        keys.sort();
        let mut out = format!("# config {}\n", self.config_hash);
        out.push_str("epsilon,probe");
        for k in &keys {
            out.push(',');
            out.push_str(k);
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{:.17e},{}", r.epsilon, r.probe));
            for k in &keys {
                out.push(',');
                if let Some(v) = r.values.get(k) {
                    out.push_str(&format!("{v:.17e}"));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Two-column (epsilon, value) series per (probe, metric key).
    fn plot_series(&self) -> Vec<(String, String, Vec<(f64, f64)>)> {
        let mut out: Vec<(String, String, Vec<(f64, f64)>)> = Vec::new();
        for r in &self.rows {
            for (k, v) in &r.values {
                match out
                    .iter_mut()
                    .find(|(p, key, _)| p == &r.probe && key == k)
                {
                    Some((_, _, series)) => series.push((r.epsilon, *v)),
                    None => out.push((r.probe.clone(), k.clone(), vec![(r.epsilon, *v)])),
                }
            }
        }
        out
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_power_law() {
        let pts: Vec<(f64, f64)> = (0..6)
            .map(|k| {
                let e = 0.5 / 2f64.powi(k);
                (e, 3.0 * e.powf(-0.75))
            })
            .collect();
        let fit = fit_loglog("test", &pts).unwrap();
        assert!((fit.slope - 0.75).abs() < 1e-12);
    }

    #[test]
    fn verdict_logic() {
        let v = Verdict::le("x", 1.0, 2.0, "ok");
        assert!(v.passed && v.enforced);
        let v = Verdict::abs_le("x", -3.0, 2.0, "no").informational();
        assert!(!v.passed && !v.enforced);
    }
}
