//! MAE reports and plain-text / CSV tables.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use soilx_core::soil_forward::{Component, SoilSample};
use soilx_core::{Error, Result};

/// Per-component mean absolute error, in each component's reporting unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    /// Canonical order [M, N, P, K, C, Al].
    pub mae: [f64; 6],
    pub count: usize,
    /// Seeds, noise levels and mode flags that produced the report.
    pub fingerprint: String,
}

impl MaeReport {
    pub fn get(&self, c: Component) -> f64 {
        self.mae[c.index()]
    }

    /// Unweighted mean over the six components.
    pub fn average(&self) -> f64 {
        self.mae.iter().sum::<f64>() / 6.0
    }

    /// Mean over a subset of components.
    pub fn average_of(&self, components: &[Component]) -> f64 {
        components.iter().map(|c| self.get(*c)).sum::<f64>() / components.len() as f64
    }

    /// Component-wise ratio `self / other`.
    pub fn ratio_to(&self, other: &MaeReport) -> [f64; 6] {
        std::array::from_fn(|g| self.mae[g] / other.mae[g])
    }

    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.fingerprint = fingerprint.into();
        self
    }
}

pub fn mae(preds: &[SoilSample], truth: &[SoilSample]) -> Result<MaeReport> {
    if preds.len() != truth.len() {
        return Err(Error::Domain(format!(
            "{} predictions for {} ground-truth samples",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Domain("MAE needs at least one sample".into()));
    }
    let mut sum = [0.0; 6];
    for (p, t) in preds.iter().zip(truth) {
        for (s, (a, b)) in sum.iter_mut().zip(p.to_array().iter().zip(t.to_array())) {
            *s += (a - b).abs();
        }
    }
    let n = preds.len() as f64;
    Ok(MaeReport {
        mae: sum.map(|s| s / n),
        count: preds.len(),
        fingerprint: String::new(),
    })
}

/// Column header for a component with its unit, e.g. `N (‰)`.
pub fn component_header(c: Component) -> String {
    format!("{} ({})", c.name(), c.unit())
}

/// A small table rendered as aligned text and as CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Table {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    /// Header row `label, M (%), N (‰), ...` for per-component tables.
    pub fn per_component(label: &str) -> Self {
        let mut headers = vec![label.to_string()];
        headers.extend(Component::ALL.iter().map(|c| component_header(*c)));
        Table::new(headers)
    }

    pub fn push_report(&mut self, label: &str, r: &MaeReport) {
        let mut row = vec![label.to_string()];
        row.extend(r.mae.iter().map(|v| format!("{v:.4}")));
        self.push(row);
    }

    /// Writes `<stem>.txt` and `<stem>.csv` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::write(dir.join(format!("{stem}.txt")), self.to_string())?;
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|j| {
                self.rows
                    .iter()
                    .map(|r| r[j].chars().count())
                    .chain([self.headers[j].chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |f: &mut fmt::Formatter<'_>, cells: &[String]| -> fmt::Result {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, w))| {
                    let pad = w - c.chars().count();
                    // first column left-aligned, numbers right-aligned
                    if j == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            writeln!(f, "{}", padded.join("  ").trim_end())
        };
        line(f, &self.headers)?;
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        writeln!(f, "{}", rule.join("  "))?;
        for row in &self.rows {
            line(f, row)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        let t = [SoilSample::REFERENCE];
        assert_eq!(mae(&t, &t).unwrap().mae, [0.0; 6]);

        let p = [SoilSample::REFERENCE.with(Component::M, 34.0)];
        let r = mae(&p, &t).unwrap();
        assert_eq!(r.get(Component::M), 4.0);
        assert_eq!(r.mae.iter().filter(|v| **v != 0.0).count(), 1);

        let truth = [SoilSample::REFERENCE; 2];
        let preds = [
            SoilSample::REFERENCE.with(Component::N, 2.0),
            SoilSample::REFERENCE.with(Component::N, 4.0),
        ];
        let r = mae(&preds, &truth).unwrap();
        assert_eq!(r.get(Component::N), 3.0);
        assert_eq!(r.count, 2);
    }

    #[test]
    fn mae_errors() {
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[SoilSample::REFERENCE], &[]).is_err());
    }

    #[test]
    fn table_alignment() {
        let mut t = Table::new(["mode", "value"]);
        t.push(["FULL", "1.5"]);
        t.push(["NO_SEP", "12.25"]);
        let text = t.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "mode    value");
        assert_eq!(lines[1], "------  -----");
        assert_eq!(lines[2], "FULL      1.5");
        assert_eq!(lines[3], "NO_SEP  12.25");
    }

    #[test]
    fn units_in_headers() {
        assert_eq!(component_header(Component::M), "M (%)");
        assert_eq!(component_header(Component::K), "K (‰)");
    }
}
