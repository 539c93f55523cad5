//! CSV and JSON output.
//!
//! CSV files start with `# key: value` metadata lines, then a header row; numbers
//! are written as `{:.12e}` so that identical runs give identical bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::classical::Trajectory;
use crate::correspondence::SweepReport;
use crate::error::{Error, Result};
use crate::estimates::SuiteReport;
use crate::model::Model;
use crate::quantum::Observables;

/// A header row plus string-formatted rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn num(x: f64) -> String {
    format!("{x:.12e}")
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&x| num(x)).collect());
    }

    /// CSV text with leading metadata comment lines.
    pub fn to_csv(&self, metadata: &[(&str, String)]) -> Result<String> {
        let mut out = String::new();
        for (k, v) in metadata {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Evolution(format!("CSV encoding failed: {e}"));
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Evolution(format!("CSV encoding failed: {e}")))?;
        out.push_str(&String::from_utf8(bytes).expect("CSV output is UTF-8"));
        Ok(out)
    }

    /// Inverse of [`Table::to_csv`]: metadata pairs and the table.
    pub fn from_csv(text: &str) -> Result<(Vec<(String, String)>, Table)> {
        let mut meta = Vec::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(m) = line.strip_prefix('#') {
                if let Some((k, v)) = m.split_once(':') {
                    meta.push((k.trim().to_string(), v.trim().to_string()));
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let bad = |e: csv::Error| Error::config(format!("malformed CSV: {e}"));
        let header = r.headers().map_err(bad)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(bad))
            .collect::<Result<_>>()?;
        Ok((meta, Table { header, rows }))
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[i].parse().ok()).collect()
    }

    pub fn write(&self, path: &Path, metadata: &[(&str, String)]) -> Result<()> {
        write_text(path, &self.to_csv(metadata)?)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a `metadata` object next to `data`.
pub fn write_json<T: Serialize>(path: &Path, metadata: &[(&str, String)], data: &T) -> Result<()> {
    let meta: serde_json::Map<String, serde_json::Value> = metadata
        .iter()
        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.clone())))
        .collect();
    let doc = serde_json::json!({ "metadata": meta, "data": data });
    let text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Evolution(format!("JSON encoding failed: {e}")))?;
    write_text(path, &(text + "\n"))
}

/// `t, p_1.., q_1.., re_alpha_i, im_alpha_i, H` in the direct picture.
pub fn trajectory_table(model: &Model, traj: &Trajectory) -> Result<Table> {
    let n = model.n_particles();
    let m = model.n_modes();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|j| format!("p_{j}")));
    header.extend((1..=n).map(|j| format!("q_{j}")));
    for i in 0..m {
        header.push(format!("re_alpha_{i}"));
        header.push(format!("im_alpha_{i}"));
    }
    header.push("H".into());
    let mut table = Table::new(header);
    let energies = traj.energies(model)?;
    for (idx, (&t, e)) in traj.times.iter().zip(energies).enumerate() {
        let u = traj.direct_state(model, idx);
        let mut row = vec![t];
        row.extend(&u.p);
        row.extend(&u.q);
        for a in &u.alpha {
            row.push(a.re);
            row.push(a.im);
        }
        row.push(e);
        table.push_numbers(&row);
    }
    Ok(table)
}

/// `t, hbar, <q>, <p>, re/im <a_i>, <N>, <H>, leakage`.
pub fn observables_table(hbar: f64, series: &[(f64, Observables)]) -> Table {
    let modes = series.first().map_or(0, |(_, o)| o.modes.len());
    let mut header: Vec<String> = ["t", "hbar", "q", "p"].map(String::from).to_vec();
    for i in 0..modes {
        header.push(format!("re_a_{i}"));
        header.push(format!("im_a_{i}"));
    }
    header.extend(["number", "energy", "leakage"].map(String::from));
    let mut table = Table::new(header);
    for (t, o) in series {
        let mut row = vec![*t, hbar, o.q, o.p];
        for a in &o.modes {
            row.push(a.re);
            row.push(a.im);
        }
        row.extend([o.number, o.energy, o.leakage]);
        table.push_numbers(&row);
    }
    table
}

pub fn sweep_table(report: &SweepReport) -> Table {
    let mut table = Table::new(
        ["hbar", "t"]
            .map(String::from)
            .into_iter()
            .chain(report.column_names())
            .chain(["leakage".to_string()]),
    );
    for r in &report.rows {
        let mut row = vec![r.hbar, r.t, r.q_error, r.p_error];
        row.extend(&r.mode_errors);
        row.extend([r.char_error, r.interaction_field_error, r.leakage]);
        table.push_numbers(&row);
    }
    table
}

pub fn certificate_table(report: &SuiteReport) -> Table {
    let mut table = Table::new([
        "case",
        "lemma",
        "hbar",
        "samples",
        "tolerance",
        "worst_ratio",
        "passed",
        "trend_flat",
        "constants",
    ]);
    for c in &report.cases {
        let flat = report
            .trends
            .iter()
            .find(|t| t.name == c.name)
            .is_none_or(|t| t.flat);
        table.push(vec![
            c.name.clone(),
            c.lemma.clone(),
            c.hbar.map_or_else(String::new, num),
            c.samples.to_string(),
            num(c.tolerance),
            num(c.worst_ratio),
            c.passed.to_string(),
            flat.to_string(),
            c.constants.clone(),
        ]);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_metadata() {
        let mut t = Table::new(["a", "b, with comma"]);
        t.push_numbers(&[1.0, -2.5e-7]);
        t.push(vec!["x".into(), "y \"quoted\"".into()]);
        let text = t.to_csv(&[("config_hash", "abc".into()), ("seed", "3".into())]).unwrap();
        assert!(text.starts_with("# config_hash: abc\n# seed: 3\n"));
        let (meta, back) = Table::from_csv(&text).unwrap();
        assert_eq!(meta[1], ("seed".to_string(), "3".to_string()));
        assert_eq!(back, t);
    }

    #[test]
    fn numbers_are_fixed_width_scientific() {
        assert_eq!(num(0.1), "1.000000000000e-1");
        assert_eq!(num(-3.0), "-3.000000000000e0");
    }

    #[test]
    fn column_lookup() {
        let mut t = Table::new(["t", "v"]);
        t.push_numbers(&[0.0, 1.5]);
        t.push_numbers(&[1.0, 2.5]);
        assert_eq!(t.column("v").unwrap(), vec![1.5, 2.5]);
        assert!(t.column("w").is_none());
    }
}
