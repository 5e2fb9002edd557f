//! CSV and JSON emission.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use crate::CliError;

/// `v` with 12 significant digits, trailing zeros trimmed; `""` for `None`.
pub fn num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let s = format!("{:.*}", (11 - exp).max(0) as usize, v);
        let s = if s.contains('.') { s.trim_end_matches('0').trim_end_matches('.').to_string() } else { s };
        if s == "-0" { "0".into() } else { s }
    } else {
        let s = format!("{v:.11e}");
        let (mantissa, e) = s.split_once('e').expect("exponent");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{e}")
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

/// Destination of a command's results. Without `--out`, the primary output
/// goes to stdout.
pub struct Sink {
    pub dir: Option<PathBuf>,
}

impl Sink {
    fn write(&self, file: &str, text: &str) -> Result<(), CliError> {
        let dir = self.dir.as_ref().expect("directory sink");
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.clone(), e))?;
        let path = dir.join(file);
        fs::write(&path, text).map_err(|e| CliError::Io(path.clone(), e))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    /// CSV as the primary output, with a JSON report alongside under `--out`.
    pub fn table<T: Serialize>(&self, name: &str, table: &Table, report: &T) -> Result<(), CliError> {
        match &self.dir {
            None => print(&table.render()),
            Some(_) => {
                self.write(&format!("{name}.csv"), &table.render())?;
                self.write(&format!("{name}.json"), &to_json(report)?)
            }
        }
    }

    /// JSON as the only output.
    pub fn json<T: Serialize>(&self, name: &str, report: &T) -> Result<(), CliError> {
        let text = to_json(report)?;
        match &self.dir {
            None => print(&text),
            Some(_) => self.write(&format!("{name}.json"), &text),
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Input(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn print(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).map_err(|e| CliError::Io("<stdout>".into(), e))
}
