//! Metrics CSV emission with a fixed header. Cells that do not apply to a
//! row stay empty; floats use `.` decimals via Rust's shortest round-trip
//! formatting, so re-reading a written cell reproduces the value exactly.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use crate::error::{CliError, Result};

pub const HEADER: &str = "scenario,tx_id,rx_id,epsilon_cross,lambda13,ell,seed,mse,top1,\
dl_bytes,ul_bytes,flops,dl_s,ft_s,ul_s,recovery_s";

/// Number of leading cells that identify a sweep cell (through `seed`).
pub const KEY_CELLS: usize = 7;

#[derive(Debug, Clone, Default)]
pub struct MetricsRow {
    pub scenario: String,
    pub tx_id: String,
    pub rx_id: String,
    pub epsilon_cross: Option<f64>,
    pub lambda13: Option<f64>,
    pub ell: Option<u64>,
    pub seed: Option<u64>,
    pub mse: Option<f64>,
    pub top1: Option<f64>,
    pub dl_bytes: Option<u64>,
    pub ul_bytes: Option<u64>,
    pub flops: Option<f64>,
    pub dl_s: Option<f64>,
    pub ft_s: Option<f64>,
    pub ul_s: Option<f64>,
    pub recovery_s: Option<f64>,
}

fn opt_f(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_u(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn cells(&self) -> [String; 16] {
        [
            self.scenario.clone(),
            self.tx_id.clone(),
            self.rx_id.clone(),
            opt_f(self.epsilon_cross),
            opt_f(self.lambda13),
            opt_u(self.ell),
            opt_u(self.seed),
            opt_f(self.mse),
            opt_f(self.top1),
            opt_u(self.dl_bytes),
            opt_u(self.ul_bytes),
            opt_f(self.flops),
            opt_f(self.dl_s),
            opt_f(self.ft_s),
            opt_f(self.ul_s),
            opt_f(self.recovery_s),
        ]
    }

    pub fn to_line(&self) -> String {
        self.cells().join(",")
    }

    /// Identity of the cell this row answers for, as it appears on disk.
    pub fn key(&self) -> String {
        self.cells()[..KEY_CELLS].join(",")
    }
}

/// Write header + rows, replacing any existing file.
pub fn write_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut text = String::from(HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row.to_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path.display(), e))
}

/// Create the file with a header if absent; otherwise verify the header.
pub fn ensure_header(path: &Path) -> Result<()> {
    if !path.exists() {
        return std::fs::write(path, format!("{HEADER}\n"))
            .map_err(|e| CliError::io(path.display(), e));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    match text.lines().next() {
        Some(first) if first == HEADER => Ok(()),
        Some(first) => Err(CliError::data(format!(
            "{}: header `{first}` does not match the fixed schema",
            path.display()
        ))),
        None => std::fs::write(path, format!("{HEADER}\n"))
            .map_err(|e| CliError::io(path.display(), e)),
    }
}

pub fn append_row(path: &Path, row: &MetricsRow) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path.display(), e))?;
    writeln!(f, "{}", row.to_line()).map_err(|e| CliError::io(path.display(), e))
}

/// Keys (first `KEY_CELLS` cells) of data rows already on disk.
pub fn existing_keys(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    let mut keys = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != HEADER.split(',').count() {
            return Err(CliError::data(format!(
                "{} line {}: {} cells, schema has {}",
                path.display(),
                i + 1,
                cells.len(),
                HEADER.split(',').count()
            )));
        }
        keys.insert(cells[..KEY_CELLS].join(","));
    }
    Ok(keys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("semcom-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sample_row() -> MetricsRow {
        MetricsRow {
            scenario: "s".into(),
            tx_id: "trx1".into(),
            rx_id: "trx2".into(),
            epsilon_cross: Some(1e-5),
            lambda13: Some(0.25),
            ell: Some(3),
            seed: Some(7),
            mse: Some(0.125),
            top1: None,
            dl_bytes: Some(53444),
            ul_bytes: Some(1024),
            flops: Some(2.5e9),
            dl_s: Some(0.213776),
            ft_s: Some(0.0000833),
            ul_s: Some(0.004096),
            recovery_s: Some(0.2179553),
        }
    }

    #[test]
    fn header_has_sixteen_columns_in_fixed_order() {
        assert_eq!(
            HEADER,
            "scenario,tx_id,rx_id,epsilon_cross,lambda13,ell,seed,mse,top1,\
             dl_bytes,ul_bytes,flops,dl_s,ft_s,ul_s,recovery_s"
        );
        assert_eq!(HEADER.split(',').count(), 16);
    }

    #[test]
    fn empty_cells_for_absent_values() {
        let row = MetricsRow {
            scenario: "s".into(),
            tx_id: "a".into(),
            rx_id: "b".into(),
            mse: Some(0.5),
            ..Default::default()
        };
        assert_eq!(row.to_line(), "s,a,b,,,,,0.5,,,,,,,,");
    }

    #[test]
    fn floats_round_trip_through_cells() {
        let row = sample_row();
        let line = row.to_line();
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[3].parse::<f64>().unwrap(), 1e-5);
        assert_eq!(cells[13].parse::<f64>().unwrap(), 0.0000833);
        assert_eq!(cells[15].parse::<f64>().unwrap(), 0.2179553);
    }

    #[test]
    fn append_then_read_keys_round_trips() {
        let p = tmp("keys.csv");
        let _ = std::fs::remove_file(&p);
        ensure_header(&p).unwrap();
        let row = sample_row();
        append_row(&p, &row).unwrap();
        let keys = existing_keys(&p).unwrap();
        assert!(keys.contains(&row.key()), "{keys:?} vs {}", row.key());
        // Idempotent on an existing file.
        ensure_header(&p).unwrap();
        assert_eq!(existing_keys(&p).unwrap().len(), 1);
    }

    #[test]
    fn foreign_header_is_rejected() {
        let p = tmp("foreign.csv");
        std::fs::write(&p, "a,b,c\n1,2,3\n").unwrap();
        assert!(ensure_header(&p).is_err());
    }
}
