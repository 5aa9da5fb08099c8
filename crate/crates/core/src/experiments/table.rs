//! Numeric CSV tables: one header row, then rows of doubles written in
//! shortest round-trip form so that reloading is exact.

use std::fs;
use std::path::Path;

use super::{ExperimentError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

// Debug formatting of f64 is the shortest string that parses back to the
// same bits.
fn format_value(v: f64) -> String {
    format!("{v:?}")
}

pub fn to_csv_bytes(table: &Table) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&table.header)?;
    for row in &table.rows {
        if row.len() != table.header.len() {
            return Err(ExperimentError::Invalid(format!(
                "row of {} values under a {}-column header",
                row.len(),
                table.header.len()
            )));
        }
        w.write_record(row.iter().map(|v| format_value(*v)))?;
    }
    w.into_inner()
        .map_err(|e| ExperimentError::Invalid(format!("csv buffer: {e}")))
}

pub fn write_csv(table: &Table, path: &Path) -> Result<()> {
    let bytes = to_csv_bytes(table)?;
    fs::write(path, bytes).map_err(|e| ExperimentError::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| ExperimentError::Invalid(format!("{}: not a number: {f:?}", path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new(&["a", "b b", "c,\"d\""]);
        t.push(vec![0.1, -0.0, 1e-300]);
        t.push(vec![f64::MAX, f64::MIN_POSITIVE, 1.0 / 3.0]);
        t.push(vec![5e-324, 123456789.125, -2.5e17]);
        write_csv(&t, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.header, t.header);
        for (r, s) in t.rows.iter().zip(&back.rows) {
            for (x, y) in r.iter().zip(s) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("a,b b,\"c,\"\"d\"\"\"\n"));
    }
}
