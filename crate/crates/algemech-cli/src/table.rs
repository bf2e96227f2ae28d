//! Column-oriented trajectory tables and their CSV/JSON encodings.

use std::io::Write;

use algemech::{Error, Result};

/// Named columns of equal length; the CSV layout is the column order.
pub struct Table {
    pub columns: Vec<(String, Vec<f64>)>,
}

impl Table {
    pub fn new() -> Self {
        Table { columns: vec![] }
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        if let Some((_, first)) = self.columns.first() {
            assert_eq!(first.len(), values.len(), "ragged table column");
        }
        self.columns.push((name.into(), values));
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |(_, v)| v.len())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    /// CSV with a header row and 17-significant-digit floats (lossless for
    /// f64 round trips).
    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        let names: Vec<&str> = self.columns.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(out, "{}", names.join(","))?;
        for row in 0..self.rows() {
            let mut line = String::new();
            for (idx, (_, values)) in self.columns.iter().enumerate() {
                if idx > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{:.16e}", values[row]));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// JSON mirror of the CSV: the columns as arrays, in order.
    pub fn write_json(&self, out: &mut dyn Write) -> std::io::Result<()> {
        let columns: Vec<serde_json::Value> = self
            .columns
            .iter()
            .map(|(name, values)| {
                serde_json::json!({
                    "name": name,
                    "values": values,
                })
            })
            .collect();
        let doc = serde_json::json!({ "columns": columns });
        writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&doc).expect("finite floats")
        )
    }

    /// Read a CSV produced by [`Table::write_csv`].
    pub fn read_csv(text: &str) -> Result<Table> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::InvariantViolation("empty trajectory file".into()))?;
        let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut columns: Vec<(String, Vec<f64>)> =
            names.into_iter().map(|n| (n, Vec::new())).collect();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != columns.len() {
                return Err(Error::InvariantViolation(format!(
                    "row {} has {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    columns.len()
                )));
            }
            for (col, field) in columns.iter_mut().zip(fields) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::InvariantViolation(format!(
                        "row {}: `{}` is not a number",
                        lineno + 2,
                        field
                    ))
                })?;
                col.1.push(v);
            }
        }
        Ok(Table { columns })
    }
}
