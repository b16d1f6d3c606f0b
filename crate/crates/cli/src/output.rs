//! Atomic persistence of command output.

use std::io::{BufWriter, Write};
use std::path::Path;

use lfgw_core::sim::{write_csv, write_jsonl};
use lfgw_core::{Error, Result};
use serde_json::Value;

use crate::args::Format;
use crate::commands::Report;

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn write_body<W: Write>(report: &Report, format: Format, mut w: W) -> Result<()> {
    if let Some(records) = &report.records {
        return match format {
            Format::Jsonl => write_jsonl(records, w),
            Format::Csv => write_csv(records, w),
        };
    }
    if let Some(table) = &report.table {
        match format {
            Format::Jsonl => {
                for row in &table.rows {
                    let obj: serde_json::Map<String, Value> = table
                        .header
                        .iter()
                        .map(|h| h.to_string())
                        .zip(row.iter().cloned())
                        .collect();
                    serde_json::to_writer(&mut w, &obj)?;
                    w.write_all(b"\n")?;
                }
            }
            Format::Csv => {
                writeln!(w, "{}", table.header.join(","))?;
                for row in &table.rows {
                    let cells: Vec<String> = row.iter().map(csv_cell).collect();
                    writeln!(w, "{}", cells.join(","))?;
                }
            }
        }
        return Ok(());
    }
    match format {
        Format::Jsonl => {
            serde_json::to_writer(&mut w, &report.summary)?;
            w.write_all(b"\n")?;
        }
        Format::Csv => {
            writeln!(w, "key,value")?;
            if let Value::Object(map) = &report.summary {
                for (k, v) in map {
                    writeln!(w, "{k},{}", csv_cell(v).replace(',', ";"))?;
                }
            }
        }
    }
    Ok(())
}

/// Writes to a temporary file next to `out` and renames it into place.
pub fn persist(report: &Report, format: Format, out: &Path) -> Result<()> {
    let dir = match out.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        write_body(report, format, &mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(out).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
