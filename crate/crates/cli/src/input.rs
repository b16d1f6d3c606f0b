//! Environment and path ingestion.

use std::fs;
use std::io::BufReader;
use std::path::Path;

use lfgw_core::{EnvPath, EnvSpec, Error, Result};
use serde::Deserialize;

#[derive(Deserialize)]
#[serde(untagged)]
enum TableAtom {
    Triple(f64, f64, f64),
    Named { a: f64, b: f64, weight: f64 },
}

fn read(path: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidSpec(format!("cannot read {path}: {e}")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidSpec(format!("not a number: {s:?}")))
}

/// Parses `const:A,B`, `table:@file`, `@file` or an inline JSON spec.
pub fn parse_env(spec: &str) -> Result<EnvSpec> {
    if let Some(rest) = spec.strip_prefix("const:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if parts.len() != 2 {
            return Err(Error::InvalidSpec(format!("expected const:A,B, got {spec:?}")));
        }
        return EnvSpec::constant(parse_f64(parts[0])?, parse_f64(parts[1])?);
    }
    if let Some(rest) = spec.strip_prefix("table:") {
        let file = rest
            .strip_prefix('@')
            .ok_or_else(|| Error::InvalidSpec("expected table:@file.json".into()))?;
        let atoms: Vec<TableAtom> = serde_json::from_str(&read(file)?)?;
        let atoms: Vec<(f64, f64, f64)> = atoms
            .into_iter()
            .map(|t| match t {
                TableAtom::Triple(a, b, w) => (a, b, w),
                TableAtom::Named { a, b, weight } => (a, b, weight),
            })
            .collect();
        return EnvSpec::table(&atoms);
    }
    let text = match spec.strip_prefix('@') {
        Some(file) => read(file)?,
        None if spec.trim_start().starts_with('{') => spec.to_string(),
        None => return Err(Error::InvalidSpec(format!("unrecognized environment {spec:?}"))),
    };
    Ok(serde_json::from_str(&text)?)
}

pub fn read_path(file: &Path) -> Result<EnvPath> {
    let f = fs::File::open(file)
        .map_err(|e| Error::InvalidSpec(format!("cannot read {}: {e}", file.display())))?;
    EnvPath::read_jsonl(BufReader::new(f))
}
