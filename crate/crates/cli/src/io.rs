use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use eaml::dataset::{load_csv, Dataset, Schema};
use eaml::rules::{read_rule_export, rule_from_record, Rule, RuleRecord};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn load_schema(path: &Path) -> Result<Schema> {
    Schema::load(path).with_context(|| format!("loading schema {}", path.display()))
}

pub fn load_data(path: &Path, schema: &Schema, outcome: &str) -> Result<Dataset> {
    load_csv(path, schema, outcome).with_context(|| format!("loading {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Buffered writer, creating parent directories.
pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn read_records(path: &Path) -> Result<Vec<RuleRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_rule_export(BufReader::new(f)).with_context(|| format!("reading rules {}", path.display()))
}

pub fn read_rules(path: &Path, schema: &Schema) -> Result<Vec<Rule>> {
    read_records(path)?
        .iter()
        .map(|r| rule_from_record(r, schema).map_err(anyhow::Error::from))
        .collect::<Result<_>>()
        .with_context(|| format!("rebuilding rules from {}", path.display()))
}

/// `name=path`, or a bare path named by its file stem.
pub fn tagged_path(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        Some(_) => Err(format!("expected NAME=PATH, got `{s}`")),
        None => {
            let path = PathBuf::from(s);
            let name = path.file_stem().and_then(|x| x.to_str()).ok_or_else(|| format!("no file name in `{s}`"))?;
            Ok((name.to_string(), path))
        }
    }
}
