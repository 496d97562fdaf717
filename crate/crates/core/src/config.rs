//! Layered run configuration: built-in defaults, then a TOML file of flat
//! keys, then command-line flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::calibration::CalibrationConfig;
use crate::error::{Error, Result};
use crate::simulation::{Method, SimulationConfig};

/// A key set both in the file and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Override {
    pub key: String,
    pub file_value: Value,
    pub flag_value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved<T> {
    pub config: T,
    pub file: Option<PathBuf>,
    pub overrides: Vec<Override>,
}

fn to_table<T: Serialize>(v: &T) -> Table {
    Table::try_from(v).expect("config serializes to a TOML table")
}

/// Reads a flat TOML table, rejecting unknown keys.
pub fn read_table(path: &Path, known: &[&str]) -> Result<Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    parse_table(&text, &path.display().to_string(), known)
}

/// Parses flat TOML text; `origin` names the source in error messages.
pub fn parse_table(text: &str, origin: &str, known: &[&str]) -> Result<Table> {
    let table: Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{origin}: {e}").trim_end().to_string()))?;
    let mut unknown: Vec<&str> = table.keys().map(String::as_str).filter(|k| !known.contains(k)).collect();
    unknown.sort_unstable();
    if !unknown.is_empty() {
        return Err(Error::Config(format!(
            "unknown keys in {origin}: {} (known: {})",
            unknown.join(", "),
            known.join(", ")
        )));
    }
    Ok(table)
}

fn layer<T: DeserializeOwned>(
    mut merged: Table,
    known: &[&str],
    required: &[&str],
    file: Option<&Path>,
    flags: Table,
    finish: impl FnOnce(&mut Table),
) -> Result<Resolved<T>> {
    let file_table = file.map(|p| read_table(p, known)).transpose()?.unwrap_or_default();
    let mut overrides = Vec::new();
    for (k, v) in &flags {
        debug_assert!(known.contains(&k.as_str()), "flag {k} is not a config key");
        if let Some(fv) = file_table.get(k) {
            if fv != v {
                overrides.push(Override {
                    key: k.clone(),
                    file_value: fv.clone(),
                    flag_value: v.clone(),
                });
            }
        }
    }
    merged.extend(file_table);
    merged.extend(flags);
    let missing: Vec<&str> = required.iter().copied().filter(|k| !merged.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("missing required keys: {}", missing.join(", "))));
    }
    finish(&mut merged);
    let config = Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    Ok(Resolved {
        config,
        file: file.map(Path::to_path_buf),
        overrides,
    })
}

pub const CALIBRATION_KEYS: &[&str] = &[
    "grid_size",
    "h",
    "s0",
    "kernel",
    "phi",
    "rho",
    "p",
    "m_per_dim",
    "k",
    "mvn_tol",
    "mvn_method",
    "seed",
    "dedup_quantum",
];

pub const SIMULATION_KEYS: &[&str] = &[
    "k",
    "grid_size",
    "p",
    "n_replicates",
    "alpha",
    "phi",
    "delta",
    "rho",
    "h",
    "s0",
    "kernel",
    "m_per_dim",
    "seed",
    "methods",
    "mvn_tol",
    "mvn_method",
];

/// Calibration settings; `phi` has no default.
pub fn resolve_calibration(file: Option<&Path>, flags: Table) -> Result<Resolved<CalibrationConfig>> {
    let mut defaults = to_table(&CalibrationConfig::new(0.0));
    defaults.remove("phi");
    let r: Resolved<CalibrationConfig> = layer(defaults, CALIBRATION_KEYS, &["phi"], file, flags, |_| {})?;
    r.config.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(r)
}

/// Calibration settings from TOML text alone.
pub fn calibration_from_toml(text: &str) -> Result<CalibrationConfig> {
    let table = parse_table(text, "calibration config", CALIBRATION_KEYS)?;
    Ok(resolve_calibration(None, table)?.config)
}

/// Simulation settings; the method list defaults according to `p`.
pub fn resolve_simulation(file: Option<&Path>, flags: Table) -> Result<Resolved<SimulationConfig>> {
    let mut defaults = to_table(&SimulationConfig::default());
    defaults.remove("methods");
    let r: Resolved<SimulationConfig> = layer(defaults, SIMULATION_KEYS, &[], file, flags, |t| {
        if !t.contains_key("methods") {
            let p = t.get("p").and_then(Value::as_integer).unwrap_or(2) as usize;
            let methods: Vec<Value> = Method::defaults_for(p).iter().map(|m| Value::from(m.as_str())).collect();
            t.insert("methods".into(), Value::Array(methods));
        }
    })?;
    r.config.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(r)
}
