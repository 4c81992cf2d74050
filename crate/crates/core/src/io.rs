//! Canonical JSON, content hashes and result documents.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::BiasConfig;
use crate::error::{Error, Result};
use crate::metrics::MetricSpec;
use crate::program::Sense;
use crate::solver::{GridResult, SolverOptions, SweepPoint, SweepResult};
use crate::table::ObservedTable;

pub use crate::table::read_table;

pub const SCHEMA_VERSION: u32 = 1;

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_u64() {
                out.push_str(&i.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                out.push_str(&format_float(f));
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push(':');
                write_value(&map[k], out);
            }
            out.push('}');
        }
    }
}

/// 17 significant digits; non-finite values become strings.
pub fn format_float(f: f64) -> String {
    if f.is_nan() {
        "\"NaN\"".into()
    } else if f.is_infinite() {
        if f > 0.0 { "\"Infinity\"" } else { "\"-Infinity\"" }.into()
    } else {
        format!("{f:.16e}")
    }
}

/// Canonical JSON text: sorted keys, no whitespace, fixed float format.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Document(e.to_string()))?;
    let mut out = String::new();
    write_value(&v, &mut out);
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_of<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(canonical_json(value)?.as_bytes()))
}

pub fn config_hash(config: &BiasConfig) -> String {
    hash_of(config).expect("config serializes")
}

pub fn table_hash(table: &ObservedTable) -> String {
    hash_of(table).expect("table serializes")
}

/// Witness points are not serialized; drop them so a document equals its
/// own round trip.
fn without_witness(p: &SweepPoint) -> SweepPoint {
    let mut p = p.clone();
    if let Some(b) = p.bounds.as_mut() {
        b.witness_lo = None;
        b.witness_hi = None;
    }
    p
}

/// Self-contained record of a sweep or grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub engine_version: String,
    pub config: BiasConfig,
    pub config_hash: String,
    #[serde(default)]
    pub second_config: Option<BiasConfig>,
    pub table: ObservedTable,
    pub table_hash: String,
    pub metric: MetricSpec,
    pub sense: Sense,
    pub deltas: Vec<f64>,
    #[serde(default)]
    pub second_deltas: Option<Vec<f64>>,
    /// One entry per delta (single-bias sweeps).
    pub points: Vec<SweepPoint>,
    /// Rows follow `deltas`, columns `second_deltas` (two-bias grids).
    #[serde(default)]
    pub grid: Option<Vec<Vec<SweepPoint>>>,
    pub options: SolverOptions,
    #[serde(default)]
    pub created_at: Option<String>,
    #[serde(default)]
    pub document_hash: String,
}

impl ResultDocument {
    pub fn from_sweep(config: &BiasConfig, table: &ObservedTable, sweep: &SweepResult) -> Self {
        let mut d = ResultDocument {
            schema_version: SCHEMA_VERSION,
            engine_version: crate::ENGINE_VERSION.to_string(),
            config: config.clone(),
            config_hash: config_hash(config),
            second_config: None,
            table: table.clone(),
            table_hash: table_hash(table),
            metric: sweep.metric.clone(),
            sense: sweep.sense,
            deltas: sweep.deltas.clone(),
            second_deltas: None,
            points: sweep.points.iter().map(without_witness).collect(),
            grid: None,
            options: sweep.options.clone(),
            created_at: None,
            document_hash: String::new(),
        };
        d.seal();
        d
    }

    pub fn from_grid(first: &BiasConfig, second: &BiasConfig, table: &ObservedTable, grid: &GridResult) -> Self {
        let mut d = ResultDocument {
            schema_version: SCHEMA_VERSION,
            engine_version: crate::ENGINE_VERSION.to_string(),
            config: first.clone(),
            config_hash: config_hash(first),
            second_config: Some(second.clone()),
            table: table.clone(),
            table_hash: table_hash(table),
            metric: grid.metric.clone(),
            sense: grid.sense,
            deltas: grid.first_deltas.clone(),
            second_deltas: Some(grid.second_deltas.clone()),
            points: Vec::new(),
            grid: Some(grid.cells.iter().map(|r| r.iter().map(without_witness).collect()).collect()),
            options: grid.options.clone(),
            created_at: None,
            document_hash: String::new(),
        };
        d.seal();
        d
    }

    fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.document_hash = String::new();
        hash_of(&c).expect("document serializes")
    }

    /// Recompute `document_hash` after editing fields.
    pub fn seal(&mut self) {
        self.document_hash = self.content_hash();
    }

    pub fn to_json(&self) -> String {
        canonical_json(self).expect("document serializes")
    }

    /// Parse and verify version and hash.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
        let found = v.get("schema_version").and_then(Value::as_u64).ok_or_else(|| Error::Document("missing schema_version".into()))?;
        if found != SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion { expected: SCHEMA_VERSION, found: found as u32 });
        }
        let doc: ResultDocument = from_value(v)?;
        let expected = doc.content_hash();
        if expected != doc.document_hash {
            return Err(Error::HashMismatch { expected, found: doc.document_hash });
        }
        if doc.config_hash != config_hash(&doc.config) {
            return Err(Error::HashMismatch { expected: config_hash(&doc.config), found: doc.config_hash });
        }
        if doc.table_hash != table_hash(&doc.table) {
            return Err(Error::HashMismatch { expected: table_hash(&doc.table), found: doc.table_hash });
        }
        Ok(doc)
    }
}

fn from_value<T: DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Document(e.to_string()))
}

pub fn write_result(doc: &ResultDocument) -> String {
    doc.to_json()
}

pub fn read_result(text: &str) -> Result<ResultDocument> {
    ResultDocument::from_json(text)
}
