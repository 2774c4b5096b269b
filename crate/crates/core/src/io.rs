//! File formats: trace, decay and rate CSVs with JSON sidecars, model JSON
//! documents, run manifests and atomic writes.
//!
//! All files store SI units (K, T, Hz, s). Every floating-point number in a
//! CSV is written with 17 significant digits (`{:.16e}`), which round-trips
//! any `f64` exactly; JSON uses the shortest representation that round-trips.
//!
//! | file | columns / fields |
//! |---|---|
//! | trace CSV | `freq_hz,signal` |
//! | trace sidecar (`<stem>.json`) | `schema_version, temperature_K, field_T, wait_time_s` |
//! | decay CSV | `t_s,area[,sigma]` |
//! | decay sidecar (`<stem>.json`) | `schema_version, temperature_K, field_T` |
//! | rates CSV | `class,temperature_K,field_T,rate_per_s,sigma_per_s` |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decay::{DecayCurve, DecaySample};
use crate::error::{Error, Result};
use crate::global::{ClassKey, RateDataset, RatePoint};
use crate::lineshape::{SpectralTrace, TraceMeta};
use crate::model::{Condition, RelaxationModel};

pub const SCHEMA_VERSION: u32 = 1;

/// 17-significant-digit scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(path: &Path, row: usize, column: &str, text: &str) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        row,
        message: format!("column {column}: {text:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row,
            message: format!("column {column}: non-finite value"),
        });
    }
    Ok(v)
}

/// Writes `bytes` to a temporary file beside `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `<dir>/<stem>.json` for `<dir>/<stem>.csv`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Serialises `value` as pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn csv_reader(path: &Path, text: &str) -> csv::Reader<std::io::Cursor<Vec<u8>>> {
    let _ = path;
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(std::io::Cursor::new(text.as_bytes().to_vec()))
}

fn header_index(path: &Path, headers: &csv::StringRecord, name: &str, required: bool) -> Result<Option<usize>> {
    let idx = headers.iter().position(|h| h == name);
    if idx.is_none() && required {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            message: format!("missing column {name:?} (found {:?})", headers.iter().collect::<Vec<_>>()),
        });
    }
    Ok(idx)
}

/// Parses all rows into numbers for the requested columns. Rows are reported
/// 1-based counting the header as row 1.
fn read_numeric_csv(path: &Path, text: &str, columns: &[(&str, bool)]) -> Result<Vec<Vec<Option<f64>>>> {
    let mut rdr = csv_reader(path, text);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let idx: Vec<Option<usize>> = columns
        .iter()
        .map(|(name, req)| header_index(path, &headers, name, *req))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let mut vals = Vec::with_capacity(columns.len());
        for ((name, req), j) in columns.iter().zip(&idx) {
            let cell = j.and_then(|j| rec.get(j)).unwrap_or("");
            if cell.is_empty() {
                if *req {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        row,
                        message: format!("column {name}: missing value"),
                    });
                }
                vals.push(None);
            } else {
                vals.push(Some(parse_f64(path, row, name, cell)?));
            }
        }
        rows.push(vals);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub schema_version: u32,
    #[serde(rename = "temperature_K")]
    pub temperature: f64,
    #[serde(rename = "field_T")]
    pub field: f64,
    #[serde(rename = "wait_time_s")]
    pub wait_time: f64,
    /// Frequency shift already applied by recentering; absent means none.
    #[serde(rename = "shift_hz", default, skip_serializing_if = "is_zero")]
    pub shift_hz: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySidecar {
    pub schema_version: u32,
    #[serde(rename = "temperature_K")]
    pub temperature: f64,
    #[serde(rename = "field_T")]
    pub field: f64,
}

fn check_schema(path: &Path, version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: format!("unsupported schema_version {version} (expected {SCHEMA_VERSION})"),
        });
    }
    Ok(())
}

fn read_sidecar<T: for<'de> Deserialize<'de>>(csv: &Path) -> Result<(PathBuf, T)> {
    if let Err(e) = fs::metadata(csv) {
        return Err(Error::io(csv, e));
    }
    let side = sidecar_path(csv);
    if !side.exists() {
        return Err(Error::invalid(format!(
            "{}: missing sidecar {}",
            csv.display(),
            side.display()
        )));
    }
    let text = read_text(&side)?;
    let value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: side.clone(),
        row: e.line(),
        message: e.to_string(),
    })?;
    Ok((side, value))
}

pub fn trace_csv_string(trace: &SpectralTrace) -> String {
    let mut out = String::from("freq_hz,signal\n");
    for (f, s) in trace.freq.iter().zip(&trace.signal) {
        out.push_str(&fmt_f64(*f));
        out.push(',');
        out.push_str(&fmt_f64(*s));
        out.push('\n');
    }
    out
}

/// Writes `path` (CSV) and its sidecar; returns both paths.
pub fn write_trace(path: &Path, trace: &SpectralTrace) -> Result<Vec<PathBuf>> {
    let side = TraceSidecar {
        schema_version: SCHEMA_VERSION,
        temperature: trace.meta.condition.temperature,
        field: trace.meta.condition.field,
        wait_time: trace.meta.wait_time,
        shift_hz: trace.meta.shift_hz,
    };
    write_atomic(path, trace_csv_string(trace).as_bytes())?;
    let sp = sidecar_path(path);
    write_atomic(&sp, &to_json_bytes(&side)?)?;
    Ok(vec![path.to_path_buf(), sp])
}

pub fn read_trace(path: &Path) -> Result<SpectralTrace> {
    let (side_path, side): (_, TraceSidecar) = read_sidecar(path)?;
    check_schema(&side_path, side.schema_version)?;
    let text = read_text(path)?;
    let rows = read_numeric_csv(path, &text, &[("freq_hz", true), ("signal", true)])?;
    let freq: Vec<f64> = rows.iter().map(|r| r[0].unwrap()).collect();
    let signal: Vec<f64> = rows.iter().map(|r| r[1].unwrap()).collect();
    if let Some(i) = freq.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: i + 3,
            message: "frequency axis is not strictly increasing".into(),
        });
    }
    let condition = Condition::new(side.temperature, side.field)?;
    SpectralTrace::new(
        freq,
        signal,
        TraceMeta {
            condition,
            wait_time: side.wait_time,
            shift_hz: side.shift_hz,
        },
    )
    .map_err(|e| match e {
        Error::Invalid(m) => Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: m,
        },
        other => other,
    })
}

pub fn decay_csv_string(curve: &DecayCurve) -> String {
    let with_sigma = curve.samples.iter().any(|s| s.sigma.is_some());
    let mut out = String::from(if with_sigma { "t_s,area,sigma\n" } else { "t_s,area\n" });
    for s in &curve.samples {
        out.push_str(&fmt_f64(s.t));
        out.push(',');
        out.push_str(&fmt_f64(s.area));
        if with_sigma {
            out.push(',');
            if let Some(sig) = s.sigma {
                out.push_str(&fmt_f64(sig));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_decay(path: &Path, curve: &DecayCurve) -> Result<Vec<PathBuf>> {
    let side = DecaySidecar {
        schema_version: SCHEMA_VERSION,
        temperature: curve.condition.temperature,
        field: curve.condition.field,
    };
    write_atomic(path, decay_csv_string(curve).as_bytes())?;
    let sp = sidecar_path(path);
    write_atomic(&sp, &to_json_bytes(&side)?)?;
    Ok(vec![path.to_path_buf(), sp])
}

pub fn read_decay(path: &Path) -> Result<DecayCurve> {
    let (side_path, side): (_, DecaySidecar) = read_sidecar(path)?;
    check_schema(&side_path, side.schema_version)?;
    let text = read_text(path)?;
    let rows = read_numeric_csv(path, &text, &[("t_s", true), ("area", true), ("sigma", false)])?;
    let samples = rows
        .iter()
        .map(|r| DecaySample {
            t: r[0].unwrap(),
            area: r[1].unwrap(),
            sigma: r[2],
        })
        .collect();
    let condition = Condition::new(side.temperature, side.field)?;
    DecayCurve::new(condition, samples).map_err(|e| match e {
        Error::Invalid(m) => Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: m,
        },
        other => other,
    })
}

pub fn rates_csv_string(datasets: &[RateDataset]) -> String {
    let mut out = String::from("class,temperature_K,field_T,rate_per_s,sigma_per_s\n");
    for d in datasets {
        let key = d.key().to_string();
        for p in &d.points {
            out.push_str(&format!(
                "{key},{},{},{},{}\n",
                fmt_f64(p.condition.temperature),
                fmt_f64(p.condition.field),
                fmt_f64(p.rate),
                fmt_f64(p.sigma)
            ));
        }
    }
    out
}

/// Parses a rates CSV; rows are grouped by their class column in order of
/// first appearance.
pub fn parse_rates_csv(path: &Path, text: &str) -> Result<Vec<RateDataset>> {
    let mut rdr = csv_reader(path, text);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    let cols = ["class", "temperature_K", "field_T", "rate_per_s", "sigma_per_s"];
    let idx: Vec<usize> = cols
        .iter()
        .map(|c| header_index(path, &headers, c, true).map(|i| i.unwrap()))
        .collect::<Result<_>>()?;
    let mut out: Vec<RateDataset> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let cell = |k: usize| rec.get(idx[k]).unwrap_or("");
        let key: ClassKey = cell(0).parse().map_err(|e: Error| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let num = |k: usize| parse_f64(path, row, cols[k], cell(k));
        let condition = Condition::new(num(1)?, num(2)?).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let point = RatePoint {
            condition,
            rate: num(3)?,
            sigma: num(4)?,
        };
        match out.iter_mut().find(|d| d.key() == key) {
            Some(d) => d.points.push(point),
            None => out.push(RateDataset {
                regime: key.regime,
                class_id: key.class_id,
                points: vec![point],
            }),
        }
    }
    Ok(out)
}

pub fn read_rates(path: &Path) -> Result<Vec<RateDataset>> {
    parse_rates_csv(path, &read_text(path)?)
}

pub fn write_rates(path: &Path, datasets: &[RateDataset]) -> Result<()> {
    write_atomic(path, rates_csv_string(datasets).as_bytes())
}

/// Versioned model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub models: Vec<RelaxationModel>,
}

impl ModelDocument {
    pub fn new(models: Vec<RelaxationModel>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            models,
        }
    }
}

/// Accepts `{schema_version, models: [...]}`, a single model object (with or
/// without `schema_version`) or a bare array of models.
pub fn parse_models(text: &str) -> Result<Vec<RelaxationModel>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if let Some(v) = value.get("schema_version") {
        let ver = v.as_u64().unwrap_or(0);
        if ver != SCHEMA_VERSION as u64 {
            return Err(Error::invalid(format!("unsupported model schema_version {v}")));
        }
    }
    let models: Vec<RelaxationModel> = if value.get("models").is_some() {
        serde_json::from_value::<ModelDocument>(value)?.models
    } else if value.is_array() {
        serde_json::from_value(value)?
    } else {
        let mut obj = value;
        if let Some(map) = obj.as_object_mut() {
            map.remove("schema_version");
        }
        vec![serde_json::from_value(obj)?]
    };
    for m in &models {
        m.validate()?;
    }
    Ok(models)
}

pub fn read_models(path: &Path) -> Result<Vec<RelaxationModel>> {
    parse_models(&read_text(path)?).map_err(|e| match e {
        Error::Json(j) => Error::Parse {
            path: path.to_path_buf(),
            row: j.line(),
            message: j.to_string(),
        },
        other => other,
    })
}

pub fn write_models(path: &Path, models: &[RelaxationModel]) -> Result<()> {
    write_atomic(path, &to_json_bytes(&ModelDocument::new(models.to_vec()))?)
}

/// Expands directories into their `*.csv` files (sorted by name) and keeps
/// explicit files as given.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            if found.is_empty() {
                warnings.push(format!("{}: no CSV files found", p.display()));
            }
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            ));
        }
    }
    Ok((files, warnings))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ingested<T> {
    pub items: Vec<T>,
    pub warnings: Vec<String>,
}

/// Reads trace files (or directories of them) in parallel and sorts the
/// result by (temperature, field, wait time). Recentering is left to the
/// pipeline so that failures there are recorded per item.
pub fn ingest_traces(inputs: &[PathBuf]) -> Result<Ingested<SpectralTrace>> {
    let (files, warnings) = expand_inputs(inputs)?;
    let mut items = files.par_iter().map(|f| read_trace(f)).collect::<Result<Vec<_>>>()?;
    items.sort_by(|a, b| {
        let ka = (a.meta.condition.temperature, a.meta.condition.field, a.meta.wait_time);
        let kb = (b.meta.condition.temperature, b.meta.condition.field, b.meta.wait_time);
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.total_cmp(&kb.2))
    });
    Ok(Ingested { items, warnings })
}

pub fn ingest_decays(inputs: &[PathBuf]) -> Result<Ingested<DecayCurve>> {
    let (files, warnings) = expand_inputs(inputs)?;
    let mut items = files.par_iter().map(|f| read_decay(f)).collect::<Result<Vec<_>>>()?;
    items.sort_by(|a, b| {
        a.condition
            .temperature
            .total_cmp(&b.condition.temperature)
            .then(a.condition.field.total_cmp(&b.condition.field))
    });
    Ok(Ingested { items, warnings })
}

/// File stem encoding a condition, e.g. `T0.007000K_B0.050000T`.
pub fn condition_stem(c: &Condition) -> String {
    format!("T{:.6}K_B{:.6}T", c.temperature, c.field)
}

/// sha256 of the canonical (key-sorted, compact) JSON form of `config`.
pub fn config_hash(config: &serde_json::Value) -> String {
    // serde_json's default map is ordered by key, so re-serialising a parsed
    // value yields the same bytes regardless of input key order.
    let canonical = serde_json::to_string(config).expect("json value serialises");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub config_hash: String,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, inputs: Vec<PathBuf>, config: &serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            inputs,
            config_hash: config_hash(config),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs: Vec::new(),
        }
    }

    pub fn record(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        for p in paths {
            if !self.outputs.contains(&p) {
                self.outputs.push(p);
            }
        }
    }

    /// Writes the manifest itself, listing its own path among the outputs.
    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.record([path.to_path_buf()]);
        write_atomic(path, &to_json_bytes(self)?)
    }
}
