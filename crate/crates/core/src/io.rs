//! Artifact plumbing: atomic writes, provenance headers and line-delimited JSON.
//!
//! Line-delimited artifacts start with a single `{"provenance": {...}}` line;
//! readers skip it. Comma-separated artifacts carry the same header as a
//! `# provenance: {...}` comment line.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_NAME: &str = "spatialgen";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seeds: BTreeMap<String, u64>,
    pub config_digest: String,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            seeds: BTreeMap::new(),
            config_digest: config_digest(&config),
            config,
        }
    }

    pub fn with_seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }
}

/// Hex SHA-256 of the canonical (key-sorted) JSON form of `config`.
pub fn config_digest(config: &serde_json::Value) -> String {
    // serde_json::Value maps are BTreeMaps without the preserve_order feature
    let canonical = serde_json::to_vec(config).expect("json value serializes");
    hex::encode(Sha256::digest(&canonical))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `path` through a sibling temp file and renames it into place.
/// The temp file is removed when `body` fails.
pub fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidConfig(format!("not a file path: {}", path.display())))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));

    let result = (|| {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut writer = BufWriter::new(file);
        body(&mut writer)?;
        writer.flush().map_err(|e| Error::io(&tmp, e))?;
        writer
            .into_inner()
            .map_err(|e| Error::io(&tmp, e.into_error()))?
            .sync_all()
            .map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[derive(Serialize)]
struct ProvenanceLine<'a> {
    provenance: &'a Provenance,
}

/// Writes a line-delimited JSON artifact with a provenance header line.
pub fn write_jsonl<'a, T, I>(path: &Path, provenance: &Provenance, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    write_atomic(path, |w| {
        write_jsonl_to(w, provenance, records)?;
        Ok(())
    })
}

pub fn write_jsonl_to<'a, T, I>(w: &mut dyn Write, provenance: &Provenance, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let io_err = |e| Error::io("<output>", e);
    serde_json::to_writer(&mut *w, &ProvenanceLine { provenance })?;
    w.write_all(b"\n").map_err(io_err)?;
    for record in records {
        serde_json::to_writer(&mut *w, record)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

/// Writes a pretty-printed JSON document.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| parse_error(path, &e))
}

/// Reads a line-delimited JSON artifact, skipping blank lines and the
/// provenance header. Returns the header when present.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<Provenance>, Vec<T>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut provenance = None;
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 && trimmed.starts_with("{\"provenance\"") {
            #[derive(Deserialize)]
            struct Header {
                provenance: Provenance,
            }
            let header: Header = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                column: e.column(),
                message: e.to_string(),
            })?;
            provenance = Some(header.provenance);
            continue;
        }
        let record = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((provenance, records))
}

/// Writes comma-separated rows with a provenance comment line first.
pub fn write_csv(
    path: &Path,
    provenance: &Provenance,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    write_atomic(path, |w| {
        let io_err = |e| Error::io(path, e);
        writeln!(w, "# provenance: {}", serde_json::to_string(provenance)?).map_err(io_err)?;
        writeln!(w, "{}", header.join(",")).map_err(io_err)?;
        for row in rows {
            let cells: Vec<String> = row.iter().map(|c| csv_escape(c)).collect();
            writeln!(w, "{}", cells.join(",")).map_err(io_err)?;
        }
        Ok(())
    })
}

fn csv_escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

pub(crate) fn parse_error(path: &Path, e: &serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}
