//! Corpus ingestion, validation, and checksummed persistence.
//!
//! A corpus is a JSONL file of [`Material`] records. Ingestion produces an
//! immutable [`CorpusSnapshot`] whose checksum is derived from the material
//! ids and texts in file order, so the same bytes always yield the same
//! checksum. Snapshots persist as the same JSONL plus a sidecar manifest
//! (`<path>.manifest.json`) carrying `{checksum, count, created_at}`; loading
//! recomputes the checksum and rejects corrupted files.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Materials larger than this are rejected at ingest to bound downstream
/// prompt assembly.
pub const MAX_TEXT_BYTES: usize = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: duplicate material id {id:?}")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: material text empty after trimming")]
    EmptyText { line: usize },
    #[error("line {line}: material text exceeds {MAX_TEXT_BYTES} bytes")]
    OversizedText { line: usize },
    #[error("line {line}: published_at is not an ISO-8601 timestamp: {value:?}")]
    BadTimestamp { line: usize, value: String },
    #[error("corpus file contains no records")]
    Empty,
    #[error("snapshot manifest missing or unreadable at {path}")]
    ManifestMissing { path: String },
    #[error("checksum mismatch: manifest {expected}, recomputed {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Document category a material belongs to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialKind {
    #[default]
    News,
    Report,
    Viewpoint,
    Policy,
}

impl fmt::Display for MaterialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MaterialKind::News => "news",
            MaterialKind::Report => "report",
            MaterialKind::Viewpoint => "viewpoint",
            MaterialKind::Policy => "policy",
        };
        f.write_str(s)
    }
}

/// One corpus document. `published_at` and `meta` are optional because the
/// upstream sources are heterogeneous.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Material {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub kind: MaterialKind,
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_at: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

/// Immutable, checksummed view of an ingested corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSnapshot {
    materials: Vec<Material>,
    checksum: String,
    created_at: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    checksum: String,
    count: usize,
    created_at: String,
}

impl CorpusSnapshot {
    /// Build a snapshot from validated materials (ids assumed unique).
    fn new(materials: Vec<Material>, created_at: String) -> Self {
        let checksum = checksum_of(&materials);
        Self {
            materials,
            checksum,
            created_at,
        }
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    pub fn len(&self) -> usize {
        self.materials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.materials.is_empty()
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn created_at(&self) -> &str {
        &self.created_at
    }

    pub fn get(&self, id: &str) -> Option<&Material> {
        self.materials.iter().find(|m| m.id == id)
    }

    /// id -> material lookup table for repeated access.
    pub fn by_id(&self) -> HashMap<&str, &Material> {
        self.materials.iter().map(|m| (m.id.as_str(), m)).collect()
    }
}

/// Content hash over `(id, text)` pairs in order. Field boundaries are
/// delimited with bytes that cannot appear in JSON string content unescaped.
fn checksum_of(materials: &[Material]) -> String {
    let mut hasher = Sha256::new();
    for m in materials {
        hasher.update(m.id.as_bytes());
        hasher.update([0x00]);
        hasher.update(m.text.as_bytes());
        hasher.update([0x1e]);
    }
    hex::encode(hasher.finalize())
}

fn validate(
    material: &Material,
    line: usize,
    seen: &mut HashMap<String, usize>,
) -> Result<(), CorpusError> {
    if material.text.trim().is_empty() {
        return Err(CorpusError::EmptyText { line });
    }
    if material.text.len() > MAX_TEXT_BYTES {
        return Err(CorpusError::OversizedText { line });
    }
    if material.id.trim().is_empty() {
        return Err(CorpusError::MalformedLine {
            line,
            message: "empty id".into(),
        });
    }
    if let Some(ts) = &material.published_at {
        if chrono::DateTime::parse_from_rfc3339(ts).is_err() {
            return Err(CorpusError::BadTimestamp {
                line,
                value: ts.clone(),
            });
        }
    }
    if seen.insert(material.id.clone(), line).is_some() {
        return Err(CorpusError::DuplicateId {
            id: material.id.clone(),
            line,
        });
    }
    Ok(())
}

/// Ingest a JSONL corpus file. Records keep file order; blank lines are
/// skipped. Fails on the first malformed line, duplicate id, oversized or
/// empty text, and on files that yield no records at all.
pub fn ingest(path: impl AsRef<Path>) -> Result<CorpusSnapshot, CorpusError> {
    let reader = BufReader::new(fs::File::open(path.as_ref())?);
    let mut materials = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let raw = line?;
        if raw.trim().is_empty() {
            continue;
        }
        let material: Material =
            serde_json::from_str(&raw).map_err(|e| CorpusError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        validate(&material, line_no, &mut seen)?;
        materials.push(material);
    }
    if materials.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(CorpusSnapshot::new(
        materials,
        chrono::Utc::now().to_rfc3339(),
    ))
}

/// Write the snapshot as JSONL at `path` plus a `<path>.manifest.json`
/// sidecar. `load` of the written pair reproduces the snapshot exactly.
pub fn persist(snapshot: &CorpusSnapshot, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = fs::File::create(path)?;
    for m in &snapshot.materials {
        serde_json::to_writer(&mut out, m).map_err(|e| CorpusError::MalformedLine {
            line: 0,
            message: e.to_string(),
        })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let manifest = Manifest {
        checksum: snapshot.checksum.clone(),
        count: snapshot.materials.len(),
        created_at: snapshot.created_at.clone(),
    };
    fs::write(
        manifest_path(path),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

/// Load a snapshot written by [`persist`], verifying count and checksum
/// against the manifest.
pub fn load(path: impl AsRef<Path>) -> Result<CorpusSnapshot, CorpusError> {
    let path = path.as_ref();
    let manifest_file = manifest_path(path);
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(&manifest_file).map_err(|_| {
            CorpusError::ManifestMissing {
                path: manifest_file.display().to_string(),
            }
        })?)
        .map_err(|_| CorpusError::ManifestMissing {
            path: manifest_file.display().to_string(),
        })?;

    let reader = BufReader::new(fs::File::open(path)?);
    let mut materials = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let raw = line?;
        if raw.trim().is_empty() {
            continue;
        }
        let material: Material =
            serde_json::from_str(&raw).map_err(|e| CorpusError::MalformedLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        materials.push(material);
    }
    let actual = checksum_of(&materials);
    if actual != manifest.checksum || materials.len() != manifest.count {
        return Err(CorpusError::ChecksumMismatch {
            expected: manifest.checksum,
            actual,
        });
    }
    Ok(CorpusSnapshot {
        materials,
        checksum: actual,
        created_at: manifest.created_at,
    })
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Test-support constructor: build a snapshot directly from materials,
/// bypassing file ingestion. Ids must be unique.
pub fn snapshot_from_materials(materials: Vec<Material>) -> CorpusSnapshot {
    CorpusSnapshot::new(materials, chrono::Utc::now().to_rfc3339())
}
