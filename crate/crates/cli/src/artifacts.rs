//! Digest-stamped JSON and JSON-lines files under one output directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Component, Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

pub const MANIFEST_SCHEMA: &str = "pano_nav_manifest_v1";
pub const EPISODES_SCHEMA: &str = "pano_nav_episodes_v1";
pub const DATA_SCHEMA: &str = "pano_nav_localizer_data_v1";
pub const CHECKPOINT_SCHEMA: &str = "pano_nav_localizer_v1";
pub const LOSS_CURVE_SCHEMA: &str = "pano_nav_loss_curve_v1";
pub const TRAIN_SUMMARY_SCHEMA: &str = "pano_nav_train_summary_v1";
pub const GRADCHECK_SCHEMA: &str = "pano_nav_gradcheck_v1";
pub const RESULTS_SCHEMA: &str = "pano_nav_results_v1";
pub const TRAJECTORY_SCHEMA: &str = "pano_nav_trajectories_v1";
pub const REPORT_SCHEMA: &str = "pano_nav_report_v1";
pub const COMPARISON_SCHEMA: &str = "pano_nav_comparison_v1";

/// The output directory of one configuration. Every write stays inside
/// `root`, and every read is checked against `digest`.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
    pub digest: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl ToString) -> CliError {
    CliError::Format { path: path.to_path_buf(), message: message.to_string() }
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>, digest: impl Into<String>) -> Self {
        Self { root: root.into(), digest: digest.into() }
    }

    /// Resolves a path relative to the root; absolute paths and `..` are
    /// refused.
    pub fn path(&self, rel: &str) -> Result<PathBuf, CliError> {
        let p = Path::new(rel);
        if rel.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_))) {
            return Err(CliError::Validation(format!("refusing to write outside the output directory: {rel:?}")));
        }
        Ok(self.root.join(p))
    }

    fn create(&self, rel: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
        let path = self.path(rel)?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok((path, BufWriter::new(file)))
    }

    fn envelope(&self, schema: &str, value: Value, path: &Path) -> Result<Map<String, Value>, CliError> {
        let Value::Object(mut map) = value else {
            return Err(format_err(path, "artifact body must be a JSON object"));
        };
        map.insert("schema".into(), Value::String(schema.into()));
        map.insert("configDigest".into(), Value::String(self.digest.clone()));
        Ok(map)
    }

    /// Writes `{schema, configDigest, ...body}` as pretty JSON.
    pub fn write_json<T: Serialize>(&self, rel: &str, schema: &str, body: &T) -> Result<PathBuf, CliError> {
        let (path, mut w) = self.create(rel)?;
        let value = serde_json::to_value(body).map_err(|e| format_err(&path, e))?;
        let map = self.envelope(schema, value, &path)?;
        serde_json::to_writer_pretty(&mut w, &map).map_err(|e| format_err(&path, e))?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Writes a header line `{schema, configDigest}` followed by one record
    /// per line.
    pub fn write_jsonl<'a, T: Serialize + 'a>(
        &self,
        rel: &str,
        schema: &str,
        records: impl IntoIterator<Item = &'a T>,
    ) -> Result<PathBuf, CliError> {
        let (path, mut w) = self.create(rel)?;
        let header = self.envelope(schema, Value::Object(Map::new()), &path)?;
        serde_json::to_writer(&mut w, &header).map_err(|e| format_err(&path, e))?;
        w.write_all(b"\n").map_err(io_err(&path))?;
        for r in records {
            serde_json::to_writer(&mut w, r).map_err(|e| format_err(&path, e))?;
            w.write_all(b"\n").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<PathBuf, CliError> {
        let (path, mut w) = self.create(rel)?;
        w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(io_err(&path))?;
        Ok(path)
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str, schema: &str) -> Result<T, CliError> {
        let path = self.path(rel)?;
        let (digest, body) = read_json_any(&path, schema)?;
        self.check_digest(&path, &digest)?;
        Ok(body)
    }

    pub fn read_jsonl<T: DeserializeOwned>(&self, rel: &str, schema: &str) -> Result<Vec<T>, CliError> {
        let path = self.path(rel)?;
        let file = File::open(&path).map_err(io_err(&path))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines.next().ok_or_else(|| format_err(&path, "missing header line"))?.map_err(io_err(&path))?;
        let header: Value = serde_json::from_str(&header).map_err(|e| format_err(&path, e))?;
        let digest = check_schema(&path, &header, schema)?;
        self.check_digest(&path, &digest)?;
        let mut out = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| format_err(&path, format!("line {}: {e}", i + 2)))?);
        }
        Ok(out)
    }

    fn check_digest(&self, path: &Path, found: &str) -> Result<(), CliError> {
        if found != self.digest {
            return Err(CliError::DigestMismatch {
                path: path.to_path_buf(),
                expected: self.digest.clone(),
                found: found.to_string(),
            });
        }
        Ok(())
    }
}

fn check_schema(path: &Path, value: &Value, schema: &str) -> Result<String, CliError> {
    let found = value.get("schema").and_then(Value::as_str);
    if found != Some(schema) {
        return Err(format_err(path, format!("expected schema {schema}, found {found:?}")));
    }
    value
        .get("configDigest")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| format_err(path, "missing configDigest"))
}

/// Reads an enveloped JSON file from anywhere, returning its digest and body.
pub fn read_json_any<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<(String, T), CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| format_err(path, e))?;
    let digest = check_schema(path, &value, schema)?;
    if let Some(m) = value.as_object_mut() {
        m.remove("schema");
        // configDigest stays; bodies that carry it read it back
    }
    let body = serde_json::from_value(value).map_err(|e| format_err(path, e))?;
    Ok((digest, body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Body {
        x: f64,
        name: String,
    }

    #[test]
    fn json_round_trip_and_digest_check() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path(), "abc");
        let b = Body { x: 0.1 + 0.2, name: "n".into() };
        ws.write_json("sub/b.json", "s1", &b).unwrap();
        let back: Body = ws.read_json("sub/b.json", "s1").unwrap();
        assert_eq!(back, b);
        let other = Workspace::new(dir.path(), "zzz");
        assert!(matches!(other.read_json::<Body>("sub/b.json", "s1"), Err(CliError::DigestMismatch { .. })));
        assert!(matches!(ws.read_json::<Body>("sub/b.json", "s2"), Err(CliError::Format { .. })));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path(), "abc");
        let items = vec![Body { x: 1e-300, name: "a".into() }, Body { x: -2.5, name: "b".into() }];
        ws.write_jsonl("l.jsonl", "s", &items).unwrap();
        let back: Vec<Body> = ws.read_jsonl("l.jsonl", "s").unwrap();
        assert_eq!(back, items);
        let text = std::fs::read_to_string(dir.path().join("l.jsonl")).unwrap();
        assert!(text.lines().next().unwrap().contains("\"configDigest\":\"abc\""));
    }

    #[test]
    fn writes_stay_inside_root() {
        let ws = Workspace::new("/tmp/somewhere", "d");
        for bad in ["../x.json", "/etc/x", "", "a/../../b"] {
            assert!(ws.path(bad).is_err(), "{bad}");
        }
        assert_eq!(ws.path("a/b.json").unwrap(), PathBuf::from("/tmp/somewhere/a/b.json"));
    }
}
