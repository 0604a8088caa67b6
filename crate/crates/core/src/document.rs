//! Versioned JSON envelope for every artifact written to disk.
//!
//! ```json
//! { "format_version": 1, "kind": "ps_report", "config": { ... }, "content": { ... } }
//! ```
//!
//! `config` is the effective configuration that produced the artifact.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const KIND_NOISE_RECORD: &str = "noise_record";
pub const KIND_TRAINED_MODEL: &str = "trained_model";
pub const KIND_PS_REPORT: &str = "ps_report";
pub const KIND_EVAL_REPORT: &str = "eval_report";
pub const KIND_WORKFLOW_CONFIG: &str = "workflow_config";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document<T> {
    pub format_version: u32,
    pub kind: String,
    #[serde(default)]
    pub config: Value,
    pub content: T,
}

impl<T> Document<T> {
    pub fn new(kind: &str, config: Value, content: T) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            config,
            content,
        }
    }
}

impl<T: Serialize> Document<T> {
    pub fn to_text(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text()?)?;
        Ok(())
    }
}

impl<T: DeserializeOwned> Document<T> {
    /// Reads a document and checks its version and kind.
    pub fn read(path: impl AsRef<Path>, kind: &str) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path, kind)
    }

    pub fn parse(text: &str, path: &Path, kind: &str) -> Result<Self> {
        let parse_err = |e: serde_json::Error| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            message: e.to_string(),
        };
        let header: Header = serde_json::from_str(text).map_err(parse_err)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Document(format!(
                "{}: unsupported format_version {} (expected {FORMAT_VERSION})",
                path.display(),
                header.format_version
            )));
        }
        if header.kind != kind {
            return Err(Error::Document(format!(
                "{}: expected a {kind} document, found {}",
                path.display(),
                header.kind
            )));
        }
        serde_json::from_str(text).map_err(parse_err)
    }
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip_and_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        let doc = Document::new(KIND_PS_REPORT, json!({"seed": 3}), vec![1.5, 2.0]);
        doc.write(&path).unwrap();
        assert_eq!(
            Document::<Vec<f64>>::read(&path, KIND_PS_REPORT).unwrap(),
            doc
        );
        assert!(matches!(
            Document::<Vec<f64>>::read(&path, KIND_EVAL_REPORT),
            Err(Error::Document(_))
        ));
    }

    #[test]
    fn version_and_syntax_errors() {
        let p = Path::new("x.json");
        let future = r#"{"format_version": 9, "kind": "ps_report", "content": []}"#;
        assert!(matches!(
            Document::<Vec<f64>>::parse(future, p, KIND_PS_REPORT),
            Err(Error::Document(_))
        ));
        let broken = "{\n\"format_version\": 1,\n oops }";
        match Document::<Vec<f64>>::parse(broken, p, KIND_PS_REPORT) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
