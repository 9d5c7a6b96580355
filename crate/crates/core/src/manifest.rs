//! Dataset manifests: which items exist, their labels and where their data lives.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    /// A `LAGP` container of final patch descriptors.
    Patches,
    /// A PNG or PGM image, described by the dense raw-pixel pipeline.
    Image,
    /// A `LAGV` supervector container.
    Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub label: String,
    /// Relative to the manifest root unless absolute.
    pub path: PathBuf,
    /// Inferred from the file extension when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<EntryKind>,
}

impl ManifestEntry {
    pub fn kind(&self) -> EntryKind {
        self.kind.unwrap_or_else(|| {
            match self.path.extension().and_then(|e| e.to_str()) {
                Some(ext) if ext.eq_ignore_ascii_case("lagp") => EntryKind::Patches,
                Some(ext) if ext.eq_ignore_ascii_case("lagv") => EntryKind::Vector,
                _ => EntryKind::Image,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default = "default_root")]
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

fn default_root() -> PathBuf {
    PathBuf::from(".")
}

impl DatasetManifest {
    /// Reads a manifest; a relative root is resolved against the manifest's
    /// own directory. Files are checked for existence.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut m: DatasetManifest = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(vec![format!("manifest {}: {}", e.path(), e.inner())]))?;
        if m.root.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            m.root = base.join(&m.root);
        }
        m.validate()?;
        m.check_files()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.classes.is_empty() {
            problems.push("classes: must not be empty".to_string());
        }
        let mut names = HashSet::new();
        for c in &self.classes {
            if !names.insert(c.as_str()) {
                problems.push(format!("classes: duplicate class {c:?}"));
            }
        }
        let mut ids = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if !ids.insert(e.id.as_str()) {
                problems.push(format!("entries[{i}].id: duplicate id {:?}", e.id));
            }
            if !names.contains(e.label.as_str()) {
                problems.push(format!("entries[{i}].label: unknown class {:?}", e.label));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn check_files(&self) -> Result<()> {
        for e in &self.entries {
            let p = self.resolve(e);
            if !p.is_file() {
                return Err(Error::MissingFile(p));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn label_index(&self, entry: &ManifestEntry) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| *c == entry.label)
            .ok_or_else(|| Error::invalid(format!("unknown class {:?}", entry.label)))
    }

    /// Number of entries per class, in class order.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.classes.len()];
        for e in &self.entries {
            if let Ok(i) = self.label_index(e) {
                sizes[i] += 1;
            }
        }
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, label: &str, path: &str) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            label: label.into(),
            path: path.into(),
            kind: None,
        }
    }

    #[test]
    fn kind_inference() {
        assert_eq!(entry("a", "x", "a.lagp").kind(), EntryKind::Patches);
        assert_eq!(entry("a", "x", "a.png").kind(), EntryKind::Image);
        assert_eq!(entry("a", "x", "a.lagv").kind(), EntryKind::Vector);
    }

    #[test]
    fn duplicate_ids_and_unknown_labels_are_reported() {
        let m = DatasetManifest {
            root: ".".into(),
            classes: vec!["x".into()],
            entries: vec![entry("a", "x", "a.lagp"), entry("a", "y", "b.lagp")],
        };
        match m.validate().unwrap_err() {
            Error::Config(p) => assert_eq!(p.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_exit_code_3() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            root: ".".into(),
            classes: vec!["x".into()],
            entries: vec![entry("a", "x", "nope.lagp")],
        };
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        let err = DatasetManifest::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
