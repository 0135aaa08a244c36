//! JSON-lines dataset manifest.
//!
//! One record per line with fields `image`, `mask`, `group` and `split`;
//! absent fields are omitted on write. Relative paths resolve against the
//! directory holding the manifest.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
    Fold(usize),
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Test => f.write_str("test"),
            Split::Fold(k) => write!(f, "fold-{k}"),
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => s
                .strip_prefix("fold-")
                .and_then(|k| k.parse().ok())
                .map(Split::Fold)
                .ok_or_else(|| format!("unknown split tag {s:?}")),
        }
    }
}

impl Serialize for Split {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Split {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl Record {
    pub fn new(image: impl Into<String>, mask: Option<String>) -> Self {
        Record {
            image: image.into(),
            mask,
            group: None,
            split: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let m = DatasetManifest {
            records,
            base_dir: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Parses JSON-lines text. Blank lines are skipped; line numbers in
    /// errors are 1-based.
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(line).map_err(|e| Error::Manifest {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        DatasetManifest::new(records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = DatasetManifest::parse(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.resolve(&self.records[i].image)
    }

    pub fn mask_path(&self, i: usize) -> Result<PathBuf> {
        let r = &self.records[i];
        r.mask
            .as_deref()
            .map(|m| self.resolve(m))
            .ok_or_else(|| Error::invalid(format!("record {} ({}) has no mask", i, r.image)))
    }

    /// Indices of records tagged with `split`.
    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == Some(split))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if !seen.insert(r.image.as_str()) {
                return Err(Error::Manifest {
                    line: i + 1,
                    message: format!("duplicate image path {:?}", r.image),
                });
            }
        }
        let mut masks = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if let Some(m) = &r.mask {
                if !masks.insert(m.as_str()) {
                    return Err(Error::Manifest {
                        line: i + 1,
                        message: format!("duplicate mask path {m:?}"),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_fields_omitted() {
        let m = DatasetManifest::new(vec![Record::new("a.png", None)]).unwrap();
        assert_eq!(m.to_jsonl(), "{\"image\":\"a.png\"}\n");
    }

    #[test]
    fn parses_all_fields_and_skips_blank_lines() {
        let text = "{\"image\":\"a.png\",\"mask\":\"a_m.png\",\"group\":1,\"split\":\"fold-2\"}\n\n{\"image\":\"b.png\",\"split\":\"test\"}\n";
        let m = DatasetManifest::parse(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.records[0].split, Some(Split::Fold(2)));
        assert_eq!(m.records[0].group, Some(1));
        assert_eq!(m.records[1].split, Some(Split::Test));
        assert_eq!(DatasetManifest::parse(&m.to_jsonl()).unwrap(), m);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "{\"image\":\"a.png\"}\n{\"image\":\"a.png\"}\n";
        assert!(matches!(
            DatasetManifest::parse(text),
            Err(Error::Manifest { line: 2, .. })
        ));
        let text = "{\"image\":\"a.png\"}\n{\"img\":\"b.png\"}\n";
        assert!(matches!(
            DatasetManifest::parse(text),
            Err(Error::Manifest { line: 2, .. })
        ));
        let text = "{\"image\":\"a.png\",\"split\":\"val\"}";
        assert!(matches!(
            DatasetManifest::parse(text),
            Err(Error::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let m = DatasetManifest::new(vec![Record::new("img/a.png", Some("m/a.png".into()))])
            .unwrap()
            .with_base_dir("/data/run");
        assert_eq!(m.image_path(0), PathBuf::from("/data/run/img/a.png"));
        assert_eq!(m.mask_path(0).unwrap(), PathBuf::from("/data/run/m/a.png"));
    }
}
