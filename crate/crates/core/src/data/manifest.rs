use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NEGATIVE: u8 = 0;
pub const POSITIVE: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Resolved path (relative entries are taken relative to the manifest's directory).
    pub path: PathBuf,
    pub label: u8,
    pub fold: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub source: PathBuf,
    pub records: Vec<Record>,
}

fn parse_label(token: &str) -> Option<u8> {
    match token.trim().to_ascii_lowercase().as_str() {
        "positive" | "1" => Some(POSITIVE),
        "negative" | "0" => Some(NEGATIVE),
        _ => None,
    }
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    /// `(negative, positive)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.records.iter().filter(|r| r.label == POSITIVE).count();
        (self.records.len() - pos, pos)
    }

    /// Fold assignment from the manifest, if it carries one.
    pub fn folds(&self) -> Option<Vec<usize>> {
        self.records.iter().map(|r| r.fold).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> DatasetManifest {
        DatasetManifest {
            source: self.source.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }
}

/// Loads a `path,label[,fold]` CSV manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: u64, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| err(1, e.to_string()))?
        .iter()
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>();
    if headers.iter().all(|h| h.is_empty()) {
        return Err(err(1, "empty manifest".into()));
    }
    let col = |name: &str| headers.iter().position(|h| h == name);
    let path_col = col("path").ok_or_else(|| err(1, "header must name a `path` column".into()))?;
    let label_col = col("label").ok_or_else(|| err(1, "header must name a `label` column".into()))?;
    let fold_col = col("fold");
    let base = path.parent().unwrap_or(Path::new(""));
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != headers.len() {
            return Err(err(line, format!("expected {} fields, found {}", headers.len(), row.len())));
        }
        let rel = &row[path_col];
        if rel.is_empty() {
            return Err(err(line, "empty path".into()));
        }
        let label = parse_label(&row[label_col])
            .ok_or_else(|| err(line, format!("label `{}` is not positive/negative/1/0", &row[label_col])))?;
        let fold = match fold_col.map(|c| &row[c]) {
            None | Some("") => None,
            Some(f) => Some(
                f.parse::<usize>()
                    .map_err(|_| err(line, format!("fold `{f}` is not a non-negative integer")))?,
            ),
        };
        let resolved = base.join(rel);
        if !resolved.is_file() {
            return Err(err(line, format!("image not found: {}", resolved.display())));
        }
        records.push(Record {
            path: resolved,
            label,
            fold,
        });
    }
    if records.is_empty() {
        return Err(err(1, "manifest lists no images".into()));
    }
    let with_fold = records.iter().filter(|r| r.fold.is_some()).count();
    if with_fold != 0 && with_fold != records.len() {
        return Err(err(1, "fold column must be filled for every row or for none".into()));
    }
    if with_fold != 0 {
        let k = records.iter().filter_map(|r| r.fold).max().unwrap() + 1;
        if k < 2 {
            return Err(err(1, "manifest folds must cover at least 2 folds".into()));
        }
        if let Some(missing) = (0..k).find(|f| !records.iter().any(|r| r.fold == Some(*f))) {
            return Err(err(1, format!("fold {missing} is empty; folds must cover 0..{k}")));
        }
    }
    let m = DatasetManifest {
        source: path.to_path_buf(),
        records,
    };
    let (neg, pos) = m.class_counts();
    info!("{}: {} images ({pos} positive, {neg} negative)", path.display(), m.len());
    if neg == 0 || pos == 0 {
        warn!("{}: only one class present", path.display());
    }
    Ok(m)
}

/// Writes a manifest with paths relative to its own directory where possible.
pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut w = csv::Writer::from_writer(Vec::new());
    let with_fold = manifest.folds().is_some();
    let io = |e: csv::Error| Error::Data(e.to_string());
    if with_fold {
        w.write_record(["path", "label", "fold"]).map_err(io)?;
    } else {
        w.write_record(["path", "label"]).map_err(io)?;
    }
    for r in &manifest.records {
        let p = r.path.strip_prefix(base).unwrap_or(&r.path).to_string_lossy().into_owned();
        let label = if r.label == POSITIVE { "positive" } else { "negative" };
        match r.fold {
            Some(f) if with_fold => w.write_record([p.as_str(), label, &f.to_string()]).map_err(io)?,
            _ => w.write_record([p.as_str(), label]).map_err(io)?,
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Three per-channel means, one per line.
pub fn write_mean(mean: [f32; 3], path: &Path) -> Result<()> {
    let text: String = mean.iter().map(|m| format!("{m}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_mean(path: &Path) -> Result<[f32; 3]> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals: Vec<f32> = text
        .split_whitespace()
        .map(|t| t.parse::<f32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    match vals[..] {
        [r, g, b] if vals.iter().all(|v| v.is_finite()) => Ok([r, g, b]),
        _ => Err(Error::Data(format!(
            "{}: expected three finite channel means, found {}",
            path.display(),
            vals.len()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn setup(body: &str, files: &[&str]) -> (TempDir, PathBuf) {
        let dir = TempDir::new().unwrap();
        for f in files {
            fs::write(dir.path().join(f), b"x").unwrap();
        }
        let m = dir.path().join("m.csv");
        fs::write(&m, body).unwrap();
        (dir, m)
    }

    #[test]
    fn labels_and_counts() {
        let (_d, m) = setup("path,label\na.ppm,positive\nb.ppm,0\nc.ppm,1\n", &["a.ppm", "b.ppm", "c.ppm"]);
        let man = load_manifest(&m).unwrap();
        assert_eq!(man.class_counts(), (1, 2));
        assert_eq!(man.folds(), None);
        assert!(man.records[0].path.ends_with("a.ppm"));
    }

    #[test]
    fn folds_used_verbatim() {
        let (_d, m) = setup("path,label,fold\na.ppm,positive,1\nb.ppm,negative,0\n", &["a.ppm", "b.ppm"]);
        assert_eq!(load_manifest(&m).unwrap().folds(), Some(vec![1, 0]));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let (_d, m) = setup("path,label\na.ppm,positive\nb.ppm,neutral\n", &["a.ppm", "b.ppm"]);
        match load_manifest(&m) {
            Err(Error::Manifest { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("neutral"));
            }
            other => panic!("{other:?}"),
        }
        let (_d, m) = setup("path,label\na.ppm,positive\nmissing.ppm,1\n", &["a.ppm"]);
        assert!(matches!(load_manifest(&m), Err(Error::Manifest { line: 3, .. })));
    }

    #[test]
    fn empty_file_is_an_error() {
        let (_d, m) = setup("", &[]);
        assert!(load_manifest(&m).is_err());
        let (_d, m) = setup("path,label\n", &[]);
        assert!(load_manifest(&m).is_err());
    }

    #[test]
    fn missing_manifest_names_path() {
        let e = load_manifest("/nonexistent/m.csv").unwrap_err();
        assert!(e.to_string().contains("/nonexistent/m.csv"));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn write_read_round_trip() {
        let (d, m) = setup("path,label,fold\na.ppm,positive,1\nb.ppm,negative,0\n", &["a.ppm", "b.ppm"]);
        let man = load_manifest(&m).unwrap();
        let out = d.path().join("copy.csv");
        write_manifest(&man, &out).unwrap();
        assert_eq!(load_manifest(&out).unwrap().records, man.records);
        let mean = d.path().join("mean.txt");
        write_mean([1.5, 2.25, 3.0], &mean).unwrap();
        assert_eq!(read_mean(&mean).unwrap(), [1.5, 2.25, 3.0]);
    }
}
