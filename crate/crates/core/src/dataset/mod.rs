//! Zero-shot datasets: data model, on-disk format, synthetic benchmark and
//! PK batch sampling.
//!
//! A dataset directory contains:
//!
//! * `features.npy` or `features.csv`: `n × d_x` sample features
//! * `attributes.npy` or `attributes.csv`: `C × D` class attributes in `[0, 1]`
//! * `labels.txt`: one class id per line, `n` lines
//! * `split.json`: `{seen, unseen, train, test_seen, test_unseen}`
//!
//! CSV files carry one header row.

pub mod npy;
mod sampler;
mod synth;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use sampler::{pk_batches, PkBatches};
pub use synth::{synth_generate, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(rename = "seen")]
    pub seen_classes: Vec<usize>,
    #[serde(rename = "unseen")]
    pub unseen_classes: Vec<usize>,
    #[serde(rename = "train")]
    pub train_idx: Vec<usize>,
    #[serde(rename = "test_seen")]
    pub test_seen_idx: Vec<usize>,
    #[serde(rename = "test_unseen")]
    pub test_unseen_idx: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZslDataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub attributes: Matrix,
    pub split: SplitSpec,
}

fn load_err(file: &Path, row: Option<usize>, reason: impl Into<String>) -> Error {
    Error::Load {
        file: file.to_path_buf(),
        row,
        reason: reason.into(),
    }
}

impl ZslDataset {
    pub fn num_classes(&self) -> usize {
        self.attributes.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    /// Attribute rows for each label, one row per entry.
    pub fn attributes_for(&self, labels: &[usize]) -> Matrix {
        self.attributes.select_rows(labels)
    }

    pub fn labels_at(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }

    /// Checks every structural invariant. `base` names the directory used in
    /// error messages.
    pub fn validate_at(&self, base: &Path) -> Result<()> {
        let labels_file = base.join("labels.txt");
        let attr_file = base.join("attributes");
        let split_file = base.join("split.json");
        let n = self.features.rows();
        let c = self.num_classes();
        if self.labels.len() != n {
            return Err(load_err(
                &labels_file,
                None,
                format!("{} labels for {n} feature rows", self.labels.len()),
            ));
        }
        if let Some(row) = self.labels.iter().position(|&l| l >= c) {
            return Err(load_err(
                &labels_file,
                Some(row),
                format!("label {} out of range for {c} classes", self.labels[row]),
            ));
        }
        for r in 0..c {
            if let Some(v) = self.attributes.row(r).iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(load_err(&attr_file, Some(r), format!("attribute {v} outside [0, 1]")));
            }
        }
        let s = &self.split;
        let seen = unique_set(&s.seen_classes, &split_file, "seen")?;
        let unseen = unique_set(&s.unseen_classes, &split_file, "unseen")?;
        if let Some(cls) = seen.intersection(&unseen).next() {
            return Err(load_err(
                &split_file,
                None,
                format!("class {cls} is both seen and unseen"),
            ));
        }
        if let Some(cls) = seen.iter().chain(&unseen).find(|&&k| k >= c) {
            return Err(load_err(&split_file, None, format!("class {cls} has no attribute row")));
        }
        let pools: [(&str, &Vec<usize>, &BTreeSet<usize>); 3] = [
            ("train", &s.train_idx, &seen),
            ("test_seen", &s.test_seen_idx, &seen),
            ("test_unseen", &s.test_unseen_idx, &unseen),
        ];
        let mut owner = vec![None::<&str>; n];
        for (name, idx, allowed) in pools {
            for (pos, &i) in idx.iter().enumerate() {
                if i >= n {
                    return Err(load_err(
                        &split_file,
                        Some(pos),
                        format!("{name} index {i} >= {n} samples"),
                    ));
                }
                if let Some(prev) = owner[i] {
                    return Err(load_err(
                        &split_file,
                        Some(pos),
                        format!("sample {i} appears in both {prev} and {name}"),
                    ));
                }
                owner[i] = Some(name);
                if !allowed.contains(&self.labels[i]) {
                    return Err(load_err(
                        &split_file,
                        Some(pos),
                        format!("{name} sample {i} has class {} outside its class set", self.labels[i]),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at(Path::new("<memory>"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let features = read_table(dir, "features")?;
        let attributes = read_table(dir, "attributes")?;
        let labels = read_labels(&dir.join("labels.txt"))?;
        let split_path = dir.join("split.json");
        let text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
        let split: SplitSpec =
            serde_json::from_str(&text).map_err(|e| load_err(&split_path, Some(e.line()), e.to_string()))?;
        let ds = ZslDataset {
            features,
            labels,
            attributes,
            split,
        };
        ds.validate_at(dir)?;
        Ok(ds)
    }

    /// Writes the directory format with f64 NPY tables.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        npy::write_matrix(dir.join("features.npy"), &self.features, npy::DType::F64)?;
        npy::write_matrix(dir.join("attributes.npy"), &self.attributes, npy::DType::F64)?;
        let mut labels = String::with_capacity(self.labels.len() * 3);
        for l in &self.labels {
            labels.push_str(&l.to_string());
            labels.push('\n');
        }
        let path = dir.join("labels.txt");
        fs::write(&path, labels).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("split.json");
        fs::write(&path, serde_json::to_string(&self.split)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn unique_set(v: &[usize], file: &Path, name: &str) -> Result<BTreeSet<usize>> {
    let mut set = BTreeSet::new();
    for (pos, &x) in v.iter().enumerate() {
        if !set.insert(x) {
            return Err(load_err(file, Some(pos), format!("duplicate class {x} in {name}")));
        }
    }
    Ok(set)
}

fn read_table(dir: &Path, stem: &str) -> Result<Matrix> {
    let npy_path = dir.join(format!("{stem}.npy"));
    let csv_path = dir.join(format!("{stem}.csv"));
    if npy_path.exists() {
        npy::read(&npy_path).and_then(|a| a.into_matrix()).map_err(|e| match e {
            e @ Error::Io { .. } => e,
            other => load_err(&npy_path, None, other.to_string()),
        })
    } else if csv_path.exists() {
        read_csv(&csv_path)
    } else {
        Err(load_err(
            &dir.join(stem),
            None,
            format!("missing {stem}.npy or {stem}.csv"),
        ))
    }
}

/// Numeric CSV with a single header row.
pub fn read_csv(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| load_err(path, None, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| load_err(path, Some(r), e.to_string()))?;
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| load_err(path, Some(r), e.to_string()))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(load_err(
                    path,
                    Some(r),
                    format!("{} columns, expected {}", row.len(), first.len()),
                ));
            }
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(load_err(path, Some(r), "non-finite value"));
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

fn read_labels(path: &PathBuf) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(r, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|e| load_err(path, Some(r), format!("{e}: {l:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ZslDataset {
        let features = Matrix::from_fn(6, 3, |r, c| (r * 3 + c) as f64 * 0.5);
        let attributes = Matrix::from_rows(&[[0.0, 1.0], [0.5, 0.5], [1.0, 0.25]]).unwrap();
        ZslDataset {
            features,
            labels: vec![0, 0, 1, 1, 2, 2],
            attributes,
            split: SplitSpec {
                seen_classes: vec![0, 1],
                unseen_classes: vec![2],
                train_idx: vec![0, 2, 3],
                test_seen_idx: vec![1],
                test_unseen_idx: vec![4, 5],
            },
        }
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        ds.save(dir.path()).unwrap();
        assert_eq!(ZslDataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn csv_tables_load() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny();
        ds.save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("attributes.npy")).unwrap();
        fs::write(dir.path().join("attributes.csv"), "a0,a1\n0,1\n0.5,0.5\n1,0.25\n").unwrap();
        assert_eq!(ZslDataset::load(dir.path()).unwrap().attributes, ds.attributes);
    }

    #[test]
    fn label_out_of_range_rejected() {
        let mut ds = tiny();
        ds.labels[5] = 3;
        ds.split.test_unseen_idx = vec![4];
        let err = ds.validate().unwrap_err().to_string();
        assert!(err.contains("labels.txt") && err.contains("Some(5)"), "{err}");
    }

    #[test]
    fn overlapping_class_sets_rejected() {
        let mut ds = tiny();
        ds.split.unseen_classes = vec![1, 2];
        assert!(ds.validate().unwrap_err().to_string().contains("both seen and unseen"));
    }

    #[test]
    fn split_membership_rules() {
        let mut ds = tiny();
        ds.split.test_unseen_idx = vec![4, 5, 2];
        assert!(ds.validate().is_err());
        let mut ds = tiny();
        ds.split.test_seen_idx = vec![0];
        assert!(ds
            .validate()
            .unwrap_err()
            .to_string()
            .contains("both train and test_seen"));
        let mut ds = tiny();
        ds.split.train_idx.push(99);
        assert!(ds.validate().is_err());
    }

    #[test]
    fn attribute_range_enforced() {
        let mut ds = tiny();
        ds.attributes = Matrix::from_rows(&[[0.0, 1.5], [0.5, 0.5], [1.0, 0.25]]).unwrap();
        assert!(ds.validate().unwrap_err().to_string().contains("outside [0, 1]"));
    }

    #[test]
    fn missing_file_named() {
        let dir = tempfile::tempdir().unwrap();
        tiny().save(dir.path()).unwrap();
        fs::remove_file(dir.path().join("features.npy")).unwrap();
        let err = ZslDataset::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("features"), "{err}");
    }

    #[test]
    fn benchmark_shaped_tables_load() {
        // AWA2 column widths (2048-d features, 50×85 attributes, 40/10 split)
        // with a reduced sample count.
        let n = 200;
        let features = Matrix::from_fn(n, 2048, |r, c| ((r * 31 + c) % 97) as f64 / 97.0);
        let labels: Vec<usize> = (0..n).map(|i| i % 50).collect();
        let attributes = Matrix::from_fn(50, 85, |r, c| ((r + c) % 10) as f64 / 10.0);
        let train_idx = (0..n).filter(|&i| labels[i] < 40).collect();
        let test_unseen_idx = (0..n).filter(|&i| labels[i] >= 40).collect();
        let ds = ZslDataset {
            features,
            labels,
            attributes,
            split: SplitSpec {
                seen_classes: (0..40).collect(),
                unseen_classes: (40..50).collect(),
                train_idx,
                test_seen_idx: vec![],
                test_unseen_idx,
            },
        };
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = ZslDataset::load(dir.path()).unwrap();
        assert_eq!(back.features.shape(), (n, 2048));
        assert_eq!(back.attributes.shape(), (50, 85));
    }
}
