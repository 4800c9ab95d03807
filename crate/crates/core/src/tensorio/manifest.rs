use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::read_tensor_as;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One slice descriptor as stored in the manifest JSON. Paths are relative to
/// the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub id: String,
    pub case_id: String,
    pub index_in_case: u32,
    pub image: String,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub domain_tag: String,
    pub num_classes: usize,
    pub slices: Vec<SliceEntry>,
    #[serde(skip)]
    root: PathBuf,
}

/// A slice with its pixel data loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSlice {
    pub id: String,
    pub case_id: String,
    pub index_in_case: u32,
    pub image: Tensor<f32>,
    pub label: Option<Tensor<u8>>,
}

impl DatasetManifest {
    pub fn new(
        name: impl Into<String>,
        domain_tag: impl Into<String>,
        num_classes: usize,
        slices: Vec<SliceEntry>,
        root: impl Into<PathBuf>,
    ) -> Self {
        let mut m = Self {
            name: name.into(),
            domain_tag: domain_tag.into(),
            num_classes,
            slices,
            root: root.into(),
        };
        m.sort();
        m
    }

    fn sort(&mut self) {
        self.slices.sort_by(|a, b| {
            (&a.case_id, a.index_in_case, &a.id).cmp(&(&b.case_id, b.index_in_case, &b.id))
        });
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.slices.iter().position(|s| s.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.slices.iter().map(|s| s.id.clone()).collect()
    }

    pub fn image_path(&self, entry: &SliceEntry) -> PathBuf {
        self.root.join(&entry.image)
    }

    pub fn label_path(&self, entry: &SliceEntry) -> Option<PathBuf> {
        entry.label.as_ref().map(|l| self.root.join(l))
    }

    pub fn load_image(&self, entry: &SliceEntry) -> Result<Tensor<f32>> {
        read_tensor_as::<f32>(self.image_path(entry)).map_err(|e| e.in_slice(&entry.id))
    }

    /// Loads the ground-truth label of `entry`. Callers that must account for
    /// annotation cost go through [`crate::adapt::LabelOracle`] instead.
    pub fn load_label(&self, entry: &SliceEntry) -> Result<Tensor<u8>> {
        let path = self
            .label_path(entry)
            .ok_or_else(|| Error::Manifest(format!("slice {} has no label", entry.id)))?;
        read_tensor_as::<u8>(path).map_err(|e| e.in_slice(&entry.id))
    }

    /// Loads the image and, when `with_label` is set and one exists, the label.
    pub fn load_slice(&self, entry: &SliceEntry, with_label: bool) -> Result<TargetSlice> {
        let image = self.load_image(entry)?;
        let label = match (&entry.label, with_label) {
            (Some(_), true) => Some(self.load_label(entry)?),
            _ => None,
        };
        Ok(TargetSlice {
            id: entry.id.clone(),
            case_id: entry.case_id.clone(),
            index_in_case: entry.index_in_case,
            image,
            label,
        })
    }

    /// Slice indices grouped by case, in case order then slice order.
    pub fn cases(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, s) in self.slices.iter().enumerate() {
            match out.last_mut() {
                Some((c, v)) if *c == s.case_id => v.push(i),
                _ => out.push((s.case_id.clone(), vec![i])),
            }
        }
        out
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > 256 {
            return Err(Error::Manifest(format!(
                "{}: num_classes must be in [2, 256], got {}",
                path.display(),
                self.num_classes
            )));
        }
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &self.slices {
            *seen.entry(&s.id).or_default() += 1;
        }
        let dups: Vec<String> = seen
            .iter()
            .filter(|(_, &n)| n > 1)
            .map(|(id, _)| id.to_string())
            .collect();
        if !dups.is_empty() {
            return Err(Error::DuplicateIds {
                path: path.to_path_buf(),
                ids: dups,
            });
        }

        let missing: Vec<String> = self
            .slices
            .iter()
            .filter(|s| {
                !self.image_path(s).is_file()
                    || self.label_path(s).is_some_and(|p| !p.is_file())
            })
            .map(|s| s.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles {
                path: path.to_path_buf(),
                ids: missing,
            });
        }

        let mut mismatched = Vec::new();
        let mut bad_images = Vec::new();
        let mut bad_labels = Vec::new();
        for s in &self.slices {
            let image = self.load_image(s)?;
            if image.rank() != 2 || image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                bad_images.push(s.id.clone());
            }
            if s.label.is_some() {
                let label = self.load_label(s)?;
                if label.dims() != image.dims() {
                    mismatched.push(s.id.clone());
                } else if label.data().iter().any(|&v| v as usize >= self.num_classes) {
                    bad_labels.push(s.id.clone());
                }
            }
        }
        if !mismatched.is_empty() {
            return Err(Error::DimMismatch {
                path: path.to_path_buf(),
                ids: mismatched,
            });
        }
        if !bad_images.is_empty() {
            return Err(Error::InvalidSlices {
                path: path.to_path_buf(),
                ids: bad_images,
                reason: "image must be a rank-2 float32 tensor with values in [0, 1]".into(),
            });
        }
        if !bad_labels.is_empty() {
            return Err(Error::InvalidSlices {
                path: path.to_path_buf(),
                ids: bad_labels,
                reason: format!("label values must be < {}", self.num_classes),
            });
        }
        Ok(())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    m.root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    m.sort();
    m.validate(path)?;
    Ok(m)
}

pub fn write_manifest(path: impl AsRef<Path>, m: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(m).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
