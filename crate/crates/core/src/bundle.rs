//! Hidden test bundles: a `manifest.json` plus one tensor file per item field.
//!
//! ```text
//! <bundle>/manifest.json
//! <bundle>/items/<item-id>/<input-name>.json
//! <bundle>/items/<item-id>/{mask,depth}.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{parse_tensor, tensor_to_json, Tensor, TensorMap};
use crate::metrics::{CameraIntrinsics, Mask, Track, TrackConfig};

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid bundle: {0}")]
    Invalid(String),
}

fn io_err(path: &Path, e: std::io::Error) -> BundleError {
    BundleError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub track: Track,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
    pub items: Vec<ItemEntry>,
}

/// Paths are relative to the bundle root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemEntry {
    pub id: String,
    pub inputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Label(usize),
    Mask(Mask),
    /// Metric depth in meters.
    Depth(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleItem {
    pub id: String,
    pub inputs: TensorMap,
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestBundle {
    pub track: Track,
    pub tau_m: Option<f64>,
    pub mask_threshold: Option<f64>,
    pub intrinsics: Option<CameraIntrinsics>,
    pub items: Vec<BundleItem>,
}

/// Converts a stored 0/1 tensor to a mask.
pub fn mask_from_tensor(t: &Tensor) -> Result<Mask, BundleError> {
    if t.data.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(BundleError::Invalid("mask tensors must hold only 0 and 1".into()));
    }
    Ok(Mask::new(t.shape.clone(), t.data.iter().map(|&v| v == 1.0).collect()))
}

pub fn mask_to_tensor(m: &Mask) -> Tensor {
    Tensor::new(
        m.shape.clone(),
        m.pixels.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect(),
    )
}

/// Resolves `rel` under `root`, refusing absolute paths and `..`.
fn resolve(root: &Path, rel: &str) -> Result<PathBuf, BundleError> {
    let p = Path::new(rel);
    if !p.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(BundleError::Invalid(format!(
            "item path `{rel}` must be relative and stay inside the bundle"
        )));
    }
    Ok(root.join(p))
}

pub fn read_tensor_file(path: &Path) -> Result<Tensor, BundleError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_tensor(&text)
        .map(|(_, t)| t)
        .map_err(|e| BundleError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn read_manifest(dir: &Path) -> Result<BundleManifest, BundleError> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| BundleError::Format {
        path,
        message: e.to_string(),
    })
}

impl TestBundle {
    pub fn config(&self) -> TrackConfig {
        let mut c = TrackConfig::new(self.track);
        if let Some(t) = self.tau_m {
            c.tau_m = t;
        }
        if let Some(m) = self.mask_threshold {
            c.mask_threshold = m;
        }
        c
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        if self.items.is_empty() {
            return Err(BundleError::Invalid("bundle has no items".into()));
        }
        self.config()
            .validate()
            .map_err(|e| BundleError::Invalid(e.to_string()))?;
        if self.track == Track::Depth {
            let k = self
                .intrinsics
                .ok_or_else(|| BundleError::Invalid("depth bundles need intrinsics".into()))?;
            k.validate().map_err(|e| BundleError::Invalid(e.to_string()))?;
        }
        let mut ids = std::collections::BTreeSet::new();
        for item in &self.items {
            if !ids.insert(item.id.as_str()) {
                return Err(BundleError::Invalid(format!("duplicate item id `{}`", item.id)));
            }
            let matches = matches!(
                (self.track, &item.truth),
                (Track::Classification, Truth::Label(_))
                    | (Track::Segmentation, Truth::Mask(_))
                    | (Track::Depth, Truth::Depth(_))
            );
            if !matches {
                return Err(BundleError::Invalid(format!(
                    "item `{}` carries ground truth of the wrong kind for track {}",
                    item.id, self.track
                )));
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        let manifest = read_manifest(dir)?;
        let mut items = Vec::with_capacity(manifest.items.len());
        for entry in &manifest.items {
            let mut inputs = TensorMap::new();
            for (name, rel) in &entry.inputs {
                inputs.insert(name.clone(), read_tensor_file(&resolve(dir, rel)?)?);
            }
            let missing = |what: &str| {
                BundleError::Invalid(format!("item `{}` has no {what}", entry.id))
            };
            let truth = match manifest.track {
                Track::Classification => Truth::Label(entry.label.ok_or_else(|| missing("label"))?),
                Track::Segmentation => {
                    let rel = entry.mask.as_deref().ok_or_else(|| missing("mask"))?;
                    Truth::Mask(mask_from_tensor(&read_tensor_file(&resolve(dir, rel)?)?)?)
                }
                Track::Depth => {
                    let rel = entry.depth.as_deref().ok_or_else(|| missing("depth"))?;
                    Truth::Depth(read_tensor_file(&resolve(dir, rel)?)?)
                }
            };
            items.push(BundleItem {
                id: entry.id.clone(),
                inputs,
                truth,
            });
        }
        let bundle = TestBundle {
            track: manifest.track,
            tau_m: manifest.tau_m,
            mask_threshold: manifest.mask_threshold,
            intrinsics: manifest.intrinsics,
            items,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Writes the bundle under `dir`; output bytes depend only on the bundle.
    pub fn write(&self, dir: &Path) -> Result<(), BundleError> {
        self.validate()?;
        let mut entries = Vec::with_capacity(self.items.len());
        for item in &self.items {
            let item_dir = dir.join("items").join(&item.id);
            fs::create_dir_all(&item_dir).map_err(|e| io_err(&item_dir, e))?;
            let write = |name: &str, t: &Tensor| -> Result<String, BundleError> {
                let rel = format!("items/{}/{name}.json", item.id);
                let path = dir.join(&rel);
                fs::write(&path, tensor_to_json(name, t)).map_err(|e| io_err(&path, e))?;
                Ok(rel)
            };
            let mut entry = ItemEntry {
                id: item.id.clone(),
                inputs: BTreeMap::new(),
                label: None,
                mask: None,
                depth: None,
            };
            for (name, t) in &item.inputs {
                entry.inputs.insert(name.clone(), write(name, t)?);
            }
            match &item.truth {
                Truth::Label(l) => entry.label = Some(*l),
                Truth::Mask(m) => entry.mask = Some(write("mask", &mask_to_tensor(m))?),
                Truth::Depth(d) => entry.depth = Some(write("depth", d)?),
            }
            entries.push(entry);
        }
        let manifest = BundleManifest {
            track: self.track,
            tau_m: self.tau_m,
            mask_threshold: self.mask_threshold,
            intrinsics: self.intrinsics,
            items: entries,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}
