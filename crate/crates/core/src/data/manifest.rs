use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tripath_autograd::par;

use super::png_io;
use super::ImagePair;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArg(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub val: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// On-disk `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub splits: Splits,
}

impl ManifestFile {
    pub fn write(&self, root: &Path) -> Result<()> {
        fs::create_dir_all(root)?;
        fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// A validated view of one split of a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub entries: Vec<String>,
    /// Whether every entry has a `label/<id>.png`.
    pub labeled: bool,
}

pub fn image_path(root: &Path, dir: &str, id: &str) -> PathBuf {
    root.join(dir).join(format!("{id}.png"))
}

fn require(path: PathBuf, sample: &str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingFile { sample: sample.to_string(), path })
    }
}

/// Load and validate one split. Train and val splits must be labeled; a
/// test split is labeled only if every entry has a label file.
pub fn load_manifest(root: impl AsRef<Path>, split: Split) -> Result<DatasetManifest> {
    let root = root.as_ref().to_path_buf();
    let mpath = require(root.join(MANIFEST_FILE), MANIFEST_FILE)?;
    let file: ManifestFile = serde_json::from_slice(&fs::read(mpath)?)?;
    if file.num_classes == 0 {
        return Err(Error::InvalidConfig("num_classes must be at least 1".into()));
    }
    if file.class_names.len() != file.num_classes {
        return Err(Error::InvalidConfig(format!(
            "{} class names for {} classes",
            file.class_names.len(),
            file.num_classes
        )));
    }
    let entries = file.splits.get(split).to_vec();
    let labeled = match split {
        Split::Train | Split::Val => true,
        Split::Test => {
            !entries.is_empty() && entries.iter().all(|id| image_path(&root, "label", id).is_file())
        }
    };
    let n = file.num_classes;
    let checks = par::map_slice(&entries, |id| validate_entry(&root, id, labeled, n));
    for c in checks {
        c?;
    }
    Ok(DatasetManifest {
        root,
        split,
        num_classes: file.num_classes,
        class_names: file.class_names,
        entries,
        labeled,
    })
}

fn validate_entry(root: &Path, id: &str, labeled: bool, num_classes: usize) -> Result<()> {
    let a = require(image_path(root, "A", id), id)?;
    let b = require(image_path(root, "B", id), id)?;
    let da = png_io::dimensions(&a)?;
    let db = png_io::dimensions(&b)?;
    if da != db {
        return Err(Error::ShapeMismatch(format!("sample `{id}`: A is {da:?}, B is {db:?}")));
    }
    if labeled {
        let l = require(image_path(root, "label", id), id)?;
        let mask = png_io::read_mask(&l)?;
        if mask.dim() != da {
            return Err(Error::ShapeMismatch(format!("sample `{id}`: image {da:?}, label {:?}", mask.dim())));
        }
        check_labels(&mask, num_classes, id)?;
    }
    Ok(())
}

pub(crate) fn check_labels(mask: &ndarray::Array2<u8>, num_classes: usize, id: &str) -> Result<()> {
    if let Some(&v) = mask.iter().find(|&&v| v as usize > num_classes) {
        return Err(Error::LabelOutOfRange { sample: id.to_string(), value: v as usize, max: num_classes });
    }
    Ok(())
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e == id)
    }

    /// Decode entry `idx` (intensities in `[0, 1]`, no standardization).
    pub fn load_pair(&self, idx: usize) -> Result<ImagePair> {
        let id = &self.entries[idx];
        let t1 = png_io::read_rgb(&image_path(&self.root, "A", id))?;
        let t2 = png_io::read_rgb(&image_path(&self.root, "B", id))?;
        let mask = if self.labeled {
            Some(png_io::read_mask(&image_path(&self.root, "label", id))?)
        } else {
            None
        };
        ImagePair::new(id.clone(), t1, t2, mask, self.num_classes)
    }
}
