//! Image sources that scenarios draw from.
//!
//! `toy-shapes` is generated procedurally and needs no files. `cifar10` reads the
//! standard binary distribution from a local directory.

mod cifar;
mod toy_shapes;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use cifar::Cifar10;
pub use toy_shapes::{ToyShapes, GLYPHS};

use crate::error::{Error, Result};
use crate::image::{Image, ImageShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

pub trait ImageDataset: Send + Sync {
    fn id(&self) -> &str;
    fn class_names(&self) -> &[String];
    fn shape(&self) -> ImageShape;
    fn available(&self, split: Split, class: usize) -> usize;
    fn image(&self, split: Split, class: usize, index: usize) -> Result<Image>;

    fn class_index(&self, name: &str) -> Result<usize> {
        self.class_names().iter().position(|c| c == name).ok_or_else(|| Error::UnknownClass {
            dataset: self.id().to_string(),
            class: name.to_string(),
        })
    }

    /// Stable identifier of one source sample.
    fn sample_id(&self, split: Split, class: usize, index: usize) -> String {
        format!("{}/{}/{}/{}", self.id(), split.as_str(), self.class_names()[class], index)
    }
}

/// Options needed to open a dataset by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    /// Image side for generated datasets; file-backed datasets use their native size.
    pub side: usize,
    /// Directory holding file-backed datasets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self { side: 32, data_dir: None }
    }
}

pub fn open_dataset(id: &str, opts: &DatasetOptions) -> Result<Box<dyn ImageDataset>> {
    match id {
        ToyShapes::ID => Ok(Box::new(ToyShapes::new(opts.side)?)),
        Cifar10::ID => {
            let dir = opts
                .data_dir
                .clone()
                .ok_or_else(|| Error::InvalidArgument("cifar10 requires a data directory".into()))?;
            Ok(Box::new(Cifar10::open(dir)?))
        }
        other => Err(Error::UnknownDataset(other.to_string())),
    }
}

/// Parse a sample id produced by [`ImageDataset::sample_id`].
pub fn parse_sample_id(id: &str) -> Option<(&str, Split, &str, usize)> {
    let mut parts = id.split('/');
    let dataset = parts.next()?;
    let split = match parts.next()? {
        "train" => Split::Train,
        "test" => Split::Test,
        _ => return None,
    };
    let class = parts.next()?;
    let index = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some((dataset, split, class, index))
}
