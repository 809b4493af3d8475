//! CIFAR-10 binary-format reader (`data_batch_{1..5}.bin`, `test_batch.bin`).

use std::path::{Path, PathBuf};

use super::{ImageDataset, Split};
use crate::error::{Error, Result};
use crate::image::{Image, ImageShape};

const RECORD: usize = 1 + 3 * 32 * 32;
const CLASSES: [&str; 10] = ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];

pub struct Cifar10 {
    names: Vec<String>,
    /// Raw pixel bytes per split, per class.
    train: Vec<Vec<Vec<u8>>>,
    test: Vec<Vec<Vec<u8>>>,
}

impl Cifar10 {
    pub const ID: &'static str = "cifar10";

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let mut train = vec![Vec::new(); CLASSES.len()];
        let mut test = vec![Vec::new(); CLASSES.len()];
        let mut found = false;
        for i in 1..=5 {
            let path = dir.join(format!("data_batch_{i}.bin"));
            if path.exists() {
                read_batch(&path, &mut train)?;
                found = true;
            }
        }
        let test_path = dir.join("test_batch.bin");
        if test_path.exists() {
            read_batch(&test_path, &mut test)?;
            found = true;
        }
        if !found {
            return Err(Error::InvalidArgument(format!("no CIFAR-10 batch files under {}", dir.display())));
        }
        Ok(Self { names: CLASSES.iter().map(|s| s.to_string()).collect(), train, test })
    }
}

fn read_batch(path: &Path, into: &mut [Vec<Vec<u8>>]) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % RECORD != 0 {
        return Err(Error::corrupt(path, format!("length {} is not a multiple of {RECORD}", bytes.len())));
    }
    for rec in bytes.chunks_exact(RECORD) {
        let label = rec[0] as usize;
        if label >= CLASSES.len() {
            return Err(Error::corrupt(path, format!("label byte {label} out of range")));
        }
        into[label].push(rec[1..].to_vec());
    }
    Ok(())
}

impl ImageDataset for Cifar10 {
    fn id(&self) -> &str {
        Self::ID
    }

    fn class_names(&self) -> &[String] {
        &self.names
    }

    fn shape(&self) -> ImageShape {
        ImageShape::square(32)
    }

    fn available(&self, split: Split, class: usize) -> usize {
        let store = match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        };
        store.get(class).map_or(0, Vec::len)
    }

    fn image(&self, split: Split, class: usize, index: usize) -> Result<Image> {
        let store = match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        };
        let raw = store
            .get(class)
            .and_then(|c| c.get(index))
            .ok_or_else(|| Error::InvalidArgument(format!("cifar10 sample {class}/{index} out of range")))?;
        // the binary layout is already planar R, G, B
        Image::new(self.shape(), raw.iter().map(|&b| b as f32 / 255.0).collect())
    }
}
