//! Auxiliary-SSL scenarios: a labeled set, an unconstrained auxiliary pool and
//! the evaluation-only bookkeeping of which auxiliary samples share a class
//! with the labeled set.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{open_dataset, DatasetOptions, ImageDataset, Split};
use crate::error::{Error, Result};
use crate::image::{Image, ImageShape};
use crate::rng::{derive_seed, stream_rng, Stream};

pub const SCENARIO_FORMAT: &str = "auxmix-scenario";
pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Shared,
    Private,
    Noise,
}

impl Origin {
    pub const ALL: [Origin; 3] = [Origin::Shared, Origin::Private, Origin::Noise];

    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Shared => "shared",
            Origin::Private => "private",
            Origin::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapKind {
    Partial,
    None,
    Complete,
}

impl OverlapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OverlapKind::Partial => "partial",
            OverlapKind::None => "none",
            OverlapKind::Complete => "complete",
        }
    }

    /// The kind implied by the shared/private class sets. A pool without any
    /// class-drawn samples counts as `none`.
    pub fn classify(shared: usize, private: usize) -> Self {
        match (shared, private) {
            (0, _) => OverlapKind::None,
            (_, 0) => OverlapKind::Complete,
            _ => OverlapKind::Partial,
        }
    }
}

impl std::str::FromStr for OverlapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partial" => Ok(OverlapKind::Partial),
            "none" => Ok(OverlapKind::None),
            "complete" => Ok(OverlapKind::Complete),
            other => Err(Error::InvalidArgument(format!("unknown overlap kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryExample {
    pub id: String,
    pub image: Image,
    origin: Origin,
}

impl AuxiliaryExample {
    /// Evaluation-only: training code receives auxiliary images through
    /// [`TrainingView`], which does not carry this tag.
    pub fn origin(&self) -> Origin {
        self.origin
    }
}

/// Composition of the auxiliary pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxSpec {
    /// Source classes drawn into the pool (may be empty for noise-only pools).
    pub classes: Vec<String>,
    /// Samples per class; `None` takes every sample not used by the labeled set.
    #[serde(default)]
    pub per_class: Option<usize>,
    /// Uniform-noise images appended to the pool.
    #[serde(default)]
    pub noise: usize,
}

/// Every argument that determines a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRequest {
    pub dataset: String,
    #[serde(default)]
    pub dataset_options: DatasetOptions,
    pub labeled_classes: Vec<String>,
    pub labels_per_class: usize,
    pub aux: AuxSpec,
    pub overlap: OverlapKind,
    /// Held-out evaluation images per labeled class, drawn from the test split.
    #[serde(default)]
    pub test_per_class: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub request: ScenarioRequest,
    pub shape: ImageShape,
    pub labeled: Vec<LabeledExample>,
    pub auxiliary: Vec<AuxiliaryExample>,
    pub test: Vec<LabeledExample>,
    pub labeled_classes: Vec<String>,
    pub aux_shared_classes: Vec<String>,
    pub aux_private_classes: Vec<String>,
    pub overlap_kind: OverlapKind,
    pub seed: u64,
}

/// What the training path may see of a scenario: labeled data, auxiliary
/// images without origin tags, and the evaluation split.
#[derive(Debug, Clone)]
pub struct TrainingView<'a> {
    pub labeled: &'a [LabeledExample],
    pub auxiliary: Vec<&'a Image>,
    pub test: &'a [LabeledExample],
    pub num_classes: usize,
    pub shape: ImageShape,
}

impl Scenario {
    pub fn num_classes(&self) -> usize {
        self.labeled_classes.len()
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            labeled: &self.labeled,
            auxiliary: self.auxiliary.iter().map(|a| &a.image).collect(),
            test: &self.test,
            num_classes: self.num_classes(),
            shape: self.shape,
        }
    }

    pub fn origins(&self) -> Vec<Origin> {
        self.auxiliary.iter().map(|a| a.origin).collect()
    }

    pub fn labeled_ids(&self) -> Vec<&str> {
        self.labeled.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn auxiliary_ids(&self) -> Vec<&str> {
        self.auxiliary.iter().map(|e| e.id.as_str()).collect()
    }

    /// Digest over sample bookkeeping and every pixel; independent of where the
    /// scenario is stored.
    pub fn content_hash(&self) -> String {
        let manifest = self.manifest(String::new(), String::new());
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&manifest).expect("manifest serializes"));
        hasher.update(self.blob_bytes());
        hex::encode(hasher.finalize())
    }

    fn all_images(&self) -> impl Iterator<Item = &Image> {
        self.labeled
            .iter()
            .map(|e| &e.image)
            .chain(self.auxiliary.iter().map(|e| &e.image))
            .chain(self.test.iter().map(|e| &e.image))
    }

    fn blob_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.all_images().count() * self.shape.len() * 4);
        for img in self.all_images() {
            for v in img.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn manifest(&self, blob_file: String, blob_sha256: String) -> ScenarioManifest {
        ScenarioManifest {
            format: SCENARIO_FORMAT.to_string(),
            version: SCENARIO_VERSION,
            request: self.request.clone(),
            shape: self.shape,
            labeled_classes: self.labeled_classes.clone(),
            aux_shared_classes: self.aux_shared_classes.clone(),
            aux_private_classes: self.aux_private_classes.clone(),
            overlap_kind: self.overlap_kind,
            seed: self.seed,
            labeled_sampling: "class-balanced".to_string(),
            labeled: self.labeled.iter().map(|e| LabeledEntry { id: e.id.clone(), label: e.label }).collect(),
            auxiliary: self.auxiliary.iter().map(|e| AuxEntry { id: e.id.clone(), origin: e.origin }).collect(),
            test: self.test.iter().map(|e| LabeledEntry { id: e.id.clone(), label: e.label }).collect(),
            blob: BlobInfo { file: blob_file, images: self.all_images().count(), sha256: blob_sha256 },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LabeledEntry {
    id: String,
    label: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AuxEntry {
    id: String,
    origin: Origin,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobInfo {
    file: String,
    images: usize,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioManifest {
    format: String,
    version: u32,
    request: ScenarioRequest,
    shape: ImageShape,
    labeled_classes: Vec<String>,
    aux_shared_classes: Vec<String>,
    aux_private_classes: Vec<String>,
    overlap_kind: OverlapKind,
    seed: u64,
    labeled_sampling: String,
    labeled: Vec<LabeledEntry>,
    auxiliary: Vec<AuxEntry>,
    test: Vec<LabeledEntry>,
    blob: BlobInfo,
}

/// Build a scenario from a dataset id, opening the dataset first.
pub fn build_scenario(request: &ScenarioRequest) -> Result<Scenario> {
    let dataset = open_dataset(&request.dataset, &request.dataset_options)?;
    build_scenario_from(dataset.as_ref(), request)
}

pub fn build_scenario_from(dataset: &dyn ImageDataset, request: &ScenarioRequest) -> Result<Scenario> {
    if request.labeled_classes.is_empty() {
        return Err(Error::InvalidArgument("at least one labeled class is required".into()));
    }
    if request.labels_per_class == 0 {
        return Err(Error::InvalidArgument("labels_per_class must be positive".into()));
    }
    let labeled_idx = resolve_classes(dataset, &request.labeled_classes)?;
    let aux_idx = resolve_classes(dataset, &request.aux.classes)?;
    if aux_idx.is_empty() && request.aux.noise == 0 {
        return Err(Error::InvalidArgument("auxiliary pool is empty".into()));
    }

    let mut shared = Vec::new();
    let mut private = Vec::new();
    for (name, &idx) in request.aux.classes.iter().zip(&aux_idx) {
        if labeled_idx.contains(&idx) {
            shared.push(name.clone());
        } else {
            private.push(name.clone());
        }
    }
    let implied = OverlapKind::classify(shared.len(), private.len());
    if implied != request.overlap {
        return Err(Error::OverlapMismatch {
            declared: request.overlap.as_str().to_string(),
            shared: shared.len(),
            private: private.len(),
        });
    }

    let shape = dataset.shape();
    let class_order = |class: usize, split: Split| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..dataset.available(split, class)).collect();
        let lane = (class as u64) << 1 | (split == Split::Test) as u64;
        idx.shuffle(&mut stream_rng(request.seed, Stream::ScenarioSampling, lane));
        idx
    };

    let mut labeled = Vec::new();
    let mut test = Vec::new();
    for (label, &class) in labeled_idx.iter().enumerate() {
        let available = dataset.available(Split::Train, class);
        let aux_take = if aux_idx.contains(&class) { request.aux.per_class.unwrap_or(0) } else { 0 };
        if request.labels_per_class + aux_take > available {
            return Err(Error::InsufficientSamples {
                class: request.labeled_classes[label].clone(),
                requested: request.labels_per_class + aux_take,
                available,
            });
        }
        let order = class_order(class, Split::Train);
        for &i in &order[..request.labels_per_class] {
            labeled.push(LabeledExample {
                id: dataset.sample_id(Split::Train, class, i),
                image: dataset.image(Split::Train, class, i)?,
                label,
            });
        }
        if request.test_per_class > 0 {
            let available = dataset.available(Split::Test, class);
            if request.test_per_class > available {
                return Err(Error::InsufficientSamples {
                    class: request.labeled_classes[label].clone(),
                    requested: request.test_per_class,
                    available,
                });
            }
            for &i in &class_order(class, Split::Test)[..request.test_per_class] {
                test.push(LabeledExample {
                    id: dataset.sample_id(Split::Test, class, i),
                    image: dataset.image(Split::Test, class, i)?,
                    label,
                });
            }
        }
    }

    let mut auxiliary = Vec::new();
    for (name, &class) in request.aux.classes.iter().zip(&aux_idx) {
        let order = class_order(class, Split::Train);
        // labeled classes keep their first `labels_per_class` draws for the labeled set
        let skip = if labeled_idx.contains(&class) { request.labels_per_class } else { 0 };
        let remaining = order.len() - skip;
        let take = request.aux.per_class.unwrap_or(remaining);
        if take > remaining {
            return Err(Error::InsufficientSamples { class: name.clone(), requested: take + skip, available: order.len() });
        }
        let origin = if labeled_idx.contains(&class) { Origin::Shared } else { Origin::Private };
        for &i in &order[skip..skip + take] {
            auxiliary.push(AuxiliaryExample {
                id: dataset.sample_id(Split::Train, class, i),
                image: dataset.image(Split::Train, class, i)?,
                origin,
            });
        }
    }
    if request.aux.noise > 0 {
        auxiliary.extend(make_noise_pool(request.aux.noise, shape, derive_seed(request.seed, Stream::Noise, 0))?);
    }

    Ok(Scenario {
        request: request.clone(),
        shape,
        labeled,
        auxiliary,
        test,
        labeled_classes: request.labeled_classes.clone(),
        aux_shared_classes: shared,
        aux_private_classes: private,
        overlap_kind: implied,
        seed: request.seed,
    })
}

fn resolve_classes(dataset: &dyn ImageDataset, names: &[String]) -> Result<Vec<usize>> {
    let mut seen = BTreeSet::new();
    names
        .iter()
        .map(|n| {
            let idx = dataset.class_index(n)?;
            if !seen.insert(idx) {
                return Err(Error::InvalidArgument(format!("class `{n}` listed twice")));
            }
            Ok(idx)
        })
        .collect()
}

/// Images with every pixel drawn i.i.d. from `U[0, 1)`.
pub fn make_noise_pool(count: usize, shape: ImageShape, seed: u64) -> Result<Vec<AuxiliaryExample>> {
    if count == 0 {
        return Err(Error::InvalidArgument("noise pool count must be positive".into()));
    }
    Ok((0..count)
        .map(|i| {
            let mut rng = stream_rng(seed, Stream::Noise, i as u64);
            let data = (0..shape.len()).map(|_| rng.gen::<f32>()).collect();
            AuxiliaryExample {
                id: format!("noise/{seed}/{i}"),
                image: Image::new(shape, data).expect("shape-sized buffer"),
                origin: Origin::Noise,
            }
        })
        .collect())
}

/// Location of the image blob that accompanies a manifest.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    let blob = scenario.blob_bytes();
    let blob_file = blob_path(path);
    let sha = hex::encode(Sha256::digest(&blob));
    let name = blob_file.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    let manifest = scenario.manifest(name, sha);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&blob_file, &blob).map_err(|e| Error::io(&blob_file, e))?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::corrupt(path, format!("unparseable manifest: {e}")))?;
    match value.get("format").and_then(|v| v.as_str()) {
        Some(SCENARIO_FORMAT) => {}
        _ => return Err(Error::corrupt(path, "missing or unknown format tag")),
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != SCENARIO_VERSION {
        return Err(Error::VersionMismatch { kind: "scenario manifest", found: version, expected: SCENARIO_VERSION });
    }
    let manifest: ScenarioManifest =
        serde_json::from_value(value).map_err(|e| Error::corrupt(path, format!("schema violation: {e}")))?;

    let blob_file = path.with_file_name(&manifest.blob.file);
    let blob = std::fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    if hex::encode(Sha256::digest(&blob)) != manifest.blob.sha256 {
        return Err(Error::corrupt(path, "image blob digest mismatch"));
    }
    let per_image = manifest.shape.len() * 4;
    let expected = manifest.labeled.len() + manifest.auxiliary.len() + manifest.test.len();
    if manifest.blob.images != expected || blob.len() != expected * per_image {
        return Err(Error::corrupt(path, "image blob size does not match sample lists"));
    }

    let mut images = blob.chunks_exact(per_image).map(|chunk| {
        let data = chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Image::new(manifest.shape, data).expect("exact chunk")
    });
    let c = manifest.labeled_classes.len();
    let mut take_labeled = |entries: Vec<LabeledEntry>| -> Result<Vec<LabeledExample>> {
        entries
            .into_iter()
            .map(|e| {
                if e.label >= c {
                    return Err(Error::corrupt(path, format!("label {} out of range for {c} classes", e.label)));
                }
                Ok(LabeledExample { id: e.id, label: e.label, image: images.next().expect("counted") })
            })
            .collect()
    };
    let labeled = take_labeled(manifest.labeled)?;
    let auxiliary: Vec<AuxiliaryExample> = manifest
        .auxiliary
        .into_iter()
        .map(|e| AuxiliaryExample { id: e.id, origin: e.origin, image: images.next().expect("counted") })
        .collect();
    let test = {
        let mut rest = Vec::with_capacity(manifest.test.len());
        for e in manifest.test {
            if e.label >= c {
                return Err(Error::corrupt(path, format!("label {} out of range for {c} classes", e.label)));
            }
            rest.push(LabeledExample { id: e.id, label: e.label, image: images.next().expect("counted") });
        }
        rest
    };

    Ok(Scenario {
        request: manifest.request,
        shape: manifest.shape,
        labeled,
        auxiliary,
        test,
        labeled_classes: manifest.labeled_classes,
        aux_shared_classes: manifest.aux_shared_classes,
        aux_private_classes: manifest.aux_private_classes,
        overlap_kind: manifest.overlap_kind,
        seed: manifest.seed,
    })
}
