//! Synthetic two-modality identity dataset.
//!
//! On disk a dataset root holds `manifest.json` (identity and camera tables,
//! per-sample records, identity splits, generation seed, container checksums)
//! and one container per split, `train.bin` / `test.bin`, each holding the
//! arrays `rgb` `[n, 3, H, W]` and `ir` `[n, 1, H, W]` as `f32`. A sample
//! record's `index` is its row in the array of its modality.

mod render;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use render::{grayscale, ir_collapse, render_sample, PALETTE_PARAMS, SHAPE_PARAMS};

use crate::container::{ArrayData, Container};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Ir,
}

impl Modality {
    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Ir => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.bin",
            Split::Test => "test.bin",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub identity_id: u32,
    pub shape_params: Vec<f64>,
    pub palette_params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub camera_id: u32,
    pub modality: Modality,
    pub nuisance_level: f64,
    pub indoor: bool,
}

/// One rendered image with its labels; `image` is `[channels, H, W]` in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub sample_id: u32,
    pub identity_id: u32,
    pub camera_id: u32,
    pub modality: Modality,
    pub image: Tensor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: u32,
    pub identity_id: u32,
    pub camera_id: u32,
    pub modality: Modality,
    pub split: Split,
    pub index: usize,
    pub instance_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub identities: usize,
    pub rgb_cameras: usize,
    pub ir_cameras: usize,
    pub samples_per_camera: usize,
    pub image_size: usize,
    pub train_fraction: f64,
    pub rgb_nuisance: f64,
    pub ir_nuisance: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            identities: 50,
            rgb_cameras: 2,
            ir_cameras: 2,
            samples_per_camera: 6,
            image_size: 32,
            train_fraction: 0.8,
            rgb_nuisance: 0.6,
            ir_nuisance: 0.6,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identities == 0 {
            return Err(Error::config("identities", "must be at least 1"));
        }
        if self.rgb_cameras == 0 {
            return Err(Error::config("rgb_cameras", "at least one RGB camera is required"));
        }
        if self.ir_cameras == 0 {
            return Err(Error::config("ir_cameras", "at least one IR camera is required"));
        }
        if self.samples_per_camera == 0 {
            return Err(Error::config("samples_per_camera", "must be at least 1"));
        }
        if self.image_size < 16 || self.image_size % 8 != 0 {
            return Err(Error::config("image_size", "must be a multiple of 8, at least 16"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config("train_fraction", "must lie in (0, 1)"));
        }
        for (field, v) in [("rgb_nuisance", self.rgb_nuisance), ("ir_nuisance", self.ir_nuisance)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(field, "must lie in [0, 1]"));
            }
        }
        let (train, test) = self.split_sizes();
        if test == 0 {
            return Err(Error::config("train_fraction", "test split empty"));
        }
        if train == 0 {
            return Err(Error::config("train_fraction", "train split empty"));
        }
        Ok(())
    }

    pub fn split_sizes(&self) -> (usize, usize) {
        let train = (self.identities as f64 * self.train_fraction).round() as usize;
        let train = train.min(self.identities);
        (train, self.identities - train)
    }

    /// Camera table: RGB cameras first, then IR. All IR cameras and the first
    /// half of the RGB cameras are indoor; the last RGB camera is always outdoor
    /// when there are at least two.
    pub fn cameras(&self) -> Vec<CameraSpec> {
        let mut cams = Vec::new();
        let indoor_rgb = if self.rgb_cameras >= 2 { self.rgb_cameras / 2 } else { 0 };
        for k in 0..self.rgb_cameras {
            cams.push(CameraSpec {
                camera_id: cams.len() as u32,
                modality: Modality::Rgb,
                nuisance_level: (self.rgb_nuisance * (1.0 + 0.2 * k as f64)).min(1.0),
                indoor: k < indoor_rgb,
            });
        }
        for k in 0..self.ir_cameras {
            cams.push(CameraSpec {
                camera_id: cams.len() as u32,
                modality: Modality::Ir,
                nuisance_level: (self.ir_nuisance * (1.0 + 0.2 * k as f64)).min(1.0),
                indoor: true,
            });
        }
        cams
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: DataConfig,
    pub generation_seed: u64,
    pub identities: Vec<IdentitySpec>,
    pub cameras: Vec<CameraSpec>,
    pub samples: Vec<SampleRecord>,
    pub train_identity_ids: BTreeSet<u32>,
    pub test_identity_ids: BTreeSet<u32>,
    /// Container file name -> 64-bit checksum (hex).
    pub checksums: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn camera(&self, id: u32) -> Option<&CameraSpec> {
        self.cameras.iter().find(|c| c.camera_id == id)
    }

    pub fn identity(&self, id: u32) -> Option<&IdentitySpec> {
        self.identities.iter().find(|i| i.identity_id == id)
    }
}

/// A manifest together with the decoded images, index-aligned with `manifest.samples`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split_samples(&self, split: Split) -> impl Iterator<Item = (&SampleRecord, &Sample)> {
        self.manifest
            .samples
            .iter()
            .zip(&self.samples)
            .filter(move |(r, _)| r.split == split)
    }

    /// Train identity ids in ascending order; position is the classifier label.
    pub fn train_labels(&self) -> Vec<u32> {
        self.manifest.train_identity_ids.iter().copied().collect()
    }
}

fn sample_identity(rng: &mut impl Rng, identity_id: u32) -> IdentitySpec {
    IdentitySpec {
        identity_id,
        shape_params: (0..SHAPE_PARAMS).map(|_| rng.random::<f64>()).collect(),
        palette_params: (0..PALETTE_PARAMS).map(|_| rng.random::<f64>()).collect(),
    }
}

/// Build every sample in memory. Deterministic in `(config, seed)`.
pub fn build_dataset(config: &DataConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut identities: Vec<IdentitySpec> = Vec::with_capacity(config.identities);
    for id in 0..config.identities as u32 {
        let mut rng = seed::rng(seed, "identity", id as u64);
        // shape is the cross-modality identity signal: reject near-duplicates
        let spec = loop {
            let cand = sample_identity(&mut rng, id);
            let distinct = identities.iter().all(|other| {
                let d = cand
                    .shape_params
                    .iter()
                    .zip(&other.shape_params)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                d > 0.15
            });
            if distinct {
                break cand;
            }
        };
        identities.push(spec);
    }

    let mut order: Vec<u32> = (0..config.identities as u32).collect();
    order.shuffle(&mut seed::rng(seed, "split", 0));
    let (n_train, _) = config.split_sizes();
    let train_ids: BTreeSet<u32> = order[..n_train].iter().copied().collect();
    let test_ids: BTreeSet<u32> = order[n_train..].iter().copied().collect();

    let cameras = config.cameras();
    let mut records = Vec::new();
    let mut samples = Vec::new();
    let mut next_index: BTreeMap<(bool, Modality), usize> = BTreeMap::new();
    for ident in &identities {
        let split = if train_ids.contains(&ident.identity_id) { Split::Train } else { Split::Test };
        for cam in &cameras {
            for _ in 0..config.samples_per_camera {
                let sample_id = records.len() as u32;
                let instance_seed = seed::derive(seed, "instance", sample_id as u64);
                let slot = next_index.entry((split == Split::Train, cam.modality)).or_insert(0);
                records.push(SampleRecord {
                    sample_id,
                    identity_id: ident.identity_id,
                    camera_id: cam.camera_id,
                    modality: cam.modality,
                    split,
                    index: *slot,
                    instance_seed,
                });
                *slot += 1;
                samples.push(render_sample(ident, cam, instance_seed, config.image_size, sample_id));
            }
        }
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: FORMAT_VERSION,
            config: config.clone(),
            generation_seed: seed,
            identities,
            cameras,
            samples: records,
            train_identity_ids: train_ids,
            test_identity_ids: test_ids,
            checksums: BTreeMap::new(),
        },
        samples,
    })
}

fn split_container(ds: &Dataset, split: Split) -> Container {
    let size = ds.manifest.config.image_size;
    let mut c = Container::default();
    for modality in [Modality::Rgb, Modality::Ir] {
        let mut data = Vec::new();
        let mut n = 0;
        for (rec, s) in ds.split_samples(split) {
            if rec.modality == modality {
                debug_assert_eq!(rec.index, n);
                data.extend(s.image.data().iter().map(|&v| v as f32));
                n += 1;
            }
        }
        let name = match modality {
            Modality::Rgb => "rgb",
            Modality::Ir => "ir",
        };
        c.push(name, vec![n, modality.channels(), size, size], ArrayData::F32(data));
    }
    c
}

/// Generate a dataset and write it under `root`. Deterministic in `(config, seed)`.
pub fn generate_dataset(config: &DataConfig, seed: u64, root: &Path) -> Result<Dataset> {
    let mut ds = build_dataset(config, seed)?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for split in [Split::Train, Split::Test] {
        let sum = split_container(&ds, split).write(&root.join(split.file_name()))?;
        ds.manifest.checksums.insert(split.file_name().to_string(), sum);
    }
    let json = serde_json::to_vec_pretty(&ds.manifest)?;
    crate::container::write_atomic(&root.join(MANIFEST_FILE), &json)?;
    Ok(ds)
}

/// Load a dataset written by [`generate_dataset`], verifying container checksums.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let path = root.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Load(format!("corrupt manifest {}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Load(format!("unsupported format version {}", manifest.format_version)));
    }
    let size = manifest.config.image_size;
    let mut images: BTreeMap<(Split, Modality), (Vec<f32>, usize)> = BTreeMap::new();
    let mut missing = Vec::new();
    for split in [Split::Train, Split::Test] {
        let file = root.join(split.file_name());
        if !file.exists() {
            missing.extend(manifest.samples.iter().filter(|r| r.split == split).map(|r| r.sample_id));
            continue;
        }
        let checksum = manifest
            .checksums
            .get(split.file_name())
            .ok_or_else(|| Error::Load(format!("manifest has no checksum for {}", split.file_name())))?;
        let c = Container::read(&file, Some(checksum))?;
        for (modality, name) in [(Modality::Rgb, "rgb"), (Modality::Ir, "ir")] {
            let arr = c
                .get(name)
                .ok_or_else(|| Error::Load(format!("{} lacks array {name}", file.display())))?;
            let ArrayData::F32(data) = &arr.data else {
                return Err(Error::Load(format!("{}: array {name} is not f32", file.display())));
            };
            images.insert((split, modality), (data.clone(), arr.shape[0]));
        }
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for rec in &manifest.samples {
        let Some((data, rows)) = images.get(&(rec.split, rec.modality)) else {
            continue;
        };
        if rec.index >= *rows {
            missing.push(rec.sample_id);
            continue;
        }
        let ch = rec.modality.channels();
        let len = ch * size * size;
        let pixels = data[rec.index * len..(rec.index + 1) * len].iter().map(|&v| v as f64).collect();
        samples.push(Sample {
            sample_id: rec.sample_id,
            identity_id: rec.identity_id,
            camera_id: rec.camera_id,
            modality: rec.modality,
            image: Tensor::new(vec![ch, size, size], pixels),
        });
    }
    if !missing.is_empty() {
        missing.sort_unstable();
        let ids: Vec<String> = missing.iter().map(|i| i.to_string()).collect();
        return Err(Error::Load(format!("missing samples: {}", ids.join(","))));
    }
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests;
