//! Image ingestion, patch extraction, bicubic degradation and paired
//! datasets.

mod io;
pub mod synthetic;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use io::{
    list_images, list_matching, load_gray, load_image, save_gray_16, save_image, save_image_16, IMAGE_EXTENSIONS,
};

use crate::error::{Error, Result};
use crate::image::{Image, RangeTag};
use crate::manifest::Manifest;
use crate::networks::PipelineMode;
use crate::nn::{resize_plane, stream_seed, InterpolationMode};

/// Where and how to cut a paired dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub root: PathBuf,
    /// Glob over file names, e.g. `*.png`.
    pub pattern: String,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub seed: u64,
    pub scale: usize,
    pub mode: PipelineMode,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            root: PathBuf::from("."),
            pattern: "*".into(),
            train_fraction: 0.8,
            val_fraction: 0.2,
            patch_size: 56,
            patches_per_image: 8,
            seed: 0,
            scale: 2,
            mode: PipelineMode::PreInterpolated,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.train_fraction) || (self.train_fraction + self.val_fraction - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions must sum to 1, got {} + {}",
                self.train_fraction, self.val_fraction
            )));
        }
        if self.scale == 0 || self.patch_size == 0 || self.patch_size % (2 * self.scale) != 0 {
            return Err(Error::InvalidConfig(format!(
                "patch size {} must be a positive multiple of 2 x scale {}",
                self.patch_size, self.scale
            )));
        }
        if self.patches_per_image == 0 {
            return Err(Error::InvalidConfig("patches_per_image must be positive".into()));
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("root", self.root.display());
        m.set("pattern", &self.pattern);
        m.set("train_fraction", self.train_fraction);
        m.set("val_fraction", self.val_fraction);
        m.set("patch_size", self.patch_size);
        m.set("patches_per_image", self.patches_per_image);
        m.set("seed", self.seed);
        m.set("scale", self.scale);
        m.set("mode", self.mode);
        m
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let d = DatasetSpec::default();
        let spec = DatasetSpec {
            root: m.get("root").map(PathBuf::from).unwrap_or(d.root),
            pattern: m.get("pattern").map(str::to_string).unwrap_or(d.pattern),
            train_fraction: m.parse_or("train_fraction", d.train_fraction)?,
            val_fraction: m.parse_or("val_fraction", d.val_fraction)?,
            patch_size: m.parse_or("patch_size", d.patch_size)?,
            patches_per_image: m.parse_or("patches_per_image", d.patches_per_image)?,
            seed: m.parse_or("seed", d.seed)?,
            scale: m.parse_or("scale", d.scale)?,
            mode: m.parse_or("mode", d.mode)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Number of files that go to training out of `n`.
    pub fn train_count(&self, n: usize) -> usize {
        ((n as f64 * self.train_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
    }
}

/// A high-resolution patch and its degraded counterpart.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub hr: Image,
    /// `lr_pre` (hr-sized) in pre-interpolated mode, `lr_raw` (hr / s) in
    /// progressive mode.
    pub lr: Image,
    pub mode: PipelineMode,
    pub scale: usize,
    pub source: String,
}

impl PatchPair {
    pub fn lr_pre(&self) -> Option<&Image> {
        (self.mode == PipelineMode::PreInterpolated).then_some(&self.lr)
    }

    pub fn lr_raw(&self) -> Option<&Image> {
        (self.mode == PipelineMode::Progressive).then_some(&self.lr)
    }

    fn check(&self) -> Result<()> {
        let (h, w) = self.hr.shape();
        let s = self.scale;
        if h % (2 * s) != 0 || w % (2 * s) != 0 {
            return Err(Error::IndivisibleDims { height: h, width: w, divisor: 2 * s });
        }
        let expect = match self.mode {
            PipelineMode::PreInterpolated => (h, w),
            PipelineMode::Progressive => (h / s, w / s),
        };
        if self.lr.shape() != expect {
            return Err(Error::ShapeMismatch(format!(
                "lr {:?} does not match {} mode for hr {h}x{w}",
                self.lr.shape(),
                self.mode
            )));
        }
        Ok(())
    }
}

/// `count` seeded random crops of `patch x patch`, all fully inside `img`.
pub fn extract_patches_seeded(img: &Image, patch: usize, count: usize, seed: u64) -> Result<Vec<Image>> {
    let (h, w) = img.shape();
    if h < patch || w < patch {
        return Err(Error::ImageTooSmall { height: h, width: w, patch });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let y = rng.gen_range(0..=h - patch);
            let x = rng.gen_range(0..=w - patch);
            img.crop(y, x, patch, patch)
        })
        .collect()
}

/// Crops for `img`, seeded from the spec seed and the image's source path.
pub fn extract_patches(img: &Image, spec: &DatasetSpec) -> Result<Vec<Image>> {
    let id = img
        .source_path
        .as_ref()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    extract_patches_seeded(img, spec.patch_size, spec.patches_per_image, stream_seed(spec.seed, &id))
}

fn resize(img: &Image, oh: usize, ow: usize) -> Result<Image> {
    let out = resize_plane(img.pixels(), img.height(), img.width(), oh, ow, InterpolationMode::Bicubic);
    Image::clamped(oh, ow, out, img.range())
}

/// Bicubic resize of an image to `oh x ow`, clamped to its range.
pub fn bicubic_resize(img: &Image, oh: usize, ow: usize) -> Result<Image> {
    resize(img, oh, ow)
}

/// Bicubic downsampling by `s`, plus re-upsampling to the original size in
/// pre-interpolated mode.
pub fn degrade(hr: &Image, s: usize, mode: PipelineMode) -> Result<PatchPair> {
    let (h, w) = hr.shape();
    if s == 0 || h % (2 * s) != 0 || w % (2 * s) != 0 {
        return Err(Error::IndivisibleDims { height: h, width: w, divisor: 2 * s.max(1) });
    }
    let small = resize(hr, h / s, w / s)?;
    let lr = match mode {
        PipelineMode::PreInterpolated => resize(&small, h, w)?,
        PipelineMode::Progressive => small,
    };
    let source = hr
        .source_path
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default();
    let pair = PatchPair {
        hr: hr.clone(),
        lr,
        mode,
        scale: s,
        source,
    };
    pair.check()?;
    Ok(pair)
}

/// Training and validation pairs with a file-level split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<PatchPair>,
    pub val: Vec<PatchPair>,
    pub train_sources: Vec<String>,
    pub val_sources: Vec<String>,
}

impl Dataset {
    /// Splits named images, then cuts and degrades patches. Images are
    /// converted to the unit range first.
    pub fn from_images(images: Vec<(String, Image)>, spec: &DatasetSpec) -> Result<Dataset> {
        spec.validate()?;
        if images.len() < 2 {
            return Err(Error::EmptyDataset(format!(
                "{} image(s) found, at least 2 are needed for a train/validation split",
                images.len()
            )));
        }
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(stream_seed(spec.seed, "split")));
        let n_train = spec.train_count(images.len());
        let mut ds = Dataset {
            train: Vec::new(),
            val: Vec::new(),
            train_sources: Vec::new(),
            val_sources: Vec::new(),
        };
        for (rank, &i) in order.iter().enumerate() {
            let (name, img) = &images[i];
            let img = img.to_range(RangeTag::Unit);
            let patches = extract_patches_seeded(&img, spec.patch_size, spec.patches_per_image, stream_seed(spec.seed, name))?;
            let mut pairs = Vec::with_capacity(patches.len());
            for p in patches {
                let mut pair = degrade(&p, spec.scale, spec.mode)?;
                pair.source = name.clone();
                pairs.push(pair);
            }
            if rank < n_train {
                ds.train.extend(pairs);
                ds.train_sources.push(name.clone());
            } else {
                ds.val.extend(pairs);
                ds.val_sources.push(name.clone());
            }
        }
        Ok(ds)
    }
}

/// Loads every matching image under `spec.root` and builds the dataset.
pub fn build_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let files = if spec.root.is_dir() {
        list_matching(&spec.root, Some(&spec.pattern))?
    } else {
        return Err(Error::EmptyDataset(format!("{} is not a directory", spec.root.display())));
    };
    let mut images = Vec::with_capacity(files.len());
    for f in files {
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        images.push((name, load_image(&f)?));
    }
    Dataset::from_images(images, spec)
}
