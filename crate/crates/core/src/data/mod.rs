//! Samples, synthetic generation, file formats and the on-disk dataset layout.
//!
//! ```text
//! <root>/{train,test}/images/<stem>.pgm      input image, 8-bit
//! <root>/{train,test}/masks/<stem>.pgm       ground-truth label map
//! <root>/{train,test}/perturbed/<stem>.gmt   I + delta, raw f64
//! <root>/{train,test}/deltas/<stem>.gmt      delta, raw f64
//! <root>/{train,test}/traces/<stem>.csv      per-iteration perturbation trace
//! ```
//!
//! Perturbed images leave `[0, 1]`, so they are only ever stored raw.

pub mod netpbm;
pub mod synth;
pub mod tensor_io;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::label::LabelMap;
use crate::tensor::Tensor;

pub use synth::{generate_synthetic, ShapeFamily, SynthConfig, SynthDataset};

/// One image with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub mask: LabelMap,
}

/// An input image and the target the translator should produce for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub id: String,
    pub image: Tensor,
    pub target: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
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

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`, expected train or test"))),
        }
    }
}

/// Paths of one split under a dataset root.
#[derive(Clone, Debug)]
pub struct SplitDirs {
    pub root: PathBuf,
}

impl SplitDirs {
    pub fn new(dataset_root: &Path, split: Split) -> Self {
        SplitDirs {
            root: dataset_root.join(split.as_str()),
        }
    }

    pub fn images(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn masks(&self) -> PathBuf {
        self.root.join("masks")
    }

    pub fn perturbed(&self) -> PathBuf {
        self.root.join("perturbed")
    }

    pub fn deltas(&self) -> PathBuf {
        self.root.join("deltas")
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces")
    }
}

/// Writes images and masks of `samples` under `dirs`. Returns written paths.
pub fn write_samples(dirs: &SplitDirs, samples: &[Sample], num_classes: usize) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(2 * samples.len());
    for s in samples {
        let img = dirs.images().join(format!("{}.pgm", s.id));
        fsutil::write_atomic(&img, &netpbm::write_image(&s.image)?)?;
        let mask = dirs.masks().join(format!("{}.pgm", s.id));
        fsutil::write_atomic(&mask, &netpbm::write_label_map(&s.mask, num_classes))?;
        written.push(img);
        written.push(mask);
    }
    Ok(written)
}

pub fn read_split(dirs: &SplitDirs, num_classes: usize) -> Result<Vec<Sample>> {
    load_directory(&dirs.images(), &dirs.masks(), num_classes)
}

fn stem_of(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(s, _)| s)
}

/// Loads every `.pgm`/`.ppm` image in `images_dir` with the `.pgm` mask of
/// the same stem in `masks_dir`. Colour images are converted to grayscale;
/// pixel values are scaled to `[0, 1]`. Output is sorted by stem.
pub fn load_directory(images_dir: &Path, masks_dir: &Path, num_classes: usize) -> Result<Vec<Sample>> {
    let mut images: BTreeMap<String, PathBuf> = BTreeMap::new();
    for ext in ["pgm", "ppm"] {
        for name in fsutil::list_with_extension(images_dir, ext)? {
            images.insert(stem_of(&name).to_string(), images_dir.join(&name));
        }
    }
    let masks: BTreeMap<String, PathBuf> = fsutil::list_with_extension(masks_dir, "pgm")?
        .into_iter()
        .map(|n| (stem_of(&n).to_string(), masks_dir.join(&n)))
        .collect();

    let missing: Vec<&str> = images
        .keys()
        .filter(|s| !masks.contains_key(*s))
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data {
            sample: missing.join(", "),
            detail: format!("no mask in {}", masks_dir.display()),
        });
    }

    let mut samples = Vec::with_capacity(images.len());
    let mut mismatched = Vec::new();
    for (stem, path) in &images {
        let image = netpbm::decode(&fsutil::read(path)?)?.to_grayscale();
        let mask = netpbm::read_label_map(&fsutil::read(&masks[stem])?, num_classes)?;
        let (_, h, w) = image.dims3()?;
        if (h, w) != (mask.height(), mask.width()) {
            mismatched.push(format!("{stem} ({h}x{w} vs {}x{})", mask.height(), mask.width()));
            continue;
        }
        samples.push(Sample {
            id: stem.clone(),
            image,
            mask,
        });
    }
    if !mismatched.is_empty() {
        return Err(Error::Data {
            sample: mismatched.join(", "),
            detail: "image and mask sizes differ".into(),
        });
    }
    Ok(samples)
}

/// Reads `(image, perturbed)` pairs for every sample that has a perturbed file.
pub fn read_pairs(dirs: &SplitDirs, num_classes: usize) -> Result<Vec<Pair>> {
    let perturbed_dir = dirs.perturbed();
    if !perturbed_dir.is_dir() {
        return Err(Error::io(
            &perturbed_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "paired dataset missing; run perturb first"),
        ));
    }
    let samples = read_split(dirs, num_classes)?;
    let mut pairs = Vec::new();
    for s in samples {
        let path = perturbed_dir.join(format!("{}.gmt", s.id));
        if !path.exists() {
            continue;
        }
        let target = tensor_io::decode_tensor(&fsutil::read(&path)?)?;
        s.image.expect_same_shape("read_pairs", &target)?;
        pairs.push(Pair {
            id: s.id,
            image: s.image,
            target,
        });
    }
    Ok(pairs)
}
