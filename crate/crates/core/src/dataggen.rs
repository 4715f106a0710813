//! Synthetic image datasets with known spectra.
//!
//! * `power_law_field`: Gaussian random field with radial PSD `C / f^omega`.
//! * `periodic_texture`: axis-aligned sinusoids whose period encodes the class.
//! * `blob_scene`: Gaussian bumps on a dark background.
//!
//! Image `i` of a spec draws from its own random stream, so any image can be
//! regenerated alone and batches do not depend on generation order.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::RngExt;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm::GrayImage;
use crate::rng::{domain, stream};
use crate::spectral::{fft2, ifft2, signed_freq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    PowerLawField {
        omega: f64,
        /// Fixed PSD scale. `None` normalizes every image to zero mean and
        /// unit variance instead.
        #[serde(default)]
        c: Option<f64>,
        #[serde(default)]
        class_id: usize,
    },
    PeriodicTexture {
        /// Periods in pixels; period `periods[k]` is class `class_offset + k`.
        periods: Vec<usize>,
        #[serde(default)]
        class_offset: usize,
    },
    BlobScene {
        blobs: usize,
        sigma: f64,
        #[serde(default)]
        class_id: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    pub side: usize,
    pub count: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn power_law(omega: f64, side: usize, count: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::PowerLawField {
                omega,
                c: None,
                class_id: 0,
            },
            side,
            count,
            seed,
        }
    }

    pub fn periodic(periods: Vec<usize>, side: usize, count: usize, seed: u64) -> Self {
        Self {
            kind: DatasetKind::PeriodicTexture {
                periods,
                class_offset: 0,
            },
            side,
            count,
            seed,
        }
    }

    pub fn with_side(&self, side: usize) -> Self {
        Self { side, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 4 || !self.side.is_power_of_two() {
            return Err(Error::Spec(format!("side {} must be a power of two >= 4", self.side)));
        }
        if self.count == 0 {
            return Err(Error::Spec("count must be at least 1".into()));
        }
        match &self.kind {
            DatasetKind::PowerLawField { omega, c, .. } => {
                if !omega.is_finite() || *omega < 0.0 {
                    return Err(Error::Spec(format!("omega {omega} must be finite and >= 0")));
                }
                if let Some(c) = c {
                    if !(*c > 0.0) || !c.is_finite() {
                        return Err(Error::Spec(format!("C {c} must be positive")));
                    }
                }
            }
            DatasetKind::PeriodicTexture { periods, .. } => {
                if periods.is_empty() || periods.iter().any(|&p| p < 2) {
                    return Err(Error::Spec("periods must be non-empty and >= 2 pixels".into()));
                }
            }
            DatasetKind::BlobScene { blobs, sigma, .. } => {
                if *blobs == 0 || !(*sigma > 0.0) || !sigma.is_finite() {
                    return Err(Error::Spec("blob scene needs blobs >= 1 and sigma > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Class ids this spec can emit.
    pub fn classes(&self) -> Vec<usize> {
        match &self.kind {
            DatasetKind::PowerLawField { class_id, .. } | DatasetKind::BlobScene { class_id, .. } => {
                vec![*class_id]
            }
            DatasetKind::PeriodicTexture { periods, class_offset } => {
                (0..periods.len()).map(|k| class_offset + k).collect()
            }
        }
    }

    /// Suggested value range for 8-bit storage.
    pub fn value_range(&self) -> (f64, f64) {
        match self.kind {
            DatasetKind::PowerLawField { .. } => (-4.0, 4.0),
            _ => (-1.0, 1.0),
        }
    }
}

/// Generated images with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Array2<f64>>,
    pub classes: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn side(&self) -> Option<usize> {
        self.images.first().map(|i| i.nrows())
    }

    fn extend(&mut self, other: Dataset) {
        self.images.extend(other.images);
        self.classes.extend(other.classes);
    }
}

/// Generates every image of `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut planner = FftPlanner::new();
    let mut images = Vec::with_capacity(spec.count);
    let mut classes = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let (img, class) = generate_one(spec, i, &mut planner);
        images.push(img);
        classes.push(class);
    }
    Ok(Dataset { images, classes })
}

/// Training mixture of the shipped reference checkpoint: power-law fields as
/// class 0 and periodic textures with periods 4, 8 and 16 as classes 1 to 3.
pub fn reference_mixture(side: usize) -> Vec<DatasetSpec> {
    vec![
        DatasetSpec::power_law(2.0, side, 512, 1),
        DatasetSpec {
            kind: DatasetKind::PeriodicTexture {
                periods: vec![4, 8, 16],
                class_offset: 1,
            },
            side,
            count: 512,
            seed: 2,
        },
    ]
}

/// Concatenation of several specs, in order.
pub fn generate_mix(specs: &[DatasetSpec]) -> Result<Dataset> {
    if specs.is_empty() {
        return Err(Error::Spec("dataset mixture is empty".into()));
    }
    let side = specs[0].side;
    let mut out = Dataset {
        images: Vec::new(),
        classes: Vec::new(),
    };
    for spec in specs {
        if spec.side != side {
            return Err(Error::Spec(format!("mixture mixes sides {side} and {}", spec.side)));
        }
        out.extend(generate(spec)?);
    }
    Ok(out)
}

fn generate_one(spec: &DatasetSpec, index: usize, planner: &mut FftPlanner<f64>) -> (Array2<f64>, usize) {
    let mut rng = stream(spec.seed, domain::DATASET, index as u64);
    let n = spec.side;
    match &spec.kind {
        DatasetKind::PowerLawField { omega, c, class_id } => {
            let white = Array2::from_shape_fn((n, n), |_| StandardNormal.sample(&mut rng));
            let mut freq = fft2(&white, planner);
            for ((i, j), v) in freq.indexed_iter_mut() {
                let fy = signed_freq(i, n);
                let fx = signed_freq(j, n);
                // Amplitude follows the rounded radius, the same binning the
                // radial PSD uses, so each bin's expected power is C / f^omega.
                let r = (fx * fx + fy * fy).sqrt().round();
                let amp = if r == 0.0 { 0.0 } else { r.powf(-omega / 2.0) };
                *v *= amp * c.unwrap_or(1.0).sqrt();
            }
            let mut field = ifft2(&freq, planner).mapv(|z| z.re);
            if c.is_none() {
                let mean = field.mean().unwrap_or(0.0);
                let var = field.mapv(|v| (v - mean) * (v - mean)).mean().unwrap_or(0.0);
                let sd = var.sqrt().max(f64::MIN_POSITIVE);
                field.mapv_inplace(|v| (v - mean) / sd);
            }
            (field, *class_id)
        }
        DatasetKind::PeriodicTexture { periods, class_offset } => {
            let k = rng.random_range(0..periods.len());
            let p = periods[k] as f64;
            let phx = rng.random_range(0.0..TAU);
            let phy = rng.random_range(0.0..TAU);
            let img = Array2::from_shape_fn((n, n), |(y, x)| {
                0.5 * (TAU * x as f64 / p + phx).cos() + 0.5 * (TAU * y as f64 / p + phy).cos()
            });
            (img, class_offset + k)
        }
        DatasetKind::BlobScene { blobs, sigma, class_id } => {
            let centers: Vec<(f64, f64, f64)> = (0..*blobs)
                .map(|_| {
                    (
                        rng.random_range(0.0..n as f64),
                        rng.random_range(0.0..n as f64),
                        rng.random_range(0.5..1.0),
                    )
                })
                .collect();
            let inv = 1.0 / (2.0 * sigma * sigma);
            let img = Array2::from_shape_fn((n, n), |(y, x)| {
                let bump: f64 = centers
                    .iter()
                    .map(|&(cy, cx, a)| {
                        let dy = y as f64 - cy;
                        let dx = x as f64 - cx;
                        a * (-(dx * dx + dy * dy) * inv).exp()
                    })
                    .sum();
                (2.0 * bump - 1.0).min(1.0)
            });
            (img, *class_id)
        }
    }
}

/// One entry of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub file: String,
    pub class: usize,
}

/// `manifest.json` of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub specs: Vec<DatasetSpec>,
    pub value_range: (f64, f64),
    pub files: Vec<DatasetFile>,
}

pub const DATASET_MANIFEST: &str = "manifest.json";

impl DatasetManifest {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_slice(bytes)?;
        let (lo, hi) = m.value_range;
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Format(format!("bad value range [{lo}, {hi}]")));
        }
        for f in &m.files {
            let p = Path::new(&f.file);
            if p.is_absolute() || p.components().count() != 1 {
                return Err(Error::Format(format!(
                    "file entry {:?} must be a bare file name",
                    f.file
                )));
            }
        }
        Ok(m)
    }
}

/// Common storage range of a mixture.
pub fn mixture_range(specs: &[DatasetSpec]) -> (f64, f64) {
    specs
        .iter()
        .map(DatasetSpec::value_range)
        .fold((-1.0, 1.0), |acc, r| (acc.0.min(r.0), acc.1.max(r.1)))
}

/// Writes `dataset` as PGM files plus a manifest. Returns the written paths,
/// manifest last.
pub fn save_dataset(dir: &Path, specs: &[DatasetSpec], dataset: &Dataset) -> Result<Vec<std::path::PathBuf>> {
    save_dataset_in_range(dir, specs, dataset, mixture_range(specs))
}

/// As [`save_dataset`] with an explicit 8-bit storage range.
pub fn save_dataset_in_range(
    dir: &Path,
    specs: &[DatasetSpec],
    dataset: &Dataset,
    range: (f64, f64),
) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(dataset.len());
    let mut written = Vec::with_capacity(dataset.len() + 1);
    for (i, (img, &class)) in dataset.images.iter().zip(&dataset.classes).enumerate() {
        let name = format!("img_{i:05}.pgm");
        let path = dir.join(&name);
        fs::write(&path, GrayImage::from_values(img, range)?.encode())?;
        written.push(path);
        files.push(DatasetFile { file: name, class });
    }
    let manifest = DatasetManifest {
        specs: specs.to_vec(),
        value_range: range,
        files,
    };
    let path = dir.join(DATASET_MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    written.push(path);
    Ok(written)
}

/// Reads a dataset directory written by [`save_dataset`] (or any directory
/// of PGM files with a matching manifest).
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Dataset)> {
    let manifest = DatasetManifest::parse(&fs::read(dir.join(DATASET_MANIFEST))?)?;
    let mut images = Vec::with_capacity(manifest.files.len());
    let mut classes = Vec::with_capacity(manifest.files.len());
    for f in &manifest.files {
        let img = GrayImage::decode(&fs::read(dir.join(&f.file))?)?;
        images.push(img.to_values(manifest.value_range));
        classes.push(f.class);
    }
    if images.is_empty() {
        return Err(Error::EmptyInput(format!("dataset {} has no files", dir.display())));
    }
    Ok((manifest, Dataset { images, classes }))
}
