//! Image classification datasets: IDX loading, seeded desk-scale splits and a
//! synthetic generator.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        ImageShape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Images as stored on disk: 8-bit pixels, HWC order, plus byte labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub shape: ImageShape,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.labels
            .iter()
            .copied()
            .max()
            .map_or(0, |m| m as usize + 1)
    }
}

/// Scaled images in [0, 1] with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Subset {
    pub shape: ImageShape,
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Subset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.shape.len();
        &self.images[i * n..(i + 1) * n]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub name: String,
    pub class_count: usize,
    pub train: Subset,
    pub test: Subset,
}

impl DatasetSplit {
    pub fn input_shape(&self) -> ImageShape {
        self.train.shape
    }

    /// Labels in range and pixels in [0, 1] for both subsets.
    pub fn check(&self) -> Result<()> {
        for (name, s) in [("train", &self.train), ("test", &self.test)] {
            if s.images.len() != s.len() * s.shape.len() {
                return Err(Error::config(format!("{name}: image buffer size mismatch")));
            }
            if let Some(l) = s.labels.iter().find(|&&l| l >= self.class_count) {
                return Err(Error::config(format!(
                    "{name}: label {l} outside [0, {})",
                    self.class_count
                )));
            }
            if s.images.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::config(format!("{name}: pixel outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::parse_offset(path, offset as u64, "truncated header"))
}

fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(ImageShape, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse_offset(
            path,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let shape = ImageShape::new(rows, cols, 1);
    let need = count * shape.len();
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(Error::parse_offset(
            path,
            bytes.len() as u64,
            format!(
                "truncated payload: {need} pixel bytes expected, {} present",
                payload.len()
            ),
        ));
    }
    Ok((shape, payload[..need].to_vec()))
}

fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse_offset(
            path,
            0,
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::parse_offset(
            path,
            bytes.len() as u64,
            format!(
                "truncated payload: {count} labels expected, {} present",
                payload.len()
            ),
        ));
    }
    Ok(payload[..count].to_vec())
}

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Files ending in `.gz` are decompressed first.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDataset> {
    let (shape, pixels) = parse_idx_images(&read_file(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_file(labels_path)?, labels_path)?;
    let images = pixels.len() / shape.len().max(1);
    if images != labels.len() {
        return Err(Error::parse_offset(
            labels_path,
            4,
            format!(
                "count mismatch: {images} images in {} but {} labels",
                images_path.display(),
                labels.len()
            ),
        ));
    }
    Ok(RawDataset {
        shape,
        pixels,
        labels,
    })
}

/// Writes `raw` as a pair of uncompressed IDX files. Only single-channel
/// images can be represented.
pub fn write_idx(images_path: &Path, labels_path: &Path, raw: &RawDataset) -> Result<()> {
    if raw.shape.channels != 1 {
        return Err(Error::config(
            "IDX image files hold single-channel images only",
        ));
    }
    let mut img = Vec::with_capacity(16 + raw.pixels.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(raw.len() as u32).to_be_bytes());
    img.extend_from_slice(&(raw.shape.height as u32).to_be_bytes());
    img.extend_from_slice(&(raw.shape.width as u32).to_be_bytes());
    img.extend_from_slice(&raw.pixels);
    let mut lab = Vec::with_capacity(8 + raw.labels.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(raw.len() as u32).to_be_bytes());
    lab.extend_from_slice(&raw.labels);
    std::fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    std::fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}

fn gather(raw: &RawDataset, idx: &[usize]) -> Subset {
    let n = raw.shape.len();
    let mut images = Vec::with_capacity(idx.len() * n);
    for &i in idx {
        images.extend(
            raw.pixels[i * n..(i + 1) * n]
                .iter()
                .map(|&p| p as f32 / 255.0),
        );
    }
    Subset {
        shape: raw.shape,
        images,
        labels: idx.iter().map(|&i| raw.labels[i] as usize).collect(),
    }
}

fn check_classes(class_count: usize) -> Result<()> {
    if class_count < 2 {
        return Err(Error::config(format!(
            "dataset has {class_count} classes, need at least 2"
        )));
    }
    Ok(())
}

/// Draws disjoint train and test subsets from one pool, uniformly without replacement.
pub fn make_split<R: Rng + ?Sized>(
    name: &str,
    raw: &RawDataset,
    train_n: usize,
    test_n: usize,
    rng: &mut R,
) -> Result<DatasetSplit> {
    if train_n + test_n > raw.len() {
        return Err(Error::config(format!(
            "{name}: requested {train_n} + {test_n} samples but only {} available",
            raw.len()
        )));
    }
    let class_count = raw.class_count();
    check_classes(class_count)?;
    let picked = index::sample(rng, raw.len(), train_n + test_n).into_vec();
    Ok(DatasetSplit {
        name: name.to_string(),
        class_count,
        train: gather(raw, &picked[..train_n]),
        test: gather(raw, &picked[train_n..]),
    })
}

/// Subsamples the canonical train and test pools separately.
pub fn make_split_pools<R: Rng + ?Sized>(
    name: &str,
    train: &RawDataset,
    test: &RawDataset,
    train_n: usize,
    test_n: usize,
    rng: &mut R,
) -> Result<DatasetSplit> {
    if train_n > train.len() || test_n > test.len() {
        return Err(Error::config(format!(
            "{name}: requested {train_n}/{test_n} samples but pools hold {}/{}",
            train.len(),
            test.len()
        )));
    }
    if train.shape != test.shape {
        return Err(Error::config(format!(
            "{name}: train and test image shapes differ"
        )));
    }
    let class_count = train.class_count().max(test.class_count());
    check_classes(class_count)?;
    let tr = index::sample(rng, train.len(), train_n).into_vec();
    let te = index::sample(rng, test.len(), test_n).into_vec();
    Ok(DatasetSplit {
        name: name.to_string(),
        class_count,
        train: gather(train, &tr),
        test: gather(test, &te),
    })
}

fn synthetic_subset<R: Rng + ?Sized>(
    class_count: usize,
    per_class: usize,
    shape: ImageShape,
    rng: &mut R,
) -> Subset {
    let mut labels: Vec<usize> = (0..class_count)
        .flat_map(|c| std::iter::repeat(c).take(per_class))
        .collect();
    labels.shuffle(rng);
    let (h, w) = (shape.height as f64, shape.width as f64);
    let radius = 0.3 * h.min(w);
    let sigma = (h.min(w) / 6.0).max(0.75);
    let mut images = Vec::with_capacity(labels.len() * shape.len());
    for &c in &labels {
        let angle = 2.0 * PI * c as f64 / class_count as f64;
        let cy = (h - 1.0) / 2.0 + radius * angle.sin() + rng.gen_range(-0.5..0.5);
        let cx = (w - 1.0) / 2.0 + radius * angle.cos() + rng.gen_range(-0.5..0.5);
        for y in 0..shape.height {
            for x in 0..shape.width {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                let blob = (-d2 / (2.0 * sigma * sigma)).exp();
                for ch in 0..shape.channels {
                    // channel tint varies with class so colour images carry signal too
                    let tint = 0.6 + 0.4 * ((c + ch) % 2) as f64;
                    let v = tint * blob + rng.gen_range(0.0..0.25);
                    images.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    Subset {
        shape,
        images,
        labels,
    }
}

/// Class-conditional blob images: each class places a Gaussian blob at its
/// own position on a ring, plus uniform noise. The train subset holds
/// `per_class` images per class, the test subset half as many (at least one).
pub fn synthetic<R: Rng + ?Sized>(
    class_count: usize,
    per_class: usize,
    height: usize,
    width: usize,
    channels: usize,
    rng: &mut R,
) -> Result<DatasetSplit> {
    check_classes(class_count)?;
    if per_class == 0 || height == 0 || width == 0 || channels == 0 {
        return Err(Error::config(
            "synthetic dataset dimensions must be positive",
        ));
    }
    let shape = ImageShape::new(height, width, channels);
    let train = synthetic_subset(class_count, per_class, shape, rng);
    let test = synthetic_subset(class_count, (per_class / 2).max(1), shape, rng);
    Ok(DatasetSplit {
        name: format!("synthetic{class_count}"),
        class_count,
        train,
        test,
    })
}
