//! Data ingestion and batching: directory loading (one subdirectory per
//! class), a deterministic synthetic palm-texture generator, per-class
//! train/test splitting, and class-balanced pair batches for contrastive
//! training.

use crate::error::{Error, Result};
use crate::gray::{decode_gray, encode_png, resize};
use crate::losses::PairLabels;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// One image with its class label.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    /// Grayscale image [h, w] in [0, 1].
    pub image: Tensor,
    pub label: String,
    pub source: Option<PathBuf>,
}

/// An immutable collection of same-shaped labeled images.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    items: Vec<DatasetItem>,
    classes: Vec<String>,
}

impl Dataset {
    pub fn from_items(items: Vec<DatasetItem>) -> Result<Self> {
        if let Some(first) = items.first() {
            let shape = first.image.shape().to_vec();
            for item in &items {
                if item.image.shape() != shape {
                    return Err(Error::Data(format!(
                        "image shape {:?} for {} differs from {:?}",
                        item.image.shape(),
                        item.label,
                        shape
                    )));
                }
            }
        }
        let mut classes: Vec<String> = items.iter().map(|i| i.label.clone()).collect();
        classes.sort();
        classes.dedup();
        Ok(Dataset { items, classes })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Image shape [h, w], or None when empty.
    pub fn image_shape(&self) -> Option<(usize, usize)> {
        self.items.first().map(|i| (i.image.dim(0), i.image.dim(1)))
    }

    /// Item indices grouped by class, classes in sorted order.
    pub fn by_class(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, item) in self.items.iter().enumerate() {
            map.entry(item.label.as_str()).or_default().push(i);
        }
        map
    }

    /// Stacks items into an NHWC batch tensor [n, h, w, 1].
    pub fn batch_of(&self, indices: &[usize]) -> Result<Tensor> {
        let (h, w) = self
            .image_shape()
            .ok_or_else(|| Error::Data("empty dataset".to_string()))?;
        let mut data = Vec::with_capacity(indices.len() * h * w);
        for &i in indices {
            data.extend_from_slice(self.items[i].image.data());
        }
        Tensor::from_vec(vec![indices.len(), h, w, 1], data)
    }
}

/// Per-class split fraction and shuffle seed.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Loads a `root/<class>/<image>` directory tree of PNG/BMP images,
/// optionally resizing to `target_hw`. Ordering is lexicographic over
/// class directories and file names, so repeated loads are identical.
pub fn load_dataset(root: impl AsRef<Path>, target_hw: Option<usize>) -> Result<Dataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", root.display())));
    }
    let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.len() < 2 {
        return Err(Error::Data(format!(
            "{}: need at least 2 class directories, found {}",
            root.display(),
            class_dirs.len()
        )));
    }
    let mut items = Vec::new();
    for dir in &class_dirs {
        let label = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Data(format!("bad class directory name {}", dir.display())))?
            .to_string();
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && matches!(
                        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase),
                        Some(ref ext) if ext == "png" || ext == "bmp"
                    )
            })
            .collect();
        files.sort();
        if files.len() < 2 {
            return Err(Error::Data(format!(
                "class {label}: need at least 2 images, found {}",
                files.len()
            )));
        }
        for f in files {
            let mut image = decode_gray(&f)?;
            if let Some(t) = target_hw {
                image = resize(&image, t, t)?;
            }
            items.push(DatasetItem {
                image,
                label: label.clone(),
                source: Some(f),
            });
        }
    }
    Dataset::from_items(items)
}

/// Writes the dataset back out as `root/<class>/<index>.png`.
pub fn export_dataset(ds: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    std::fs::create_dir_all(root)?;
    let mut per_class: BTreeMap<&str, usize> = BTreeMap::new();
    for item in ds.items() {
        let idx = per_class.entry(item.label.as_str()).or_insert(0);
        let dir = root.join(&item.label);
        std::fs::create_dir_all(&dir)?;
        encode_png(&item.image, dir.join(format!("{idx:04}.png")))?;
        *idx += 1;
    }
    Ok(())
}

// Synthetic palm texture: per class a fixed template of dark line
// strokes over an oriented sinusoidal ridge pattern; per sample a small
// random similarity jitter, additive Gaussian noise, and an illumination
// gain. Everything is derived from (seed, class, sample) so repeated
// calls are bitwise identical.

struct Stroke {
    a: (f64, f64),
    b: (f64, f64),
    depth: f64,
    width: f64,
}

struct ClassTemplate {
    strokes: Vec<Stroke>,
    ridge_dir: (f64, f64),
    ridge_wavelength: f64,
    ridge_phase: f64,
    ridge_amp: f64,
    base: f64,
}

impl ClassTemplate {
    fn generate(rng: &mut ChaCha8Rng) -> Self {
        let n_strokes = rng.random_range(3..=5);
        let strokes = (0..n_strokes)
            .map(|_| Stroke {
                a: (rng.random_range(0.08..0.92), rng.random_range(0.08..0.92)),
                b: (rng.random_range(0.08..0.92), rng.random_range(0.08..0.92)),
                depth: rng.random_range(0.3..0.5),
                width: rng.random_range(0.02..0.05),
            })
            .collect();
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        ClassTemplate {
            strokes,
            ridge_dir: (angle.cos(), angle.sin()),
            ridge_wavelength: rng.random_range(0.08..0.2),
            ridge_phase: rng.random_range(0.0..std::f64::consts::TAU),
            ridge_amp: rng.random_range(0.04..0.08),
            base: rng.random_range(0.78..0.88),
        }
    }

    /// Intensity at normalized coordinates (x, y) in [0, 1]^2.
    fn eval(&self, x: f64, y: f64) -> f64 {
        let phase = (x * self.ridge_dir.0 + y * self.ridge_dir.1) / self.ridge_wavelength;
        let mut v = self.base + self.ridge_amp * (std::f64::consts::TAU * phase + self.ridge_phase).sin();
        for s in &self.strokes {
            let d = point_segment_distance(x, y, s.a, s.b);
            v -= s.depth * (-(d / s.width) * (d / s.width)).exp();
        }
        v
    }
}

fn point_segment_distance(x: f64, y: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((x - a.0) * dx + (y - a.1) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (px, py) = (a.0 + t * dx, a.1 + t * dy);
    ((x - px) * (x - px) + (y - py) * (y - py)).sqrt()
}

const NOISE_SIGMA: f64 = 0.05;

/// Generates a deterministic synthetic dataset of `num_classes` x
/// `per_class` square images.
pub fn gen_synthetic(
    num_classes: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || per_class < 2 {
        return Err(Error::Input(format!(
            "need at least 2 classes and 2 images per class, got {num_classes} x {per_class}"
        )));
    }
    if image_size < 8 {
        return Err(Error::Input(format!("image size {image_size} too small")));
    }
    let label_width = (num_classes - 1).to_string().len().max(3);
    let mut items = Vec::with_capacity(num_classes * per_class);
    let normal = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    for class in 0..num_classes {
        let mut template_rng = ChaCha8Rng::seed_from_u64(seed);
        template_rng.set_stream(1 + class as u64);
        let template = ClassTemplate::generate(&mut template_rng);
        let label = format!("class_{class:0label_width$}");
        for sample in 0..per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1_000_003 + (class * per_class + sample) as u64);
            let theta: f64 = rng.random_range(-0.12..0.12);
            let scale = rng.random_range(0.93..1.07);
            let tx = rng.random_range(-0.04..0.04);
            let ty = rng.random_range(-0.04..0.04);
            let gain = rng.random_range(0.8..1.2);
            let (sin, cos) = theta.sin_cos();
            let mut data = Vec::with_capacity(image_size * image_size);
            for r in 0..image_size {
                let y = (r as f64 + 0.5) / image_size as f64;
                for c in 0..image_size {
                    let x = (c as f64 + 0.5) / image_size as f64;
                    // inverse similarity: undo translation, rotation and
                    // scale about the image center
                    let (cx, cy) = (x - 0.5 - tx, y - 0.5 - ty);
                    let qx = (cx * cos + cy * sin) / scale + 0.5;
                    let qy = (-cx * sin + cy * cos) / scale + 0.5;
                    let clean = template.eval(qx, qy);
                    let v = gain * clean + normal.sample(&mut rng);
                    data.push(v.clamp(0.0, 1.0));
                }
            }
            items.push(DatasetItem {
                image: Tensor::from_vec(vec![image_size, image_size], data)?,
                label: label.clone(),
                source: None,
            });
        }
    }
    Dataset::from_items(items)
}

/// Splits per class at the given fraction: `floor(fraction * n)` items
/// to train, the rest to test, membership shuffled by the seed.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Input(format!(
            "train fraction must be in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let by_class = ds.by_class();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train_items = Vec::new();
    let mut test_items = Vec::new();
    for (label, indices) in by_class {
        if indices.len() < 2 {
            return Err(Error::Data(format!(
                "class {label} has {} items, need at least 2 to split",
                indices.len()
            )));
        }
        let mut shuffled = indices.clone();
        shuffled.shuffle(&mut rng);
        let n_train = ((spec.train_fraction * indices.len() as f64).floor() as usize)
            .clamp(1, indices.len() - 1);
        for (pos, &i) in shuffled.iter().enumerate() {
            if pos < n_train {
                train_items.push(ds.items()[i].clone());
            } else {
                test_items.push(ds.items()[i].clone());
            }
        }
    }
    Ok((Dataset::from_items(train_items)?, Dataset::from_items(test_items)?))
}

/// A class-balanced contrastive batch: `k_classes * m_per_class` images,
/// their labels, and the derived pair-label matrix.
pub struct PairBatch {
    pub images: Tensor,
    pub labels: Vec<String>,
    pub pair_labels: PairLabels,
}

/// Samples a deterministic batch for training step `step`: `k_classes`
/// distinct classes, `m_per_class` distinct items from each.
pub fn sample_pair_batch(
    train: &Dataset,
    k_classes: usize,
    m_per_class: usize,
    seed: u64,
    step: u64,
) -> Result<PairBatch> {
    if k_classes < 1 || m_per_class < 1 {
        return Err(Error::Input("batch dimensions must be positive".to_string()));
    }
    let by_class = train.by_class();
    if by_class.len() < k_classes {
        return Err(Error::Data(format!(
            "need {k_classes} classes, dataset has {}",
            by_class.len()
        )));
    }
    for (label, indices) in &by_class {
        if indices.len() < m_per_class {
            return Err(Error::Data(format!(
                "class {label} has {} items, need {m_per_class} per batch",
                indices.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step.wrapping_add(1));
    let mut class_labels: Vec<&str> = by_class.keys().copied().collect();
    class_labels.shuffle(&mut rng);
    class_labels.truncate(k_classes);
    let mut chosen = Vec::with_capacity(k_classes * m_per_class);
    let mut labels = Vec::with_capacity(k_classes * m_per_class);
    for label in class_labels {
        let mut indices = by_class[label].clone();
        indices.shuffle(&mut rng);
        for &i in indices.iter().take(m_per_class) {
            chosen.push(i);
            labels.push(train.items()[i].label.clone());
        }
    }
    let images = train.batch_of(&chosen)?;
    let pair_labels = PairLabels::from_labels(&labels);
    Ok(PairBatch {
        images,
        labels,
        pair_labels,
    })
}
