//! In-memory image datasets and loaders.
//!
//! Sources:
//! - `synthetic`: a seeded 10-class pattern generator (desk-scale presets)
//! - `cifar10` / `cifar100`: the standard 32x32 binary layouts
//! - `image-dir`: a directory of image files with a CSV label index
//!   (columns `path,label,split`)
//! - `image-folder`: `root/{train,test}/<class-name>/*.png|jpg` resized to
//!   224x224
//!
//! Images are CHW f32 in [0, 1].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::Rng;

use crate::augment::resize_bilinear;
use crate::error::{Error, Result};
use crate::seeding::{self, stream};

#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub images: Vec<Array3<f32>>,
    pub labels: Vec<u32>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Sample indices grouped by class id, ascending.
    pub fn indices_by_class(&self) -> BTreeMap<u32, Vec<usize>> {
        let mut map: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub resolution: usize,
    pub num_classes: usize,
    pub train: SampleSet,
    pub test: SampleSet,
}

impl Dataset {
    fn validate(self) -> Result<Self> {
        for set in [&self.train, &self.test] {
            if set.images.len() != set.labels.len() {
                return Err(Error::Data("image/label count mismatch".into()));
            }
            for &l in &set.labels {
                if l as usize >= self.num_classes {
                    return Err(Error::Data(format!(
                        "label {l} outside [0, {})",
                        self.num_classes
                    )));
                }
            }
        }
        if self.train.is_empty() {
            return Err(Error::Data(format!("dataset '{}' has no training samples", self.name)));
        }
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub resolution: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            per_class_train: 100,
            per_class_test: 40,
            resolution: 32,
        }
    }
}

/// Ten structural motifs; class identity is carried by structure, not
/// color (colors are randomized per sample so color jitter and grayscale
/// augmentations keep the class signal intact).
fn motif_value(class: usize, u: f32, v: f32, params: &[f32]) -> f32 {
    let (p0, p1, p2) = (params[0], params[1], params[2]);
    match class % 10 {
        // horizontal stripes
        0 => (0.5 + 0.5 * ((u * (2.5 + p0) + p1) * std::f32::consts::TAU).sin()).round(),
        // vertical stripes
        1 => (0.5 + 0.5 * ((v * (2.5 + p0) + p1) * std::f32::consts::TAU).sin()).round(),
        // diagonal stripes
        2 => (0.5 + 0.5 * (((u + v) * (2.0 + p0) + p1) * std::f32::consts::TAU).sin()).round(),
        // checkerboard
        3 => {
            let f = 2.0 + p0;
            let a = ((u * f + p1).floor() + (v * f + p2).floor()) as i64;
            if a.rem_euclid(2) == 0 {
                1.0
            } else {
                0.0
            }
        }
        // concentric rings
        4 => {
            let du = u - 0.5 - 0.2 * (p1 - 0.5);
            let dv = v - 0.5 - 0.2 * (p2 - 0.5);
            let r = (du * du + dv * dv).sqrt();
            (0.5 + 0.5 * ((r * (5.0 + 2.0 * p0)) * std::f32::consts::TAU).sin()).round()
        }
        // filled disc
        5 => {
            let du = u - 0.5 - 0.25 * (p1 - 0.5);
            let dv = v - 0.5 - 0.25 * (p2 - 0.5);
            let r = (du * du + dv * dv).sqrt();
            if r < 0.22 + 0.08 * p0 {
                1.0
            } else {
                0.0
            }
        }
        // cross
        6 => {
            let cu = 0.5 + 0.15 * (p1 - 0.5);
            let cv = 0.5 + 0.15 * (p2 - 0.5);
            let t = 0.08 + 0.05 * p0;
            if (u - cu).abs() < t || (v - cv).abs() < t {
                1.0
            } else {
                0.0
            }
        }
        // dot grid
        7 => {
            let f = 3.0 + p0.round();
            let fu = (u * f + p1).fract() - 0.5;
            let fv = (v * f + p2).fract() - 0.5;
            if (fu * fu + fv * fv).sqrt() < 0.22 {
                1.0
            } else {
                0.0
            }
        }
        // oriented linear gradient, thresholded into a half-plane
        8 => {
            let theta = (p0 - 0.5) * 0.9 + 0.78;
            let proj = (u - 0.5) * theta.cos() + (v - 0.5) * theta.sin();
            if proj + 0.15 * (p1 - 0.5) > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        // 2x2 quadrant blocks with jittered split point
        _ => {
            let su = 0.5 + 0.15 * (p1 - 0.5);
            let sv = 0.5 + 0.15 * (p2 - 0.5);
            if (u > su) == (v > sv) {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn synth_image(class: usize, res: usize, rng: &mut rand_chacha::ChaCha12Rng) -> Array3<f32> {
    let params: Vec<f32> = (0..3).map(|_| rng.random::<f32>()).collect();
    // two random colors with guaranteed separation
    let fg: Vec<f32> = (0..3).map(|_| rng.random::<f32>()).collect();
    let mut bg: Vec<f32> = (0..3).map(|_| rng.random::<f32>()).collect();
    let dist: f32 = fg.iter().zip(bg.iter()).map(|(a, b)| (a - b).abs()).sum();
    if dist < 0.9 {
        for c in 0..3 {
            bg[c] = (1.0 - fg[c]).clamp(0.0, 1.0);
        }
    }
    let noise_sigma = 0.03f32;
    let mut img = Array3::<f32>::zeros((3, res, res));
    for y in 0..res {
        for x in 0..res {
            let u = (y as f32 + 0.5) / res as f32;
            let v = (x as f32 + 0.5) / res as f32;
            let m = motif_value(class, u, v, &params);
            for c in 0..3 {
                let noise = (rng.random::<f32>() - 0.5) * 2.0 * noise_sigma;
                img[[c, y, x]] = (bg[c] + (fg[c] - bg[c]) * m + noise).clamp(0.0, 1.0);
            }
        }
    }
    img
}

pub fn synthetic(spec: SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.num_classes == 0 || spec.per_class_train == 0 {
        return Err(Error::Config("synthetic dataset needs classes and samples".into()));
    }
    let mut train = SampleSet::default();
    let mut test = SampleSet::default();
    for class in 0..spec.num_classes {
        for i in 0..spec.per_class_train {
            let mut rng = seeding::rng_for(seed, &[stream::SYNTH, 0, class as u64, i as u64]);
            train.images.push(synth_image(class, spec.resolution, &mut rng));
            train.labels.push(class as u32);
        }
        for i in 0..spec.per_class_test {
            let mut rng = seeding::rng_for(seed, &[stream::SYNTH, 1, class as u64, i as u64]);
            test.images.push(synth_image(class, spec.resolution, &mut rng));
            test.labels.push(class as u32);
        }
    }
    Dataset {
        name: "synthetic".into(),
        resolution: spec.resolution,
        num_classes: spec.num_classes,
        train,
        test,
    }
    .validate()
}

// ---------------------------------------------------------------------------
// CIFAR binary layouts
// ---------------------------------------------------------------------------

fn read_cifar_records(
    path: &Path,
    label_bytes: usize,
    out: &mut SampleSet,
) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| {
        Error::Data(format!("cannot read {}: {e}", path.display()))
    })?;
    let rec = label_bytes + 3072;
    if bytes.len() % rec != 0 {
        return Err(Error::Data(format!(
            "{}: size {} is not a multiple of record size {rec}",
            path.display(),
            bytes.len()
        )));
    }
    for chunk in bytes.chunks_exact(rec) {
        // last label byte is the fine label in the 100-class layout
        let label = chunk[label_bytes - 1] as u32;
        let mut img = Array3::<f32>::zeros((3, 32, 32));
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    img[[c, y, x]] =
                        chunk[label_bytes + c * 1024 + y * 32 + x] as f32 / 255.0;
                }
            }
        }
        out.images.push(img);
        out.labels.push(label);
    }
    Ok(())
}

/// Standard 32x32 10-class binary layout: `data_batch_{1..5}.bin` plus
/// `test_batch.bin`, one label byte per record.
pub fn cifar10(root: &Path) -> Result<Dataset> {
    let mut train = SampleSet::default();
    for i in 1..=5 {
        read_cifar_records(&root.join(format!("data_batch_{i}.bin")), 1, &mut train)?;
    }
    let mut test = SampleSet::default();
    read_cifar_records(&root.join("test_batch.bin"), 1, &mut test)?;
    Dataset {
        name: "cifar10".into(),
        resolution: 32,
        num_classes: 10,
        train,
        test,
    }
    .validate()
}

/// Standard 32x32 100-class binary layout: `train.bin` / `test.bin`, two
/// label bytes per record (coarse then fine); the fine label is used.
pub fn cifar100(root: &Path) -> Result<Dataset> {
    let mut train = SampleSet::default();
    read_cifar_records(&root.join("train.bin"), 2, &mut train)?;
    let mut test = SampleSet::default();
    read_cifar_records(&root.join("test.bin"), 2, &mut test)?;
    Dataset {
        name: "cifar100".into(),
        resolution: 32,
        num_classes: 100,
        train,
        test,
    }
    .validate()
}

// ---------------------------------------------------------------------------
// Generic image ingestion
// ---------------------------------------------------------------------------

fn decode_image(path: &Path, resolution: usize) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Data(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut arr = Array3::<f32>::zeros((3, h, w));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            arr[[c, y as usize, x as usize]] = p.0[c] as f32 / 255.0;
        }
    }
    if h != resolution || w != resolution {
        Ok(resize_bilinear(&arr, resolution, resolution))
    } else {
        Ok(arr)
    }
}

/// Directory of image files plus a CSV label index with header
/// `path,label,split`; `split` is `train` or `test`.
pub fn image_dir(root: &Path, index_file: &Path, resolution: usize) -> Result<Dataset> {
    let text = fs::read_to_string(index_file)
        .map_err(|e| Error::Data(format!("cannot read index {}: {e}", index_file.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty label index".into()))?;
    if header.trim() != "path,label,split" {
        return Err(Error::Data(format!(
            "label index header must be 'path,label,split', got '{header}'"
        )));
    }
    let mut train = SampleSet::default();
    let mut test = SampleSet::default();
    let mut max_label = 0u32;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Data(format!(
                "label index line {}: expected 3 fields, got {}",
                lineno + 2,
                parts.len()
            )));
        }
        let label: u32 = parts[1]
            .parse()
            .map_err(|_| Error::Data(format!("bad label '{}' on line {}", parts[1], lineno + 2)))?;
        max_label = max_label.max(label);
        let img = decode_image(&root.join(parts[0]), resolution)?;
        match parts[2] {
            "train" => {
                train.images.push(img);
                train.labels.push(label);
            }
            "test" => {
                test.images.push(img);
                test.labels.push(label);
            }
            other => {
                return Err(Error::Data(format!(
                    "unknown split '{other}' on line {}",
                    lineno + 2
                )))
            }
        }
    }
    Dataset {
        name: "image-dir".into(),
        resolution,
        num_classes: max_label as usize + 1,
        train,
        test,
    }
    .validate()
}

/// `root/{train,test}/<class-name>/*` layout at 224x224. Class ids are
/// assigned by sorted class-directory name.
pub fn image_folder(root: &Path) -> Result<Dataset> {
    let resolution = 224;
    let train_dir = root.join("train");
    let test_dir = if root.join("test").is_dir() {
        root.join("test")
    } else {
        root.join("val")
    };
    let mut class_names: Vec<String> = fs::read_dir(&train_dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", train_dir.display())))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    class_names.sort();
    if class_names.is_empty() {
        return Err(Error::Data("image-folder has no class directories".into()));
    }
    let load_split = |dir: &Path| -> Result<SampleSet> {
        let mut set = SampleSet::default();
        for (label, class) in class_names.iter().enumerate() {
            let cdir = dir.join(class);
            if !cdir.is_dir() {
                continue;
            }
            let mut files: Vec<_> = fs::read_dir(&cdir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for f in files {
                set.images.push(decode_image(&f, resolution)?);
                set.labels.push(label as u32);
            }
        }
        Ok(set)
    };
    let train = load_split(&train_dir)?;
    let test = load_split(&test_dir)?;
    Dataset {
        name: "image-folder".into(),
        resolution,
        num_classes: class_names.len(),
        train,
        test,
    }
    .validate()
}
