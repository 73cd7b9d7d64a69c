//! Dataset ingestion: MNIST IDX files, the Iris CSV, and seeded synthetic
//! data for toy runs.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::Rng;

use crate::network::{Architecture, LabeledSample, NetworkParameters};
use crate::rng::{derive_rng, DOMAIN_SPLIT, DOMAIN_SYNTHETIC};
use crate::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Open an IDX file, transparently decompressing `.gz` variants. For a base
/// name `f`, tries `f` then `f.gz`.
fn open_idx(dir: &Path, base: &str) -> Result<Box<dyn Read>> {
    let plain = dir.join(base);
    if plain.exists() {
        return Ok(Box::new(BufReader::new(File::open(plain)?)));
    }
    let gz: PathBuf = dir.join(format!("{base}.gz"));
    if gz.exists() {
        return Ok(Box::new(GzDecoder::new(BufReader::new(File::open(gz)?))));
    }
    Err(Error::Dataset(format!(
        "missing {base} (or {base}.gz) under {}",
        dir.display()
    )))
}

fn read_u32_be(r: &mut dyn Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("truncated IDX header".into()))?;
    Ok(u32::from_be_bytes(buf))
}

fn read_idx_images(r: &mut dyn Read) -> Result<Vec<Vec<f64>>> {
    let magic = read_u32_be(r)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(r)? as usize;
    let rows = read_u32_be(r)? as usize;
    let cols = read_u32_be(r)? as usize;
    let dim = rows * cols;
    let mut raw = vec![0u8; count * dim];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format("truncated IDX image data".into()))?;
    Ok(raw
        .chunks_exact(dim)
        .map(|chunk| chunk.iter().map(|&p| p as f64 / 255.0).collect())
        .collect())
}

fn read_idx_labels(r: &mut dyn Read) -> Result<Vec<u8>> {
    let magic = read_u32_be(r)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(r)? as usize;
    let mut raw = vec![0u8; count];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Format("truncated IDX label data".into()))?;
    Ok(raw)
}

fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut y = vec![0.0; classes];
    y[label] = 1.0;
    y
}

fn zip_samples(images: Vec<Vec<f64>>, labels: Vec<u8>, classes: usize) -> Result<Vec<LabeledSample>> {
    if images.len() != labels.len() {
        return Err(Error::Dataset(format!(
            "{} images vs {} labels",
            images.len(),
            labels.len()
        )));
    }
    images
        .into_iter()
        .zip(labels)
        .map(|(x, l)| {
            if (l as usize) >= classes {
                return Err(Error::Dataset(format!("label {l} out of range")));
            }
            Ok(LabeledSample { x, y: one_hot(l as usize, classes) })
        })
        .collect()
}

/// Load the MNIST train/test split from a directory holding the four IDX
/// files (`train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
/// `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`), plain or gzipped.
/// Pixels are scaled to `[0,1]`, labels one-hot encoded over 10 classes.
pub fn load_mnist(dir: &Path) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let train_images = read_idx_images(&mut *open_idx(dir, "train-images-idx3-ubyte")?)?;
    let train_labels = read_idx_labels(&mut *open_idx(dir, "train-labels-idx1-ubyte")?)?;
    let test_images = read_idx_images(&mut *open_idx(dir, "t10k-images-idx3-ubyte")?)?;
    let test_labels = read_idx_labels(&mut *open_idx(dir, "t10k-labels-idx1-ubyte")?)?;
    let train = zip_samples(train_images, train_labels, 10)?;
    let test = zip_samples(test_images, test_labels, 10)?;
    if train.len() != 60_000 || test.len() != 10_000 {
        return Err(Error::Dataset(format!(
            "expected 60000/10000 samples, found {}/{}",
            train.len(),
            test.len()
        )));
    }
    Ok((train, test))
}

const IRIS_SPECIES: [&str; 3] = ["setosa", "versicolor", "virginica"];

/// Load the 150-row Iris CSV and produce a seeded stratified 120/30 split
/// (40/10 per class). Features are standardized to zero mean and unit
/// variance using the training statistics; labels are one-hot over the three
/// species.
pub fn load_iris(path: &Path, seed: u64) -> Result<(Vec<LabeledSample>, Vec<LabeledSample>)> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::Dataset(format!(
                "iris line {}: expected 5 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        // skip a header row
        if lineno == 0 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        let feats = fields[..4]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::Dataset(format!("iris line {}: bad number `{f}`", lineno + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let species = fields[4].trim_start_matches("Iris-");
        let class = IRIS_SPECIES
            .iter()
            .position(|s| *s == species)
            .or_else(|| fields[4].parse::<usize>().ok().filter(|c| *c < 3))
            .ok_or_else(|| {
                Error::Dataset(format!("iris line {}: unknown species `{}`", lineno + 1, fields[4]))
            })?;
        rows.push((feats, class));
    }
    if rows.len() != 150 {
        return Err(Error::Dataset(format!("expected 150 iris rows, got {}", rows.len())));
    }

    // stratified split: shuffle each class, 40 train / 10 test
    let mut rng = derive_rng(seed, &[DOMAIN_SPLIT]);
    let mut train_rows: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut test_rows: Vec<(Vec<f64>, usize)> = Vec::new();
    for class in 0..3 {
        let mut members: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].1 == class).collect();
        if members.len() != 50 {
            return Err(Error::Dataset(format!(
                "class {class} has {} rows, expected 50",
                members.len()
            )));
        }
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        for (k, &i) in members.iter().enumerate() {
            if k < 40 {
                train_rows.push(rows[i].clone());
            } else {
                test_rows.push(rows[i].clone());
            }
        }
    }

    // standardize with training statistics
    let n = train_rows.len() as f64;
    let mut mean = [0.0f64; 4];
    for (x, _) in &train_rows {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut var = [0.0f64; 4];
    for (x, _) in &train_rows {
        for ((v, m), xv) in var.iter_mut().zip(&mean).zip(x) {
            *v += (xv - m) * (xv - m) / n;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| v.sqrt().max(1e-12)).collect();
    let standardize = |rows: Vec<(Vec<f64>, usize)>| -> Vec<LabeledSample> {
        rows.into_iter()
            .map(|(x, class)| LabeledSample {
                x: x.iter().enumerate().map(|(i, v)| (v - mean[i]) / std[i]).collect(),
                y: one_hot(class, 3),
            })
            .collect()
    };
    Ok((standardize(train_rows), standardize(test_rows)))
}

/// Seeded synthetic classification data: inputs are standard normal and the
/// label is the argmax output of a random teacher network of the same
/// architecture, one-hot encoded.
pub fn synthetic_dataset(arch: &Architecture, count: usize, seed: u64) -> Vec<LabeledSample> {
    let teacher = NetworkParameters::standard_init(arch.clone(), seed ^ 0x7EAC);
    let mut rng = derive_rng(seed, &[DOMAIN_SYNTHETIC]);
    (0..count)
        .map(|_| {
            let x: Vec<f64> = (0..arch.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pass =
                crate::network::classical_feedforward(&teacher, crate::network::Activation::Tanh, &x)
                    .unwrap();
            let label = crate::network::argmax(pass.a.last().unwrap());
            LabeledSample { x, y: one_hot(label, arch.output_dim()) }
        })
        .collect()
}
