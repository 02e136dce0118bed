//! Labelled image datasets stored as class-named folders of PPM files.

use std::fs;
use std::path::{Path, PathBuf};

use super::ppm::{decode_ppm, resize_bilinear};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// One labelled image, normalized to `(x - 0.5) / 0.5`, shape `[H, W, 3]`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub label: usize,
}

#[derive(Debug)]
pub struct Dataset {
    /// Class names; index = label.
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
    /// Source file per sample, when loaded from disk.
    pub paths: Vec<PathBuf>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

pub fn normalize(x: f32) -> f32 {
    (x - 0.5) / 0.5
}

fn data_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let rd = fs::read_dir(dir).map_err(|e| data_err(dir, e.to_string()))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| data_err(dir, e.to_string()))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.starts_with('.') {
            out.push((name, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Reads one image file and converts it to a normalized `[h, w, 3]` tensor.
pub fn load_image(path: &Path, [h, w]: [usize; 2]) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| data_err(path, e.to_string()))?;
    let img = decode_ppm(&bytes).map_err(|e| data_err(path, e.to_string()))?;
    let pixels = resize_bilinear(&img.pixels, (img.height, img.width), (h, w), 3);
    Tensor::from_vec(&[h, w, 3], pixels.into_iter().map(normalize).collect())
}

/// Loads `root/<class>/<image>` with labels assigned in sorted class-name
/// order and images in sorted file-name order.
pub fn load_image_folder(root: impl AsRef<Path>, size: [usize; 2]) -> Result<Dataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(data_err(root, "not a directory"));
    }
    let classes: Vec<(String, PathBuf)> = sorted_entries(root)?.into_iter().filter(|(_, p)| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(data_err(root, "no class subdirectories"));
    }
    let mut ds = Dataset {
        classes: Vec::new(),
        samples: Vec::new(),
        paths: Vec::new(),
    };
    for (label, (name, dir)) in classes.into_iter().enumerate() {
        let files: Vec<PathBuf> = sorted_entries(&dir)?
            .into_iter()
            .map(|(_, p)| p)
            .filter(|p| p.is_file())
            .collect();
        if files.is_empty() {
            return Err(data_err(&dir, "class directory holds no images"));
        }
        for path in files {
            let image = load_image(&path, size)?;
            ds.samples.push(Sample { image, label });
            ds.paths.push(path);
        }
        ds.classes.push(name);
    }
    Ok(ds)
}
