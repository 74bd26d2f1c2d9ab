use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::{Shape3, Tensor};

fn source_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Source {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| source_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| source_err(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// Reads `root/<class>/<image>` trees. Class labels follow the sorted
/// subdirectory names; images are resized nearest-neighbour and scaled to [0, 1].
pub fn load_image_dir(root: &Path, shape: Shape3, class_count: usize) -> Result<Vec<Sample>> {
    if shape.c != 1 && shape.c != 3 {
        return Err(Error::invalid("image directories support 1 or 3 channels"));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.len() != class_count {
        return Err(source_err(
            root,
            format!("found {} class directories, expected {class_count}", class_dirs.len()),
        ));
    }
    let mut samples = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let before = samples.len();
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            let img = image::open(&file).map_err(|e| source_err(&file, e))?;
            let img = img.resize_exact(shape.w as u32, shape.h as u32, FilterType::Nearest);
            let values: Vec<f32> = if shape.c == 1 {
                img.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
            } else {
                img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
            };
            samples.push(Sample {
                features: Tensor::new(vec![shape.h, shape.w, shape.c], values)?,
                label,
            });
        }
        if samples.len() == before {
            return Err(Error::InsufficientSamples(format!("class directory {} is empty", dir.display())));
        }
    }
    Ok(samples)
}
