use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use recon_core::Sample;

use crate::error::CliError;

const MASK_SUFFIX: &str = "_mask";

/// RGB image resized bilinearly to `width × height`, values in [0, 1].
pub fn load_image(path: &Path, width: usize, height: usize) -> Result<Vec<f64>, CliError> {
    let img = image::open(path).map_err(|e| CliError::io(path, e))?.to_rgb8();
    let img = if img.dimensions() != (width as u32, height as u32) {
        imageops::resize(&img, width as u32, height as u32, FilterType::Triangle)
    } else {
        img
    };
    Ok(img.pixels().flat_map(|p| p.0.map(|c| c as f64 / 255.0)).collect())
}

/// Mask resized by nearest neighbour and binarized at 128.
pub fn load_mask(path: &Path, width: usize, height: usize) -> Result<Vec<f64>, CliError> {
    let img = image::open(path).map_err(|e| CliError::io(path, e))?.to_luma8();
    let img = if img.dimensions() != (width as u32, height as u32) {
        imageops::resize(&img, width as u32, height as u32, FilterType::Nearest)
    } else {
        img
    };
    Ok(img.pixels().map(|p| if p.0[0] >= 128 { 1.0 } else { 0.0 }).collect())
}

pub fn load_sample(image: &Path, mask: &Path, width: usize, height: usize) -> Result<Sample, CliError> {
    let id = image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sample".into());
    Ok(Sample {
        id,
        width,
        height,
        image: load_image(image, width, height)?,
        mask: load_mask(mask, width, height)?,
    })
}

/// `(id, image, mask)` for every `<id>.png` + `<id>_mask.png` pair, sorted by id.
pub fn dataset_pairs(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, CliError> {
    let mut images = BTreeMap::new();
    let mut masks = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let is_png = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("png"))
            .unwrap_or(false);
        if !is_png || !path.is_file() {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        match stem.strip_suffix(MASK_SUFFIX) {
            Some(id) => masks.insert(id.to_string(), path),
            None => images.insert(stem, path),
        };
    }
    for id in masks.keys() {
        if !images.contains_key(id) {
            return Err(CliError::Data(format!("mask for `{id}` has no matching image `{id}.png`")));
        }
    }
    let mut out = Vec::with_capacity(images.len());
    for (id, img) in images {
        let mask = masks
            .remove(&id)
            .ok_or_else(|| CliError::Data(format!("image `{id}` has no mask `{id}{MASK_SUFFIX}.png`")))?;
        out.push((id, img, mask));
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path, width: usize, height: usize) -> Result<Vec<Sample>, CliError> {
    let pairs = dataset_pairs(dir)?;
    if pairs.is_empty() {
        log::warn!("no image/mask pairs in {}", dir.display());
    }
    pairs
        .into_iter()
        .map(|(id, img, mask)| {
            let mut s = load_sample(&img, &mask, width, height)?;
            s.id = id;
            Ok(s)
        })
        .collect()
}

fn to_u8(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn rgb_image(values: &[f64], width: usize, height: usize) -> RgbImage {
    ImageBuffer::from_fn(width as u32, height as u32, |c, r| {
        let i = 3 * (r as usize * width + c as usize);
        Rgb([to_u8(values[i]), to_u8(values[i + 1]), to_u8(values[i + 2])])
    })
}

pub fn gray_image(values: &[f64], width: usize, height: usize) -> GrayImage {
    ImageBuffer::from_fn(width as u32, height as u32, |c, r| Luma([to_u8(values[r as usize * width + c as usize])]))
}

/// Collects outputs in a hidden directory next to the destination and moves
/// them into place only on [`Staging::commit`]; dropping without commit
/// removes everything written so far.
pub struct Staging {
    dir: PathBuf,
    dest: PathBuf,
    files: Vec<PathBuf>,
    committed: bool,
}

impl Staging {
    pub fn new(dest: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dest).map_err(|e| CliError::io(dest, e))?;
        let dir = dest.join(format!(".staging-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        fs::create_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            dir,
            dest: dest.to_path_buf(),
            files: Vec::new(),
            committed: false,
        })
    }

    /// Path inside the staging area for a destination-relative name.
    pub fn path(&mut self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        self.files.push(PathBuf::from(rel));
        Ok(p)
    }

    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.path(rel)?;
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))
    }

    pub fn write_rgb(&mut self, rel: &str, values: &[f64], width: usize, height: usize) -> Result<(), CliError> {
        let p = self.path(rel)?;
        rgb_image(values, width, height).save(&p).map_err(|e| CliError::io(&p, e))
    }

    pub fn write_gray(&mut self, rel: &str, values: &[f64], width: usize, height: usize) -> Result<(), CliError> {
        let p = self.path(rel)?;
        gray_image(values, width, height).save(&p).map_err(|e| CliError::io(&p, e))
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>, CliError> {
        let mut done = Vec::with_capacity(self.files.len());
        for rel in &self.files {
            let (from, to) = (self.dir.join(rel), self.dest.join(rel));
            if let Some(parent) = to.parent() {
                fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
            fs::rename(&from, &to).map_err(|e| CliError::io(&to, e))?;
            done.push(to);
        }
        self.committed = true;
        let _ = fs::remove_dir_all(&self.dir);
        Ok(done)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}
