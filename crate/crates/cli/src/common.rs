use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use whitemap::Image;

pub fn positive_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {s}"))
    }
}

/// Image files of a dataset directory: the names listed in `manifest.txt`
/// when present, else every PNG/PGM file sorted by name.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let manifest = dir.join("manifest.txt");
    let files: Vec<PathBuf> = if manifest.is_file() {
        std::fs::read_to_string(&manifest)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| dir.join(l))
            .collect()
    } else {
        let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("png" | "pgm")
                )
            })
            .collect();
        v.sort();
        v
    };
    if files.is_empty() {
        bail!("no images found in {}", dir.display());
    }
    for f in &files {
        if !f.is_file() {
            bail!("listed image {} does not exist", f.display());
        }
    }
    Ok(files)
}

pub fn image_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

pub fn load_cropped(path: &Path, crop: Option<usize>) -> Result<Image> {
    let img = whitemap::io::load_any(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(match crop {
        Some(c) => img.center_crop(c, c),
        None => img,
    })
}

pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t.max(1));
    }
    Ok(b.build()?)
}

pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    Ok(())
}
