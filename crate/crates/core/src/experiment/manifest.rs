//! Datasets on disk: a directory of PGM/PPM files plus `manifest.csv` with
//! `filename,label` rows. Filenames are relative to the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentError, LabeledImage};
use crate::image_io::{load_image, save_image};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    filename: String,
    label: usize,
}

/// `(filename, label)` pairs of a manifest.
pub fn parse_manifest(bytes: &[u8]) -> Result<Vec<(String, usize)>, ExperimentError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["filename", "label"] {
        return Err(ExperimentError::Manifest(format!(
            "expected header filename,label, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    reader
        .deserialize::<Row>()
        .map(|row| Ok(row.map(|r| (r.filename, r.label))?))
        .collect()
}

/// Loads every image a manifest lists; ids are the filenames.
pub fn load_manifest(path: &Path) -> Result<Vec<LabeledImage>, ExperimentError> {
    let read = |p: &Path| {
        fs::read(p).map_err(|source| ExperimentError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&read(path)?)?
        .into_iter()
        .map(|(filename, label)| {
            let file = base.join(&filename);
            let image = load_image(&read(&file)?).map_err(|source| ExperimentError::Image {
                path: file.clone(),
                source,
            })?;
            Ok(LabeledImage {
                id: filename,
                image,
                label,
            })
        })
        .collect()
}

/// Writes `{id}.ppm` (or `.pgm`) per image and a manifest; returns its path.
pub fn write_dataset(dir: &Path, images: &[LabeledImage]) -> Result<PathBuf, ExperimentError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for item in images {
        let ext = if item.image.channels() == 3 { "ppm" } else { "pgm" };
        let filename = format!("{}.{ext}", item.id);
        let path = dir.join(&filename);
        fs::write(&path, save_image(&item.image)).map_err(io(&path))?;
        w.serialize(Row {
            filename,
            label: item.label,
        })?;
    }
    let manifest = dir.join(MANIFEST_FILE);
    let bytes = w
        .into_inner()
        .map_err(|e| ExperimentError::Csv(e.into_error().into()))?;
    fs::write(&manifest, bytes).map_err(io(&manifest))?;
    Ok(manifest)
}
