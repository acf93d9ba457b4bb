use std::path::Path;

use imi_core::store::{self, partition_quality, RESPONSES_FILE};
use imi_core::ImiError;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::require;
use crate::{fresh_dir, write_report, CliError, RunConfig};

pub const SUMS_FILE: &str = "SHA256SUMS";
pub const INFO_FILE: &str = "export.json";

#[derive(Debug, Clone, Serialize)]
pub struct ExportInfo {
    pub imi_version: u32,
    pub records: usize,
    pub main: usize,
    pub development: usize,
    pub images: usize,
}

/// Validates `out/dataset` and rewrites it to `out/export` with checksums.
pub fn run(cfg: &RunConfig) -> Result<ExportInfo, CliError> {
    let src = cfg.dataset_dir();
    require(src.join(RESPONSES_FILE), "simulate")?;
    let (records, manifest) = store::read_dataset(&src)?;
    let dst = cfg.export_dir();
    fresh_dir(&dst)?;
    store::write_dataset(&records, &manifest, &store::images_dir(&src), &dst)?;
    let part = partition_quality(&records);
    let info = ExportInfo {
        imi_version: store::IMI_VERSION,
        records: records.len(),
        main: part.main.len(),
        development: part.development.len(),
        images: manifest.image_paths().len(),
    };
    write_report(&dst.join(INFO_FILE), &cfg.hash(), &info)?;
    let sums = checksums(&dst)?;
    std::fs::write(dst.join(SUMS_FILE), sums).map_err(|e| ImiError::io(dst.join(SUMS_FILE), e))?;
    Ok(info)
}

/// `sha256sum`-style lines for every file below `dir`, sorted by path.
pub fn checksums(dir: &Path) -> Result<String, CliError> {
    let mut out = String::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Run(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).expect("walk stays below its root");
        let rel: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
        let rel = rel.join("/");
        if rel == SUMS_FILE {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(|e| ImiError::io(entry.path(), e))?;
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        out.push_str(&format!("{digest}  {rel}\n"));
    }
    Ok(out)
}
