pub mod compare;
pub mod eval;
pub mod render;
pub mod synth;
pub mod train;

use std::path::{Path, PathBuf};

use scanpath_forge::autodiff::Tensor;
use scanpath_forge::data::{read_ppm, DatasetRecord};

use crate::error::CliError;

/// Resolves a record's image path relative to the dataset file and loads
/// the raster.
pub fn load_record_image(record: &DatasetRecord, dataset_path: &Path) -> Result<Tensor, CliError> {
    let rel = record.image_path.as_ref().ok_or_else(|| {
        CliError::Usage(format!(
            "record '{}' carries no image_path; this command needs pixels",
            record.image_id
        ))
    })?;
    let base = dataset_path.parent().unwrap_or_else(|| Path::new("."));
    let full: PathBuf = base.join(rel);
    Ok(read_ppm(&full)?)
}
