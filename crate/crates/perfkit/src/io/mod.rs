//! File formats: datasets, ground truth, parameter maps, sample stores and
//! run configuration.
//!
//! All files are UTF-8 CSV or JSON with LF line endings. Numbers are decimal
//! text; data values are written with 17 significant digits so that every
//! write-then-read pair is an identity. `NaN` is forbidden everywhere.

use std::path::{Path, PathBuf};

use thiserror::Error;

mod config;
mod dataset;
mod maps;
mod samples;

pub use config::{
    read_config, ModelSection, NoiseSection, PhantomSection, PriorsSection, RunConfig,
    SamplerSection,
};
pub use dataset::{read_dataset, write_dataset, Dataset};
pub use maps::{
    map_path, read_blocks, read_map, write_maps, write_truth_maps, MapGrid, MAP_QUANTITIES,
};
pub use samples::write_samples;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: field `{field}`: {message}")]
    Parse { file: String, line: usize, field: String, message: String },
    #[error("{file}:{line}: {message}")]
    Dimension { file: String, line: usize, message: String },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("dataset mask is empty: no voxels inside the region of interest")]
    EmptyMask,
    #[error("config `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("refusing to write non-finite value for `{what}`")]
    NonFiniteOutput { what: String },
    #[error(transparent)]
    Kinetics(#[from] crate::kinetics::KineticsError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }
}

/// 17 significant digits; round-trips every finite f64 exactly.
pub(crate) fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// 6 significant digits for display-grade numbers (header times).
pub(crate) fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    let scale = 10f64.powi(5 - x.abs().log10().floor() as i32);
    format!("{}", (x * scale).round() / scale)
}

pub(crate) fn parse_finite(
    s: &str,
    file: &str,
    line: usize,
    field: &str,
) -> Result<f64, IoError> {
    let v: f64 = s.trim().parse().map_err(|_| IoError::Parse {
        file: file.to_string(),
        line,
        field: field.to_string(),
        message: format!("not a number: `{s}`"),
    })?;
    if !v.is_finite() {
        return Err(IoError::Parse {
            file: file.to_string(),
            line,
            field: field.to_string(),
            message: format!("non-finite value `{s}` is forbidden"),
        });
    }
    Ok(v)
}

pub(crate) fn read_to_string(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn write_string(path: &Path, contents: &str) -> Result<(), IoError> {
    std::fs::write(path, contents).map_err(|e| IoError::io(path, e))
}
