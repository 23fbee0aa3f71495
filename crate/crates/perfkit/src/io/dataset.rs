//! Dataset container and its on-disk format.
//!
//! A dataset directory holds `dataset.csv` (one voxel per line, header
//! `row,col,mask,t=<t1>,...`) and a sidecar `dataset.json` with the AIF
//! constants and the full-precision time grid. Header times are display-grade
//! (6 significant digits); readers take the exact grid from the sidecar.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fmt_g17, fmt_sig6, parse_finite, read_to_string, write_string, IoError};
use crate::kinetics::{AifParams, TimeGrid};

/// Observed concentration series for every voxel of the grid, row-major.
/// Rows outside the mask are carried but ignored by all fitting code.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    nx: usize,
    ny: usize,
    mask: Vec<bool>,
    grid: TimeGrid,
    aif: AifParams,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(
        nx: usize,
        ny: usize,
        mask: Vec<bool>,
        grid: TimeGrid,
        aif: AifParams,
        y: Vec<f64>,
    ) -> Result<Self, IoError> {
        let n = nx * ny;
        if n == 0 {
            return Err(IoError::InvalidDataset("grid dimensions must be at least 1x1".into()));
        }
        if mask.len() != n {
            return Err(IoError::InvalidDataset(format!(
                "mask length {} does not match grid {nx}x{ny}",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(IoError::EmptyMask);
        }
        if y.len() != n * grid.len() {
            return Err(IoError::InvalidDataset(format!(
                "observation matrix has {} values, expected {} voxels x {} times",
                y.len(),
                n,
                grid.len()
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(IoError::InvalidDataset(format!("observation value {pos} is not finite")));
        }
        aif.validate()?;
        Ok(Dataset { nx, ny, mask, grid, aif, y })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn n_voxels(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_times(&self) -> usize {
        self.grid.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn n_masked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn aif(&self) -> &AifParams {
        &self.aif
    }

    pub fn y_voxel(&self, i: usize) -> &[f64] {
        let t = self.grid.len();
        &self.y[i * t..(i + 1) * t]
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    nx: usize,
    ny: usize,
    times: Vec<f64>,
    aif: AifParams,
}

/// Writes `dataset.csv` and `dataset.json` into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), IoError> {
    let meta = DatasetMeta {
        nx: dataset.nx,
        ny: dataset.ny,
        times: dataset.grid.times().to_vec(),
        aif: dataset.aif,
    };
    let json = serde_json::to_string_pretty(&meta).expect("dataset metadata serialises");
    write_string(&dir.join("dataset.json"), &json)?;

    let mut out = String::new();
    out.push_str("row,col,mask");
    for &t in dataset.grid.times() {
        let _ = write!(out, ",t={}", fmt_sig6(t));
    }
    out.push('\n');
    for row in 0..dataset.ny {
        for col in 0..dataset.nx {
            let i = row * dataset.nx + col;
            let _ = write!(out, "{},{},{}", row + 1, col + 1, u8::from(dataset.mask[i]));
            for &v in dataset.y_voxel(i) {
                let _ = write!(out, ",{}", fmt_g17(v));
            }
            out.push('\n');
        }
    }
    write_string(&dir.join("dataset.csv"), &out)
}

/// Reads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let meta_path = dir.join("dataset.json");
    let meta: DatasetMeta = serde_json::from_str(&read_to_string(&meta_path)?).map_err(|e| {
        IoError::Config { path: meta_path.display().to_string(), message: e.to_string() }
    })?;
    let grid = TimeGrid::new(meta.times)?;

    let csv_path = dir.join("dataset.csv");
    let file = csv_path.display().to_string();
    let text = read_to_string(&csv_path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| IoError::Dimension {
        file: file.clone(),
        line: 1,
        message: "missing header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "row" || cols[1] != "col" || cols[2] != "mask" {
        return Err(IoError::Dimension {
            file,
            line: 1,
            message: "header must start with row,col,mask,t=...".into(),
        });
    }
    let t_header = cols.len() - 3;
    if t_header != grid.len() {
        return Err(IoError::Dimension {
            file,
            line: 1,
            message: format!(
                "header lists {t_header} time columns but the sidecar grid has {}",
                grid.len()
            ),
        });
    }

    let n = meta.nx * meta.ny;
    let t = grid.len();
    let mut mask = vec![false; n];
    let mut y = vec![0.0; n * t];
    let mut seen = 0usize;
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 + t {
            return Err(IoError::Dimension {
                file,
                line: lineno,
                message: format!(
                    "voxel row has {} data columns, expected {t}",
                    parts.len().saturating_sub(3)
                ),
            });
        }
        let row: usize = parts[0].trim().parse().map_err(|_| IoError::Parse {
            file: file.clone(),
            line: lineno,
            field: "row".into(),
            message: format!("not an integer: `{}`", parts[0]),
        })?;
        let col: usize = parts[1].trim().parse().map_err(|_| IoError::Parse {
            file: file.clone(),
            line: lineno,
            field: "col".into(),
            message: format!("not an integer: `{}`", parts[1]),
        })?;
        if row == 0 || row > meta.ny || col == 0 || col > meta.nx {
            return Err(IoError::Parse {
                file: file.clone(),
                line: lineno,
                field: "row".into(),
                message: format!("voxel ({row},{col}) outside the {}x{} grid", meta.nx, meta.ny),
            });
        }
        let i = (row - 1) * meta.nx + (col - 1);
        mask[i] = match parts[2].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(IoError::Parse {
                    file: file.clone(),
                    line: lineno,
                    field: "mask".into(),
                    message: format!("mask must be 0 or 1, got `{other}`"),
                })
            }
        };
        for (j, part) in parts[3..].iter().enumerate() {
            y[i * t + j] = parse_finite(part, &file, lineno, &format!("t[{j}]"))?;
        }
        seen += 1;
    }
    if seen != n {
        return Err(IoError::Dimension {
            file,
            line: 0,
            message: format!("found {seen} voxel rows, expected {n}"),
        });
    }
    Dataset::new(meta.nx, meta.ny, mask, grid, meta.aif, y)
}
