//! Parameter-map grids: one CSV per quantity, `ny` rows by `nx` columns,
//! full precision, no header. Cells outside the mask hold 0.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{fmt_g17, parse_finite, read_to_string, write_string, IoError};
use crate::diagnostics::FitSummary;
use crate::phantom::GroundTruth;
use crate::sampler::ModelKind;

/// Every map quantity any model can emit; consumers probe which files exist.
pub const MAP_QUANTITIES: &[&str] = &[
    "k_ep1", "k_ep2", "k_trans1", "k_trans2", "v_p", "v_t1", "v_t2", "sse", "pd", "dic",
    "acceptance", "mask",
];

/// A dense `ny` x `nx` value grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGrid {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl MapGrid {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.nx + col]
    }

    fn from_masked(nx: usize, ny: usize, masked: &[u32], per_masked: &[f64]) -> Self {
        let mut values = vec![0.0; nx * ny];
        for (m, &i) in masked.iter().enumerate() {
            values[i as usize] = per_masked[m];
        }
        MapGrid { nx, ny, values }
    }
}

pub fn map_path(dir: &Path, quantity: &str) -> PathBuf {
    dir.join(format!("{quantity}.csv"))
}

fn write_grid(grid: &MapGrid, path: &Path) -> Result<(), IoError> {
    let mut out = String::new();
    for row in 0..grid.ny {
        for col in 0..grid.nx {
            if col > 0 {
                out.push(',');
            }
            let v = grid.get(row, col);
            if v.is_nan() {
                return Err(IoError::NonFiniteOutput { what: path.display().to_string() });
            }
            out.push_str(&fmt_g17(v));
        }
        out.push('\n');
    }
    write_string(path, &out)
}

/// Reads a value grid written by [`write_maps`] or [`write_truth_maps`].
pub fn read_map(path: &Path) -> Result<MapGrid, IoError> {
    let file = path.display().to_string();
    let text = read_to_string(path)?;
    let mut values = Vec::new();
    let mut nx = 0;
    let mut ny = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if nx == 0 {
            nx = parts.len();
        } else if parts.len() != nx {
            return Err(IoError::Dimension {
                file,
                line: idx + 1,
                message: format!("row has {} columns, expected {nx}", parts.len()),
            });
        }
        for (c, part) in parts.iter().enumerate() {
            values.push(parse_finite(part, &file, idx + 1, &format!("col {}", c + 1))?);
        }
        ny += 1;
    }
    if nx == 0 {
        return Err(IoError::Dimension { file, line: 0, message: "map file is empty".into() });
    }
    Ok(MapGrid { nx, ny, values })
}

fn param_quantity_names(model: ModelKind) -> &'static [&'static str] {
    match model {
        ModelKind::OneComp => &["k_ep1", "k_trans1"],
        ModelKind::TwoComp => &["k_ep1", "k_ep2", "k_trans1", "k_trans2"],
        ModelKind::ExtTofts => &["k_ep1", "k_trans1", "v_p"],
    }
}

/// Writes the full set of parameter and diagnostic maps of a fit, plus
/// `.q10`/`.q90` interval maps for the kinetic quantities. When ground truth
/// is supplied its maps are written alongside.
pub fn write_maps(
    summary: &FitSummary,
    truth: Option<&GroundTruth>,
    dir: &Path,
) -> Result<(), IoError> {
    let (nx, ny, masked) = (summary.nx, summary.ny, &summary.masked);
    let grid = |per_masked: &[f64]| MapGrid::from_masked(nx, ny, masked, per_masked);

    for (p, name) in param_quantity_names(summary.model).iter().enumerate() {
        write_grid(&grid(&summary.median_nat[p]), &map_path(dir, name))?;
        write_grid(&grid(&summary.q10_nat[p]), &dir.join(format!("{name}.q10.csv")))?;
        write_grid(&grid(&summary.q90_nat[p]), &dir.join(format!("{name}.q90.csv")))?;
    }
    for k in 0..summary.model.n_compartments() {
        let name = if k == 0 { "v_t1" } else { "v_t2" };
        write_grid(&grid(&summary.v_t[k]), &map_path(dir, name))?;
        write_grid(&grid(&summary.v_t_q10[k]), &dir.join(format!("{name}.q10.csv")))?;
        write_grid(&grid(&summary.v_t_q90[k]), &dir.join(format!("{name}.q90.csv")))?;
    }
    write_grid(&grid(&summary.sse), &map_path(dir, "sse"))?;
    write_grid(&grid(&summary.pd), &map_path(dir, "pd"))?;
    write_grid(&grid(&summary.dic), &map_path(dir, "dic"))?;
    write_grid(&grid(&summary.mean_accept()), &map_path(dir, "acceptance"))?;
    let mask_values: Vec<f64> = vec![1.0; masked.len()];
    write_grid(&grid(&mask_values), &map_path(dir, "mask"))?;
    if let Some(truth) = truth {
        write_truth_maps(truth, dir)?;
    }
    Ok(())
}

/// Writes `truth_<quantity>.csv` grids and the `truth_blocks.csv` label map.
pub fn write_truth_maps(truth: &GroundTruth, dir: &Path) -> Result<(), IoError> {
    let full = MapGrid { nx: truth.nx, ny: truth.ny, values: Vec::new() };
    let write = |values: &[f64], name: &str| -> Result<(), IoError> {
        let grid = MapGrid { values: values.to_vec(), ..full.clone() };
        write_grid(&grid, &dir.join(format!("truth_{name}.csv")))
    };
    write(&truth.k_ep1, "k_ep1")?;
    write(&truth.k_ep2, "k_ep2")?;
    write(&truth.k_trans1, "k_trans1")?;
    write(&truth.k_trans2, "k_trans2")?;
    write(&truth.v_t1, "v_t1")?;
    write(&truth.v_t2, "v_t2")?;

    let mut out = String::new();
    for row in 0..truth.ny {
        for col in 0..truth.nx {
            if col > 0 {
                out.push(',');
            }
            let label = &truth.block[row * truth.nx + col];
            if label.contains(',') || label.contains('\n') {
                return Err(IoError::NonFiniteOutput { what: format!("block label `{label}`") });
            }
            let _ = write!(out, "{label}");
        }
        out.push('\n');
    }
    write_string(&dir.join("truth_blocks.csv"), &out)
}

/// Reads the block label grid emitted next to a phantom's ground truth.
pub fn read_blocks(path: &Path) -> Result<(usize, usize, Vec<String>), IoError> {
    let file = path.display().to_string();
    let text = read_to_string(path)?;
    let mut labels = Vec::new();
    let mut nx = 0;
    let mut ny = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if nx == 0 {
            nx = parts.len();
        } else if parts.len() != nx {
            return Err(IoError::Dimension {
                file,
                line: idx + 1,
                message: format!("row has {} columns, expected {nx}", parts.len()),
            });
        }
        labels.extend(parts.iter().map(|s| s.to_string()));
        ny += 1;
    }
    Ok((nx, ny, labels))
}
