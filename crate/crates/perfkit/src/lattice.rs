//! First-order neighbourhood structure on a masked 2-D voxel grid.
//!
//! Voxels are indexed row-major; edges connect 4-adjacent voxels that are
//! both inside the mask. Voxels outside the mask carry no edges and are
//! excluded from all statistics.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("mask length {got} does not match grid {nx}x{ny}")]
    MaskLength { nx: usize, ny: usize, got: usize },
    #[error("grid dimensions must be at least 1x1")]
    EmptyGrid,
    #[error("voxel {0} is outside the mask")]
    OutsideMask(usize),
}

/// Immutable lattice: mask, unordered edge list and per-voxel neighbour
/// lists in CSR form.
#[derive(Debug, Clone)]
pub struct Lattice {
    nx: usize,
    ny: usize,
    mask: Vec<bool>,
    edges: Vec<(u32, u32)>,
    neighbor_offsets: Vec<u32>,
    neighbor_list: Vec<u32>,
    masked: Vec<u32>,
}

impl Lattice {
    /// `nx` columns by `ny` rows; `mask` row-major with `nx * ny` entries.
    pub fn new(nx: usize, ny: usize, mask: &[bool]) -> Result<Self, LatticeError> {
        if nx == 0 || ny == 0 {
            return Err(LatticeError::EmptyGrid);
        }
        if mask.len() != nx * ny {
            return Err(LatticeError::MaskLength { nx, ny, got: mask.len() });
        }
        let n = nx * ny;
        let mut edges = Vec::new();
        let mut degree = vec![0u32; n];
        for row in 0..ny {
            for col in 0..nx {
                let i = row * nx + col;
                if !mask[i] {
                    continue;
                }
                // Right and down neighbours only, so each pair appears once.
                if col + 1 < nx && mask[i + 1] {
                    edges.push((i as u32, (i + 1) as u32));
                    degree[i] += 1;
                    degree[i + 1] += 1;
                }
                if row + 1 < ny && mask[i + nx] {
                    edges.push((i as u32, (i + nx) as u32));
                    degree[i] += 1;
                    degree[i + nx] += 1;
                }
            }
        }
        let mut neighbor_offsets = Vec::with_capacity(n + 1);
        neighbor_offsets.push(0u32);
        let mut acc = 0;
        for &d in &degree {
            acc += d;
            neighbor_offsets.push(acc);
        }
        let mut cursor: Vec<u32> = neighbor_offsets[..n].to_vec();
        let mut neighbor_list = vec![0u32; acc as usize];
        for &(i, j) in &edges {
            neighbor_list[cursor[i as usize] as usize] = j;
            cursor[i as usize] += 1;
            neighbor_list[cursor[j as usize] as usize] = i;
            cursor[j as usize] += 1;
        }
        let masked = (0..n).filter(|&i| mask[i]).map(|i| i as u32).collect();
        Ok(Lattice { nx, ny, mask: mask.to_vec(), edges, neighbor_offsets, neighbor_list, masked })
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

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.mask[i]
    }

    /// Masked voxel indices in row-major order.
    pub fn masked(&self) -> &[u32] {
        &self.masked
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        let a = self.neighbor_offsets[i] as usize;
        let b = self.neighbor_offsets[i + 1] as usize;
        &self.neighbor_list[a..b]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }

    /// Sum over edges of the squared field difference,
    /// `sum_{i~j} (field_i - field_j)^2`.
    pub fn pair_diff_sumsq(&self, field: &[f64]) -> f64 {
        assert_eq!(field.len(), self.n_voxels(), "field length must match voxel count");
        self.edges
            .iter()
            .map(|&(i, j)| {
                let d = field[i as usize] - field[j as usize];
                d * d
            })
            .sum()
    }

    /// Squared differences between voxel `i` and its direct neighbours,
    /// `sum_{j in d(i)} (field_i - field_j)^2`.
    pub fn local_diff_sumsq(&self, i: usize, field: &[f64]) -> Result<f64, LatticeError> {
        assert_eq!(field.len(), self.n_voxels(), "field length must match voxel count");
        if i >= self.n_voxels() || !self.mask[i] {
            return Err(LatticeError::OutsideMask(i));
        }
        let fi = field[i];
        Ok(self
            .neighbors(i)
            .iter()
            .map(|&j| {
                let d = fi - field[j as usize];
                d * d
            })
            .sum())
    }
}
