//! Synthetic 25x25 two-compartment phantom with block-structured ground
//! truth, multiplicative parameter jitter and additive Gaussian noise.
//!
//! The default layout has three two-compartment blocks of different size
//! (one with a radial ramp on the slow exchange rate), a slow one-compartment
//! block and a fast one-compartment block in the lower right.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{Dataset, IoError};
use crate::kinetics::{model_ctc, AifParams, KineticParams, KineticsError, TimeGrid};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom config: {0}")]
    InvalidConfig(String),
    #[error("voxel at row {row}, col {col} is covered by {count} blocks, expected exactly 1")]
    BadTiling { row: usize, col: usize, count: usize },
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Radial ramp on the slow exchange rate: the block's base value at its
/// centre, `k_ep1_at_corner` at the reference corner, linear in Euclidean
/// distance from the centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RampSpec {
    pub k_ep1_at_corner: f64,
    pub corner_row: usize,
    pub corner_col: usize,
}

/// One rectangular block of the ground-truth layout. Rows and columns are
/// 1-indexed inclusive ranges from the top-left corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub label: String,
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    pub k_ep1: f64,
    pub k_ep2: f64,
    pub v_t1: f64,
    pub v_t2: f64,
    #[serde(default)]
    pub ramp: Option<RampSpec>,
}

impl BlockSpec {
    fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.rows.0 && row <= self.rows.1 && col >= self.cols.0 && col <= self.cols.1
    }

    fn k_ep1_at(&self, row: usize, col: usize) -> f64 {
        match self.ramp {
            None => self.k_ep1,
            Some(ramp) => {
                let cr = 0.5 * (self.rows.0 + self.rows.1) as f64;
                let cc = 0.5 * (self.cols.0 + self.cols.1) as f64;
                let d = ((row as f64 - cr).powi(2) + (col as f64 - cc).powi(2)).sqrt();
                let d_corner = ((ramp.corner_row as f64 - cr).powi(2)
                    + (ramp.corner_col as f64 - cc).powi(2))
                .sqrt();
                self.k_ep1 + (ramp.k_ep1_at_corner - self.k_ep1) * d / d_corner
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub nx: usize,
    pub ny: usize,
    pub n_times: usize,
    pub dt: f64,
    pub aif: AifParams,
    pub sigma: f64,
    pub jitter_lo: f64,
    pub jitter_hi: f64,
    pub blocks: Vec<BlockSpec>,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            nx: 25,
            ny: 25,
            n_times: 40,
            dt: 0.15,
            aif: AifParams::tofts(0.2, 0.0),
            sigma: 0.05,
            jitter_lo: 0.8,
            jitter_hi: 1.2,
            blocks: PhantomConfig::paper_blocks(),
            seed: 42,
        }
    }
}

impl PhantomConfig {
    /// The simulation-study layout: blocks A-C are two-compartment mixtures
    /// (k_ep 0.2 and 4, equal volumes) with a ramp toward the lower-left
    /// image corner in C; D is slow one-compartment tissue, E fast
    /// one-compartment tissue in the lower right.
    pub fn paper_blocks() -> Vec<BlockSpec> {
        let two = |label: &str, rows, cols| BlockSpec {
            label: label.to_string(),
            rows,
            cols,
            k_ep1: 0.2,
            k_ep2: 4.0,
            v_t1: 0.5,
            v_t2: 0.5,
            ramp: None,
        };
        vec![
            two("A", (1, 8), (1, 12)),
            two("B", (1, 12), (13, 25)),
            BlockSpec {
                ramp: Some(RampSpec { k_ep1_at_corner: 0.5, corner_row: 25, corner_col: 1 }),
                ..two("C", (9, 25), (1, 12))
            },
            BlockSpec { v_t1: 1.0, v_t2: 0.0, ..two("D", (13, 18), (13, 25)) },
            BlockSpec { v_t1: 0.0, v_t2: 1.0, ..two("E", (19, 25), (13, 25)) },
        ]
    }

    /// No parameter jitter, no observation noise.
    pub fn noiseless(mut self) -> Self {
        self.sigma = 0.0;
        self.jitter_lo = 1.0;
        self.jitter_hi = 1.0;
        self
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.nx == 0 || self.ny == 0 {
            return Err(PhantomError::InvalidConfig("grid must be at least 1x1".into()));
        }
        if self.n_times < 2 || !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(PhantomError::InvalidConfig(format!(
                "need at least 2 times with positive spacing, got {} x {}",
                self.n_times, self.dt
            )));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(PhantomError::InvalidConfig(format!(
                "noise sigma must be nonnegative, got {}",
                self.sigma
            )));
        }
        if !(self.jitter_lo > 0.0 && self.jitter_lo <= self.jitter_hi) {
            return Err(PhantomError::InvalidConfig(format!(
                "jitter bounds must satisfy 0 < lo <= hi, got [{}, {}]",
                self.jitter_lo, self.jitter_hi
            )));
        }
        self.aif.validate()?;
        for b in &self.blocks {
            if b.rows.0 == 0 || b.cols.0 == 0 || b.rows.1 > self.ny || b.cols.1 > self.nx {
                return Err(PhantomError::InvalidConfig(format!(
                    "block {} exceeds the {}x{} grid",
                    b.label, self.nx, self.ny
                )));
            }
            for (name, v) in [
                ("k_ep1", b.k_ep1),
                ("k_ep2", b.k_ep2),
                ("v_t1", b.v_t1),
                ("v_t2", b.v_t2),
            ] {
                if !v.is_finite() || v < 0.0 {
                    return Err(PhantomError::InvalidConfig(format!(
                        "block {}: {name} must be nonnegative, got {v}",
                        b.label
                    )));
                }
            }
        }
        for row in 1..=self.ny {
            for col in 1..=self.nx {
                let count = self.blocks.iter().filter(|b| b.contains(row, col)).count();
                if count != 1 {
                    return Err(PhantomError::BadTiling { row, col, count });
                }
            }
        }
        Ok(())
    }
}

/// Per-voxel true kinetic parameters and block labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub nx: usize,
    pub ny: usize,
    pub k_ep1: Vec<f64>,
    pub k_ep2: Vec<f64>,
    pub k_trans1: Vec<f64>,
    pub k_trans2: Vec<f64>,
    pub v_t1: Vec<f64>,
    pub v_t2: Vec<f64>,
    pub block: Vec<String>,
}

impl GroundTruth {
    pub fn n_voxels(&self) -> usize {
        self.nx * self.ny
    }
}

/// Generates the phantom dataset and its ground truth, deterministically for
/// a given config and seed.
pub fn generate_phantom(config: &PhantomConfig) -> Result<(Dataset, GroundTruth), PhantomError> {
    config.validate()?;
    let grid = TimeGrid::uniform(config.n_times, config.dt)?;
    let n = config.nx * config.ny;
    let t = grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut truth = GroundTruth {
        nx: config.nx,
        ny: config.ny,
        k_ep1: vec![0.0; n],
        k_ep2: vec![0.0; n],
        k_trans1: vec![0.0; n],
        k_trans2: vec![0.0; n],
        v_t1: vec![0.0; n],
        v_t2: vec![0.0; n],
        block: vec![String::new(); n],
    };

    let jitter = |rng: &mut ChaCha8Rng| -> f64 {
        if config.jitter_lo < config.jitter_hi {
            rng.random_range(config.jitter_lo..config.jitter_hi)
        } else {
            config.jitter_lo
        }
    };

    for row in 1..=config.ny {
        for col in 1..=config.nx {
            let i = (row - 1) * config.nx + (col - 1);
            let b = config
                .blocks
                .iter()
                .find(|b| b.contains(row, col))
                .expect("tiling validated above");
            let base_kep1 = b.k_ep1_at(row, col);
            let base_kep2 = b.k_ep2;
            let base_kt1 = base_kep1 * b.v_t1;
            let base_kt2 = base_kep2 * b.v_t2;
            // Independent multiplicative jitter on each of the four
            // parameters; zero transfers stay zero.
            truth.k_ep1[i] = base_kep1 * jitter(&mut rng);
            truth.k_ep2[i] = base_kep2 * jitter(&mut rng);
            truth.k_trans1[i] = base_kt1 * jitter(&mut rng);
            truth.k_trans2[i] = base_kt2 * jitter(&mut rng);
            truth.v_t1[i] = truth.k_trans1[i] / truth.k_ep1[i];
            truth.v_t2[i] = truth.k_trans2[i] / truth.k_ep2[i];
            truth.block[i] = b.label.clone();
        }
    }

    let mut y = vec![0.0; n * t];
    for i in 0..n {
        let params = KineticParams::two_comp_from_rates(
            truth.k_ep1[i],
            truth.k_trans1[i],
            truth.k_ep2[i],
            truth.k_trans2[i],
        );
        let clean = model_ctc(&params, &config.aif, &grid)?;
        for (j, &c) in clean.iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            y[i * t + j] = c + config.sigma * z;
        }
    }

    let mask = vec![true; n];
    let dataset = Dataset::new(config.nx, config.ny, mask, grid, config.aif, y)?;
    Ok((dataset, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::conv_exp;
    use approx::assert_abs_diff_eq;

    #[test]
    fn default_layout_tiles_the_grid() {
        let config = PhantomConfig::default();
        config.validate().unwrap();
        let sizes: Vec<usize> = config
            .blocks
            .iter()
            .map(|b| (b.rows.1 - b.rows.0 + 1) * (b.cols.1 - b.cols.0 + 1))
            .collect();
        assert_eq!(sizes, vec![96, 156, 204, 78, 91]);
        assert_eq!(sizes.iter().sum::<usize>(), 625);
    }

    #[test]
    fn overlapping_blocks_rejected() {
        let mut config = PhantomConfig::default();
        config.blocks[0].rows = (1, 9);
        let err = config.validate().unwrap_err();
        assert!(matches!(err, PhantomError::BadTiling { count: 2, .. }));
    }

    #[test]
    fn noiseless_two_comp_voxel_matches_model_ctc_exactly() {
        let config = PhantomConfig::default().noiseless();
        let (dataset, truth) = generate_phantom(&config).unwrap();
        // Voxel in block A: fixed two-compartment mixture.
        let i = 0;
        assert_eq!(truth.block[i], "A");
        assert_eq!(truth.k_ep1[i], 0.2);
        assert_eq!(truth.k_ep2[i], 4.0);
        assert_eq!(truth.k_trans1[i], 0.1);
        assert_eq!(truth.k_trans2[i], 2.0);
        let params = KineticParams::two_comp_from_rates(0.2, 0.1, 4.0, 2.0);
        let curve = model_ctc(&params, dataset.aif(), dataset.grid()).unwrap();
        assert_eq!(dataset.y_voxel(i), &curve[..]);
    }

    #[test]
    fn one_comp_blocks_have_one_zero_volume() {
        let (_, truth) = generate_phantom(&PhantomConfig::default()).unwrap();
        for i in 0..truth.n_voxels() {
            match truth.block[i].as_str() {
                "D" => {
                    assert_eq!(truth.v_t2[i], 0.0);
                    assert_eq!(truth.k_trans2[i], 0.0);
                    assert!(truth.v_t1[i] > 0.0);
                }
                "E" => {
                    assert_eq!(truth.v_t1[i], 0.0);
                    assert_eq!(truth.k_trans1[i], 0.0);
                    assert!(truth.v_t2[i] > 0.0);
                }
                _ => {
                    assert!(truth.v_t1[i] > 0.0 && truth.v_t2[i] > 0.0);
                }
            }
        }
    }

    #[test]
    fn jitter_stays_within_bounds() {
        let (_, truth) = generate_phantom(&PhantomConfig::default()).unwrap();
        let config = PhantomConfig::default();
        for i in 0..truth.n_voxels() {
            if truth.block[i] == "A" || truth.block[i] == "B" {
                let r1 = truth.k_ep1[i] / 0.2;
                let r2 = truth.k_ep2[i] / 4.0;
                let r3 = truth.k_trans1[i] / 0.1;
                let r4 = truth.k_trans2[i] / 2.0;
                for r in [r1, r2, r3, r4] {
                    assert!(r >= config.jitter_lo && r <= config.jitter_hi);
                }
            }
        }
    }

    #[test]
    fn ramp_is_linear_in_distance_from_block_centre() {
        let config = PhantomConfig::default().noiseless();
        let (_, truth) = generate_phantom(&config).unwrap();
        let block = &config.blocks[2];
        assert_eq!(block.label, "C");
        let cr = 0.5 * (block.rows.0 + block.rows.1) as f64;
        let cc = 0.5 * (block.cols.0 + block.cols.1) as f64;
        let d_corner = ((25.0 - cr).powi(2) + (1.0 - cc).powi(2)).sqrt();
        for row in block.rows.0..=block.rows.1 {
            for col in block.cols.0..=block.cols.1 {
                let i = (row - 1) * config.nx + (col - 1);
                let d = ((row as f64 - cr).powi(2) + (col as f64 - cc).powi(2)).sqrt();
                let expected = 0.2 + 0.3 * d / d_corner;
                assert_abs_diff_eq!(truth.k_ep1[i], expected, epsilon = 1e-12);
                assert!(truth.k_ep1[i] >= 0.2 && truth.k_ep1[i] <= 0.5 + 1e-12);
            }
        }
        // The image's bottom-left corner voxel reaches 0.5 exactly.
        let corner = (25 - 1) * config.nx;
        assert_abs_diff_eq!(truth.k_ep1[corner], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn expected_sse_of_truth_is_t_sigma_squared() {
        let config = PhantomConfig { jitter_lo: 1.0, jitter_hi: 1.0, ..PhantomConfig::default() };
        let (dataset, truth) = generate_phantom(&config).unwrap();
        let mut total = 0.0;
        for i in 0..truth.n_voxels() {
            let clean: Vec<f64> = dataset
                .grid()
                .times()
                .iter()
                .map(|&tj| {
                    conv_exp(dataset.aif(), truth.k_trans1[i], truth.k_ep1[i], tj).unwrap()
                        + conv_exp(dataset.aif(), truth.k_trans2[i], truth.k_ep2[i], tj).unwrap()
                })
                .collect();
            total += dataset
                .y_voxel(i)
                .iter()
                .zip(&clean)
                .map(|(y, c)| (y - c) * (y - c))
                .sum::<f64>();
        }
        let mean_sse = total / truth.n_voxels() as f64;
        // E[SSE] = T sigma^2 = 40 * 0.0025 = 0.1; the mean over 625 voxels
        // has standard error sigma^2 sqrt(2T/625) ~ 0.0009.
        assert_abs_diff_eq!(mean_sse, 0.1, epsilon = 0.004);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (d1, t1) = generate_phantom(&PhantomConfig::default()).unwrap();
        let (d2, t2) = generate_phantom(&PhantomConfig::default()).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(t1, t2);
        let other = PhantomConfig { seed: 43, ..PhantomConfig::default() };
        let (d3, _) = generate_phantom(&other).unwrap();
        assert_ne!(d1, d3);
    }
}
