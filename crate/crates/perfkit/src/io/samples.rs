//! Sample-store checkpoint files: two flat CSVs per chain.
//!
//! `samples_voxels.csv` holds one line per stored draw and masked voxel
//! (`draw,voxel,<log parameters...>,deviance`, voxel being the row-major
//! 0-based index); `samples_global.csv` one line per stored draw with the
//! noise precision and, in spatial mode, the field precisions.

use std::fmt::Write as _;
use std::path::Path;

use super::{fmt_g17, write_string, IoError};
use crate::sampler::SampleStore;

pub fn write_samples(store: &SampleStore, dir: &Path) -> Result<(), IoError> {
    let names = store.model.param_names();

    let mut out = String::from("draw,voxel");
    for name in names {
        let _ = write!(out, ",{name}");
    }
    out.push_str(",deviance\n");
    for d in 0..store.n_draws() {
        for (m, &voxel) in store.masked.iter().enumerate() {
            let _ = write!(out, "{d},{voxel}");
            for p in 0..store.n_params {
                let _ = write!(out, ",{}", fmt_g17(store.param_draw(d, m, p)));
            }
            let _ = write!(out, ",{}", fmt_g17(store.deviance_draw(d, m)));
            out.push('\n');
        }
    }
    write_string(&dir.join("samples_voxels.csv"), &out)?;

    let mut out = String::from("draw,tau_eps");
    for p in 0..store.n_fields {
        let _ = write!(out, ",tau_{}", names[p]);
    }
    out.push('\n');
    for d in 0..store.n_draws() {
        let _ = write!(out, "{d},{}", fmt_g17(store.tau_eps[d]));
        for p in 0..store.n_fields {
            let _ = write!(out, ",{}", fmt_g17(store.tau_fields[d * store.n_fields + p]));
        }
        out.push('\n');
    }
    write_string(&dir.join("samples_global.csv"), &out)
}
