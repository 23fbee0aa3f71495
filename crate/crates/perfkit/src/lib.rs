//! Voxelwise Bayesian fitting of one- and two-tissue compartment models to
//! dynamic contrast-enhanced image series.
//!
//! The library covers the closed-form kinetic curves ([`kinetics`]), the
//! masked image lattice ([`lattice`]), likelihood and priors ([`model`]) with
//! either independent voxelwise Gaussians or Gaussian-Markov random-field
//! regularisation, a Metropolis-within-Gibbs sampler ([`sampler`]), posterior
//! summaries and complexity diagnostics ([`diagnostics`]), a synthetic
//! phantom ([`phantom`]) and all file formats ([`io`]).

pub mod diagnostics;
pub mod io;
pub mod kinetics;
pub mod lattice;
pub mod model;
pub mod phantom;
pub mod sampler;

pub use diagnostics::{dic, pd_voxel, sse_voxel, summarize_fit, FitSummary};
pub use io::{read_config, read_dataset, write_dataset, write_maps, write_samples, Dataset, RunConfig};
pub use kinetics::{AifParams, KineticParams, TimeGrid};
pub use lattice::Lattice;
pub use model::{NoisePrior, SpatialPriorConfig, VoxelwisePriorConfig};
pub use phantom::{generate_phantom, GroundTruth, PhantomConfig};
pub use sampler::{run_chain, ModelKind, PriorSpec, SampleStore, SamplerConfig};
