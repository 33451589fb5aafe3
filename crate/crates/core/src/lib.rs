//! Neighborhood-intersection message passing for bond percolation and for
//! spectral densities of sparse symmetric matrices, with brute-force
//! oracles to check both against.

pub mod error;
pub mod genfn;
pub mod graph;
pub mod neighborhoods;
pub mod oracle;
pub mod percolation;
pub mod rng;
pub mod spectra;

pub use error::{Error, Result};
pub use genfn::{GenValue, Series};
pub use graph::{load_edge_list, load_matrix, NodeId, WeightedGraph};
pub use neighborhoods::{EquivalenceClassing, NeighborhoodSystem, ScheduleOrder};
pub use percolation::{Mode, PercConfig, PercolationReport};
pub use spectra::{NodeFactor, SpectralConfig, SpectrumReport, XGrid};
