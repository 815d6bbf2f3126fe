//! Atomic systems, file formats, neighbor search, the label oracle and
//! dataset construction.

pub mod elements;
pub mod extxyz;
pub mod manifest;
pub mod neighbors;
pub mod oracle;
pub mod random;
pub mod reference;
pub mod split;
pub mod system;
pub mod toy;

pub use extxyz::{parse_extxyz, read_extxyz, save_extxyz, write_extxyz};
pub use neighbors::{brute_force, build_neighbor_list, cell_list, NeighborList};
pub use oracle::{oracle_energy_forces, OracleParams};
pub use reference::{fit_reference_energies, reference_sum};
pub use split::{split, DatasetSplit, SplitSizes};
pub use system::AtomicSystem;
pub use toy::{generate_cluster_dataset, generate_toy_datasets, ClusterConfig, ToyConfig, ToyDatasets};
