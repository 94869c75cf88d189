//! Problem factories.

pub mod libsvm;
pub mod synth;

pub use libsvm::{parse_libsvm, partition_even, LibsvmDataset};
pub use synth::{add_nonconvex_regularizer, generate, generate_client_quadratic, generate_sparsity_matrix, SynthConfig};
