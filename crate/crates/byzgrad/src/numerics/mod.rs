//! Shared numerical kernels: dense matrices, the capped-simplex projection,
//! power-iteration eigensolver, seeded RNG streams, and entry samplers.

pub mod eig;
pub mod matrix;
pub mod project;
pub mod rng;
pub mod sample;

pub use eig::{
    canonical_sign, deflated_eigpair, spectral_norm, symmetric_eigen, top_eigpair, EigOptions,
    EigPair,
};
pub use matrix::{axpy, dot, norm2, scale, sub, DenseMatrix, SymmetricMatrix};
pub use project::{project_capped_simplex, ProjectionError};
pub use rng::{derive_seed, RngStream};
pub use sample::{
    gaussian, laplace, sample_gaussian, sample_gaussian_matrix, sample_laplace_matrix,
    LAPLACE_SCALE,
};
