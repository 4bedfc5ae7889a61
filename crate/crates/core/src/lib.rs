//! Quantum-transformer refinement of k-nearest-neighbour clusters.
//!
//! A dense statevector simulator ([`qsim`]) drives hardware-efficient
//! circuits ([`pqc`]) that form the attention and feed-forward blocks of a
//! token encoder ([`qtransformer`]). The encoder scores each member of a kNN
//! cluster ([`clusterset`]); kept members are linked into final clusters and
//! scored with pairwise and BCubed F ([`metrics`]).

pub mod clusterset;
pub mod datagen;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pqc;
pub mod qsim;
pub mod qtransformer;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};
