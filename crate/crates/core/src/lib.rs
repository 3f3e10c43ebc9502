//! Sampling and exact reconstruction of third-order complex tensors through
//! canonical polyadic decomposition (CPD), with the RETSINA accelerated-fMRI
//! completion algorithms built on top.

pub mod alignment;
pub mod cpd;
pub mod error;
pub mod factors;
pub mod fmri;
pub mod io;
pub mod linalg;
pub mod reconstruct;
pub mod retsina;
pub mod sampling;
pub mod selection;
pub mod sweep;
pub mod synth;
pub mod tensor;

pub use cpd::{cpd, coupled_cpd, CoupledTerm, InitKind, SolveOutcome, SolverConfig};
pub use error::{Error, Result};
pub use factors::{ceil_pow2, cpd_reconstruct, khatri_rao, kruskal_rank, FactorTriple};
pub use selection::SelectionSet;
pub use tensor::{fold, mode_product, nre, unfold, Mode, Tensor3};
