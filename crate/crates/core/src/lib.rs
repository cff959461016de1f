//! Numerical study of the weighted Sobolev embedding
//! `W^m_{p,0}(B) -> L_p(B, w)` with the degenerate weight
//! `w(x) = |x|^{mp} (1 + |ln |x||)^{σp}` on the unit ball.
//!
//! The counting functions `ν₀(ε)` and `μ₀(ε)` are computed spectrally at
//! p = 2 (Galerkin on a log chart), certified from below by explicit
//! subspaces for every p, bracketed over annulus decompositions, and fitted
//! against the predicted three-regime rate of the approximation numbers.
//! [`harness`] wires everything into persisted, reproducible experiments.

pub mod asymptotics;
pub mod band;
pub mod bracketing;
pub mod certificates;
pub mod error;
pub mod galerkin;
pub mod geometry;
pub mod harness;
pub mod quad;
pub mod spectral;

pub use asymptotics::{fit_rate, invert_counting, predicted_rate, AkLaw, FitModel, RateFit, Regime, RegimePrediction};
pub use bracketing::{bracketing_check, BracketingReport, CountingSample, Method};
pub use certificates::{CertificateBuilder, EntropyCertificate, Mu0Certificate, SubspaceDescriptor};
pub use error::{Error, FieldError, Result};
pub use galerkin::{assemble_region, AssemblyOptions, DiscretePencil, Grading, Region};
pub use geometry::{EmbeddingParams, LatticePoint, RadialRange, WeightEnclosure};
pub use harness::{run, sweep, ExperimentConfig, ExperimentRecord, Mode, ModeResults};
pub use spectral::{eigs_below, SolverOptions, SpectrumSlice};
