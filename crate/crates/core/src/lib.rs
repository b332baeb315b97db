//! iFCTN tensor decomposition and PAM-based tensor completion.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense storage, unfolding, Kronecker and Khatri-Rao kernels.
//! * [`cherry`]: rank matrices, cherry factors, cherry products and the
//!   iFCTN reconstruction (pairwise-Gram form plus a nested-sum oracle).
//! * [`params`]: storage cost for iFCTN, FCTN, Tucker and TT.
//! * [`solver`]: the proximal alternating minimization completion solver.
//! * [`eval`]: missing-pattern generators and recovery metrics.
//! * [`io`]: text tensor format, rank strings and key=value config files.
//! * [`cli`]: the `cherrynet` command line.

#![allow(clippy::needless_range_loop)]

pub mod cherry;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod params;
pub mod solver;
pub mod tensor;

pub use cherry::{
    build_s, build_z, cherry_product, ifctn_eval_naive, ifctn_reconstruct, materialize_cherry,
    mode_khatri_rao, CherryFactors, CherryTensor, RankMatrix,
};
pub use error::{Error, Result};
pub use eval::{gen_mask, psnr, rmse, rse, ssim, Mask, MaskKind, MaskSpec, MetricsReport};
pub use params::{param_count, ModelRanks};
pub use solver::{pam_solve, CompletionProblem, SolveReport, SolverConfig, TraceRow};
pub use tensor::{fold, khatri_rao, kronecker, unfold, DenseTensor, Matrix};
