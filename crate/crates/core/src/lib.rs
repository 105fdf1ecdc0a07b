//! Hyperspectral unmixing with multilayer nonnegative matrix factorization.
//!
//! The observation matrix `X` (bands × pixels) is factored as `X ≈ A·S` where
//! `A` holds endmember spectra column-wise and `S` holds per-pixel abundance
//! fractions. Each layer runs sparse multiplicative updates with an
//! L1/2 penalty on both factors and a soft sum-to-one constraint on `S`;
//! layer `l+1` refactors the abundances of layer `l`, and the signature
//! matrix is recovered as the product of every layer's mixing matrix.
//!
//! Besides the solver the crate ships everything needed to run a synthetic
//! study end to end:
//!
//! - [`init`]: VCA-style pure-pixel extraction and seeded random starts,
//! - [`synth`]: block/filter/purity scene synthesis with SNR-calibrated noise,
//! - [`metrics`]: SAD/AAD and their RMS aggregates with optimal matching,
//! - [`io`]: plain-text matrix, library and report formats,
//! - [`bench`]: a seeded Monte-Carlo harness over SNR levels and methods.

pub mod bench;
pub mod data;
pub mod error;
pub mod init;
pub mod io;
pub mod metrics;
pub mod mlnmf;
pub mod nmf;
pub mod seed;
pub mod synth;

pub use data::{
    frobenius_cost, qnorm, reconstruct, AbundanceMatrix, NoiseField, SignatureMatrix,
    SpectralCube,
};
pub use error::{Error, Result};
pub use init::{random_init, vca_endmembers, InitMethod, InitResult};
pub use metrics::{aad, evaluate, match_endmembers, rms_aad, rms_sad, sad, EvalReport};
pub use mlnmf::{compose_signatures, run_mlnmf, MlnmfConfig, UnmixResult};
pub use nmf::{
    alpha_schedule, check_stop, fcls_augment, layer_cost, run_layer, update_abundances,
    update_signatures, LayerConfig, LayerResult, StopReason,
};
pub use synth::{add_noise, generate_scene, GroundTruth, SceneSpec, SpectralLibrary};
