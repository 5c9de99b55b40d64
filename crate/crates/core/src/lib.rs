//! Markov-switching regular-vine (MS R-vine) copula models.
//!
//! The crate is organised bottom-up:
//!
//! - [`pair_copula`]: bivariate families, h-functions, weighted ML fits.
//! - [`rvine`]: R-vine matrices, vine densities, sampling, stepwise fits.
//! - [`regime_chain`]: Hamilton filter, Kim smoother and an enumeration oracle.
//! - [`ms_em`]: the MS R-vine model and its stepwise EM estimator.
//! - [`bayes_mcmc`]: Metropolis-within-Gibbs posterior sampling, diagnostics and DIC.
//! - [`structure_select`]: Kendall's tau / maximum-spanning-tree structure selection.
//!
//! Data on the copula scale is carried by [`CopulaData`]; all randomness is
//! derived from a single `u64` seed through [`rng::substream`].

pub mod bayes_mcmc;
pub mod data;
pub mod error;
pub mod ms_em;
pub mod optim;
pub mod pair_copula;
pub mod regime_chain;
pub mod rng;
pub mod rvine;
pub mod scenarios;
pub mod special;
pub mod structure_select;

pub use data::CopulaData;
pub use error::{Error, Result};
pub use ms_em::{EmTrace, MsRVineModel};
pub use pair_copula::{CopulaFamily, PairCopula, PairFit, WeightedPairSample};
pub use regime_chain::{FilterResult, RegimeLogDensities, SmootherResult, TransitionMatrix};
pub use rvine::{RVineMatrix, RVineSpec};
