//! A desk-scale laboratory for offline policy/environment representation
//! learning and zero-shot policy adaptation on parametric point-mass
//! environment families.
//!
//! The pipeline, end to end:
//!
//! 1. [`env`] — families of small continuous-control environments indexed by
//!    a scalar variation (wind angle, charge strength, damping).
//! 2. [`collect`] — PPO-trained collector policies and per-(env, policy)
//!    trajectory collection.
//! 3. [`store`] — the offline experience store with row/column/cell views
//!    and the samplers every later stage draws from.
//! 4. [`repr`] — decoupled environment/policy/behavior embeddings trained
//!    with contrastive, recovery, mutual-information and completeness
//!    objectives.
//! 5. [`pdvf`] — value-function regression over (state, environment
//!    embedding, policy embedding), in nonlinear and quadratic forms.
//! 6. [`adapt`] — online probing of an unseen environment and gradient
//!    ascent over the policy embedding, decoded back into an executable
//!    policy.
//! 7. [`harness`] — the experiment configuration, variant matrix, stage
//!    caching and CSV reporting driven by the `pandr` CLI.
//!
//! All numerics are `f64`; every random draw comes from a named
//! [`rng::stream`], so a rerun with the same config and seed is
//! bit-identical.

pub mod adapt;
pub mod collect;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod pdvf;
pub mod repr;
pub mod rng;
pub mod store;

pub use error::{Error, Result};
