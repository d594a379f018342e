//! Numerical core for score-based generative modeling with an
//! Ornstein–Uhlenbeck forward process.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature; floating-point intrinsics then come from `libm`.
//!
//! Layout, bottom-up:
//!
//! * [`rng`], [`linalg`], [`assignment`]: counter-based random streams and
//!   small dense linear algebra.
//! * [`targets`]: Gaussian-mixture targets with exact density, gradient and sampler.
//! * [`forward`]: the variance-preserving forward process and its marginals.
//! * [`oracle`]: closed-form time-`t` scores and Jacobians for mixture targets,
//!   plus the regularity property checks.
//! * [`schedule`]: coarse/fine time grids and per-interval architecture sizes.
//! * [`scorenet`]: per-interval tanh networks with the stationary skip term.
//! * [`trainer`]: denoising score matching and Fisher-loss evaluation.
//! * [`sampler`]: backward SDE/ODE integration.
//! * [`metrics`]: empirical Wasserstein-1 distances and moment diagnostics.
//! * [`verify`]: executable checks of the structural results (denoising trick,
//!   marginal reversal, SDE stability).
#![cfg_attr(not(feature = "std"), no_std)]
// `math::Float` is only needed for method resolution without std.
#![cfg_attr(feature = "std", allow(unused_imports))]
// `!(a <= b)` guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod assignment;
pub mod error;
pub mod forward;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod scorenet;
pub mod targets;
pub mod trainer;
pub mod verify;

pub(crate) mod math;

pub use error::{Error, Result};
pub use forward::ForwardSpec;
pub use linalg::Matrix;
pub use rng::Rng;
pub use schedule::TimeSchedule;
pub use scorenet::{ScoreField, ScoreModel, TanhNet};
pub use targets::MixtureTarget;
