//! Optimal stopping of Brownian motion with broken drift.
//!
//! The diffusion `dX = mu(X) dt + dW` has drift `mu1` on the negative
//! half-line and `mu2 > mu1 >= 0` on the nonnegative half-line. The reward
//! is `g(x) = (1 + x)^+` and the discount rate is `r > 0`.
//!
//! Depending on `(mu1, mu2, r)` the stopping set is either a half-line
//! `[c, inf)` or, when `mu2 > mu1 + 1/2` and `r` lies in `[r0, mu2)`, the
//! disconnected set `[c1, c2] U [c3, inf)` whose gap `(c2, c3)` is a
//! continuation "bubble" around the drift break.
//!
//! Module map:
//! - [`model`]: scale, speed and the fundamental solutions `psi`, `phi`.
//! - [`gfuncs`]: the representing functions `G-`, `G+` and their derivatives.
//! - [`solver`]: regime classification, thresholds, bubbles and `r0`.
//! - [`value`]: piecewise value function and optimality checks.
//! - [`mc`]: Euler-Maruyama Monte Carlo oracle.
//! - [`cli`]: the `broken-drift` command line front end.

pub mod cli;
pub mod error;
pub mod exec;
pub mod gfuncs;
pub mod mc;
pub mod model;
pub mod roots;
pub mod solver;
pub mod value;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{DiscountedModel, Grid, ModelParams, Side};
pub use solver::{CriticalRate, Regime, Solver, StoppingRegion, Tolerances};
pub use value::{ValueFunction, VerificationReport};
