//! LayerNorm as two operators, projection onto the hyperplane orthogonal to
//! the ones vector followed by scaling to norm `sqrt(d)`, and the two
//! consequences for an attention layer that reads normalized keys:
//!
//! * [`geometry`]: the decomposition itself, the explicit projection matrix
//!   and the plane-collapse characterization.
//! * [`selectability`]: an LP-based test of whether a key can ever receive
//!   the strictly highest attention score, plus Monte-Carlo sweeps over
//!   `(n, d)`.
//! * [`attnet`]: a single-head attention network with a hand-written
//!   backward pass, used as the toy transformer.
//! * [`experiments`]: the majority task, heatmaps and keyscans at desk scale.
//! * [`cli`]: the `lngeom` command-line front end.

pub mod attnet;
pub mod cli;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod lp;
pub mod par;
pub mod rng;
pub mod selectability;

pub use error::{Error, Result};
pub use geometry::{Denominator, LayerNormVariant};
pub use par::Exec;
pub use selectability::{KeySet, SelectabilityReport};
