//! Pseudospectral simulator and verification harness for a two-component
//! nonlocal transport system on the unit circle.
//!
//! The state is a velocity `u` and a density `rho`, both periodic with
//! period one. The velocity mean and the combined energy of `u_x` and `rho`
//! are conserved, and the evolution is driven by a nonlocal term obtained by
//! inverting `mu - d^2/dx^2` (mean minus second derivative). Depending on
//! the initial data the slope of `u` either stays bounded on any horizon or
//! blows up in finite time; the crate simulates both regimes and checks the
//! structural identities that separate them.
//!
//! Module map:
//! - [`spectral`]: periodic grid, Fourier transforms, derivatives, the
//!   nonlocal inverse, interpolation, and dealiasing.
//! - [`dynamics`]: the semi-discrete right-hand side, RK4 stepping with an
//!   adaptive CFL step, and the run loop with observer hooks.
//! - [`diagnostics`]: conserved quantities, per-record norms, inequality
//!   checks, and outcome classification.
//! - [`characteristics`]: flow-map tracks, slope transport along them, the
//!   closed-form slope comparison, and the Lyapunov certificate.
//! - [`scenarios`]: symbolic initial data, shipped presets, hypothesis
//!   validation, breakdown-time estimation, and convergence studies.
//! - [`cli`]: config parsing, the `run`/`check`/`sweep` commands, and
//!   deterministic CSV/JSON output.

pub mod characteristics;
pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod scenarios;
pub mod spectral;

pub use diagnostics::{ConservedSet, DiagnosticsRecord};
pub use dynamics::{MuHSState, Params, StepController};
pub use scenarios::{RunOutcome, ScenarioSpec};
pub use spectral::{Field, PeriodicGrid};
