//! Evolution core: quasi-linear right-hand side, classical RK4 stepping,
//! CFL-based step control with breakdown-aware termination, and the residual
//! of the slope-integrated form of the velocity equation.
//!
//! The system is integrated in the form
//!
//! ```text
//! u_t   = (u + gamma1) u_x + d_x A^{-1} (2 mu0 u + u_x^2/2 + rho^2/2)
//! rho_t = (u + 2 gamma2) rho_x + u_x rho
//! ```
//!
//! with `A = mu - d_xx` and `mu0 = mean(u)`. Writing the nonlocal term as a
//! fused `d_x A^{-1}` keeps the mean of `u_t` exactly zero, which is the
//! discrete counterpart of the conservation of `mean(u)`; no gauge constant
//! ever needs to be chosen. All quadratic products are formed from 2/3-rule
//! dealiased factors.

use crate::diagnostics::{self, DiagnosticsRecord};
use crate::scenarios::RunOutcome;
use crate::spectral::Field;

use num_complex::Complex64;
use thiserror::Error;

/// Softening added to the CFL speed so a zero-velocity state still steps.
pub const CFL_EPSILON: f64 = 1e-8;

/// Errors from the evolution core.
#[derive(Debug, Error)]
pub enum DynamicsError {
    /// `u` and `rho` live on different grids.
    #[error("u and rho are sampled on different grids")]
    GridMismatch,
    /// A step produced a non-finite sample; the run loop treats this as a
    /// breakdown signal rather than a crash.
    #[error("non-finite sample produced by the step starting at t = {t}")]
    NonFinite { t: f64 },
    /// The controller or run parameters are unusable.
    #[error("invalid run configuration: {0}")]
    ConfigError(String),
}

/// The two drift coefficients of the system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Params {
    /// Whether `gamma1 = 2 gamma2`, the alignment every analytical scenario
    /// in this crate (breakdown and global alike) assumes.
    pub fn gauge_aligned(self) -> bool {
        self.gamma1 == 2.0 * self.gamma2
    }
}

impl Default for Params {
    fn default() -> Self {
        Self {
            gamma1: 0.0,
            gamma2: 0.0,
        }
    }
}

/// Solution snapshot: time plus the pair `(u, rho)` on one shared grid.
#[derive(Debug, Clone)]
pub struct MuHSState {
    pub t: f64,
    pub u: Field,
    pub rho: Field,
}

impl MuHSState {
    /// Bundles a state, rejecting mismatched grids.
    pub fn new(t: f64, u: Field, rho: Field) -> Result<Self, DynamicsError> {
        if u.grid() != rho.grid() {
            return Err(DynamicsError::GridMismatch);
        }
        Ok(Self { t, u, rho })
    }

    /// True when every sample of both components is finite.
    pub fn all_finite(&self) -> bool {
        self.u.samples().iter().all(|v| v.is_finite())
            && self.rho.samples().iter().all(|v| v.is_finite())
    }
}

/// Adaptive step-size policy and breakdown triggers.
#[derive(Debug, Clone, Copy)]
pub struct StepController {
    /// CFL fraction in `(0, 1]`.
    pub cfl_number: f64,
    /// Steps below this abort the run as a breakdown (time-step collapse).
    pub dt_min: f64,
    /// Hard cap on the step size.
    pub dt_max: f64,
    /// Slope level whose crossing terminates the run as a breakdown.
    pub blowup_slope_threshold: f64,
}

impl StepController {
    /// Checks the controller invariants, naming the offending field.
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.cfl_number > 0.0 && self.cfl_number <= 1.0) {
            return Err(DynamicsError::ConfigError(format!(
                "cfl_number must lie in (0, 1], got {}",
                self.cfl_number
            )));
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_max) {
            return Err(DynamicsError::ConfigError(format!(
                "need 0 < dt_min < dt_max, got dt_min = {}, dt_max = {}",
                self.dt_min, self.dt_max
            )));
        }
        if !(self.blowup_slope_threshold > 0.0) {
            return Err(DynamicsError::ConfigError(format!(
                "blowup_slope_threshold must be positive, got {}",
                self.blowup_slope_threshold
            )));
        }
        Ok(())
    }

    /// Advective CFL step: `cfl / (n (|u|_inf + |gamma1| + 2 |gamma2| + eps))`,
    /// capped at `dt_max`.
    pub fn dt(&self, state: &MuHSState, params: Params) -> f64 {
        let n = state.u.grid().n_points() as f64;
        let speed =
            state.u.linf() + params.gamma1.abs() + 2.0 * params.gamma2.abs() + CFL_EPSILON;
        self.dt_max.min(self.cfl_number / (n * speed))
    }
}

impl Default for StepController {
    fn default() -> Self {
        Self {
            cfl_number: 0.5,
            dt_min: 1e-12,
            dt_max: 0.05,
            blowup_slope_threshold: 1e6,
        }
    }
}

/// Verification hooks for the right-hand side.
///
/// `a_inv_scale` multiplies the `A^{-1}` symbol; anything but `1.0` corrupts
/// the nonlocal term on purpose. The checker uses this to prove its
/// consistency tests can actually detect a broken inverse — production paths
/// always run with the default.
#[derive(Debug, Clone, Copy)]
pub struct RhsOptions {
    pub a_inv_scale: f64,
}

impl Default for RhsOptions {
    fn default() -> Self {
        Self { a_inv_scale: 1.0 }
    }
}

/// Right-hand side of the evolution system.
///
/// The returned `du_dt` has exactly zero mean: the nonlocal term is built
/// mean-free by construction and the advective part `(u + gamma1) u_x` is
/// projected, discarding only round-off (its analytic mean vanishes, and
/// dealiased factors keep the discrete zero mode alias-free).
pub fn rhs(state: &MuHSState, params: Params) -> Result<(Field, Field), DynamicsError> {
    rhs_with(state, params, RhsOptions::default())
}

/// [`rhs`] with verification hooks applied.
pub fn rhs_with(
    state: &MuHSState,
    params: Params,
    opts: RhsOptions,
) -> Result<(Field, Field), DynamicsError> {
    if state.u.grid() != state.rho.grid() {
        return Err(DynamicsError::GridMismatch);
    }
    let u = &state.u;
    let rho = &state.rho;
    let ux = u.deriv(1);
    let rhox = rho.deriv(1);

    let ud = u.dealias();
    let uxd = ux.dealias();
    let rhod = rho.dealias();
    let rhoxd = rhox.dealias();

    let u_ux = ud.mul(&uxd).dealias();
    let ux_sq = uxd.mul(&uxd).dealias();
    let rho_sq = rhod.mul(&rhod).dealias();
    let u_rhox = ud.mul(&rhoxd).dealias();
    let ux_rho = uxd.mul(&rhod).dealias();

    let mu0 = u.mean();
    let source = u
        .scale(2.0 * mu0)
        .add_scaled(0.5, &ux_sq)
        .add_scaled(0.5, &rho_sq);
    let mut nonlocal = source.dx_a_inv();
    if opts.a_inv_scale != 1.0 {
        nonlocal = nonlocal.scale(opts.a_inv_scale);
    }

    let du = u_ux
        .add_scaled(params.gamma1, &ux)
        .add_scaled(1.0, &nonlocal);
    let du = project_zero_mean(du);

    let drho = u_rhox
        .add_scaled(2.0 * params.gamma2, &rhox)
        .add_scaled(1.0, &ux_rho);

    Ok((du, drho))
}

/// Zeroes the mean mode, leaving every other coefficient untouched.
fn project_zero_mean(f: Field) -> Field {
    let mut spec = f.spectrum().to_vec();
    spec[0] = Complex64::new(0.0, 0.0);
    Field::from_spectrum(f.grid(), spec)
}

/// Intermediate RK4 stage states of one step (the initial state is the
/// caller's; the stages sit at `t + dt/2`, `t + dt/2`, `t + dt`).
///
/// Characteristic tracks advance through the same stages as the fields, so the
/// run loop hands these to observers instead of discarding them.
#[derive(Debug, Clone)]
pub struct StepStages {
    pub s2: MuHSState,
    pub s3: MuHSState,
    pub s4: MuHSState,
}

/// One classical RK4 step of size `dt`.
pub fn step_rk4(state: &MuHSState, params: Params, dt: f64) -> Result<MuHSState, DynamicsError> {
    step_rk4_stages_with(state, params, dt, RhsOptions::default()).map(|(next, _)| next)
}

/// RK4 step that also returns the intermediate stage states.
pub fn step_rk4_stages(
    state: &MuHSState,
    params: Params,
    dt: f64,
) -> Result<(MuHSState, StepStages), DynamicsError> {
    step_rk4_stages_with(state, params, dt, RhsOptions::default())
}

fn step_rk4_stages_with(
    state: &MuHSState,
    params: Params,
    dt: f64,
    opts: RhsOptions,
) -> Result<(MuHSState, StepStages), DynamicsError> {
    assert!(dt > 0.0, "step size must be positive");
    let (k1u, k1r) = rhs_with(state, params, opts)?;
    let s2 = MuHSState {
        t: state.t + 0.5 * dt,
        u: state.u.add_scaled(0.5 * dt, &k1u),
        rho: state.rho.add_scaled(0.5 * dt, &k1r),
    };
    let (k2u, k2r) = rhs_with(&s2, params, opts)?;
    let s3 = MuHSState {
        t: state.t + 0.5 * dt,
        u: state.u.add_scaled(0.5 * dt, &k2u),
        rho: state.rho.add_scaled(0.5 * dt, &k2r),
    };
    let (k3u, k3r) = rhs_with(&s3, params, opts)?;
    let s4 = MuHSState {
        t: state.t + dt,
        u: state.u.add_scaled(dt, &k3u),
        rho: state.rho.add_scaled(dt, &k3r),
    };
    let (k4u, k4r) = rhs_with(&s4, params, opts)?;

    let sixth = dt / 6.0;
    let third = dt / 3.0;
    let u = state
        .u
        .add_scaled(sixth, &k1u)
        .add_scaled(third, &k2u)
        .add_scaled(third, &k3u)
        .add_scaled(sixth, &k4u);
    let rho = state
        .rho
        .add_scaled(sixth, &k1r)
        .add_scaled(third, &k2r)
        .add_scaled(third, &k3r)
        .add_scaled(sixth, &k4r);
    let next = MuHSState {
        t: state.t + dt,
        u,
        rho,
    };
    if !next.all_finite() {
        return Err(DynamicsError::NonFinite { t: state.t });
    }
    Ok((next, StepStages { s2, s3, s4 }))
}

/// Everything an observer may inspect after one completed PDE step.
pub struct StepContext<'a> {
    pub before: &'a MuHSState,
    pub after: &'a MuHSState,
    pub stages: &'a StepStages,
    pub dt: f64,
    pub params: Params,
}

/// Callback interface driven by the run loop.
///
/// `on_step` fires after every accepted step; `on_record` fires whenever a
/// diagnostics row is emitted (including the initial state). Callbacks are
/// invoked sequentially from the single stepping thread.
pub trait RunObserver {
    fn on_step(&mut self, _ctx: &StepContext<'_>) {}
    fn on_record(&mut self, _state: &MuHSState, _record: &DiagnosticsRecord) {}
}

/// Cadence and norm configuration for diagnostics rows.
#[derive(Debug, Clone, Copy)]
pub struct RecordingPolicy {
    /// Emit a record every this many steps (the initial and final states are
    /// always recorded).
    pub record_every: usize,
    /// Order `s` for the configurable `H^s(u)` / `H^{s-1}(rho)` monitors.
    pub sobolev_s: f64,
}

impl Default for RecordingPolicy {
    fn default() -> Self {
        Self {
            record_every: 1,
            sobolev_s: 2.0,
        }
    }
}

/// Outcome of [`run`]: the diagnostics series, the last computed state, and
/// the global-vs-breakdown classification.
pub struct RunResult {
    pub trajectory: Vec<DiagnosticsRecord>,
    pub last: MuHSState,
    pub outcome: RunOutcome,
}

/// Integrates from `state0` to `t_end` or to breakdown, whichever is first.
///
/// Breakdown is declared when the recorded slope crosses the controller
/// threshold, when the CFL step collapses under `dt_min`, or when a step
/// produces non-finite samples; the run then stops at the last good state
/// with outcome `BlowUp`. Otherwise the horizon is reached and the outcome is
/// `GlobalUpToHorizon`.
pub fn run(
    state0: MuHSState,
    params: Params,
    t_end: f64,
    controller: StepController,
    policy: RecordingPolicy,
    observers: &mut [&mut dyn RunObserver],
) -> Result<RunResult, DynamicsError> {
    run_with_options(
        state0,
        params,
        t_end,
        controller,
        policy,
        observers,
        RhsOptions::default(),
    )
}

/// [`run`] with verification hooks applied to every RHS evaluation.
#[allow(clippy::too_many_arguments)]
pub fn run_with_options(
    state0: MuHSState,
    params: Params,
    t_end: f64,
    controller: StepController,
    policy: RecordingPolicy,
    observers: &mut [&mut dyn RunObserver],
    opts: RhsOptions,
) -> Result<RunResult, DynamicsError> {
    controller.validate()?;
    if !(t_end > state0.t) {
        return Err(DynamicsError::ConfigError(format!(
            "t_end = {} does not exceed the initial time {}",
            t_end, state0.t
        )));
    }
    if policy.record_every == 0 {
        return Err(DynamicsError::ConfigError(
            "record_every must be at least 1".to_owned(),
        ));
    }
    if state0.u.grid() != state0.rho.grid() {
        return Err(DynamicsError::GridMismatch);
    }

    let conserved = diagnostics::conserved_set(&state0);
    let mut trajectory: Vec<DiagnosticsRecord> = Vec::new();
    let mut state = state0;

    macro_rules! emit_record {
        () => {{
            let rec = diagnostics::record_with_s(&state, params, &conserved, policy.sobolev_s);
            for obs in observers.iter_mut() {
                obs.on_record(&state, &rec);
            }
            trajectory.push(rec);
        }};
    }

    emit_record!();

    let mut terminated_early = false;
    let mut steps = 0usize;
    loop {
        let sup_ux = state.u.deriv(1).max();
        if sup_ux > controller.blowup_slope_threshold {
            terminated_early = true;
            break;
        }
        let dt_cfl = controller.dt(&state, params);
        if dt_cfl < controller.dt_min {
            terminated_early = true;
            break;
        }
        let dt = dt_cfl.min(t_end - state.t);
        match step_rk4_stages_with(&state, params, dt, opts) {
            Ok((next, stages)) => {
                let ctx = StepContext {
                    before: &state,
                    after: &next,
                    stages: &stages,
                    dt,
                    params,
                };
                for obs in observers.iter_mut() {
                    obs.on_step(&ctx);
                }
                state = next;
            }
            Err(DynamicsError::NonFinite { .. }) => {
                terminated_early = true;
                break;
            }
            Err(e) => return Err(e),
        }
        steps += 1;
        let at_horizon = state.t >= t_end - 1e-12;
        if steps % policy.record_every == 0 || at_horizon {
            emit_record!();
        }
        if at_horizon {
            break;
        }
    }

    if trajectory.last().map(|r| r.t) != Some(state.t) {
        emit_record!();
    }

    let outcome = diagnostics::classify_outcome(&trajectory, terminated_early)
        .expect("trajectory has at least the initial record");
    Ok(RunResult {
        trajectory,
        last: state,
        outcome,
    })
}

/// Sup-norm residual of the slope-integrated identity
/// `u_tx = -2 mu0 u + u_x^2/2 + u u_xx - rho^2/2 + gamma1 u_xx + a`,
/// with `u_tx` obtained by differentiating the computed `u_t` and the
/// constants `mu0`, `a` taken from the conserved set of the run.
///
/// For the exact solution both sides agree identically, so this measures in
/// one number how faithfully the discretisation realises the integrated form.
pub fn residual_eq23(
    state: &MuHSState,
    params: Params,
    conserved: &crate::diagnostics::ConservedSet,
) -> f64 {
    let (du, _) = rhs(state, params).expect("state validated by caller");
    let u_tx = du.deriv(1);
    let u = &state.u;
    let ux = u.deriv(1);
    let uxx = u.deriv(2);
    let ux_sq = ux.mul(&ux);
    let u_uxx = u.mul(&uxx);
    let rho_sq = state.rho.mul(&state.rho);
    let right = u
        .scale(-2.0 * conserved.mu0)
        .add_scaled(0.5, &ux_sq)
        .add_scaled(1.0, &u_uxx)
        .add_scaled(-0.5, &rho_sq)
        .add_scaled(params.gamma1, &uxx)
        .add_const(conserved.a);
    u_tx.add_scaled(-1.0, &right).linf()
}
