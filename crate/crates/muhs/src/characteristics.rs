//! Characteristic tracks of the density equation: positions, the flow-map
//! Jacobian, the transported density, the slope variable `m`, and the
//! Lyapunov function `w`.
//!
//! The flow map `q` of the analysis satisfies `q_t = u(t, -q) + 2 gamma2`
//! with `q(0, x) = x`; only `-q` is ever evaluated, so each track evolves
//! `y := -q` directly by `y' = -(u(t, y) + 2 gamma2)`, `y(0) = -x0`, and
//! reconstructs `q`-quantities by the sign flip. Along a track,
//!
//! * the Jacobian obeys `q_x(t) = exp(-int_0^t u_x(s, y(s)) ds) > 0`,
//! * the density satisfies the transport identity `rho(t, y) q_x = rho0(-x0)`,
//! * the slope `m(t) = u_x(t, y(t))` obeys the Riccati-type law
//!   `m' = m^2/2 - gamma^2/2 + a - 2 mu0 u`,
//! * and `w = gamma alpha0 + (alpha0/gamma)(1 + m^2)` grows at most
//!   exponentially whenever the initial density never vanishes.
//!
//! Tracks advance in lockstep with the PDE through the same RK4 stages,
//! evaluating the stage velocity fields by trigonometric interpolation.

use crate::dynamics::{MuHSState, Params, RunObserver, StepContext};
use crate::spectral::Field;

use thiserror::Error;

/// Errors from track bookkeeping and the closed-form slope reference.
#[derive(Debug, Error)]
pub enum CharacteristicsError {
    /// The closed-form breakdown reference needs a positive constant term.
    #[error("closed-form slope reference requires a > 0, got {a}")]
    NonPositiveA { a: f64 },
    /// The Lyapunov function divides by the transported density; a vanishing
    /// density means the scenario violates the global-existence hypothesis.
    #[error("Lyapunov function undefined on a track with zero density")]
    ZeroDensity,
}

/// Values below this (relative to the field scale) are snapped to exact zero
/// when a track is seeded, so "density vanishes at the label" is a clean
/// predicate instead of a round-off lottery.
const SEED_SNAP: f64 = 1e-13;

/// One characteristic of the density equation, advanced alongside the PDE.
#[derive(Debug, Clone, Copy)]
pub struct CharacteristicTrack {
    /// The label `x0` of the underlying flow-map trajectory `q(t, x0)`.
    pub label_x0: f64,
    /// Current position `y(t) = -q(t, x0)`, kept in `[0, 1)`.
    pub y: f64,
    /// Flow-map Jacobian `q_x(t, x0)`, strictly positive.
    pub jac_qx: f64,
    /// Slope along the track, `m(t) = u_x(t, y(t))`.
    pub m: f64,
    /// Transported density, `gamma(t) = rho(t, y(t))`.
    pub gamma: f64,
    /// Lyapunov value; `NaN` on tracks whose density vanishes.
    pub w: f64,
    /// Initial density at the label, `alpha0 = rho0(-x0)`.
    pub alpha0: f64,
    /// Initial slope at the label.
    pub m0: f64,
}

fn wrap_unit(y: f64) -> f64 {
    y.rem_euclid(1.0)
}

/// Seeds a track at label `x0` from the initial state.
pub fn init_track(x0: f64, state0: &MuHSState) -> CharacteristicTrack {
    let y = wrap_unit(-x0);
    let m = state0.u.deriv(1).interpolate(y);
    let rho_scale = 1.0 + state0.rho.linf();
    let mut gamma = state0.rho.interpolate(y);
    if gamma.abs() <= SEED_SNAP * rho_scale {
        gamma = 0.0;
    }
    let mut track = CharacteristicTrack {
        label_x0: x0,
        y,
        jac_qx: 1.0,
        m,
        gamma,
        w: f64::NAN,
        alpha0: gamma,
        m0: m,
    };
    track.w = lyapunov_w(&track).unwrap_or(f64::NAN);
    track
}

/// Which quadrature accumulates `int u_x ds` for the Jacobian.
///
/// `Midpoint` is the plain second-order rule on the stage-averaged midpoint
/// field. `StageSimpson` instead treats the log-Jacobian as one more
/// component of the RK4 system: slope samples at the four stage positions
/// with the four stage fields, combined with the Simpson-style
/// `(1, 2, 2, 1) / 6` weights, which keeps the fourth-order accuracy of the
/// positions. It is the shipped default because the midpoint rule's
/// accumulated error is measurably above the transport-identity tolerance
/// this crate promises (see the module tests).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacRule {
    Midpoint,
    StageSimpson,
}

impl Default for JacRule {
    fn default() -> Self {
        JacRule::StageSimpson
    }
}

/// Stage-resolved velocity data for one PDE step, the "time-interpolable
/// velocity" a track needs: the four RK4 stage fields, their derivatives,
/// and the completed end-of-step fields.
pub struct StageVelocities<'a> {
    /// Velocity at the step start.
    pub u1: &'a Field,
    /// Second-stage velocity (at `t + dt/2`).
    pub u2: &'a Field,
    /// Third-stage velocity (at `t + dt/2`).
    pub u3: &'a Field,
    /// Fourth-stage velocity (at `t + dt`).
    pub u4: &'a Field,
    /// `u_x` of each stage field, same indexing.
    pub ux1: &'a Field,
    pub ux2: &'a Field,
    pub ux3: &'a Field,
    pub ux4: &'a Field,
    /// `u_x` of the completed next state.
    pub ux_next: &'a Field,
    /// Density of the completed next state.
    pub rho_next: &'a Field,
}

/// Owned per-step fields backing a [`StageVelocities`] view.
pub struct StageFields {
    ux1: Field,
    ux2: Field,
    ux3: Field,
    ux4: Field,
    ux_next: Field,
}

impl StageFields {
    /// Precomputes the derivative fields for one completed step; do this once
    /// per step and share it across all tracks.
    pub fn prepare(ctx: &StepContext<'_>) -> Self {
        Self {
            ux1: ctx.before.u.deriv(1),
            ux2: ctx.stages.s2.u.deriv(1),
            ux3: ctx.stages.s3.u.deriv(1),
            ux4: ctx.stages.s4.u.deriv(1),
            ux_next: ctx.after.u.deriv(1),
        }
    }

    /// Borrows the stage view for [`advance_track`].
    pub fn velocities<'a>(&'a self, ctx: &'a StepContext<'_>) -> StageVelocities<'a> {
        StageVelocities {
            u1: &ctx.before.u,
            u2: &ctx.stages.s2.u,
            u3: &ctx.stages.s3.u,
            u4: &ctx.stages.s4.u,
            ux1: &self.ux1,
            ux2: &self.ux2,
            ux3: &self.ux3,
            ux4: &self.ux4,
            ux_next: &self.ux_next,
            rho_next: &ctx.after.rho,
        }
    }
}

/// Advances one track through one PDE step with the default quadrature.
pub fn advance_track(
    track: &CharacteristicTrack,
    vel: &StageVelocities<'_>,
    params: Params,
    dt: f64,
) -> CharacteristicTrack {
    advance_track_with_rule(track, vel, params, dt, JacRule::default())
}

/// Advances one track, selecting the Jacobian quadrature explicitly.
pub fn advance_track_with_rule(
    track: &CharacteristicTrack,
    vel: &StageVelocities<'_>,
    params: Params,
    dt: f64,
    rule: JacRule,
) -> CharacteristicTrack {
    let drift = 2.0 * params.gamma2;
    let slope = |u: &Field, y: f64| -(u.interpolate(y) + drift);

    // RK4 on y' = -(u(t, y) + 2 gamma2), stage fields frozen as in the PDE.
    let l1 = slope(vel.u1, track.y);
    let y2 = track.y + 0.5 * dt * l1;
    let l2 = slope(vel.u2, y2);
    let y3 = track.y + 0.5 * dt * l2;
    let l3 = slope(vel.u3, y3);
    let y4 = track.y + dt * l3;
    let l4 = slope(vel.u4, y4);
    let y_next_raw = track.y + dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
    let y_next = wrap_unit(y_next_raw);

    // Accumulate int u_x(s, y(s)) ds over the step.
    let integral = match rule {
        JacRule::Midpoint => {
            // Averaging the two middle-stage samples at the third-stage
            // position is the midpoint value of the stage-averaged field.
            dt * 0.5 * (vel.ux2.interpolate(y3) + vel.ux3.interpolate(y3))
        }
        JacRule::StageSimpson => {
            // The log-Jacobian as a fifth RK4 component: slopes at the same
            // stage positions the y-update used, with the matching fields.
            let g1 = vel.ux1.interpolate(track.y);
            let g2 = vel.ux2.interpolate(y2);
            let g3 = vel.ux3.interpolate(y3);
            let g4 = vel.ux4.interpolate(y4);
            dt / 6.0 * (g1 + 2.0 * g2 + 2.0 * g3 + g4)
        }
    };
    let jac_qx = track.jac_qx * (-integral).exp();

    let m = vel.ux_next.interpolate(y_next);
    let gamma = if track.alpha0 == 0.0 {
        // The transport identity pins the density to zero on such tracks;
        // re-sampling would only reintroduce interpolation round-off.
        0.0
    } else {
        vel.rho_next.interpolate(y_next)
    };
    let mut next = CharacteristicTrack {
        label_x0: track.label_x0,
        y: y_next,
        jac_qx,
        m,
        gamma,
        w: f64::NAN,
        alpha0: track.alpha0,
        m0: track.m0,
    };
    next.w = lyapunov_w(&next).unwrap_or(f64::NAN);
    next
}

/// Deviation from the transport identity: `|rho(t, y) jac_qx - alpha0|`.
pub fn transport_identity_error(track: &CharacteristicTrack, state: &MuHSState) -> f64 {
    (state.rho.interpolate(track.y) * track.jac_qx - track.alpha0).abs()
}

/// Right-hand side of the slope equation along a track:
/// `m^2/2 - gamma^2/2 + a - 2 mu0 u(t, y)`.
pub fn riccati_rhs(
    track: &CharacteristicTrack,
    u_at_y: f64,
    conserved: &crate::diagnostics::ConservedSet,
) -> f64 {
    0.5 * track.m * track.m - 0.5 * track.gamma * track.gamma + conserved.a
        - 2.0 * conserved.mu0 * u_at_y
}

/// Closed-form solution of `m' = m^2/2 + a` (the zero-mean, zero-density
/// slope equation) together with its breakdown time.
#[derive(Debug, Clone, Copy)]
pub struct RiccatiReference {
    sqrt_2a: f64,
    rate: f64,
    phase: f64,
    t_star: f64,
}

/// Builds the reference for initial slope `m0`; requires `a > 0`.
pub fn riccati_reference(m0: f64, a: f64) -> Result<RiccatiReference, CharacteristicsError> {
    if !(a > 0.0) {
        return Err(CharacteristicsError::NonPositiveA { a });
    }
    let sqrt_2a = (2.0 * a).sqrt();
    let rate = (0.5 * a).sqrt();
    let phase = (m0 / sqrt_2a).atan();
    let t_star = (2.0 / a).sqrt() * (std::f64::consts::FRAC_PI_2 - phase);
    Ok(RiccatiReference {
        sqrt_2a,
        rate,
        phase,
        t_star,
    })
}

impl RiccatiReference {
    /// `m(t) = sqrt(2a) tan(sqrt(a/2) t + atan(m0 / sqrt(2a)))`, valid for
    /// `t < t_star()`.
    pub fn m(&self, t: f64) -> f64 {
        self.sqrt_2a * (self.rate * t + self.phase).tan()
    }

    /// The pole of the tangent: the breakdown time of the slope.
    pub fn t_star(&self) -> f64 {
        self.t_star
    }
}

/// Lyapunov value `w = gamma alpha0 + (alpha0 / gamma)(1 + m^2)`.
pub fn lyapunov_w(track: &CharacteristicTrack) -> Result<f64, CharacteristicsError> {
    if track.gamma == 0.0 {
        return Err(CharacteristicsError::ZeroDensity);
    }
    Ok(track.gamma * track.alpha0 + (track.alpha0 / track.gamma) * (1.0 + track.m * track.m))
}

/// One exported row of the track time series.
#[derive(Debug, Clone, Copy)]
pub struct TrackSample {
    pub t: f64,
    pub label_x0: f64,
    pub y: f64,
    pub jac_qx: f64,
    pub m: f64,
    pub gamma: f64,
    pub w: f64,
    /// Velocity evaluated at the track position, `u(t, y(t))`; not part of
    /// the CSV row, but needed to evaluate the slope equation at a sample.
    pub u_at_y: f64,
}

/// Run observer that advances a family of tracks in lockstep with the PDE and
/// collects their time series at the diagnostics cadence.
pub struct TrackObserver {
    tracks: Vec<CharacteristicTrack>,
    samples: Vec<TrackSample>,
    rule: JacRule,
}

impl TrackObserver {
    /// Seeds tracks at the given labels from the initial state.
    pub fn new(state0: &MuHSState, labels: &[f64]) -> Self {
        Self {
            tracks: labels.iter().map(|&x0| init_track(x0, state0)).collect(),
            samples: Vec::new(),
            rule: JacRule::default(),
        }
    }

    /// Same, with an explicit Jacobian quadrature (used by the refinement
    /// tests that justify the default).
    pub fn with_rule(state0: &MuHSState, labels: &[f64], rule: JacRule) -> Self {
        let mut obs = Self::new(state0, labels);
        obs.rule = rule;
        obs
    }

    /// The default label family: 16 equispaced labels, plus a mandated one
    /// when it is not already on the lattice.
    pub fn default_labels(mandated: Option<f64>) -> Vec<f64> {
        let mut labels: Vec<f64> = (0..16).map(|j| j as f64 / 16.0).collect();
        if let Some(x0) = mandated {
            let x0 = wrap_unit(x0);
            if !labels.iter().any(|&l| l == x0) {
                labels.push(x0);
            }
        }
        labels
    }

    /// Current track states.
    pub fn tracks(&self) -> &[CharacteristicTrack] {
        &self.tracks
    }

    /// Collected time series (one row per track per record time).
    pub fn samples(&self) -> &[TrackSample] {
        &self.samples
    }

    /// The series of one label, in time order.
    pub fn series_for(&self, label_x0: f64) -> Vec<TrackSample> {
        self.samples
            .iter()
            .filter(|s| s.label_x0 == label_x0)
            .copied()
            .collect()
    }
}

impl RunObserver for TrackObserver {
    fn on_step(&mut self, ctx: &StepContext<'_>) {
        let fields = StageFields::prepare(ctx);
        let vel = fields.velocities(ctx);
        for track in &mut self.tracks {
            *track = advance_track_with_rule(track, &vel, ctx.params, ctx.dt, self.rule);
        }
    }

    fn on_record(&mut self, state: &MuHSState, _record: &crate::diagnostics::DiagnosticsRecord) {
        for track in &self.tracks {
            self.samples.push(TrackSample {
                t: state.t,
                label_x0: track.label_x0,
                y: track.y,
                jac_qx: track.jac_qx,
                m: track.m,
                gamma: track.gamma,
                w: track.w,
                u_at_y: state.u.interpolate(track.y),
            });
        }
    }
}
