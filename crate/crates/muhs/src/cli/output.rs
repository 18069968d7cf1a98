//! Bit-exact output files: CSV time series and a JSON run summary.
//!
//! Floats are printed as shortest round-trip decimals, so identical runs
//! produce byte-identical files and every value parses back exactly.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::{ConservedSet, DiagnosticsRecord};
use crate::scenarios::{HypothesisReport, RunOutcome};
use crate::characteristics::TrackSample;

/// Header of `diagnostics.csv`, fixed as part of the output contract.
pub const DIAGNOSTICS_HEADER: &str =
    "t,sup_ux,inf_ux,linf_u,linf_rho,linf_rhox,energy,mean_u,h2_u,h1_rho,residual23";

/// Header of `tracks.csv`, fixed as part of the output contract.
pub const TRACKS_HEADER: &str = "t,label_x0,y,jac_qx,m,gamma,w";

/// Shortest decimal that parses back to exactly this value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Renders the diagnostics time series.
pub fn render_diagnostics_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(DIAGNOSTICS_HEADER);
    out.push('\n');
    for r in records {
        let fields = [
            r.t,
            r.sup_ux,
            r.inf_ux,
            r.linf_u,
            r.linf_rho,
            r.linf_rhox,
            r.energy,
            r.mean_u,
            r.h2_norm_u,
            r.h1_norm_rho,
            r.residual23,
        ];
        push_row(&mut out, &fields);
    }
    out
}

/// Renders the per-record track samples.
pub fn render_tracks_csv(samples: &[TrackSample]) -> String {
    let mut out = String::with_capacity(48 * (samples.len() + 1));
    out.push_str(TRACKS_HEADER);
    out.push('\n');
    for s in samples {
        let fields = [s.t, s.label_x0, s.y, s.jac_qx, s.m, s.gamma, s.w];
        push_row(&mut out, &fields);
    }
    out
}

fn push_row(out: &mut String, fields: &[f64]) {
    for (i, x) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&fmt_f64(*x));
    }
    out.push('\n');
}

/// Worst observed drifts of the conserved quantities over a run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DriftSummary {
    /// Max absolute deviation of the velocity mean.
    pub mu0_abs: f64,
    /// Max relative deviation of the energy.
    pub energy_rel: f64,
    /// Max relative deviation of the gauge constant.
    pub a_rel: f64,
}

/// Worst signed excess of each monitored inequality (negative = satisfied
/// with that much margin).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlackSummary {
    /// `linf_u - (|mu0| + (sqrt(3)/6) mu1)`, maximized over records.
    pub linf_bound: f64,
    /// `linf_rho - exp(M t) * linf_rho(0)` with `M` the observed slope
    /// supremum, maximized over records.
    pub rho_growth: f64,
}

/// Everything `summary.json` carries.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub outcome: RunOutcome,
    pub conserved: ConservedSet,
    pub drift: DriftSummary,
    pub max_slack: SlackSummary,
    pub hypothesis: HypothesisReport,
}

/// Computes drifts and inequality slacks from a recorded history.
pub fn summarize(
    records: &[DiagnosticsRecord],
    conserved: &ConservedSet,
) -> (DriftSummary, SlackSummary) {
    let e0 = records.first().map(|r| r.energy).unwrap_or(0.0);
    let a0 = conserved.a;
    let rho0_linf = records.first().map(|r| r.linf_rho).unwrap_or(0.0);
    let m_observed = records.iter().map(|r| r.sup_ux).fold(0.0f64, f64::max);
    let linf_cap = conserved.mu0.abs() + 3.0f64.sqrt() / 6.0 * conserved.mu1;

    let mut drift = DriftSummary {
        mu0_abs: 0.0,
        energy_rel: 0.0,
        a_rel: 0.0,
    };
    let mut slack = SlackSummary {
        linf_bound: f64::NEG_INFINITY,
        rho_growth: f64::NEG_INFINITY,
    };
    for r in records {
        drift.mu0_abs = drift.mu0_abs.max((r.mean_u - conserved.mu0).abs());
        let e_denom = if e0 > 0.0 { e0 } else { 1.0 };
        drift.energy_rel = drift.energy_rel.max((r.energy - e0).abs() / e_denom);
        let a_t = 2.0 * r.mean_u * r.mean_u + 0.5 * r.energy;
        let a_denom = if a0 != 0.0 { a0.abs() } else { 1.0 };
        drift.a_rel = drift.a_rel.max((a_t - a0).abs() / a_denom);
        slack.linf_bound = slack.linf_bound.max(r.linf_u - linf_cap);
        slack.rho_growth = slack
            .rho_growth
            .max(r.linf_rho - (m_observed * r.t).exp() * rho0_linf);
    }
    (drift, slack)
}

/// Serializes the summary as pretty JSON with a trailing newline.
pub fn render_summary_json(summary: &RunSummary) -> String {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    text
}

/// Writes a file atomically enough for our purposes: straight to the path.
pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())
}
