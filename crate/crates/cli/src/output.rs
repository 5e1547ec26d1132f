//! CSV and checkpoint writers. Every CSV opens with a schema comment line.

use std::io::Write;

use fictdisc_core::audit::BiasRow;
use fictdisc_core::train::{TraceRow, TrainTrace};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub const TRACE_SCHEMA: &str = "# fictdisc-trace-csv v1";
pub const TRACE_HEADER: &str =
    "k,grad_norm,eta_gap,vh_gap,vgamma_gap,best_eta_gap,best_vh_gap,best_vgamma_gap,step_size";
pub const BIAS_SCHEMA: &str = "# fictdisc-bias-csv v1";
pub const BIAS_HEADER: &str = "fixture,H,gamma,dae_measured,dae_bound,dae_envelope,dd_measured,dd_bound";
pub const EVAL_SCHEMA: &str = "# fictdisc-eval-csv v1";
pub const EVAL_HEADER: &str = "fixture,H,gamma,vh,vgamma,eta,vh_gap,vgamma_gap,eta_gap";

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRACE_SCHEMA}")?;
    writeln!(w, "{TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.k,
            r.grad_norm,
            r.eta_gap,
            r.vh_gap,
            r.vgamma_gap,
            r.best_eta_gap,
            r.best_vh_gap,
            r.best_vgamma_gap,
            r.step_size
        )?;
    }
    Ok(())
}

/// Wall-clock seconds per logged iterate; kept out of the trace so the trace stays reproducible.
pub fn write_timing<W: Write>(rows: &[TraceRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "k,wall_seconds")?;
    for r in rows {
        writeln!(w, "{},{}", r.k, r.wall_seconds)?;
    }
    Ok(())
}

pub fn write_bias_csv<W: Write>(table: &[(String, Vec<BiasRow>)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{BIAS_SCHEMA}")?;
    writeln!(w, "{BIAS_HEADER}")?;
    for (fixture, rows) in table {
        for r in rows {
            writeln!(
                w,
                "{fixture},{},{},{},{},{},{},{}",
                r.horizon, r.gamma, r.dae_measured, r.dae_bound, r.dae_envelope, r.dd_measured, r.dd_bound
            )?;
        }
    }
    Ok(())
}

/// Two whitespace-separated columns, `H value`, for gnuplot.
pub fn write_gnuplot_series<W: Write>(name: &str, points: &[(usize, f64)], mut w: W) -> std::io::Result<()> {
    writeln!(w, "# H {name}")?;
    for (h, v) in points {
        writeln!(w, "{h} {v}")?;
    }
    Ok(())
}

/// The bias-study columns exported as separate gnuplot series.
pub fn bias_series(rows: &[BiasRow]) -> Vec<(&'static str, Vec<(usize, f64)>)> {
    let col = |f: fn(&BiasRow) -> f64| rows.iter().map(|r| (r.horizon, f(r))).collect::<Vec<_>>();
    vec![
        ("dae_measured", col(|r| r.dae_measured)),
        ("dae_bound", col(|r| r.dae_bound)),
        ("dae_envelope", col(|r| r.dae_envelope)),
        ("dd_measured", col(|r| r.dd_measured)),
        ("dd_bound", col(|r| r.dd_bound)),
    ]
}

/// Saved logits with enough context to re-evaluate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub fixture: String,
    pub fingerprint: String,
    pub k: usize,
    pub lambda: f64,
    pub theta: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn from_trace(fixture: &str, fingerprint: String, trace: &TrainTrace) -> Self {
        Checkpoint {
            fixture: fixture.to_string(),
            fingerprint,
            k: trace.last_k,
            lambda: trace.constants.lambda,
            theta: matrix_rows(&trace.final_theta),
        }
    }
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|s| m.row(s).iter().copied().collect()).collect()
}
