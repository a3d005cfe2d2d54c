//! Check suites over a scenario and the JSON report.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::FlowError;
use crate::geodesic::{correspondence_deviation, integrate_base, integrate_super};
use crate::geometry::{max_torsion, metric_nondegenerate, self_check};
use crate::reduction::{
    appendix_a_reduce, automorphism_equivariance, christoffel_from_metric, classical_levi_civita, reduce_connection,
    reduce_metric, reduced_compat_check, reduced_torsion_check, zero_section_pullback,
};
use crate::sampling::{sample_count, total_space_samples};
use crate::scenario::{random_frame_change, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Suite {
    MetricInvariants,
    LeviCivita,
    ReductionStructure,
    TorsionCompat,
    LeviCivitaPreservation,
    Correspondence,
    BaseProjection,
    AppendixA,
    Equivariance,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::MetricInvariants,
        Suite::LeviCivita,
        Suite::ReductionStructure,
        Suite::TorsionCompat,
        Suite::LeviCivitaPreservation,
        Suite::Correspondence,
        Suite::BaseProjection,
        Suite::AppendixA,
        Suite::Equivariance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::MetricInvariants => "metric_invariants",
            Suite::LeviCivita => "levi_civita",
            Suite::ReductionStructure => "reduction_structure",
            Suite::TorsionCompat => "torsion_compat",
            Suite::LeviCivitaPreservation => "levi_civita_preservation",
            Suite::Correspondence => "correspondence",
            Suite::BaseProjection => "base_projection",
            Suite::AppendixA => "appendix_a",
            Suite::Equivariance => "equivariance",
        }
    }

    /// Default pass threshold on the suite's violation measure.
    pub fn default_tolerance(self) -> f64 {
        match self {
            // condition number of the body matrix
            Suite::MetricInvariants => 1e8,
            Suite::LeviCivita | Suite::TorsionCompat => 1e-9,
            Suite::ReductionStructure | Suite::AppendixA => 0.0,
            Suite::LeviCivitaPreservation | Suite::BaseProjection | Suite::Equivariance => 1e-8,
            Suite::Correspondence => 1e-6,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL.iter().copied().find(|x| x.name() == s).ok_or_else(|| format!("unknown check suite '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    /// `null` in JSON when the suite could not be evaluated.
    pub max_violation: Option<f64>,
    pub tolerance: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub samples: usize,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Overrides the scenario and environment sample counts.
    pub samples: Option<usize>,
    /// Record per-suite wall time (makes the report run-dependent).
    pub timings: bool,
}

enum Outcome {
    Measured { violation: f64, samples: usize, detail: Option<String> },
    Skipped(String),
}

fn measured(violation: f64, samples: usize) -> Result<Outcome, String> {
    Ok(Outcome::Measured { violation, samples, detail: None })
}

/// Runs the scenario's suites (all suites when none are listed).
pub fn run_checks(s: &Scenario, opts: RunOptions) -> Report {
    let count = opts.samples.or(s.samples).unwrap_or_else(sample_count);
    let suites: Vec<Suite> = if s.checks.is_empty() { Suite::ALL.to_vec() } else { s.checks.clone() };
    let checks: Vec<CheckResult> = suites
        .par_iter()
        .map(|&suite| {
            let tolerance = s.tolerances.get(&suite).copied().unwrap_or(suite.default_tolerance());
            let start = Instant::now();
            let outcome = run_suite(s, suite, count);
            let wall = opts.timings.then(|| start.elapsed().as_secs_f64());
            let (status, max_violation, samples, detail) = match outcome {
                Ok(Outcome::Measured { violation, samples, detail }) => {
                    let ok = violation <= tolerance;
                    (if ok { Status::Pass } else { Status::Fail }, Some(violation), samples, detail)
                }
                Ok(Outcome::Skipped(why)) => (Status::Skipped, None, 0, Some(why)),
                Err(e) => (Status::Fail, None, 0, Some(e)),
            };
            CheckResult {
                name: suite.name().into(),
                status,
                max_violation,
                tolerance,
                samples,
                detail,
                wall_time_s: wall,
            }
        })
        .collect();
    Report {
        scenario: s.chart.name.clone(),
        seed: s.seed,
        samples: count,
        passed: checks.iter().all(|c| c.status != Status::Fail),
        checks,
    }
}

fn run_suite(s: &Scenario, suite: Suite, count: usize) -> Result<Outcome, String> {
    let base = s.chart_box.halton(count, 0.05);
    let total = total_space_samples(&s.chart_box, s.chart.q, 1.0, count);
    let conn = s.connection();
    let metric = s.metric();
    let err = |e: &dyn fmt::Display| e.to_string();
    match suite {
        Suite::MetricInvariants => {
            let Some(g) = metric else { return Ok(Outcome::Skipped("scenario has no metric".into())) };
            measured(metric_nondegenerate(g, &base).max_condition(), base.len())
        }
        Suite::LeviCivita => match metric {
            Some(g) => {
                let c = self_check(&conn, g, &base).map_err(|e| err(&e))?;
                measured(c.max_torsion.max(c.max_theta), base.len())
            }
            None => Ok(Outcome::Measured {
                violation: max_torsion(&conn, &base).map_err(|e| err(&e))?,
                samples: base.len(),
                detail: Some("torsion only: scenario has no metric".into()),
            }),
        },
        Suite::ReductionStructure => {
            let rc = reduce_connection(&conn);
            let rm = metric.map(|g| reduce_metric(g));
            let mut worst: f64 = 0.0;
            for x in &base {
                worst = worst.max(rc.symbols_at(x).map_err(|e| err(&e))?.pattern_violation());
                if let Some(rm) = &rm {
                    worst = worst.max(rm.pattern_violation(x).map_err(|e| err(&e))?);
                }
            }
            measured(worst, base.len())
        }
        Suite::TorsionCompat => {
            let rc = reduce_connection(&conn);
            let mut worst = reduced_torsion_check(&rc, &total).map_err(|e| err(&e))?;
            let detail = match metric {
                Some(g) => {
                    worst = worst.max(reduced_compat_check(&rc, &reduce_metric(g), &total).map_err(|e| err(&e))?);
                    None
                }
                None => Some("torsion only: scenario has no metric".into()),
            };
            Ok(Outcome::Measured { violation: worst, samples: total.len(), detail })
        }
        Suite::LeviCivitaPreservation => {
            let Some(g) = metric else { return Ok(Outcome::Skipped("scenario has no metric".into())) };
            let rc = reduce_connection(&conn);
            if g.parity() == 1 {
                let lc = classical_levi_civita(&reduce_metric(g), &total).map_err(|e| err(&e))?;
                let mut worst: f64 = 0.0;
                for ((x, y), table) in total.iter().zip(&lc) {
                    let red = rc.symbols_at(x).map_err(|e| err(&e))?.values(y);
                    for (a, b) in red.iter().zip(table) {
                        worst = worst.max((a - b).abs());
                    }
                }
                measured(worst, total.len())
            } else {
                // ∇^TM against the Levi-Civita connection of g^TM
                let base_conn = zero_section_pullback(&rc);
                let am = appendix_a_reduce(&conn, g);
                let gtm = am.base_metric.as_ref().ok_or("even metric without base block")?;
                let n = s.chart.n;
                let mut worst: f64 = 0.0;
                for x in &base {
                    let value = am.base_metric_at(x).map_err(|e| err(&e))?.ok_or("missing g^TM")?;
                    let mut dg = Vec::with_capacity(n);
                    for k in 0..n {
                        let mut m = DMatrix::zeros(n, n);
                        for (idx, e) in gtm.iter().enumerate() {
                            m[(idx / n, idx % n)] = e.diff(k).eval(x).map_err(|e| err(&e))?;
                        }
                        dg.push(m);
                    }
                    let want = christoffel_from_metric(&value, &dg).ok_or("g^TM is singular")?;
                    let got = base_conn.symbols_at(x).map_err(|e| err(&e))?;
                    for (a, b) in got.iter().zip(&want) {
                        worst = worst.max((a - b).abs());
                    }
                }
                Ok(Outcome::Measured {
                    violation: worst,
                    samples: base.len(),
                    detail: Some("even metric: zero-section connection against Levi-Civita of g^TM".into()),
                })
            }
        }
        Suite::Correspondence => {
            if s.initial_conditions.is_empty() {
                return Ok(Outcome::Skipped("no initial conditions".into()));
            }
            let rc = reduce_connection(&conn);
            let integ = s.integration;
            let devs: Vec<Result<f64, FlowError>> = s
                .initial_conditions
                .par_iter()
                .map(|ic| correspondence_deviation(&conn, &rc, &s.chart_box, ic, integ.t_end, integ.dt))
                .collect();
            let mut worst: f64 = 0.0;
            for d in devs {
                worst = worst.max(d.map_err(|e| err(&e))?);
            }
            measured(worst, s.initial_conditions.len())
        }
        Suite::BaseProjection => {
            if s.initial_conditions.is_empty() {
                return Ok(Outcome::Skipped("no initial conditions".into()));
            }
            let base_conn = zero_section_pullback(&reduce_connection(&conn));
            let integ = s.integration;
            let devs: Vec<Result<f64, FlowError>> = s
                .initial_conditions
                .par_iter()
                .map(|ic| {
                    let sup = integrate_super(&conn, &s.chart_box, ic, integ.t_end, integ.dt)?;
                    let bas = integrate_base(&base_conn, &s.chart_box, &ic.x0, &ic.v0, integ.t_end, integ.dt)?;
                    if sup.truncated || bas.truncated {
                        return Err(FlowError::InvalidParameters("trajectory left the chart".into()));
                    }
                    Ok(sup
                        .f
                        .iter()
                        .zip(&bas.f)
                        .flat_map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).abs()))
                        .fold(0.0, f64::max))
                })
                .collect();
            let mut worst: f64 = 0.0;
            for d in devs {
                worst = worst.max(d.map_err(|e| err(&e))?);
            }
            measured(worst, s.initial_conditions.len())
        }
        Suite::AppendixA => {
            let Some(g) = metric else { return Ok(Outcome::Skipped("scenario has no metric".into())) };
            let rep = appendix_a_reduce(&conn, g).report(&base).map_err(|e| err(&e))?;
            let mut violation = rep.antisymmetry.max(rep.connection_mismatch);
            let mut detail = None;
            for (what, sv) in [("omega^E", rep.two_form_min_sv), ("B^E", rep.bundle_iso_min_sv)] {
                if let Some(sv) = sv {
                    if sv.is_nan() || sv <= 1e-10 {
                        violation = f64::INFINITY;
                        detail = Some(format!("{what} is not invertible at some sample (min singular value {sv:e})"));
                    }
                }
            }
            Ok(Outcome::Measured { violation, samples: base.len(), detail })
        }
        Suite::Equivariance => {
            let frame = s.frame_change.clone().unwrap_or_else(|| Arc::new(random_frame_change(&s.chart, s.seed)));
            measured(automorphism_equivariance(&conn, frame, &total).map_err(|e| err(&e))?, total.len())
        }
    }
}
