//! Geodesics on both sides of the correspondence: the super geodesic system on
//! `R^{1|1}` in τ-expanded components `(f_i, h_α)`, and the classical geodesic
//! equation of `∇^TE` on `E`. Points of `TE` and the initial data of a super
//! geodesic are the same tuple `(x0, v0, e0, w0)`.
//!
//! States are laid out as `[position (n+q), velocity (n+q)]`.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, GeometryError};
use crate::geometry::SuperConnection;
use crate::grassmann::MultiIndex;
use crate::reduction::{BaseConnection, ReducedConnection, ReducedMetric};
use crate::sampling::ChartBox;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    pub e0: Vec<f64>,
    pub w0: Vec<f64>,
}

impl InitialCondition {
    pub fn state(&self) -> Vec<f64> {
        [&self.x0[..], &self.e0, &self.v0, &self.w0].concat()
    }

    pub fn validate(&self, n: usize, q: usize, chart_box: &ChartBox) -> Result<(), FlowError> {
        if self.x0.len() != n || self.v0.len() != n || self.e0.len() != q || self.w0.len() != q {
            return Err(FlowError::InvalidParameters(format!("initial condition must have shape (n={n}, q={q})")));
        }
        if !chart_box.contains(&self.x0) {
            return Err(FlowError::OutsideChart { point: self.x0.clone() });
        }
        Ok(())
    }
}

/// Sampled curve `t ↦ (f(t), h(t))` with velocities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveSample {
    pub times: Vec<f64>,
    pub f: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub df: Vec<Vec<f64>>,
    pub dh: Vec<Vec<f64>>,
    /// Set when the curve left the chart box before `t_end`.
    pub truncated: bool,
}

impl CurveSample {
    fn from_states(n: usize, times: Vec<f64>, states: &[Vec<f64>], truncated: bool) -> Self {
        let d = states.first().map_or(n, |s| s.len() / 2);
        CurveSample {
            times,
            f: states.iter().map(|s| s[..n].to_vec()).collect(),
            h: states.iter().map(|s| s[n..d].to_vec()).collect(),
            df: states.iter().map(|s| s[d..d + n].to_vec()).collect(),
            dh: states.iter().map(|s| s[d + n..].to_vec()).collect(),
            truncated,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Position `(f, h)` at sample `k`.
    pub fn position(&self, k: usize) -> Vec<f64> {
        [&self.f[k][..], &self.h[k]].concat()
    }

    pub fn velocity(&self, k: usize) -> Vec<f64> {
        [&self.df[k][..], &self.dh[k]].concat()
    }
}

/// Right-hand side of the τ-expanded super geodesic system.
pub fn super_geodesic_rhs(conn: &SuperConnection, state: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let chart = conn.chart();
    let (n, q) = (chart.n, chart.q);
    let d = n + q;
    let (f, h, df, dh) = (&state[..n], &state[n..d], &state[d..d + n], &state[d + n..]);
    let gamma = conn.christoffel_at(f)?;
    let mut out = vec![0.0; 2 * d];
    out[..d].copy_from_slice(&state[d..]);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            for k in 0..n {
                acc += df[j] * df[k] * gamma.get(i, j, k).body();
            }
        }
        out[d + i] = -acc;
    }
    for a in 0..q {
        let mut acc = 0.0;
        for j in 0..n {
            for k in 0..n {
                let g = gamma.get(n + a, j, k);
                let lin: f64 = (0..q).map(|b| g.coefficient(MultiIndex::generator(b + 1)) * h[b]).sum();
                acc += df[j] * df[k] * lin;
            }
            for b in 0..q {
                acc += df[j] * dh[b] * (gamma.get(n + a, j, n + b).body() + gamma.get(n + a, n + b, j).body());
            }
        }
        out[d + n + a] = -acc;
    }
    Ok(out)
}

/// Right-hand side of `ÿ^r = −Σ ẏ^s ẏ^u Γ^TE{}^r_{su}(y)`.
pub fn classical_geodesic_rhs(conn: &ReducedConnection, state: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let n = conn.chart().n;
    let d = state.len() / 2;
    let (y, dy) = (&state[..d], &state[d..]);
    let gamma = conn.symbols_at(&y[..n])?.values(&y[n..]);
    let mut out = vec![0.0; 2 * d];
    out[..d].copy_from_slice(dy);
    for r in 0..d {
        let mut acc = 0.0;
        for s in 0..d {
            for u in 0..d {
                acc += dy[s] * dy[u] * gamma[(r * d + s) * d + u];
            }
        }
        out[d + r] = -acc;
    }
    Ok(out)
}

/// Geodesic equation of a classical connection on `M`; state `[x (n), v (n)]`.
pub fn base_geodesic_rhs(conn: &BaseConnection, state: &[f64]) -> Result<Vec<f64>, GeometryError> {
    let n = state.len() / 2;
    let gamma = conn.symbols_at(&state[..n])?;
    let mut out = vec![0.0; 2 * n];
    out[..n].copy_from_slice(&state[n..]);
    let v = &state[n..];
    for k in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += v[i] * v[j] * gamma[(k * n + i) * n + j];
            }
        }
        out[n + k] = -acc;
    }
    Ok(out)
}

/// Fixed-step classical RK4 trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub truncated: bool,
}

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Integrates `ẏ = rhs(y)` from `y0` with step `dt` up to `t_end`. The
/// trajectory stops, flagged as truncated, as soon as an accepted state fails
/// `inside` or a stage evaluation fails outside the chart.
pub fn rk4<F, I>(rhs: F, y0: &[f64], t_end: f64, dt: f64, inside: I) -> Result<Trajectory, FlowError>
where
    F: Fn(&[f64]) -> Result<Vec<f64>, GeometryError>,
    I: Fn(&[f64]) -> bool,
{
    if !(dt > 0.0 && dt.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) {
        return Err(FlowError::InvalidParameters(format!("need dt > 0 and t_end > 0, got dt={dt}, t_end={t_end}")));
    }
    let steps = ((t_end / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(y0.to_vec());
    let mut y = y0.to_vec();
    for step in 0..steps {
        let t = step as f64 * dt;
        let h = if step + 1 == steps { t_end - t } else { dt };
        let stage = |z: &[f64]| -> Result<Option<Vec<f64>>, FlowError> {
            match rhs(z) {
                Ok(v) => Ok(Some(v)),
                Err(_) if !inside(z) => Ok(None),
                Err(e) => Err(e.into()),
            }
        };
        let next = (|| -> Result<Option<Vec<f64>>, FlowError> {
            let Some(k1) = stage(&y)? else { return Ok(None) };
            let Some(k2) = stage(&axpy(&y, 0.5 * h, &k1))? else { return Ok(None) };
            let Some(k3) = stage(&axpy(&y, 0.5 * h, &k2))? else { return Ok(None) };
            let Some(k4) = stage(&axpy(&y, h, &k3))? else { return Ok(None) };
            Ok(Some((0..y.len()).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()))
        })()?;
        match next {
            Some(v) if inside(&v) && v.iter().all(|c| c.is_finite()) => {
                y = v;
                times.push(if step + 1 == steps { t_end } else { (step + 1) as f64 * dt });
                states.push(y.clone());
            }
            _ => return Ok(Trajectory { times, states, truncated: true }),
        }
    }
    Ok(Trajectory { times, states, truncated: false })
}

fn in_box<'a>(chart_box: &'a ChartBox, n: usize) -> impl Fn(&[f64]) -> bool + 'a {
    move |s: &[f64]| chart_box.contains(&s[..n])
}

/// Super geodesic from `ic`.
pub fn integrate_super(
    conn: &SuperConnection,
    chart_box: &ChartBox,
    ic: &InitialCondition,
    t_end: f64,
    dt: f64,
) -> Result<CurveSample, FlowError> {
    let (n, q) = (conn.chart().n, conn.chart().q);
    ic.validate(n, q, chart_box)?;
    let tr = rk4(|s| super_geodesic_rhs(conn, s), &ic.state(), t_end, dt, in_box(chart_box, n))?;
    Ok(CurveSample::from_states(n, tr.times, &tr.states, tr.truncated))
}

/// Geodesic of `∇^TE` from the point `(x0, e0)` with velocity `(v0, w0)`.
pub fn integrate_classical(
    conn: &ReducedConnection,
    chart_box: &ChartBox,
    ic: &InitialCondition,
    t_end: f64,
    dt: f64,
) -> Result<CurveSample, FlowError> {
    let (n, q) = (conn.chart().n, conn.chart().q);
    ic.validate(n, q, chart_box)?;
    let tr = rk4(|s| classical_geodesic_rhs(conn, s), &ic.state(), t_end, dt, in_box(chart_box, n))?;
    Ok(CurveSample::from_states(n, tr.times, &tr.states, tr.truncated))
}

/// Geodesic of `∇^TM` on `M`; the `h` components of the result are empty.
pub fn integrate_base(
    conn: &BaseConnection,
    chart_box: &ChartBox,
    x0: &[f64],
    v0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<CurveSample, FlowError> {
    let n = conn.n();
    if x0.len() != n || v0.len() != n {
        return Err(FlowError::InvalidParameters(format!("base initial data must have length {n}")));
    }
    if !chart_box.contains(x0) {
        return Err(FlowError::OutsideChart { point: x0.to_vec() });
    }
    let y0 = [x0, v0].concat();
    let tr = rk4(|s| base_geodesic_rhs(conn, s), &y0, t_end, dt, in_box(chart_box, n))?;
    Ok(CurveSample::from_states(n, tr.times, &tr.states, tr.truncated))
}

/// Both curves of the correspondence and their sample-wise sup-norm distance.
#[derive(Clone, Debug, PartialEq)]
pub struct Correspondence {
    pub super_curve: CurveSample,
    pub classical_curve: CurveSample,
    pub deviation: Vec<f64>,
}

impl Correspondence {
    pub fn max_deviation(&self) -> f64 {
        self.deviation.iter().cloned().fold(0.0, f64::max)
    }
}

/// Integrates the super geodesic and the `∇^TE` geodesic from the same data
/// and compares `(f, h)` with `y` at every step.
pub fn correspondence(
    conn: &SuperConnection,
    reduced: &ReducedConnection,
    chart_box: &ChartBox,
    ic: &InitialCondition,
    t_end: f64,
    dt: f64,
) -> Result<Correspondence, FlowError> {
    let super_curve = integrate_super(conn, chart_box, ic, t_end, dt)?;
    if super_curve.truncated {
        let t = *super_curve.times.last().unwrap_or(&0.0);
        return Err(FlowError::Truncated { t, partial: Box::new(super_curve) });
    }
    let classical_curve = integrate_classical(reduced, chart_box, ic, t_end, dt)?;
    if classical_curve.truncated {
        let t = *classical_curve.times.last().unwrap_or(&0.0);
        return Err(FlowError::Truncated { t, partial: Box::new(classical_curve) });
    }
    let deviation = (0..super_curve.len())
        .map(|k| {
            let a = super_curve.position(k);
            let b = classical_curve.position(k);
            a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
        })
        .collect();
    Ok(Correspondence { super_curve, classical_curve, deviation })
}

/// Max over samples of the distance between the two sides.
pub fn correspondence_deviation(
    conn: &SuperConnection,
    reduced: &ReducedConnection,
    chart_box: &ChartBox,
    ic: &InitialCondition,
    t_end: f64,
    dt: f64,
) -> Result<f64, FlowError> {
    Ok(correspondence(conn, reduced, chart_box, ic, t_end, dt)?.max_deviation())
}

/// `g^TE(γ̇, γ̇)` along a curve in `E`.
pub fn energy(metric: &ReducedMetric, curve: &CurveSample) -> Result<Vec<f64>, GeometryError> {
    (0..curve.len())
        .map(|k| {
            let g = metric.value_at(&curve.f[k], &curve.h[k])?;
            let v = nalgebra::DVector::from_vec(curve.velocity(k));
            Ok(v.dot(&(&g * &v)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superfield::{ChartSpec, SuperFunction};
    use std::sync::Arc;

    fn flat(n: usize, q: usize) -> SuperConnection {
        let c = Arc::new(ChartSpec::new(n, q, "flat").unwrap());
        let d = n + q;
        SuperConnection::symbolic(c.clone(), vec![SuperFunction::zero(c); d * d * d]).unwrap()
    }

    #[test]
    fn flat_rhs_is_free_motion() {
        let conn = flat(1, 2);
        let s = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        assert_eq!(super_geodesic_rhs(&conn, &s).unwrap(), vec![0.4, 0.5, 0.6, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn flat_curves_are_lines() {
        let conn = flat(2, 2);
        let b = ChartBox::cube(2, 1.0);
        let ic = InitialCondition { x0: vec![0.1, -0.2], v0: vec![0.3, 0.1], e0: vec![1.0, -1.0], w0: vec![0.5, 0.25] };
        let c = integrate_super(&conn, &b, &ic, 1.0, 0.1).unwrap();
        assert!(!c.truncated);
        assert_eq!(c.len(), 11);
        let last = c.position(10);
        let want = [0.4, -0.1, 1.5, -0.75];
        for (a, b) in last.iter().zip(want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn leaving_the_box_truncates() {
        let conn = flat(1, 2);
        let b = ChartBox::cube(1, 1.0);
        let ic = InitialCondition { x0: vec![0.5], v0: vec![1.0], e0: vec![0.0; 2], w0: vec![0.0; 2] };
        let c = integrate_super(&conn, &b, &ic, 2.0, 0.1).unwrap();
        assert!(c.truncated);
        assert!(c.f.iter().all(|f| f[0] < 1.0));
        let red = crate::reduction::reduce_connection(&conn);
        assert!(matches!(correspondence(&conn, &red, &b, &ic, 2.0, 0.1), Err(FlowError::Truncated { .. })));
    }

    #[test]
    fn bad_parameters_rejected() {
        let conn = flat(1, 2);
        let b = ChartBox::cube(1, 1.0);
        let ic = InitialCondition { x0: vec![0.0], v0: vec![1.0], e0: vec![0.0; 2], w0: vec![0.0; 2] };
        assert!(matches!(integrate_super(&conn, &b, &ic, 1.0, 0.0), Err(FlowError::InvalidParameters(_))));
        let outside = InitialCondition { x0: vec![3.0], ..ic };
        assert!(matches!(integrate_super(&conn, &b, &outside, 1.0, 0.1), Err(FlowError::OutsideChart { .. })));
    }
}
