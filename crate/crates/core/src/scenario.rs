//! Scenario files: chart, metric or connection, initial conditions, integration
//! parameters and the check suites to run. Also deterministic random scenarios.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checks::Suite;
use crate::error::{GeometryError, ScenarioError};
use crate::expr::ScalarExpr;
use crate::geodesic::InitialCondition;
use crate::geometry::{koszul, par, SuperConnection, SuperMetric};
use crate::grassmann::MultiIndex;
use crate::reduction::FrameChange;
use crate::sampling::ChartBox;
use crate::superfield::{ChartSpec, SuperFunction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartBlock {
    pub n: usize,
    pub q: usize,
    #[serde(default)]
    pub name: String,
    /// `[[lo, hi], ...]` per base coordinate; defaults to `(-1, 1)^n`.
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBlock {
    pub parity: u8,
    /// `"r,s"` (1-based, base coordinates first) → superfunction text.
    pub coeffs: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionBlock {
    /// `"r,s,u"` → text of `Γ^r_{su}`; omitted symbols are zero.
    pub christoffel: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Integration {
    pub dt: f64,
    pub t_end: f64,
}

impl Default for Integration {
    fn default() -> Self {
        Integration { dt: 1e-3, t_end: 1.0 }
    }
}

/// On-disk form of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub chart: ChartBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connection: Option<ConnectionBlock>,
    #[serde(default)]
    pub initial_conditions: Vec<InitialCondition>,
    #[serde(default)]
    pub integration: Integration,
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
    /// Row-major `q × q` matrix `G(x)` for the equivariance suite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_change: Option<Vec<Vec<String>>>,
}

#[derive(Clone, Debug)]
pub enum ScenarioGeometry {
    Metric(Arc<SuperMetric>),
    Connection(SuperConnection),
}

/// A validated scenario with every expression parsed.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub chart: Arc<ChartSpec>,
    pub chart_box: ChartBox,
    pub geometry: ScenarioGeometry,
    pub initial_conditions: Vec<InitialCondition>,
    pub integration: Integration,
    pub checks: Vec<Suite>,
    pub seed: u64,
    pub samples: Option<usize>,
    pub tolerances: BTreeMap<Suite, f64>,
    pub frame_change: Option<Arc<FrameChange>>,
    pub file: ScenarioFile,
}

impl Scenario {
    pub fn metric(&self) -> Option<&Arc<SuperMetric>> {
        match &self.geometry {
            ScenarioGeometry::Metric(g) => Some(g),
            ScenarioGeometry::Connection(_) => None,
        }
    }

    /// The metric's Levi-Civita connection, or the explicit connection.
    pub fn connection(&self) -> SuperConnection {
        match &self.geometry {
            ScenarioGeometry::Metric(g) => crate::geometry::levi_civita(g.clone()),
            ScenarioGeometry::Connection(c) => c.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("scenario serializes")
    }
}

fn escape_pointer(token: &str) -> String {
    token.replace('~', "~0").replace('/', "~1")
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema { pointer: pointer.into(), message: message.into() }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let pointer: String =
            e.path().iter().map(|seg| format!("/{}", escape_pointer(&seg.to_string()))).collect::<String>();
        let message = e.inner().to_string();
        if e.inner().is_syntax() || e.inner().is_eof() {
            ScenarioError::Json(e.into_inner())
        } else {
            schema(if pointer.is_empty() { "/".to_string() } else { pointer }, message)
        }
    })?;
    build_scenario(file)
}

fn parse_indices(key: &str, count: usize, dim: usize, pointer: &str) -> Result<Vec<usize>, ScenarioError> {
    let parts: Vec<&str> = key.split(',').map(str::trim).collect();
    if parts.len() != count {
        return Err(schema(pointer, format!("key must have {count} comma-separated indices")));
    }
    parts
        .iter()
        .map(|p| match p.parse::<usize>() {
            Ok(i) if (1..=dim).contains(&i) => Ok(i - 1),
            _ => Err(schema(pointer, format!("index '{p}' must lie in 1..={dim}"))),
        })
        .collect()
}

fn parse_sf(text: &str, chart: &Arc<ChartSpec>, pointer: &str) -> Result<SuperFunction, ScenarioError> {
    SuperFunction::parse(text, chart.clone())
        .map_err(|source| ScenarioError::Expression { pointer: pointer.to_string(), source })
}

pub fn build_scenario(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
    let cb = &file.chart;
    let chart = Arc::new(ChartSpec::new(cb.n, cb.q, cb.name.clone()).map_err(|e| schema("/chart", e.to_string()))?);
    let (n, q) = (chart.n, chart.q);
    let d = n + q;
    let chart_box = match &cb.bounds {
        None => ChartBox::cube(n, 1.0),
        Some(b) => {
            if b.len() != n {
                return Err(schema("/chart/box", format!("expected {n} intervals")));
            }
            for (i, [lo, hi]) in b.iter().enumerate() {
                if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                    return Err(schema(format!("/chart/box/{i}"), "interval must satisfy lo < hi"));
                }
            }
            ChartBox { bounds: b.iter().map(|[lo, hi]| (*lo, *hi)).collect() }
        }
    };
    let geometry = match (&file.metric, &file.connection) {
        (Some(_), Some(_)) => return Err(schema("/", "exactly one of 'metric' and 'connection' may be given")),
        (None, None) => return Err(schema("/", "one of 'metric' or 'connection' is required")),
        (Some(m), None) => {
            if m.parity > 1 {
                return Err(schema("/metric/parity", "parity must be 0 or 1"));
            }
            if m.parity == 1 && n != q {
                return Err(ScenarioError::Incompatible("odd metric requires n=q".into()));
            }
            if m.parity == 0 && q % 2 != 0 {
                return Err(ScenarioError::Incompatible("even metric requires even odd dimension q".into()));
            }
            let mut given: Vec<Option<SuperFunction>> = vec![None; d * d];
            for (key, text) in &m.coeffs {
                let pointer = format!("/metric/coeffs/{}", escape_pointer(key));
                let idx = parse_indices(key, 2, d, &pointer)?;
                given[idx[0] * d + idx[1]] = Some(parse_sf(text, &chart, &pointer)?);
            }
            let mut coeffs = Vec::with_capacity(d * d);
            for r in 0..d {
                for s in 0..d {
                    let f = match (&given[r * d + s], &given[s * d + r]) {
                        (Some(f), _) => f.clone(),
                        (None, Some(p)) => p.scale(koszul(par(r, n), par(s, n))),
                        (None, None) => SuperFunction::zero(chart.clone()),
                    };
                    coeffs.push(f);
                }
            }
            let g = SuperMetric::new(chart.clone(), m.parity, coeffs).map_err(|e| match e {
                GeometryError::InvalidMetric(msg) => schema("/metric", msg),
                other => ScenarioError::Geometry(other),
            })?;
            ScenarioGeometry::Metric(Arc::new(g))
        }
        (None, Some(c)) => {
            let mut table = vec![SuperFunction::zero(chart.clone()); d * d * d];
            for (key, text) in &c.christoffel {
                let pointer = format!("/connection/christoffel/{}", escape_pointer(key));
                let idx = parse_indices(key, 3, d, &pointer)?;
                table[(idx[0] * d + idx[1]) * d + idx[2]] = parse_sf(text, &chart, &pointer)?;
            }
            let conn = SuperConnection::symbolic(chart.clone(), table).map_err(|e| match e {
                GeometryError::InvalidConnection(msg) => schema("/connection", msg),
                other => ScenarioError::Geometry(other),
            })?;
            ScenarioGeometry::Connection(conn)
        }
    };
    for (k, ic) in file.initial_conditions.iter().enumerate() {
        ic.validate(n, q, &chart_box).map_err(|e| schema(format!("/initial_conditions/{k}"), e.to_string()))?;
    }
    let Integration { dt, t_end } = file.integration;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(schema("/integration/dt", "must be positive"));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(schema("/integration/t_end", "must be positive"));
    }
    let checks = file
        .checks
        .iter()
        .enumerate()
        .map(|(k, s)| s.parse::<Suite>().map_err(|e| schema(format!("/checks/{k}"), e)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut tolerances = BTreeMap::new();
    for (name, tol) in &file.tolerances {
        let pointer = format!("/tolerances/{}", escape_pointer(name));
        let suite = name.parse::<Suite>().map_err(|e| schema(&pointer, e))?;
        if tol.is_nan() || *tol < 0.0 {
            return Err(schema(pointer, "tolerance must be non-negative"));
        }
        tolerances.insert(suite, *tol);
    }
    if file.samples == Some(0) {
        return Err(schema("/samples", "must be positive"));
    }
    let frame_change = match &file.frame_change {
        None => None,
        Some(rows) => {
            if rows.len() != q || rows.iter().any(|r| r.len() != q) {
                return Err(schema("/frame_change", format!("expected a {q}x{q} matrix")));
            }
            let mut entries = Vec::with_capacity(q * q);
            for (a, row) in rows.iter().enumerate() {
                for (b, text) in row.iter().enumerate() {
                    let e = ScalarExpr::parse(text, n).map_err(|err| ScenarioError::Expression {
                        pointer: format!("/frame_change/{a}/{b}"),
                        source: err.into(),
                    })?;
                    entries.push(e);
                }
            }
            Some(Arc::new(FrameChange::new(&chart, entries)?))
        }
    };
    Ok(Scenario {
        chart,
        chart_box,
        geometry,
        initial_conditions: file.initial_conditions.clone(),
        integration: file.integration,
        checks,
        seed: file.seed,
        samples: file.samples,
        tolerances,
        frame_change,
        file,
    })
}

/// Options for [`random_scenario`].
#[derive(Clone, Debug, PartialEq)]
pub struct RandomOptions {
    /// Perturbation size; `0` gives a flat metric. Must be below 1 to keep the
    /// body non-degenerate on the box.
    pub scale: f64,
    pub initial_conditions: usize,
    pub checks: Vec<Suite>,
}

impl Default for RandomOptions {
    fn default() -> Self {
        RandomOptions { scale: 0.5, initial_conditions: 4, checks: Suite::ALL.to_vec() }
    }
}

fn fmt_coeff(c: f64) -> String {
    let s = format!("{c:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Monomials `1, x_i, x_i x_j (i <= j)` rendered as text factors.
fn monomials(n: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    for i in 1..=n {
        out.push(format!("x{i}"));
    }
    for i in 1..=n {
        for j in i..=n {
            out.push(if i == j { format!("x{i}^2") } else { format!("x{i}*x{j}") });
        }
    }
    out
}

/// Random polynomial of degree <= 2 with coefficients in `[-amp, amp]` and
/// optional constant offset; returns `None` when every coefficient rounds to zero.
fn random_poly(rng: &mut ChaCha8Rng, n: usize, amp: f64, offset: f64) -> Option<String> {
    let mons = monomials(n);
    let mut text = String::new();
    for (k, m) in mons.iter().enumerate() {
        let mut c = if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
        if k == 0 {
            c += offset;
        }
        let c: f64 = fmt_coeff(c).parse().unwrap_or(0.0);
        if c == 0.0 {
            continue;
        }
        let mag = fmt_coeff(c.abs());
        let term = if m.is_empty() { mag } else { format!("{mag}*{m}") };
        if text.is_empty() {
            text = if c < 0.0 { format!("-{term}") } else { term };
        } else {
            text.push_str(if c < 0.0 { " - " } else { " + " });
            text.push_str(&term);
        }
    }
    (!text.is_empty()).then_some(text)
}

/// Superfunction text with components on every multi-index of the given
/// parity and degree <= 3.
fn random_sf(rng: &mut ChaCha8Rng, n: usize, q: usize, parity: u8, amp: f64, body: f64, soul_amp: f64) -> String {
    let mut parts = Vec::new();
    if parity == 0 {
        if let Some(p) = random_poly(rng, n, amp, body) {
            parts.push(p);
        }
    }
    for mask in 1u32..(1 << q) {
        let idx = MultiIndex::from_mask(mask);
        if idx.len() > 3 || idx.len() % 2 != parity as usize {
            continue;
        }
        if let Some(p) = random_poly(rng, n, soul_amp, 0.0) {
            let labels: Vec<String> = idx.labels().iter().map(|l| l.to_string()).collect();
            parts.push(format!("({p})*e[{}]", labels.join(",")));
        }
    }
    if parts.is_empty() {
        "0".to_string()
    } else {
        parts.join(" + ")
    }
}

/// Deterministic random metric scenario. Even metrics (`q` even) are
/// `(δ + P) ⊕ (J + A)` on the body with odd mixed entries; odd metrics (`n = q`)
/// pair base and fiber through `δ + P`. Perturbations are bounded so that the
/// body stays invertible on `[-1, 1]^n`.
pub fn random_scenario(
    n: usize,
    q: usize,
    parity: u8,
    seed: u64,
    opts: &RandomOptions,
) -> Result<Scenario, ScenarioError> {
    if parity > 1 {
        return Err(ScenarioError::Incompatible(format!("parity must be 0 or 1, got {parity}")));
    }
    if parity == 1 && n != q {
        return Err(ScenarioError::Incompatible("odd metric requires n=q".into()));
    }
    if parity == 0 && !q.is_multiple_of(2) {
        return Err(ScenarioError::Incompatible("even metric requires even odd dimension q".into()));
    }
    if !(0.0..1.0).contains(&opts.scale) {
        return Err(ScenarioError::Incompatible("perturbation scale must lie in [0, 1)".into()));
    }
    ChartSpec::new(n, q, "random").map_err(|e| ScenarioError::Incompatible(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = n + q;
    let mons = monomials(n).len() as f64;
    // row sums of the body perturbation stay below `scale`
    let amp = opts.scale / (mons * d as f64);
    let soul = opts.scale / mons;
    let mut coeffs = BTreeMap::new();
    let key = |r: usize, s: usize| format!("{},{}", r + 1, s + 1);
    for r in 0..d {
        for s in r..d {
            let (pr, ps) = (par(r, n), par(s, n));
            let entry_parity = (parity + pr + ps) % 2;
            let body = match (parity, pr, ps) {
                (0, 0, 0) if r == s => 1.0,
                // standard symplectic pairing (n+1, n+2), (n+3, n+4), ...
                (0, 1, 1) if (r - n).is_multiple_of(2) && s == r + 1 => 1.0,
                (1, 0, 1) if s - n == r => 1.0,
                _ => 0.0,
            };
            if pr == 1 && ps == 1 && r == s {
                // the odd-odd block is antisymmetric
                continue;
            }
            let text = if entry_parity == 0 {
                random_sf(&mut rng, n, q, 0, amp, body, soul)
            } else {
                random_sf(&mut rng, n, q, 1, 0.0, 0.0, soul)
            };
            if text != "0" {
                coeffs.insert(key(r, s), text);
            }
        }
    }
    let initial_conditions = (0..opts.initial_conditions)
        .map(|_| InitialCondition {
            x0: (0..n).map(|_| round4(rng.gen_range(-0.3..=0.3))).collect(),
            v0: (0..n).map(|_| round4(rng.gen_range(-0.4..=0.4))).collect(),
            e0: (0..q).map(|_| round4(rng.gen_range(-1.0..=1.0))).collect(),
            w0: (0..q).map(|_| round4(rng.gen_range(-1.0..=1.0))).collect(),
        })
        .collect();
    let frame = random_frame_rows(&mut rng, n, q);
    let file = ScenarioFile {
        chart: ChartBlock {
            n,
            q,
            name: format!("random-n{n}-q{q}-p{parity}-s{seed}"),
            bounds: Some(vec![[-1.0, 1.0]; n]),
        },
        metric: Some(MetricBlock { parity, coeffs }),
        connection: None,
        initial_conditions,
        integration: Integration::default(),
        checks: opts.checks.iter().map(|s| s.name().to_string()).collect(),
        seed,
        samples: None,
        tolerances: BTreeMap::new(),
        frame_change: Some(frame),
    };
    build_scenario(file)
}

fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

/// `G(x) = I + P(x)` with small quadratic entries, invertible on `[-1, 1]^n`.
fn random_frame_rows(rng: &mut ChaCha8Rng, n: usize, q: usize) -> Vec<Vec<String>> {
    let mons = monomials(n).len() as f64;
    let amp = 0.5 / (mons * q as f64);
    (0..q)
        .map(|a| {
            (0..q)
                .map(|b| random_poly(rng, n, amp, if a == b { 1.0 } else { 0.0 }).unwrap_or_else(|| "0".into()))
                .collect()
        })
        .collect()
}

/// Random x-dependent frame change for `chart`, deterministic in `seed`.
pub fn random_frame_change(chart: &ChartSpec, seed: u64) -> FrameChange {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = random_frame_rows(&mut rng, chart.n, chart.q);
    let entries =
        rows.iter().flatten().map(|t| ScalarExpr::parse(t, chart.n).expect("generated text parses")).collect();
    FrameChange::new(chart, entries).expect("generated frame change is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_scenarios_are_deterministic() {
        let opts = RandomOptions::default();
        let a = random_scenario(2, 2, 1, 7, &opts).unwrap();
        let b = random_scenario(2, 2, 1, 7, &opts).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = random_scenario(2, 2, 1, 8, &opts).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn zero_scale_is_flat() {
        let opts = RandomOptions { scale: 0.0, ..Default::default() };
        let s = random_scenario(1, 2, 0, 3, &opts).unwrap();
        let coeffs = &s.file.metric.as_ref().unwrap().coeffs;
        assert_eq!(coeffs.get("1,1").map(String::as_str), Some("1"));
        assert_eq!(coeffs.get("2,3").map(String::as_str), Some("1"));
        assert_eq!(coeffs.len(), 2);
    }

    #[test]
    fn incompatible_dimensions() {
        let opts = RandomOptions::default();
        assert!(matches!(random_scenario(2, 1, 1, 0, &opts), Err(ScenarioError::Incompatible(m)) if m.contains("n=q")));
        assert!(random_scenario(1, 1, 0, 0, &opts).is_err());
    }

    #[test]
    fn round_trip_through_json() {
        let s = random_scenario(1, 1, 1, 11, &RandomOptions::default()).unwrap();
        let again = parse_scenario(&s.to_json()).unwrap();
        assert_eq!(again.file, s.file);
    }

    #[test]
    fn schema_errors_carry_pointers() {
        let err = parse_scenario(r#"{"chart": {"n": 1, "q": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("one of 'metric' or 'connection'"), "{err}");
        let err = parse_scenario(r#"{"chart": {"n": "one", "q": 1}}"#).unwrap_err();
        assert!(err.to_string().starts_with("/chart/n"), "{err}");
        let err = parse_scenario(r#"{"chart": {"n": 1, "q": 1}, "metric": {"parity": 1, "coeffs": {"1,2": "x2"}}}"#)
            .unwrap_err();
        assert!(err.to_string().starts_with("/metric/coeffs/1,2"), "{err}");
        let err = parse_scenario(r#"{"chart": {"n": 2, "q": 1}, "metric": {"parity": 1, "coeffs": {}}}"#).unwrap_err();
        assert!(err.to_string().contains("odd metric requires n=q"));
    }
}
