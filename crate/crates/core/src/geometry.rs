//! Super metrics, superconnections, torsion, the compatibility tensor Θ and the
//! graded Levi-Civita solve on a single chart.
//!
//! Coordinates are indexed globally: `0..n` are the even base coordinates
//! `x_i`, `n..n+q` the odd generators. Christoffel symbols follow
//! `∇_{∂_s} ∂_u = Σ_r Γ^r_{su} ∂_r` with coefficients on the left.
//!
//! The metric acts from the left: `g(fX, Y) = (-1)^{|g||f|} f g(X, Y)` and
//! `g(X, fY) = (-1)^{|f|(|g|+|X|)} f g(X, Y)`. For even metrics this is the
//! plain left-linear convention.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{FieldError, GeometryError};
use crate::grassmann::{Accumulator, GrassmannMatrix, GrassmannValue, Parity};
use crate::reduction::FrameChange;
use crate::superfield::{ChartSpec, SuperFunction};

/// A homogeneous coordinate of the chart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CoordIndex {
    /// `x_i`, 0-based.
    Base(usize),
    /// `e*_α`, 0-based.
    Odd(usize),
}

impl CoordIndex {
    pub fn parity(self) -> u8 {
        match self {
            CoordIndex::Base(_) => 0,
            CoordIndex::Odd(_) => 1,
        }
    }

    pub fn from_global(s: usize, n: usize) -> Self {
        if s < n {
            CoordIndex::Base(s)
        } else {
            CoordIndex::Odd(s - n)
        }
    }

    pub fn global(self, n: usize) -> usize {
        match self {
            CoordIndex::Base(i) => i,
            CoordIndex::Odd(a) => n + a,
        }
    }
}

impl fmt::Display for CoordIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoordIndex::Base(i) => write!(f, "x{}", i + 1),
            CoordIndex::Odd(a) => write!(f, "e{}", a + 1),
        }
    }
}

#[inline]
pub(crate) fn par(s: usize, n: usize) -> u8 {
    (s >= n) as u8
}

/// `(-1)^{ab}` for parity bits.
#[inline]
pub(crate) fn koszul(a: u8, b: u8) -> f64 {
    if a & b & 1 == 1 {
        -1.0
    } else {
        1.0
    }
}

/// Even (`parity = 0`) or odd (`parity = 1`) supersymmetric metric given by
/// its coefficient superfunctions `g_{rs} = g(∂_r, ∂_s)`.
#[derive(Clone, Debug)]
pub struct SuperMetric {
    chart: Arc<ChartSpec>,
    parity: u8,
    coeffs: Vec<SuperFunction>,
    // [i][u * dim + r] = ∂̂_i g_{ur}
    base_derivs: Vec<Vec<SuperFunction>>,
}

impl SuperMetric {
    /// Validates parity, supersymmetry and the dimension constraints. `coeffs`
    /// is row-major `(n+q) × (n+q)`.
    pub fn new(chart: Arc<ChartSpec>, parity: u8, coeffs: Vec<SuperFunction>) -> Result<Self, GeometryError> {
        let dim = chart.dim();
        let n = chart.n;
        if parity > 1 {
            return Err(GeometryError::InvalidMetric(format!("parity flag must be 0 or 1, got {parity}")));
        }
        if parity == 0 && !chart.q.is_multiple_of(2) {
            return Err(GeometryError::InvalidMetric("even metric requires even odd dimension q".into()));
        }
        if parity == 1 && chart.n != chart.q {
            return Err(GeometryError::InvalidMetric("odd metric requires n=q".into()));
        }
        if coeffs.len() != dim * dim {
            return Err(GeometryError::InvalidMetric(format!("expected {} coefficients", dim * dim)));
        }
        for (k, g) in coeffs.iter().enumerate() {
            let (r, s) = (k / dim, k % dim);
            if **g.chart() != *chart {
                return Err(FieldError::ChartMismatch(g.chart().to_string(), chart.to_string()).into());
            }
            let want = (parity + par(r, n) + par(s, n)) % 2;
            match g.parity() {
                Parity::Mixed => {
                    return Err(GeometryError::InvalidMetric(format!("g[{},{}] has mixed parity", r + 1, s + 1)))
                }
                p if !g.is_zero() && p.bit() != Some(want) => {
                    return Err(GeometryError::InvalidMetric(format!("g[{},{}] must have parity {want}", r + 1, s + 1)))
                }
                _ => {}
            }
        }
        let metric = SuperMetric {
            base_derivs: (1..=n)
                .map(|i| coeffs.iter().map(|g| g.dhat_base(i)).collect::<Result<Vec<_>, _>>())
                .collect::<Result<_, _>>()?,
            chart,
            parity,
            coeffs,
        };
        metric.check_supersymmetry()?;
        Ok(metric)
    }

    fn check_supersymmetry(&self) -> Result<(), GeometryError> {
        let dim = self.dim();
        let n = self.chart.n;
        // probe points in a small cube around the origin
        let probes = crate::sampling::ChartBox::cube(n, 0.5).halton(5, 0.1);
        for r in 0..dim {
            for s in r..dim {
                let a = self.coeff(r, s);
                let b = self.coeff(s, r).scale(koszul(par(r, n), par(s, n)));
                if *a == b {
                    continue;
                }
                for x in &probes {
                    if let (Ok(va), Ok(vb)) = (a.eval(x), b.eval(x)) {
                        if va.max_abs_diff(&vb) > 1e-12 * (1.0 + va.max_abs()) {
                            return Err(GeometryError::InvalidMetric(format!(
                                "g[{},{}] and g[{},{}] violate supersymmetry",
                                r + 1,
                                s + 1,
                                s + 1,
                                r + 1
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn chart(&self) -> &Arc<ChartSpec> {
        &self.chart
    }

    pub fn parity(&self) -> u8 {
        self.parity
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    /// `g_{rs}` (global 0-based indices).
    pub fn coeff(&self, r: usize, s: usize) -> &SuperFunction {
        &self.coeffs[r * self.dim() + s]
    }

    pub fn coeffs(&self) -> &[SuperFunction] {
        &self.coeffs
    }

    /// Values `g_{ur}(x)` and first derivatives `∂_s g_{ur}(x)`.
    pub fn jet(&self, x: &[f64]) -> Result<MetricJet, GeometryError> {
        let dim = self.dim();
        let n = self.chart.n;
        let q = self.chart.q;
        let values: Vec<GrassmannValue> = self.coeffs.iter().map(|g| g.eval(x)).collect::<Result<_, _>>()?;
        let mut dg = Vec::with_capacity(dim);
        for i in 0..n {
            dg.push(self.base_derivs[i].iter().map(|g| g.eval(x)).collect::<Result<Vec<_>, _>>()?);
        }
        for a in 1..=q {
            dg.push(values.iter().map(|v| v.left_derivative(a)).collect::<Result<Vec<_>, _>>()?);
        }
        let rows = values.chunks(dim).map(|r| r.to_vec()).collect();
        Ok(MetricJet { g: GrassmannMatrix::from_rows(q, rows)?, dg, n })
    }

    /// Real matrix of bodies `~g_{rs}(x)`.
    pub fn body_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for r in 0..dim {
            for s in 0..dim {
                m[(r, s)] = self.coeff(r, s).reduce().eval(x)?;
            }
        }
        Ok(m)
    }
}

/// Pointwise metric data used by the Levi-Civita solve and Θ.
#[derive(Clone, Debug)]
pub struct MetricJet {
    pub g: GrassmannMatrix,
    /// `dg[s][u * dim + r] = ∂_s g_{ur}`.
    pub dg: Vec<Vec<GrassmannValue>>,
    n: usize,
}

impl MetricJet {
    pub fn d(&self, s: usize, u: usize, r: usize) -> &GrassmannValue {
        &self.dg[s][u * self.g.dim() + r]
    }
}

/// Per-point non-degeneracy result.
#[derive(Clone, Debug)]
pub struct NondegeneracyReport {
    pub points: Vec<Vec<f64>>,
    /// Condition number of the body matrix at each point (`inf` when singular
    /// or not evaluable).
    pub condition: Vec<f64>,
}

impl NondegeneracyReport {
    pub fn is_nondegenerate(&self) -> bool {
        self.condition.iter().all(|c| c.is_finite())
    }

    pub fn max_condition(&self) -> f64 {
        self.condition.iter().cloned().fold(0.0, f64::max)
    }
}

/// Checks invertibility of the body of `g` at every sample. For odd metrics
/// the body matrix is the off-diagonal pairing block `~g_{iα}`, so the same
/// test applies.
pub fn metric_nondegenerate(g: &SuperMetric, samples: &[Vec<f64>]) -> NondegeneracyReport {
    let condition = samples
        .iter()
        .map(|x| match g.body_matrix(x) {
            Ok(m) => {
                let sv = m.singular_values();
                let max = sv.max();
                let min = sv.min();
                if min <= 1e-12 * max.max(1e-300) {
                    f64::INFINITY
                } else {
                    max / min
                }
            }
            Err(_) => f64::INFINITY,
        })
        .collect();
    NondegeneracyReport { points: samples.to_vec(), condition }
}

/// Christoffel symbols at one point: `get(r, s, u) = Γ^r_{su}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChristoffelTable {
    n: usize,
    q: usize,
    data: Vec<GrassmannValue>,
}

impl ChristoffelTable {
    pub fn zero(n: usize, q: usize) -> Self {
        let d = n + q;
        ChristoffelTable { n, q, data: vec![GrassmannValue::zero(q); d * d * d] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dim(&self) -> usize {
        self.n + self.q
    }

    #[inline]
    fn at(&self, r: usize, s: usize, u: usize) -> usize {
        let d = self.dim();
        (r * d + s) * d + u
    }

    pub fn get(&self, r: usize, s: usize, u: usize) -> &GrassmannValue {
        &self.data[self.at(r, s, u)]
    }

    pub fn set(&mut self, r: usize, s: usize, u: usize, v: GrassmannValue) {
        let k = self.at(r, s, u);
        self.data[k] = v;
    }

    pub fn max_abs_diff(&self, other: &ChristoffelTable) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.max_abs_diff(b)).fold(0.0, f64::max)
    }
}

type PointwiseFn = dyn Fn(&[f64]) -> Result<ChristoffelTable, GeometryError> + Send + Sync;

/// A connection on the chart, either with explicit symbolic Christoffel
/// symbols or evaluated pointwise.
#[derive(Clone)]
pub enum SuperConnection {
    /// `table[(r * dim + s) * dim + u] = Γ^r_{su}`.
    Symbolic { chart: Arc<ChartSpec>, table: Vec<SuperFunction> },
    /// Levi-Civita connection of a metric, solved at each point.
    LeviCivita { metric: Arc<SuperMetric> },
    /// The pushforward of `inner` along a fiberwise-linear frame change.
    FrameChanged { inner: Box<SuperConnection>, frame: Arc<FrameChange> },
    /// Arbitrary pointwise field.
    Pointwise { chart: Arc<ChartSpec>, field: Arc<PointwiseFn> },
}

impl fmt::Debug for SuperConnection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SuperConnection::Symbolic { chart, .. } => write!(f, "Symbolic({chart})"),
            SuperConnection::LeviCivita { metric } => write!(f, "LeviCivita({})", metric.chart()),
            SuperConnection::FrameChanged { inner, .. } => write!(f, "FrameChanged({inner:?})"),
            SuperConnection::Pointwise { chart, .. } => write!(f, "Pointwise({chart})"),
        }
    }
}

impl SuperConnection {
    /// Validates the Christoffel parity rule `|Γ^r_{su}| = |s| + |u| + |r|`.
    pub fn symbolic(chart: Arc<ChartSpec>, table: Vec<SuperFunction>) -> Result<Self, GeometryError> {
        let dim = chart.dim();
        let n = chart.n;
        if table.len() != dim * dim * dim {
            return Err(GeometryError::InvalidConnection(format!("expected {} symbols", dim * dim * dim)));
        }
        for (k, gamma) in table.iter().enumerate() {
            let (r, s, u) = (k / (dim * dim), (k / dim) % dim, k % dim);
            let want = (par(r, n) + par(s, n) + par(u, n)) % 2;
            if gamma.is_zero() {
                continue;
            }
            if gamma.parity().bit() != Some(want) {
                return Err(GeometryError::InvalidConnection(format!(
                    "Γ[{};{},{}] must have parity {want}",
                    r + 1,
                    s + 1,
                    u + 1
                )));
            }
        }
        Ok(SuperConnection::Symbolic { chart, table })
    }

    pub fn pointwise(
        chart: Arc<ChartSpec>,
        field: impl Fn(&[f64]) -> Result<ChristoffelTable, GeometryError> + Send + Sync + 'static,
    ) -> Self {
        SuperConnection::Pointwise { chart, field: Arc::new(field) }
    }

    pub fn chart(&self) -> &Arc<ChartSpec> {
        match self {
            SuperConnection::Symbolic { chart, .. } | SuperConnection::Pointwise { chart, .. } => chart,
            SuperConnection::LeviCivita { metric } => metric.chart(),
            SuperConnection::FrameChanged { inner, .. } => inner.chart(),
        }
    }

    pub fn christoffel_at(&self, x: &[f64]) -> Result<ChristoffelTable, GeometryError> {
        match self {
            SuperConnection::Symbolic { chart, table } => {
                let mut data = Vec::with_capacity(table.len());
                for gamma in table {
                    data.push(gamma.eval(x)?);
                }
                Ok(ChristoffelTable { n: chart.n, q: chart.q, data })
            }
            // the self-check recomputes Θ and T, so the flow skips the residual pass
            SuperConnection::LeviCivita { metric } => {
                let jet = metric.jet(x)?;
                solve_christoffel(metric, &jet, x)
            }
            SuperConnection::FrameChanged { inner, frame } => frame.transform_super(inner, x),
            SuperConnection::Pointwise { field, .. } => field(x),
        }
    }
}

/// The unique torsion-free, metric-compatible connection of `g`.
pub fn levi_civita(g: Arc<SuperMetric>) -> SuperConnection {
    SuperConnection::LeviCivita { metric: g }
}

/// Graded Koszul solve at one point.
///
/// With `D(s,u,r) = (-1)^{|g||s|} ∂_s g_{ur}` and the lowered symbols
/// `L_{sur} = g(∇_{∂_s}∂_u, ∂_r)`, the conditions Θ = 0 and T = 0 give
/// `2 L_{sur} = D(s,u,r) + ε(s,u) D(u,s,r) − ε(r,u) ε(r,s) D(r,s,u)`, and
/// `L_{sur} = Σ_t (-1)^{|g||Γ^t_{su}|} Γ^t_{su} g_{tr}` is solved with the
/// inverse of the metric matrix.
pub fn levi_civita_at(g: &SuperMetric, x: &[f64]) -> Result<ChristoffelTable, GeometryError> {
    let jet = g.jet(x)?;
    let table = solve_christoffel(g, &jet, x)?;
    let residual = max_residual(&jet, &table, g.parity());
    let scale = 1.0 + jet.dg.iter().flatten().map(|v| v.max_abs()).fold(0.0, f64::max);
    if residual.is_nan() || residual > 1e-8 * scale {
        return Err(GeometryError::Inconsistent { point: x.to_vec(), residual });
    }
    Ok(table)
}

fn solve_christoffel(g: &SuperMetric, jet: &MetricJet, x: &[f64]) -> Result<ChristoffelTable, GeometryError> {
    let n = jet.n;
    let dim = jet.g.dim();
    let q = jet.g.q();
    let gp = g.parity();
    let inv = jet.g.inverse().map_err(|_| GeometryError::Degenerate { point: x.to_vec() })?;
    let mut table = ChristoffelTable::zero(n, q);
    let mut acc = Accumulator::new(q);
    for s in 0..dim {
        for u in 0..dim {
            let (ps, pu) = (par(s, n), par(u, n));
            let lowered: Vec<GrassmannValue> = (0..dim)
                .map(|r| {
                    let pr = par(r, n);
                    acc.add_scaled(jet.d(s, u, r), 0.5 * koszul(gp, ps));
                    acc.add_scaled(jet.d(u, s, r), 0.5 * koszul(gp, pu) * koszul(ps, pu));
                    acc.add_scaled(jet.d(r, s, u), -0.5 * koszul(gp, pr) * koszul(pr, pu) * koszul(pr, ps));
                    acc.finish()
                })
                .collect();
            let gamma = inv.apply_left(&lowered);
            for (t, v) in gamma.into_iter().enumerate() {
                let pt = (ps + pu + par(t, n)) % 2;
                debug_assert!(v.parity_project(1 - pt).max_abs() == 0.0, "Christoffel parity");
                table.set(t, s, u, v.scale(koszul(gp, pt)));
            }
        }
    }
    Ok(table)
}

fn max_residual(jet: &MetricJet, table: &ChristoffelTable, gp: u8) -> f64 {
    let dim = table.dim();
    let mut acc = Accumulator::new(table.q());
    let mut worst: f64 = 0.0;
    for s in 0..dim {
        for u in 0..dim {
            for r in torsion_from_table(table, s, u) {
                worst = worst.max(r.max_abs());
            }
            for r in 0..dim {
                theta_into(&mut acc, jet, table, gp, s, u, r);
                worst = worst.max(acc.max_abs());
                acc.clear();
            }
        }
    }
    worst
}

/// Components `T^r` of `T_∇(∂_s, ∂_u)`; coordinate fields commute, so
/// `T^r = Γ^r_{su} − (-1)^{|s||u|} Γ^r_{us}`.
pub fn torsion_from_table(table: &ChristoffelTable, s: usize, u: usize) -> Vec<GrassmannValue> {
    let n = table.n();
    let sign = koszul(par(s, n), par(u, n));
    (0..table.dim()).map(|r| table.get(r, s, u) - &table.get(r, u, s).scale(sign)).collect()
}

pub fn torsion(
    conn: &SuperConnection,
    s: CoordIndex,
    u: CoordIndex,
    x: &[f64],
) -> Result<Vec<GrassmannValue>, GeometryError> {
    let n = conn.chart().n;
    Ok(torsion_from_table(&conn.christoffel_at(x)?, s.global(n), u.global(n)))
}

/// `Θ(∂_s, ∂_u, ∂_r) = (-1)^{|g||s|} ∂_s g_{ur} − g(∇_s ∂_u, ∂_r) − (-1)^{|s||u|} g(∂_u, ∇_s ∂_r)`.
pub fn theta_from_jet(
    jet: &MetricJet,
    table: &ChristoffelTable,
    gp: u8,
    s: usize,
    u: usize,
    r: usize,
) -> GrassmannValue {
    let mut acc = Accumulator::new(table.q());
    theta_into(&mut acc, jet, table, gp, s, u, r);
    acc.finish()
}

fn theta_into(acc: &mut Accumulator, jet: &MetricJet, table: &ChristoffelTable, gp: u8, s: usize, u: usize, r: usize) {
    let n = jet.n;
    let (ps, pu, pr) = (par(s, n), par(u, n), par(r, n));
    acc.add_scaled(jet.d(s, u, r), koszul(gp, ps));
    for t in 0..table.dim() {
        let pt = par(t, n);
        // g(Γ ∂_t, ∂_r) = (-1)^{|g||Γ|} Γ g_{tr}
        let p1 = (ps + pu + pt) % 2;
        acc.add_product(table.get(t, s, u), jet.g.get(t, r), -koszul(gp, p1));
        // g(∂_u, Γ ∂_t) = (-1)^{|Γ|(|g|+|u|)} Γ g_{ut}
        let p2 = (ps + pr + pt) % 2;
        acc.add_product(table.get(t, s, r), jet.g.get(u, t), -koszul(ps, pu) * koszul(p2, (gp + pu) % 2));
    }
}

pub fn theta(
    conn: &SuperConnection,
    g: &SuperMetric,
    s: CoordIndex,
    u: CoordIndex,
    r: CoordIndex,
    x: &[f64],
) -> Result<GrassmannValue, GeometryError> {
    let n = g.chart().n;
    let jet = g.jet(x)?;
    let table = conn.christoffel_at(x)?;
    Ok(theta_from_jet(&jet, &table, g.parity(), s.global(n), u.global(n), r.global(n)))
}

/// Largest torsion and Θ coefficients over the samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SelfCheck {
    pub max_torsion: f64,
    pub max_theta: f64,
}

pub fn self_check(conn: &SuperConnection, g: &SuperMetric, samples: &[Vec<f64>]) -> Result<SelfCheck, GeometryError> {
    let mut out = SelfCheck::default();
    let dim = g.dim();
    for x in samples {
        let jet = g.jet(x)?;
        let table = conn.christoffel_at(x)?;
        for s in 0..dim {
            for u in 0..dim {
                for t in torsion_from_table(&table, s, u) {
                    out.max_torsion = out.max_torsion.max(t.max_abs());
                }
                for r in 0..dim {
                    out.max_theta = out.max_theta.max(theta_from_jet(&jet, &table, g.parity(), s, u, r).max_abs());
                }
            }
        }
    }
    Ok(out)
}

/// Largest torsion coefficient over the samples (no metric needed).
pub fn max_torsion(conn: &SuperConnection, samples: &[Vec<f64>]) -> Result<f64, GeometryError> {
    let mut worst: f64 = 0.0;
    for x in samples {
        let table = conn.christoffel_at(x)?;
        for s in 0..table.dim() {
            for u in 0..table.dim() {
                for t in torsion_from_table(&table, s, u) {
                    worst = worst.max(t.max_abs());
                }
            }
        }
    }
    Ok(worst)
}
