//! Reduction of a superconnection and a super metric on `ΠE` to a classical
//! connection `∇^TE` and bilinear form `g^TE` on the total space `E`, the
//! bundle data `(∇^E, g^TM, ω^E, B^E)`, the zero-section pullback and
//! equivariance under fiberwise-linear frame changes.
//!
//! Coordinates of `E` use the same global indexing as the chart: `0..n` base,
//! `n..n+q` the fiber coordinates `y_β` dual to the generators `e[β]`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::GeometryError;
use crate::expr::ScalarExpr;
use crate::geometry::{par, ChristoffelTable, SuperConnection, SuperMetric};
use crate::grassmann::{GrassmannValue, MultiIndex};
use crate::superfield::{ChartSpec, FiberAffine};

/// Index block of a symbol `Γ^r_{su}` (base or fiber in each slot).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    /// `Γ^k_{ij}`: body.
    BaseBase,
    /// `Γ^α_{ij}`: degree-one coefficients become the fiber-linear part.
    FiberBase,
    /// `Γ^γ_{iα}`, `Γ^γ_{αi}`: body.
    Mixed,
    Zero,
}

fn slot(n: usize, r: usize, s: usize, u: usize) -> Slot {
    match (par(r, n), par(s, n) + par(u, n)) {
        (0, 0) => Slot::BaseBase,
        (1, 0) => Slot::FiberBase,
        (1, 1) => Slot::Mixed,
        _ => Slot::Zero,
    }
}

/// Fiber-affine Christoffel symbols of `∇^TE` at one base point.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedTable {
    n: usize,
    q: usize,
    data: Vec<FiberAffine<f64>>,
}

impl ReducedTable {
    pub fn zero(n: usize, q: usize) -> Self {
        let d = n + q;
        ReducedTable { n, q, data: vec![FiberAffine::zero_value(q); d * d * d] }
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

    fn at(&self, r: usize, s: usize, u: usize) -> usize {
        let d = self.dim();
        (r * d + s) * d + u
    }

    /// `Γ^TE{}^r_{su}` as constant plus fiber-linear part.
    pub fn get(&self, r: usize, s: usize, u: usize) -> &FiberAffine<f64> {
        &self.data[self.at(r, s, u)]
    }

    pub fn get_mut(&mut self, r: usize, s: usize, u: usize) -> &mut FiberAffine<f64> {
        let k = self.at(r, s, u);
        &mut self.data[k]
    }

    /// All symbols at the fiber point `y`, flattened as `(r * dim + s) * dim + u`.
    pub fn values(&self, y: &[f64]) -> Vec<f64> {
        self.data.iter().map(|a| a.eval(y)).collect()
    }

    /// Largest entry violating the vanishing patterns or fiber-affinity of the
    /// reduced symbols. Always exactly zero for tables built by reduction.
    pub fn pattern_violation(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for r in 0..d {
            for s in 0..d {
                for u in 0..d {
                    let a = self.get(r, s, u);
                    let lin = a.linear.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    worst = match slot(self.n, r, s, u) {
                        Slot::BaseBase | Slot::Mixed => worst.max(lin),
                        Slot::FiberBase => worst.max(a.constant.abs()),
                        Slot::Zero => worst.max(lin).max(a.constant.abs()),
                    };
                }
            }
        }
        worst
    }
}

/// Reduces one Christoffel table. Parts of a value that the parity rule says
/// must vanish are checked, not discarded silently.
pub fn reduce_table(table: &ChristoffelTable) -> Result<ReducedTable, GeometryError> {
    let (n, q) = (table.n(), table.q());
    let d = n + q;
    let mut out = ReducedTable::zero(n, q);
    for r in 0..d {
        for s in 0..d {
            for u in 0..d {
                let v = table.get(r, s, u);
                if v.is_zero() {
                    continue;
                }
                let want = (par(r, n) + par(s, n) + par(u, n)) % 2;
                let stray = v.parity_project(1 - want).max_abs();
                if stray > 0.0 {
                    return Err(GeometryError::InvalidConnection(format!(
                        "Γ[{};{},{}] has a component of the wrong parity ({stray:e})",
                        r + 1,
                        s + 1,
                        u + 1
                    )));
                }
                let entry = out.get_mut(r, s, u);
                match slot(n, r, s, u) {
                    Slot::BaseBase | Slot::Mixed => entry.constant = v.body(),
                    Slot::FiberBase => {
                        for (b, l) in entry.linear.iter_mut().enumerate() {
                            *l = v.coefficient(MultiIndex::generator(b + 1));
                        }
                    }
                    Slot::Zero => {}
                }
            }
        }
    }
    Ok(out)
}

type ReducedFn = dyn Fn(&[f64]) -> Result<ReducedTable, GeometryError> + Send + Sync;

/// The classical connection `∇^TE` on `E`.
#[derive(Clone)]
pub enum ReducedConnection {
    /// Reduction of a symbolic superconnection; `table[(r * dim + s) * dim + u]`.
    Symbolic { chart: Arc<ChartSpec>, table: Vec<FiberAffine<ScalarExpr>> },
    /// Reduction of a pointwise superconnection, extracted at each point.
    Pointwise { source: SuperConnection },
    /// Arbitrary field, used for hand-built or corrupted tables.
    Custom { chart: Arc<ChartSpec>, field: Arc<ReducedFn> },
}

impl std::fmt::Debug for ReducedConnection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReducedConnection::Symbolic { chart, .. } => write!(f, "ReducedConnection::Symbolic({chart})"),
            ReducedConnection::Pointwise { source } => write!(f, "ReducedConnection::Pointwise({source:?})"),
            ReducedConnection::Custom { chart, .. } => write!(f, "ReducedConnection::Custom({chart})"),
        }
    }
}

impl ReducedConnection {
    pub fn custom(
        chart: Arc<ChartSpec>,
        field: impl Fn(&[f64]) -> Result<ReducedTable, GeometryError> + Send + Sync + 'static,
    ) -> Self {
        ReducedConnection::Custom { chart, field: Arc::new(field) }
    }

    pub fn chart(&self) -> &Arc<ChartSpec> {
        match self {
            ReducedConnection::Symbolic { chart, .. } | ReducedConnection::Custom { chart, .. } => chart,
            ReducedConnection::Pointwise { source } => source.chart(),
        }
    }

    pub fn symbols_at(&self, x: &[f64]) -> Result<ReducedTable, GeometryError> {
        match self {
            ReducedConnection::Symbolic { chart, table } => {
                let data = table.iter().map(|a| a.sample(x)).collect::<Result<_, _>>()?;
                Ok(ReducedTable { n: chart.n, q: chart.q, data })
            }
            ReducedConnection::Pointwise { source } => reduce_table(&source.christoffel_at(x)?),
            ReducedConnection::Custom { field, .. } => field(x),
        }
    }

    /// Symbolic table, if available.
    pub fn symbolic_table(&self) -> Option<&[FiberAffine<ScalarExpr>]> {
        match self {
            ReducedConnection::Symbolic { table, .. } => Some(table),
            _ => None,
        }
    }
}

/// `∇ ↦ ∇^TE`.
pub fn reduce_connection(conn: &SuperConnection) -> ReducedConnection {
    match conn {
        SuperConnection::Symbolic { chart, table } => {
            let (n, q) = (chart.n, chart.q);
            let d = n + q;
            let mut out = Vec::with_capacity(table.len());
            for (k, gamma) in table.iter().enumerate() {
                let (r, s, u) = (k / (d * d), (k / d) % d, k % d);
                let mut a = FiberAffine::zero(q);
                match slot(n, r, s, u) {
                    Slot::BaseBase | Slot::Mixed => a.constant = gamma.reduce(),
                    Slot::FiberBase => {
                        for (b, l) in a.linear.iter_mut().enumerate() {
                            *l = gamma.component(MultiIndex::generator(b + 1));
                        }
                    }
                    Slot::Zero => {}
                }
                out.push(a);
            }
            ReducedConnection::Symbolic { chart: chart.clone(), table: out }
        }
        other => ReducedConnection::Pointwise { source: other.clone() },
    }
}

/// The bilinear form `g^TE` on `E`, stored symbolically.
#[derive(Clone, Debug)]
pub struct ReducedMetric {
    chart: Arc<ChartSpec>,
    parity_origin: u8,
    table: Vec<FiberAffine<ScalarExpr>>,
    // [i][s * dim + u] = ∂_{x_i} g^TE_{su}
    base_derivs: Vec<Vec<FiberAffine<ScalarExpr>>>,
}

/// `g ↦ g^TE`.
pub fn reduce_metric(g: &SuperMetric) -> ReducedMetric {
    let chart = g.chart().clone();
    let (n, q) = (chart.n, chart.q);
    let d = n + q;
    let mut table = Vec::with_capacity(d * d);
    for s in 0..d {
        for u in 0..d {
            let c = g.coeff(s, u);
            let mut a = FiberAffine::zero(q);
            match (g.parity(), par(s, n), par(u, n)) {
                (0, 0, 0) => a.constant = c.reduce(),
                (1, 0, 0) => {
                    for (b, l) in a.linear.iter_mut().enumerate() {
                        *l = c.component(MultiIndex::generator(b + 1));
                    }
                }
                (1, 0, 1) | (1, 1, 0) => a.constant = -c.reduce(),
                _ => {}
            }
            table.push(a);
        }
    }
    let base_derivs = (0..n).map(|i| table.iter().map(|a| a.diff_base(i)).collect()).collect();
    ReducedMetric { chart, parity_origin: g.parity(), table, base_derivs }
}

impl ReducedMetric {
    pub fn chart(&self) -> &Arc<ChartSpec> {
        &self.chart
    }

    pub fn parity_origin(&self) -> u8 {
        self.parity_origin
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn get(&self, s: usize, u: usize) -> &FiberAffine<ScalarExpr> {
        &self.table[s * self.dim() + u]
    }

    pub fn table(&self) -> &[FiberAffine<ScalarExpr>] {
        &self.table
    }

    pub fn value_at(&self, x: &[f64], y: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for s in 0..d {
            for u in 0..d {
                m[(s, u)] = self.get(s, u).eval(x, y)?;
            }
        }
        Ok(m)
    }

    /// `out[s][(u, r)] = ∂_s g^TE_{ur}` at `(x, y)`.
    pub fn derivs_at(&self, x: &[f64], y: &[f64]) -> Result<Vec<DMatrix<f64>>, GeometryError> {
        let (n, d) = (self.chart.n, self.dim());
        let mut out = Vec::with_capacity(d);
        for i in 0..n {
            let mut m = DMatrix::zeros(d, d);
            for (k, a) in self.base_derivs[i].iter().enumerate() {
                if !a.is_zero() {
                    m[(k / d, k % d)] = a.eval(x, y)?;
                }
            }
            out.push(m);
        }
        for b in 0..self.chart.q {
            let mut m = DMatrix::zeros(d, d);
            for (k, a) in self.table.iter().enumerate() {
                if !a.linear[b].is_zero() {
                    m[(k / d, k % d)] = a.linear[b].eval(x)?;
                }
            }
            out.push(m);
        }
        Ok(out)
    }

    /// Largest entry violating the block pattern of `g^TE` (exact zero when built by reduction).
    pub fn pattern_violation(&self, x: &[f64]) -> Result<f64, GeometryError> {
        let (n, d) = (self.chart.n, self.dim());
        let mut worst: f64 = 0.0;
        for s in 0..d {
            for u in 0..d {
                let a = self.get(s, u).sample(x)?;
                let lin = a.linear.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let bad = match (self.parity_origin, par(s, n), par(u, n)) {
                    (0, 0, 0) => lin,
                    (0, _, _) => lin.max(a.constant.abs()),
                    (1, 0, 0) => a.constant.abs(),
                    (1, 1, 1) => lin.max(a.constant.abs()),
                    _ => lin,
                };
                let b = self.get(u, s).sample(x)?;
                let asym = (a.constant - b.constant)
                    .abs()
                    .max(a.linear.iter().zip(&b.linear).fold(0.0, |m, (p, q)| m.max((p - q).abs())));
                worst = worst.max(bad).max(asym);
            }
        }
        Ok(worst)
    }
}

/// Max `|Γ^TE{}^k_{su} − Γ^TE{}^k_{us}|` over `(x, y)` samples.
pub fn reduced_torsion_check(conn: &ReducedConnection, samples: &[(Vec<f64>, Vec<f64>)]) -> Result<f64, GeometryError> {
    let mut worst: f64 = 0.0;
    for (x, y) in samples {
        let t = conn.symbols_at(x)?;
        let d = t.dim();
        for r in 0..d {
            for s in 0..d {
                for u in (s + 1)..d {
                    worst = worst.max((t.get(r, s, u).eval(y) - t.get(r, u, s).eval(y)).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Max `|∂_s g_{ur} − Σ_t Γ^t_{su} g_{tr} − Σ_t Γ^t_{sr} g_{ut}|` over samples.
pub fn reduced_compat_check(
    conn: &ReducedConnection,
    metric: &ReducedMetric,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64, GeometryError> {
    let mut worst: f64 = 0.0;
    for (x, y) in samples {
        let d = metric.dim();
        let gamma = conn.symbols_at(x)?.values(y);
        let g = metric.value_at(x, y)?;
        let dg = metric.derivs_at(x, y)?;
        let gam = |r: usize, s: usize, u: usize| gamma[(r * d + s) * d + u];
        for s in 0..d {
            for u in 0..d {
                for r in 0..d {
                    let mut v = dg[s][(u, r)];
                    for t in 0..d {
                        v -= gam(t, s, u) * g[(t, r)] + gam(t, s, r) * g[(u, t)];
                    }
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    Ok(worst)
}

/// Classical Levi-Civita symbols `Γ^t_{su} = ½ g^{tr}(∂_s g_{ur} + ∂_u g_{sr} − ∂_r g_{su})`,
/// flattened as `(t * dim + s) * dim + u`. `None` when `g` is singular.
pub fn christoffel_from_metric(g: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Option<Vec<f64>> {
    let d = g.nrows();
    let inv = g.clone().try_inverse()?;
    let mut out = vec![0.0; d * d * d];
    for s in 0..d {
        for u in 0..d {
            let lowered: Vec<f64> = (0..d).map(|r| 0.5 * (dg[s][(u, r)] + dg[u][(s, r)] - dg[r][(s, u)])).collect();
            for t in 0..d {
                out[(t * d + s) * d + u] = (0..d).map(|r| inv[(t, r)] * lowered[r]).sum();
            }
        }
    }
    Some(out)
}

/// Classical Levi-Civita connection of `g^TE` at each sample. Requires an odd origin metric.
pub fn classical_levi_civita(
    metric: &ReducedMetric,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<Vec<f64>>, GeometryError> {
    if metric.parity_origin() != 1 {
        return Err(GeometryError::RequiresOddMetric);
    }
    samples
        .iter()
        .map(|(x, y)| {
            let g = metric.value_at(x, y)?;
            let dg = metric.derivs_at(x, y)?;
            christoffel_from_metric(&g, &dg).ok_or_else(|| GeometryError::Degenerate { point: x.clone() })
        })
        .collect()
}

/// The classical connection `∇^TM` on `M` obtained by restricting `∇^TE` to the zero section.
#[derive(Clone, Debug)]
pub struct BaseConnection {
    source: ReducedConnection,
}

pub fn zero_section_pullback(conn: &ReducedConnection) -> BaseConnection {
    BaseConnection { source: conn.clone() }
}

impl BaseConnection {
    pub fn n(&self) -> usize {
        self.source.chart().n
    }

    /// `Γ^TM{}^k_{ij}` flattened as `(k * n + i) * n + j`.
    pub fn symbols_at(&self, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let t = self.source.symbols_at(x)?;
        let n = self.n();
        let zero = vec![0.0; t.q()];
        let mut out = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    out.push(t.get(k, i, j).eval(&zero));
                }
            }
        }
        Ok(out)
    }
}

/// Max difference between `∇^TM` and the bodies `~Γ^k_{ij}` of the super symbols.
pub fn zero_section_consistency(
    conn: &SuperConnection,
    base: &BaseConnection,
    samples: &[Vec<f64>],
) -> Result<f64, GeometryError> {
    let n = base.n();
    let mut worst: f64 = 0.0;
    for x in samples {
        let full = conn.christoffel_at(x)?;
        let tm = base.symbols_at(x)?;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    worst = worst.max((tm[(k * n + i) * n + j] - full.get(k, i, j).body()).abs());
                }
            }
        }
    }
    Ok(worst)
}

/// `(∇^E, g^TM, ω^E, B^E)` read off from `∇` and `g`.
#[derive(Clone, Debug)]
pub struct AppendixAReduction {
    chart: Arc<ChartSpec>,
    source: SuperConnection,
    /// `~g_{ij}`, row-major `n × n`, even metrics only.
    pub base_metric: Option<Vec<ScalarExpr>>,
    /// `~g_{αβ}`, row-major `q × q`, even metrics only.
    pub two_form: Option<Vec<ScalarExpr>>,
    /// `~g_{αi}`, row-major `q × n`, odd metrics only. Stored raw; the sign
    /// relating it to a map `E → TM` is a convention.
    pub bundle_iso: Option<Vec<ScalarExpr>>,
}

pub fn appendix_a_reduce(conn: &SuperConnection, g: &SuperMetric) -> AppendixAReduction {
    let chart = g.chart().clone();
    let (n, q) = (chart.n, chart.q);
    let block = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| -> Vec<ScalarExpr> {
        rows.flat_map(|r| cols.clone().map(move |c| (r, c))).map(|(r, c)| g.coeff(r, c).reduce()).collect()
    };
    let (base_metric, two_form, bundle_iso) = if g.parity() == 0 {
        (Some(block(0..n, 0..n)), Some(block(n..n + q, n..n + q)), None)
    } else {
        (None, None, Some(block(n..n + q, 0..n)))
    };
    AppendixAReduction { chart, source: conn.clone(), base_metric, two_form, bundle_iso }
}

/// Pointwise summary of the bundle data over samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AppendixReport {
    /// Max `|ω_{αβ} + ω_{βα}|`.
    pub antisymmetry: f64,
    /// Smallest singular value of `ω^E` seen (even metrics).
    pub two_form_min_sv: Option<f64>,
    /// Smallest singular value of `B^E` seen (odd metrics).
    pub bundle_iso_min_sv: Option<f64>,
    /// Max difference between `∇^E` and `~Γ^γ_{iα}`.
    pub connection_mismatch: f64,
}

impl AppendixAReduction {
    pub fn chart(&self) -> &Arc<ChartSpec> {
        &self.chart
    }

    /// `∇^E` coefficients `~Γ^γ_{iα}` flattened as `(i * q + α) * q + γ`.
    pub fn bundle_connection_at(&self, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let (n, q) = (self.chart.n, self.chart.q);
        let t = self.source.christoffel_at(x)?;
        let mut out = Vec::with_capacity(n * q * q);
        for i in 0..n {
            for a in 0..q {
                for c in 0..q {
                    out.push(t.get(n + c, i, n + a).body());
                }
            }
        }
        Ok(out)
    }

    fn eval_block(block: &[ScalarExpr], rows: usize, cols: usize, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = block[r * cols + c].eval(x)?;
            }
        }
        Ok(m)
    }

    pub fn two_form_at(&self, x: &[f64]) -> Result<Option<DMatrix<f64>>, GeometryError> {
        let q = self.chart.q;
        self.two_form.as_ref().map(|b| Self::eval_block(b, q, q, x)).transpose()
    }

    pub fn bundle_iso_at(&self, x: &[f64]) -> Result<Option<DMatrix<f64>>, GeometryError> {
        let (n, q) = (self.chart.n, self.chart.q);
        self.bundle_iso.as_ref().map(|b| Self::eval_block(b, q, n, x)).transpose()
    }

    pub fn base_metric_at(&self, x: &[f64]) -> Result<Option<DMatrix<f64>>, GeometryError> {
        let n = self.chart.n;
        self.base_metric.as_ref().map(|b| Self::eval_block(b, n, n, x)).transpose()
    }

    pub fn report(&self, samples: &[Vec<f64>]) -> Result<AppendixReport, GeometryError> {
        let (n, q) = (self.chart.n, self.chart.q);
        let mut rep = AppendixReport::default();
        for x in samples {
            if let Some(w) = self.two_form_at(x)? {
                rep.antisymmetry = rep.antisymmetry.max((&w + w.transpose()).amax());
                let sv = w.singular_values().min();
                rep.two_form_min_sv = Some(rep.two_form_min_sv.map_or(sv, |m: f64| m.min(sv)));
            }
            if let Some(b) = self.bundle_iso_at(x)? {
                let sv = b.singular_values().min();
                rep.bundle_iso_min_sv = Some(rep.bundle_iso_min_sv.map_or(sv, |m: f64| m.min(sv)));
            }
            let ne = self.bundle_connection_at(x)?;
            let full = reduce_table(&self.source.christoffel_at(x)?)?;
            for i in 0..n {
                for a in 0..q {
                    for c in 0..q {
                        let diff = (ne[(i * q + a) * q + c] - full.get(n + c, i, n + a).constant).abs();
                        rep.connection_mismatch = rep.connection_mismatch.max(diff);
                    }
                }
            }
        }
        Ok(rep)
    }
}

/// Fiberwise-linear frame change `e'_α = Σ_β G_{αβ}(x) e_β` over the identity
/// on the base; on `E` it is `y' = G(x) y`.
#[derive(Clone, Debug)]
pub struct FrameChange {
    n: usize,
    q: usize,
    g: Vec<ScalarExpr>,
    dg: Vec<Vec<ScalarExpr>>,
    ddg: Vec<Vec<Vec<ScalarExpr>>>,
}

struct FrameJet {
    g: DMatrix<f64>,
    h: DMatrix<f64>,
    dg: Vec<DMatrix<f64>>,
    dh: Vec<DMatrix<f64>>,
    // ∂_j (H ∂_i G)
    dhdg: Vec<Vec<DMatrix<f64>>>,
}

impl FrameChange {
    /// `g` is the row-major `q × q` matrix `G(x)`.
    pub fn new(chart: &ChartSpec, g: Vec<ScalarExpr>) -> Result<Self, GeometryError> {
        let (n, q) = (chart.n, chart.q);
        if g.len() != q * q {
            return Err(GeometryError::InvalidConnection(format!("frame change needs {} entries", q * q)));
        }
        if let Some(v) = g.iter().filter_map(|e| e.max_var()).max() {
            if v >= n {
                return Err(crate::error::ExprError::VariableOutOfRange { index: v + 1, n }.into());
            }
        }
        let dg: Vec<Vec<ScalarExpr>> = (0..n).map(|i| g.iter().map(|e| e.diff(i)).collect()).collect();
        let ddg = dg.iter().map(|row| (0..n).map(|j| row.iter().map(|e| e.diff(j)).collect()).collect()).collect();
        Ok(FrameChange { n, q, g, dg, ddg })
    }

    pub fn identity(chart: &ChartSpec) -> Self {
        let q = chart.q;
        let g = (0..q * q).map(|k| if k / q == k % q { ScalarExpr::one() } else { ScalarExpr::zero() }).collect();
        FrameChange::new(chart, g).expect("identity frame is valid")
    }

    pub fn entries(&self) -> &[ScalarExpr] {
        &self.g
    }

    fn eval(&self, m: &[ScalarExpr], x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let q = self.q;
        let mut out = DMatrix::zeros(q, q);
        for (k, e) in m.iter().enumerate() {
            if !e.is_zero() {
                out[(k / q, k % q)] = e.eval(x)?;
            }
        }
        Ok(out)
    }

    pub fn matrix_at(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        self.eval(&self.g, x)
    }

    /// `y' = G(x) y`.
    pub fn apply_fiber(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let g = self.matrix_at(x)?;
        Ok((0..self.q).map(|a| (0..self.q).map(|b| g[(a, b)] * y[b]).sum()).collect())
    }

    fn jet(&self, x: &[f64]) -> Result<FrameJet, GeometryError> {
        let g = self.matrix_at(x)?;
        let sv = g.singular_values();
        if sv.min() <= 1e-12 * sv.max() {
            return Err(GeometryError::SingularFrame { point: x.to_vec() });
        }
        let h = g.clone().try_inverse().ok_or_else(|| GeometryError::SingularFrame { point: x.to_vec() })?;
        let dg: Vec<DMatrix<f64>> = self.dg.iter().map(|m| self.eval(m, x)).collect::<Result<_, _>>()?;
        let dh: Vec<DMatrix<f64>> = dg.iter().map(|d| -(&h * d * &h)).collect();
        let mut dhdg = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut row = Vec::with_capacity(self.n);
            for j in 0..self.n {
                let ddg = self.eval(&self.ddg[i][j], x)?;
                row.push(&dh[j] * &dg[i] + &h * ddg);
            }
            dhdg.push(row);
        }
        Ok(FrameJet { g, h, dg, dh, dhdg })
    }

    /// Christoffel symbols of `inner` in the new frame at `x`, as values in
    /// the new generators.
    pub fn transform_super(&self, inner: &SuperConnection, x: &[f64]) -> Result<ChristoffelTable, GeometryError> {
        let (n, q) = (self.n, self.q);
        let d = n + q;
        let jet = self.jet(x)?;
        let old = inner.christoffel_at(x)?;
        let zero = GrassmannValue::zero(q);
        let lin = |m: &DMatrix<f64>, row: usize, scale: f64| {
            GrassmannValue::from_terms(q, (0..q).map(|b| (MultiIndex::generator(b + 1), scale * m[(row, b)])))
        };
        let hdg: Vec<DMatrix<f64>> = jet.dg.iter().map(|dgi| &jet.h * dgi).collect();
        // K[a][s]: ∂'_a = Σ_s K_a^s ∂_s
        let mut k = vec![vec![zero.clone(); d]; d];
        for i in 0..n {
            k[i][i] = GrassmannValue::one(q);
            for dl in 0..q {
                k[i][n + dl] = lin(&hdg[i], dl, -1.0);
            }
        }
        for a in 0..q {
            for dl in 0..q {
                k[n + a][n + dl] = GrassmannValue::scalar(q, jet.h[(dl, a)]);
            }
        }
        // dk[s][b][t] = ∂_s K_b^t
        let mut dk = vec![vec![vec![zero.clone(); d]; d]; d];
        for j in 0..n {
            for i in 0..n {
                for dl in 0..q {
                    dk[j][i][n + dl] = lin(&jet.dhdg[i][j], dl, -1.0);
                }
            }
            for a in 0..q {
                for dl in 0..q {
                    dk[j][n + a][n + dl] = GrassmannValue::scalar(q, jet.dh[j][(dl, a)]);
                }
            }
        }
        for e in 0..q {
            for i in 0..n {
                for dl in 0..q {
                    dk[n + e][i][n + dl] = GrassmannValue::scalar(q, -hdg[i][(dl, e)]);
                }
            }
        }
        // J[t][c] = ∂_t q'_c
        let mut jac = vec![vec![zero.clone(); d]; d];
        for i in 0..n {
            jac[i][i] = GrassmannValue::one(q);
            for a in 0..q {
                jac[i][n + a] = lin(&jet.dg[i], a, 1.0);
            }
        }
        for b in 0..q {
            for a in 0..q {
                jac[n + b][n + a] = GrassmannValue::scalar(q, jet.g[(a, b)]);
            }
        }
        let mut out = ChristoffelTable::zero(n, q);
        for a in 0..d {
            for b in 0..d {
                let pb = par(b, n);
                let mut acc = vec![zero.clone(); d];
                for (s, kas) in k[a].iter().enumerate() {
                    if kas.is_zero() {
                        continue;
                    }
                    for t in 0..d {
                        if !dk[s][b][t].is_zero() {
                            acc[t] += &(kas * &dk[s][b][t]);
                        }
                    }
                    let ps = par(s, n);
                    for (u, kbu) in k[b].iter().enumerate() {
                        if kbu.is_zero() {
                            continue;
                        }
                        let sign = crate::geometry::koszul(ps, (pb + par(u, n)) % 2);
                        let left = (kas * kbu).scale(sign);
                        for t in 0..d {
                            let gam = old.get(t, s, u);
                            if !gam.is_zero() {
                                acc[t] += &(&left * gam);
                            }
                        }
                    }
                }
                for c in 0..d {
                    let mut v = zero.clone();
                    for t in 0..d {
                        if !acc[t].is_zero() && !jac[t][c].is_zero() {
                            v += &(&acc[t] * &jac[t][c]);
                        }
                    }
                    out.set(c, a, b, v.substitute_linear(&jet.h));
                }
            }
        }
        Ok(out)
    }

    /// Classical transform of a real Christoffel table given at `(x, y)`;
    /// returns the table at `(x, G(x) y)`, flattened as `(c * dim + a) * dim + b`.
    pub fn transform_classical(&self, gamma: &[f64], x: &[f64], y: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let (n, q) = (self.n, self.q);
        let d = n + q;
        let jet = self.jet(x)?;
        let hdg: Vec<DMatrix<f64>> = jet.dg.iter().map(|dgi| &jet.h * dgi).collect();
        let lin = |m: &DMatrix<f64>, row: usize| -> f64 { (0..q).map(|b| m[(row, b)] * y[b]).sum() };
        let mut k = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            k[(i, i)] = 1.0;
            for dl in 0..q {
                k[(i, n + dl)] = -lin(&hdg[i], dl);
            }
        }
        for a in 0..q {
            for dl in 0..q {
                k[(n + a, n + dl)] = jet.h[(dl, a)];
            }
        }
        let mut dk = vec![DMatrix::<f64>::zeros(d, d); d];
        for j in 0..n {
            for i in 0..n {
                for dl in 0..q {
                    dk[j][(i, n + dl)] = -lin(&jet.dhdg[i][j], dl);
                }
            }
            for a in 0..q {
                for dl in 0..q {
                    dk[j][(n + a, n + dl)] = jet.dh[j][(dl, a)];
                }
            }
        }
        for e in 0..q {
            for i in 0..n {
                for dl in 0..q {
                    dk[n + e][(i, n + dl)] = -hdg[i][(dl, e)];
                }
            }
        }
        let mut jac = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            jac[(i, i)] = 1.0;
            for a in 0..q {
                jac[(i, n + a)] = lin(&jet.dg[i], a);
            }
        }
        for b in 0..q {
            for a in 0..q {
                jac[(n + b, n + a)] = jet.g[(a, b)];
            }
        }
        let gam = |t: usize, s: usize, u: usize| gamma[(t * d + s) * d + u];
        let mut out = vec![0.0; d * d * d];
        for a in 0..d {
            for b in 0..d {
                let mut acc = vec![0.0; d];
                for s in 0..d {
                    let kas = k[(a, s)];
                    if kas == 0.0 {
                        continue;
                    }
                    for t in 0..d {
                        acc[t] += kas * dk[s][(b, t)];
                        for u in 0..d {
                            acc[t] += kas * k[(b, u)] * gam(t, s, u);
                        }
                    }
                }
                for c in 0..d {
                    out[(c * d + a) * d + b] = (0..d).map(|t| acc[t] * jac[(t, c)]).sum();
                }
            }
        }
        Ok(out)
    }
}

/// Max deviation between "reduce then transform" and "transform then reduce"
/// over `(x, y)` samples.
pub fn automorphism_equivariance(
    conn: &SuperConnection,
    frame: Arc<FrameChange>,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64, GeometryError> {
    let reduced = reduce_connection(conn);
    let changed = SuperConnection::FrameChanged { inner: Box::new(conn.clone()), frame: frame.clone() };
    let reduced_changed = reduce_connection(&changed);
    let mut worst: f64 = 0.0;
    for (x, y) in samples {
        let a = frame.transform_classical(&reduced.symbols_at(x)?.values(y), x, y)?;
        let y2 = frame.apply_fiber(x, y)?;
        let b = reduced_changed.symbols_at(x)?.values(&y2);
        for (u, v) in a.iter().zip(&b) {
            worst = worst.max((u - v).abs());
        }
    }
    Ok(worst)
}
