//! Superfunctions on a single chart of a Batchelor supermanifold `ΠE`.
//!
//! A superfunction is `f = Σ_I f_I(x) e[I]` with coefficient expressions in the
//! base coordinates and odd generators `e[α]` standing for the fiber coordinates
//! of `E`. Coefficients always sit to the left of the generators.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{EvalError, ExprError, FieldError};
use crate::expr::{Parser, ScalarExpr, Tok};
use crate::grassmann::{GrassmannValue, MultiIndex, Parity, MAX_GENERATORS};

/// Base dimension `n`, odd rank `q` and a label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub n: usize,
    pub q: usize,
    #[serde(default)]
    pub name: String,
}

impl ChartSpec {
    pub fn new(n: usize, q: usize, name: impl Into<String>) -> Result<Self, FieldError> {
        let chart = ChartSpec { n, q, name: name.into() };
        chart.validate()?;
        Ok(chart)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if self.n == 0 {
            return Err(FieldError::InvalidChart("base dimension must be at least 1".into()));
        }
        if self.q == 0 || self.q > MAX_GENERATORS {
            return Err(FieldError::InvalidChart(format!("odd rank must lie in 1..={MAX_GENERATORS}")));
        }
        Ok(())
    }

    /// Total number of coordinates `n + q`.
    pub fn dim(&self) -> usize {
        self.n + self.q
    }
}

impl fmt::Display for ChartSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(n={}, q={})", self.name, self.n, self.q)
    }
}

/// Finite sum `Σ_I f_I(x) e[I]`; zero components are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperFunction {
    chart: Arc<ChartSpec>,
    components: BTreeMap<MultiIndex, ScalarExpr>,
}

impl SuperFunction {
    pub fn zero(chart: Arc<ChartSpec>) -> Self {
        SuperFunction { chart, components: BTreeMap::new() }
    }

    /// Pullback of a base function (degree 0 only).
    pub fn from_base(chart: Arc<ChartSpec>, expr: ScalarExpr) -> Self {
        Self::from_components(chart, [(MultiIndex::EMPTY, expr)])
    }

    pub fn from_components(
        chart: Arc<ChartSpec>,
        components: impl IntoIterator<Item = (MultiIndex, ScalarExpr)>,
    ) -> Self {
        let mut out = SuperFunction::zero(chart);
        for (idx, e) in components {
            out.accumulate(idx, e);
        }
        out
    }

    /// Odd generator `e[α]` (1-based).
    pub fn generator(chart: Arc<ChartSpec>, alpha: usize) -> Self {
        Self::from_components(chart, [(MultiIndex::generator(alpha), ScalarExpr::one())])
    }

    fn accumulate(&mut self, idx: MultiIndex, e: ScalarExpr) {
        if e.is_zero() {
            return;
        }
        let merged = match self.components.remove(&idx) {
            Some(old) => old + e,
            None => e,
        };
        if !merged.is_zero() {
            self.components.insert(idx, merged);
        }
    }

    pub fn chart(&self) -> &Arc<ChartSpec> {
        &self.chart
    }

    pub fn components(&self) -> &BTreeMap<MultiIndex, ScalarExpr> {
        &self.components
    }

    pub fn component(&self, idx: MultiIndex) -> ScalarExpr {
        self.components.get(&idx).cloned().unwrap_or_else(ScalarExpr::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.components.is_empty()
    }

    pub fn parity(&self) -> Parity {
        let mut parity = None;
        for idx in self.components.keys() {
            let p = Parity::of_degree(idx.len());
            match parity {
                None => parity = Some(p),
                Some(q) if q != p => return Parity::Mixed,
                _ => {}
            }
        }
        parity.unwrap_or(Parity::Even)
    }

    /// Keeps the components whose degree has the given parity.
    pub fn parity_project(&self, bit: u8) -> SuperFunction {
        SuperFunction {
            chart: self.chart.clone(),
            components: self
                .components
                .iter()
                .filter(|(idx, _)| idx.len() % 2 == bit as usize)
                .map(|(i, e)| (*i, e.clone()))
                .collect(),
        }
    }

    fn same_chart(&self, other: &SuperFunction) -> Result<(), FieldError> {
        if self.chart != other.chart && *self.chart != *other.chart {
            return Err(FieldError::ChartMismatch(self.chart.to_string(), other.chart.to_string()));
        }
        Ok(())
    }

    pub fn add(&self, other: &SuperFunction) -> Result<SuperFunction, FieldError> {
        self.same_chart(other)?;
        let mut out = self.clone();
        for (idx, e) in &other.components {
            out.accumulate(*idx, e.clone());
        }
        Ok(out)
    }

    pub fn sub(&self, other: &SuperFunction) -> Result<SuperFunction, FieldError> {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> SuperFunction {
        self.mul_expr(&ScalarExpr::Const(c))
    }

    /// Multiplies every coefficient by a base function.
    pub fn mul_expr(&self, e: &ScalarExpr) -> SuperFunction {
        Self::from_components(self.chart.clone(), self.components.iter().map(|(i, c)| (*i, e.clone() * c.clone())))
    }

    /// Graded-commutative product.
    pub fn mul(&self, other: &SuperFunction) -> Result<SuperFunction, FieldError> {
        self.same_chart(other)?;
        let mut out = SuperFunction::zero(self.chart.clone());
        for (ia, a) in &self.components {
            for (ib, b) in &other.components {
                if let Some(sign) = ia.merge(*ib) {
                    let coeff = a.clone() * b.clone();
                    let coeff = if sign < 0.0 { -coeff } else { coeff };
                    out.accumulate(MultiIndex::from_mask(ia.mask() | ib.mask()), coeff);
                }
            }
        }
        Ok(out)
    }

    /// `∂̂_i`: differentiates the coefficients in `x_i` (1-based).
    pub fn dhat_base(&self, i: usize) -> Result<SuperFunction, FieldError> {
        if i == 0 || i > self.chart.n {
            return Err(FieldError::IndexOutOfRange { index: i, max: self.chart.n });
        }
        Ok(Self::from_components(self.chart.clone(), self.components.iter().map(|(idx, e)| (*idx, e.diff(i - 1)))))
    }

    /// `∂̂_α`: left derivative in the odd generator `e[α]` (1-based).
    pub fn dhat_odd(&self, alpha: usize) -> Result<SuperFunction, FieldError> {
        if alpha == 0 || alpha > self.chart.q {
            return Err(FieldError::IndexOutOfRange { index: alpha, max: self.chart.q });
        }
        let bit = 1u32 << (alpha - 1);
        let comps = self.components.iter().filter(|(idx, _)| idx.mask() & bit != 0).map(|(idx, e)| {
            let pos = (idx.mask() & (bit - 1)).count_ones();
            let e = if pos.is_multiple_of(2) { e.clone() } else { -e.clone() };
            (MultiIndex::from_mask(idx.mask() & !bit), e)
        });
        Ok(Self::from_components(self.chart.clone(), comps))
    }

    /// Reduction `~f`: all odd generators set to zero.
    pub fn reduce(&self) -> ScalarExpr {
        self.component(MultiIndex::EMPTY)
    }

    /// Projection onto the degree `<= 1` sector.
    pub fn project_f(&self) -> SuperFunction {
        SuperFunction {
            chart: self.chart.clone(),
            components: self.components.iter().filter(|(i, _)| i.len() <= 1).map(|(i, e)| (*i, e.clone())).collect(),
        }
    }

    /// Fiber-affine function on `E` corresponding to a degree `<= 1` superfunction.
    pub fn psi(&self) -> Result<FiberAffine<ScalarExpr>, FieldError> {
        if let Some(idx) = self.components.keys().find(|i| i.len() > 1) {
            return Err(FieldError::NotFiberAffine { degree: idx.len() });
        }
        Ok(FiberAffine {
            constant: self.reduce(),
            linear: (1..=self.chart.q).map(|a| self.component(MultiIndex::generator(a))).collect(),
        })
    }

    pub fn psi_inverse(chart: Arc<ChartSpec>, g: &FiberAffine<ScalarExpr>) -> Result<SuperFunction, FieldError> {
        if g.linear.len() != chart.q {
            return Err(FieldError::IndexOutOfRange { index: g.linear.len(), max: chart.q });
        }
        let comps = std::iter::once((MultiIndex::EMPTY, g.constant.clone()))
            .chain(g.linear.iter().enumerate().map(|(a, e)| (MultiIndex::generator(a + 1), e.clone())));
        Ok(Self::from_components(chart, comps))
    }

    /// Pointwise value in `Λ_q`.
    pub fn eval(&self, x: &[f64]) -> Result<GrassmannValue, EvalError> {
        let mut terms = Vec::with_capacity(self.components.len());
        for (idx, e) in &self.components {
            terms.push((*idx, e.eval(x)?));
        }
        Ok(GrassmannValue::from_terms(self.chart.q, terms))
    }

    /// Parses `x1^2 + (x1)*e[1] + 3*e[1,2]`: a sum of scalar terms, each
    /// optionally followed by `* e[α1,...,αk]`.
    pub fn parse(src: &str, chart: Arc<ChartSpec>) -> Result<SuperFunction, FieldError> {
        let mut p = Parser::new(src, chart.n)?;
        let mut out = SuperFunction::zero(chart.clone());
        let mut sign = 1.0;
        loop {
            let (coeff, labels) = match (p.peek().clone(), p.peek2().clone()) {
                (Tok::Basis(l), _) => {
                    p.bump();
                    (ScalarExpr::one(), l)
                }
                (Tok::Minus, Tok::Basis(l)) => {
                    p.bump();
                    p.bump();
                    (ScalarExpr::Const(-1.0), l)
                }
                _ => {
                    let coeff = p.term()?;
                    if let (Tok::Star, Tok::Basis(l)) = (p.peek().clone(), p.peek2().clone()) {
                        p.bump();
                        p.bump();
                        (coeff, l)
                    } else {
                        (coeff, Vec::new())
                    }
                }
            };
            let (idx, perm) = match MultiIndex::from_unsorted(&labels, chart.q)? {
                Some(v) => v,
                None => return Err(ExprError::Syntax { pos: p.pos(), message: "repeated odd generator".into() }.into()),
            };
            let coeff = if sign * perm < 0.0 { -coeff } else { coeff };
            out.accumulate(idx, coeff);
            match p.peek() {
                Tok::Plus => sign = 1.0,
                Tok::Minus => sign = -1.0,
                Tok::End => break,
                _ => return Err(p.error("expected '+', '-' or end of input").into()),
            }
            p.bump();
        }
        Ok(out)
    }
}

impl fmt::Display for SuperFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.components.is_empty() {
            return write!(f, "0");
        }
        for (n, (idx, e)) in self.components.iter().enumerate() {
            if n > 0 {
                write!(f, " + ")?;
            }
            let coeff = match e {
                ScalarExpr::Add(..) | ScalarExpr::Sub(..) => format!("({e})"),
                _ => e.to_string(),
            };
            if idx.is_empty() {
                write!(f, "{coeff}")?;
            } else {
                write!(f, "{coeff}*{idx}")?;
            }
        }
        Ok(())
    }
}

/// Function on `E` of the form `constant(x) + Σ_β linear_β(x) y_β`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberAffine<T> {
    pub constant: T,
    pub linear: Vec<T>,
}

impl FiberAffine<ScalarExpr> {
    pub fn zero(q: usize) -> Self {
        FiberAffine { constant: ScalarExpr::zero(), linear: vec![ScalarExpr::zero(); q] }
    }

    pub fn is_zero(&self) -> bool {
        self.constant.is_zero() && self.linear.iter().all(|e| e.is_zero())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
        let mut v = self.constant.eval(x)?;
        for (e, yb) in self.linear.iter().zip(y) {
            if !e.is_zero() {
                v += e.eval(x)? * yb;
            }
        }
        Ok(v)
    }

    pub fn sample(&self, x: &[f64]) -> Result<FiberAffine<f64>, EvalError> {
        Ok(FiberAffine {
            constant: self.constant.eval(x)?,
            linear: self.linear.iter().map(|e| e.eval(x)).collect::<Result<_, _>>()?,
        })
    }

    /// Partial derivative in the base coordinate `x_{i+1}`.
    pub fn diff_base(&self, i: usize) -> Self {
        FiberAffine { constant: self.constant.diff(i), linear: self.linear.iter().map(|e| e.diff(i)).collect() }
    }
}

impl FiberAffine<f64> {
    pub fn zero_value(q: usize) -> Self {
        FiberAffine { constant: 0.0, linear: vec![0.0; q] }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.constant + self.linear.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
    }
}
