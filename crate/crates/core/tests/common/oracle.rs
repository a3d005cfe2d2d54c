//! Levi-Civita symbols by a dense least-squares solve of `{Θ = 0, T = 0}`.
//!
//! The unknowns are the Grassmann coefficients of every `Γ^t_{su}` of the
//! right parity. Θ is written out from its definition with the metric's
//! left-linearity rules; nothing here goes through the library's solver.

use nalgebra::{DMatrix, DVector};
use supergeo::geometry::{ChristoffelTable, SuperMetric};
use supergeo::grassmann::{GrassmannValue, MultiIndex};

fn sign(a: usize, b: usize) -> f64 {
    if (a * b) % 2 == 1 {
        -1.0
    } else {
        1.0
    }
}

struct Data {
    n: usize,
    q: usize,
    gp: usize,
    g: Vec<GrassmannValue>,
    // dg[s][u * dim + r] = ∂̂_s g_{ur}
    dg: Vec<Vec<GrassmannValue>>,
}

impl Data {
    fn dim(&self) -> usize {
        self.n + self.q
    }

    fn par(&self, s: usize) -> usize {
        usize::from(s >= self.n)
    }

    /// `g(a ∂_t, b ∂_r)` for homogeneous `a`, `b`.
    fn pair(&self, a: &GrassmannValue, pa: usize, t: usize, b: &GrassmannValue, pb: usize, r: usize) -> GrassmannValue {
        let c = sign(self.gp, pa) * sign(pb, self.gp + self.par(t));
        (a * &(b * &self.g[t * self.dim() + r])).scale(c)
    }
}

fn sample(g: &SuperMetric, x: &[f64]) -> Data {
    let chart = g.chart();
    let (n, q) = (chart.n, chart.q);
    let dim = n + q;
    let mut dg = Vec::new();
    for s in 0..dim {
        let row = (0..dim * dim)
            .map(|k| {
                let f = g.coeff(k / dim, k % dim);
                let d = if s < n { f.dhat_base(s + 1) } else { f.dhat_odd(s - n + 1) };
                d.unwrap().eval(x).unwrap()
            })
            .collect();
        dg.push(row);
    }
    let gv = (0..dim * dim).map(|k| g.coeff(k / dim, k % dim).eval(x).unwrap()).collect();
    Data { n, q, gp: g.parity() as usize, g: gv, dg }
}

/// Θ(∂_s, ∂_u, ∂_r) and the torsion components for a trial table.
fn residuals(d: &Data, gamma: &[GrassmannValue]) -> Vec<GrassmannValue> {
    let dim = d.dim();
    let at = |t: usize, s: usize, u: usize| &gamma[(t * dim + s) * dim + u];
    let one = GrassmannValue::one(d.q);
    let mut out = Vec::new();
    for s in 0..dim {
        for u in 0..dim {
            for r in 0..dim {
                let (ps, pu, pr) = (d.par(s), d.par(u), d.par(r));
                let mut th = d.dg[s][u * dim + r].scale(sign(d.gp, ps));
                for t in 0..dim {
                    let pt = d.par(t);
                    th = &th - &d.pair(at(t, s, u), (ps + pu + pt) % 2, t, &one, 0, r);
                    th = &th - &d.pair(&one, 0, u, at(t, s, r), (ps + pr + pt) % 2, t).scale(sign(ps, pu));
                }
                out.push(th);
            }
            for t in 0..dim {
                out.push(at(t, s, u) - &at(t, u, s).scale(sign(d.par(s), d.par(u))));
            }
        }
    }
    out
}

fn flatten(values: &[GrassmannValue], q: usize) -> DVector<f64> {
    let width = 1usize << q;
    let mut v = DVector::zeros(values.len() * width);
    for (k, g) in values.iter().enumerate() {
        for (idx, c) in g.terms() {
            v[k * width + idx.mask() as usize] = *c;
        }
    }
    v
}

/// Dense solve; returns the table and the least-squares residual norm.
pub fn dense_levi_civita(g: &SuperMetric, x: &[f64]) -> (ChristoffelTable, f64) {
    let d = sample(g, x);
    let (n, q, dim) = (d.n, d.q, d.dim());
    let mut unknowns = Vec::new();
    for t in 0..dim {
        for s in 0..dim {
            for u in 0..dim {
                let p = (d.par(t) + d.par(s) + d.par(u)) % 2;
                for m in 0u32..1 << q {
                    if m.count_ones() as usize % 2 == p {
                        unknowns.push(((t * dim + s) * dim + u, m));
                    }
                }
            }
        }
    }
    let zero = vec![GrassmannValue::zero(q); dim * dim * dim];
    let b = flatten(&residuals(&d, &zero), q);
    let mut a = DMatrix::zeros(b.len(), unknowns.len());
    for (col, &(slot, m)) in unknowns.iter().enumerate() {
        let mut trial = zero.clone();
        trial[slot] = GrassmannValue::monomial(q, MultiIndex::from_mask(m), 1.0);
        let column = flatten(&residuals(&d, &trial), q) - &b;
        a.set_column(col, &column);
    }
    let svd = a.clone().svd(true, true);
    let sol = svd.solve(&(-&b), 1e-12).unwrap();
    let resid = (&a * &sol + &b).norm();
    let mut table = ChristoffelTable::zero(n, q);
    let mut acc = zero;
    for (&(slot, m), c) in unknowns.iter().zip(sol.iter()) {
        acc[slot] = &acc[slot] + &GrassmannValue::monomial(q, MultiIndex::from_mask(m), *c);
    }
    for (k, v) in acc.into_iter().enumerate() {
        table.set(k / (dim * dim), (k / dim) % dim, k % dim, v);
    }
    (table, resid)
}

/// Smallest singular value of the dense system; positive means the solution is unique.
pub fn dense_min_singular(g: &SuperMetric, x: &[f64]) -> f64 {
    let d = sample(g, x);
    let (q, dim) = (d.q, d.dim());
    let zero = vec![GrassmannValue::zero(q); dim * dim * dim];
    let b = flatten(&residuals(&d, &zero), q);
    let mut cols = Vec::new();
    for slot in 0..dim * dim * dim {
        let (t, s, u) = (slot / (dim * dim), (slot / dim) % dim, slot % dim);
        let p = (d.par(t) + d.par(s) + d.par(u)) % 2;
        for m in 0u32..1 << q {
            if m.count_ones() as usize % 2 == p {
                let mut trial = zero.clone();
                trial[slot] = GrassmannValue::monomial(q, MultiIndex::from_mask(m), 1.0);
                cols.push(flatten(&residuals(&d, &trial), q) - &b);
            }
        }
    }
    let a = DMatrix::from_columns(&cols);
    a.svd(false, false).singular_values.min()
}
