#![allow(dead_code)]

pub mod oracle;

use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;
use supergeo::geometry::SuperMetric;
use supergeo::grassmann::{GrassmannValue, MultiIndex};
use supergeo::superfield::{ChartSpec, SuperFunction};

/// Coefficients that are small multiples of 1/8, so sums and products stay exact.
pub fn dyadic<R: Rng>(rng: &mut R) -> f64 {
    rng.gen_range(-16i32..=16) as f64 / 8.0
}

/// Random element of `Λ_q`; `parity` restricts to even (0) or odd (1) monomials.
pub fn random_value<R: Rng>(rng: &mut R, q: usize, parity: Option<u8>) -> GrassmannValue {
    let mut terms = Vec::new();
    for m in (0u32..1 << q).filter(|m| parity.is_none_or(|p| m.count_ones() % 2 == p as u32)) {
        if rng.gen_bool(0.6) {
            terms.push((MultiIndex::from_mask(m), dyadic(rng)));
        }
    }
    GrassmannValue::from_terms(q, terms)
}

pub fn arb_value(q: usize, parity: Option<u8>) -> impl Strategy<Value = GrassmannValue> {
    let masks: Vec<u32> = (0u32..1 << q).filter(|m| parity.is_none_or(|p| m.count_ones() % 2 == p as u32)).collect();
    prop::collection::vec((prop::sample::select(masks), -16i32..=16), 0..8).prop_map(move |terms| {
        GrassmannValue::from_terms(q, terms.into_iter().map(|(m, c)| (MultiIndex::from_mask(m), c as f64 / 8.0)))
    })
}

pub fn chart(n: usize, q: usize) -> Arc<ChartSpec> {
    Arc::new(ChartSpec::new(n, q, format!("test-n{n}-q{q}")).unwrap())
}

/// Metric from `"r,s" -> text` pairs (1-based); partners filled by supersymmetry.
pub fn metric(n: usize, q: usize, parity: u8, entries: &[(&str, &str)]) -> Arc<SuperMetric> {
    let c = chart(n, q);
    let dim = n + q;
    let mut coeffs = vec![SuperFunction::zero(c.clone()); dim * dim];
    for (key, text) in entries {
        let (r, s) = key.split_once(',').unwrap();
        let (r, s): (usize, usize) = (r.trim().parse::<usize>().unwrap() - 1, s.trim().parse::<usize>().unwrap() - 1);
        let f = SuperFunction::parse(text, c.clone()).unwrap();
        let sign = if r >= n && s >= n { -1.0 } else { 1.0 };
        coeffs[s * dim + r] = f.scale(sign);
        coeffs[r * dim + s] = f;
    }
    Arc::new(SuperMetric::new(c, parity, coeffs).unwrap())
}

/// `g_xx = 1`, `g_{θ1θ2} = -g_{θ2θ1} = 1 + x1`.
pub fn worked_metric() -> Arc<SuperMetric> {
    metric(1, 2, 0, &[("1,1", "1"), ("2,3", "1 + x1")])
}
