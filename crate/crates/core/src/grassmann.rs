//! Real Grassmann algebra `Λ_q` on `q ≤ 16` odd generators.
//!
//! Elements are stored sparsely as a sorted list of `(MultiIndex, coefficient)`
//! pairs. A [`MultiIndex`] is a bitmask: bit `k - 1` set means generator `e_k`
//! occurs in the monomial. The monomial itself is always the product of its
//! generators in increasing order, e.g. `e[1,3] = e1 · e3`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use nalgebra::DMatrix;
use smallvec::{smallvec, SmallVec};

use crate::error::GrassmannError;

/// Largest supported number of odd generators.
pub const MAX_GENERATORS: usize = 16;

/// Strictly increasing set of generator labels, stored as a bitmask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct MultiIndex(u32);

impl MultiIndex {
    pub const EMPTY: MultiIndex = MultiIndex(0);

    /// Single generator `e_k` (1-based label).
    pub fn generator(k: usize) -> Self {
        debug_assert!((1..=MAX_GENERATORS).contains(&k));
        MultiIndex(1 << (k - 1))
    }

    pub fn from_mask(mask: u32) -> Self {
        MultiIndex(mask)
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    /// Builds the index from a strictly increasing list of 1-based labels.
    pub fn from_sorted(labels: &[usize], q: usize) -> Result<Self, GrassmannError> {
        let mut mask = 0u32;
        let mut prev = 0usize;
        for &k in labels {
            if k == 0 || k > q {
                return Err(GrassmannError::GeneratorOutOfRange { generator: k, q });
            }
            if k <= prev {
                return Err(GrassmannError::NotIncreasing(labels.to_vec()));
            }
            mask |= 1 << (k - 1);
            prev = k;
        }
        Ok(MultiIndex(mask))
    }

    /// Sorts an arbitrary list of labels, returning the index and the sign of
    /// the reordering permutation. Repeated labels give `None` (the product vanishes).
    pub fn from_unsorted(labels: &[usize], q: usize) -> Result<Option<(Self, f64)>, GrassmannError> {
        let mut acc = (MultiIndex::EMPTY, 1.0);
        for &k in labels {
            if k == 0 || k > q {
                return Err(GrassmannError::GeneratorOutOfRange { generator: k, q });
            }
            let g = MultiIndex::generator(k);
            match acc.0.merge(g) {
                Some(sign) => acc = (MultiIndex(acc.0 .0 | g.0), acc.1 * sign),
                None => return Ok(None),
            }
        }
        Ok(Some(acc))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, k: usize) -> bool {
        k >= 1 && self.0 & (1 << (k - 1)) != 0
    }

    /// Increasing 1-based labels.
    pub fn labels(self) -> Vec<usize> {
        (0..32).filter(|b| self.0 & (1 << b) != 0).map(|b| b + 1).collect()
    }

    /// Sign of `e_self · e_other`, or `None` when the indices overlap.
    pub fn merge(self, other: MultiIndex) -> Option<f64> {
        if self.0 & other.0 != 0 {
            return None;
        }
        // count pairs (i in self, j in other) with i > j
        let mut swaps = 0u32;
        let mut rest = other.0;
        while rest != 0 {
            let j = rest.trailing_zeros();
            swaps += (self.0 >> (j + 1)).count_ones();
            rest &= rest - 1;
        }
        Some(if swaps.is_multiple_of(2) { 1.0 } else { -1.0 })
    }

    fn is_valid_for(self, q: usize) -> bool {
        q >= 32 || self.0 >> q == 0
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Degree first, then lexicographic on the increasing label sequence.
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len().cmp(&other.len()).then_with(|| {
            let diff = self.0 ^ other.0;
            if diff == 0 {
                Ordering::Equal
            } else if self.0 & (diff & diff.wrapping_neg()) != 0 {
                Ordering::Less
            } else {
                Ordering::Greater
            }
        })
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<String> = self.labels().iter().map(|k| k.to_string()).collect();
        write!(f, "e[{}]", labels.join(","))
    }
}

/// Z/2 parity of a Grassmann element or superfunction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    Mixed,
}

impl Parity {
    pub fn of_degree(d: usize) -> Parity {
        if d.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    /// 0 or 1 for homogeneous parities.
    pub fn bit(self) -> Option<u8> {
        match self {
            Parity::Even => Some(0),
            Parity::Odd => Some(1),
            Parity::Mixed => None,
        }
    }
}

// inline storage covers every element for q <= 2
type Terms = SmallVec<[(MultiIndex, f64); 4]>;

/// Element of `Λ_q` with real coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct GrassmannValue {
    q: usize,
    // sorted by mask, no zero coefficients
    terms: Terms,
}

impl GrassmannValue {
    pub fn zero(q: usize) -> Self {
        GrassmannValue { q, terms: Terms::new() }
    }

    pub fn scalar(q: usize, c: f64) -> Self {
        Self::monomial(q, MultiIndex::EMPTY, c)
    }

    pub fn one(q: usize) -> Self {
        Self::scalar(q, 1.0)
    }

    pub fn monomial(q: usize, index: MultiIndex, c: f64) -> Self {
        assert!(index.is_valid_for(q), "multi-index {index} invalid for q = {q}");
        if c == 0.0 {
            Self::zero(q)
        } else {
            GrassmannValue { q, terms: smallvec![(index, c)] }
        }
    }

    /// Generator `e_k` (1-based).
    pub fn generator(q: usize, k: usize) -> Self {
        Self::monomial(q, MultiIndex::generator(k), 1.0)
    }

    /// Builds a value from arbitrary terms; repeated indices are summed.
    pub fn from_terms(q: usize, terms: impl IntoIterator<Item = (MultiIndex, f64)>) -> Self {
        assert!(q <= MAX_GENERATORS, "q = {q} exceeds {MAX_GENERATORS}");
        let mut raw: Terms = terms.into_iter().collect();
        for (idx, _) in &raw {
            assert!(idx.is_valid_for(q), "multi-index {idx} invalid for q = {q}");
        }
        raw.sort_by_key(|(idx, _)| idx.mask());
        GrassmannValue { q, terms: compress(raw) }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn terms(&self) -> &[(MultiIndex, f64)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, index: MultiIndex) -> f64 {
        match self.terms.binary_search_by_key(&index.mask(), |(i, _)| i.mask()) {
            Ok(pos) => self.terms[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn body(&self) -> f64 {
        self.coefficient(MultiIndex::EMPTY)
    }

    pub fn soul(&self) -> GrassmannValue {
        self.filter(|idx| !idx.is_empty())
    }

    /// Keeps exactly the monomials of degree `k`.
    pub fn degree_project(&self, k: usize) -> GrassmannValue {
        self.filter(|idx| idx.len() == k)
    }

    /// Keeps the monomials whose degree has the given parity bit.
    pub fn parity_project(&self, parity_bit: u8) -> GrassmannValue {
        self.filter(|idx| idx.len() % 2 == parity_bit as usize)
    }

    pub fn parity(&self) -> Parity {
        let mut seen_even = false;
        let mut seen_odd = false;
        for (idx, _) in &self.terms {
            if idx.len() % 2 == 0 {
                seen_even = true;
            } else {
                seen_odd = true;
            }
        }
        match (seen_even, seen_odd) {
            (_, false) => Parity::Even,
            (false, true) => Parity::Odd,
            (true, true) => Parity::Mixed,
        }
    }

    fn filter(&self, keep: impl Fn(MultiIndex) -> bool) -> GrassmannValue {
        GrassmannValue { q: self.q, terms: self.terms.iter().copied().filter(|(idx, _)| keep(*idx)).collect() }
    }

    pub fn scale(&self, c: f64) -> GrassmannValue {
        if c == 0.0 {
            return Self::zero(self.q);
        }
        GrassmannValue {
            q: self.q,
            terms: self.terms.iter().map(|&(i, v)| (i, v * c)).filter(|(_, v)| *v != 0.0).collect(),
        }
    }

    pub fn checked_add(&self, other: &GrassmannValue) -> Result<GrassmannValue, GrassmannError> {
        self.same_q(other)?;
        Ok(self.merge_scaled(other, 1.0))
    }

    pub fn checked_sub(&self, other: &GrassmannValue) -> Result<GrassmannValue, GrassmannError> {
        self.same_q(other)?;
        Ok(self.merge_scaled(other, -1.0))
    }

    /// `self + c * other` by a sorted merge.
    fn merge_scaled(&self, other: &GrassmannValue, c: f64) -> GrassmannValue {
        let mut out = Terms::with_capacity(self.terms.len() + other.terms.len());
        let (a, b) = (&self.terms, &other.terms);
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            let ((ia, va), (ib, vb)) = (a[i], b[j]);
            match ia.mask().cmp(&ib.mask()) {
                Ordering::Less => {
                    out.push((ia, va));
                    i += 1;
                }
                Ordering::Greater => {
                    out.push((ib, c * vb));
                    j += 1;
                }
                Ordering::Equal => {
                    let s = va + c * vb;
                    if s != 0.0 {
                        out.push((ia, s));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend(b[j..].iter().map(|&(idx, v)| (idx, c * v)));
        GrassmannValue { q: self.q, terms: out }
    }

    pub fn checked_mul(&self, other: &GrassmannValue) -> Result<GrassmannValue, GrassmannError> {
        self.same_q(other)?;
        if self.q <= DENSE_MAX_Q {
            let mut acc = Accumulator::new(self.q);
            acc.add_product(self, other, 1.0);
            return Ok(acc.finish());
        }
        let mut raw = Terms::with_capacity(self.terms.len() * other.terms.len());
        for &(ia, va) in &self.terms {
            for &(ib, vb) in &other.terms {
                if let Some(sign) = ia.merge(ib) {
                    raw.push((MultiIndex(ia.0 | ib.0), sign * va * vb));
                }
            }
        }
        raw.sort_unstable_by_key(|(idx, _)| idx.mask());
        Ok(GrassmannValue { q: self.q, terms: compress(raw) })
    }

    /// Left derivative `∂̂_α`: removes `e_α` after moving it to the front.
    pub fn left_derivative(&self, alpha: usize) -> Result<GrassmannValue, GrassmannError> {
        if alpha == 0 || alpha > self.q {
            return Err(GrassmannError::GeneratorOutOfRange { generator: alpha, q: self.q });
        }
        let bit = 1u32 << (alpha - 1);
        let terms = self.terms.iter().filter(|(idx, _)| idx.0 & bit != 0).map(|&(idx, v)| {
            let pos = (idx.0 & (bit - 1)).count_ones();
            let sign = if pos.is_multiple_of(2) { 1.0 } else { -1.0 };
            (MultiIndex(idx.0 & !bit), sign * v)
        });
        Ok(GrassmannValue::from_terms(self.q, terms))
    }

    /// Multiplicative inverse, available whenever the body is non-zero.
    pub fn invert(&self) -> Result<GrassmannValue, GrassmannError> {
        let body = self.body();
        if body == 0.0 {
            return Err(GrassmannError::NotInvertible);
        }
        let inv_body = 1.0 / body;
        let step = self.soul().scale(-inv_body);
        let mut power = GrassmannValue::one(self.q);
        let mut sum = GrassmannValue::one(self.q);
        // (soul)^k vanishes for k > q
        for _ in 0..self.q {
            power = &power * &step;
            if power.is_zero() {
                break;
            }
            sum = &sum + &power;
        }
        Ok(sum.scale(inv_body))
    }

    /// Image under the algebra morphism `e_δ ↦ Σ_α m[(δ, α)] e_α` induced by a
    /// linear change of generators.
    pub fn substitute_linear(&self, m: &DMatrix<f64>) -> GrassmannValue {
        assert!(m.nrows() == self.q && m.ncols() == self.q, "substitution matrix must be q x q");
        let images: Vec<GrassmannValue> = (0..self.q)
            .map(|d| GrassmannValue::from_terms(self.q, (0..self.q).map(|a| (MultiIndex::generator(a + 1), m[(d, a)]))))
            .collect();
        let mut out = GrassmannValue::zero(self.q);
        for (idx, c) in &self.terms {
            let mut prod = GrassmannValue::scalar(self.q, *c);
            for k in idx.labels() {
                prod = &prod * &images[k - 1];
            }
            out += &prod;
        }
        out
    }

    /// Largest absolute coefficient.
    pub fn max_abs(&self) -> f64 {
        self.terms.iter().fold(0.0, |m, (_, v)| m.max(v.abs()))
    }

    /// Largest coefficient-wise difference.
    pub fn max_abs_diff(&self, other: &GrassmannValue) -> f64 {
        (self - other).max_abs()
    }

    fn same_q(&self, other: &GrassmannValue) -> Result<(), GrassmannError> {
        if self.q != other.q {
            Err(GrassmannError::DimensionMismatch { left: self.q, right: other.q })
        } else {
            Ok(())
        }
    }
}

fn compress(sorted: Terms) -> Terms {
    let mut out = Terms::with_capacity(sorted.len());
    for (idx, v) in sorted {
        match out.last_mut() {
            Some(last) if last.0 == idx => last.1 += v,
            _ => out.push((idx, v)),
        }
    }
    out.retain(|(_, v)| *v != 0.0);
    out
}

// Operator impls panic on mismatched `q`; use the `checked_*` methods when the
// generator counts are not known to agree.

impl Add for &GrassmannValue {
    type Output = GrassmannValue;
    fn add(self, rhs: &GrassmannValue) -> GrassmannValue {
        self.checked_add(rhs).expect("Grassmann addition")
    }
}

impl Add for GrassmannValue {
    type Output = GrassmannValue;
    fn add(self, rhs: GrassmannValue) -> GrassmannValue {
        &self + &rhs
    }
}

impl AddAssign<&GrassmannValue> for GrassmannValue {
    fn add_assign(&mut self, rhs: &GrassmannValue) {
        *self = &*self + rhs;
    }
}

impl Sub for &GrassmannValue {
    type Output = GrassmannValue;
    fn sub(self, rhs: &GrassmannValue) -> GrassmannValue {
        self.checked_sub(rhs).expect("Grassmann subtraction")
    }
}

impl Sub for GrassmannValue {
    type Output = GrassmannValue;
    fn sub(self, rhs: GrassmannValue) -> GrassmannValue {
        &self - &rhs
    }
}

impl Neg for &GrassmannValue {
    type Output = GrassmannValue;
    fn neg(self) -> GrassmannValue {
        GrassmannValue { q: self.q, terms: self.terms.iter().map(|&(i, v)| (i, -v)).collect() }
    }
}

impl Neg for GrassmannValue {
    type Output = GrassmannValue;
    fn neg(self) -> GrassmannValue {
        -&self
    }
}

impl Mul for &GrassmannValue {
    type Output = GrassmannValue;
    fn mul(self, rhs: &GrassmannValue) -> GrassmannValue {
        self.checked_mul(rhs).expect("Grassmann product")
    }
}

impl Mul for GrassmannValue {
    type Output = GrassmannValue;
    fn mul(self, rhs: GrassmannValue) -> GrassmannValue {
        &self * &rhs
    }
}

impl fmt::Display for GrassmannValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut sorted = self.terms.clone();
        sorted.sort_by_key(|a| a.0);
        for (n, (idx, c)) in sorted.iter().enumerate() {
            let mag = c.abs();
            if n == 0 {
                if *c < 0.0 {
                    write!(f, "-")?;
                }
            } else if *c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            if idx.is_empty() {
                write!(f, "{mag}")?;
            } else {
                write!(f, "{mag}*{idx}")?;
            }
        }
        Ok(())
    }
}

impl GrassmannValue {
    /// Parses `c0 + c1*e[1] - c12*e[1,2]`. Labels inside `e[...]` may appear in
    /// any order; the reordering sign is applied.
    pub fn parse(src: &str, q: usize) -> Result<GrassmannValue, GrassmannError> {
        let err = |pos: usize, msg: &str| GrassmannError::Parse { pos, message: msg.to_string() };
        let bytes = src.as_bytes();
        let mut pos = 0;
        let skip_ws = |pos: &mut usize| {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
        };
        let mut terms = Vec::new();
        let mut first = true;
        loop {
            skip_ws(&mut pos);
            if pos >= bytes.len() {
                if first {
                    return Err(err(pos, "empty input"));
                }
                break;
            }
            let mut sign = 1.0;
            if bytes[pos] == b'+' || bytes[pos] == b'-' {
                if bytes[pos] == b'-' {
                    sign = -1.0;
                }
                pos += 1;
                skip_ws(&mut pos);
            } else if !first {
                return Err(err(pos, "expected '+' or '-'"));
            }
            first = false;
            let mut coeff = 1.0;
            let mut have_coeff = false;
            if pos < bytes.len() && (bytes[pos].is_ascii_digit() || bytes[pos] == b'.') {
                let start = pos;
                pos = scan_number(bytes, pos);
                coeff = src[start..pos].parse::<f64>().map_err(|_| err(start, "bad number"))?;
                have_coeff = true;
                skip_ws(&mut pos);
                if pos < bytes.len() && bytes[pos] == b'*' {
                    pos += 1;
                    skip_ws(&mut pos);
                } else {
                    terms.push((MultiIndex::EMPTY, sign * coeff));
                    continue;
                }
            }
            if pos + 1 < bytes.len() && bytes[pos] == b'e' && bytes[pos + 1] == b'[' {
                let close = src[pos..].find(']').map(|c| pos + c).ok_or_else(|| err(pos, "unclosed '['"))?;
                let inner = &src[pos + 2..close];
                let labels = parse_labels(inner).map_err(|m| err(pos + 2, &m))?;
                match MultiIndex::from_unsorted(&labels, q)? {
                    Some((idx, s)) => terms.push((idx, sign * s * coeff)),
                    None => return Err(err(pos, "repeated generator label")),
                }
                pos = close + 1;
            } else if have_coeff {
                return Err(err(pos, "expected e[...] after '*'"));
            } else {
                return Err(err(pos, "expected number or e[...]"));
            }
        }
        Ok(GrassmannValue::from_terms(q, terms))
    }
}

impl FromStr for GrassmannValue {
    type Err = GrassmannError;
    /// Parses with `q` inferred from the largest label (at least 1).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GrassmannValue::parse(s, MAX_GENERATORS).map(|v| {
            let q = v.terms.iter().map(|(i, _)| 32 - i.mask().leading_zeros() as usize).max().unwrap_or(0).max(1);
            GrassmannValue { q, terms: v.terms }
        })
    }
}

pub(crate) fn scan_number(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() && (bytes[pos].is_ascii_digit() || bytes[pos] == b'.') {
        pos += 1;
    }
    // exponent only when followed by digits, so `2*e[1]` never reads as `2e...`
    if pos < bytes.len() && (bytes[pos] == b'e' || bytes[pos] == b'E') {
        let mut look = pos + 1;
        if look < bytes.len() && (bytes[look] == b'+' || bytes[look] == b'-') {
            look += 1;
        }
        if look < bytes.len() && bytes[look].is_ascii_digit() {
            pos = look;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
        }
    }
    pos
}

pub(crate) fn parse_labels(inner: &str) -> Result<Vec<usize>, String> {
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad generator label '{}'", s.trim())))
        .collect()
}

// Largest q for which products go through a dense accumulator.
const DENSE_MAX_Q: usize = 10;

/// Dense scratch buffer indexed by monomial mask, for sums of products
/// without intermediate allocation. Requires `q <= 10`.
#[derive(Clone, Debug)]
pub struct Accumulator {
    q: usize,
    dense: Vec<f64>,
}

impl Accumulator {
    pub fn new(q: usize) -> Self {
        assert!(q <= DENSE_MAX_Q, "accumulator supports q <= {DENSE_MAX_Q}");
        Accumulator { q, dense: vec![0.0; 1 << q] }
    }

    /// `self += c * a`.
    pub fn add_scaled(&mut self, a: &GrassmannValue, c: f64) {
        debug_assert_eq!(a.q, self.q);
        for &(i, v) in &a.terms {
            self.dense[i.0 as usize] += c * v;
        }
    }

    /// `self += c * a * b`.
    pub fn add_product(&mut self, a: &GrassmannValue, b: &GrassmannValue, c: f64) {
        debug_assert!(a.q == self.q && b.q == self.q);
        for &(ia, va) in &a.terms {
            let cv = c * va;
            for &(ib, vb) in &b.terms {
                if let Some(sign) = ia.merge(ib) {
                    self.dense[(ia.0 | ib.0) as usize] += sign * cv * vb;
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.dense.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn clear(&mut self) {
        self.dense.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Current value; the buffer is cleared for reuse.
    pub fn finish(&mut self) -> GrassmannValue {
        let mut terms = Terms::new();
        for (mask, v) in self.dense.iter_mut().enumerate() {
            if *v != 0.0 {
                terms.push((MultiIndex(mask as u32), *v));
                *v = 0.0;
            }
        }
        GrassmannValue { q: self.q, terms }
    }
}

/// Square matrix over `Λ_q`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrassmannMatrix {
    q: usize,
    dim: usize,
    entries: Vec<GrassmannValue>,
}

impl GrassmannMatrix {
    pub fn from_rows(q: usize, rows: Vec<Vec<GrassmannValue>>) -> Result<Self, GrassmannError> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(GrassmannError::NotSquare);
            }
            for v in row {
                if v.q() != q {
                    return Err(GrassmannError::DimensionMismatch { left: q, right: v.q() });
                }
                entries.push(v);
            }
        }
        Ok(GrassmannMatrix { q, dim, entries })
    }

    pub fn identity(q: usize, dim: usize) -> Self {
        let mut entries = vec![GrassmannValue::zero(q); dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = GrassmannValue::one(q);
        }
        GrassmannMatrix { q, dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn get(&self, r: usize, c: usize) -> &GrassmannValue {
        &self.entries[r * self.dim + c]
    }

    /// Real matrix of bodies.
    pub fn body(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |r, c| self.get(r, c).body())
    }

    fn soul(&self) -> GrassmannMatrix {
        GrassmannMatrix { q: self.q, dim: self.dim, entries: self.entries.iter().map(|e| e.soul()).collect() }
    }

    fn body_inverse(&self) -> Result<DMatrix<f64>, GrassmannError> {
        self.body().try_inverse().ok_or(GrassmannError::SingularBody)
    }

    pub fn mul_matrix(&self, other: &GrassmannMatrix) -> GrassmannMatrix {
        let n = self.dim;
        let mut entries = Vec::with_capacity(n * n);
        let mut acc = Accumulator::new(self.q);
        for r in 0..n {
            for c in 0..n {
                for k in 0..n {
                    acc.add_product(self.get(r, k), other.get(k, c), 1.0);
                }
                entries.push(acc.finish());
            }
        }
        GrassmannMatrix { q: self.q, dim: n, entries }
    }

    fn scale_real_left(real: &DMatrix<f64>, m: &GrassmannMatrix) -> GrassmannMatrix {
        let n = m.dim;
        let mut entries = Vec::with_capacity(n * n);
        let mut acc = Accumulator::new(m.q);
        for r in 0..n {
            for c in 0..n {
                for k in 0..n {
                    acc.add_scaled(m.get(k, c), real[(r, k)]);
                }
                entries.push(acc.finish());
            }
        }
        GrassmannMatrix { q: m.q, dim: n, entries }
    }

    /// Two-sided inverse, `A⁻¹ = Σ_k (−A₀⁻¹N)^k A₀⁻¹` with `A₀` the body
    /// and `N` the nilpotent soul; the series stops after at most `q` terms.
    pub fn inverse(&self) -> Result<GrassmannMatrix, GrassmannError> {
        let inv0 = self.body_inverse()?;
        let inv0_g = GrassmannMatrix::from_real(self.q, &inv0);
        let step = GrassmannMatrix::scale_real_left(&(-&inv0), &self.soul());
        let mut power = GrassmannMatrix::identity(self.q, self.dim);
        let mut sum = power.clone();
        for _ in 0..self.q {
            power = power.mul_matrix(&step);
            if power.entries.iter().all(|e| e.is_zero()) {
                break;
            }
            sum = sum.add_matrix(&power);
        }
        Ok(sum.mul_matrix(&inv0_g))
    }

    fn add_matrix(&self, other: &GrassmannMatrix) -> GrassmannMatrix {
        GrassmannMatrix {
            q: self.q,
            dim: self.dim,
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn from_real(q: usize, m: &DMatrix<f64>) -> GrassmannMatrix {
        let dim = m.nrows();
        let mut entries = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                entries.push(GrassmannValue::scalar(q, m[(r, c)]));
            }
        }
        GrassmannMatrix { q, dim, entries }
    }

    pub fn apply(&self, x: &[GrassmannValue]) -> Vec<GrassmannValue> {
        let mut acc = Accumulator::new(self.q);
        (0..self.dim)
            .map(|r| {
                for (c, xc) in x.iter().enumerate() {
                    acc.add_product(self.get(r, c), xc, 1.0);
                }
                acc.finish()
            })
            .collect()
    }

    /// Row vector times matrix: `(xA)_c = Σ_r x_r A_rc`.
    pub fn apply_left(&self, x: &[GrassmannValue]) -> Vec<GrassmannValue> {
        let mut acc = Accumulator::new(self.q);
        (0..self.dim)
            .map(|c| {
                for (r, xr) in x.iter().enumerate() {
                    acc.add_product(xr, self.get(r, c), 1.0);
                }
                acc.finish()
            })
            .collect()
    }
}

/// Solves `A·x = b` in `Λ_q` by a body solve plus nilpotent correction:
/// `x ← A₀⁻¹(b − N x)`, which is exact after at most `q + 1` sweeps.
pub fn solve(a: &GrassmannMatrix, b: &[GrassmannValue]) -> Result<Vec<GrassmannValue>, GrassmannError> {
    check_rhs(a, b)?;
    let inv0 = a.body_inverse()?;
    let soul = a.soul();
    let body_solve = |rhs: &[GrassmannValue]| -> Vec<GrassmannValue> {
        (0..a.dim)
            .map(|r| {
                let mut acc = GrassmannValue::zero(a.q);
                for (c, v) in rhs.iter().enumerate() {
                    acc += &v.scale(inv0[(r, c)]);
                }
                acc
            })
            .collect()
    };
    let mut x = body_solve(b);
    for _ in 0..=a.q {
        let nx = soul.apply(&x);
        let rhs: Vec<GrassmannValue> = b.iter().zip(&nx).map(|(bi, ni)| bi - ni).collect();
        let next = body_solve(&rhs);
        if next == x {
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Solves `x·A = b` (unknowns multiply from the left).
pub fn solve_left(a: &GrassmannMatrix, b: &[GrassmannValue]) -> Result<Vec<GrassmannValue>, GrassmannError> {
    check_rhs(a, b)?;
    let inv0 = a.body_inverse()?;
    let soul = a.soul();
    let body_solve = |rhs: &[GrassmannValue]| -> Vec<GrassmannValue> {
        (0..a.dim)
            .map(|c| {
                let mut acc = GrassmannValue::zero(a.q);
                for (r, v) in rhs.iter().enumerate() {
                    acc += &v.scale(inv0[(r, c)]);
                }
                acc
            })
            .collect()
    };
    let mut x = body_solve(b);
    for _ in 0..=a.q {
        let xn = soul.apply_left(&x);
        let rhs: Vec<GrassmannValue> = b.iter().zip(&xn).map(|(bi, ni)| bi - ni).collect();
        let next = body_solve(&rhs);
        if next == x {
            break;
        }
        x = next;
    }
    Ok(x)
}

fn check_rhs(a: &GrassmannMatrix, b: &[GrassmannValue]) -> Result<(), GrassmannError> {
    if b.len() != a.dim {
        return Err(GrassmannError::NotSquare);
    }
    for v in b {
        if v.q() != a.q {
            return Err(GrassmannError::DimensionMismatch { left: a.q, right: v.q() });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gv(s: &str, q: usize) -> GrassmannValue {
        GrassmannValue::parse(s, q).unwrap()
    }

    #[test]
    fn addition_examples() {
        assert!((&gv("e[1]", 2) + &gv("-e[1]", 2)).is_zero());
        assert_eq!(&gv("1", 2) + &gv("e[1,2]", 2), gv("1 + e[1,2]", 2));
        assert_eq!(&gv("2*e[1] + e[2]", 2) + &gv("e[1]", 2), gv("3*e[1] + e[2]", 2));
        assert!(matches!(gv("1", 2).checked_add(&gv("1", 3)), Err(GrassmannError::DimensionMismatch { .. })));
    }

    #[test]
    fn product_signs() {
        let e1 = GrassmannValue::generator(2, 1);
        let e2 = GrassmannValue::generator(2, 2);
        assert_eq!(&e1 * &e2, gv("e[1,2]", 2));
        assert_eq!(&e2 * &e1, gv("-e[1,2]", 2));
        assert_eq!(&gv("1 + e[1]", 2) * &gv("1 - e[1]", 2), GrassmannValue::one(2));
        assert!(gv("1", 2).checked_mul(&gv("1", 1)).is_err());
    }

    #[test]
    fn body_soul_and_projections() {
        let a = gv("3 + e[1] + e[1,2]", 2);
        assert_eq!(a.body(), 3.0);
        assert_eq!(a.soul(), gv("e[1] + e[1,2]", 2));
        assert_eq!(a.degree_project(1), gv("e[1]", 2));
        assert_eq!(gv("e[1] + e[1,2]", 2).parity(), Parity::Mixed);
        assert_eq!(gv("e[1,2]", 2).parity(), Parity::Even);
        assert_eq!(gv("e[2]", 2).parity(), Parity::Odd);
    }

    #[test]
    fn left_derivative_examples() {
        let e12 = gv("e[1,2]", 2);
        assert_eq!(e12.left_derivative(1).unwrap(), gv("e[2]", 2));
        assert_eq!(e12.left_derivative(2).unwrap(), gv("-e[1]", 2));
        assert!(gv("5", 2).left_derivative(1).unwrap().is_zero());
        assert!(gv("5", 2).left_derivative(3).is_err());
    }

    #[test]
    fn inversion_examples() {
        assert_eq!(gv("2", 2).invert().unwrap(), gv("0.5", 2));
        assert_eq!(gv("1 + e[1,2]", 2).invert().unwrap(), gv("1 - e[1,2]", 2));
        let a = gv("2 + e[1] + e[2]", 2);
        let inv = a.invert().unwrap();
        assert_eq!(inv, gv("0.5 - 0.25*e[1] - 0.25*e[2]", 2));
        assert_eq!(&a * &inv, GrassmannValue::one(2));
        assert!(matches!(gv("e[1]", 2).invert(), Err(GrassmannError::NotInvertible)));
    }

    #[test]
    fn solve_examples() {
        let id = GrassmannMatrix::identity(2, 2);
        let b = vec![gv("1 + e[1]", 2), gv("e[1,2]", 2)];
        assert_eq!(solve(&id, &b).unwrap(), b);

        let a = GrassmannMatrix::from_rows(2, vec![vec![gv("1 + e[1,2]", 2)]]).unwrap();
        assert_eq!(solve(&a, &[GrassmannValue::one(2)]).unwrap(), vec![gv("1 - e[1,2]", 2)]);

        let singular = GrassmannMatrix::from_rows(2, vec![vec![gv("e[1]", 2)]]).unwrap();
        assert!(matches!(solve(&singular, &[GrassmannValue::one(2)]), Err(GrassmannError::SingularBody)));
    }

    #[test]
    fn render_and_parse() {
        let a = gv("3 - 2*e[2] + 0.5*e[1,2]", 2);
        assert_eq!(a.to_string(), "3 - 2*e[2] + 0.5*e[1,2]");
        assert_eq!(gv(&a.to_string(), 2), a);
        assert_eq!(gv("e[2,1]", 2), gv("-e[1,2]", 2));
        assert_eq!(GrassmannValue::zero(3).to_string(), "0");
        assert!(GrassmannValue::parse("e[1,1]", 2).is_err());
        assert!(GrassmannValue::parse("e[3]", 2).is_err());
        assert!(GrassmannValue::parse("2 3", 2).is_err());
        assert_eq!("1e-3*e[2]".parse::<GrassmannValue>().unwrap().coefficient(MultiIndex::generator(2)), 1e-3);
    }

    #[test]
    fn multi_index_order() {
        let a = MultiIndex::from_sorted(&[1, 2], 3).unwrap();
        let b = MultiIndex::from_sorted(&[1, 3], 3).unwrap();
        let c = MultiIndex::from_sorted(&[2, 3], 3).unwrap();
        let d = MultiIndex::generator(3);
        assert!(a < b && b < c && d < a);
        assert!(MultiIndex::from_sorted(&[2, 1], 3).is_err());
    }
}
