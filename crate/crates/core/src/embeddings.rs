//! Token vectors: seeded Gaussian unit rows, one per vocabulary entry, and
//! calculators for how many nearly orthogonal vectors a dimension can host.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::error::{param, MemoError, Result};
use crate::real::Real;
use crate::rng::{self, Domain};
use crate::TokenId;

/// `n × d` matrix whose row `t` is the vector of token `t`.
///
/// Entries are drawn i.i.d. from `N(0, 1/d)` and every row is then scaled to
/// unit L2 norm, so self-dots are exactly one and cross-dots concentrate
/// around zero with spread `1/sqrt(d)`.
#[derive(Debug, Clone)]
pub struct EmbeddingTable<F: Real = f64> {
    n: usize,
    d: usize,
    seed: u64,
    rows: Array2<F>,
}

impl<F: Real> EmbeddingTable<F> {
    pub fn build(n: usize, d: usize, seed: u64) -> Result<Self> {
        if n < 1 {
            return Err(param("embedding table needs at least one token"));
        }
        if d < 2 {
            return Err(param(format!("embedding dimension must be >= 2, got {d}")));
        }
        let std = 1.0 / (d as f64).sqrt();
        let mut rows = Array2::<F>::zeros((n, d));
        let mut buf = vec![0.0f64; d];
        for (t, mut row) in rows.axis_iter_mut(Axis(0)).enumerate() {
            rng::gaussian_row(seed, Domain::Embedding, 0, t as u64, std, &mut buf);
            let norm = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (dst, src) in row.iter_mut().zip(&buf) {
                *dst = F::from_f64(src / norm);
            }
        }
        Ok(EmbeddingTable { n, d, seed, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> &Array2<F> {
        &self.rows
    }

    fn check(&self, t: TokenId) -> Result<usize> {
        let i = t as usize;
        if i >= self.n {
            return Err(MemoError::Vocabulary(format!(
                "token id {t} outside vocabulary of {} tokens",
                self.n
            )));
        }
        Ok(i)
    }

    pub fn row(&self, t: TokenId) -> Result<ArrayView1<'_, F>> {
        Ok(self.rows.row(self.check(t)?))
    }

    /// Stacks the vectors of `tokens` into a `tokens.len() × d` matrix.
    pub fn embed(&self, tokens: &[TokenId]) -> Result<Array2<F>> {
        let mut out = Array2::<F>::zeros((tokens.len(), self.d));
        for (mut dst, &t) in out.axis_iter_mut(Axis(0)).zip(tokens) {
            dst.assign(&self.rows.row(self.check(t)?));
        }
        Ok(out)
    }

    /// Sum of the vectors of every token in `bag`, added in the order given.
    pub fn bag_vector(&self, bag: &[TokenId]) -> Result<Array1<F>> {
        let mut acc = Array1::<F>::zeros(self.d);
        for &t in bag {
            acc.zip_mut_with(&self.rows.row(self.check(t)?), |a, &b| *a = *a + b);
        }
        Ok(acc)
    }

    /// Approximate multiplicity of `query` in `bag`: the dot of the query
    /// vector with the bag vector.
    pub fn bag_count(&self, bag: &[TokenId], query: TokenId) -> Result<f64> {
        let q = self.row(query)?;
        let v = self.bag_vector(bag)?;
        Ok(q.dot(&v).as_f64())
    }

    /// Scores every token against `v`: `rows · v`.
    pub fn decode(&self, v: ArrayView1<'_, F>) -> Array1<F> {
        self.rows.dot(&v)
    }
}

/// Position of the best score among `scores[first..]`.
///
/// Scores within `1e3 · eps · max(1, |best|)` of the best count as ties and
/// go to the lowest index, so an empty memory always answers the same way.
pub fn argmax_from<F: Real>(scores: ArrayView1<'_, F>, first: usize) -> Option<usize> {
    let tail = scores.slice(ndarray::s![first..]);
    let best = tail.iter().map(|s| s.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return None;
    }
    let tol = 1e3 * F::epsilon().as_f64() * best.abs().max(1.0);
    tail.iter().position(|s| s.as_f64() >= best - tol).map(|i| i + first)
}

/// Builds a 64-bit table.
pub fn build_table(n: usize, d: usize, seed: u64) -> Result<EmbeddingTable<f64>> {
    EmbeddingTable::build(n, d, seed)
}

/// Smallest `d` with `d >= 4 (eps^2/2 - eps^3/3)^-1 ln m`, the dimension the
/// Johnson-Lindenstrauss lemma asks for to embed `m` points with distortion
/// `eps`.
pub fn jll_min_dimension(epsilon: f64, m: u64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(param(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if m < 2 {
        return Err(param(format!("point count must be >= 2, got {m}")));
    }
    let denom = epsilon * epsilon / 2.0 - epsilon.powi(3) / 3.0;
    let bound = 4.0 * (m as f64).ln() / denom;
    Ok(bound.ceil() as usize)
}

/// Largest count the capacity bound may report before saturating.
pub const NOV_CAPACITY_MAX: u64 = u64::MAX;

/// Number of nearly orthogonal unit vectors `R^d` can host at tolerance
/// `eps`: `floor(exp(8 (eps^2 - 4/3 eps^3) d))`, saturating at
/// [`NOV_CAPACITY_MAX`].
pub fn nov_capacity(epsilon: f64, d: usize) -> Result<u64> {
    if d < 1 {
        return Err(param("dimension must be >= 1"));
    }
    let rate = epsilon * epsilon - 4.0 / 3.0 * epsilon.powi(3);
    if !(epsilon > 0.0) || !(rate > 0.0) {
        return Err(param(format!(
            "epsilon must lie in (0, 3/4) for a positive exponent, got {epsilon}"
        )));
    }
    let exponent = 8.0 * rate * d as f64;
    let bound = exponent.exp();
    if !bound.is_finite() || bound >= NOV_CAPACITY_MAX as f64 {
        return Ok(NOV_CAPACITY_MAX);
    }
    Ok(bound.floor() as u64)
}

/// Failure probability `theta = 2/m^2 - 1/m^4` of a set of `m` nearly
/// orthogonal vectors.
pub fn theta_bound(m: u64) -> f64 {
    let m = m as f64;
    2.0 / (m * m) - 1.0 / (m * m * m * m)
}

/// Per-vector failure probability `tau = 1/m^2`.
pub fn tau_bound(m: u64) -> f64 {
    let m = m as f64;
    1.0 / (m * m)
}

/// Outcome of an empirical near-orthogonality check.
#[derive(Debug, Clone, PartialEq)]
pub struct NovCheckReport {
    pub m: u64,
    pub epsilon: f64,
    pub pairs_tested: u64,
    pub violation_fraction: f64,
    pub theta_bound: f64,
    /// True when every distinct pair was enumerated once, false when pairs
    /// were drawn with replacement.
    pub exhaustive: bool,
}

/// Counts the distinct-row pairs of `table` whose dot magnitude reaches
/// `epsilon`.
///
/// When `sample_pairs` covers all `n(n-1)/2` pairs they are enumerated;
/// otherwise `sample_pairs` pairs are drawn with replacement using `seed`.
pub fn nov_check<F: Real>(
    table: &EmbeddingTable<F>,
    epsilon: f64,
    sample_pairs: u64,
    seed: u64,
) -> Result<NovCheckReport> {
    let n = table.n();
    if n < 2 {
        return Err(param("orthogonality check needs at least two vectors"));
    }
    if sample_pairs < 1 {
        return Err(param("orthogonality check needs at least one pair"));
    }
    if !(epsilon > 0.0) {
        return Err(param(format!("epsilon must be positive, got {epsilon}")));
    }
    let rows = table.rows();
    let violates = |i: usize, j: usize| rows.row(i).dot(&rows.row(j)).as_f64().abs() >= epsilon;
    let total = n as u64 * (n as u64 - 1) / 2;
    let (tested, violations, exhaustive) = if total <= sample_pairs {
        let mut v = 0u64;
        for i in 0..n {
            for j in (i + 1)..n {
                v += violates(i, j) as u64;
            }
        }
        (total, v, true)
    } else {
        let mut rng = rng::seeded(seed, Domain::PairSampling, 0);
        let mut v = 0u64;
        for _ in 0..sample_pairs {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            v += violates(i, j) as u64;
        }
        (sample_pairs, v, false)
    };
    Ok(NovCheckReport {
        m: n as u64,
        epsilon,
        pairs_tested: tested,
        violation_fraction: violations as f64 / tested as f64,
        theta_bound: theta_bound(n as u64),
        exhaustive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_is_exactly_unit() {
        let t = build_table(1, 8, 0).unwrap();
        let norm = t.rows().row(0).dot(&t.rows().row(0)).sqrt();
        assert!((norm - 1.0).abs() < 1e-15, "{norm}");
    }

    #[test]
    fn rejects_degenerate_shapes() {
        assert!(matches!(build_table(0, 8, 0), Err(MemoError::Parameter(_))));
        assert!(matches!(build_table(4, 1, 0), Err(MemoError::Parameter(_))));
    }

    #[test]
    fn all_rows_unit_norm() {
        let t = build_table(200, 64, 3).unwrap();
        for row in t.rows().rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rebuild_is_bit_identical_and_prefix_stable() {
        let a = build_table(50, 32, 11).unwrap();
        let b = build_table(50, 32, 11).unwrap();
        assert_eq!(a.rows(), b.rows());
        let small = build_table(10, 32, 11).unwrap();
        assert_eq!(small.rows(), &a.rows().slice(ndarray::s![..10, ..]));
    }

    #[test]
    fn two_tokens_nearly_orthogonal_at_1024() {
        let t = build_table(2, 1024, 7).unwrap();
        let dot = t.rows().row(0).dot(&t.rows().row(1));
        assert!(dot.abs() < 0.1, "{dot}");
    }

    #[test]
    fn empty_bag_counts_zero() {
        let t = build_table(4, 16, 0).unwrap();
        assert_eq!(t.bag_count(&[], 2).unwrap(), 0.0);
    }

    #[test]
    fn bag_counts_multiplicity() {
        let t = build_table(8, 1024, 5).unwrap();
        let c = t.bag_count(&[3, 3, 3], 3).unwrap();
        assert!((c - 3.0).abs() <= 0.3, "{c}");
        let c = t.bag_count(&[3, 3, 5], 5).unwrap();
        assert!((c - 1.0).abs() <= 0.2, "{c}");
    }

    #[test]
    fn unknown_token_is_a_vocabulary_error() {
        let t = build_table(4, 16, 0).unwrap();
        assert!(matches!(t.bag_count(&[1], 9), Err(MemoError::Vocabulary(_))));
        assert!(matches!(t.bag_count(&[9], 1), Err(MemoError::Vocabulary(_))));
    }

    #[test]
    fn jll_bound_values() {
        assert_eq!(jll_min_dimension(0.1, 100_000).unwrap(), 9869);
        assert_eq!(jll_min_dimension(0.5, 2).unwrap(), 34);
        assert!(jll_min_dimension(0.1, 1_000_000).unwrap() > 9869);
        assert!(jll_min_dimension(0.0, 10).is_err());
        assert!(jll_min_dimension(1.0, 10).is_err());
        assert!(jll_min_dimension(0.5, 1).is_err());
    }

    #[test]
    fn nov_capacity_values() {
        // exp(8 * (0.01 - 0.004/3) * 100) = exp(6.9333...) = 1025.908
        assert_eq!(nov_capacity(0.1, 100).unwrap(), 1025);
        assert!(nov_capacity(0.1, 0).is_err());
        assert!(nov_capacity(0.75, 10).is_err());
        assert!(nov_capacity(-0.1, 10).is_err());
        assert_eq!(nov_capacity(0.5, 1_000_000).unwrap(), NOV_CAPACITY_MAX);
    }

    #[test]
    fn theta_formula() {
        assert_eq!(theta_bound(1000), 2.0 / 1e6 - 1.0 / 1e12);
        assert_eq!(tau_bound(10), 0.01);
    }

    #[test]
    fn nov_check_excludes_self_pairs() {
        // Two rows: the only distinct pair is (0, 1); asking for more pairs
        // than exist enumerates it once.
        let t = build_table(2, 64, 1).unwrap();
        let r = nov_check(&t, 0.9, 10, 0).unwrap();
        assert!(r.exhaustive);
        assert_eq!(r.pairs_tested, 1);
        assert_eq!(r.violation_fraction, 0.0);
        // A tolerance below the observed dot flags that single pair.
        let dot = t.rows().row(0).dot(&t.rows().row(1)).abs();
        let r = nov_check(&t, dot * 0.5, 10, 0).unwrap();
        assert_eq!(r.violation_fraction, 1.0);
    }

    #[test]
    fn nov_check_sampling_is_deterministic() {
        let t = build_table(100, 32, 2).unwrap();
        let a = nov_check(&t, 0.3, 1000, 9).unwrap();
        let b = nov_check(&t, 0.3, 1000, 9).unwrap();
        assert_eq!(a, b);
        assert!(!a.exhaustive);
        assert!(a.pairs_tested <= 100 * 99 / 2);
        assert!(nov_check(&build_table(1, 8, 0).unwrap(), 0.1, 10, 0).is_err());
    }
}
