//! Correlation matrix memory: a `dk × dv` accumulator of key/value outer
//! products, and the diagonal gates that keep intermediate memories free of
//! duplicates.

use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView2, Axis};

use crate::error::{shape, Result};
use crate::real::Real;
use crate::projections::SequenceBatch;

/// Per-row multipliers applied while storing. Entries are 0 or `1/f` for an
/// integer `f >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDiagonal {
    pub entries: Vec<f64>,
}

impl GateDiagonal {
    pub fn ones(n: usize) -> Self {
        GateDiagonal { entries: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entrywise product, the combined gate `D·F`.
    pub fn product(&self, other: &GateDiagonal) -> Result<GateDiagonal> {
        if self.len() != other.len() {
            return Err(shape(format!("gate lengths {} and {} differ", self.len(), other.len())));
        }
        Ok(GateDiagonal {
            entries: self.entries.iter().zip(&other.entries).map(|(a, b)| a * b).collect(),
        })
    }
}

/// `1 - clamp(round(v), 0, 1)` with rounding half away from zero.
pub fn distill_entry(v: f64) -> f64 {
    1.0 - v.round().clamp(0.0, 1.0)
}

/// `1 / max(1, round(v))` with rounding half away from zero.
pub fn frequency_entry(v: f64) -> f64 {
    1.0 / v.round().max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMemory<F: Real = f64> {
    dk: usize,
    dv: usize,
    mat: Array2<F>,
    stored_count: u64,
}

impl<F: Real> CorrelationMemory<F> {
    pub fn new(dk: usize, dv: usize) -> Self {
        CorrelationMemory { dk, dv, mat: Array2::zeros((dk, dv)), stored_count: 0 }
    }

    /// Wraps an existing matrix, as read back from a model file.
    pub fn from_matrix(mat: Array2<F>) -> Self {
        let (dk, dv) = mat.dim();
        CorrelationMemory { dk, dv, mat, stored_count: 0 }
    }

    pub fn dk(&self) -> usize {
        self.dk
    }

    pub fn dv(&self) -> usize {
        self.dv
    }

    pub fn matrix(&self) -> &Array2<F> {
        &self.mat
    }

    pub fn stored_count(&self) -> u64 {
        self.stored_count
    }

    fn check_keys(&self, keys: &ArrayView2<'_, F>) -> Result<()> {
        if keys.ncols() != self.dk {
            return Err(shape(format!("key width {} does not match memory ({})", keys.ncols(), self.dk)));
        }
        Ok(())
    }

    fn check_pairs(&self, keys: &ArrayView2<'_, F>, values: &ArrayView2<'_, F>) -> Result<()> {
        self.check_keys(keys)?;
        if values.ncols() != self.dv {
            return Err(shape(format!("value width {} does not match memory ({})", values.ncols(), self.dv)));
        }
        if keys.nrows() != values.nrows() {
            return Err(shape(format!("{} keys but {} values", keys.nrows(), values.nrows())));
        }
        Ok(())
    }

    /// `mat += Σ_r gate_r · key_r ⊗ value_r`. Rows whose gate is zero are
    /// skipped and leave `mat` bit-identical.
    pub fn store(
        &mut self,
        keys: ArrayView2<'_, F>,
        values: ArrayView2<'_, F>,
        gate: Option<&GateDiagonal>,
    ) -> Result<()> {
        self.check_pairs(&keys, &values)?;
        match gate {
            None => {
                general_mat_mul(F::one(), &keys.t(), &values, F::one(), &mut self.mat);
                self.stored_count += keys.nrows() as u64;
            }
            Some(g) => {
                if g.len() != keys.nrows() {
                    return Err(shape(format!("gate has {} entries for {} keys", g.len(), keys.nrows())));
                }
                let live: Vec<usize> = (0..g.len()).filter(|&r| g.entries[r] != 0.0).collect();
                if live.is_empty() {
                    return Ok(());
                }
                let mut k = keys.select(Axis(0), &live);
                for (mut row, &r) in k.axis_iter_mut(Axis(0)).zip(&live) {
                    let w = g.entries[r];
                    if w != 1.0 {
                        let w = F::from_f64(w);
                        row.mapv_inplace(|x| x * w);
                    }
                }
                let v = values.select(Axis(0), &live);
                general_mat_mul(F::one(), &k.t(), &v, F::one(), &mut self.mat);
                self.stored_count += live.len() as u64;
            }
        }
        Ok(())
    }

    /// `mat -= Σ_r key_r ⊗ value_r`. Forgetting a pair that was never stored
    /// leaves a negative association behind.
    pub fn forget(&mut self, keys: ArrayView2<'_, F>, values: ArrayView2<'_, F>) -> Result<()> {
        self.check_pairs(&keys, &values)?;
        general_mat_mul(-F::one(), &keys.t(), &values, F::one(), &mut self.mat);
        self.stored_count = self.stored_count.saturating_sub(keys.nrows() as u64);
        Ok(())
    }

    /// Row `r` of the result is `key_r · mat`.
    pub fn retrieve(&self, keys: ArrayView2<'_, F>) -> Result<SequenceBatch<F>> {
        self.check_keys(&keys)?;
        Ok(keys.dot(&self.mat))
    }

    /// Zero for every key whose pattern, among `new_codes`, is already
    /// stored; one otherwise. Evaluated as `key_r · (mat · x̄)` with `x̄` the
    /// sum of `new_codes`.
    pub fn distiller(&self, keys: ArrayView2<'_, F>, new_codes: ArrayView2<'_, F>) -> Result<GateDiagonal> {
        self.check_pairs(&keys, &new_codes)?;
        let xbar: Array1<F> = new_codes.sum_axis(Axis(0));
        let z = self.mat.dot(&xbar);
        let scores = keys.dot(&z);
        Ok(GateDiagonal { entries: scores.iter().map(|s| distill_entry(s.as_f64())).collect() })
    }
}

/// `1 / max(1, round(code_r · x̄))`: a pattern occurring `f` times in the
/// batch receives `1/f` per occurrence.
pub fn inv_frequency<F: Real>(new_codes: ArrayView2<'_, F>) -> Result<GateDiagonal> {
    if new_codes.nrows() == 0 {
        return Err(shape("frequency gate needs at least one code"));
    }
    let xbar: Array1<F> = new_codes.sum_axis(Axis(0));
    let counts = new_codes.dot(&xbar);
    Ok(GateDiagonal { entries: counts.iter().map(|c| frequency_entry(c.as_f64())).collect() })
}
