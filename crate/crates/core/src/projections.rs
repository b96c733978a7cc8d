//! Random projections shared by every layer, and the reshaping helpers that
//! turn runs of `h` position vectors into single rows.
//!
//! All batches are row-major: row `r` holds position `r`.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{param, shape, Result};
use crate::real::Real;
use crate::rng::{self, Domain};

/// A `k × w` batch of position vectors.
pub type SequenceBatch<F = f64> = Array2<F>;

/// Per-layer key projections `W_V` (`d × d/h`, entries `N(0, 1/d)`) and
/// sequence projections `Prj` (`h·d × d`, entries `N(0, 1/(h·d))`).
///
/// A unit vector maps through `W_V` to squared norm about `1/h`, so `h`
/// concatenated blocks form a key of norm about one; a concatenation of `h`
/// unit codes maps through `Prj` to a code of norm about one.
#[derive(Debug, Clone)]
pub struct ProjectionSet<F: Real = f64> {
    h: usize,
    l: usize,
    d: usize,
    seed: u64,
    wv: Vec<Array2<F>>,
    prj: Vec<Array2<F>>,
}

fn gaussian_matrix<F: Real>(rows: usize, cols: usize, std: f64, seed: u64, domain: Domain, index: u64) -> Array2<F> {
    let mut out = Array2::<F>::zeros((rows, cols));
    let mut buf = vec![0.0f64; cols];
    for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        rng::gaussian_row(seed, domain, index, r as u64, std, &mut buf);
        for (dst, &src) in row.iter_mut().zip(&buf) {
            *dst = F::from_f64(src);
        }
    }
    out
}

impl<F: Real> ProjectionSet<F> {
    /// Draws `l` independent pairs of matrices. Layer `i` uses stream index
    /// `i`, so a deeper set extends a shallower one with the same seed.
    pub fn build(h: usize, l: usize, d: usize, seed: u64) -> Result<Self> {
        if h < 1 || l < 1 {
            return Err(param(format!("need h >= 1 and l >= 1, got h={h}, l={l}")));
        }
        if d < 2 || d % h != 0 {
            return Err(param(format!("dimension {d} must be >= 2 and divisible by h={h}")));
        }
        let dh = d / h;
        let wv_std = 1.0 / (d as f64).sqrt();
        let prj_std = 1.0 / ((h * d) as f64).sqrt();
        let mut wv = Vec::with_capacity(l);
        let mut prj = Vec::with_capacity(l);
        for i in 1..=l as u64 {
            wv.push(gaussian_matrix(d, dh, wv_std, seed, Domain::KeyProjection, i));
            prj.push(gaussian_matrix(h * d, d, prj_std, seed, Domain::SequenceProjection, i));
        }
        Ok(ProjectionSet { h, l, d, seed, wv, prj })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn index(&self, layer: usize) -> Result<usize> {
        if layer < 1 || layer > self.l {
            return Err(param(format!("layer {layer} outside 1..={}", self.l)));
        }
        Ok(layer - 1)
    }

    /// `W_V` of `layer` (1-based).
    pub fn wv(&self, layer: usize) -> Result<&Array2<F>> {
        Ok(&self.wv[self.index(layer)?])
    }

    /// `Prj` of `layer` (1-based).
    pub fn prj(&self, layer: usize) -> Result<&Array2<F>> {
        Ok(&self.prj[self.index(layer)?])
    }

    /// Projects every row of a `k × d` batch to width `d/h`.
    pub fn apply_wv(&self, batch: ArrayView2<'_, F>, layer: usize) -> Result<SequenceBatch<F>> {
        let w = self.wv(layer)?;
        if batch.ncols() != self.d {
            return Err(shape(format!("key projection expects width {}, got {}", self.d, batch.ncols())));
        }
        Ok(batch.dot(w))
    }

    /// Maps every row of a `k × h·d` flattened batch to a width-`d` code.
    pub fn apply_prj(&self, flat: ArrayView2<'_, F>, layer: usize) -> Result<SequenceBatch<F>> {
        let p = self.prj(layer)?;
        if flat.ncols() != self.h * self.d {
            return Err(shape(format!(
                "sequence projection expects width {}, got {}",
                self.h * self.d,
                flat.ncols()
            )));
        }
        Ok(flat.dot(p))
    }
}

/// Reshapes `k × w` into `k/h × w·h`; output row `r` concatenates input rows
/// `r·h .. r·h+h`.
pub fn flat_h<F: Real>(batch: ArrayView2<'_, F>, h: usize) -> Result<SequenceBatch<F>> {
    let (k, w) = batch.dim();
    if h < 1 || k % h != 0 {
        return Err(shape(format!("cannot group {k} rows into blocks of {h}")));
    }
    let rows: Vec<F> = batch.iter().copied().collect();
    Ok(Array2::from_shape_vec((k / h, w * h), rows).expect("row-major reshape"))
}

/// Inverse of [`flat_h`]: splits each row of `k × w·h` into `h` rows.
pub fn unflat_h<F: Real>(batch: ArrayView2<'_, F>, h: usize) -> Result<SequenceBatch<F>> {
    let (k, w) = batch.dim();
    if h < 1 || w % h != 0 {
        return Err(shape(format!("cannot split width {w} into {h} blocks")));
    }
    let rows: Vec<F> = batch.iter().copied().collect();
    Ok(Array2::from_shape_vec((k * h, w / h), rows).expect("row-major reshape"))
}

/// From the `m+1` token vectors of a window, the vector that follows each
/// aligned chunk of `h^layer` tokens: rows `(k+1)·h^layer` for
/// `k = 0 .. m/h^layer`.
pub fn sel_next<F: Real>(tokens: ArrayView2<'_, F>, layer: usize, h: usize) -> Result<SequenceBatch<F>> {
    if h < 1 || layer < 1 {
        return Err(param(format!("need h >= 1 and layer >= 1, got h={h}, layer={layer}")));
    }
    let span = h
        .checked_pow(layer as u32)
        .ok_or_else(|| param("chunk length overflows"))?;
    let m = tokens.nrows().saturating_sub(1);
    if m < span || m % span != 0 {
        return Err(shape(format!(
            "window of {} rows cannot be split into chunks of {span} plus a next token",
            tokens.nrows()
        )));
    }
    Ok(tokens.slice(s![span..;span, ..]).to_owned())
}
