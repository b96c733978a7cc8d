//! Capacity experiments.
//!
//! `exp1` fills a single rectangular memory with random sequence/next-token
//! pairs batch by batch until recall drops below a threshold. `exp2` feeds
//! stacked models a random text salted with decoy words and tracks recall
//! of the stored windows.

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::cmm::CorrelationMemory;
use crate::corpus::{gen_decoy_text, DecoyTextSpec, Pair, UniformPairStream};
use crate::embeddings::{argmax_from, EmbeddingTable};
use crate::error::{param, Result};
use crate::memo::{AnchorSet, MemoModel, MemoParams};
use crate::real::Real;
use crate::rng::{self, Domain};
use crate::TokenId;

/// Seed of one grid point: the run seed mixed with the point's coordinates.
pub fn point_seed(seed: u64, coords: &[usize]) -> u64 {
    coords.iter().fold(rng::derive_seed(seed, Domain::Experiment, coords.len() as u64), |acc, &c| {
        rng::derive_seed(acc, Domain::Experiment, c as u64)
    })
}

/// Worker count from `MEMO_THREADS`; unset or 0 means one per core.
pub fn threads_from_env() -> usize {
    std::env::var("MEMO_THREADS").ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0)
}

fn run_grid<P: Sync, R: Send>(points: &[P], threads: usize, f: impl Fn(&P) -> Result<R> + Sync) -> Result<Vec<R>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| param(format!("cannot start workers: {e}")))?;
    pool.install(|| points.par_iter().map(&f).collect())
}

/// Least-squares line `y = slope·x + intercept` and its R².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(param("a line fit needs at least two paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(param("a line fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit { slope, intercept: my - slope * mx, r2 })
}

/// How many pairs each exp1 step stores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchSize {
    Fixed(usize),
    /// `max(1, NoP / k)`: the same number of steps covers every size.
    PerParameters(usize),
}

impl BatchSize {
    fn resolve(self, nop: usize) -> usize {
        match self {
            BatchSize::Fixed(b) => b,
            BatchSize::PerParameters(k) => (nop / k.max(1)).max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exp1Point {
    pub h: usize,
    pub d_h: usize,
    pub d: usize,
}

impl Exp1Point {
    /// Parameter count `h·d_h·d`.
    pub fn nop(&self) -> usize {
        self.h * self.d_h * self.d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp1Config {
    pub h: Vec<usize>,
    pub d_h: Vec<usize>,
    pub d: Vec<usize>,
    pub batch: BatchSize,
    pub threshold: f64,
    pub max_batches: usize,
    pub vocab_size: usize,
    /// Pairs per batch used to estimate accuracy; `None` uses whole batches.
    pub eval_sample: Option<usize>,
    /// Refuse points whose estimated footprint exceeds this many bytes.
    pub memory_budget: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Exp1Config {
            h: vec![2, 8, 32],
            d_h: vec![16, 64, 256],
            d: vec![512],
            batch: BatchSize::Fixed(1000),
            threshold: 0.9,
            max_batches: 50,
            vocab_size: 100_000,
            eval_sample: None,
            memory_budget: 4 << 30,
            threads: 0,
            seed: 0,
        }
    }
}

impl Exp1Config {
    pub fn points(&self) -> Vec<Exp1Point> {
        let mut pts = Vec::new();
        for &d in &self.d {
            for &h in &self.h {
                for &d_h in &self.d_h {
                    pts.push(Exp1Point { h, d_h, d });
                }
            }
        }
        pts
    }

    /// Bytes held by the memory and both token tables of `p`.
    pub fn footprint<F: Real>(&self, p: &Exp1Point) -> usize {
        (p.nop() + self.vocab_size * (p.d_h + p.d)) * F::WIDTH as usize
    }
}

/// One memory of `h·d_h × d`: sequences are keyed by their `h` input
/// vectors (width `d_h`) concatenated and scaled to unit norm, values are
/// output vectors of width `d`.
#[derive(Debug, Clone)]
pub struct CapacityProbe<F: Real = f64> {
    h: usize,
    input: EmbeddingTable<F>,
    output: EmbeddingTable<F>,
    mem: CorrelationMemory<F>,
}

impl<F: Real> CapacityProbe<F> {
    pub fn new(vocab_size: usize, p: Exp1Point, seed: u64) -> Result<Self> {
        Ok(CapacityProbe {
            h: p.h,
            input: EmbeddingTable::build(vocab_size, p.d_h, rng::derive_seed(seed, Domain::Embedding, 1))?,
            output: EmbeddingTable::build(vocab_size, p.d, rng::derive_seed(seed, Domain::Embedding, 2))?,
            mem: CorrelationMemory::new(p.h * p.d_h, p.d),
        })
    }

    fn keys(&self, pairs: &[Pair]) -> Result<Array2<F>> {
        let toks: Vec<TokenId> = pairs.iter().flat_map(|p| p.tokens.iter().copied()).collect();
        let x = self.input.embed(&toks)?;
        let width = self.h * self.input.d();
        let mut k = x.into_shape_with_order((pairs.len(), width)).expect("row-major");
        let scale = F::from_f64(1.0 / (self.h as f64).sqrt());
        k.mapv_inplace(|v| v * scale);
        Ok(k)
    }

    pub fn store(&mut self, pairs: &[Pair]) -> Result<()> {
        let k = self.keys(pairs)?;
        let next: Vec<TokenId> = pairs.iter().map(|p| p.next).collect();
        let v = self.output.embed(&next)?;
        self.mem.store(k.view(), v.view(), None)
    }

    pub fn accuracy(&self, pairs: &[Pair]) -> Result<f64> {
        if pairs.is_empty() {
            return Err(param("accuracy needs a nonempty batch"));
        }
        let mut hits = 0;
        for chunk in pairs.chunks(256) {
            let out = self.mem.retrieve(self.keys(chunk)?.view())?;
            let scores = out.dot(&self.output.rows().t());
            for (row, p) in scores.axis_iter(Axis(0)).zip(chunk) {
                hits += (argmax_from(row, 0) == Some(p.next as usize)) as usize;
            }
        }
        Ok(hits as f64 / pairs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRow {
    pub h: usize,
    pub d_h: usize,
    pub d: usize,
    pub nop: usize,
    pub batch: usize,
    /// Pairs stored when the last passing step completed.
    pub capacity: usize,
    /// `(Acc(B_0) + Acc(B_i)) / 2` after each step, up to the first failure.
    pub trajectory: Vec<f64>,
    /// True when every step passed, so `capacity` is only a lower bound.
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityReport {
    pub rows: Vec<CapacityRow>,
}

impl CapacityReport {
    pub const CSV_HEADER: &'static str = "h,d_h,d,nop,capacity";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s += &format!("{},{},{},{},{}\n", r.h, r.d_h, r.d, r.nop, r.capacity);
        }
        s
    }

    /// Capacity against parameter count.
    pub fn fit(&self) -> Result<LinearFit> {
        let xs: Vec<f64> = self.rows.iter().map(|r| r.nop as f64).collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| r.capacity as f64).collect();
        linear_fit(&xs, &ys)
    }
}

/// Runs one grid point of exp1.
pub fn exp1_point<F: Real>(cfg: &Exp1Config, p: Exp1Point) -> Result<CapacityRow> {
    let seed = point_seed(cfg.seed, &[p.h, p.d_h, p.d]);
    let batch = cfg.batch.resolve(p.nop());
    let mut probe = CapacityProbe::<F>::new(cfg.vocab_size, p, seed)?;
    let mut stream = UniformPairStream::new(cfg.vocab_size, p.h, seed)?;
    let take = cfg.eval_sample.unwrap_or(batch).min(batch);
    let mut first: Option<Vec<Pair>> = None;
    let mut trajectory = Vec::new();
    let mut capacity = 0;
    let mut censored = true;
    for i in 0..cfg.max_batches {
        let b = stream.next_batch(batch)?;
        probe.store(&b)?;
        let b0 = first.get_or_insert_with(|| b[..take].to_vec());
        let stat = (probe.accuracy(b0)? + probe.accuracy(&b[..take])?) / 2.0;
        trajectory.push(stat);
        if stat > cfg.threshold {
            capacity = (i + 1) * batch;
        } else {
            censored = false;
            break;
        }
    }
    Ok(CapacityRow { h: p.h, d_h: p.d_h, d: p.d, nop: p.nop(), batch, capacity, trajectory, censored })
}

pub fn run_exp1<F: Real>(cfg: &Exp1Config) -> Result<CapacityReport> {
    if !(cfg.threshold.is_finite()) || cfg.max_batches < 1 || cfg.vocab_size < 2 {
        return Err(param("exp1 needs a finite threshold, at least one batch and two tokens"));
    }
    let points = cfg.points();
    if points.is_empty() {
        return Err(param("exp1 grid is empty"));
    }
    for p in &points {
        if p.h < 1 || p.d_h < 2 || p.d < 2 {
            return Err(param(format!("invalid exp1 point {p:?}")));
        }
        let need = cfg.footprint::<F>(p);
        if need > cfg.memory_budget {
            return Err(param(format!(
                "point h={} d_h={} d={} needs about {} MiB, over the {} MiB budget",
                p.h,
                p.d_h,
                p.d,
                need >> 20,
                cfg.memory_budget >> 20
            )));
        }
    }
    let rows = run_grid(&points, cfg.threads, |p| exp1_point::<F>(cfg, *p))?;
    Ok(CapacityReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exp2Point {
    pub d: usize,
    pub layers: usize,
    pub decoys: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp2Config {
    pub h: usize,
    pub layers: Vec<usize>,
    pub d: Vec<usize>,
    pub decoys: Vec<usize>,
    /// Windows stored per model.
    pub windows: usize,
    pub eval_every: usize,
    /// Stored windows sampled at each evaluation.
    pub eval_sample: usize,
    pub vocab_size: usize,
    /// Expected share of word slots taken by each decoy.
    pub occurrence_rate: f64,
    pub memory_budget: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Exp2Config {
            h: 4,
            layers: vec![1, 2, 3],
            d: vec![2048],
            decoys: vec![0, 20, 40],
            windows: 20_000,
            eval_every: 500,
            eval_sample: 200,
            vocab_size: 100_000,
            occurrence_rate: 0.005,
            memory_budget: 4 << 30,
            threads: 0,
            seed: 0,
        }
    }
}

impl Exp2Config {
    /// Points ordered by dimension, decoys, then depth.
    pub fn points(&self) -> Vec<Exp2Point> {
        let mut pts = Vec::new();
        for &d in &self.d {
            for &decoys in &self.decoys {
                for &layers in &self.layers {
                    pts.push(Exp2Point { d, layers, decoys });
                }
            }
        }
        pts
    }

    /// Bytes held by the memories, projections and token table of `p`.
    pub fn footprint<F: Real>(&self, p: &Exp2Point) -> usize {
        let d2 = p.d * p.d;
        let mems = (p.layers + 1) * d2;
        let proj = p.layers * (d2 / self.h + self.h * d2);
        (mems + proj + self.vocab_size * p.d) * F::WIDTH as usize
    }

    fn deepest(&self) -> usize {
        self.layers.iter().copied().max().unwrap_or(1)
    }

    /// The text shared by every depth at one `(d, decoys)`, and its window
    /// targets: one every `h` tokens, each with a full context for the
    /// deepest model.
    pub fn text(&self, p: &Exp2Point) -> Result<(Vec<TokenId>, Vec<usize>)> {
        let m = self.h.pow(self.deepest() as u32);
        let len = m + self.windows.saturating_sub(1) * self.h + 1;
        let mut spec = DecoyTextSpec::new(self.vocab_size, len, p.decoys, self.h, point_seed(self.seed, &[p.d, p.decoys]));
        spec.occurrence_rate = self.occurrence_rate;
        // Occurrences sit a full deepest window apart, so some model can
        // always see past the previous one.
        spec.min_gap = m;
        let text = gen_decoy_text(&spec)?.tokens;
        let targets = (0..self.windows).map(|k| m + k * self.h).collect();
        Ok((text, targets))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp2Row {
    pub d: usize,
    pub layers: usize,
    pub decoys: usize,
    pub windows: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp2Report {
    pub rows: Vec<Exp2Row>,
}

impl Exp2Report {
    pub const CSV_HEADER: &'static str = "d,layers,decoys,windows,accuracy";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            s += &format!("{},{},{},{},{:.6}\n", r.d, r.layers, r.decoys, r.windows, r.accuracy);
        }
        s
    }

    /// The accuracy curve of one point, in window order.
    pub fn curve(&self, d: usize, layers: usize, decoys: usize) -> Vec<&Exp2Row> {
        self.rows.iter().filter(|r| r.d == d && r.layers == layers && r.decoys == decoys).collect()
    }

    /// Accuracy at the largest window count of one point.
    pub fn final_accuracy(&self, d: usize, layers: usize, decoys: usize) -> Option<f64> {
        self.curve(d, layers, decoys).last().map(|r| r.accuracy)
    }
}

/// Runs one grid point of exp2 and returns its accuracy curve.
pub fn exp2_point<F: Real>(cfg: &Exp2Config, p: Exp2Point) -> Result<Vec<Exp2Row>> {
    let (text, targets) = cfg.text(&p)?;
    let params = MemoParams { h: cfg.h, l: p.layers, d: p.d, seed: point_seed(cfg.seed, &[p.d, p.layers, p.decoys]) };
    let mut model = MemoModel::<F>::with_vocab_size(cfg.vocab_size, params)?;
    let mut anchors = AnchorSet::new();
    let mut eval_rng = rng::seeded(point_seed(cfg.seed, &[p.d, p.layers, p.decoys]), Domain::Evaluation, 0);
    let mut rows = Vec::new();
    let step = cfg.eval_every.max(1);
    let mut done = 0;
    while done < targets.len() {
        let upto = (done + step).min(targets.len());
        model.ingest_windows(&text, &targets[done..upto], &mut anchors)?;
        done = upto;
        let picked: Vec<usize> = if cfg.eval_sample >= done {
            targets[..done].to_vec()
        } else {
            let mut idx = sample(&mut eval_rng, done, cfg.eval_sample).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| targets[i]).collect()
        };
        let accuracy = model.window_accuracy(&text, &picked)?;
        rows.push(Exp2Row { d: p.d, layers: p.layers, decoys: p.decoys, windows: done, accuracy });
    }
    Ok(rows)
}

pub fn run_exp2<F: Real>(cfg: &Exp2Config) -> Result<Exp2Report> {
    if cfg.h < 2 || cfg.windows < 1 || cfg.eval_sample < 1 || cfg.vocab_size < 2 {
        return Err(param("exp2 needs h >= 2, at least one window, one sampled window and two tokens"));
    }
    let points = cfg.points();
    if points.is_empty() {
        return Err(param("exp2 grid is empty"));
    }
    for p in &points {
        if p.layers < 1 || p.d % cfg.h != 0 {
            return Err(param(format!("invalid exp2 point {p:?}")));
        }
        let need = cfg.footprint::<F>(p);
        if need > cfg.memory_budget {
            return Err(param(format!(
                "point d={} layers={} needs about {} MiB, over the {} MiB budget",
                p.d,
                p.layers,
                need >> 20,
                cfg.memory_budget >> 20
            )));
        }
    }
    let curves = run_grid(&points, cfg.threads, |p| exp2_point::<F>(cfg, *p))?;
    Ok(Exp2Report { rows: curves.into_iter().flatten().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_of_a_line_is_exact() {
        let f = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn batch_size_scales() {
        assert_eq!(BatchSize::Fixed(1000).resolve(1 << 20), 1000);
        assert_eq!(BatchSize::PerParameters(512).resolve(1 << 14), 32);
        assert_eq!(BatchSize::PerParameters(512).resolve(10), 1);
    }

    #[test]
    fn budget_refusal_names_estimate() {
        let cfg = Exp1Config { memory_budget: 1 << 20, ..Exp1Config::default() };
        let err = run_exp1::<f64>(&cfg).unwrap_err();
        assert!(err.to_string().contains("MiB"));
    }

    #[test]
    fn csv_headers() {
        let r = CapacityReport { rows: vec![] };
        assert_eq!(r.to_csv(), "h,d_h,d,nop,capacity\n");
        let r = Exp2Report {
            rows: vec![Exp2Row { d: 8, layers: 1, decoys: 0, windows: 5, accuracy: 0.5 }],
        };
        assert_eq!(r.to_csv(), "d,layers,decoys,windows,accuracy\n8,1,0,5,0.500000\n");
    }
}
