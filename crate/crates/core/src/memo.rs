//! The stacked memorizing model.
//!
//! A model with `h` heads and `l` layers reads windows of `m = h^l` context
//! tokens. Layer `i` groups its input rows into blocks of `h`, keys each
//! block through `W_V`, and codes it through `Prj`; the code becomes a row of
//! the next layer's input. Every layer maps its block keys to codes in its
//! own memory `C^(i)` and to the embedding of the token that follows the
//! block in the shared memory `C^(last)`.
//!
//! Retrieval rebuilds the codes from the intermediate memories instead of
//! from `Prj`, sums the key of the final block at every layer, and reads
//! `C^(last)` once with that sum.

use std::collections::{HashMap, HashSet};

use ndarray::{Array2, Axis};

use crate::cmm::{distill_entry, frequency_entry, CorrelationMemory, GateDiagonal};
use crate::corpus::Vocabulary;
use crate::embeddings::EmbeddingTable;
use crate::error::{param, MemoError, Result};
use crate::projections::{flat_h, ProjectionSet};
use crate::real::Real;
use crate::single::{best_token, Prediction};
use crate::{TokenId, PAD};

/// Windows handled per batched pass.
const CHUNK: usize = 128;

/// Hyperparameters fixed at model creation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoParams {
    pub h: usize,
    pub l: usize,
    pub d: usize,
    pub seed: u64,
}

impl MemoParams {
    /// Window length `h^l`.
    pub fn window(&self) -> Result<usize> {
        (self.h as u32)
            .checked_pow(self.l as u32)
            .map(|m| m as usize)
            .filter(|&m| m >= 2)
            .ok_or_else(|| param(format!("h={} and l={} give no usable window", self.h, self.l)))
    }
}

/// Intermediate values of one layer while a single window is memorized.
#[derive(Debug, Clone)]
pub struct LayerTrace<F: Real = f64> {
    /// `X^(i)`: one row per input unit.
    pub inputs: Array2<F>,
    /// `I^(i)`: one key per block.
    pub keys: Array2<F>,
    /// `X^(i+1)`: one code per block.
    pub codes: Array2<F>,
    pub distiller: GateDiagonal,
    pub frequency: GateDiagonal,
    /// `D·F`, the gate applied to the store into `C^(i)`.
    pub gate: GateDiagonal,
}

/// Per-layer record of a memorized window; row counts shrink by `h` per
/// layer.
#[derive(Debug, Clone)]
pub struct WindowTrace<F: Real = f64> {
    pub layers: Vec<LayerTrace<F>>,
}

/// Blocks already written during one ingest, identified by layer and by
/// start position in the padded text.
#[derive(Debug, Clone, Default)]
pub struct AnchorSet {
    seen: HashSet<(usize, usize)>,
}

impl AnchorSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, layer: usize, pos: usize) -> bool {
        self.seen.insert((layer, pos))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Memorize,
    Forget,
}

/// Positions `t` of next tokens used as window targets when reading a text
/// of `len` tokens: every `t ≡ m (mod stride)` with `1 <= t < len`. Targets
/// below `m` have windows that start with padding.
pub fn window_targets(len: usize, m: usize, stride: usize) -> Result<Vec<usize>> {
    if stride < 1 {
        return Err(param("stride must be >= 1"));
    }
    if m < 1 {
        return Err(param("window must be >= 1"));
    }
    let first = 1 + (m - 1) % stride;
    Ok((first..len).step_by(stride).collect())
}

#[derive(Debug, Clone)]
pub struct MemoModel<F: Real = f64> {
    params: MemoParams,
    m: usize,
    vocab: Vocabulary,
    table: EmbeddingTable<F>,
    proj: ProjectionSet<F>,
    layers: Vec<CorrelationMemory<F>>,
    last: CorrelationMemory<F>,
}

impl<F: Real> MemoModel<F> {
    pub fn new(vocab: Vocabulary, params: MemoParams) -> Result<Self> {
        let d = params.d;
        let layers = (0..params.l).map(|_| CorrelationMemory::new(d, d)).collect();
        Self::from_parts(vocab, params, layers, CorrelationMemory::new(d, d))
    }

    /// Model over [`Vocabulary::numeric`] with `n` tokens.
    pub fn with_vocab_size(n: usize, params: MemoParams) -> Result<Self> {
        Self::new(Vocabulary::numeric(n)?, params)
    }

    /// Reassembles a model around existing memories; embeddings and
    /// projections are regenerated from the seed.
    pub fn from_parts(
        vocab: Vocabulary,
        params: MemoParams,
        layers: Vec<CorrelationMemory<F>>,
        last: CorrelationMemory<F>,
    ) -> Result<Self> {
        let m = params.window()?;
        if vocab.len() < 2 {
            return Err(param("vocabulary must hold a token besides padding"));
        }
        let d = params.d;
        if layers.len() != params.l
            || layers.iter().chain([&last]).any(|c| c.dk() != d || c.dv() != d)
        {
            return Err(param(format!("expected {} memories of {d}x{d} plus the last one", params.l)));
        }
        let table = EmbeddingTable::build(vocab.len(), d, params.seed)?;
        let proj = ProjectionSet::build(params.h, params.l, d, params.seed)?;
        Ok(MemoModel { params, m, vocab, table, proj, layers, last })
    }

    pub fn params(&self) -> MemoParams {
        self.params
    }

    pub fn h(&self) -> usize {
        self.params.h
    }

    pub fn l(&self) -> usize {
        self.params.l
    }

    pub fn d(&self) -> usize {
        self.params.d
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    /// Context length `m = h^l`.
    pub fn window(&self) -> usize {
        self.m
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn table(&self) -> &EmbeddingTable<F> {
        &self.table
    }

    pub fn projections(&self) -> &ProjectionSet<F> {
        &self.proj
    }

    /// Intermediate memory `C^(layer)`, 1-based.
    pub fn memory(&self, layer: usize) -> Result<&CorrelationMemory<F>> {
        layer
            .checked_sub(1)
            .and_then(|i| self.layers.get(i))
            .ok_or_else(|| param(format!("layer {layer} outside 1..={}", self.l())))
    }

    pub fn memories(&self) -> &[CorrelationMemory<F>] {
        &self.layers
    }

    pub fn last_memory(&self) -> &CorrelationMemory<F> {
        &self.last
    }

    fn check_window(&self, window: &[TokenId]) -> Result<()> {
        if window.len() != self.m + 1 {
            return Err(MemoError::Input(format!(
                "a window holds {} tokens, got {}",
                self.m + 1,
                window.len()
            )));
        }
        self.check_tokens(window)
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab.len()) {
            Some(t) => Err(MemoError::Vocabulary(format!(
                "token id {t} outside vocabulary of {} tokens",
                self.vocab.len()
            ))),
            None => Ok(()),
        }
    }

    /// Stores the `m` context tokens and the next token of `window`.
    pub fn memorize_window(&mut self, window: &[TokenId]) -> Result<WindowTrace<F>> {
        self.check_window(window)?;
        let mut trace = Vec::with_capacity(self.l());
        self.run_chunk(window, &[0], Mode::Memorize, &mut AnchorSet::new(), Some(&mut trace))?;
        Ok(WindowTrace { layers: trace })
    }

    /// Subtracts every next-token association `window` added to `C^(last)`.
    /// Intermediate memories are left as they are.
    pub fn forget_window(&mut self, window: &[TokenId]) -> Result<()> {
        self.check_window(window)?;
        self.run_chunk(window, &[0], Mode::Forget, &mut AnchorSet::new(), None)
    }

    /// Memorizes every window of `tokens` with targets from
    /// [`window_targets`]. A block at a given text position is written once
    /// per call even when several windows contain it. Returns the number of
    /// windows.
    pub fn ingest_text(&mut self, tokens: &[TokenId], stride: usize) -> Result<usize> {
        let targets = window_targets(tokens.len(), self.m, stride)?;
        self.ingest_windows(tokens, &targets, &mut AnchorSet::new())?;
        Ok(targets.len())
    }

    /// Exact inverse of [`ingest_text`](Self::ingest_text) on `C^(last)`.
    pub fn forget_text(&mut self, tokens: &[TokenId], stride: usize) -> Result<usize> {
        let targets = window_targets(tokens.len(), self.m, stride)?;
        self.forget_windows(tokens, &targets, &mut AnchorSet::new())?;
        Ok(targets.len())
    }

    /// Memorizes the windows ending before each position in `targets`,
    /// skipping blocks recorded in `anchors`. Splitting one target list over
    /// several calls that share `anchors` gives the same memories as a
    /// single call.
    pub fn ingest_windows(&mut self, tokens: &[TokenId], targets: &[usize], anchors: &mut AnchorSet) -> Result<()> {
        self.run_targets(tokens, targets, Mode::Memorize, anchors)
    }

    pub fn forget_windows(&mut self, tokens: &[TokenId], targets: &[usize], anchors: &mut AnchorSet) -> Result<()> {
        self.run_targets(tokens, targets, Mode::Forget, anchors)
    }

    fn padded(&self, tokens: &[TokenId]) -> Vec<TokenId> {
        let mut padded = vec![PAD; self.m];
        padded.extend_from_slice(tokens);
        padded
    }

    fn run_targets(&mut self, tokens: &[TokenId], targets: &[usize], mode: Mode, anchors: &mut AnchorSet) -> Result<()> {
        self.check_tokens(tokens)?;
        if let Some(&t) = targets.iter().find(|&&t| t < 1 || t >= tokens.len()) {
            return Err(MemoError::Input(format!("target {t} outside 1..{}", tokens.len())));
        }
        // In padded coordinates the window of target t starts at t.
        let padded = self.padded(tokens);
        for chunk in targets.chunks(CHUNK) {
            self.run_chunk(&padded, chunk, mode, anchors, None)?;
        }
        Ok(())
    }

    /// Processes the windows `padded[s .. s+m+1]` for each `s` in `starts`,
    /// in order, as if each were memorized (or forgotten) alone apart from
    /// skipping blocks already in `anchors`.
    fn run_chunk(
        &mut self,
        padded: &[TokenId],
        starts: &[usize],
        mode: Mode,
        anchors: &mut AnchorSet,
        mut trace: Option<&mut Vec<LayerTrace<F>>>,
    ) -> Result<()> {
        let (h, m, l) = (self.h(), self.m, self.l());
        let mut prev: Option<(HashMap<usize, usize>, Array2<F>)> = None;
        let mut span = 1;
        for i in 1..=l {
            let unit = span;
            span *= h;
            let nblocks = m / span;
            let mut positions: Vec<usize> =
                starts.iter().flat_map(|&s| (0..nblocks).map(move |k| s + k * span)).collect();
            positions.sort_unstable();
            positions.dedup();
            let index: HashMap<usize, usize> = positions.iter().enumerate().map(|(r, &p)| (p, r)).collect();

            let inputs = match &prev {
                None => {
                    let toks: Vec<TokenId> =
                        positions.iter().flat_map(|&p| padded[p..p + h].iter().copied()).collect();
                    self.table.embed(&toks)?
                }
                Some((pidx, pcodes)) => {
                    let rows: Vec<usize> =
                        positions.iter().flat_map(|&p| (0..h).map(move |j| pidx[&(p + j * unit)])).collect();
                    pcodes.select(Axis(0), &rows)
                }
            };
            let keys = flat_h(self.proj.apply_wv(inputs.view(), i)?.view(), h)?;
            let codes = if mode == Mode::Memorize || i < l {
                Some(self.proj.apply_prj(flat_h(inputs.view(), h)?.view(), i)?)
            } else {
                None
            };

            let fresh: Vec<Vec<usize>> = starts
                .iter()
                .map(|&s| {
                    (0..nblocks)
                        .map(|k| s + k * span)
                        .filter(|&p| anchors.insert(i, p))
                        .map(|p| index[&p])
                        .collect()
                })
                .collect();

            let (rows, next): (Vec<usize>, Vec<TokenId>) = fresh
                .iter()
                .flatten()
                .map(|&r| (r, padded[positions[r] + span]))
                .filter(|&(_, t)| t != PAD)
                .unzip();
            if !rows.is_empty() {
                let k = keys.select(Axis(0), &rows);
                let v = self.table.embed(&next)?;
                match mode {
                    Mode::Memorize => self.last.store(k.view(), v.view(), None)?,
                    Mode::Forget => self.last.forget(k.view(), v.view())?,
                }
            }

            if mode == Mode::Memorize {
                let codes = codes.as_ref().expect("codes computed when memorizing");
                let gates = gate_and_store(&mut self.layers[i - 1], &keys, codes, &fresh)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(LayerTrace {
                        inputs: inputs.clone(),
                        keys: keys.clone(),
                        codes: codes.clone(),
                        distiller: GateDiagonal { entries: gates.iter().map(|g| g.0).collect() },
                        frequency: GateDiagonal { entries: gates.iter().map(|g| g.1).collect() },
                        gate: GateDiagonal { entries: gates.iter().map(|g| g.0 * g.1).collect() },
                    });
                }
            }
            prev = codes.map(|c| (index, c));
        }
        Ok(())
    }

    /// Left-pads (or keeps the last `m` tokens of) `context`.
    fn frame(&self, context: &[TokenId]) -> Result<Vec<TokenId>> {
        if context.is_empty() {
            return Err(MemoError::Input("context is empty".into()));
        }
        self.check_tokens(context)?;
        let tail = &context[context.len().saturating_sub(self.m)..];
        let mut framed = vec![PAD; self.m - tail.len()];
        framed.extend_from_slice(tail);
        Ok(framed)
    }

    /// Retrieved next-token vectors `O · C^(last)`, one row per context.
    fn readout(&self, contexts: &[&[TokenId]]) -> Result<Array2<F>> {
        let (h, m) = (self.h(), self.m);
        let mut toks = Vec::with_capacity(contexts.len() * m);
        for c in contexts {
            toks.extend(self.frame(c)?);
        }
        let mut x = self.table.embed(&toks)?;
        let mut o = Array2::<F>::zeros((contexts.len(), self.d()));
        let mut span = 1;
        for i in 1..=self.l() {
            span *= h;
            let per = m / span;
            let keys = flat_h(self.proj.apply_wv(x.view(), i)?.view(), h)?;
            for (b, mut row) in o.axis_iter_mut(Axis(0)).enumerate() {
                row.zip_mut_with(&keys.row((b + 1) * per - 1), |a, &k| *a = *a + k);
            }
            if i < self.l() {
                x = self.layers[i - 1].retrieve(keys.view())?;
            }
        }
        self.last.retrieve(o.view())
    }

    /// Scores every token as the continuation of `context`. Contexts
    /// shorter than `m` are left-padded; longer ones keep their last `m`
    /// tokens.
    pub fn predict_next(&self, context: &[TokenId]) -> Result<Prediction<F>> {
        let out = self.readout(&[context])?;
        Ok(Prediction::from_scores(self.table.decode(out.row(0))))
    }

    /// Winning token for each context.
    pub fn predict_batch(&self, contexts: &[&[TokenId]]) -> Result<Vec<TokenId>> {
        let mut best = Vec::with_capacity(contexts.len());
        for chunk in contexts.chunks(64) {
            let out = self.readout(chunk)?;
            let scores = out.dot(&self.table.rows().t());
            best.extend(scores.axis_iter(Axis(0)).map(|r| best_token(r)));
        }
        Ok(best)
    }

    /// Share of `targets` whose token the model predicts from the `m`
    /// tokens before it.
    pub fn window_accuracy(&self, tokens: &[TokenId], targets: &[usize]) -> Result<f64> {
        if targets.is_empty() {
            return Err(param("accuracy needs at least one window"));
        }
        if let Some(&t) = targets.iter().find(|&&t| t < 1 || t >= tokens.len()) {
            return Err(MemoError::Input(format!("target {t} outside 1..{}", tokens.len())));
        }
        let padded = self.padded(tokens);
        let contexts: Vec<&[TokenId]> = targets.iter().map(|&t| &padded[t..t + self.m]).collect();
        let got = self.predict_batch(&contexts)?;
        let hits = got.iter().zip(targets).filter(|(g, &t)| **g == tokens[t]).count();
        Ok(hits as f64 / targets.len() as f64)
    }

    /// Greedy continuation: appends the winning token `steps` times, each
    /// time predicting from the last `m` tokens.
    pub fn generate(&self, prompt: &[TokenId], steps: usize) -> Result<Vec<TokenId>> {
        if steps < 1 {
            return Err(MemoError::Input("steps must be >= 1".into()));
        }
        let mut ctx = prompt.to_vec();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let t = self.predict_next(&ctx)?.token;
            ctx.push(t);
            out.push(t);
        }
        Ok(out)
    }
}

/// Gates the fresh blocks of each window against `mem` as it stands after
/// the earlier windows of the chunk, then stores them all at once. Returns
/// `(distiller, frequency)` per fresh row, in order.
fn gate_and_store<F: Real>(
    mem: &mut CorrelationMemory<F>,
    keys: &Array2<F>,
    codes: &Array2<F>,
    fresh: &[Vec<usize>],
) -> Result<Vec<(f64, f64)>> {
    let active: Vec<&Vec<usize>> = fresh.iter().filter(|rows| !rows.is_empty()).collect();
    if active.is_empty() {
        return Ok(Vec::new());
    }
    let mut xbar = Array2::<F>::zeros((active.len(), mem.dv()));
    for (mut acc, rows) in xbar.axis_iter_mut(Axis(0)).zip(&active) {
        for &r in rows.iter() {
            acc.zip_mut_with(&codes.row(r), |a, &c| *a = *a + c);
        }
    }
    // Row a: (C · x̄_a)ᵀ against the memory at chunk start.
    let z = xbar.dot(&mem.matrix().t());

    let mut pending: Vec<usize> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut gates = Vec::new();
    for (a, rows) in active.iter().enumerate() {
        let xb = xbar.row(a);
        let cx: Vec<f64> = pending.iter().map(|&p| codes.row(p).dot(&xb).as_f64()).collect();
        let mut admitted = Vec::new();
        for &r in rows.iter() {
            let kr = keys.row(r);
            let mut s = kr.dot(&z.row(a)).as_f64();
            for ((&p, &w), &c) in pending.iter().zip(&weights).zip(&cx) {
                s += w * kr.dot(&keys.row(p)).as_f64() * c;
            }
            let dv = distill_entry(s);
            let fv = frequency_entry(codes.row(r).dot(&xb).as_f64());
            gates.push((dv, fv));
            if dv * fv != 0.0 {
                admitted.push((r, dv * fv));
            }
        }
        for (r, w) in admitted {
            pending.push(r);
            weights.push(w);
        }
    }
    if !pending.is_empty() {
        let k = keys.select(Axis(0), &pending);
        let c = codes.select(Axis(0), &pending);
        mem.store(k.view(), c.view(), Some(&GateDiagonal { entries: weights }))?;
    }
    Ok(gates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(h: usize, l: usize, d: usize) -> MemoModel<f64> {
        MemoModel::with_vocab_size(20, MemoParams { h, l, d, seed: 3 }).unwrap()
    }

    #[test]
    fn window_plan() {
        assert_eq!(window_targets(5, 4, 4).unwrap(), vec![4]);
        assert_eq!(window_targets(5, 4, 2).unwrap(), vec![2, 4]);
        assert_eq!(window_targets(9, 4, 4).unwrap(), vec![4, 8]);
        assert_eq!(window_targets(6, 4, 3).unwrap(), vec![1, 4]);
        assert!(window_targets(1, 4, 1).unwrap().is_empty());
        assert!(window_targets(5, 4, 0).is_err());
    }

    #[test]
    fn rejects_bad_windows() {
        let mut md = model(2, 2, 16);
        assert!(matches!(md.memorize_window(&[1, 2, 3]), Err(MemoError::Input(_))));
        assert!(matches!(md.memorize_window(&[1, 2, 3, 4, 99]), Err(MemoError::Vocabulary(_))));
        assert!(matches!(md.predict_next(&[]), Err(MemoError::Input(_))));
        assert!(md.generate(&[1], 0).is_err());
        assert!(MemoModel::<f64>::with_vocab_size(20, MemoParams { h: 1, l: 3, d: 16, seed: 0 }).is_err());
    }

    #[test]
    fn trace_shapes_shrink_by_h() {
        let mut md = model(2, 3, 1024);
        let tr = md.memorize_window(&[1, 2, 3, 4, 5, 6, 7, 8, 9]).unwrap();
        let rows: Vec<usize> = tr.layers.iter().map(|t| t.keys.nrows()).collect();
        assert_eq!(rows, vec![4, 2, 1]);
        assert_eq!(tr.layers[0].inputs.nrows(), 8);
        assert!(tr.layers.iter().all(|t| t.gate.entries.iter().all(|&g| g == 1.0)));
    }

    #[test]
    fn long_context_keeps_tail() {
        let mut md = model(2, 1, 64);
        md.memorize_window(&[3, 4, 5]).unwrap();
        let a = md.predict_next(&[9, 9, 3, 4]).unwrap();
        let b = md.predict_next(&[3, 4]).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.token, 5);
    }
}
