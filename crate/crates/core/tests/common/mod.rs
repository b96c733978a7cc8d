//! Literal, unbatched evaluation of the memorize and retrieve equations from
//! the building blocks, used as an oracle for the batched model.
#![allow(dead_code)]

use std::collections::HashSet;

use memo::cmm::{inv_frequency, CorrelationMemory};
use memo::embeddings::EmbeddingTable;
use memo::projections::{flat_h, sel_next, ProjectionSet};
use memo::{TokenId, PAD};
use ndarray::{Array1, Array2, Axis};

pub struct Reference {
    pub h: usize,
    pub l: usize,
    pub m: usize,
    pub table: EmbeddingTable<f64>,
    pub proj: ProjectionSet<f64>,
    pub layers: Vec<CorrelationMemory<f64>>,
    pub last: CorrelationMemory<f64>,
}

impl Reference {
    pub fn new(n: usize, h: usize, l: usize, d: usize, seed: u64) -> Self {
        Reference {
            h,
            l,
            m: h.pow(l as u32),
            table: EmbeddingTable::build(n, d, seed).unwrap(),
            proj: ProjectionSet::build(h, l, d, seed).unwrap(),
            layers: (0..l).map(|_| CorrelationMemory::new(d, d)).collect(),
            last: CorrelationMemory::new(d, d),
        }
    }

    /// One window `padded[s..=s+m]`; blocks whose `(layer, position)` is
    /// already in `seen` are left out of both stores.
    pub fn memorize(&mut self, padded: &[TokenId], s: usize, seen: &mut HashSet<(usize, usize)>, forget: bool) {
        let window = &padded[s..=s + self.m];
        let all = self.table.embed(window).unwrap();
        let mut x = self.table.embed(&window[..self.m]).unwrap();
        let mut span = 1;
        for i in 1..=self.l {
            span *= self.h;
            let keys = flat_h(self.proj.apply_wv(x.view(), i).unwrap().view(), self.h).unwrap();
            let codes = self.proj.apply_prj(flat_h(x.view(), self.h).unwrap().view(), i).unwrap();
            let next = sel_next(all.view(), i, self.h).unwrap();
            let rows: Vec<usize> = (0..keys.nrows()).filter(|&k| seen.insert((i, s + k * span))).collect();
            if !rows.is_empty() {
                let k = keys.select(Axis(0), &rows);
                let c = codes.select(Axis(0), &rows);
                if !forget {
                    let gate = self.layers[i - 1]
                        .distiller(k.view(), c.view())
                        .unwrap()
                        .product(&inv_frequency(c.view()).unwrap())
                        .unwrap();
                    self.layers[i - 1].store(k.view(), c.view(), Some(&gate)).unwrap();
                }
                let live: Vec<usize> =
                    rows.iter().copied().filter(|&k| window[(k + 1) * span] != PAD).collect();
                let lk = keys.select(Axis(0), &live);
                let lv = next.select(Axis(0), &live);
                if forget {
                    self.last.forget(lk.view(), lv.view()).unwrap();
                } else {
                    self.last.store(lk.view(), lv.view(), None).unwrap();
                }
            }
            x = codes;
        }
    }

    pub fn memorize_window(&mut self, window: &[TokenId]) {
        self.memorize(window, 0, &mut HashSet::new(), false);
    }

    /// Windows for each target of `tokens`, left-padded, with one shared
    /// anchor set.
    pub fn ingest(&mut self, tokens: &[TokenId], targets: &[usize], forget: bool) {
        let mut padded = vec![PAD; self.m];
        padded.extend_from_slice(tokens);
        let mut seen = HashSet::new();
        for &t in targets {
            self.memorize(&padded, t, &mut seen, forget);
        }
    }

    /// Scores of every token after `context` (left-padded to `m`).
    pub fn scores(&self, context: &[TokenId]) -> Array1<f64> {
        let mut framed = vec![PAD; self.m - context.len()];
        framed.extend_from_slice(context);
        let mut x = self.table.embed(&framed).unwrap();
        let mut o = Array1::<f64>::zeros(self.table.d());
        for i in 1..=self.l {
            let keys = flat_h(self.proj.apply_wv(x.view(), i).unwrap().view(), self.h).unwrap();
            o += &keys.row(keys.nrows() - 1);
            x = self.layers[i - 1].retrieve(keys.view()).unwrap();
        }
        let v = self.last.retrieve(o.view().insert_axis(Axis(0))).unwrap();
        self.table.decode(v.row(0))
    }
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
