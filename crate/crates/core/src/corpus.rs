//! Vocabularies, whitespace tokenization and the synthetic corpora used by
//! the capacity experiments.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{param, MemoError, Result};
use crate::rng::{self, Domain};
use crate::{TokenId, PAD};

/// Surface form of the padding token. It can never appear in input text.
pub const PAD_WORD: &str = "<pad>";

/// Bijection between words and contiguous ids; id 0 is always [`PAD_WORD`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// A vocabulary holding only the padding token.
    pub fn new() -> Self {
        let mut ids = HashMap::new();
        ids.insert(PAD_WORD.to_string(), PAD);
        Vocabulary { words: vec![PAD_WORD.to_string()], ids }
    }

    /// Every distinct whitespace-separated word of `text`, numbered in order
    /// of first appearance starting at 1.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_words(text.split_whitespace())
    }

    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut v = Self::new();
        for w in words {
            v.insert(w)?;
        }
        Ok(v)
    }

    /// `n` tokens: the padding token followed by words `"1" .. "n-1"`, so
    /// every id is spelled by its own number.
    pub fn numeric(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(param("vocabulary needs at least the padding token"));
        }
        let mut v = Self::new();
        for i in 1..n {
            v.insert(&i.to_string())?;
        }
        Ok(v)
    }

    /// Adds `word` if absent and returns its id.
    pub fn insert(&mut self, word: &str) -> Result<TokenId> {
        if word == PAD_WORD {
            return Err(MemoError::Vocabulary(format!("{PAD_WORD} is reserved for padding")));
        }
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(MemoError::Vocabulary(format!("{word:?} is not a single word")));
        }
        if let Some(&id) = self.ids.get(word) {
            return Ok(id);
        }
        let id = TokenId::try_from(self.words.len())
            .map_err(|_| MemoError::Vocabulary("vocabulary exceeds the id range".into()))?;
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// Never true: the padding token is always present.
    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// Words in id order, starting with the padding token.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Maps each whitespace-separated word to its id. Unknown words are
    /// errors: a memorizing model has no use for an unknown-word bucket.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| match self.ids.get(w) {
                Some(&id) if id != PAD => Ok(id),
                Some(_) => Err(MemoError::Vocabulary(format!("{PAD_WORD} cannot appear in text"))),
                None => Err(MemoError::Vocabulary(format!("unknown word {w:?}"))),
            })
            .collect()
    }

    /// Joins the words of `ids` with single spaces.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let words = ids
            .iter()
            .map(|&id| {
                self.word(id)
                    .ok_or_else(|| MemoError::Vocabulary(format!("token id {id} outside vocabulary")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}

/// A fixed-length sequence and the token that must follow it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pair {
    pub tokens: Vec<TokenId>,
    pub next: TokenId,
}

/// Stream of uniformly random `(sequence, next)` pairs over ids
/// `0..vocab_size`, never repeating a sequence.
#[derive(Debug, Clone)]
pub struct UniformPairStream {
    vocab_size: usize,
    h: usize,
    rng: ChaCha20Rng,
    seen: HashSet<Vec<TokenId>>,
    space: f64,
}

impl UniformPairStream {
    pub fn new(vocab_size: usize, h: usize, seed: u64) -> Result<Self> {
        if vocab_size < 2 {
            return Err(param(format!("vocabulary of {vocab_size} tokens is too small")));
        }
        if h < 1 {
            return Err(param("sequence length must be >= 1"));
        }
        TokenId::try_from(vocab_size - 1).map_err(|_| param("vocabulary exceeds the id range"))?;
        Ok(UniformPairStream {
            vocab_size,
            h,
            rng: rng::seeded(seed, Domain::PairSampling, h as u64),
            seen: HashSet::new(),
            space: (vocab_size as f64).powi(h as i32),
        })
    }

    /// Sequences handed out so far.
    pub fn produced(&self) -> usize {
        self.seen.len()
    }

    pub fn next_batch(&mut self, batch: usize) -> Result<Vec<Pair>> {
        if (self.seen.len() + batch) as f64 > self.space {
            return Err(param(format!(
                "only {} distinct sequences of length {} exist over {} tokens",
                self.space, self.h, self.vocab_size
            )));
        }
        let n = self.vocab_size as TokenId;
        let mut out = Vec::with_capacity(batch);
        while out.len() < batch {
            let tokens: Vec<TokenId> = (0..self.h).map(|_| self.rng.gen_range(0..n)).collect();
            if self.seen.insert(tokens.clone()) {
                out.push(Pair { tokens, next: self.rng.gen_range(0..n) });
            }
        }
        Ok(out)
    }
}

/// One batch of distinct uniformly random pairs.
pub fn gen_uniform_pairs(vocab_size: usize, h: usize, batch: usize, seed: u64) -> Result<Vec<Pair>> {
    UniformPairStream::new(vocab_size, h, seed)?.next_batch(batch)
}

/// Parameters of a random text salted with repeated `decoy_length`-token
/// words whose successors vary.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoyTextSpec {
    /// Token ids are drawn from `1..vocab_size`; id 0 is padding.
    pub vocab_size: usize,
    pub text_length: usize,
    pub decoy_count: usize,
    pub decoy_length: usize,
    /// Minimum number of ordinary tokens between two decoy occurrences.
    pub min_gap: usize,
    /// Expected share of slots taken by each decoy.
    pub occurrence_rate: f64,
    pub seed: u64,
}

impl DecoyTextSpec {
    /// Defaults for `h`-token decoys: one ordinary slot between decoys and
    /// each decoy in 0.5% of slots.
    pub fn new(vocab_size: usize, text_length: usize, decoy_count: usize, h: usize, seed: u64) -> Self {
        DecoyTextSpec {
            vocab_size,
            text_length,
            decoy_count,
            decoy_length: h,
            min_gap: h,
            occurrence_rate: 0.005,
            seed,
        }
    }
}

/// A generated decoy text and where its decoys sit.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoyText {
    pub tokens: Vec<TokenId>,
    pub decoys: Vec<Vec<TokenId>>,
    /// `(start position, decoy index)` of every occurrence, by position.
    pub placements: Vec<(usize, usize)>,
}

/// Random text over slots of `decoy_length` tokens. Decoys occupy whole
/// slots, at least `min_gap` ordinary tokens apart, and every decoy occurs
/// at least twice.
pub fn gen_decoy_text(spec: &DecoyTextSpec) -> Result<DecoyText> {
    let h = spec.decoy_length;
    if spec.vocab_size < 2 {
        return Err(param("decoy text needs at least one non-padding token"));
    }
    TokenId::try_from(spec.vocab_size - 1).map_err(|_| param("vocabulary exceeds the id range"))?;
    if h < 1 || spec.text_length < h {
        return Err(param(format!(
            "text of {} tokens cannot hold words of {h} tokens",
            spec.text_length
        )));
    }
    if !(0.0..=1.0).contains(&spec.occurrence_rate) {
        return Err(param(format!("occurrence rate {} outside [0, 1]", spec.occurrence_rate)));
    }
    let slots = spec.text_length / h;
    // Slot indices of two occurrences must differ by at least `spacing`.
    let spacing = 1 + spec.min_gap.div_ceil(h);
    let fit = slots.div_ceil(spacing);
    if spec.decoy_count > 0 && 2 * spec.decoy_count > fit {
        return Err(param(format!(
            "{} decoys cannot each occur twice in {} slots with gap {}",
            spec.decoy_count, slots, spec.min_gap
        )));
    }

    let mut rng = rng::seeded(spec.seed, Domain::Corpus, 0);
    let n = spec.vocab_size as TokenId;
    let mut decoy_set = HashSet::new();
    let mut decoys = Vec::with_capacity(spec.decoy_count);
    while decoys.len() < spec.decoy_count {
        let d: Vec<TokenId> = (0..h).map(|_| rng.gen_range(1..n)).collect();
        if decoy_set.insert(d.clone()) {
            decoys.push(d);
        }
    }

    let mut placements = Vec::new();
    if spec.decoy_count > 0 {
        let share = (spec.decoy_count as f64 * spec.occurrence_rate).min(1.0);
        let wanted = ((share * slots as f64).round() as usize).max(2 * spec.decoy_count);
        let mut order: Vec<usize> = (0..slots).collect();
        order.shuffle(&mut rng);
        let mut taken = vec![false; slots];
        let mut chosen = Vec::with_capacity(wanted);
        for s in order {
            if chosen.len() == wanted {
                break;
            }
            let lo = s.saturating_sub(spacing - 1);
            let hi = (s + spacing).min(slots);
            if taken[lo..hi].iter().any(|&t| t) {
                continue;
            }
            taken[s] = true;
            chosen.push(s);
        }
        if chosen.len() < 2 * spec.decoy_count {
            return Err(param("random placement could not fit two occurrences of every decoy"));
        }
        let mut which: Vec<usize> = (0..chosen.len())
            .map(|j| if j < 2 * spec.decoy_count { j % spec.decoy_count } else { rng.gen_range(0..spec.decoy_count) })
            .collect();
        which.shuffle(&mut rng);
        placements = chosen.into_iter().map(|s| s * h).zip(which).collect();
        placements.sort_unstable();
    }

    let mut tokens: Vec<TokenId> = (0..spec.text_length).map(|_| rng.gen_range(1..n)).collect();
    for &(pos, k) in &placements {
        tokens[pos..pos + h].copy_from_slice(&decoys[k]);
    }
    Ok(DecoyText { tokens, decoys, placements })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_roundtrip() {
        let v = Vocabulary::from_text("He enrolled in the mathematics").unwrap();
        let ids = v.tokenize("He enrolled in the").unwrap();
        assert_eq!(ids, vec![1, 2, 3, 4]);
        assert_eq!(v.detokenize(&ids).unwrap(), "He enrolled in the");
        assert!(v.tokenize("").unwrap().is_empty());
        let err = v.tokenize("He sings").unwrap_err();
        assert!(err.to_string().contains("sings"));
    }

    #[test]
    fn pad_is_reserved() {
        let v = Vocabulary::numeric(5).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("4"), Some(4));
        assert!(v.tokenize(PAD_WORD).is_err());
        assert!(Vocabulary::from_text("a <pad> b").is_err());
    }

    #[test]
    fn uniform_pairs_distinct_and_reproducible() {
        let a = gen_uniform_pairs(100_000, 8, 1000, 3).unwrap();
        let b = gen_uniform_pairs(100_000, 8, 1000, 3).unwrap();
        assert_eq!(a, b);
        let distinct: HashSet<_> = a.iter().map(|p| p.tokens.clone()).collect();
        assert_eq!(distinct.len(), 1000);
        assert!(gen_uniform_pairs(2, 1, 3, 0).is_err());
        assert_eq!(gen_uniform_pairs(2, 1, 2, 0).unwrap().len(), 2);
        assert!(gen_uniform_pairs(1, 1, 1, 0).is_err());
    }

    #[test]
    fn uniform_stream_never_repeats_across_batches() {
        let mut s = UniformPairStream::new(3, 2, 1).unwrap();
        let a = s.next_batch(5).unwrap();
        let b = s.next_batch(4).unwrap();
        let all: HashSet<_> = a.iter().chain(&b).map(|p| p.tokens.clone()).collect();
        assert_eq!(all.len(), 9);
        assert!(s.next_batch(1).is_err());
    }

    #[test]
    fn decoy_free_text_has_no_placements() {
        let t = gen_decoy_text(&DecoyTextSpec::new(1000, 400, 0, 4, 1)).unwrap();
        assert_eq!(t.tokens.len(), 400);
        assert!(t.placements.is_empty());
        assert!(t.tokens.iter().all(|&x| x >= 1 && x < 1000));
    }

    #[test]
    fn decoy_spec_errors() {
        assert!(gen_decoy_text(&DecoyTextSpec::new(1, 100, 0, 4, 1)).is_err());
        assert!(gen_decoy_text(&DecoyTextSpec::new(100, 3, 0, 4, 1)).is_err());
        assert!(gen_decoy_text(&DecoyTextSpec::new(100, 40, 20, 4, 1)).is_err());
        let mut s = DecoyTextSpec::new(100, 400, 2, 4, 1);
        s.occurrence_rate = 1.5;
        assert!(gen_decoy_text(&s).is_err());
    }
}
