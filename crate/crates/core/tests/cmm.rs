use memo::cmm::{inv_frequency, CorrelationMemory, GateDiagonal};
use memo::embeddings::build_table;
use ndarray::{array, Array2, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.dot(&b) / (a.dot(&a) * b.dot(&b)).sqrt()
}

fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn single_pair_recalls_its_value() {
    let t = build_table(4, 1024, 3).unwrap();
    let (k, v) = (t.embed(&[0]).unwrap(), t.embed(&[1]).unwrap());
    let mut m = CorrelationMemory::new(1024, 1024);
    m.store(k.view(), v.view(), None).unwrap();
    let out = m.retrieve(k.view()).unwrap();
    assert!(cosine(out.row(0), v.row(0)) >= 0.99);
    m.store(k.view(), v.view(), None).unwrap();
    let twice = m.retrieve(k.view()).unwrap().row(0).dot(&v.row(0));
    assert!((twice - 2.0).abs() < 1e-9);
    let half = m.retrieve((&k * 0.5).view()).unwrap();
    assert!(half.iter().zip(m.retrieve(k.view()).unwrap().iter()).all(|(a, b)| (a - 0.5 * b).abs() < 1e-12));
}

#[test]
fn empty_memory_retrieves_zero() {
    let m = CorrelationMemory::<f64>::new(8, 5);
    assert!(m.retrieve(random(3, 8, 1).view()).unwrap().iter().all(|&v| v == 0.0));
    assert!(m.retrieve(random(1, 7, 1).view()).is_err());
}

#[test]
fn two_pairs_interfere_little() {
    let t = build_table(4, 1024, 9).unwrap();
    let keys = t.embed(&[0, 1]).unwrap();
    let vals = t.embed(&[2, 3]).unwrap();
    let mut m = CorrelationMemory::new(1024, 1024);
    m.store(keys.view(), vals.view(), None).unwrap();
    let out = m.retrieve(keys.slice(ndarray::s![..1, ..])).unwrap();
    let noise = &out.row(0) - &vals.row(0);
    assert!(noise.dot(&vals.row(1)).abs() <= 0.1);
}

#[test]
fn forgetting_restores_and_can_overshoot() {
    let (k, v) = (random(5, 16, 1), random(5, 12, 2));
    let mut m = CorrelationMemory::new(16, 12);
    m.store(random(3, 16, 3).view(), random(3, 12, 4).view(), None).unwrap();
    let snap = m.matrix().clone();
    m.store(k.view(), v.view(), None).unwrap();
    m.forget(k.view(), v.view()).unwrap();
    assert!(m.matrix().iter().zip(snap.iter()).all(|(a, b)| (a - b).abs() <= 1e-9));

    let t = build_table(2, 1024, 5).unwrap();
    let (k, v) = (t.embed(&[0]).unwrap(), t.embed(&[1]).unwrap());
    let mut m = CorrelationMemory::new(1024, 1024);
    m.forget(k.view(), v.view()).unwrap();
    let expect = -k.t().dot(&v);
    assert_eq!(m.matrix(), &expect);
    assert!(cosine(m.retrieve(k.view()).unwrap().row(0), v.row(0)) <= -0.99);

    m.store(k.view(), v.view(), None).unwrap();
    m.store(k.view(), v.view(), None).unwrap();
    m.store(k.view(), v.view(), None).unwrap();
    m.forget(k.view(), v.view()).unwrap();
    assert!((m.retrieve(k.view()).unwrap().row(0).dot(&v.row(0)) - 1.0).abs() < 1e-9);
}

#[test]
fn one_hot_memory_is_a_lookup_table() {
    let n = 8;
    let eye = Array2::<f64>::eye(n);
    let target = [3usize, 0, 7, 7, 1, 5, 2, 6];
    let vals = Array2::from_shape_fn((n, n), |(r, c)| (target[r] == c) as u8 as f64);
    let mut m = CorrelationMemory::new(n, n);
    m.store(eye.view(), vals.view(), None).unwrap();
    assert_eq!(m.retrieve(eye.view()).unwrap(), vals);
}

#[test]
fn distiller_flags_only_patterns_stored_with_their_code() {
    // Three patterns: A stored and presented again, B stored but presented
    // with a new code, C never stored.
    let t = build_table(6, 1024, 12).unwrap();
    let keys = t.embed(&[0, 1, 2]).unwrap();
    let codes = t.embed(&[3, 4, 5]).unwrap();
    let mut m = CorrelationMemory::new(1024, 1024);
    m.store(keys.select(Axis(0), &[0, 1]).view(), codes.select(Axis(0), &[0, 1]).view(), None).unwrap();
    let fresh = build_table(8, 1024, 13).unwrap().embed(&[7]).unwrap();
    let presented = ndarray::concatenate![Axis(0), codes.slice(ndarray::s![..1, ..]), fresh, codes.slice(ndarray::s![2..3, ..])];
    let gate = m.distiller(keys.view(), presented.view()).unwrap();
    assert_eq!(gate.entries, vec![0.0, 1.0, 1.0]);
    let empty = CorrelationMemory::<f64>::new(1024, 1024);
    assert_eq!(empty.distiller(keys.view(), codes.view()).unwrap(), GateDiagonal::ones(3));
}

#[test]
fn inverse_frequency_counts_repeats() {
    let t = build_table(4, 1024, 2).unwrap();
    let codes = t.embed(&[1, 2, 1, 3, 1]).unwrap();
    let g = inv_frequency(codes.view()).unwrap();
    let third = 1.0 / 3.0;
    assert_eq!(g.entries, vec![third, 1.0, third, 1.0, third]);
    assert_eq!(inv_frequency(t.embed(&[2]).unwrap().view()).unwrap().entries, vec![1.0]);
    assert_eq!(inv_frequency(t.embed(&[0, 1, 2, 3]).unwrap().view()).unwrap(), GateDiagonal::ones(4));
}

#[test]
fn gated_batch_adds_each_pattern_once() {
    let t = build_table(6, 1024, 4).unwrap();
    let keys = t.embed(&[0, 1, 0, 0, 2]).unwrap();
    let codes = t.embed(&[3, 4, 3, 3, 5]).unwrap();
    let mut gated = CorrelationMemory::new(1024, 1024);
    let gate = gated.distiller(keys.view(), codes.view()).unwrap().product(&inv_frequency(codes.view()).unwrap()).unwrap();
    gated.store(keys.view(), codes.view(), Some(&gate)).unwrap();
    let mut once = CorrelationMemory::new(1024, 1024);
    let uniq = [0, 1, 4];
    once.store(keys.select(Axis(0), &uniq).view(), codes.select(Axis(0), &uniq).view(), None).unwrap();
    assert!(gated.matrix().iter().zip(once.matrix().iter()).all(|(a, b)| (a - b).abs() <= 1e-6));

    let snap = gated.matrix().clone();
    let again = gated.distiller(keys.view(), codes.view()).unwrap().product(&inv_frequency(codes.view()).unwrap()).unwrap();
    gated.store(keys.view(), codes.view(), Some(&again)).unwrap();
    assert!(gated.matrix().iter().zip(snap.iter()).all(|(a, b)| (a - b).abs() <= 1e-6));
}

#[test]
fn gate_length_must_match() {
    let mut m = CorrelationMemory::<f64>::new(4, 4);
    let k = array![[1.0, 0.0, 0.0, 0.0]];
    assert!(m.store(k.view(), k.view(), Some(&GateDiagonal::ones(2))).is_err());
    assert!(m.store(k.view(), random(2, 4, 0).view(), None).is_err());
}

proptest! {
    #[test]
    fn store_is_batch_linear(split in 0usize..=10, seed in 0u64..500) {
        let (k, v) = (random(10, 12, seed), random(10, 9, seed + 1000));
        let mut whole = CorrelationMemory::new(12, 9);
        whole.store(k.view(), v.view(), None).unwrap();
        let mut parts = CorrelationMemory::new(12, 9);
        parts.store(k.slice(ndarray::s![..split, ..]), v.slice(ndarray::s![..split, ..]), None).unwrap();
        parts.store(k.slice(ndarray::s![split.., ..]), v.slice(ndarray::s![split.., ..]), None).unwrap();
        prop_assert!(whole.matrix().iter().zip(parts.matrix().iter()).all(|(a, b)| (a - b).abs() <= 1e-9));
    }

    #[test]
    fn retrieve_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..500) {
        let mut m = CorrelationMemory::new(10, 6);
        m.store(random(4, 10, seed).view(), random(4, 6, seed + 1).view(), None).unwrap();
        let (x, y) = (random(1, 10, seed + 2), random(1, 10, seed + 3));
        let lhs = m.retrieve((&x * a + &y * b).view()).unwrap();
        let rhs = m.retrieve(x.view()).unwrap() * a + m.retrieve(y.view()).unwrap() * b;
        prop_assert!(lhs.iter().zip(rhs.iter()).all(|(p, q)| (p - q).abs() <= 1e-9));
    }
}
