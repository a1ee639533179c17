#![allow(dead_code)]

use gcblane_core::data::{Dataset, NucleotideSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Block, layer and per-sample output shape for a 101-bp input with k = 3.
pub const LAYER_TABLE: [(&str, &str, &[usize]); 36] = [
    ("Convolution Block 1", "Input Layer", &[101, 4]),
    ("Convolution Block 1", "Convolution1D", &[101, 256]),
    ("Convolution Block 1", "PReLU", &[101, 256]),
    ("Convolution Block 1", "SpatialDropout1D", &[101, 256]),
    ("Convolution Block 1", "MaxPooling1D", &[101, 256]),
    ("Convolution Block 1", "BatchNormalization", &[101, 256]),
    ("Convolution Block 2", "Convolution1D", &[101, 128]),
    ("Convolution Block 2", "PReLU", &[101, 128]),
    ("Convolution Block 2", "SpatialDropout1D", &[101, 128]),
    ("Convolution Block 2", "MaxPooling1D", &[101, 128]),
    ("Convolution Block 2", "BatchNormalization", &[101, 128]),
    ("Convolution Block 3", "Convolution1D", &[101, 64]),
    ("Convolution Block 3", "PReLU", &[101, 64]),
    ("Convolution Block 3", "SpatialDropout1D", &[101, 64]),
    ("Convolution Block 3", "MaxPooling1D", &[50, 64]),
    ("Convolution Block 3", "BatchNormalization", &[50, 64]),
    ("Convolution Block 4", "Convolution1D", &[50, 64]),
    ("Convolution Block 4", "PReLU", &[50, 64]),
    ("Convolution Block 4", "SpatialDropout1D", &[50, 64]),
    ("Convolution Block 4", "MaxPooling1D", &[25, 64]),
    ("Convolution Block 4", "BatchNormalization", &[25, 64]),
    ("Attention Block", "Convolution1D", &[25, 64]),
    ("Attention Block", "MultiHeadAttention", &[25, 64]),
    ("Attention Block", "Multiply", &[25, 64]),
    ("Recurrent Block 1", "Bidirectional LSTM", &[25, 64]),
    ("Recurrent Block 1", "LSTM", &[64]),
    ("Graph Block 1", "Graph Input Layer", &[99, 12]),
    ("Graph Block 1", "GCNConv", &[99, 128]),
    ("Graph Block 2", "MinCutPool", &[40, 128]),
    ("Graph Block 2", "GCNConv", &[40, 64]),
    ("Graph Block 3", "MinCutPool", &[12, 64]),
    ("Graph Block 3", "GCNConv", &[12, 16]),
    ("Recurrent Block 2", "Bidirectional LSTM", &[12, 64]),
    ("Recurrent Block 2", "LSTM", &[16]),
    ("Output Block", "Concatenate", &[80]),
    ("Output Block", "Dense", &[2]),
];

pub fn random_bases(len: usize, rng: &mut ChaCha8Rng) -> String {
    (0..len).map(|_| b"ACGT"[rng.random_range(0..4)] as char).collect()
}

/// Uniform random sequences with alternating labels.
pub fn random_dataset(n: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recs: Vec<NucleotideSequence> = (0..n)
        .map(|i| NucleotideSequence::new(format!("r{i}"), &random_bases(len, &mut rng), Some((i % 2) as u8)).unwrap())
        .collect();
    Dataset::from_records(&recs, 3).unwrap()
}

/// Scores drawn from a coarse grid so ties are common, labels with both
/// classes present.
pub fn random_instance(seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=50);
    let levels = rng.random_range(2..=60);
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    labels[0] = 1;
    labels[n - 1] = 0;
    (scores, labels)
}

/// Mann-Whitney by explicit pair counting: wins count 2, ties 1, over 2·P·N.
pub fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (&sp, _) in scores.iter().zip(labels).filter(|(_, l)| **l == 1) {
        for (&sn, _) in scores.iter().zip(labels).filter(|(_, l)| **l == 0) {
            twice += if sp > sn { 2 } else if sp == sn { 1 } else { 0 };
            pairs += 1;
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Step-wise average precision by enumerating every distinct threshold
/// from the top and recounting from scratch.
pub fn threshold_pr_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut ts: Vec<f64> = scores.to_vec();
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ts.dedup();
    let p = labels.iter().filter(|&&l| l == 1).count() as f64;
    let (mut area, mut r0) = (0.0, 0.0);
    for t in ts {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l == 1).count() as f64;
        let k = scores.iter().filter(|s| **s >= t).count() as f64;
        let r = tp / p;
        area += (r - r0) * (tp / k);
        r0 = r;
    }
    area
}
