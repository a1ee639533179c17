//! Dinucleotide-preserving shuffle by random Eulerian path.
//!
//! The sequence is read as a walk through a directed multigraph on the four
//! nucleotides, one edge per overlapping 2-mer. A uniformly random spanning
//! arborescence of "last exit" edges rooted at the final nucleotide is drawn
//! with Wilson's loop-erased random walk; every other edge list is shuffled
//! and the last-exit edge appended. Walking the lists from the first
//! nucleotide then yields a random Eulerian path with the same endpoints and
//! the same multiset of 2-mers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::encode::base_column;
use super::NucleotideSequence;
use crate::error::{Error, Result};

const LETTERS: [u8; 4] = [b'A', b'T', b'C', b'G'];

/// Overlapping 2-mer counts over `{A,T,C,G}²` (16 entries, row = first base).
pub fn dinucleotide_counts(bases: &str) -> [usize; 16] {
    let mut counts = [0; 16];
    for w in bases.as_bytes().windows(2) {
        if let (Some(a), Some(b)) = (base_column(w[0]), base_column(w[1])) {
            counts[a * 4 + b] += 1;
        }
    }
    counts
}

pub fn dinucleotide_shuffle(seq: &NucleotideSequence, rng_seed: u64) -> Result<NucleotideSequence> {
    let reject = |reason: &str| Error::Rejected {
        id: seq.id.clone(),
        reason: reason.to_string(),
    };
    if seq.has_unknown() {
        return Err(reject("contains N; excluded from shuffling"));
    }
    if seq.len() < 2 {
        return Err(reject("shorter than 2 bases"));
    }
    let bytes: Vec<usize> = seq
        .bases()
        .bytes()
        .map(|b| base_column(b).expect("validated alphabet"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut edges: [Vec<usize>; 4] = Default::default();
    for w in bytes.windows(2) {
        edges[w[0]].push(w[1]);
    }
    let root = *bytes.last().unwrap();

    // Wilson's algorithm on last-exit edges, towards `root`.
    let mut in_tree = [false; 4];
    in_tree[root] = true;
    let mut exit: [Option<usize>; 4] = [None; 4];
    for start in 0..4 {
        if edges[start].is_empty() || in_tree[start] {
            continue;
        }
        let mut u = start;
        while !in_tree[u] {
            let j = rng.random_range(0..edges[u].len());
            exit[u] = Some(j);
            u = edges[u][j];
        }
        let mut u = start;
        while !in_tree[u] {
            in_tree[u] = true;
            u = edges[u][exit[u].unwrap()];
        }
    }

    for (v, list) in edges.iter_mut().enumerate() {
        match exit[v] {
            Some(j) => {
                let last = list.swap_remove(j);
                list.shuffle(&mut rng);
                list.push(last);
            }
            None => list.shuffle(&mut rng),
        }
    }

    let mut cursor = [0usize; 4];
    let mut out = Vec::with_capacity(bytes.len());
    let mut cur = bytes[0];
    out.push(LETTERS[cur]);
    for _ in 1..bytes.len() {
        let next = edges[cur][cursor[cur]];
        cursor[cur] += 1;
        out.push(LETTERS[next]);
        cur = next;
    }
    let bases = String::from_utf8(out).expect("ascii");
    NucleotideSequence::new(format!("{}_shuf", seq.id), &bases, Some(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn seq(s: &str) -> NucleotideSequence {
        NucleotideSequence::new("t", s, Some(1)).unwrap()
    }

    /// Every string with the same 2-mer multiset, first and last base, found
    /// by depth-first enumeration of Eulerian paths.
    fn all_eulerian(s: &str) -> BTreeSet<String> {
        fn go(cur: u8, counts: &mut [usize; 16], path: &mut Vec<u8>, left: usize, end: u8, out: &mut BTreeSet<String>) {
            if left == 0 {
                if cur == end {
                    out.insert(String::from_utf8(path.clone()).unwrap());
                }
                return;
            }
            let a = base_column(cur).unwrap();
            for &nb in &LETTERS {
                let b = base_column(nb).unwrap();
                if counts[a * 4 + b] > 0 {
                    counts[a * 4 + b] -= 1;
                    path.push(nb);
                    go(nb, counts, path, left - 1, end, out);
                    path.pop();
                    counts[a * 4 + b] += 1;
                }
            }
        }
        let b = s.as_bytes();
        let mut counts = dinucleotide_counts(s);
        let mut out = BTreeSet::new();
        go(b[0], &mut counts, &mut vec![b[0]], b.len() - 1, b[b.len() - 1], &mut out);
        out
    }

    #[test]
    fn atat_has_a_unique_eulerian_path() {
        assert_eq!(all_eulerian("ATAT").len(), 1);
        for seed in 0..20 {
            assert_eq!(dinucleotide_shuffle(&seq("ATAT"), seed).unwrap().bases(), "ATAT");
        }
    }

    #[test]
    fn aacg_preserves_counts_and_ends() {
        let out = dinucleotide_shuffle(&seq("AACG"), 7).unwrap();
        assert_eq!(dinucleotide_counts(out.bases()), dinucleotide_counts("AACG"));
        assert!(out.bases().starts_with('A') && out.bases().ends_with('G'));
        assert_eq!(out.label, Some(0));
    }

    #[test]
    fn single_dinucleotide() {
        assert_eq!(dinucleotide_shuffle(&seq("AA"), 1).unwrap().bases(), "AA");
    }

    #[test]
    fn rejections() {
        assert!(dinucleotide_shuffle(&seq("ACNT"), 1).is_err());
        assert!(dinucleotide_shuffle(&seq("A"), 1).is_err());
    }

    #[test]
    fn reaches_every_eulerian_path_uniformly() {
        let s = "ACGTAGCTAGCA";
        let all = all_eulerian(s);
        assert_eq!(all.len(), 42);
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for seed in 0..4200 {
            let out = dinucleotide_shuffle(&seq(s), seed).unwrap();
            assert!(all.contains(out.bases()));
            *seen.entry(out.bases().to_string()).or_default() += 1;
        }
        assert_eq!(seen.keys().cloned().collect::<BTreeSet<_>>(), all);
        // 100 expected per path, sd ~10
        for (path, &n) in &seen {
            assert!((50..=150).contains(&n), "{path} drawn {n} times");
        }
    }

    proptest! {
        #[test]
        fn preserves_dinucleotides(s in "[ACGT]{2,101}", seed in any::<u64>()) {
            let out = dinucleotide_shuffle(&seq(&s), seed).unwrap();
            prop_assert_eq!(out.len(), s.len());
            prop_assert_eq!(dinucleotide_counts(out.bases()), dinucleotide_counts(&s));
            prop_assert_eq!(out.bases().as_bytes()[0], s.as_bytes()[0]);
            prop_assert_eq!(out.bases().as_bytes()[s.len() - 1], s.as_bytes()[s.len() - 1]);
        }
    }
}
