use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::NucleotideSequence;
use crate::error::{Error, Result};

/// `n` uniform random sequences of length `len`, each with `motif` written
/// at a uniformly random offset. Records are labelled positive.
pub fn planted_motif(n: usize, len: usize, motif: &str, seed: u64) -> Result<Vec<NucleotideSequence>> {
    let motif = motif.to_ascii_uppercase();
    if motif.is_empty() || motif.len() > len || !motif.bytes().all(|b| b"ACGT".contains(&b)) {
        return Err(Error::Config(format!("motif '{motif}' does not fit a length-{len} ACGT window")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut s: Vec<u8> = (0..len).map(|_| b"ACGT"[rng.random_range(0..4)]).collect();
            let at = rng.random_range(0..=len - motif.len());
            s[at..at + motif.len()].copy_from_slice(motif.as_bytes());
            let text = String::from_utf8(s).expect("ascii");
            NucleotideSequence::new(format!("{motif}_{i}"), &text, Some(1))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_record_carries_the_motif() {
        let recs = planted_motif(50, 101, "TATAAT", 3).unwrap();
        assert_eq!(recs.len(), 50);
        assert!(recs.iter().all(|r| r.len() == 101 && r.bases().contains("TATAAT") && r.label == Some(1)));
        assert_eq!(recs, planted_motif(50, 101, "tataat", 3).unwrap());
    }

    #[test]
    fn rejects_bad_motifs() {
        assert!(planted_motif(1, 4, "TATAAT", 0).is_err());
        assert!(planted_motif(1, 10, "TANA", 0).is_err());
    }
}
