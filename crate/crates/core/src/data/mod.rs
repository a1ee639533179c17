//! Sequence ingestion: FASTA parsing, one-hot encoding, shuffled negatives
//! and train/validation/test manifests.

mod dataset;
mod encode;
mod fasta;
mod manifest;
mod shuffle;
mod synth;

pub use dataset::{graph_cache_path, Dataset, Sample};
pub use encode::{base_column, one_hot_encode, EncodedSequence, ONE_HOT_COLUMNS};
pub use fasta::{parse_fasta, parse_fasta_str, write_fasta};
pub use manifest::{
    build_manifest, build_manifest_from_records, BuildReport, DatasetManifest, ManifestEntry,
    SkippedRecord, Split, SPLIT_FRACTIONS,
};
pub use shuffle::{dinucleotide_counts, dinucleotide_shuffle};
pub use synth::planted_motif;

use crate::error::{Error, Result};

/// A named nucleotide window over `{A, C, G, T, N}`, stored uppercase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NucleotideSequence {
    pub id: String,
    bases: String,
    /// 1 = contains a binding site, 0 = negative.
    pub label: Option<u8>,
}

impl NucleotideSequence {
    /// Uppercases `bases` and rejects anything outside `{A, C, G, T, N}`.
    pub fn new(id: impl Into<String>, bases: &str, label: Option<u8>) -> Result<Self> {
        let id = id.into();
        let mut canonical = String::with_capacity(bases.len());
        for (i, ch) in bases.chars().enumerate() {
            let up = ch.to_ascii_uppercase();
            if !matches!(up, 'A' | 'C' | 'G' | 'T' | 'N') {
                return Err(Error::InvalidBase {
                    id,
                    ch,
                    position: i + 1,
                });
            }
            canonical.push(up);
        }
        if let Some(l) = label {
            if l > 1 {
                return Err(Error::Rejected {
                    id,
                    reason: format!("label {l} is not binary"),
                });
            }
        }
        Ok(NucleotideSequence {
            id,
            bases: canonical,
            label,
        })
    }

    pub fn bases(&self) -> &str {
        &self.bases
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn has_unknown(&self) -> bool {
        self.bases.contains('N')
    }

    /// Checks the minimum-length invariant for graph order `k`.
    pub fn validate_len(&self, k: usize) -> Result<()> {
        if self.len() < k {
            return Err(Error::Rejected {
                id: self.id.clone(),
                reason: format!("length {} is shorter than k = {k}", self.len()),
            });
        }
        Ok(())
    }

    pub fn with_label(mut self, label: u8) -> Self {
        self.label = Some(label);
        self
    }
}
