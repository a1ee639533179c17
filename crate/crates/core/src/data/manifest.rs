use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fasta::{parse_fasta, write_fasta};
use super::shuffle::dinucleotide_shuffle;
use super::NucleotideSequence;
use crate::error::{Error, Result};

/// Train / validation / test fractions.
pub const SPLIT_FRACTIONS: [f64; 3] = [0.70, 0.10, 0.20];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// FASTA file, relative to the manifest's directory.
    pub path: String,
    /// Record index within that file.
    pub offset: usize,
    pub split: Split,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub seed: u64,
    pub split_fractions: [f64; 3],
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// `(positives, negatives)` in a split.
    pub fn class_counts(&self, split: Split) -> (usize, usize) {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .fold((0, 0), |(p, n), e| if e.label == 1 { (p + 1, n) } else { (p, n + 1) })
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedRecord {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct BuildReport {
    pub manifest: DatasetManifest,
    pub manifest_path: PathBuf,
    pub skipped: Vec<SkippedRecord>,
}

/// Per-record shuffle seed derived from the manifest seed.
fn record_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn split_sizes(n: usize) -> [usize; 3] {
    let part = |f: f64| ((n as f64) * f).round() as usize;
    let train = part(SPLIT_FRACTIONS[0]).min(n);
    let val = part(SPLIT_FRACTIONS[1]).min(n - train);
    [train, val, n - train - val]
}

/// Reads positives from FASTA and delegates to [`build_manifest_from_records`].
pub fn build_manifest(positives: &Path, seed: u64, out: &Path) -> Result<BuildReport> {
    let records = parse_fasta(positives)?;
    let name = positives
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    build_manifest_from_records(&name, records, seed, out)
}

/// Pairs every usable positive with one dinucleotide-shuffled negative,
/// splits each class 70/10/20 after a seeded shuffle, and writes
/// `{train,val,test}.fasta`, `manifest.json` and `skipped.tsv` into `out`.
/// Positives containing `N` (or shorter than 2 bases) are skipped together
/// with their would-be negative.
pub fn build_manifest_from_records(
    name: &str,
    records: Vec<NucleotideSequence>,
    seed: u64,
    out: &Path,
) -> Result<BuildReport> {
    if records.is_empty() {
        return Err(Error::Contract("positive set is empty".into()));
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut skipped = Vec::new();
    for (i, rec) in records.into_iter().enumerate() {
        match dinucleotide_shuffle(&rec, record_seed(seed, i)) {
            Ok(neg) => {
                positives.push(rec.with_label(1));
                negatives.push(neg);
            }
            Err(Error::Rejected { id, reason }) => skipped.push(SkippedRecord { id, reason }),
            Err(e) => return Err(e),
        }
    }
    if positives.is_empty() {
        return Err(Error::Contract("no usable positive sequences".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = split_sizes(positives.len());
    let mut buckets: [Vec<NucleotideSequence>; 3] = Default::default();
    for class in [positives, negatives] {
        let mut order: Vec<usize> = (0..class.len()).collect();
        order.shuffle(&mut rng);
        let mut start = 0;
        for (bucket, &len) in buckets.iter_mut().zip(&sizes) {
            bucket.extend(order[start..start + len].iter().map(|&i| class[i].clone()));
            start += len;
        }
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::new();
    for (split, mut bucket) in Split::ALL.into_iter().zip(buckets) {
        bucket.shuffle(&mut rng);
        let file = format!("{}.fasta", split.as_str());
        write_fasta(&out.join(&file), &bucket)?;
        entries.extend(bucket.iter().enumerate().map(|(offset, r)| ManifestEntry {
            path: file.clone(),
            offset,
            split,
            label: r.label.unwrap_or(0),
        }));
    }

    let manifest = DatasetManifest {
        name: name.to_string(),
        seed,
        split_fractions: SPLIT_FRACTIONS,
        entries,
    };
    let manifest_path = out.join("manifest.json");
    manifest.save(&manifest_path)?;

    let mut report = String::from("id\treason\n");
    for s in &skipped {
        writeln!(report, "{}\t{}", s.id, s.reason).expect("write to string");
    }
    let skipped_path = out.join("skipped.tsv");
    std::fs::write(&skipped_path, report).map_err(|e| Error::io(&skipped_path, e))?;

    Ok(BuildReport {
        manifest,
        manifest_path,
        skipped,
    })
}
