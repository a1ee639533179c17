use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{one_hot_encode, parse_fasta, DatasetManifest, EncodedSequence, NucleotideSequence, Split};
use crate::debruijn::{build_debruijn, DeBruijnGraph, GraphDump};
use crate::error::{Error, Result};

/// One model input: the one-hot window, its graph and the class.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub encoded: EncodedSequence,
    pub graph: DeBruijnGraph,
    pub label: u8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

fn featurize(rec: &NucleotideSequence, k: usize) -> Result<Sample> {
    let label = rec.label.ok_or_else(|| Error::Rejected {
        id: rec.id.clone(),
        reason: "record has no label".into(),
    })?;
    Ok(Sample {
        id: rec.id.clone(),
        encoded: one_hot_encode(rec),
        graph: build_debruijn(rec, k)?,
        label,
    })
}

/// Path of the cached graph dump for one split.
pub fn graph_cache_path(dir: &Path, split: Split, k: usize) -> PathBuf {
    dir.join(format!("{}.k{k}.graphs.jsonl", split.as_str()))
}

impl Dataset {
    /// Encodes labelled records in parallel; output order follows input order.
    pub fn from_records(records: &[NucleotideSequence], k: usize) -> Result<Self> {
        let samples = records
            .par_iter()
            .map(|r| featurize(r, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples })
    }

    /// Loads the records of `split` in manifest order. Labels come from the
    /// manifest. Entry paths are relative to the manifest's directory.
    pub fn from_manifest(manifest_path: &Path, split: Split, k: usize) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let dir = manifest_path.parent().unwrap_or(Path::new("."));
        let records = split_records(&manifest, dir, split)?;
        let data = Self::from_records(&records, k)?;
        let cache = graph_cache_path(dir, split, k);
        if cache.exists() {
            data.verify_graph_cache(&cache)?;
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// `(positives, negatives)`.
    pub fn class_counts(&self) -> (usize, usize) {
        let p = self.samples.iter().filter(|s| s.label == 1).count();
        (p, self.len() - p)
    }

    pub fn extend(&mut self, other: Dataset) {
        self.samples.extend(other.samples);
    }

    /// Writes one graph dump per line.
    pub fn write_graph_cache(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for s in &self.samples {
            serde_json::to_writer(&mut f, &s.graph.dump())?;
            f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        f.flush().map_err(|e| Error::io(path, e))
    }

    /// Checks that a cached dump agrees with graphs rebuilt from the sequences.
    pub fn verify_graph_cache(&self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != self.len() {
            return Err(Error::Contract(format!(
                "{}: {} cached graphs for {} samples",
                path.display(),
                lines.len(),
                self.len()
            )));
        }
        for (i, (line, s)) in lines.iter().zip(&self.samples).enumerate() {
            let dump: GraphDump = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if dump != s.graph.dump() {
                return Err(Error::Contract(format!(
                    "{}: cached graph {} does not match sequence '{}'",
                    path.display(),
                    i + 1,
                    s.id
                )));
            }
        }
        Ok(())
    }
}

fn split_records(manifest: &DatasetManifest, dir: &Path, split: Split) -> Result<Vec<NucleotideSequence>> {
    let mut files: BTreeMap<&str, Vec<NucleotideSequence>> = BTreeMap::new();
    let mut out = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.split == split) {
        if !files.contains_key(e.path.as_str()) {
            files.insert(&e.path, parse_fasta(&dir.join(&e.path))?);
        }
        let recs = &files[e.path.as_str()];
        let rec = recs.get(e.offset).ok_or_else(|| {
            Error::Contract(format!("{}: no record at offset {}", e.path, e.offset))
        })?;
        out.push(rec.clone().with_label(e.label));
    }
    Ok(out)
}
