//! Positional k-mer de Bruijn graphs.
//!
//! Node `i` is the k-mer at positions `[i, i+k)`; consecutive k-mers overlap
//! by `k−1` bases and are joined by an undirected edge. Repeated k-mers are
//! separate nodes, so a length-`L` window always yields `L−k+1` nodes.

use serde::{Deserialize, Serialize};

use crate::data::{base_column, NucleotideSequence};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct DeBruijnGraph {
    k: usize,
    kmers: Vec<String>,
    /// `N × 4k` concatenated one-hot rows, row-major.
    features: Vec<u8>,
    /// `N × N` symmetric 0/1 matrix with zero diagonal.
    adjacency: Vec<u8>,
    /// `D̂^(−1/2) (A + I) D̂^(−1/2)`, row-major.
    norm_adjacency: Vec<f64>,
}

/// Debug dump: `{k, nodes: [kmer], edges: [[i, j]]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDump {
    pub k: usize,
    pub nodes: Vec<String>,
    pub edges: Vec<[usize; 2]>,
}

fn kmer_features(kmer: &str, out: &mut Vec<u8>) {
    for b in kmer.bytes() {
        let mut row = [0u8; 4];
        if let Some(c) = base_column(b) {
            row[c] = 1;
        }
        out.extend_from_slice(&row);
    }
}

pub fn build_debruijn(seq: &NucleotideSequence, k: usize) -> Result<DeBruijnGraph> {
    if k < 2 {
        return Err(Error::Config(format!("graph order k must be at least 2, got {k}")));
    }
    seq.validate_len(k)?;
    let n = seq.len() - k + 1;
    let kmers: Vec<String> = (0..n).map(|i| seq.bases()[i..i + k].to_string()).collect();
    let edges: Vec<[usize; 2]> = (1..n).map(|i| [i - 1, i]).collect();
    DeBruijnGraph::assemble(k, kmers, &edges)
}

/// `D̂^(−1/2) (A + I) D̂^(−1/2)` for a binary symmetric `n × n` matrix with
/// zero diagonal, given row-major.
pub fn normalize_adjacency(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::Contract(format!(
            "adjacency has {} entries, expected {n}×{n}",
            a.len()
        )));
    }
    for i in 0..n {
        if a[i * n + i] != 0.0 {
            return Err(Error::Contract(format!("adjacency diagonal entry {i} is nonzero")));
        }
        for j in 0..n {
            let v = a[i * n + j];
            if v != 0.0 && v != 1.0 {
                return Err(Error::Contract(format!("adjacency entry ({i},{j}) = {v} is not binary")));
            }
            if v != a[j * n + i] {
                return Err(Error::Contract(format!("adjacency is not symmetric at ({i},{j})")));
            }
        }
    }
    let deg: Vec<f64> = (0..n)
        .map(|i| 1.0 + a[i * n..(i + 1) * n].iter().sum::<f64>())
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let hat = a[i * n + j] + if i == j { 1.0 } else { 0.0 };
            if hat != 0.0 {
                // product order is irrelevant, so (i,j) and (j,i) agree bit for bit
                out[i * n + j] = hat / (deg[i] * deg[j]).sqrt();
            }
        }
    }
    Ok(out)
}

impl DeBruijnGraph {
    fn assemble(k: usize, kmers: Vec<String>, edges: &[[usize; 2]]) -> Result<Self> {
        let n = kmers.len();
        let mut features = Vec::with_capacity(n * 4 * k);
        for km in &kmers {
            if km.len() != k {
                return Err(Error::Contract(format!("k-mer '{km}' does not have length {k}")));
            }
            kmer_features(km, &mut features);
        }
        let mut adjacency = vec![0u8; n * n];
        for &[i, j] in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::Contract(format!("bad edge [{i}, {j}] for {n} nodes")));
            }
            adjacency[i * n + j] = 1;
            adjacency[j * n + i] = 1;
        }
        let dense: Vec<f64> = adjacency.iter().map(|&v| v as f64).collect();
        let norm_adjacency = normalize_adjacency(&dense, n)?;
        Ok(DeBruijnGraph {
            k,
            kmers,
            features,
            adjacency,
            norm_adjacency,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn node_count(&self) -> usize {
        self.kmers.len()
    }

    pub fn feature_width(&self) -> usize {
        4 * self.k
    }

    pub fn kmers(&self) -> &[String] {
        &self.kmers
    }

    pub fn features(&self) -> &[u8] {
        &self.features
    }

    pub fn adjacency(&self) -> &[u8] {
        &self.adjacency
    }

    pub fn norm_adjacency(&self) -> &[f64] {
        &self.norm_adjacency
    }

    pub fn edges(&self) -> Vec<[usize; 2]> {
        let n = self.node_count();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency[i * n + j] == 1 {
                    out.push([i, j]);
                }
            }
        }
        out
    }

    /// First base of each node followed by the tail of the last node.
    pub fn reconstruct(&self) -> String {
        let mut s: String = self.kmers.iter().filter_map(|km| km.chars().next()).collect();
        if let Some(last) = self.kmers.last() {
            s.push_str(&last[1..]);
        }
        s
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump {
            k: self.k,
            nodes: self.kmers.clone(),
            edges: self.edges(),
        }
    }

    pub fn from_dump(dump: &GraphDump) -> Result<Self> {
        Self::assemble(dump.k, dump.nodes.clone(), &dump.edges)
    }
}
