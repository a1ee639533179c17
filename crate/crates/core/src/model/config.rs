use serde::{Deserialize, Serialize};

use crate::autodiff::Padding;
use crate::error::{Error, Result};
use crate::nn::{ConvBlockConfig, PoolConfig};

/// Which branches feed the output head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Sequence and graph branches, head on `[seq | graph]`.
    #[serde(rename = "GCBLANE")]
    Gcblane,
    /// Sequence branch only.
    #[serde(rename = "CBLANE")]
    Cblane,
    /// Graph branch only.
    #[serde(rename = "GNN_ONLY")]
    GnnOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Gcblane, Variant::Cblane, Variant::GnnOnly];

    pub fn has_sequence(self) -> bool {
        self != Variant::GnnOnly
    }

    pub fn has_graph(self) -> bool {
        self != Variant::Cblane
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Gcblane => "GCBLANE",
            Variant::Cblane => "CBLANE",
            Variant::GnnOnly => "GNN_ONLY",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "GCBLANE" => Ok(Variant::Gcblane),
            "CBLANE" => Ok(Variant::Cblane),
            "GNN_ONLY" | "GNN" => Ok(Variant::GnnOnly),
            _ => Err(Error::Config(format!("unknown variant '{s}'"))),
        }
    }
}

/// Architecture description. Defaults reproduce the published layer table
/// for 101-bp windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub conv_blocks: Vec<ConvBlockConfig>,
    /// Initial PReLU slope.
    pub prelu_init: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub attention_width: usize,
    pub attention_heads: usize,
    pub attention_kernel: usize,
    pub seq_bilstm_hidden: usize,
    pub seq_lstm_hidden: usize,
    /// De Bruijn graph order.
    pub k: usize,
    pub gcn_widths: Vec<usize>,
    /// Clusters of each MinCut pool; one fewer than `gcn_widths`.
    pub clusters: Vec<usize>,
    pub graph_bilstm_hidden: usize,
    pub graph_lstm_hidden: usize,
}

fn block(filters: usize, kernel: usize, stride: usize, padding: Padding) -> ConvBlockConfig {
    ConvBlockConfig {
        filters,
        kernel,
        pool: PoolConfig {
            size: 2,
            stride,
            padding,
        },
        dropout: 0.2,
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Gcblane,
            conv_blocks: vec![
                block(256, 11, 1, Padding::Same),
                block(128, 7, 1, Padding::Same),
                block(64, 5, 2, Padding::Valid),
                block(64, 3, 2, Padding::Valid),
            ],
            prelu_init: 0.25,
            bn_momentum: 0.99,
            bn_eps: 1e-3,
            attention_width: 64,
            attention_heads: 8,
            attention_kernel: 1,
            seq_bilstm_hidden: 64,
            seq_lstm_hidden: 64,
            k: 3,
            gcn_widths: vec![128, 64, 16],
            clusters: vec![40, 12],
            graph_bilstm_hidden: 64,
            graph_lstm_hidden: 16,
        }
    }
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.conv_blocks.is_empty() {
            return bad("conv_blocks must not be empty".into());
        }
        for (i, b) in self.conv_blocks.iter().enumerate() {
            if b.filters == 0 || b.kernel == 0 || b.pool.size == 0 || b.pool.stride == 0 {
                return bad(format!("conv_blocks[{i}]: sizes must be positive"));
            }
            if !(0.0..1.0).contains(&b.dropout) {
                return bad(format!("conv_blocks[{i}].dropout must be in [0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return bad("bn_momentum must be in [0, 1) and bn_eps positive".into());
        }
        if self.attention_heads == 0 || self.attention_width % self.attention_heads != 0 {
            return bad(format!(
                "attention_heads {} must divide attention_width {}",
                self.attention_heads, self.attention_width
            ));
        }
        let positive = [
            ("attention_width", self.attention_width),
            ("attention_kernel", self.attention_kernel),
            ("seq_bilstm_hidden", self.seq_bilstm_hidden),
            ("seq_lstm_hidden", self.seq_lstm_hidden),
            ("graph_bilstm_hidden", self.graph_bilstm_hidden),
            ("graph_lstm_hidden", self.graph_lstm_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if self.gcn_widths.is_empty() || self.gcn_widths.contains(&0) || self.clusters.contains(&0) {
            return bad("gcn_widths and clusters must be positive".into());
        }
        if self.clusters.len() + 1 != self.gcn_widths.len() {
            return bad(format!(
                "{} GCN layers need {} cluster counts, got {}",
                self.gcn_widths.len(),
                self.gcn_widths.len() - 1,
                self.clusters.len()
            ));
        }
        if self.clusters.windows(2).any(|w| w[1] >= w[0]) {
            return bad("cluster counts must strictly decrease".into());
        }
        Ok(())
    }

    /// Width of the head input.
    pub fn head_width(&self) -> usize {
        let mut w = 0;
        if self.variant.has_sequence() {
            w += self.seq_lstm_hidden;
        }
        if self.variant.has_graph() {
            w += self.graph_lstm_hidden;
        }
        w
    }

    /// Sequence length after the convolution stack, if every pool fits.
    pub fn conv_out_len(&self, len: usize) -> Option<usize> {
        self.conv_blocks.iter().try_fold(len, |l, b| {
            b.pool
                .padding
                .pool_geometry(l, b.pool.size, b.pool.stride)
                .map(|(o, _)| o)
        })
    }

    /// Dotted path of the first field where `self` and `other` differ.
    pub fn first_difference(&self, other: &ModelConfig) -> Option<String> {
        let a = serde_json::to_value(self).expect("config serialises");
        let b = serde_json::to_value(other).expect("config serialises");
        diff_path(&a, &b, "")
    }
}

fn diff_path(a: &serde_json::Value, b: &serde_json::Value, at: &str) -> Option<String> {
    use serde_json::Value;
    let join = |k: &str| if at.is_empty() { k.to_string() } else { format!("{at}.{k}") };
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            keys.into_iter().find_map(|k| match (x.get(k), y.get(k)) {
                (Some(u), Some(v)) => diff_path(u, v, &join(k)),
                _ => Some(join(k)),
            })
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => x
            .iter()
            .zip(y)
            .enumerate()
            .find_map(|(i, (u, v))| diff_path(u, v, &format!("{at}[{i}]"))),
        _ if a == b => None,
        _ => Some(if at.is_empty() { "<root>".into() } else { at.to_string() }),
    }
}
