use rayon::prelude::*;

use super::config::ModelConfig;
use crate::autodiff::{Element, Tape, Tensor, Var};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::{
    AttentionBlock, BiLstm, BlockCommon, Builder, ConvBlock, DenseSoftmax, Forward, Gcn, Lstm, MinCutPool, Mode,
    ParamStore, TraceRow,
};

/// Stacked model inputs for `B` samples of equal length.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[B, L, 4]`
    pub onehot: Tensor<T>,
    /// `[B, N, 4k]`
    pub features: Tensor<T>,
    /// `[B, N, N]`, normalised.
    pub adjacency: Tensor<T>,
    /// `[B, 2]` one-hot classes.
    pub targets: Tensor<T>,
    pub labels: Vec<u8>,
}

impl<T: Element> Batch<T> {
    pub fn from_samples(samples: &[&Sample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let (l, n, f) = (
            first.encoded.len(),
            first.graph.node_count(),
            first.graph.feature_width(),
        );
        let b = samples.len();
        let mut onehot = Vec::with_capacity(b * l * 4);
        let mut features = Vec::with_capacity(b * n * f);
        let mut adjacency = Vec::with_capacity(b * n * n);
        let mut targets = Vec::with_capacity(b * 2);
        for s in samples {
            if s.encoded.len() != l || s.graph.node_count() != n || s.graph.feature_width() != f {
                return Err(Error::Contract(format!(
                    "sample '{}' has length {} but the batch uses {l}",
                    s.id,
                    s.encoded.len()
                )));
            }
            onehot.extend(s.encoded.onehot.iter().flatten().map(|&v| T::of(v as f64)));
            features.extend(s.graph.features().iter().map(|&v| T::of(v as f64)));
            adjacency.extend(s.graph.norm_adjacency().iter().map(|&v| T::of(v)));
            targets.push(T::of(if s.label == 0 { 1.0 } else { 0.0 }));
            targets.push(T::of(if s.label == 1 { 1.0 } else { 0.0 }));
        }
        Ok(Batch {
            onehot: Tensor::from_vec(&[b, l, 4], onehot)?,
            features: Tensor::from_vec(&[b, n, f], features)?,
            adjacency: Tensor::from_vec(&[b, n, n], adjacency)?,
            targets: Tensor::from_vec(&[b, 2], targets)?,
            labels: samples.iter().map(|s| s.label).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct SequenceBranch {
    pub blocks: Vec<ConvBlock>,
    pub attention: AttentionBlock,
    pub bilstm: BiLstm,
    pub lstm: Lstm,
}

#[derive(Clone, Debug)]
pub struct GraphBranch {
    pub gcns: Vec<Gcn>,
    pub pools: Vec<MinCutPool>,
    pub bilstm: BiLstm,
    pub lstm: Lstm,
}

/// Layer structure of a model; parameters live in a separate store.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    pub sequence: Option<SequenceBranch>,
    pub graph: Option<GraphBranch>,
    pub head: DenseSoftmax,
}

/// Forward-pass outputs for a batch.
#[derive(Clone, Copy, Debug)]
pub struct Output {
    pub logits: Var,
    /// `[B, 2]`; column 1 is the binding-site probability.
    pub probs: Var,
    pub sequence_features: Option<Var>,
    pub graph_features: Option<Var>,
}

impl Network {
    pub fn build<T: Element>(config: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::new(store, seed);
        let sequence = if config.variant.has_sequence() {
            b.push("seq");
            let common = BlockCommon {
                prelu_init: config.prelu_init,
                bn_momentum: config.bn_momentum,
                bn_eps: config.bn_eps,
            };
            let mut blocks = Vec::new();
            let mut channels = 4;
            for (i, cfg) in config.conv_blocks.iter().enumerate() {
                blocks.push(ConvBlock::new(&mut b, &format!("block{}", i + 1), channels, *cfg, common)?);
                channels = cfg.filters;
            }
            let attention = AttentionBlock::new(
                &mut b,
                "attention",
                channels,
                config.attention_width,
                config.attention_kernel,
                config.attention_heads,
            )?;
            let bilstm = BiLstm::new(&mut b, "bilstm", config.attention_width, config.seq_bilstm_hidden)?;
            let lstm = Lstm::new(&mut b, "lstm", config.seq_bilstm_hidden, config.seq_lstm_hidden)?;
            b.pop();
            Some(SequenceBranch {
                blocks,
                attention,
                bilstm,
                lstm,
            })
        } else {
            None
        };
        let graph = if config.variant.has_graph() {
            b.push("graph");
            let mut gcns = Vec::new();
            let mut pools = Vec::new();
            let mut width = 4 * config.k;
            for (i, &w) in config.gcn_widths.iter().enumerate() {
                if i > 0 {
                    pools.push(MinCutPool::new(&mut b, &format!("pool{i}"), width, config.clusters[i - 1])?);
                }
                gcns.push(Gcn::new(&mut b, &format!("gcn{}", i + 1), width, w)?);
                width = w;
            }
            let bilstm = BiLstm::new(&mut b, "bilstm", width, config.graph_bilstm_hidden)?;
            let lstm = Lstm::new(&mut b, "lstm", config.graph_bilstm_hidden, config.graph_lstm_hidden)?;
            b.pop();
            Some(GraphBranch {
                gcns,
                pools,
                bilstm,
                lstm,
            })
        } else {
            None
        };
        let head = DenseSoftmax::new(&mut b, "head", config.head_width(), 2)?;
        Ok(Network {
            config: config.clone(),
            sequence,
            graph,
            head,
        })
    }

    fn sequence_forward<T: Element>(&self, br: &SequenceBranch, cx: &mut Forward<T>, x: Var) -> Result<Var> {
        let mut y = x;
        for (i, block) in br.blocks.iter().enumerate() {
            let name = format!("Convolution Block {}", i + 1);
            if i == 0 {
                cx.record(&name, "Input Layer", y);
            }
            y = block.forward(cx, y, &name)?;
        }
        let y = br.attention.forward(cx, y, "Attention Block")?;
        let y = br.bilstm.forward(cx, y)?;
        cx.record("Recurrent Block 1", "Bidirectional LSTM", y);
        let y = br.lstm.last(cx, y)?;
        cx.record("Recurrent Block 1", "LSTM", y);
        Ok(y)
    }

    fn graph_forward<T: Element>(&self, br: &GraphBranch, cx: &mut Forward<T>, x: Var, a: Var) -> Result<Var> {
        cx.record("Graph Block 1", "Graph Input Layer", x);
        let mut x = br.gcns[0].forward(cx, x, a)?;
        cx.record("Graph Block 1", "GCNConv", x);
        let mut a = a;
        for (i, (pool, gcn)) in br.pools.iter().zip(&br.gcns[1..]).enumerate() {
            let name = format!("Graph Block {}", i + 2);
            let p = pool.forward(cx, x, a)?;
            cx.record(&name, "MinCutPool", p.x);
            x = gcn.forward(cx, p.x, p.a)?;
            cx.record(&name, "GCNConv", x);
            a = p.a;
        }
        let y = br.bilstm.forward(cx, x)?;
        cx.record("Recurrent Block 2", "Bidirectional LSTM", y);
        let y = br.lstm.last(cx, y)?;
        cx.record("Recurrent Block 2", "LSTM", y);
        Ok(y)
    }

    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, batch: &Batch<T>) -> Result<Output> {
        let seq = match &self.sequence {
            Some(br) => {
                let x = cx.constant(batch.onehot.clone());
                Some(self.sequence_forward(br, cx, x)?)
            }
            None => None,
        };
        let graph = match &self.graph {
            Some(br) => {
                let x = cx.constant(batch.features.clone());
                let a = cx.constant(batch.adjacency.clone());
                Some(self.graph_forward(br, cx, x, a)?)
            }
            None => None,
        };
        let joined = match (seq, graph) {
            (Some(s), Some(g)) => {
                let j = cx.tape.concat(&[s, g], 1).map_err(|e| e.in_layer("concatenate"))?;
                cx.record("Output Block", "Concatenate", j);
                j
            }
            (Some(v), None) | (None, Some(v)) => v,
            (None, None) => return Err(Error::Config("model has no branch".into())),
        };
        let (logits, probs) = self.head.forward(cx, joined)?;
        cx.record("Output Block", "Dense", probs);
        Ok(Output {
            logits,
            probs,
            sequence_features: seq,
            graph_features: graph,
        })
    }

    /// Learnable scalars per block, in layer-table order.
    pub fn parameter_blocks(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        if let Some(s) = &self.sequence {
            for (i, b) in s.blocks.iter().enumerate() {
                out.push((format!("Convolution Block {}", i + 1), b.param_count()));
            }
            out.push(("Attention Block".into(), s.attention.param_count()));
            out.push((
                "Recurrent Block 1".into(),
                s.bilstm.param_count() + s.lstm.param_count(),
            ));
        }
        if let Some(g) = &self.graph {
            for (i, gcn) in g.gcns.iter().enumerate() {
                let pool = if i > 0 { g.pools[i - 1].param_count() } else { 0 };
                out.push((format!("Graph Block {}", i + 1), pool + gcn.param_count()));
            }
            out.push((
                "Recurrent Block 2".into(),
                g.bilstm.param_count() + g.lstm.param_count(),
            ));
        }
        out.push(("Output Block".into(), self.head.param_count()));
        out
    }
}

/// A network with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub params: ParamStore<T>,
    pub net: Network,
}

/// Total and per-block learnable parameter counts.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct ParameterCount {
    pub total: usize,
    pub blocks: Vec<(String, usize)>,
}

impl<T: Element> Model<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = Network::build(config, &mut params, seed)?;
        Ok(Model { params, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn count_parameters(&self) -> ParameterCount {
        let blocks = self.net.parameter_blocks();
        ParameterCount {
            total: blocks.iter().map(|(_, n)| n).sum(),
            blocks,
        }
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            params: self.params.cast(),
            net: self.net.clone(),
        }
    }

    /// Per-sample output shapes of every layer for one input.
    pub fn shape_trace(&self, sample: &Sample) -> Result<Vec<TraceRow>> {
        let batch = Batch::from_samples(&[sample])?;
        let mut tape = Tape::new();
        let mut cx = Forward::new(&mut tape, &self.params, Mode::Infer, false, 0).with_trace();
        self.net.forward(&mut cx, &batch)?;
        Ok(cx.take_trace())
    }

    /// Class probabilities in infer mode, batches evaluated in parallel.
    pub fn predict(&self, samples: &[Sample], batch_size: usize) -> Result<Vec<[f64; 2]>> {
        let chunks: Vec<Vec<&Sample>> = samples
            .chunks(batch_size.max(1))
            .map(|c| c.iter().collect())
            .collect();
        let parts = chunks
            .par_iter()
            .map(|chunk| self.predict_batch(&Batch::from_samples(chunk)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.into_iter().flatten().collect())
    }

    pub fn predict_batch(&self, batch: &Batch<T>) -> Result<Vec<[f64; 2]>> {
        let mut tape = Tape::new();
        let mut cx = Forward::new(&mut tape, &self.params, Mode::Infer, false, 0);
        let out = self.net.forward(&mut cx, batch)?;
        let p = cx.value(out.probs).to_f64_vec();
        Ok(p.chunks(2).map(|r| [r[0], r[1]]).collect())
    }
}
