mod common;

use common::{random_dataset, LAYER_TABLE};
use gcblane_core::autodiff::{Tape, Tensor};
use gcblane_core::model::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Batch, Model, ModelConfig, Variant,
};
use gcblane_core::nn::{Forward, Mode};
use gcblane_core::train::cross_entropy;
use gcblane_core::Error;

#[test]
fn layer_shapes_follow_the_architecture_table() {
    let data = random_dataset(1, 101, 1);
    let model = Model::<f32>::new(&ModelConfig::default(), 0).unwrap();
    let t0 = std::time::Instant::now();
    let trace = model.shape_trace(&data.samples[0]).unwrap();
    assert!(t0.elapsed().as_secs_f64() < 1.0);
    assert_eq!(trace.len(), LAYER_TABLE.len());
    for (row, (block, layer, shape)) in trace.iter().zip(LAYER_TABLE) {
        assert_eq!((row.block.as_str(), row.layer.as_str(), row.shape.as_slice()), (block, layer, shape));
    }
}

#[test]
fn variants_trace_only_their_branch() {
    let data = random_dataset(1, 101, 1);
    for (v, head) in [(Variant::Cblane, 64), (Variant::GnnOnly, 16)] {
        let model = Model::<f32>::new(&ModelConfig::default().with_variant(v), 0).unwrap();
        let trace = model.shape_trace(&data.samples[0]).unwrap();
        assert!(trace.iter().all(|r| r.layer != "Concatenate"));
        let last = trace.last().unwrap();
        assert_eq!((last.layer.as_str(), last.shape.as_slice()), ("Dense", &[2usize][..]));
        assert_eq!(model.config().head_width(), head);
        let graph = trace.iter().any(|r| r.block.starts_with("Graph"));
        assert_eq!(graph, v == Variant::GnnOnly);
    }
}

fn lstm(input: usize, hidden: usize) -> usize {
    4 * hidden * input + 4 * hidden * hidden + 4 * hidden
}

fn dense(input: usize, output: usize) -> usize {
    input * output + output
}

/// Closed-form learnable parameter count recomputed from the configuration.
fn closed_form(c: &ModelConfig) -> usize {
    let mut n = 0;
    let mut seq_out = 0;
    if c.variant.has_sequence() {
        let mut cin = 4;
        for b in &c.conv_blocks {
            // conv kernel and bias, PReLU slopes, BN gamma and beta
            n += b.kernel * cin * b.filters + b.filters + b.filters + 2 * b.filters;
            cin = b.filters;
        }
        n += c.attention_kernel * cin * c.attention_width + c.attention_width;
        n += 4 * dense(c.attention_width, c.attention_width);
        n += 2 * lstm(c.attention_width, c.seq_bilstm_hidden);
        n += lstm(c.seq_bilstm_hidden, c.seq_lstm_hidden);
        seq_out = c.seq_lstm_hidden;
    }
    let mut graph_out = 0;
    if c.variant.has_graph() {
        let mut fin = 4 * c.k;
        for (i, &w) in c.gcn_widths.iter().enumerate() {
            if i > 0 {
                n += dense(fin, c.clusters[i - 1]);
            }
            n += dense(fin, w);
            fin = w;
        }
        n += 2 * lstm(fin, c.graph_bilstm_hidden);
        n += lstm(c.graph_bilstm_hidden, c.graph_lstm_hidden);
        graph_out = c.graph_lstm_hidden;
    }
    n + dense(seq_out + graph_out, 2)
}

#[test]
fn parameter_counts_match_closed_forms() {
    for v in Variant::ALL {
        let cfg = ModelConfig::default().with_variant(v);
        let model = Model::<f32>::new(&cfg, 0).unwrap();
        let count = model.count_parameters();
        assert_eq!(count.total, closed_form(&cfg), "{v:?}");
        assert_eq!(count.total, count.blocks.iter().map(|b| b.1).sum::<usize>());
        assert_eq!(count.total, model.params.trainable_count());
    }
    let model = Model::<f32>::new(&ModelConfig::default(), 0).unwrap();
    let blocks = model.count_parameters().blocks;
    let get = |name: &str| blocks.iter().find(|b| b.0 == name).unwrap().1;
    assert_eq!(get("Output Block"), 162);
    assert_eq!(get("Graph Block 1"), 1664);
}

#[test]
fn outputs_are_distributions_and_inference_is_deterministic() {
    let data = random_dataset(6, 101, 2);
    let model = Model::<f32>::new(&ModelConfig::default(), 3).unwrap();
    let a = model.predict(&data.samples, 4).unwrap();
    let b = model.predict(&data.samples, 3).unwrap();
    assert_eq!(a, b);
    for p in &a {
        assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let twice = vec![data.samples[0].clone(), data.samples[0].clone()];
    let p = model.predict(&twice, 2).unwrap();
    assert_eq!(p[0], p[1]);
}

#[test]
fn checkpoint_round_trip_is_exact_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let data = random_dataset(4, 101, 4);
    let model = Model::<f32>::new(&ModelConfig::default(), 5).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path, Some(&ModelConfig::default())).unwrap();
    assert_eq!(loaded.params, model.params);
    assert_eq!(loaded.predict(&data.samples, 4).unwrap(), model.predict(&data.samples, 4).unwrap());

    let again = dir.path().join("again.ckpt");
    save_checkpoint(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn checkpoint_rejects_mismatched_config_naming_the_field() {
    let model = Model::<f32>::new(&ModelConfig::default().with_variant(Variant::GnnOnly), 0).unwrap();
    let bytes = checkpoint_bytes(&model).unwrap();
    let mut want = ModelConfig::default().with_variant(Variant::GnnOnly);
    want.clusters = vec![40, 10];
    match checkpoint_from_bytes(&bytes, Some(&want)) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("clusters[1]"), "{msg}"),
        other => panic!("expected a checkpoint error, got {other:?}"),
    }
    want = ModelConfig::default();
    match checkpoint_from_bytes(&bytes, Some(&want)) {
        Err(Error::Checkpoint(msg)) => assert!(msg.contains("variant"), "{msg}"),
        other => panic!("expected a checkpoint error, got {other:?}"),
    }
}

#[test]
fn checkpoint_rejects_truncation_and_bad_magic() {
    let model = Model::<f32>::new(&ModelConfig::default().with_variant(Variant::GnnOnly), 0).unwrap();
    let bytes = checkpoint_bytes(&model).unwrap();
    assert!(matches!(checkpoint_from_bytes(&bytes[..bytes.len() - 4], None), Err(Error::Checkpoint(_))));
    let mut bad = bytes.clone();
    bad[0] ^= 0xFF;
    assert!(matches!(checkpoint_from_bytes(&bad, None), Err(Error::Checkpoint(_))));
    let mut long = bytes;
    long.extend_from_slice(&[0; 4]);
    assert!(matches!(checkpoint_from_bytes(&long, None), Err(Error::Checkpoint(_))));
}

#[test]
fn gradient_reaches_every_trainable_parameter() {
    let data = random_dataset(8, 101, 6);
    let model = Model::<f64>::new(&ModelConfig::default(), 7).unwrap();
    let refs: Vec<_> = data.samples.iter().collect();
    let batch = Batch::<f64>::from_samples(&refs).unwrap();
    let mut tape = Tape::new();
    let mut cx = Forward::new(&mut tape, &model.params, Mode::Train, true, 1);
    let out = model.net.forward(&mut cx, &batch).unwrap();
    let targets = cx.constant(batch.targets.clone());
    let mut loss = cross_entropy(cx.tape, out.probs, targets).unwrap();
    let aux: Vec<_> = cx.aux_losses().iter().map(|a| a.1).collect();
    for a in aux {
        loss = cx.tape.add(loss, a).unwrap();
    }
    let grads = cx.tape.backward(loss).unwrap();
    let per_param = cx.param_grads(&grads);
    assert_eq!(per_param.len(), model.params.iter().filter(|p| p.1.trainable).count());
    for (id, g) in per_param {
        let name = &model.params.get(id).name;
        let g = g.unwrap_or_else(|| panic!("{name}: no gradient"));
        assert!(g.data().iter().all(|v| v.is_finite()), "{name}");
        assert!(g.data().iter().any(|&v| v != 0.0), "{name}: gradient is identically zero");
    }
}

#[test]
fn full_model_without_graph_contribution_equals_the_sequence_variant() {
    let data = random_dataset(3, 101, 8);
    let mut full = Model::<f64>::new(&ModelConfig::default(), 9).unwrap();
    let mut seq = Model::<f64>::new(&ModelConfig::default().with_variant(Variant::Cblane), 10).unwrap();
    let ids: Vec<_> = seq.params.ids().collect();
    for id in ids {
        let name = seq.params.get(id).name.clone();
        let src = full.params.id(&name).unwrap_or_else(|| panic!("{name} missing from the full model"));
        let value = full.params.value(src).clone();
        if name.starts_with("head/") && name.ends_with("kernel") {
            // [80, 2]: zero the graph rows in the full model, keep the sequence rows
            let kept = Tensor::from_vec(&[64, 2], value.data()[..128].to_vec()).unwrap();
            seq.params.set(id, kept).unwrap();
            let mut zeroed = value.clone();
            zeroed.data_mut()[128..].iter_mut().for_each(|v| *v = 0.0);
            full.params.set(src, zeroed).unwrap();
        } else {
            seq.params.set(id, value).unwrap();
        }
    }
    let a = full.predict(&data.samples, 3).unwrap();
    let b = seq.predict(&data.samples, 3).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x[0] - y[0]).abs() < 1e-12 && (x[1] - y[1]).abs() < 1e-12, "{x:?} vs {y:?}");
    }
}
