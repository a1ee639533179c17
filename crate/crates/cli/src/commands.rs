use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gcblane_core::data::{
    build_manifest, graph_cache_path, parse_fasta, planted_motif, write_fasta, Dataset, NucleotideSequence, Split,
};
use gcblane_core::debruijn::build_debruijn;
use gcblane_core::metrics::{evaluate, MetricsReport};
use gcblane_core::model::{load_checkpoint, save_checkpoint, Model, ModelConfig, Variant};
use gcblane_core::nn::check::layer_suite;
use gcblane_core::train::{finetune, fit_with, write_log, FitOutcome, StopReason, TrainConfig, TrainLogRecord};
use gcblane_core::{Error, Result};

use crate::config::RunConfig;
use crate::{Cli, Command, EvaluateArgs, GradcheckArgs, GraphDumpArgs, GridArgs, PredictArgs, PrepareArgs};
use crate::{SummaryArgs, SynthArgs, TrainArgs};

pub fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        set_threads(n);
    }
    let explicit_threads = cli.threads.is_some();
    match cli.command {
        Command::Prepare(a) => prepare(&a),
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a, explicit_threads),
        Command::Finetune(a) => finetune_cmd(&a, explicit_threads),
        Command::Evaluate(a) => evaluate_cmd(&a),
        Command::Predict(a) => predict(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Ablation(a) => ablation(&a, explicit_threads),
        Command::Grid(a) => grid(&a, explicit_threads),
        Command::Summary(a) => summary(&a),
        Command::GraphDump(a) => graph_dump(&a),
    }
}

fn set_threads(n: usize) {
    // Fails only if the pool already exists, which keeps the first setting.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Clone, Copy, PartialEq)]
enum Schedule {
    Train,
    Finetune,
}

/// Config file merged with command-line overrides; flags win.
fn merged(a: &TrainArgs, schedule: Schedule, explicit_threads: bool) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    let t = match schedule {
        Schedule::Train => &mut cfg.train,
        Schedule::Finetune => &mut cfg.finetune,
    };
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr {
        t.lr_init = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.aux_weight {
        t.aux_loss_weight = v;
    }
    if let Some(v) = a.variant {
        cfg.model.variant = v;
    }
    if !a.manifest.is_empty() {
        cfg.paths.manifest = a.manifest.clone();
    }
    if a.checkpoint_in.is_some() {
        cfg.paths.checkpoint_in = a.checkpoint_in.clone();
    }
    if a.out.is_some() {
        cfg.paths.checkpoint_out = a.out.clone();
    }
    if a.report_dir.is_some() {
        cfg.paths.report_dir = a.report_dir.clone();
    }
    if !explicit_threads && cfg.threads > 0 {
        set_threads(cfg.threads);
    }
    cfg.validate()?;
    if cfg.paths.manifest.is_empty() {
        return Err(config_error("no manifest given (--manifest or paths.manifest)"));
    }
    Ok(cfg)
}

fn report_dir(cfg: &RunConfig) -> PathBuf {
    if let Some(d) = &cfg.paths.report_dir {
        return d.clone();
    }
    cfg.paths
        .checkpoint_out
        .as_ref()
        .and_then(|p| p.parent())
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn echo(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = cfg.echo(dir)?;
    println!("effective config written to {}", path.display());
    println!("{}", serde_json::to_string(cfg)?);
    Ok(())
}

/// Concatenates one split of every manifest.
fn pooled(manifests: &[PathBuf], split: Split, k: usize) -> Result<Dataset> {
    let mut out = Dataset::default();
    for m in manifests {
        out.extend(Dataset::from_manifest(m, split, k)?);
    }
    if out.is_empty() {
        return Err(Error::Contract(format!("split '{}' is empty", split.as_str())));
    }
    Ok(out)
}

fn progress(r: &TrainLogRecord) {
    println!(
        "epoch {:>3} {:<5} loss {:.5} acc {:.4} lr {:.1e} ({:.1}s)",
        r.epoch, r.split, r.loss, r.accuracy, r.current_lr, r.wall_time
    );
}

/// Saves the model and log; returns the exit code for the stop reason.
fn finish(out: &FitOutcome<f32>, checkpoint: &Path, dir: &Path) -> Result<u8> {
    save_checkpoint(&out.model, checkpoint)?;
    let log = dir.join("train_log.jsonl");
    write_log(&log, &out.log)?;
    println!(
        "best epoch {} (val loss {:.5}); checkpoint {}; log {}",
        out.best_epoch,
        out.best_val_loss,
        checkpoint.display(),
        log.display()
    );
    if let StopReason::Diverged(msg) = &out.stop {
        eprintln!("training diverged: {msg}; kept the best checkpoint");
        return Ok(4);
    }
    Ok(0)
}

fn checkpoint_out(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.paths
        .checkpoint_out
        .clone()
        .ok_or_else(|| config_error("no output checkpoint given (--out or paths.checkpoint_out)"))
}

fn prepare(a: &PrepareArgs) -> Result<u8> {
    let report = build_manifest(&a.positives, a.seed, &a.out)?;
    let m = &report.manifest;
    println!(
        "{}: {} entries ({} skipped) -> {}",
        m.name,
        m.entries.len(),
        report.skipped.len(),
        report.manifest_path.display()
    );
    for split in Split::ALL {
        let (p, n) = m.class_counts(split);
        let data = Dataset::from_manifest(&report.manifest_path, split, a.k)?;
        let cache = graph_cache_path(&a.out, split, a.k);
        data.write_graph_cache(&cache)?;
        println!("  {:<5} {p} positive, {n} negative; graphs {}", split.as_str(), cache.display());
    }
    Ok(0)
}

fn synth(a: &SynthArgs) -> Result<u8> {
    let recs = planted_motif(a.n, a.len, &a.motif, a.seed)?;
    write_fasta(&a.out, &recs)?;
    println!("wrote {} sequences to {}", recs.len(), a.out.display());
    Ok(0)
}

fn train(a: &TrainArgs, explicit_threads: bool) -> Result<u8> {
    let cfg = merged(a, Schedule::Train, explicit_threads)?;
    let ckpt = checkpoint_out(&cfg)?;
    let dir = report_dir(&cfg);
    echo(&cfg, &dir)?;
    let k = cfg.model.k;
    let train = pooled(&cfg.paths.manifest, Split::Train, k)?;
    let val = pooled(&cfg.paths.manifest, Split::Val, k)?;
    println!("training on {} samples, validating on {}", train.len(), val.len());
    let model = Model::<f32>::new(&cfg.model, cfg.train.seed)?;
    let out = fit_with(model, &train, &val, &cfg.train, progress)?;
    finish(&out, &ckpt, &dir)
}

fn finetune_cmd(a: &TrainArgs, explicit_threads: bool) -> Result<u8> {
    let cfg = merged(a, Schedule::Finetune, explicit_threads)?;
    let parent = cfg
        .paths
        .checkpoint_in
        .clone()
        .ok_or_else(|| config_error("finetune needs a parent checkpoint (--checkpoint-in)"))?;
    let ckpt = checkpoint_out(&cfg)?;
    let dir = report_dir(&cfg);
    echo(&cfg, &dir)?;
    let k = cfg.model.k;
    let train = pooled(&cfg.paths.manifest, Split::Train, k)?;
    let val = pooled(&cfg.paths.manifest, Split::Val, k)?;
    println!("fine-tuning {} on {} samples", parent.display(), train.len());
    let out = finetune(&parent, &cfg.model, &train, &val, &cfg.finetune, progress)?;
    finish(&out, &ckpt, &dir)
}

fn print_report(r: &MetricsReport) {
    let m = &r.metrics;
    let c = &r.counts;
    println!("tp {} fp {} tn {} fn {}", c.tp, c.fp, c.tn, c.fn_);
    println!(
        "accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  roc_auc {:.4}  pr_auc {:.4}",
        m.accuracy, m.precision, m.recall, m.f1, m.roc_auc, m.pr_auc
    );
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<u8> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let ckpt = a
        .checkpoint
        .clone()
        .or(cfg.paths.checkpoint_out.clone())
        .ok_or_else(|| config_error("no checkpoint given (--checkpoint)"))?;
    let manifest = a
        .manifest
        .clone()
        .or(cfg.paths.manifest.first().cloned())
        .ok_or_else(|| config_error("no manifest given (--manifest)"))?;
    let split: Split = a.split.parse()?;
    let dir = a.report_dir.clone().or(cfg.paths.report_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let model = load_checkpoint(&ckpt, None)?;
    let data = Dataset::from_manifest(&manifest, split, model.config().k)?;
    let (report, _) = evaluate(&model, &data, cfg.train.batch_size)?;
    report.write(&dir)?;
    print_report(&report);
    println!("report written to {}", dir.display());
    Ok(0)
}

fn predict(a: &PredictArgs) -> Result<u8> {
    let model = load_checkpoint(&a.checkpoint, None)?;
    let recs: Vec<NucleotideSequence> = parse_fasta(&a.fasta)?
        .into_iter()
        .map(|r| if r.label.is_some() { r } else { r.with_label(0) })
        .collect();
    let data = Dataset::from_records(&recs, model.config().k)?;
    let probs = model.predict(&data.samples, a.batch_size)?;
    let mut csv = String::from("id,p_negative,p_positive\n");
    for (s, p) in data.samples.iter().zip(&probs) {
        let _ = writeln!(csv, "{},{},{}", s.id, p[0], p[1]);
    }
    match &a.out {
        Some(path) => {
            std::fs::write(path, csv).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            println!("wrote {} predictions to {}", probs.len(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(0)
}

fn gradcheck(a: &GradcheckArgs) -> Result<u8> {
    let seeds: Vec<u64> = (1..=a.seeds).collect();
    let checks = layer_suite(&seeds)?;
    let mut names: Vec<&str> = Vec::new();
    for c in &checks {
        if !names.contains(&c.layer) {
            names.push(c.layer);
        }
    }
    println!("{:<22} {:>6} {:>8} {:>12}  result", "layer", "seeds", "params", "max rel err");
    let mut all = true;
    for name in names {
        let rows: Vec<_> = checks.iter().filter(|c| c.layer == name).collect();
        let worst = rows.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
        let ok = worst < a.tol;
        all &= ok;
        println!(
            "{:<22} {:>6} {:>8} {:>12.3e}  {}",
            name,
            rows.len(),
            rows[0].params,
            worst,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    if let Some(path) = &a.out {
        std::fs::write(path, serde_json::to_string_pretty(&checks)?).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    Ok(if all { 0 } else { 1 })
}

fn table_name(v: Variant) -> &'static str {
    match v {
        Variant::GnnOnly => "GNN",
        other => other.as_str(),
    }
}

fn ablation(a: &TrainArgs, explicit_threads: bool) -> Result<u8> {
    let cfg = merged(a, Schedule::Train, explicit_threads)?;
    let dir = report_dir(&cfg);
    echo(&cfg, &dir)?;
    let k = cfg.model.k;
    let train = pooled(&cfg.paths.manifest, Split::Train, k)?;
    let val = pooled(&cfg.paths.manifest, Split::Val, k)?;
    let test = pooled(&cfg.paths.manifest, Split::Test, k)?;
    let mut rows = Vec::new();
    let mut code = 0;
    for v in Variant::ALL {
        println!("== {}", v.as_str());
        let model = Model::<f32>::new(&cfg.model.clone().with_variant(v), cfg.train.seed)?;
        let out = fit_with(model, &train, &val, &cfg.train, progress)?;
        if out.diverged() {
            code = 4;
        }
        let (report, _) = evaluate(&out.model, &test, cfg.train.batch_size)?;
        report.write(&dir.join(v.as_str()))?;
        rows.push((v, report.metrics));
    }
    let mut csv = String::from("Model,Accuracy,ROC-AUC,PR-AUC,Precision,Recall,F1\n");
    println!("\n{:<8} {:>8} {:>8} {:>8} {:>9} {:>8} {:>8}", "Model", "Accuracy", "ROC-AUC", "PR-AUC", "Precision", "Recall", "F1");
    for (v, m) in &rows {
        println!(
            "{:<8} {:>8.4} {:>8.4} {:>8.4} {:>9.4} {:>8.4} {:>8.4}",
            table_name(*v),
            m.accuracy,
            m.roc_auc,
            m.pr_auc,
            m.precision,
            m.recall,
            m.f1
        );
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            table_name(*v),
            m.accuracy,
            m.roc_auc,
            m.pr_auc,
            m.precision,
            m.recall,
            m.f1
        );
    }
    let path = dir.join("ablation.csv");
    std::fs::write(&path, csv).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    println!("table written to {}", path.display());
    Ok(code)
}

/// Validation accuracy recorded at the best epoch.
fn best_val_accuracy<T>(out: &FitOutcome<T>) -> f64 {
    out.log
        .iter()
        .find(|r| r.split == "val" && r.epoch == out.best_epoch)
        .map(|r| r.accuracy)
        .unwrap_or(0.0)
}

fn grid(a: &GridArgs, explicit_threads: bool) -> Result<u8> {
    let cfg = merged(&a.train, Schedule::Train, explicit_threads)?;
    let dir = report_dir(&cfg);
    echo(&cfg, &dir)?;
    let k = cfg.model.k;
    let train = pooled(&cfg.paths.manifest, Split::Train, k)?;
    let val = pooled(&cfg.paths.manifest, Split::Val, k)?;
    let mut csv = String::from("lr,optimizer,batch_size,best_epoch,val_loss,val_accuracy\n");
    let mut best: Option<(f64, TrainConfig)> = None;
    for &lr in &a.lrs {
        for opt in &a.optimizers {
            for &bs in &a.batch_sizes {
                let t = TrainConfig {
                    lr_init: lr,
                    lr_min: cfg.train.lr_min.min(lr),
                    optimizer: opt.parse()?,
                    batch_size: bs,
                    ..cfg.train.clone()
                };
                println!("== lr {lr} optimizer {opt} batch {bs}");
                let model = Model::<f32>::new(&cfg.model, t.seed)?;
                let out = fit_with(model, &train, &val, &t, |_| {})?;
                let acc = best_val_accuracy(&out);
                println!("   val accuracy {acc:.4} (loss {:.5})", out.best_val_loss);
                let _ = writeln!(csv, "{lr},{opt},{bs},{},{},{acc}", out.best_epoch, out.best_val_loss);
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, t));
                }
            }
        }
    }
    let path = dir.join("grid.csv");
    std::fs::write(&path, csv).map_err(|e| Error::Io { path: path.clone(), source: e })?;
    if let Some((acc, t)) = best {
        println!(
            "selected lr {} optimizer {:?} batch {} (val accuracy {acc:.4})",
            t.lr_init, t.optimizer, t.batch_size
        );
    }
    Ok(0)
}

fn summary(a: &SummaryArgs) -> Result<u8> {
    let mut cfg: ModelConfig = RunConfig::load(a.config.as_deref())?.model;
    if let Some(v) = a.variant {
        cfg.variant = v;
    }
    cfg.validate()?;
    let model = Model::<f32>::new(&cfg, 0)?;
    let bases: String = "ACGT".chars().cycle().take(a.len).collect();
    let rec = NucleotideSequence::new("probe", &bases, Some(0))?;
    let data = Dataset::from_records(&[rec], cfg.k)?;
    println!("{:<22} {:<24} shape", "block", "layer");
    for row in model.shape_trace(&data.samples[0])? {
        println!("{:<22} {:<24} {:?}", row.block, row.layer, row.shape);
    }
    let count = model.count_parameters();
    println!();
    for (block, n) in &count.blocks {
        println!("{block:<22} {n:>10}");
    }
    println!("{:<22} {:>10}", "total", count.total);
    Ok(0)
}

fn graph_dump(a: &GraphDumpArgs) -> Result<u8> {
    let rec = NucleotideSequence::new("input", &a.sequence, None)?;
    let g = build_debruijn(&rec, a.k)?;
    println!("{}", serde_json::to_string(&g.dump())?);
    Ok(0)
}
