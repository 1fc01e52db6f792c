use objhal::control::{
    check_epsilon, load_checkpoint, render_tokens, sample_seed, save_checkpoint, ControlledLM, TrainConfig, Vocab,
    DEFAULT_ENUMERATION_CAP,
};
use objhal::datagen::read_corpus;
use objhal::extraction::Caption;
use objhal::io::{write_atomic, write_json, write_jsonl};
use objhal::matching::GroundTruthSet;
use objhal::toyworld::{run_experiment, ToyWorldConfig};
use objhal::{Error, Result};
use serde_json::json;

use super::report::{render_report, ReportRow};
use crate::args::{GenerateArgs, ToyArgs, TrainArgs, TrainBaseArgs, TrainControlArgs, VerifyBoundArgs};
use crate::config::{Resolved, TrainSection};
use crate::manifest::Recorder;

fn train_config(flags: &TrainArgs, l2: Option<f64>, file: &TrainSection, defaults: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: flags.learning_rate.or(file.learning_rate).unwrap_or(defaults.learning_rate),
        epochs: flags.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch_size: flags.batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
        l2: l2.or(file.l2).unwrap_or(defaults.l2),
        seed,
    }
}

pub fn train_base(a: &TrainBaseArgs, r: &Resolved) -> Result<()> {
    let mut rec = Recorder::start("train-base", &a.out)?;
    rec.input(&a.corpus)?;
    let defaults = ToyWorldConfig::default();
    let cfg = train_config(&a.train, None, &r.file.train_base, &defaults.base, r.seed);
    let dim = a.dim.or(r.file.train_base.dim).unwrap_or(defaults.dim);
    let corpus = read_corpus(&a.corpus)?;
    let texts: Vec<&str> = corpus.iter().map(|e| e.text.as_str()).collect();
    let vocab = Vocab::from_texts(&texts);
    let seqs = texts.iter().map(|t| vocab.encode(t)).collect::<Result<Vec<_>>>()?;
    let mut model = ControlledLM::new_random(vocab, dim, r.seed)?;
    let log = objhal::control::train_base(&mut model, &seqs, &cfg)?;
    save_checkpoint(&rec.out("base.ckpt"), &model)?;
    write_json(&rec.out("train_log.json"), &log)?;
    println!(
        "vocab {} dim {dim}: loss {:.4} -> {:.4}",
        model.vocab().len(),
        log.losses.first().copied().unwrap_or(f64::NAN),
        log.losses.last().copied().unwrap_or(f64::NAN)
    );
    rec.config(json!({ "seed": r.seed, "dim": dim, "train": cfg }));
    rec.finish()?;
    Ok(())
}

pub fn train_control(a: &TrainControlArgs, r: &Resolved) -> Result<()> {
    let mut rec = Recorder::start("train-control", &a.out)?;
    rec.input(&a.model)?;
    rec.input(&a.corpus)?;
    let defaults = ToyWorldConfig::default();
    let cfg = train_config(&a.train, a.l2, &r.file.train_control, &defaults.control, r.seed);
    let mut model = load_checkpoint(&a.model)?;
    let corpus = read_corpus(&a.corpus)?;
    let records = corpus
        .iter()
        .map(|e| Ok((e.epsilon_label, model.vocab().encode(&e.text)?)))
        .collect::<Result<Vec<_>>>()?;
    let log = objhal::control::train_control(&mut model, &records, &cfg)?;
    save_checkpoint(&rec.out("control.ckpt"), &model)?;
    write_json(&rec.out("train_log.json"), &log)?;
    println!(
        "control loss {:.4} -> {:.4}",
        log.losses.first().copied().unwrap_or(f64::NAN),
        log.losses.last().copied().unwrap_or(f64::NAN)
    );
    rec.config(json!({ "seed": r.seed, "train": cfg }));
    rec.finish()?;
    Ok(())
}

pub fn generate(a: &GenerateArgs, r: &Resolved) -> Result<()> {
    let epsilon = a
        .epsilon
        .or(r.file.epsilon)
        .ok_or_else(|| Error::InvalidConfig("generate needs --epsilon".into()))?;
    check_epsilon(epsilon)?;
    if a.max_len == 0 {
        return Err(Error::InvalidConfig("max-len must be at least 1".into()));
    }
    let mut rec = Recorder::start("generate", &a.out)?;
    rec.input(&a.model)?;
    let model = load_checkpoint(&a.model)?;
    let images: Vec<String> = match &a.ground_truth {
        Some(p) => {
            rec.input(p)?;
            GroundTruthSet::load_map(p)?.into_keys().collect()
        }
        None => Vec::new(),
    };
    let mut captions = Vec::new();
    let mut empty = 0usize;
    for i in 0..a.samples {
        let seq = model.generate(epsilon, a.max_len, sample_seed(r.seed, i as u64))?;
        let text = render_tokens(&model.vocab().decode(&seq));
        if text.trim().is_empty() {
            empty += 1;
            continue;
        }
        let id = format!("gen-{i:05}");
        let image = if images.is_empty() { id.clone() } else { images[i % images.len()].clone() };
        captions.push(Caption::new(id, image, text));
    }
    write_jsonl(&rec.out("samples.jsonl"), &captions)?;
    println!("{} samples at epsilon {epsilon} ({empty} empty dropped)", captions.len());
    rec.config(json!({ "seed": r.seed, "epsilon": epsilon, "samples": a.samples, "max_len": a.max_len }));
    rec.finish()?;
    Ok(())
}

pub fn verify_bound(a: &VerifyBoundArgs) -> Result<()> {
    let mut rec = Recorder::start("verify-bound", &a.out)?;
    rec.input(&a.model)?;
    let model = load_checkpoint(&a.model)?;
    let cap = a.cap.unwrap_or(DEFAULT_ENUMERATION_CAP);
    let report = objhal::control::verify_bound(&model, &a.epsilon, &a.k_grid, a.seq_len, cap)?;
    write_json(&rec.out("bound.json"), &report)?;
    let md = report.markdown();
    write_atomic(&rec.out("bound.md"), md.as_bytes())?;
    print!("{md}");
    rec.config(json!({ "epsilon": a.epsilon, "k": a.k_grid, "seq_len": a.seq_len, "cap": cap.to_string() }));
    rec.finish()?;
    Ok(())
}

pub fn toy_experiment(a: &ToyArgs, r: &Resolved) -> Result<()> {
    let mut rec = Recorder::start("toy-experiment", &a.out)?;
    let defaults = ToyWorldConfig::default();
    let cfg = ToyWorldConfig { seed: r.explicit_seed.unwrap_or(defaults.seed), ..defaults };
    let report = run_experiment(&cfg)?;
    write_json(&rec.out("toy_report.json"), &report)?;
    let mut rows = Vec::new();
    for run in &report.runs {
        for s in run.summaries.values() {
            let mut summary = s.clone();
            summary.epsilon = Some(run.epsilon);
            rows.push(ReportRow { label: "toy".into(), summary });
        }
    }
    let mut md = String::from("| ε | inferred-token rate |\n|---:|---:|\n");
    for run in &report.runs {
        md.push_str(&format!("| {} | {:.4} |\n", run.epsilon, run.inferred_rate));
    }
    md.push('\n');
    md.push_str(&render_report(rows, crate::args::ReportFormat::Md));
    write_atomic(&rec.out("toy.md"), md.as_bytes())?;
    print!("{md}");
    rec.config(serde_json::to_value(&cfg).expect("config serializes"));
    rec.finish()?;
    Ok(())
}
