use std::collections::BTreeMap;

use objhal::datagen::{
    annotate_brackets, emit_corpus, lint_corpus, load_splits, mix_corpus, read_corpus, split_objects, splits_json,
    strip_indication, synthesize_contextual, template_caption, ContextualGenerator, DetectionFileOracle,
    SeededRandomOracle, TrainingExample, VisibilityOracle,
};
use objhal::extraction::Caption;
use objhal::io::{read_jsonl, write_atomic, write_json, write_jsonl};
use objhal::matching::GroundTruthSet;
use objhal::toyworld::{sample_images, toy_lexicon, toy_oracle, ToyWorldConfig};
use objhal::{Error, Result};
use rayon::prelude::*;
use serde_json::json;

use super::{llm_client, thread_pool};
use crate::args::{ContextualArgs, DatagenCommand, Generator, JointArgs, LintArgs, MergeArgs, SplitArgs, SynthArgs};
use crate::config::Resolved;
use crate::manifest::Recorder;

pub const DEFAULT_RATIO: &str = "10:23";

pub fn run(c: &DatagenCommand, r: &Resolved) -> Result<()> {
    match c {
        DatagenCommand::Split(a) => split(a, r),
        DatagenCommand::Contextual(a) => contextual(a, r),
        DatagenCommand::Joint(a) => joint(a),
        DatagenCommand::Merge(a) => merge(a, r),
        DatagenCommand::Lint(a) => lint(a),
    }
}

fn split(a: &SplitArgs, r: &Resolved) -> Result<()> {
    let mut rec = Recorder::start("datagen split", &a.out)?;
    rec.input(&a.ground_truth)?;
    let gt = GroundTruthSet::load_map(&a.ground_truth)?;
    let oracle: Box<dyn VisibilityOracle> = match (&a.detections, a.visibility) {
        (Some(path), _) => {
            rec.input(path)?;
            Box::new(DetectionFileOracle::load(path)?)
        }
        (None, Some(p)) if (0.0..=1.0).contains(&p) => Box::new(SeededRandomOracle::new(p, r.seed)),
        (None, Some(p)) => return Err(Error::InvalidConfig(format!("visibility must lie in [0, 1], got {p}"))),
        (None, None) => return Err(Error::InvalidConfig("split needs --detections or --visibility".into())),
    };
    let splits = gt.values().map(|g| split_objects(g, oracle.as_ref())).collect::<Result<Vec<_>>>()?;
    write_json(&rec.out("splits.json"), &splits_json(&splits))?;
    let omitted: usize = splits.iter().map(|s| s.omitted.len()).sum();
    let grounded: usize = splits.iter().map(|s| s.grounded.len()).sum();
    println!("{} images: {grounded} grounded, {omitted} omitted objects", splits.len());
    rec.config(json!({ "seed": r.seed, "visibility": a.visibility, "oracle": if a.detections.is_some() { "file" } else { "seeded" } }));
    rec.finish()?;
    Ok(())
}

fn contextual(a: &ContextualArgs, r: &Resolved) -> Result<()> {
    let mut rec = Recorder::start("datagen contextual", &a.out)?;
    rec.input(&a.splits)?;
    let splits = load_splits(&a.splits)?;
    let kind = a.generator.or(r.file.generator).unwrap_or(Generator::Template);
    let client = llm_client(r);
    let generator = match kind {
        Generator::Template => ContextualGenerator::Template { seed: r.seed },
        Generator::Llm => ContextualGenerator::Llm { client: &client },
    };
    let eligible: Vec<_> = splits.values().filter(|s| !s.grounded.is_empty()).collect();
    let skipped = splits.len() - eligible.len();
    let outcomes = thread_pool(r.jobs)?.install(|| {
        eligible
            .par_iter()
            .map(|s| match synthesize_contextual(s, &generator) {
                Ok(text) => Ok(Some(TrainingExample { epsilon_label: -1, text, image_id: s.image_id.clone() })),
                Err(Error::LeakedObject { object }) => {
                    log::warn!("dropping contextual caption for {:?}: mentions omitted {object:?}", s.image_id);
                    Ok(None)
                }
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rejected = outcomes.iter().filter(|o| o.is_none()).count();
    let examples: Vec<TrainingExample> = outcomes.into_iter().flatten().collect();
    let provenance = BTreeMap::from([
        ("generator".to_owned(), format!("{kind:?}").to_lowercase()),
        ("splits".to_owned(), objhal::io::file_digest(&a.splits)?),
        ("rejected_leaks".to_owned(), rejected.to_string()),
        ("skipped_no_grounded".to_owned(), skipped.to_string()),
    ]);
    let path = rec.out("contextual.jsonl");
    rec.out("contextual.jsonl.manifest.json");
    let manifest = emit_corpus(&path, examples, provenance)?;
    println!("{} contextual records ({rejected} rejected, {skipped} images without grounded objects)", manifest.records);
    rec.config(json!({ "seed": r.seed, "generator": kind, "llm": if kind == Generator::Llm { r.llm_record() } else { json!(null) } }));
    rec.finish()?;
    Ok(())
}

fn joint(a: &JointArgs) -> Result<()> {
    let mut rec = Recorder::start("datagen joint", &a.out)?;
    rec.input(&a.captions)?;
    rec.input(&a.splits)?;
    let splits = load_splits(&a.splits)?;
    let captions: Vec<Caption> = read_jsonl(&a.captions)?;
    let examples = captions
        .iter()
        .map(|c| {
            let split = splits.get(&c.image_id).ok_or_else(|| {
                Error::InvalidInput(format!("caption {:?}: no split for image {:?}", c.id, c.image_id))
            })?;
            Ok(TrainingExample { epsilon_label: 1, text: annotate_brackets(&c.text, &split.omitted)?, image_id: c.image_id.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let provenance = BTreeMap::from([
        ("captions".to_owned(), objhal::io::file_digest(&a.captions)?),
        ("splits".to_owned(), objhal::io::file_digest(&a.splits)?),
    ]);
    let path = rec.out("joint.jsonl");
    rec.out("joint.jsonl.manifest.json");
    let manifest = emit_corpus(&path, examples, provenance)?;
    println!("{} joint records", manifest.records);
    rec.config(json!({}));
    rec.finish()?;
    Ok(())
}

pub fn parse_ratio(s: &str) -> Result<Option<(usize, usize)>> {
    if s == "all" {
        return Ok(None);
    }
    let bad = || Error::InvalidConfig(format!("ratio must look like 10:23 or be \"all\", got {s:?}"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b == 0 {
        return Err(bad());
    }
    Ok(Some((a, b)))
}

fn merge(a: &MergeArgs, r: &Resolved) -> Result<()> {
    let mut rec = Recorder::start("datagen merge", &a.out)?;
    let ratio_text = a.ratio.as_deref().unwrap_or(DEFAULT_RATIO);
    let ratio = parse_ratio(ratio_text)?;
    let mut examples = Vec::new();
    for p in &a.inputs {
        rec.input(p)?;
        examples.extend(read_corpus(p)?);
    }
    if a.strip_indication {
        strip_indication(&mut examples);
    }
    if let Some((c, j)) = ratio {
        examples = mix_corpus(examples, c, j, r.seed)?;
    }
    let provenance = BTreeMap::from([("ratio".to_owned(), ratio_text.to_owned())]);
    let path = rec.out("corpus.jsonl");
    rec.out("corpus.jsonl.manifest.json");
    let manifest = emit_corpus(&path, examples, provenance)?;
    println!("{} records {:?}", manifest.records, manifest.label_counts);
    rec.config(json!({ "seed": r.seed, "ratio": ratio_text, "strip_indication": a.strip_indication }));
    rec.finish()?;
    Ok(())
}

fn lint(a: &LintArgs) -> Result<()> {
    let mut rec = Recorder::start("datagen lint", &a.out)?;
    rec.input(&a.corpus)?;
    rec.input(&a.splits)?;
    let examples: Vec<TrainingExample> = read_jsonl(&a.corpus)?;
    let splits = load_splits(&a.splits)?;
    let report = lint_corpus(&examples, &splits);
    write_json(&rec.out("lint.json"), &report)?;
    rec.config(json!({}));
    rec.finish()?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    if !report.is_clean() {
        return Err(Error::InvalidInput(format!(
            "corpus breaks label discipline: {} contextual records with brackets, {} brackets on grounded objects, \
             {} brackets on unknown objects, {} malformed",
            report.contextual_with_brackets, report.brackets_on_grounded, report.brackets_on_unknown, report.malformed
        )));
    }
    Ok(())
}

/// Seeded synthetic world: ground truth, bracket-free captions naming every
/// object, detections, and the lexicon that covers it.
pub fn synth(a: &SynthArgs, r: &Resolved) -> Result<()> {
    let mut rec = Recorder::start("synth", &a.out)?;
    let cfg = ToyWorldConfig { seed: r.seed, ..Default::default() };
    let images = sample_images(a.images, "img-", cfg.scene_presence, cfg.seed);
    let oracle = toy_oracle(&cfg);
    let gt: serde_json::Map<String, serde_json::Value> =
        images.iter().map(|g| (g.image_id.clone(), json!({ "objects": g.objects }))).collect();
    write_json(&rec.out("gt.json"), &gt)?;
    let captions: Vec<Caption> = images
        .iter()
        .map(|g| Caption::new(format!("{}-c", g.image_id), g.image_id.clone(), template_caption(&g.image_id, &g.objects, cfg.seed)))
        .collect();
    write_jsonl(&rec.out("captions.jsonl"), &captions)?;
    let splits = images.iter().map(|g| split_objects(g, &oracle)).collect::<Result<Vec<_>>>()?;
    write_json(&rec.out("detections.json"), &splits_json(&splits))?;
    let lex = toy_lexicon();
    let lines = |items: &mut dyn Iterator<Item = &String>| items.map(|s| format!("{s}\n")).collect::<String>();
    write_atomic(&rec.out("lexicon/objects.txt"), lines(&mut lex.object_terms().iter()).as_bytes())?;
    write_atomic(&rec.out("lexicon/places.txt"), lines(&mut lex.place_stoplist().iter()).as_bytes())?;
    write_atomic(&rec.out("lexicon/positions.txt"), lines(&mut lex.position_stoplist().iter()).as_bytes())?;
    println!("{} synthetic images", images.len());
    rec.config(json!({ "seed": r.seed, "images": a.images }));
    rec.finish()?;
    Ok(())
}
