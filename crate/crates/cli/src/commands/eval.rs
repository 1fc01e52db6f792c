use std::collections::BTreeMap;
use std::str::FromStr;

use objhal::extraction::{validate_batch, Caption, Extractor, LexiconExtractor, LlmExtractor};
use objhal::io::{read_jsonl, write_json, write_jsonl};
use objhal::matching::{GroundTruthSet, LexiconMatcher, LlmMatcher, Matcher};
use objhal::metrics::{markdown_table, ChairSDenominator, EvalMode, SentenceUnit};
use objhal::pipeline::{assemble_with, evaluate_caption};
use objhal::Result;
use rayon::prelude::*;
use serde_json::json;

use super::{lexicon, llm_client, synonyms, thread_pool};
use crate::args::{Backend, EvalArgs, ExtractArgs};
use crate::config::Resolved;
use crate::manifest::Recorder;

fn parse_modes(raw: &[String]) -> Result<Vec<EvalMode>> {
    let mut modes = Vec::new();
    for m in raw {
        if m == "all" {
            modes.extend(EvalMode::ALL);
        } else {
            modes.push(EvalMode::from_str(m)?);
        }
    }
    if modes.is_empty() {
        modes.push(EvalMode::Standard);
    }
    let mut seen = Vec::new();
    modes.retain(|m| {
        let fresh = !seen.contains(m);
        seen.push(*m);
        fresh
    });
    Ok(modes)
}

pub fn eval(a: &EvalArgs, r: &Resolved) -> Result<()> {
    let mut rec = Recorder::start("eval", &a.out)?;
    rec.input(&a.captions)?;
    rec.input(&a.ground_truth)?;
    let extractor_kind = a.extractor.or(r.file.extractor).unwrap_or(Backend::Lexicon);
    let matcher_kind = a.matcher.or(r.file.matcher).unwrap_or(Backend::Lexicon);
    let raw_modes = if a.mode.is_empty() { r.file.mode.clone().unwrap_or_default() } else { a.mode.clone() };
    let modes = parse_modes(&raw_modes)?;
    let unit = match a.unit.as_ref().or(r.file.unit.as_ref()) {
        Some(u) => SentenceUnit::from_str(u)?,
        None => SentenceUnit::Caption,
    };
    let denominator = match a.chair_s_denominator.as_ref().or(r.file.chair_s_denominator.as_ref()) {
        Some(d) => ChairSDenominator::from_str(d)?,
        None => ChairSDenominator::Eligible,
    };
    let epsilon = a.epsilon.or(r.file.epsilon);
    let lexicon_dir = a.lexicon_dir.clone().or_else(|| r.file.lexicon_dir.clone());
    let synonyms_path = a.synonyms.clone().or_else(|| r.file.synonyms.clone());
    let lex = lexicon(lexicon_dir.as_deref(), &mut rec)?;
    let table = synonyms(synonyms_path.as_deref(), &mut rec)?;
    let singularizer = lex.singularizer().clone();

    let captions: Vec<Caption> = read_jsonl(&a.captions)?;
    validate_batch(&captions)?;
    let gt: BTreeMap<String, GroundTruthSet> = GroundTruthSet::load_map(&a.ground_truth)?;

    let client = llm_client(r);
    let extractor: Box<dyn Extractor> = match extractor_kind {
        Backend::Lexicon => Box::new(LexiconExtractor { lexicon: lex }),
        Backend::Llm => Box::new(LlmExtractor { client: &client, singularizer: singularizer.clone() }),
    };
    let matcher: Box<dyn Matcher> = match matcher_kind {
        Backend::Lexicon => Box::new(LexiconMatcher { table }),
        Backend::Llm => Box::new(LlmMatcher { client: &client, singularizer: singularizer.clone() }),
    };

    let results = thread_pool(r.jobs)?.install(|| {
        captions
            .par_iter()
            .map(|c| evaluate_caption(c, &gt, extractor.as_ref(), matcher.as_ref(), &singularizer))
            .collect::<Result<Vec<_>>>()
    })?;

    let mut summaries = Vec::new();
    let mut wrote_records = false;
    for &mode in &modes {
        let mut output = assemble_with(results.clone(), mode, unit, denominator)?;
        output.summary.epsilon = epsilon;
        output.summary.label = a.label.clone();
        if !wrote_records {
            write_jsonl(&rec.out("extractions.jsonl"), &output.extractions)?;
            write_jsonl(&rec.out("reports.jsonl"), &output.reports)?;
            wrote_records = true;
        }
        write_json(&rec.out(&format!("summary-{}.json", mode.as_str())), &output.summary)?;
        summaries.push((mode.as_str().to_owned(), output.summary));
    }
    let rows: Vec<(String, &_)> = summaries.iter().map(|(m, s)| (m.clone(), s)).collect();
    let table_md = markdown_table(&rows, "Mode");
    objhal::io::write_atomic(&rec.out("table.md"), table_md.as_bytes())?;
    print!("{table_md}");

    rec.config(json!({
        "extractor": extractor_kind,
        "matcher": matcher_kind,
        "modes": modes.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "unit": unit,
        "chair_s_denominator": denominator,
        "epsilon": epsilon,
        "label": a.label,
        "llm": if extractor_kind == Backend::Llm || matcher_kind == Backend::Llm { r.llm_record() } else { json!(null) },
    }));
    rec.finish()?;
    Ok(())
}

pub fn extract(a: &ExtractArgs, r: &Resolved) -> Result<()> {
    let mut rec = Recorder::start("extract", &a.out)?;
    rec.input(&a.captions)?;
    let kind = a.extractor.or(r.file.extractor).unwrap_or(Backend::Lexicon);
    let lexicon_dir = a.lexicon_dir.clone().or_else(|| r.file.lexicon_dir.clone());
    let lex = lexicon(lexicon_dir.as_deref(), &mut rec)?;
    let singularizer = lex.singularizer().clone();
    let captions: Vec<Caption> = read_jsonl(&a.captions)?;
    validate_batch(&captions)?;
    let client = llm_client(r);
    let extractor: Box<dyn Extractor> = match kind {
        Backend::Lexicon => Box::new(LexiconExtractor { lexicon: lex }),
        Backend::Llm => Box::new(LlmExtractor { client: &client, singularizer }),
    };
    let mut records = thread_pool(r.jobs)?.install(|| {
        captions
            .par_iter()
            .map(|c| {
                Ok(objhal::extraction::ExtractionRecord { caption_id: c.id.clone(), mentions: extractor.extract(c)? })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    records.sort_by(|x, y| x.caption_id.cmp(&y.caption_id));
    write_jsonl(&rec.out("extractions.jsonl"), &records)?;
    rec.config(json!({
        "extractor": kind,
        "llm": if kind == Backend::Llm { r.llm_record() } else { json!(null) },
    }));
    rec.finish()?;
    Ok(())
}
