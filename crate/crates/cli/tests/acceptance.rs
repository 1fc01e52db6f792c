//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use common::*;
use nalgebra::DMatrix;
use objhal::control::{control_grad, verify_bound, ControlledLM, LabeledCounts, Vocab};
use objhal::extraction::{extract_lexicon, quote_caption, Caption, ObjectLexicon};
use objhal::llm_client::{render_list_literal, LlmClient, LlmConfig, TemplateId};
use objhal::matching::{
    match_coverage, match_hallucination, match_llm, Direction, MatchReport, MentionEntry, SynonymTable,
};
use objhal::metrics::{summarize, EvalMode, RawCounts, SentenceUnit};
use objhal::toyworld::{run_experiment, ToyReport, ToyWorldConfig};
use objhal::Error;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| (*s).to_owned()).collect()
}

// ---------------------------------------------------------------- 1

const EXTRACT_EXAMPLES: [(&str, &[&str]); 4] = [
    (
        "The image features a bathroom sink situated under a large mirror. The sink is accompanied by a soap dispenser, and there are multiple toothbrushes placed around it. A few cups can be seen scattered around the sink area as well. \n \n In addition to the sink, there is a toilet visible to the left side of the bathroom. The overall scene gives an impression of a well-equipped and functional bathroom space. Also a [brush] can been seen.",
        &["sink", "mirror", "soap dispenser", "toothbrush", "cup", "toilet"],
    ),
    (
        "The image depicts a cluttered dining room with a large kitchen table in the center. The table is covered with dirty dishes, including plates, bowls, cups, and utensils. There are several chairs around the table, with some placed closer to the center and others positioned at the edges.  In addition to the dishes, there is an apple sitting on the table, likely left over from a meal or snack. A bottle of water can be seen on the table as well, and a [flower], adding to the messy atmosphere of the room.",
        &["table", "dish", "bowl", "cup", "utensil", "chair", "apple", "water"],
    ),
    (
        "The image depicts a busy city street with a pedestrian crossing in a sunny day. A man is walking across the street, carrying a backpack and wearing a jacket.",
        &["street", "pedestrian crossing", "man", "backpack", "jacket"],
    ),
    (
        "The image depicts an office cubicle with a desk in the center. The desk is equipped with a computer, a keyboard, and a mouse.",
        &["desk", "computer", "keyboard", "mouse"],
    ),
];

const EX1_A: [&str; 12] = [
    "reflection of light", "view of office building", "street chair", "white car", "red car", "dark hair", "bagpack",
    "black shoes", "dark pants", "bikes", "street", "street light",
];
const EX1_B: [&str; 13] = [
    "two cars", "dark bagpack", "yellow jacket", "light", "brick building", "wood chair", "chair", "green car",
    "dining room table", "bike", "city street", "traffic light", "sedan",
];
const EX2_A: [&str; 5] = ["bag", "cloth", "boy", "Drinking glasses", "table"];
const EX2_B: [&str; 5] = ["backpack", "jacket", "young man", "cup", "kitchen table"];
const EX2_B_COVER: [&str; 7] = ["backpack", "jacket", "young man", "cup", "kitchen table", "plate", "apple"];
const EX3_A: [&str; 4] = ["keyboard", "mouse", "moniter", "cpu"];
const EX3_B: [&str; 1] = ["computer"];

/// `(name, direction, list_A, list_B, expected)`. For hallucination list_A
/// is the ground truth; for coverage list_A holds the caption's objects.
type MatchExample = (&'static str, Direction, Vec<String>, Vec<String>, Vec<String>);

fn match_examples() -> Vec<MatchExample> {
    use Direction::*;
    vec![
        ("hallucination 1", Hallucination, strings(&EX1_A), strings(&EX1_B), strings(&["yellow jacket", "dining room table", "traffic light"])),
        ("hallucination 2", Hallucination, strings(&EX2_A), strings(&EX2_B), vec![]),
        ("hallucination 3", Hallucination, strings(&EX3_A), strings(&EX3_B), vec![]),
        ("coverage 1", Coverage, strings(&EX1_B), strings(&EX1_A[..6]), strings(&["reflection of light", "dark hair"])),
        ("coverage 2", Coverage, strings(&EX2_A), strings(&EX2_B_COVER), strings(&["plate", "apple"])),
        ("coverage 3", Coverage, strings(&EX3_A), strings(&EX3_B), vec![]),
    ]
}

fn plain(mentions: &[objhal::extraction::ObjectMention]) -> Vec<String> {
    mentions.iter().filter(|m| !m.indicated).map(|m| m.canonical.clone()).collect()
}

fn prompt_examples() -> Outcome {
    let start = Instant::now();
    let lexicon = ObjectLexicon::default_english();
    let table = SynonymTable::default();
    let client = LlmClient::new(LlmConfig { replay: true, ..LlmConfig::default() });
    let singularizer = lexicon.singularizer().clone();

    for (i, (text, expected)) in EXTRACT_EXAMPLES.iter().enumerate() {
        let caption = Caption::new(format!("ex{}", i + 1), "img", *text);
        let got = plain(&extract_lexicon(&caption, &lexicon));
        check(got == strings(expected), || format!("lexicon extraction {}: {got:?}", i + 1))?;

        let subs = BTreeMap::from([("cap".to_owned(), quote_caption(text))]);
        client.prime(&client.request(TemplateId::Extract, subs), &render_list_literal(expected)).map_err(|e| e.to_string())?;
        let got = plain(&objhal::extraction::extract_llm(&caption, &client, &singularizer).map_err(|e| e.to_string())?);
        check(got == strings(expected), || format!("replayed extraction {}: {got:?}", i + 1))?;
    }

    for (name, direction, list_a, list_b, expected) in match_examples() {
        let (gt, mentions) = match direction {
            Direction::Hallucination => (list_a, list_b),
            Direction::Coverage => (list_b, list_a),
        };
        let got = match direction {
            Direction::Hallucination => match_hallucination(&gt, &mentions, &table),
            Direction::Coverage => match_coverage(&mentions, &gt, &table),
        };
        check(got == expected, || format!("lexicon {name}: {got:?}"))?;

        let template = match direction {
            Direction::Hallucination => TemplateId::Hallucinate,
            Direction::Coverage => TemplateId::Cover,
        };
        let subs = BTreeMap::from([
            ("gt".to_owned(), render_list_literal(&gt)),
            ("cap_obj".to_owned(), render_list_literal(&mentions)),
        ]);
        client.prime(&client.request(template, subs), &render_list_literal(&expected)).map_err(|e| e.to_string())?;
        let got = match_llm(&gt, &mentions, direction, &client, &singularizer).map_err(|e| e.to_string())?;
        check(got == expected, || format!("replayed {name}: {got:?}"))?;
    }
    check(client.network_calls() == 0, || "replay made network calls".into())?;
    let took = start.elapsed();
    check(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    Ok("4 extraction and 6 matching examples on both backends".to_owned())
}

// ---------------------------------------------------------------- 2, 3

fn random_report(rng: &mut ChaCha8Rng, id: usize, p_indicated: f64) -> MatchReport {
    let mut pool: Vec<String> = (0..12).map(|i| format!("o{i}")).collect();
    pool.shuffle(rng);
    let n_sentences = rng.random_range(1..=4);
    let n_mentions = rng.random_range(0..=6);
    let mut mentioned = Vec::new();
    let (mut hallucinated, mut matched) = (Vec::new(), Vec::new());
    for name in pool.into_iter().take(n_mentions) {
        let sentences: Vec<usize> = if rng.random_bool(0.1) {
            Vec::new()
        } else {
            let mut s: Vec<usize> = (0..n_sentences).filter(|_| rng.random_bool(0.5)).collect();
            if s.is_empty() {
                s.push(rng.random_range(0..n_sentences));
            }
            s
        };
        if rng.random_bool(0.4) {
            hallucinated.push(name.clone());
        } else {
            matched.push(name.clone());
        }
        mentioned.push(MentionEntry { canonical: name, indicated: rng.random_bool(p_indicated), sentences });
    }
    let mut gt: Vec<String> = (0..10).map(|i| format!("g{i}")).collect();
    gt.shuffle(rng);
    gt.truncate(rng.random_range(0..=6));
    let (covered_gt, uncovered_gt): (Vec<_>, Vec<_>) = gt.into_iter().partition(|_| rng.random_bool(0.6));
    let covered_gt_plain = covered_gt.iter().filter(|_| rng.random_bool(0.6)).cloned().collect();
    let covered_gt_indicated = covered_gt.iter().filter(|_| rng.random_bool(0.3)).cloned().collect();
    MatchReport {
        caption_id: format!("c{id}"),
        image_id: format!("i{id}"),
        mentioned,
        hallucinated,
        matched,
        covered_gt,
        uncovered_gt,
        covered_gt_plain,
        covered_gt_indicated,
        n_words: rng.random_range(1..=40),
        n_sentences,
    }
}

fn random_batch(rng: &mut ChaCha8Rng) -> Vec<MatchReport> {
    let n = rng.random_range(1..=20);
    let p_indicated = [0.0, 0.2, 0.5][rng.random_range(0..3)];
    (0..n).map(|i| random_report(rng, i, p_indicated)).collect()
}

/// Integer counts recomputed from sets of (caption, object) and
/// (caption, sentence) pairs.
#[derive(Debug, PartialEq)]
struct OracleCounts {
    captions: usize,
    hallucinated: usize,
    mentioned: usize,
    hallucinated_units: usize,
    units: usize,
    covered: usize,
    total_gt: usize,
    words: usize,
}

fn oracle_counts(batch: &[MatchReport], mode: EvalMode, unit: SentenceUnit) -> OracleCounts {
    let eligible: Vec<usize> = (0..batch.len())
        .filter(|&c| mode != EvalMode::OnlyIndicated || batch[c].mentioned.iter().any(|m| m.indicated))
        .collect();
    let mut counted: BTreeSet<(usize, &str)> = BTreeSet::new();
    let mut wrong: BTreeSet<(usize, &str)> = BTreeSet::new();
    for &c in &eligible {
        let r = &batch[c];
        for m in &r.mentioned {
            let counts = match mode {
                EvalMode::Standard | EvalMode::IncludeIndicated => true,
                EvalMode::OnlyIndicated => m.indicated,
                EvalMode::ExcludeIndicated => !m.indicated,
            };
            if counts {
                counted.insert((c, &m.canonical));
            }
            let wrong_here = match mode {
                EvalMode::Standard => true,
                EvalMode::OnlyIndicated => m.indicated,
                EvalMode::ExcludeIndicated | EvalMode::IncludeIndicated => !m.indicated,
            };
            if wrong_here && r.hallucinated.contains(&m.canonical) {
                wrong.insert((c, &m.canonical));
            }
        }
    }
    let sentences_of = |m: &MentionEntry| -> BTreeSet<usize> {
        if m.sentences.is_empty() {
            BTreeSet::from([0])
        } else {
            m.sentences.iter().copied().collect()
        }
    };
    let mut units: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut bad_units: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &c in &eligible {
        let r = &batch[c];
        match unit {
            SentenceUnit::Caption => {
                units.insert((c, 0));
                if wrong.iter().any(|(wc, _)| *wc == c) {
                    bad_units.insert((c, 0));
                }
            }
            SentenceUnit::Sentence => {
                for s in 0..r.n_sentences {
                    let keep = mode != EvalMode::OnlyIndicated
                        || r.mentioned.iter().any(|m| m.indicated && sentences_of(m).contains(&s));
                    if !keep {
                        continue;
                    }
                    units.insert((c, s));
                    let hit = r
                        .mentioned
                        .iter()
                        .any(|m| wrong.contains(&(c, m.canonical.as_str())) && sentences_of(m).contains(&s));
                    if hit {
                        bad_units.insert((c, s));
                    }
                }
            }
        }
    }
    let mut covered: BTreeSet<(usize, &str)> = BTreeSet::new();
    let mut gt: BTreeSet<(usize, &str)> = BTreeSet::new();
    for &c in &eligible {
        let r = &batch[c];
        let source = match mode {
            EvalMode::Standard | EvalMode::IncludeIndicated => &r.covered_gt,
            EvalMode::OnlyIndicated => &r.covered_gt_indicated,
            EvalMode::ExcludeIndicated => &r.covered_gt_plain,
        };
        covered.extend(source.iter().map(|g| (c, g.as_str())));
        gt.extend(r.covered_gt.iter().chain(&r.uncovered_gt).map(|g| (c, g.as_str())));
    }
    OracleCounts {
        captions: eligible.len(),
        hallucinated: wrong.len(),
        mentioned: counted.len(),
        hallucinated_units: bad_units.len(),
        units: units.len(),
        covered: covered.len(),
        total_gt: gt.len(),
        words: eligible.iter().map(|&c| batch[c].n_words).sum(),
    }
}

fn pct(num: usize, den: usize) -> f64 {
    100.0 * num as f64 / den as f64
}

fn oracle_metrics(o: &OracleCounts, mode: EvalMode) -> Option<[Option<f64>; 5]> {
    if o.units == 0 || o.mentioned == 0 || o.total_gt == 0 || o.captions == 0 {
        return None;
    }
    let n = o.captions as f64;
    Some([
        Some(pct(o.hallucinated_units, o.units)),
        Some(pct(o.hallucinated, o.mentioned)),
        Some(pct(o.covered, o.total_gt)),
        (mode != EvalMode::OnlyIndicated).then(|| o.words as f64 / n),
        Some(o.mentioned as f64 / n),
    ])
}

fn from_raw(c: &RawCounts) -> OracleCounts {
    OracleCounts {
        captions: c.captions,
        hallucinated: c.hallucinated,
        mentioned: c.mentioned,
        hallucinated_units: c.hallucinated_units,
        units: c.units,
        covered: c.covered_gt,
        total_gt: c.total_gt,
        words: c.words,
    }
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut compared, mut empty) = (0usize, 0usize);
    for b in 0..1000 {
        let batch = random_batch(&mut rng);
        for mode in EvalMode::ALL {
            for unit in [SentenceUnit::Caption, SentenceUnit::Sentence] {
                let expected = oracle_counts(&batch, mode, unit);
                let raw = RawCounts::tally(&batch, mode, unit);
                check(from_raw(&raw) == expected, || format!("batch {b} {mode} {unit:?}: {raw:?} vs {expected:?}"))?;
                match (summarize(&batch, mode, unit), oracle_metrics(&expected, mode)) {
                    (Ok(s), Some(m)) => {
                        let got = [Some(s.chair_s), Some(s.chair_i), Some(s.coverage), s.avg_length, Some(s.avg_objects)];
                        check(got == m, || format!("batch {b} {mode} {unit:?}: {got:?} vs {m:?}"))?;
                        compared += 1;
                    }
                    (Err(Error::EmptyDenominator { .. }), None) => empty += 1,
                    (got, want) => return Err(format!("batch {b} {mode} {unit:?}: {got:?} vs oracle {want:?}")),
                }
            }
        }
    }
    let took = start.elapsed();
    check(took < Duration::from_secs(10), || format!("took {took:?}"))?;
    Ok(format!("1000 batches, {compared} exact matches, {empty} empty denominators agreed"))
}

fn mode_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4048);
    let mut plain_batches = 0;
    for b in 0..1000 {
        let batch = random_batch(&mut rng);
        for unit in [SentenceUnit::Caption, SentenceUnit::Sentence] {
            let std = RawCounts::tally(&batch, EvalMode::Standard, unit);
            let exc = RawCounts::tally(&batch, EvalMode::ExcludeIndicated, unit);
            let inc = RawCounts::tally(&batch, EvalMode::IncludeIndicated, unit);
            check(inc.hallucinated == exc.hallucinated, || format!("batch {b}: numerators {} vs {}", inc.hallucinated, exc.hallucinated))?;
            check(inc.mentioned == std.mentioned, || format!("batch {b}: denominators {} vs {}", inc.mentioned, std.mentioned))?;
        }

        let mut stripped = batch.clone();
        for r in &mut stripped {
            for m in &mut r.mentioned {
                m.indicated = false;
            }
            r.covered_gt_plain = r.covered_gt.clone();
            r.covered_gt_indicated.clear();
        }
        plain_batches += 1;
        for unit in [SentenceUnit::Caption, SentenceUnit::Sentence] {
            let results: Vec<_> = [EvalMode::Standard, EvalMode::ExcludeIndicated, EvalMode::IncludeIndicated]
                .into_iter()
                .map(|mode| {
                    summarize(&stripped, mode, unit).map(|mut s| {
                        s.mode = EvalMode::Standard;
                        s
                    })
                })
                .collect();
            let same = match (&results[0], &results[1], &results[2]) {
                (Ok(a), Ok(b), Ok(c)) => a == b && b == c,
                (Err(_), Err(_), Err(_)) => true,
                _ => false,
            };
            check(same, || format!("batch {b} without indication: modes differ {results:?}"))?;
        }
    }
    Ok(format!("identities hold on 1000 batches; {plain_batches} indication-free copies agree across three modes"))
}

// ---------------------------------------------------------------- 4, 5

fn random_model(seed: u64, words: usize, dim: usize, w_scale: f64) -> ControlledLM {
    let text: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
    let vocab = Vocab::from_texts(&[text.join(" ")]);
    let mut model = ControlledLM::new_random(vocab, dim, seed).expect("valid model");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    model.set_w(DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-w_scale..w_scale))).unwrap();
    model
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn control_identities() -> Outcome {
    let (mut worst_base, mut worst_affine, mut worst_norm, mut worst_seq) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 0..5u64 {
        let model = random_model(seed, 6 + seed as usize, 4 + seed as usize, 0.5);
        let v = model.vocab().len();
        let (e, c, w) = (model.e(), model.c(), model.w());
        let shift = c.transpose() * w * e;
        for ctx in 0..=v {
            let prev = (ctx < v).then_some(ctx);
            let base_logits: Vec<f64> = (0..v).map(|j| c.column(ctx).dot(&e.column(j))).collect();
            let base = softmax(&base_logits);
            let at_zero = model.next_token_dist(prev, 0.0);
            worst_base = worst_base.max(base.iter().zip(&at_zero).map(|(a, b)| (a - b).abs()).sum());
            for eps in [-1.0, -0.6, -0.25, 0.0, 0.3, 0.75, 1.0] {
                let logits = model.logits(prev, eps);
                for j in 0..v {
                    worst_affine = worst_affine.max((logits[j] - (base_logits[j] + eps * shift[(ctx, j)])).abs());
                }
                let p = model.next_token_dist(prev, eps);
                worst_norm = worst_norm.max((p.iter().sum::<f64>() - 1.0).abs());
            }
        }
        for eps in [-1.0, 0.0, 0.5, 1.0] {
            let mut total = 0.0;
            for a in 0..v {
                for b in 0..v {
                    total += model.sequence_logprob(&[a, b], eps).exp();
                }
            }
            worst_seq = worst_seq.max((total - 1.0).abs());
        }
    }
    check(worst_base <= 1e-12, || format!("ε=0 vs base L1 {worst_base:e}"))?;
    check(worst_affine <= 1e-12, || format!("affine residual {worst_affine:e}"))?;
    check(worst_norm <= 1e-12, || format!("normalization {worst_norm:e}"))?;
    check(worst_seq <= 1e-9, || format!("length-2 mass {worst_seq:e}"))?;
    Ok(format!(
        "base {worst_base:.1e}, affine {worst_affine:.1e}, normalized {worst_norm:.1e}, length-2 mass {worst_seq:.1e}"
    ))
}

fn naive_control_loss(model: &ControlledLM, w: &DMatrix<f64>, records: &[(i8, Vec<usize>)], l2: f64) -> f64 {
    let (e, c) = (model.e(), model.c());
    let start = model.vocab().len();
    let (mut total, mut n) = (0.0, 0.0);
    for (label, seq) in records {
        let eps = f64::from(*label);
        let emb = e + w * e * eps;
        let mut ctx = start;
        for &t in seq {
            let logits: Vec<f64> = (0..emb.ncols()).map(|j| c.column(ctx).dot(&emb.column(j))).collect();
            total -= softmax(&logits)[t].ln();
            n += 1.0;
            ctx = t;
        }
    }
    total / n + 0.5 * l2 * w.iter().map(|x| x * x).sum::<f64>()
}

fn gradient_check() -> Outcome {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let model = random_model(100 + seed, 4 + seed as usize, 3 + seed as usize % 3, 0.4);
        let v = model.vocab().len();
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let records: Vec<(i8, Vec<usize>)> = (0..12)
            .map(|i| {
                let len = rng.random_range(2..8);
                let mut seq: Vec<usize> = (0..len).map(|_| rng.random_range(0..v)).collect();
                seq.push(model.vocab().end());
                (if i % 2 == 0 { 1 } else { -1 }, seq)
            })
            .collect();
        let l2 = 0.01 * seed as f64;
        let counts = LabeledCounts::from_labeled(v, &records).map_err(|e| e.to_string())?;
        let analytic = control_grad(&model, &counts, l2);
        let w = model.w().clone();
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                let mut plus = w.clone();
                plus[(i, j)] += h;
                let mut minus = w.clone();
                minus[(i, j)] -= h;
                let fd = (naive_control_loss(&model, &plus, &records, l2) - naive_control_loss(&model, &minus, &records, l2))
                    / (2.0 * h);
                let a = analytic[(i, j)];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
                worst = worst.max(rel);
            }
        }
    }
    check(worst < 1e-5, || format!("max relative error {worst:e}"))?;
    Ok(format!("5 instances, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 6, 7

fn toy_directionality(report: &ToyReport, took: Duration) -> Outcome {
    let cfg = ToyWorldConfig::default();
    check(report.vocab_size <= 60, || format!("vocab {}", report.vocab_size))?;
    check(cfg.dim == 16, || format!("dim {}", cfg.dim))?;
    check(report.records == 2000, || format!("{} records", report.records))?;
    check(cfg.samples == 500, || format!("{} samples", cfg.samples))?;
    let rate = |e: f64| report.run(e).map(|r| r.inferred_rate).ok_or(format!("no run at ε={e}"));
    let (lo, hi) = (rate(-1.0)?, rate(1.0)?);
    let rates: Vec<String> = report.runs.iter().map(|r| format!("{}:{:.4}", r.epsilon, r.inferred_rate)).collect();
    check(lo > 0.0 && hi >= 2.0 * lo, || format!("rate {hi:.4} at +1 vs {lo:.4} at -1 ({rates:?})"))?;
    check(report.rate_inversions() <= 1, || format!("{} inversions ({rates:?})", report.rate_inversions()))?;
    check(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!("ratio {:.2}, {} inversions, rates [{}]", hi / lo, report.rate_inversions(), rates.join(" ")))
}

fn indication_discipline(report: &ToyReport) -> Outcome {
    let run = report.run(1.0).ok_or("no run at ε=+1")?;
    let chair = |mode: &str| run.summaries.get(mode).map(|s| s.chair_i).ok_or(format!("no {mode} summary"));
    let (only, wo) = (chair("only-ind")?, chair("wo-ind")?);
    check(only - wo >= 20.0, || format!("only-ind {only:.2} vs wo-ind {wo:.2}"))?;
    Ok(format!("CHAIR_i only-ind {only:.2} vs wo-ind {wo:.2} at ε=+1 (gap {:.2})", only - wo))
}

// ---------------------------------------------------------------- 8

fn bound_endpoints() -> Outcome {
    let eps = [1.0, -1.0, 0.5];
    let ks = [0.0, 0.25, 0.5, 0.75, 1.0];
    let (mut worst_end, mut grid_pass, mut grid_total) = (0.0f64, 0, 0);
    for seed in 0..3u64 {
        let mut model = random_model(300 + seed, 5, 4, 0.6);
        let report = verify_bound(&model, &eps, &ks, 3, 2_000_000).map_err(|e| e.to_string())?;
        for p in &report.points {
            if p.k == 0.0 || p.k == 1.0 {
                worst_end = worst_end.max(p.lhs);
            }
            grid_total += 1;
            grid_pass += usize::from(p.pass);
        }
        model.set_w(DMatrix::zeros(model.dim(), model.dim())).unwrap();
        let zero = verify_bound(&model, &eps, &ks, 3, 2_000_000).map_err(|e| e.to_string())?;
        check(zero.points.iter().all(|p| p.lhs == 0.0), || format!("W = 0 gives nonzero lhs for seed {seed}"))?;
    }
    check(worst_end <= 1e-12, || format!("endpoint lhs {worst_end:e}"))?;
    Ok(format!("endpoint lhs ≤ {worst_end:.1e}, W = 0 exact; full grid {grid_pass}/{grid_total} within bound (reported)"))
}

// ---------------------------------------------------------------- 9, 10

fn lint_ten_thousand() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = PipelineRun { images: 5200, epochs: 0, samples: 0, epsilons: &[], llm: false, extra: &["--seed", "3"] };
    pipeline(dir.path(), &cfg, &objhal);
    let lint: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("lint/lint.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let records = lint["records"].as_u64().unwrap_or(0);
    check(records >= 10_000, || format!("only {records} records"))?;
    check(lint["contextual_with_brackets"] == 0, || format!("{lint}"))?;
    check(lint["brackets_on_grounded"] == 0, || format!("{lint}"))?;
    Ok(format!("{records} records: 0 contextual with brackets, 0 brackets on grounded objects"))
}

fn determinism() -> Outcome {
    let server = FakeLlm::start();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cache = dir.path().join("cache");
    let cache_arg = p(&cache).to_owned();
    let run_cfg = |extra: &'static [&'static str]| PipelineRun {
        images: 120,
        epochs: 150,
        samples: 60,
        epsilons: &["-1", "1"],
        llm: true,
        extra,
    };
    let with_cache = |mut cmd: std::process::Command, replay: bool| {
        cmd.args(["--cache-dir", &cache_arg]);
        if replay {
            cmd.arg("--replay");
        }
        cmd
    };
    let root = |name: &str| dir.path().join(name);
    pipeline(&root("live"), &run_cfg(&["--seed", "11"]), &|| with_cache(server.command(), false));
    let calls = server.hits();
    check(calls > 0, || "live run made no calls".into())?;
    for name in ["replay1", "replay2"] {
        pipeline(&root(name), &run_cfg(&["--seed", "11"]), &|| with_cache(objhal(), true));
    }
    check(server.hits() == calls, || "replay runs touched the network".into())?;
    let snaps: Vec<_> = ["live", "replay1", "replay2"].iter().map(|n| snapshot(&root(n))).collect();
    let files = snaps[1].len();
    check(files > 20, || format!("only {files} files"))?;
    for (i, name) in ["live", "replay2"].iter().enumerate() {
        let other = &snaps[if i == 0 { 0 } else { 2 }];
        if let Some(((path, _), _)) = snaps[1].iter().zip(other).find(|(a, b)| a != b) {
            return Err(format!("replay1 and {name} differ at {path}"));
        }
        check(snaps[1].len() == other.len(), || format!("replay1 and {name} have different file sets"))?;
    }
    check(!contains(&all_bytes(&cache), API_KEY), || "credential in cache".into())?;
    Ok(format!("{files} files byte-identical across live and two replay runs; {calls} live calls, 0 on replay"))
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome, took: Duration| {
        match outcome {
            Ok(detail) => println!("PASS [{n:2}] {name}: {detail} ({took:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL [{n:2}] {name}: {why} ({took:.2?})");
            }
        }
    };
    let timed = |f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| (*s).to_owned())).unwrap_or_default())
        });
        (out, start.elapsed())
    };

    let (o, t) = timed(&prompt_examples);
    report(1, "prompt examples", o, t);
    let (o, t) = timed(&metric_oracle);
    report(2, "metric oracle", o, t);
    let (o, t) = timed(&mode_identities);
    report(3, "mode identities", o, t);
    let (o, t) = timed(&control_identities);
    report(4, "control identities", o, t);
    let (o, t) = timed(&gradient_check);
    report(5, "gradient check", o, t);

    let start = Instant::now();
    let toy = run_experiment(&ToyWorldConfig::default());
    let toy_time = start.elapsed();
    match &toy {
        Ok(r) => {
            report(6, "control directionality", toy_directionality(r, toy_time), toy_time);
            report(7, "indication discipline", indication_discipline(r), Duration::ZERO);
        }
        Err(e) => {
            report(6, "control directionality", Err(e.to_string()), toy_time);
            report(7, "indication discipline", Err(e.to_string()), Duration::ZERO);
        }
    }

    let (o, t) = timed(&bound_endpoints);
    report(8, "bound endpoints", o, t);
    let (o, t) = timed(&lint_ten_thousand);
    report(9, "datagen label discipline", o, t);
    let (o, t) = timed(&determinism);
    report(10, "end-to-end determinism", o, t);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
