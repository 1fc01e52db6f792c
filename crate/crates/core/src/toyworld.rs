//! A synthetic world for exercising the controlled language model end to end.
//!
//! Images hold two kinds of objects. Scene objects (trees, buses, roads) are
//! nearly always present and nearly always visible to the oracle. Inferred
//! objects (people, birds, phones) are rare and rarely visible, so a caption
//! that names them is usually guessing. Contextual captions list only the
//! visible objects; joint captions list every object and bracket the hidden
//! ones.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{render_tokens, sample_seed, train_base, train_control, ControlledLM, TrainConfig, TrainLog, Vocab};
use crate::datagen::{annotate_brackets, split_objects, template_caption, SeededRandomOracle, TrainingExample};
use crate::error::{Error, Result};
use crate::extraction::{Caption, LexiconExtractor, ObjectLexicon};
use crate::matching::{GroundTruthSet, LexiconMatcher, SynonymTable};
use crate::metrics::{EvalMode, EvalSummary, SentenceUnit};
use crate::pipeline::evaluate;

pub const SCENE_OBJECTS: &[&str] = &["tree", "bus", "car", "street", "building", "sign", "bench", "road"];
pub const INFERRED_OBJECTS: &[&str] = &["person", "cloud", "light", "bird", "dog", "bag", "phone", "umbrella"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyWorldConfig {
    pub seed: u64,
    /// Images behind the training corpus; each yields one record per label.
    pub images: usize,
    /// Chance that each scene object is present in an image.
    pub scene_presence: f64,
    pub scene_visibility: f64,
    pub inferred_visibility: f64,
    pub dim: usize,
    pub base: TrainConfig,
    pub control: TrainConfig,
    pub samples: usize,
    pub max_len: usize,
    pub epsilons: Vec<f64>,
}

impl Default for ToyWorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            images: 1000,
            scene_presence: 0.85,
            scene_visibility: 0.9,
            inferred_visibility: 0.1,
            dim: 16,
            base: TrainConfig { learning_rate: 2.0, epochs: 600, ..Default::default() },
            control: TrainConfig { learning_rate: 0.3, epochs: 600, l2: 1e-4, ..Default::default() },
            samples: 500,
            max_len: 48,
            epsilons: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        }
    }
}

pub fn toy_lexicon() -> ObjectLexicon {
    let objects = SCENE_OBJECTS.iter().chain(INFERRED_OBJECTS);
    ObjectLexicon::from_terms(objects, ["image", "scene"], std::iter::empty::<&str>()).expect("toy lexicon is valid")
}

pub fn toy_oracle(cfg: &ToyWorldConfig) -> SeededRandomOracle {
    let mut oracle = SeededRandomOracle::new(cfg.scene_visibility, cfg.seed);
    for o in INFERRED_OBJECTS {
        oracle.overrides.insert((*o).to_owned(), cfg.inferred_visibility);
    }
    oracle
}

/// `n` images named `{prefix}{index}`, each with its scene objects drawn
/// independently and one or two inferred objects.
pub fn sample_images(n: usize, prefix: &str, scene_presence: f64, seed: u64) -> Vec<GroundTruthSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut objects: Vec<&str> = SCENE_OBJECTS.iter().copied().filter(|_| rng.random_bool(scene_presence)).collect();
            if objects.is_empty() {
                objects.push(SCENE_OBJECTS.choose(&mut rng).expect("non-empty"));
            }
            let k = rng.random_range(1..=2);
            objects.extend(INFERRED_OBJECTS.choose_multiple(&mut rng, k).copied());
            GroundTruthSet::new(format!("{prefix}{i:05}"), objects)
        })
        .collect()
}

/// One contextual (−1) and one joint (+1) record per image. Images with no
/// visible object contribute only the joint record.
pub fn build_corpus(images: &[GroundTruthSet], oracle: &SeededRandomOracle, seed: u64) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::with_capacity(images.len() * 2);
    for gt in images {
        let split = split_objects(gt, oracle)?;
        if !split.grounded.is_empty() {
            out.push(TrainingExample {
                epsilon_label: -1,
                text: template_caption(&gt.image_id, &split.grounded, seed),
                image_id: gt.image_id.clone(),
            });
        }
        let full = template_caption(&gt.image_id, &gt.objects, seed.wrapping_add(1));
        out.push(TrainingExample {
            epsilon_label: 1,
            text: annotate_brackets(&full, &split.omitted)?,
            image_id: gt.image_id.clone(),
        });
    }
    Ok(out)
}

/// Share of non-end tokens that name an inferred object.
pub fn inferred_token_rate(vocab: &Vocab, samples: &[Vec<usize>]) -> f64 {
    let inferred: Vec<usize> = INFERRED_OBJECTS.iter().filter_map(|o| vocab.id(o)).collect();
    let (mut hits, mut total) = (0usize, 0usize);
    for s in samples {
        for &t in s.iter().filter(|&&t| t != vocab.end()) {
            total += 1;
            hits += usize::from(inferred.contains(&t));
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRun {
    pub epsilon: f64,
    pub inferred_rate: f64,
    pub captions: Vec<String>,
    pub summaries: BTreeMap<String, EvalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyReport {
    pub vocab_size: usize,
    pub records: usize,
    pub base_log: TrainLog,
    pub control_log: TrainLog,
    pub runs: Vec<EpsilonRun>,
}

impl ToyReport {
    pub fn run(&self, epsilon: f64) -> Option<&EpsilonRun> {
        self.runs.iter().find(|r| r.epsilon == epsilon)
    }

    /// Adjacent ε pairs where the inferred-token rate went down.
    pub fn rate_inversions(&self) -> usize {
        self.runs.windows(2).filter(|w| w[1].inferred_rate < w[0].inferred_rate).count()
    }
}

pub struct TrainedToy {
    pub model: ControlledLM,
    pub corpus: Vec<TrainingExample>,
    pub base_log: TrainLog,
    pub control_log: TrainLog,
}

pub fn train_toy(cfg: &ToyWorldConfig) -> Result<TrainedToy> {
    let images = sample_images(cfg.images, "train-", cfg.scene_presence, cfg.seed);
    let corpus = build_corpus(&images, &toy_oracle(cfg), cfg.seed)?;
    let texts: Vec<&str> = corpus.iter().map(|r| r.text.as_str()).collect();
    let vocab = Vocab::from_texts(&texts);
    let records: Vec<(i8, Vec<usize>)> =
        corpus.iter().map(|r| Ok((r.epsilon_label, vocab.encode(&r.text)?))).collect::<Result<_>>()?;
    let sequences: Vec<Vec<usize>> = records.iter().map(|(_, s)| s.clone()).collect();
    let mut model = ControlledLM::new_random(vocab, cfg.dim, cfg.seed)?;
    let base_log = train_base(&mut model, &sequences, &TrainConfig { seed: cfg.seed, ..cfg.base.clone() })?;
    let control_log = train_control(&mut model, &records, &TrainConfig { seed: cfg.seed, ..cfg.control.clone() })?;
    Ok(TrainedToy { model, corpus, base_log, control_log })
}

/// Samples captions at `epsilon` and scores them against fresh images.
pub fn sample_and_score(model: &ControlledLM, cfg: &ToyWorldConfig, epsilon: f64) -> Result<EpsilonRun> {
    let seqs: Vec<Vec<usize>> = (0..cfg.samples as u64)
        .map(|i| model.generate(epsilon, cfg.max_len, sample_seed(cfg.seed, i)))
        .collect::<Result<_>>()?;
    let vocab = model.vocab();
    let captions: Vec<String> = seqs.iter().map(|s| render_tokens(&vocab.decode(s))).collect();
    let images = sample_images(cfg.samples, "eval-", cfg.scene_presence, cfg.seed.wrapping_add(1));
    let batch: Vec<Caption> = captions
        .iter()
        .zip(&images)
        .enumerate()
        .filter(|(_, (text, _))| !text.trim().is_empty())
        .map(|(i, (text, gt))| Caption::new(format!("s{i:05}"), gt.image_id.clone(), text.clone()))
        .collect();
    let gt_map: BTreeMap<String, GroundTruthSet> = images.into_iter().map(|g| (g.image_id.clone(), g)).collect();
    let lexicon = toy_lexicon();
    let singularizer = lexicon.singularizer().clone();
    let extractor = LexiconExtractor { lexicon };
    let matcher = LexiconMatcher { table: SynonymTable::empty(true) };
    let mut summaries = BTreeMap::new();
    for mode in EvalMode::ALL {
        match evaluate(&batch, &gt_map, &extractor, &matcher, &singularizer, mode, SentenceUnit::Caption) {
            Ok(out) => {
                summaries.insert(mode.as_str().to_owned(), out.summary);
            }
            Err(Error::EmptyDenominator { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(EpsilonRun { epsilon, inferred_rate: inferred_token_rate(vocab, &seqs), captions, summaries })
}

/// Trains the toy model, then samples and scores it at every configured ε.
pub fn run_experiment(cfg: &ToyWorldConfig) -> Result<ToyReport> {
    let trained = train_toy(cfg)?;
    let runs = cfg.epsilons.iter().map(|&e| sample_and_score(&trained.model, cfg, e)).collect::<Result<_>>()?;
    Ok(ToyReport {
        vocab_size: trained.model.vocab().len(),
        records: trained.corpus.len(),
        base_log: trained.base_log,
        control_log: trained.control_log,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::lint_corpus;

    #[test]
    fn corpus_respects_labels() {
        let cfg = ToyWorldConfig { images: 200, ..Default::default() };
        let images = sample_images(cfg.images, "t", cfg.scene_presence, 1);
        let oracle = toy_oracle(&cfg);
        let corpus = build_corpus(&images, &oracle, 1).unwrap();
        let splits = images.iter().map(|g| (g.image_id.clone(), split_objects(g, &oracle).unwrap())).collect();
        assert!(lint_corpus(&corpus, &splits).is_clean());
        let vocab = Vocab::from_texts(&corpus.iter().map(|r| r.text.as_str()).collect::<Vec<_>>());
        assert!(vocab.len() <= 60, "{}", vocab.len());
    }

    #[test]
    fn images_are_seeded() {
        assert_eq!(sample_images(5, "a", 0.8, 3), sample_images(5, "a", 0.8, 3));
        assert_ne!(sample_images(5, "a", 0.8, 3), sample_images(5, "a", 0.8, 4));
        for g in sample_images(50, "a", 0.8, 3) {
            let inferred = g.objects.iter().filter(|o| INFERRED_OBJECTS.contains(&o.as_str())).count();
            assert!((1..=2).contains(&inferred));
        }
    }

    #[test]
    fn rate_counts_inferred_tokens() {
        let vocab = Vocab::from_texts(&["a dog and a tree ."]);
        let seq = vocab.encode("a dog and a tree .").unwrap();
        assert!((inferred_token_rate(&vocab, &[seq]) - 1.0 / 6.0).abs() < 1e-12);
    }
}
