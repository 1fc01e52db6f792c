mod datagen;
mod eval;
mod model;
mod report;

use std::path::Path;

use objhal::extraction::ObjectLexicon;
use objhal::llm_client::LlmClient;
use objhal::matching::SynonymTable;
use objhal::{Error, Result};

use crate::args::{Cli, Command};
use crate::config::Resolved;
use crate::manifest::Recorder;

pub fn run(cli: &Cli) -> Result<()> {
    let r = Resolved::new(&cli.global)?;
    match &cli.command {
        Command::Eval(a) => eval::eval(a, &r),
        Command::Extract(a) => eval::extract(a, &r),
        Command::Datagen(c) => datagen::run(c, &r),
        Command::Synth(a) => datagen::synth(a, &r),
        Command::TrainBase(a) => model::train_base(a, &r),
        Command::TrainControl(a) => model::train_control(a, &r),
        Command::Generate(a) => model::generate(a, &r),
        Command::VerifyBound(a) => model::verify_bound(a),
        Command::Report(a) => report::report(a),
        Command::ToyExperiment(a) => model::toy_experiment(a, &r),
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start {jobs} worker threads: {e}")))
}

fn lexicon(dir: Option<&Path>, rec: &mut Recorder) -> Result<ObjectLexicon> {
    match dir {
        Some(d) => {
            rec.input(d)?;
            ObjectLexicon::load_dir(d)
        }
        None => Ok(ObjectLexicon::default_english()),
    }
}

fn synonyms(path: Option<&Path>, rec: &mut Recorder) -> Result<SynonymTable> {
    match path {
        Some(p) => {
            rec.input(p)?;
            SynonymTable::load(p)
        }
        None => Ok(SynonymTable::default()),
    }
}

fn llm_client(r: &Resolved) -> LlmClient {
    LlmClient::new(r.llm_config())
}
