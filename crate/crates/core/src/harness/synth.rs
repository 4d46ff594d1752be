//! Seeded synthetic corpus: every class owns a disjoint keyword vocabulary
//! and all classes share a filler vocabulary.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub keywords_per_class: usize,
    pub filler_words: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub keyword_fraction: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            keywords_per_class: 30,
            filler_words: 50,
            min_tokens: 8,
            max_tokens: 20,
            keyword_fraction: 0.7,
            train_per_class: 100,
            test_per_class: 20,
        }
    }
}

pub struct SynthCorpus {
    pub train_tsv: String,
    pub test_tsv: String,
}

fn sentence(rng: &mut Rng, spec: &SynthSpec, class: usize) -> String {
    let len = rng.gen_range(spec.min_tokens..=spec.max_tokens);
    let keywords = (spec.keyword_fraction * len as f64).round() as usize;
    let mut words: Vec<String> = (0..len)
        .map(|i| {
            if i < keywords {
                format!("c{class}k{}", rng.gen_range(0..spec.keywords_per_class))
            } else {
                format!("f{}", rng.gen_range(0..spec.filler_words))
            }
        })
        .collect();
    words.shuffle(rng);
    words.join(" ")
}

/// Train and test TSV text. Lines are grouped by class, classes in order.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    if spec.classes < 2
        || spec.keywords_per_class == 0
        || spec.filler_words == 0
        || spec.min_tokens == 0
        || spec.min_tokens > spec.max_tokens
        || !(0.0..=1.0).contains(&spec.keyword_fraction)
    {
        return Err(Error::usage(format!(
            "invalid synthetic corpus spec {spec:?}"
        )));
    }
    let mut rng = seeded(seed, Stream::Synth);
    let mut train = String::new();
    let mut test = String::new();
    for c in 0..spec.classes {
        for _ in 0..spec.train_per_class {
            let _ = writeln!(train, "class{c}\t{}", sentence(&mut rng, spec, c));
        }
        for _ in 0..spec.test_per_class {
            let _ = writeln!(test, "class{c}\t{}", sentence(&mut rng, spec, c));
        }
    }
    Ok(SynthCorpus {
        train_tsv: train,
        test_tsv: test,
    })
}

/// Writes `train.tsv` and `test.tsv` into `dir`, creating it if needed.
pub fn write_corpus(dir: &Path, spec: &SynthSpec, seed: u64) -> Result<()> {
    let corpus = generate(spec, seed)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [
        ("train.tsv", &corpus.train_tsv),
        ("test.tsv", &corpus.test_tsv),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
