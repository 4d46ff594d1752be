//! Experiment orchestration: seen/unseen splits, the end-to-end pipeline,
//! macro-F1 scoring with rejection, and reports.
//!
//! A run goes split → pairs → train → memory → thresholds → decide → score.
//! Every random choice draws from a stream of the single experiment seed, so
//! a report is a pure function of the input bytes and the config (apart
//! from its timing fields).

mod gradients;
mod metrics;
mod report;
pub mod synth;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

pub use gradients::{gradient_suite, GRADIENT_TOLERANCE};
pub use metrics::{macro_f1, ClassScores, F1Over, F1Table};
pub use report::{
    emit_report, render_table, ClassRow, Confusion, Report, Timings, REJECT_LABEL, REPORT_FORMAT,
};

use crate::error::{Error, Result, StageContext};
use crate::matcher::{self, MatchModel, ModelDims, TrainConfig, TrainOutcome, Variant};
use crate::numerics::OptimizerKind;
use crate::openworld::{
    self, decide, score_many, Decision, Memory, Parallelism, ThresholdMode, Thresholds,
};
use crate::rng::{seeded, Stream};
use crate::text_data::{
    build_vocab, load_dataset, load_embeddings, tokenize, EmbeddingTable, Instance, LabeledDataset,
    RawDataset, TokenizeMode, Vocab,
};

/// Embedding size used when no embedding file is given.
pub const DEFAULT_EMBEDDING_DIM: usize = 50;

/// Number of seen classes, as a count or a `seen:unseen` ratio such as `"7:3"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeenSpec {
    Count(usize),
    Ratio(String),
}

impl Default for SeenSpec {
    fn default() -> Self {
        SeenSpec::Ratio("7:3".into())
    }
}

impl std::str::FromStr for SeenSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.contains(':') {
            Ok(SeenSpec::Ratio(s.to_owned()))
        } else {
            s.parse()
                .map(SeenSpec::Count)
                .map_err(|_| Error::usage(format!("bad seen-class spec {s:?}")))
        }
    }
}

impl SeenSpec {
    /// Seen-class count out of `total` classes.
    pub fn resolve(&self, total: usize) -> Result<usize> {
        let n = match self {
            SeenSpec::Count(n) => *n,
            SeenSpec::Ratio(r) => {
                let parsed = r.split_once(':').and_then(|(a, b)| {
                    Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?))
                });
                match parsed {
                    Some((a, b)) if a > 0.0 && b > 0.0 => {
                        (total as f64 * a / (a + b)).round() as usize
                    }
                    _ => return Err(Error::usage(format!("bad seen:unseen ratio {r:?}"))),
                }
            }
        };
        if n < 2 || n >= total {
            return Err(Error::usage(format!(
                "seen-class count must be in [2, {}), got {n} of {total}",
                total
            )));
        }
        Ok(n)
    }
}

/// Every knob of an experiment. Config files are flat JSON objects with
/// these field names; absent fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Defaults to the embedding file's size, or 50 without a file.
    pub embedding_dim: Option<usize>,
    pub max_len: usize,
    pub min_freq: usize,
    pub tokenize: TokenizeMode,
    pub variant: Variant,
    pub seen: SeenSpec,
    pub k: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub feature_maps: usize,
    pub fine_tune_embeddings: bool,
    pub symmetric_pairs: bool,
    pub threshold_mode: ThresholdMode,
    pub alpha: f64,
    pub f1_over: F1Over,
    pub seed: u64,
    /// Repeat the run once per seed; overrides `seed`.
    pub seeds: Option<Vec<u64>>,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            train_path: None,
            test_path: None,
            embeddings: None,
            embedding_dim: None,
            max_len: matcher::DEFAULT_MAX_LEN,
            min_freq: 1,
            tokenize: TokenizeMode::default(),
            variant: Variant::Pm2,
            seen: SeenSpec::default(),
            k: 15,
            optimizer: train.optimizer,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            hidden: train.hidden,
            feature_maps: matcher::DEFAULT_FEATURE_MAPS,
            fine_tune_embeddings: train.fine_tune_embeddings,
            symmetric_pairs: train.symmetric_pairs,
            threshold_mode: ThresholdMode::default(),
            alpha: openworld::DEFAULT_ALPHA,
            f1_over: F1Over::default(),
            seed: 7,
            seeds: None,
            output: PathBuf::from("report.json"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::usage(format!("bad config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            hidden: self.hidden,
            fine_tune_embeddings: self.fine_tune_embeddings,
            symmetric_pairs: self.symmetric_pairs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::usage("K must be at least 1"));
        }
        if self.max_len == 0 || self.min_freq == 0 || self.feature_maps == 0 {
            return Err(Error::usage(
                "max_len, min_freq and feature_maps must be positive",
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::usage("alpha must be positive"));
        }
        if matches!(self.seen, SeenSpec::Count(n) if n < 2) {
            return Err(Error::usage("at least 2 seen classes are required"));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(Error::usage("seeds list is empty"));
            }
        }
        self.train_config().validate()
    }

    /// The seeds to run: `seeds` if given, otherwise just `seed`.
    pub fn seed_list(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        path.clone()
            .ok_or_else(|| Error::usage(format!("no {what} given")))
    }

    pub fn train_file(&self) -> Result<PathBuf> {
        Self::require(&self.train_path, "training dataset (train_path)")
    }

    pub fn test_file(&self) -> Result<PathBuf> {
        Self::require(&self.test_path, "test dataset (test_path)")
    }
}

/// Uniformly random `n_seen`-subset of `class_ids`; both halves come back sorted.
pub fn split_seen_unseen(
    class_ids: &[usize],
    n_seen: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let total = class_ids.len();
    if n_seen < 2 || n_seen >= total {
        return Err(Error::usage(format!(
            "seen-class count must be in [2, {total}), got {n_seen}"
        )));
    }
    let mut rng = seeded(seed, Stream::Split);
    let picked: HashSet<usize> = sample(&mut rng, total, n_seen).into_iter().collect();
    let mut seen = Vec::with_capacity(n_seen);
    let mut unseen = Vec::with_capacity(total - n_seen);
    for (i, &c) in class_ids.iter().enumerate() {
        if picked.contains(&i) {
            seen.push(c);
        } else {
            unseen.push(c);
        }
    }
    seen.sort_unstable();
    unseen.sort_unstable();
    Ok((seen, unseen))
}

/// Gold labels for a test set, in dataset order: classes named in
/// `seen_names` map to their position there, everything else to rejection.
pub fn relabel_test<T>(test: &LabeledDataset<T>, seen_names: &[String]) -> Vec<Decision> {
    test.iter()
        .map(|(c, _)| {
            let name = test.class_name(c);
            seen_names
                .iter()
                .position(|s| s == name)
                .map_or(Decision::Reject, Decision::Seen)
        })
        .collect()
}

/// Memory and thresholds as stored for `predict` and `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryFile {
    pub format: String,
    pub class_names: Vec<String>,
    pub tokenize: TokenizeMode,
    pub memory: Memory,
    pub thresholds: Thresholds,
}

pub const MEMORY_FORMAT: &str = "pmnet-memory-v1";

impl MemoryFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: MemoryFile = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if file.format != MEMORY_FORMAT {
            return Err(Error::Format(format!(
                "{}: unsupported memory format {:?}",
                path.display(),
                file.format
            )));
        }
        if file.class_names.len() != file.memory.num_classes() {
            return Err(Error::Format(format!(
                "{}: {} class names for {} memory classes",
                path.display(),
                file.class_names.len(),
                file.memory.num_classes()
            )));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Training data with its seen/unseen split resolved.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: RawDataset,
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
}

impl Prepared {
    pub fn load(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let path = cfg.train_file()?;
        let train = load_dataset(&path, cfg.tokenize).stage("load training data")?;
        Self::from_dataset(cfg, train, seed)
    }

    pub fn from_dataset(cfg: &ExperimentConfig, train: RawDataset, seed: u64) -> Result<Self> {
        let ids: Vec<usize> = (0..train.num_classes()).collect();
        let n_seen = cfg.seen.resolve(ids.len()).stage("split")?;
        let (seen, unseen) = split_seen_unseen(&ids, n_seen, seed).stage("split")?;
        Ok(Self {
            train,
            seen,
            unseen,
        })
    }

    pub fn seen_names(&self) -> Vec<String> {
        self.seen
            .iter()
            .map(|&c| self.train.class_name(c).to_owned())
            .collect()
    }

    pub fn unseen_names(&self) -> Vec<String> {
        self.unseen
            .iter()
            .map(|&c| self.train.class_name(c).to_owned())
            .collect()
    }

    pub fn split_label(&self) -> String {
        format!("{}:{}", self.seen.len(), self.unseen.len())
    }

    /// Vocabulary over the seen-class training documents only.
    pub fn vocab(&self, min_freq: usize) -> Vocab {
        let docs = self
            .seen
            .iter()
            .flat_map(|&c| self.train.group(c))
            .map(Vec::as_slice);
        build_vocab(docs, min_freq)
    }

    /// Seen-class training data, classes renumbered `0..m` in seen order.
    pub fn seen_train(&self, vocab: &Vocab, max_len: usize) -> LabeledDataset<Instance> {
        self.train.select(&self.seen).encode(vocab, max_len)
    }
}

/// Builds the vocabulary and embedding table, then trains a fresh model.
pub fn train_model(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    seed: u64,
) -> Result<(MatchModel, TrainOutcome)> {
    let vocab = prep.vocab(cfg.min_freq);
    let mut embeddings = match &cfg.embeddings {
        Some(path) => {
            load_embeddings(path, &vocab, cfg.embedding_dim, seed).stage("load embeddings")?
        }
        None => EmbeddingTable::random(
            &vocab,
            cfg.embedding_dim.unwrap_or(DEFAULT_EMBEDDING_DIM),
            seed,
        )
        .stage("init embeddings")?,
    };
    embeddings.trainable = cfg.fine_tune_embeddings;
    let dims = ModelDims {
        max_len: cfg.max_len,
        feature_maps: cfg.feature_maps,
        hidden: cfg.hidden,
    };
    let mut model =
        MatchModel::new(cfg.variant, vocab, embeddings, dims, seed).stage("init model")?;
    let data = prep.seen_train(&model.vocab, model.max_len);
    let pairs = openworld::build_pairs(&data, seed).stage("build pairs")?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train_config()
    };
    let outcome = matcher::train(&mut model, &pairs, &train_cfg).stage("train")?;
    Ok((model, outcome))
}

/// Samples the memory and fits thresholds for a trained model.
pub fn fit_memory(
    cfg: &ExperimentConfig,
    model: &MatchModel,
    prep: &Prepared,
    seed: u64,
) -> Result<MemoryFile> {
    let data = prep.seen_train(&model.vocab, model.max_len);
    let classes: Vec<usize> = (0..data.num_classes()).collect();
    let memory = openworld::build_memory(&data, &classes, cfg.k, seed).stage("build memory")?;
    let thresholds = openworld::fit_thresholds(
        model,
        &data,
        &memory,
        cfg.alpha,
        cfg.threshold_mode,
        Parallelism::from_env(),
    )
    .stage("fit thresholds")?;
    Ok(MemoryFile {
        format: MEMORY_FORMAT.into(),
        class_names: prep.seen_names(),
        tokenize: cfg.tokenize,
        memory,
        thresholds,
    })
}

/// Decisions and class probabilities for every test instance, in dataset order.
pub struct Evaluation {
    pub gold: Vec<Decision>,
    pub predicted: Vec<Decision>,
    pub probabilities: Vec<openworld::ClassProbabilities>,
    pub table: F1Table,
}

pub fn evaluate(
    model: &MatchModel,
    mem: &MemoryFile,
    test: &RawDataset,
    f1_over: F1Over,
) -> Result<Evaluation> {
    let encoded: Vec<Instance> = test
        .iter()
        .map(|(_, doc)| model.encode_tokens(doc))
        .collect();
    let gold = relabel_test(test, &mem.class_names);
    let probabilities = score_many(model, &mem.memory, &encoded, Parallelism::from_env())
        .stage("score test set")?;
    let predicted = probabilities
        .iter()
        .map(|p| decide(p, &mem.thresholds))
        .collect::<Result<Vec<_>>>()
        .stage("decide")?;
    let table = macro_f1(&predicted, &gold, mem.class_names.len(), f1_over).stage("macro-F1")?;
    Ok(Evaluation {
        gold,
        predicted,
        probabilities,
        table,
    })
}

/// Classifies raw text: the decision plus the per-class probabilities.
pub fn predict_text(
    model: &MatchModel,
    mem: &MemoryFile,
    text: &str,
) -> Result<(Decision, openworld::ClassProbabilities)> {
    let inst = model.encode_tokens(&tokenize(text, mem.tokenize));
    let p = openworld::score_all(model, &mem.memory, &inst)?;
    let d = decide(&p, &mem.thresholds)?;
    Ok((d, p))
}

/// The full pipeline for one seed.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Report> {
    cfg.validate()?;
    let started = Instant::now();
    let prep = Prepared::load(cfg, seed)?;
    let test_path = cfg.test_file()?;
    let test = load_dataset(&test_path, cfg.tokenize).stage("load test data")?;

    let t = Instant::now();
    let (model, outcome) = train_model(cfg, &prep, seed)?;
    let train_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let mem = fit_memory(cfg, &model, &prep, seed)?;
    let fit_secs = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let eval = evaluate(&model, &mem, &test, cfg.f1_over)?;
    let eval_secs = t.elapsed().as_secs_f64();

    let timings = Timings {
        train_secs,
        fit_secs,
        eval_secs,
        total_secs: started.elapsed().as_secs_f64(),
    };
    Ok(Report::new(
        cfg,
        seed,
        model.variant,
        prep.split_label(),
        prep.unseen_names(),
        &mem,
        &eval,
        Some(&outcome),
        timings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_determinism() {
        let ids: Vec<usize> = (0..10).collect();
        let (seen, unseen) = split_seen_unseen(&ids, 7, 3).unwrap();
        assert_eq!((seen.len(), unseen.len()), (7, 3));
        let mut all: Vec<usize> = seen.iter().chain(&unseen).copied().collect();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(split_seen_unseen(&ids, 7, 3).unwrap(), (seen, unseen));

        let (_, unseen) = split_seen_unseen(&ids, 9, 1).unwrap();
        assert_eq!(unseen.len(), 1);
        assert!(split_seen_unseen(&ids, 10, 1).is_err());
        assert!(split_seen_unseen(&ids, 1, 1).is_err());
    }

    #[test]
    fn seen_spec_resolution() {
        assert_eq!(SeenSpec::Ratio("3:7".into()).resolve(10).unwrap(), 3);
        assert_eq!(SeenSpec::Ratio("5:5".into()).resolve(10).unwrap(), 5);
        assert_eq!(SeenSpec::Count(7).resolve(10).unwrap(), 7);
        assert!(SeenSpec::Count(10).resolve(10).is_err());
        assert!(SeenSpec::Ratio("x:1".into()).resolve(10).is_err());
        assert_eq!("7".parse::<SeenSpec>().unwrap(), SeenSpec::Count(7));
    }

    fn dataset(spec: &[(&str, usize)]) -> LabeledDataset<()> {
        LabeledDataset::new(
            spec.iter().map(|(n, _)| n.to_string()).collect(),
            spec.iter().map(|&(_, k)| vec![(); k]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn relabeling() {
        let seen = vec!["a".to_string(), "b".to_string()];
        let all_seen = dataset(&[("b", 2), ("a", 1)]);
        assert_eq!(
            relabel_test(&all_seen, &seen),
            vec![Decision::Seen(1), Decision::Seen(1), Decision::Seen(0)]
        );
        let none_seen = dataset(&[("x", 3)]);
        assert!(relabel_test(&none_seen, &seen)
            .iter()
            .all(|d| *d == Decision::Reject));

        let names: Vec<String> = (0..10).map(|c| format!("c{c}")).collect();
        let spec: Vec<(&str, usize)> = names.iter().map(|n| (n.as_str(), 200)).collect();
        let mixed = dataset(&spec);
        let gold = relabel_test(&mixed, &names[..7]);
        assert_eq!(gold.iter().filter(|d| **d == Decision::Reject).count(), 600);
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg = ExperimentConfig::from_json(r#"{"k": 5, "seen": 3, "variant": "pm1"}"#).unwrap();
        assert_eq!(cfg.k, 5);
        assert_eq!(cfg.seen, SeenSpec::Count(3));
        assert_eq!(cfg.variant, Variant::Pm1);
        assert_eq!(cfg.learning_rate, 1e-3);
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"bogus": 1}"#),
            Err(Error::Usage(_))
        ));
        let cfg = ExperimentConfig::from_json(
            r#"{"seen": "5:5", "threshold_mode": "per_class", "f1_over": "seen"}"#,
        )
        .unwrap();
        assert_eq!(cfg.threshold_mode, ThresholdMode::PerClass);
        assert_eq!(cfg.f1_over, F1Over::Seen);
    }
}
