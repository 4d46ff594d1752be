//! The open-world protocol around a trained matcher: pair datasets, per-class
//! memories, trimmed-mean class scores, Gaussian-fitted rejection thresholds
//! and the final seen-class-or-reject decision.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{match_prob, MatchModel};
use crate::rng::{seeded, Stream};
use crate::text_data::{Instance, LabeledDataset};

pub const DEFAULT_ALPHA: f64 = 3.0;
/// Lowest threshold the Gaussian fit may emit.
pub const THRESHOLD_FLOOR: f64 = 0.5;

/// A training pair; `same` is true iff both sides carry the same label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub a: Instance,
    pub b: Instance,
    pub same: bool,
}

impl PairExample {
    pub fn new(a: Instance, b: Instance) -> Self {
        let same = a.label.is_some() && a.label == b.label;
        Self { a, b, same }
    }
}

/// Position of an item in a [`LabeledDataset`]: `(class id, index in class)`.
pub type ItemRef = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairRef {
    pub a: ItemRef,
    pub b: ItemRef,
    pub same: bool,
}

/// For each item, one positive partner (uniform over the rest of its class)
/// and one negative partner (uniform class among the others, then uniform
/// item). Output order: item order, positive before negative.
pub fn pair_refs<T>(data: &LabeledDataset<T>, seed: u64) -> Result<Vec<PairRef>> {
    let m = data.num_classes();
    if m < 2 {
        return Err(Error::usage(format!(
            "pair construction needs at least 2 classes, got {m}"
        )));
    }
    if let Some(c) = (0..m).find(|&c| data.group(c).len() < 2) {
        return Err(Error::usage(format!(
            "class {:?} has a single instance; positive pairs need at least 2",
            data.class_name(c)
        )));
    }
    let mut rng = seeded(seed, Stream::Pairs);
    let mut out = Vec::with_capacity(2 * data.len());
    for c in 0..m {
        let n = data.group(c).len();
        for i in 0..n {
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            out.push(PairRef {
                a: (c, i),
                b: (c, j),
                same: true,
            });
            let mut d = rng.gen_range(0..m - 1);
            if d >= c {
                d += 1;
            }
            let k = rng.gen_range(0..data.group(d).len());
            out.push(PairRef {
                a: (c, i),
                b: (d, k),
                same: false,
            });
        }
    }
    Ok(out)
}

pub fn build_pairs(data: &LabeledDataset<Instance>, seed: u64) -> Result<Vec<PairExample>> {
    let item = |(c, i): ItemRef| {
        let mut inst = data.group(c)[i].clone();
        inst.label = Some(c);
        inst
    };
    Ok(pair_refs(data, seed)?
        .into_iter()
        .map(|r| PairExample {
            a: item(r.a),
            b: item(r.b),
            same: r.same,
        })
        .collect())
}

/// `K` reference instances for each seen class, indexed by seen-class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Memory {
    pub k: usize,
    pub classes: Vec<Vec<Instance>>,
}

impl Memory {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, id: usize) -> &[Instance] {
        &self.classes[id]
    }
}

/// Samples `k` distinct instances from each of `classes` (ids in `data`);
/// memory class `i` is `classes[i]`.
pub fn build_memory(
    data: &LabeledDataset<Instance>,
    classes: &[usize],
    k: usize,
    seed: u64,
) -> Result<Memory> {
    if k == 0 {
        return Err(Error::usage("memory size K must be at least 1"));
    }
    let mut rng = seeded(seed, Stream::Memory);
    let mut out = Vec::with_capacity(classes.len());
    for (seen_id, &c) in classes.iter().enumerate() {
        if c >= data.num_classes() {
            return Err(Error::usage(format!("class id {c} not in dataset")));
        }
        let group = data.group(c);
        if k > group.len() {
            return Err(Error::usage(format!(
                "K = {k} exceeds the {} training instances of class {:?}",
                group.len(),
                data.class_name(c)
            )));
        }
        let picks = sample(&mut rng, group.len(), k);
        out.push(
            picks
                .iter()
                .map(|i| Instance::new(group[i].token_ids.clone(), Some(seen_id)))
                .collect(),
        );
    }
    Ok(Memory { k, classes: out })
}

/// Mean after dropping one maximum and one minimum occurrence; the plain
/// mean when fewer than three values are given.
pub fn trimmed_mean(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n == 0 {
        return Err(Error::usage("cannot score against an empty memory"));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(values[0]);
    }
    if n <= 2 {
        return Ok(values.iter().sum::<f64>() / n as f64);
    }
    let mut lo = 0;
    let mut hi = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[lo] {
            lo = i;
        }
        if v > values[hi] {
            hi = i;
        }
    }
    let kept: f64 = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != lo && i != hi)
        .map(|(_, v)| v)
        .sum();
    Ok(kept / (n - 2) as f64)
}

/// Trimmed mean of `f(x, m)` over the members `m` of one class memory.
pub fn class_score(model: &MatchModel, members: &[Instance], x: &Instance) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::usage("cannot score against an empty memory"));
    }
    let probs = members
        .iter()
        .map(|m| match_prob(model, x, m))
        .collect::<Result<Vec<_>>>()?;
    trimmed_mean(&probs)
}

/// One probability per seen class, in class-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassProbabilities(pub Vec<f64>);

impl ClassProbabilities {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn score_all(model: &MatchModel, memory: &Memory, x: &Instance) -> Result<ClassProbabilities> {
    memory
        .classes
        .iter()
        .map(|members| class_score(model, members, x))
        .collect::<Result<Vec<_>>>()
        .map(ClassProbabilities)
}

/// How many worker threads memory scoring may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    Threads(usize),
    /// One worker per available core.
    #[default]
    Auto,
}

impl Parallelism {
    /// Reads `PMNET_THREADS`: `0` means sequential, `n` caps the pool at `n`.
    pub fn from_env() -> Self {
        match std::env::var("PMNET_THREADS")
            .ok()
            .and_then(|v| v.trim().parse().ok())
        {
            Some(0) => Parallelism::Sequential,
            Some(n) => Parallelism::Threads(n),
            None => Parallelism::Auto,
        }
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Result<Vec<U>>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> Result<U> + Sync + Send,
    {
        let threads = match self {
            Parallelism::Sequential => 1,
            Parallelism::Threads(n) => n,
            Parallelism::Auto => rayon::current_num_threads(),
        };
        if threads <= 1 || items.len() <= 1 {
            return items.iter().map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::usage(format!("cannot start scoring threads: {e}")))?;
        pool.install(|| items.par_iter().map(&f).collect())
    }
}

/// [`score_all`] over many instances; results keep the input order.
pub fn score_many(
    model: &MatchModel,
    memory: &Memory,
    xs: &[Instance],
    par: Parallelism,
) -> Result<Vec<ClassProbabilities>> {
    par.map(xs, |x| score_all(model, memory, x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    #[default]
    Scalar,
    PerClass,
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(ThresholdMode::Scalar),
            "per_class" | "per-class" => Ok(ThresholdMode::PerClass),
            _ => Err(Error::usage(format!(
                "unknown threshold mode {s:?} (expected scalar or per_class)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub mode: ThresholdMode,
    pub alpha: f64,
    /// One value in scalar mode, one per seen class otherwise.
    pub values: Vec<f64>,
    /// Fitted standard deviation of each seen class.
    pub sigmas: Vec<f64>,
}

impl Thresholds {
    pub fn scalar(value: f64) -> Self {
        Self {
            mode: ThresholdMode::Scalar,
            alpha: DEFAULT_ALPHA,
            values: vec![value],
            sigmas: Vec::new(),
        }
    }

    pub fn per_class(values: Vec<f64>) -> Self {
        Self {
            mode: ThresholdMode::PerClass,
            alpha: DEFAULT_ALPHA,
            values,
            sigmas: Vec::new(),
        }
    }
}

/// Half-Gaussian with mean fixed at 1, fitted to `scores` together with
/// their mirror images `2 − y`. Returns `(σ, max(0.5, 1 − α·σ))`.
pub fn gaussian_threshold(scores: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(Error::usage("threshold fit needs at least one score"));
    }
    let mirrored = scores.iter().flat_map(|&y| [y, 2.0 - y]);
    let ss: f64 = mirrored.map(|y| (y - 1.0) * (y - 1.0)).sum();
    let sigma = (ss / (2 * scores.len()) as f64).sqrt();
    let t = (1.0 - alpha * sigma).clamp(THRESHOLD_FLOOR, 1.0);
    Ok((sigma, t))
}

/// Fits thresholds from the scores of each seen class's off-memory training
/// instances against that class's own memory. `seen` is indexed like `memory`.
pub fn fit_thresholds(
    model: &MatchModel,
    seen: &LabeledDataset<Instance>,
    memory: &Memory,
    alpha: f64,
    mode: ThresholdMode,
    par: Parallelism,
) -> Result<Thresholds> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::usage("alpha must be positive"));
    }
    if seen.num_classes() != memory.num_classes() {
        return Err(Error::usage(format!(
            "{} seen classes but memory covers {}",
            seen.num_classes(),
            memory.num_classes()
        )));
    }
    let mut sigmas = Vec::with_capacity(seen.num_classes());
    let mut per_class = Vec::with_capacity(seen.num_classes());
    for (c, group) in seen.groups().iter().enumerate() {
        let members = memory.class(c);
        let held_out: Vec<&Instance> = group
            .iter()
            .filter(|x| !members.iter().any(|m| m.token_ids == x.token_ids))
            .collect();
        if held_out.is_empty() {
            return Err(Error::usage(format!(
                "class {:?} has no training instances outside its memory to fit a threshold",
                seen.class_name(c)
            )));
        }
        let scores = par.map(&held_out, |x| class_score(model, members, x))?;
        let (sigma, t) = gaussian_threshold(&scores, alpha)?;
        sigmas.push(sigma);
        per_class.push(t);
    }
    let values = match mode {
        ThresholdMode::Scalar => vec![per_class.iter().sum::<f64>() / per_class.len() as f64],
        ThresholdMode::PerClass => per_class,
    };
    Ok(Thresholds {
        mode,
        alpha,
        values,
        sigmas,
    })
}

/// A seen-class id or rejection as unseen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Seen(usize),
    Reject,
}

/// Index of the largest value among `candidates`, smallest index on ties.
fn argmax_over(p: &[f64], candidates: impl Iterator<Item = usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in candidates {
        if best.is_none_or(|b| p[i] > p[b]) {
            best = Some(i);
        }
    }
    best
}

/// Scalar mode: reject iff `max P < t`, otherwise the argmax class.
/// Per-class mode: reject iff every `p_i < t_i`, otherwise the argmax among
/// classes that pass their own threshold.
pub fn decide(p: &ClassProbabilities, t: &Thresholds) -> Result<Decision> {
    let p = p.as_slice();
    if p.is_empty() {
        return Err(Error::usage("no class probabilities to decide from"));
    }
    match t.mode {
        ThresholdMode::Scalar => {
            let [threshold] = t.values.as_slice() else {
                return Err(Error::usage(
                    "scalar thresholds must hold exactly one value",
                ));
            };
            let best = argmax_over(p, 0..p.len()).unwrap();
            Ok(if p[best] < *threshold {
                Decision::Reject
            } else {
                Decision::Seen(best)
            })
        }
        ThresholdMode::PerClass => {
            if t.values.len() != p.len() {
                return Err(Error::usage(format!(
                    "{} class probabilities but {} thresholds",
                    p.len(),
                    t.values.len()
                )));
            }
            let passing = (0..p.len()).filter(|&i| p[i] >= t.values[i]);
            Ok(argmax_over(p, passing).map_or(Decision::Reject, Decision::Seen))
        }
    }
}
