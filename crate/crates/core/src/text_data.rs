//! Corpus ingestion: tokenization, vocabularies, embedding tables and
//! fixed-length instance encoding.
//!
//! Dataset files are UTF-8 TSV with one `label<TAB>text` per line; lines
//! starting with `#` are comments. Embedding files are word2vec-style text:
//! an optional `V H` header line followed by `word v1 … vH` lines.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{seeded, Stream};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Half-width of the uniform range for randomly initialized embedding rows.
pub const INIT_RANGE: f64 = 0.25;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizeMode {
    /// Lowercase, then split on whitespace.
    #[default]
    Lowercase,
    /// Split on whitespace only; for corpora segmented upstream.
    Pretokenized,
}

impl std::str::FromStr for TokenizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lowercase" => Ok(TokenizeMode::Lowercase),
            "pretokenized" => Ok(TokenizeMode::Pretokenized),
            _ => Err(Error::usage(format!(
                "unknown tokenize mode {s:?} (expected lowercase or pretokenized)"
            ))),
        }
    }
}

pub fn tokenize(text: &str, mode: TokenizeMode) -> Vec<String> {
    match mode {
        TokenizeMode::Lowercase => text.split_whitespace().map(str::to_lowercase).collect(),
        TokenizeMode::Pretokenized => text.split_whitespace().map(str::to_owned).collect(),
    }
}

/// Token/id mapping with `PAD = 0` and `UNK = 1` reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Rebuilds a vocabulary from its tokens in id order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Format(format!(
                "vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Self { index, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Ids go to tokens seen at least `min_freq` times, most frequent first,
/// ties broken lexicographically.
pub fn build_vocab<'a, I, S>(corpus: I, min_freq: usize) -> Vocab
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for tok in doc {
            *counts.entry(tok.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = [PAD_TOKEN, UNK_TOKEN]
        .into_iter()
        .chain(kept.into_iter().map(|(t, _)| t))
        .map(str::to_owned)
        .collect();
    Vocab::from_tokens(tokens).expect("reserved tokens are excluded from counts")
}

/// `V×H` embedding matrix; row `PAD` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub weights: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn rows(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Every non-PAD row drawn uniformly from `[-0.25, 0.25]`.
    pub fn random(vocab: &Vocab, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::usage("embedding dimension must be positive"));
        }
        let mut rng = seeded(seed, Stream::Embeddings);
        let mut data = vec![0.0; vocab.len() * dim];
        for v in &mut data[dim..] {
            *v = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
        }
        Ok(Self {
            weights: Tensor::new(vec![vocab.len(), dim], data)?,
            trainable: true,
        })
    }
}

/// Loads vectors for in-vocabulary words from an embedding text file.
/// Rows missing from the file (and UNK) keep their seeded random init.
/// When `dim` is `None` it is taken from the header or the first vector line.
pub fn load_embeddings(
    path: &Path,
    vocab: &Vocab,
    dim: Option<usize>,
    seed: u64,
) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, &path.display().to_string(), vocab, dim, seed)
}

pub fn parse_embeddings(
    text: &str,
    source: &str,
    vocab: &Vocab,
    dim: Option<usize>,
    seed: u64,
) -> Result<EmbeddingTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();

    let mut dim = dim;
    if let Some(&(_, first)) = lines.peek() {
        let fields: Vec<&str> = first.split(' ').filter(|f| !f.is_empty()).collect();
        if let [v, h] = fields.as_slice() {
            if let (Ok(_), Ok(h)) = (v.parse::<usize>(), h.parse::<usize>()) {
                match dim {
                    Some(d) if d != h => {
                        return Err(Error::Format(format!(
                            "{source}: header declares dimension {h}, expected {d}"
                        )))
                    }
                    _ => dim = Some(h),
                }
                lines.next();
            }
        }
    }
    let dim = match dim {
        Some(d) => d,
        None => match lines.peek() {
            Some(&(_, l)) => l.split(' ').filter(|f| !f.is_empty()).count() - 1,
            None => {
                return Err(Error::Format(format!(
                    "{source}: no vectors and no dimension given"
                )))
            }
        },
    };

    let mut table = EmbeddingTable::random(vocab, dim, seed)?;
    let mut filled = vec![false; vocab.len()];
    let data = table.weights.data_mut();
    for (line_no, line) in lines {
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let word = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(Error::Parse {
                path: source.to_owned(),
                line: line_no,
                message: format!("expected {dim} values, found {}", values.len()),
            });
        }
        let Some(id) = vocab.id(word) else { continue };
        if id == PAD || filled[id] {
            continue;
        }
        let row = &mut data[id * dim..(id + 1) * dim];
        for (slot, raw) in row.iter_mut().zip(&values) {
            *slot = raw.parse().map_err(|_| Error::Parse {
                path: source.to_owned(),
                line: line_no,
                message: format!("invalid float {raw:?}"),
            })?;
        }
        filled[id] = true;
    }
    Ok(table)
}

/// Fixed-length token ids plus an optional class label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub token_ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl Instance {
    pub fn new(token_ids: Vec<usize>, label: Option<usize>) -> Self {
        Self { token_ids, label }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

/// Maps tokens to ids, keeping the first `len` and padding the tail with PAD.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocab, len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens
        .iter()
        .take(len)
        .map(|t| vocab.id_or_unk(t.as_ref()))
        .collect();
    ids.resize(len, PAD);
    ids
}

/// Items grouped by class, with class names indexed by class id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T> {
    class_names: Vec<String>,
    groups: Vec<Vec<T>>,
}

pub type RawDataset = LabeledDataset<Vec<String>>;

impl<T> LabeledDataset<T> {
    pub fn new(class_names: Vec<String>, groups: Vec<Vec<T>>) -> Result<Self> {
        if class_names.len() != groups.len() {
            return Err(Error::usage("class names and groups differ in length"));
        }
        if let Some(i) = groups.iter().position(Vec::is_empty) {
            return Err(Error::usage(format!(
                "class {:?} has no instances",
                class_names[i]
            )));
        }
        Ok(Self {
            class_names,
            groups,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.groups.len()
    }

    pub fn len(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_name(&self, id: usize) -> &str {
        &self.class_names[id]
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn group(&self, class: usize) -> &[T] {
        &self.groups[class]
    }

    pub fn groups(&self) -> &[Vec<T>] {
        &self.groups
    }

    /// `(class id, item)` pairs in class order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, &T)> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(c, g)| g.iter().map(move |x| (c, x)))
    }

    pub fn map<U>(&self, mut f: impl FnMut(usize, &T) -> U) -> LabeledDataset<U> {
        LabeledDataset {
            class_names: self.class_names.clone(),
            groups: self
                .groups
                .iter()
                .enumerate()
                .map(|(c, g)| g.iter().map(|x| f(c, x)).collect())
                .collect(),
        }
    }

    /// Keeps only `classes` (original ids), renumbered `0..classes.len()` in the given order.
    pub fn select(&self, classes: &[usize]) -> LabeledDataset<T>
    where
        T: Clone,
    {
        LabeledDataset {
            class_names: classes
                .iter()
                .map(|&c| self.class_names[c].clone())
                .collect(),
            groups: classes.iter().map(|&c| self.groups[c].clone()).collect(),
        }
    }
}

impl RawDataset {
    /// Encodes every document to a labeled [`Instance`] of length `len`.
    pub fn encode(&self, vocab: &Vocab, len: usize) -> LabeledDataset<Instance> {
        self.map(|c, doc| Instance::new(encode(doc, vocab, len), Some(c)))
    }
}

pub fn load_dataset(path: &Path, mode: TokenizeMode) -> Result<RawDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string(), mode)
}

/// Class ids follow the order in which labels first appear.
pub fn parse_dataset(text: &str, source: &str, mode: TokenizeMode) -> Result<RawDataset> {
    let mut names: Vec<String> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Vec<Vec<String>>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let Some((label, body)) = line.split_once('\t') else {
            return Err(Error::Parse {
                path: source.to_owned(),
                line: i + 1,
                message: "missing tab between label and text".into(),
            });
        };
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::Parse {
                path: source.to_owned(),
                line: i + 1,
                message: "empty label".into(),
            });
        }
        let id = *ids.entry(label.to_owned()).or_insert_with(|| {
            names.push(label.to_owned());
            groups.push(Vec::new());
            names.len() - 1
        });
        groups[id].push(tokenize(body, mode));
    }
    if names.is_empty() {
        return Err(Error::Format(format!("{source}: dataset has no classes")));
    }
    LabeledDataset::new(names, groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_owned).collect()
    }

    #[test]
    fn tokenize_modes() {
        assert_eq!(
            tokenize("The Cat sat", TokenizeMode::Lowercase),
            toks("the cat sat")
        );
        assert!(tokenize("", TokenizeMode::Lowercase).is_empty());
        assert_eq!(
            tokenize("NYC -based firm", TokenizeMode::Pretokenized),
            toks("NYC -based firm")
        );
    }

    #[test]
    fn vocab_frequency_order_and_min_freq() {
        let corpus = [toks("a a b")];
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 1);
        assert_eq!(v.tokens(), &toks("<pad> <unk> a b")[..]);
        let v = build_vocab(corpus.iter().map(Vec::as_slice), 2);
        assert_eq!(v.id("b"), None);
        assert_eq!(v.id("a"), Some(2));

        let tie = [toks("y x")];
        let v = build_vocab(tie.iter().map(Vec::as_slice), 1);
        assert!(v.id("x").unwrap() < v.id("y").unwrap());
    }

    #[test]
    fn vocab_rejects_bad_token_lists() {
        assert!(Vocab::from_tokens(toks("a b")).is_err());
        assert!(Vocab::from_tokens(toks("<pad> <unk> a a")).is_err());
    }

    fn vocab_ab() -> Vocab {
        Vocab::from_tokens(toks("<pad> <unk> a b")).unwrap()
    }

    #[test]
    fn encode_pads_truncates_and_maps_unknowns() {
        let v = vocab_ab();
        assert_eq!(encode(&toks("a b"), &v, 4), vec![2, 3, 0, 0]);
        assert_eq!(encode(&toks("a b a b b a"), &v, 4), vec![2, 3, 2, 3]);
        assert_eq!(encode(&toks("a zzz"), &v, 3), vec![2, UNK, 0]);
    }

    #[test]
    fn embeddings_from_file_text() {
        let v = Vocab::from_tokens(toks("<pad> <unk> a")).unwrap();
        let t = parse_embeddings("a 1.0 2.0\n", "mem", &v, Some(2), 3).unwrap();
        assert_eq!(&t.weights.data()[4..6], &[1.0, 2.0]);
        assert_eq!(&t.weights.data()[0..2], &[0.0, 0.0]);
        assert!(t.weights.data()[2..4].iter().all(|x| x.abs() <= INIT_RANGE));
    }

    #[test]
    fn embeddings_header_and_inferred_dim() {
        let v = vocab_ab();
        let t = parse_embeddings("2 3\nb 1 2 3\nzz 0 0 0\n", "mem", &v, None, 0).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(&t.weights.data()[9..12], &[1.0, 2.0, 3.0]);
        let t = parse_embeddings("a 0.5 0.5\n", "mem", &v, None, 0).unwrap();
        assert_eq!(t.dim(), 2);
    }

    #[test]
    fn embeddings_errors() {
        let v = vocab_ab();
        match parse_embeddings("a 1 2\nb 1\n", "e.txt", &v, Some(2), 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(
            parse_embeddings("2 3\na 1 2 3\n", "e.txt", &v, Some(2), 0),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn absent_words_are_seeded() {
        let v = vocab_ab();
        let a = parse_embeddings("a 1 1\n", "e", &v, Some(2), 11).unwrap();
        let b = parse_embeddings("a 1 1\n", "e", &v, Some(2), 11).unwrap();
        let c = parse_embeddings("a 1 1\n", "e", &v, Some(2), 12).unwrap();
        assert!(a.weights.bitwise_eq(&b.weights));
        assert!(!a.weights.bitwise_eq(&c.weights));
        assert!(a.weights.data()[6..8].iter().all(|x| x.abs() <= INIT_RANGE));
    }

    #[test]
    fn dataset_parsing() {
        let d = parse_dataset("sports\tgame tonight\n", "d", TokenizeMode::Lowercase).unwrap();
        assert_eq!(d.num_classes(), 1);
        assert_eq!(d.len(), 1);

        let d = parse_dataset(
            "# header\nx\tone\ny\ttwo\nx\tthree\n",
            "d",
            TokenizeMode::Lowercase,
        )
        .unwrap();
        assert_eq!(d.class_names(), &["x".to_string(), "y".to_string()]);
        assert_eq!(d.group(0).len(), 2);

        assert!(matches!(
            parse_dataset("", "d", TokenizeMode::Lowercase),
            Err(Error::Format(_))
        ));
        match parse_dataset("a\tok\nno tab here\n", "d", TokenizeMode::Lowercase) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn encode_length_and_round_trip(words in prop::collection::vec(0usize..2, 0..12), len in 1usize..10) {
            let v = vocab_ab();
            let tokens: Vec<String> = words.iter().map(|&w| ["a", "b"][w].to_owned()).collect();
            let ids = encode(&tokens, &v, len);
            prop_assert_eq!(ids.len(), len);
            if tokens.len() <= len {
                let decoded: Vec<String> = ids
                    .iter()
                    .take_while(|&&i| i != PAD)
                    .map(|&i| v.token(i).unwrap().to_owned())
                    .collect();
                prop_assert_eq!(decoded, tokens);
            }
        }
    }
}
