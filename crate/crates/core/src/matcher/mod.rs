//! The matching function `f(a, b)`: a shared multi-width CNN encoder and two
//! heads that turn a pair of instances into `[p(different), p(same)]`.
//!
//! - [`Variant::Pm1`] encodes each instance separately with the same encoder
//!   and classifies the concatenated encodings.
//! - [`Variant::Pm2`] stacks the two embedding matrices as the two input
//!   channels of one encoder, so filters see both instances at once.

mod io;
mod train;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, MAGIC};
pub use train::{train, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::numerics::{Parameters, Tape, Tensor, Var};
use crate::rng::{seeded, Rng, Stream};
use crate::text_data::{EmbeddingTable, Instance, Vocab};

pub const FILTER_WIDTHS: [usize; 3] = [3, 4, 5];
pub const DEFAULT_FEATURE_MAPS: usize = 100;
pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_MAX_LEN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Pm1,
    Pm2,
}

impl Variant {
    /// Encoder input channels.
    pub fn channels(self) -> usize {
        match self {
            Variant::Pm1 => 1,
            Variant::Pm2 => 2,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::Pm1 => 1,
            Variant::Pm2 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Variant::Pm1),
            2 => Some(Variant::Pm2),
            _ => None,
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Pm1 => "PM-Net 1",
            Variant::Pm2 => "PM-Net 2",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pm1" | "1" => Ok(Variant::Pm1),
            "pm2" | "2" => Ok(Variant::Pm2),
            _ => Err(Error::usage(format!(
                "unknown variant {s:?} (expected pm1 or pm2)"
            ))),
        }
    }
}

/// Sizes that fix a model's parameter shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub max_len: usize,
    pub feature_maps: usize,
    pub hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_MAX_LEN,
            feature_maps: DEFAULT_FEATURE_MAPS,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub width: usize,
    /// `width × H × C × F`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub channels: usize,
    /// One bank per entry of [`FILTER_WIDTHS`], in that order.
    pub banks: Vec<FilterBank>,
}

impl EncoderParams {
    pub fn feature_maps(&self) -> usize {
        self.banks[0].bias.len()
    }

    /// Length of the encoded vector.
    pub fn output_dim(&self) -> usize {
        self.feature_maps() * self.banks.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub hidden_w: Tensor,
    pub hidden_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchModel {
    pub variant: Variant,
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub embeddings: EmbeddingTable,
    pub vocab: Vocab,
    pub max_len: usize,
}

fn glorot(rng: &mut Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data)
        .expect("shape from dims")
        .with_grad()
}

impl MatchModel {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn new(
        variant: Variant,
        vocab: Vocab,
        embeddings: EmbeddingTable,
        dims: ModelDims,
        seed: u64,
    ) -> Result<Self> {
        let h = embeddings.dim();
        if embeddings.rows() != vocab.len() {
            return Err(Error::shape(format!(
                "embedding table has {} rows for a vocabulary of {}",
                embeddings.rows(),
                vocab.len()
            )));
        }
        let max_width = *FILTER_WIDTHS.iter().max().unwrap();
        if dims.max_len < max_width {
            return Err(Error::shape(format!(
                "sequence length {} is shorter than the widest filter ({max_width})",
                dims.max_len
            )));
        }
        if dims.feature_maps == 0 || dims.hidden == 0 {
            return Err(Error::usage(
                "feature maps and hidden width must be positive",
            ));
        }
        let c = variant.channels();
        let f = dims.feature_maps;
        let mut rng = seeded(seed, Stream::Init);
        let banks = FILTER_WIDTHS
            .iter()
            .map(|&n| FilterBank {
                width: n,
                // Fans of the equivalent (n·H·C)×F matrix.
                weight: glorot(&mut rng, &[n, h, c, f], n * h * c, f),
                bias: Tensor::zeros(&[f]).with_grad(),
            })
            .collect();
        let encoded = f * FILTER_WIDTHS.len();
        let head_in = match variant {
            Variant::Pm1 => 2 * encoded,
            Variant::Pm2 => encoded,
        };
        let head = HeadParams {
            hidden_w: glorot(&mut rng, &[head_in, dims.hidden], head_in, dims.hidden),
            hidden_b: Tensor::zeros(&[dims.hidden]).with_grad(),
            out_w: glorot(&mut rng, &[dims.hidden, 2], dims.hidden, 2),
            out_b: Tensor::zeros(&[2]).with_grad(),
        };
        let mut model = Self {
            variant,
            encoder: EncoderParams { channels: c, banks },
            head,
            embeddings,
            vocab,
            max_len: dims.max_len,
        };
        let trainable = model.embeddings.trainable;
        model.embeddings.weights.set_requires_grad(trainable);
        Ok(model)
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            max_len: self.max_len,
            feature_maps: self.encoder.feature_maps(),
            hidden: self.head.hidden_b.len(),
        }
    }

    pub fn emb_dim(&self) -> usize {
        self.embeddings.dim()
    }

    /// Switches embedding fine-tuning on or off.
    pub fn set_embeddings_trainable(&mut self, on: bool) {
        self.embeddings.trainable = on;
        self.embeddings.weights.set_requires_grad(on);
    }

    /// Encodes raw tokens to an instance of this model's length.
    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Instance {
        Instance::new(
            crate::text_data::encode(tokens, &self.vocab, self.max_len),
            None,
        )
    }
}

impl Parameters for MatchModel {
    /// Embeddings, encoder banks by width (weight then bias), then the head.
    fn parameters(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.embeddings.weights];
        for b in &self.encoder.banks {
            out.push(&b.weight);
            out.push(&b.bias);
        }
        let h = &self.head;
        out.extend([&h.hidden_w, &h.hidden_b, &h.out_w, &h.out_b]);
        out
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embeddings.weights];
        for b in &mut self.encoder.banks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
        }
        let h = &mut self.head;
        out.extend([&mut h.hidden_w, &mut h.hidden_b, &mut h.out_w, &mut h.out_b]);
        out
    }
}

/// Replaces every bias with a uniform draw from `[-0.1, 0.1)`. Gradient
/// checks need this: with zero biases, fully padded windows sit exactly on
/// the ReLU kink.
pub fn jitter_biases(model: &mut MatchModel, seed: u64) {
    let mut rng = seeded(seed, Stream::GradCheck);
    for bank in &mut model.encoder.banks {
        bank.bias
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-0.1..0.1));
    }
    for b in [&mut model.head.hidden_b, &mut model.head.out_b] {
        b.data_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-0.1..0.1));
    }
}

/// Looks up the `L×H` embedding matrix of an instance.
pub fn embed<'m>(tape: &mut Tape<'m>, table: &'m EmbeddingTable, inst: &Instance) -> Result<Var> {
    let t = tape.param(&table.weights);
    tape.gather_rows(t, &inst.token_ids)
}

/// Convolution, ReLU and max-over-time for each filter width, concatenated
/// in width order.
pub fn cnn_encode<'m>(tape: &mut Tape<'m>, x: Var, enc: &'m EncoderParams) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (len, channels) = match shape.as_slice() {
        [l, _] => (*l, 1),
        [l, _, c] => (*l, *c),
        _ => {
            return Err(Error::shape(format!(
                "encoder input must be L×H[×C], got {shape:?}"
            )))
        }
    };
    if channels != enc.channels {
        return Err(Error::shape(format!(
            "encoder expects {} channels, input has {channels}",
            enc.channels
        )));
    }
    let widest = enc.banks.iter().map(|b| b.width).max().unwrap_or(0);
    if len < widest {
        return Err(Error::shape(format!(
            "sequence length {len} is shorter than the widest filter ({widest})"
        )));
    }
    let mut pooled = Vec::with_capacity(enc.banks.len());
    for bank in &enc.banks {
        let w = tape.param(&bank.weight);
        let b = tape.param(&bank.bias);
        let y = tape.conv_valid(x, w, b)?;
        let y = tape.relu(y);
        pooled.push(tape.max_over_time(y)?);
    }
    tape.concat(&pooled)
}

fn head_forward<'m>(tape: &mut Tape<'m>, features: Var, head: &'m HeadParams) -> Result<Var> {
    let w1 = tape.param(&head.hidden_w);
    let b1 = tape.param(&head.hidden_b);
    let w2 = tape.param(&head.out_w);
    let b2 = tape.param(&head.out_b);
    let z = tape.matmul(features, w1)?;
    let z = tape.add_bias(z, b1)?;
    let fc = tape.relu(z);
    let logits = tape.matmul(fc, w2)?;
    let logits = tape.add_bias(logits, b2)?;
    Ok(tape.softmax(logits))
}

/// Separate encodings of both inputs through the shared encoder, concatenated.
pub fn pm1_forward<'m>(
    tape: &mut Tape<'m>,
    x1: Var,
    x2: Var,
    model: &'m MatchModel,
) -> Result<Var> {
    if model.variant != Variant::Pm1 {
        return Err(Error::usage("pm1_forward called on a PM-Net 2 model"));
    }
    let r1 = cnn_encode(tape, x1, &model.encoder)?;
    let r2 = cnn_encode(tape, x2, &model.encoder)?;
    let joint = tape.concat(&[r1, r2])?;
    head_forward(tape, joint, &model.head)
}

/// Both inputs stacked as two channels of a single `L×H×2` encoder input.
pub fn pm2_forward<'m>(
    tape: &mut Tape<'m>,
    x1: Var,
    x2: Var,
    model: &'m MatchModel,
) -> Result<Var> {
    if model.variant != Variant::Pm2 {
        return Err(Error::usage("pm2_forward called on a PM-Net 1 model"));
    }
    let x = tape.stack_channels(x1, x2)?;
    let r = cnn_encode(tape, x, &model.encoder)?;
    head_forward(tape, r, &model.head)
}

/// `[p(different), p(same)]` for the ordered pair `(a, b)`.
pub fn forward_pair<'m>(
    tape: &mut Tape<'m>,
    model: &'m MatchModel,
    a: &Instance,
    b: &Instance,
) -> Result<Var> {
    for inst in [a, b] {
        if inst.len() != model.max_len {
            return Err(Error::shape(format!(
                "instance has {} tokens, model expects {}",
                inst.len(),
                model.max_len
            )));
        }
    }
    let x1 = embed(tape, &model.embeddings, a)?;
    let x2 = embed(tape, &model.embeddings, b)?;
    match model.variant {
        Variant::Pm1 => pm1_forward(tape, x1, x2, model),
        Variant::Pm2 => pm2_forward(tape, x1, x2, model),
    }
}

/// Probability that `a` and `b` belong to the same class.
pub fn match_prob(model: &MatchModel, a: &Instance, b: &Instance) -> Result<f64> {
    let mut tape = Tape::new();
    let y = forward_pair(&mut tape, model, a, b)?;
    Ok(tape.value(y)[1])
}
