//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "PMNETv1\0"
//! variant    u8        1 | 2
//! L, H, d_fc, V        u32 each
//! tensors    embeddings [V×H],
//!            then for widths 3, 4, 5: weight [n×H×C×F], bias [F],
//!            then hidden weight, hidden bias, output weight, output bias
//!            each as: rank u32, dims u32 × rank, data f64 × product(dims)
//! vocabulary V × (byte length u32, UTF-8 bytes), in id order
//! ```

use std::fs;
use std::path::Path;

use super::{EncoderParams, FilterBank, HeadParams, MatchModel, Variant, FILTER_WIDTHS};
use crate::error::{Error, Result};
use crate::numerics::{Parameters, Tensor};
use crate::text_data::{EmbeddingTable, Vocab};

pub const MAGIC: &[u8; 8] = b"PMNETv1\0";

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("model dimension exceeds u32");
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn model_to_bytes(model: &MatchModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(model.variant.tag());
    put_u32(&mut buf, model.max_len);
    put_u32(&mut buf, model.emb_dim());
    put_u32(&mut buf, model.head.hidden_b.len());
    put_u32(&mut buf, model.vocab.len());
    for t in model.parameters() {
        put_u32(&mut buf, t.rank());
        for &d in t.shape() {
            put_u32(&mut buf, d);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for tok in model.vocab.tokens() {
        put_u32(&mut buf, tok.len());
        buf.extend_from_slice(tok.as_bytes());
    }
    buf
}

pub fn save_model(model: &MatchModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MatchModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Corrupt {
            offset: self.pos as u64,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len().saturating_sub(self.pos) < n {
            return self.fail(format!("file truncated while reading {what}"));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn tensor(&mut self, name: &str, expected: &[usize]) -> Result<Tensor> {
        let start = self.pos;
        let rank = self.u32(name)?;
        if rank != expected.len() {
            self.pos = start;
            return self.fail(format!("{name}: rank {rank}, expected {}", expected.len()));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32(name)?);
        }
        if dims != expected {
            self.pos = start;
            return self.fail(format!("{name}: shape {dims:?}, expected {expected:?}"));
        }
        let n: usize = dims.iter().product();
        let raw = self.take(n * 8, name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::new(dims, data)?.with_grad())
    }
}

/// Parses a model file image. Nothing is returned unless the whole image is valid.
pub fn model_from_bytes(bytes: &[u8]) -> Result<MatchModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        r.pos = 0;
        return r.fail("bad magic bytes (not a PMNETv1 model file)");
    }
    let tag = r.take(1, "variant")?[0];
    let Some(variant) = Variant::from_tag(tag) else {
        r.pos -= 1;
        return r.fail(format!("unknown variant tag {tag}"));
    };
    let max_len = r.u32("sequence length")?;
    let h = r.u32("embedding size")?;
    let hidden = r.u32("hidden width")?;
    let v = r.u32("vocabulary size")?;
    if max_len == 0 || h == 0 || hidden == 0 || v < 2 {
        r.pos -= 16;
        return r.fail("header dimensions must be positive (vocabulary ≥ 2)");
    }

    let embeddings = r.tensor("embeddings", &[v, h])?;
    let c = variant.channels();
    let mut banks = Vec::with_capacity(FILTER_WIDTHS.len());
    let mut maps = None;
    for &n in &FILTER_WIDTHS {
        // Feature-map count is not in the header; take it from the first bank.
        let f = match maps {
            Some(f) => f,
            None => {
                let save = r.pos;
                let rank = r.u32("filter bank")?;
                if rank != 4 {
                    r.pos = save;
                    return r.fail(format!("filter bank rank {rank}, expected 4"));
                }
                for _ in 0..3 {
                    r.u32("filter bank")?;
                }
                let f = r.u32("filter bank")?;
                r.pos = save;
                if f == 0 {
                    return r.fail("zero feature maps");
                }
                maps = Some(f);
                f
            }
        };
        let weight = r.tensor(&format!("width-{n} weight"), &[n, h, c, f])?;
        let bias = r.tensor(&format!("width-{n} bias"), &[f])?;
        banks.push(FilterBank {
            width: n,
            weight,
            bias,
        });
    }
    let encoded = maps.unwrap() * FILTER_WIDTHS.len();
    let head_in = match variant {
        Variant::Pm1 => 2 * encoded,
        Variant::Pm2 => encoded,
    };
    let head = HeadParams {
        hidden_w: r.tensor("hidden weight", &[head_in, hidden])?,
        hidden_b: r.tensor("hidden bias", &[hidden])?,
        out_w: r.tensor("output weight", &[hidden, 2])?,
        out_b: r.tensor("output bias", &[2])?,
    };

    let mut tokens = Vec::with_capacity(v);
    for _ in 0..v {
        let len = r.u32("vocabulary token length")?;
        let start = r.pos;
        let raw = r.take(len, "vocabulary token")?;
        match std::str::from_utf8(raw) {
            Ok(s) => tokens.push(s.to_owned()),
            Err(_) => {
                r.pos = start;
                return r.fail("vocabulary token is not UTF-8");
            }
        }
    }
    if r.pos != bytes.len() {
        return r.fail(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let vocab = Vocab::from_tokens(tokens).map_err(|e| Error::Corrupt {
        offset: r.pos as u64,
        message: e.to_string(),
    })?;

    Ok(MatchModel {
        variant,
        encoder: EncoderParams { channels: c, banks },
        head,
        embeddings: EmbeddingTable {
            weights: embeddings,
            trainable: true,
        },
        vocab,
        max_len,
    })
}
