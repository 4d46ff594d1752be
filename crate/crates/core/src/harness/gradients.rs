use crate::error::Result;
use crate::matcher::{forward_pair, jitter_biases, MatchModel, ModelDims, Variant};
use crate::numerics::{grad_check, GradCheckOptions, GradCheckReport};
use crate::text_data::{EmbeddingTable, Instance, Vocab};

pub const GRADIENT_TOLERANCE: f64 = 1e-4;

fn tiny_model(variant: Variant, seed: u64) -> Result<MatchModel> {
    let tokens = ["<pad>", "<unk>", "w2", "w3", "w4", "w5", "w6", "w7"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let vocab = Vocab::from_tokens(tokens)?;
    let emb = EmbeddingTable::random(&vocab, 4, seed)?;
    let dims = ModelDims {
        max_len: 6,
        feature_maps: 2,
        hidden: 5,
    };
    let mut model = MatchModel::new(variant, vocab, emb, dims, seed)?;
    jitter_biases(&mut model, seed);
    Ok(model)
}

/// Finite-difference check of the pair cross-entropy for both variants at a
/// tiny size (L = 6, H = 4, 2 feature maps per width, hidden width 5).
pub fn gradient_suite(seed: u64) -> Result<Vec<(Variant, GradCheckReport)>> {
    let batch = [
        (vec![2, 3, 4, 0, 0, 0], vec![2, 4, 5, 6, 0, 0], 1),
        (vec![5, 6, 7, 3, 2, 0], vec![3, 3, 1, 0, 0, 0], 0),
        (vec![7, 6, 5, 4, 3, 2], vec![2, 7, 0, 0, 0, 0], 1),
    ];
    let pairs: Vec<(Instance, Instance, usize)> = batch
        .into_iter()
        .map(|(a, b, y)| (Instance::new(a, None), Instance::new(b, None), y))
        .collect();
    let labels: Vec<usize> = pairs.iter().map(|p| p.2).collect();
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    [Variant::Pm1, Variant::Pm2]
        .into_iter()
        .map(|variant| {
            let mut model = tiny_model(variant, seed)?;
            let report = grad_check(&mut model, opts, |m, tape| {
                let outs = pairs
                    .iter()
                    .map(|(a, b, _)| forward_pair(tape, m, a, b))
                    .collect::<Result<Vec<_>>>()?;
                let probs = tape.stack_rows(&outs)?;
                tape.cross_entropy(probs, &labels)
            })?;
            Ok((variant, report))
        })
        .collect()
}
