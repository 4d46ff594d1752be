use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{forward_pair, MatchModel, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::numerics::{Optimizer, OptimizerKind, Parameters, Tape};
use crate::openworld::PairExample;
use crate::rng::{seeded, Stream};
use crate::text_data::PAD;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Width of the hidden fully connected layer.
    pub hidden: usize,
    pub fine_tune_embeddings: bool,
    /// Also train on every pair in reversed order.
    pub symmetric_pairs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 5,
            seed: 7,
            hidden: DEFAULT_HIDDEN,
            fine_tune_embeddings: true,
            symmetric_pairs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::usage("learning rate must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.hidden == 0 {
            return Err(Error::usage(
                "batch size, epochs and hidden width must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean per-pair loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss of the first batch, before any update.
    pub initial_loss: f64,
}

/// Mini-batch training on cross-entropy over shuffled pairs. The shuffle of
/// epoch `e` is drawn from its own stream of `cfg.seed`.
pub fn train(
    model: &mut MatchModel,
    pairs: &[PairExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::usage("cannot train on an empty pair dataset"));
    }
    model.set_embeddings_trainable(cfg.fine_tune_embeddings);

    let mut examples: Vec<(&PairExample, bool)> = pairs.iter().map(|p| (p, false)).collect();
    if cfg.symmetric_pairs {
        examples.extend(pairs.iter().map(|p| (p, true)));
    }

    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut initial_loss = None;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut seeded(cfg.seed, Stream::Shuffle(epoch as u64)));

        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for p in model.parameters_mut() {
                p.zero_grad();
            }
            let (loss, grads) = {
                let mut tape = Tape::new();
                let mut outs = Vec::with_capacity(batch.len());
                let mut labels = Vec::with_capacity(batch.len());
                for &i in batch {
                    let (pair, flipped) = examples[i];
                    let (a, b) = if flipped {
                        (&pair.b, &pair.a)
                    } else {
                        (&pair.a, &pair.b)
                    };
                    outs.push(forward_pair(&mut tape, model, a, b)?);
                    labels.push(usize::from(pair.same));
                }
                let probs = tape.stack_rows(&outs)?;
                let loss = tape.cross_entropy(probs, &labels)?;
                (tape.value(loss)[0], tape.backward(loss)?)
            };
            initial_loss.get_or_insert(loss);
            total += loss * batch.len() as f64;

            grads.accumulate(&mut model.parameters_mut());
            // The PAD row stays at zero.
            let h = model.emb_dim();
            if let Some(g) = model.embeddings.weights.grad_mut() {
                g[PAD * h..(PAD + 1) * h].iter_mut().for_each(|v| *v = 0.0);
            }
            opt.step(&mut model.parameters_mut());
        }
        epoch_losses.push(total / examples.len() as f64);
    }
    for p in model.parameters_mut() {
        p.zero_grad();
    }
    Ok(TrainOutcome {
        epoch_losses,
        initial_loss: initial_loss.unwrap_or(f64::NAN),
    })
}
