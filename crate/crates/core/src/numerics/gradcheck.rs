//! Central finite-difference check of tape gradients.

use rand::seq::index::sample;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::{seeded, Stream};

/// Anything that exposes its learnable tensors in a fixed order.
pub trait Parameters {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;
}

impl Parameters for Vec<Tensor> {
    fn parameters(&self) -> Vec<&Tensor> {
        self.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per tensor; tensors this small or smaller are checked in full.
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coords_per_tensor: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error per parameter tensor, in parameter order.
    pub per_tensor: Vec<f64>,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_tensor.iter().copied().fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares analytic gradients of `loss` against central differences.
/// `loss` must be deterministic and register parameters with [`Tape::param`].
pub fn grad_check<M, F>(model: &mut M, opts: GradCheckOptions, loss: F) -> Result<GradCheckReport>
where
    M: Parameters,
    F: for<'m> Fn(&'m M, &mut Tape<'m>) -> Result<Var>,
{
    let analytic: Vec<Vec<f64>> = {
        let mut tape = Tape::new();
        let l = loss(model, &mut tape)?;
        let grads = tape.backward(l)?;
        model
            .parameters()
            .into_iter()
            .map(|p| grads.dense(p))
            .collect()
    };
    let eval = |m: &M| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss(m, &mut tape)?;
        Ok(tape.value(l)[0])
    };

    let mut rng = seeded(opts.seed, Stream::GradCheck);
    let sizes: Vec<usize> = model.parameters().iter().map(|p| p.len()).collect();
    let mut per_tensor = Vec::with_capacity(sizes.len());
    let mut checked = 0;
    for (ti, &n) in sizes.iter().enumerate() {
        let coords: Vec<usize> = if n <= opts.coords_per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, opts.coords_per_tensor).into_vec()
        };
        let mut worst: f64 = 0.0;
        for j in coords {
            let original = model.parameters()[ti].data()[j];
            model.parameters_mut()[ti].data_mut()[j] = original + opts.step;
            let plus = eval(model)?;
            model.parameters_mut()[ti].data_mut()[j] = original - opts.step;
            let minus = eval(model)?;
            model.parameters_mut()[ti].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic[ti][j], numeric));
            checked += 1;
        }
        per_tensor.push(worst);
    }
    Ok(GradCheckReport {
        per_tensor,
        coords_checked: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_is_exact() {
        let mut params = vec![Tensor::new(vec![3], vec![0.7, -1.3, 2.0])
            .unwrap()
            .with_grad()];
        let x = [1.5, -0.25, 4.0];
        let report = grad_check(&mut params, GradCheckOptions::default(), |p, tape| {
            let w = tape.param(&p[0]);
            let xv = tape.constant(Tensor::new(vec![3], x.to_vec()).unwrap());
            let prod = tape.mul(w, xv)?;
            Ok(tape.sum(prod))
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-9, "{report:?}");
        assert_eq!(report.coords_checked, 3);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at exactly 0 has subgradient 0 while the central difference sees 0.5.
        let mut params = vec![Tensor::new(vec![1], vec![0.0]).unwrap().with_grad()];
        let report = grad_check(&mut params, GradCheckOptions::default(), |p, tape| {
            let w = tape.param(&p[0]);
            let r = tape.relu(w);
            Ok(tape.sum(r))
        })
        .unwrap();
        assert!(report.max_rel_error() > 0.5);
    }
}
