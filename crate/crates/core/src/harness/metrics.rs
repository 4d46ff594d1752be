use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::openworld::Decision;

/// Which classes macro-F1 averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum F1Over {
    #[serde(rename = "seen")]
    Seen,
    #[default]
    #[serde(rename = "seen+reject")]
    SeenAndReject,
}

impl std::str::FromStr for F1Over {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "seen" => Ok(F1Over::Seen),
            "seen+reject" => Ok(F1Over::SeenAndReject),
            _ => Err(Error::usage(format!(
                "unknown F1 averaging set {s:?} (expected seen or seen+reject)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold instances of this class.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Table {
    /// Seen classes in id order, then the rejection pseudo-class.
    pub per_class: Vec<ClassScores>,
    pub macro_f1: f64,
    pub averaged_over: F1Over,
    /// `confusion[gold][pred]`, same class order as `per_class`.
    pub confusion: Vec<Vec<usize>>,
}

fn index(d: Decision, m: usize) -> Result<usize> {
    match d {
        Decision::Seen(i) if i < m => Ok(i),
        Decision::Seen(i) => Err(Error::usage(format!(
            "seen class {i} out of range for {m} classes"
        ))),
        Decision::Reject => Ok(m),
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 over `m` seen classes plus rejection.
/// A class with no gold and no predicted instances scores F1 = 0.
pub fn macro_f1(pred: &[Decision], gold: &[Decision], m: usize, over: F1Over) -> Result<F1Table> {
    if pred.len() != gold.len() {
        return Err(Error::usage(format!(
            "{} predictions for {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    let n = m + 1;
    let mut confusion = vec![vec![0usize; n]; n];
    for (&p, &g) in pred.iter().zip(gold) {
        confusion[index(g, m)?][index(p, m)?] += 1;
    }
    let per_class: Vec<ClassScores> = (0..n)
        .map(|c| {
            let tp = confusion[c][c];
            let gold_c: usize = confusion[c].iter().sum();
            let pred_c: usize = confusion.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, pred_c);
            let recall = ratio(tp, gold_c);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                precision,
                recall,
                f1,
                support: gold_c,
            }
        })
        .collect();
    let counted = match over {
        F1Over::Seen => m,
        F1Over::SeenAndReject => n,
    };
    let macro_f1 = if counted == 0 {
        0.0
    } else {
        per_class[..counted].iter().map(|c| c.f1).sum::<f64>() / counted as f64
    };
    Ok(F1Table {
        per_class,
        macro_f1,
        averaged_over: over,
        confusion,
    })
}
