//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Run with
//! `cargo test -p pmnet-core --test acceptance`.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pmnet::harness::{
    gradient_suite, macro_f1, run_experiment, synth, ExperimentConfig, F1Over, Report,
    GRADIENT_TOLERANCE,
};
use pmnet::matcher::{model_from_bytes, model_to_bytes, MatchModel, ModelDims, Variant};
use pmnet::numerics::{Parameters, Tape, Tensor};
use pmnet::openworld::{
    decide, gaussian_threshold, pair_refs, trimmed_mean, ClassProbabilities, Decision, Thresholds,
};
use pmnet::text_data::{EmbeddingTable, LabeledDataset, Vocab};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn gradients() -> Outcome {
    let started = Instant::now();
    let reports = match gradient_suite(0) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let elapsed = started.elapsed();
    let mut pass = elapsed < Duration::from_secs(30);
    let mut parts = Vec::new();
    for (variant, report) in &reports {
        let err = report.max_rel_error();
        pass &= err <= GRADIENT_TOLERANCE;
        parts.push(format!("{} max rel err {err:.2e}", variant.display_name()));
    }
    pass &= reports.len() == 2;
    outcome(
        pass,
        format!("{}; {:.1}s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn matmul_oracle(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i * k + t] * b[t * m + j];
            }
            c[i * m + j] = s;
        }
    }
    c
}

#[allow(clippy::too_many_arguments)]
fn conv_oracle(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    l: usize,
    h: usize,
    c: usize,
    n: usize,
    f: usize,
) -> Vec<f64> {
    let positions = l - n + 1;
    let mut y = vec![0.0; positions * f];
    for p in 0..positions {
        for fi in 0..f {
            let mut s = b[fi];
            for i in 0..n {
                for j in 0..h {
                    for ch in 0..c {
                        s += x[((p + i) * h + j) * c + ch] * w[((i * h + j) * c + ch) * f + fi];
                    }
                }
            }
            y[p * f + fi] = s;
        }
    }
    y
}

fn trimmed_oracle(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let kept = if v.len() >= 3 {
        &v[1..v.len() - 1]
    } else {
        &v[..]
    };
    kept.iter().sum::<f64>() / kept.len() as f64
}

fn decide_oracle(p: &[f64], t: &Thresholds) -> Decision {
    let m = p.len();
    let passes = |i: usize| -> bool {
        if t.values.len() == 1 {
            p[i] >= t.values[0]
        } else {
            p[i] >= t.values[i]
        }
    };
    if t.values.len() == 1 {
        let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max < t.values[0] {
            return Decision::Reject;
        }
    }
    // Smallest passing index whose value no other passing value beats.
    for i in 0..m {
        if passes(i) && (0..m).all(|j| !passes(j) || p[j] <= p[i]) {
            return Decision::Seen(i);
        }
    }
    Decision::Reject
}

fn f1_oracle(pred: &[Decision], gold: &[Decision], m: usize, over: F1Over) -> f64 {
    let id = |d: &Decision| match d {
        Decision::Seen(i) => *i,
        Decision::Reject => m,
    };
    let n = m + 1;
    let mut cm = vec![vec![0u64; n]; n];
    for (p, g) in pred.iter().zip(gold) {
        cm[id(g)][id(p)] += 1;
    }
    let counted = if over == F1Over::Seen { m } else { n };
    let mut total = 0.0;
    #[allow(clippy::needless_range_loop)]
    for c in 0..counted {
        let tp = cm[c][c] as f64;
        let fp: f64 = (0..n).filter(|&r| r != c).map(|r| cm[r][c] as f64).sum();
        let fneg: f64 = (0..n).filter(|&k| k != c).map(|k| cm[c][k] as f64).sum();
        // F1 = 2TP / (2TP + FP + FN), zero when undefined.
        let den = 2.0 * tp + fp + fneg;
        total += if tp == 0.0 { 0.0 } else { 2.0 * tp / den };
    }
    total / counted as f64
}

fn oracles() -> Outcome {
    let mut r = rng(11);
    let mut worst_mm: f64 = 0.0;
    for _ in 0..200 {
        let (n, k, m) = (r.gen_range(1..8), r.gen_range(1..8), r.gen_range(1..8));
        let a = uniform(&mut r, n * k);
        let b = uniform(&mut r, k * m);
        let mut tape = Tape::new();
        let va = tape.constant(Tensor::new(vec![n, k], a.clone()).unwrap());
        let vb = tape.constant(Tensor::new(vec![k, m], b.clone()).unwrap());
        let vc = tape.matmul(va, vb).unwrap();
        worst_mm = worst_mm.max(max_abs_diff(
            tape.value(vc),
            &matmul_oracle(&a, &b, n, k, m),
        ));
    }

    let mut worst_conv: f64 = 0.0;
    let mut shapes = vec![(7, 4, 2, 3, 3)];
    for _ in 0..200 {
        let n = r.gen_range(1..6);
        shapes.push((
            n + r.gen_range(0..5),
            r.gen_range(1..6),
            r.gen_range(1..3),
            n,
            r.gen_range(1..5),
        ));
    }
    for (l, h, c, n, f) in shapes {
        let x = uniform(&mut r, l * h * c);
        let w = uniform(&mut r, n * h * c * f);
        let b = uniform(&mut r, f);
        let mut tape = Tape::new();
        let vx = tape.constant(Tensor::new(vec![l, h, c], x.clone()).unwrap());
        let vw = tape.constant(Tensor::new(vec![n, h, c, f], w.clone()).unwrap());
        let vb = tape.constant(Tensor::new(vec![f], b.clone()).unwrap());
        let vy = tape.conv_valid(vx, vw, vb).unwrap();
        worst_conv = worst_conv.max(max_abs_diff(
            tape.value(vy),
            &conv_oracle(&x, &w, &b, l, h, c, n, f),
        ));
    }

    // Multiples of 2^-10 in [0, 1]: every partial sum is exact, so the two
    // summation orders agree bit for bit.
    let mut trimmed_mismatch = 0;
    for _ in 0..1000 {
        let k = r.gen_range(1..40);
        let v: Vec<f64> = (0..k)
            .map(|_| r.gen_range(0..=1024) as f64 / 1024.0)
            .collect();
        if trimmed_mean(&v).unwrap() != trimmed_oracle(&v) {
            trimmed_mismatch += 1;
        }
    }

    let mut decide_mismatch = 0;
    for i in 0..1000 {
        let m = r.gen_range(1..8);
        // Coarse grid so ties and exact threshold hits occur.
        let p: Vec<f64> = (0..m).map(|_| r.gen_range(0..=10) as f64 / 10.0).collect();
        let t = if i % 2 == 0 {
            Thresholds::scalar(r.gen_range(0..=10) as f64 / 10.0)
        } else {
            Thresholds::per_class((0..m).map(|_| r.gen_range(0..=10) as f64 / 10.0).collect())
        };
        if decide(&ClassProbabilities(p.clone()), &t).unwrap() != decide_oracle(&p, &t) {
            decide_mismatch += 1;
        }
    }

    let mut worst_f1: f64 = 0.0;
    for i in 0..1000 {
        let m = r.gen_range(1..8);
        let len = r.gen_range(1..60);
        let draw = |r: &mut ChaCha8Rng| {
            let c = r.gen_range(0..=m);
            if c == m {
                Decision::Reject
            } else {
                Decision::Seen(c)
            }
        };
        let pred: Vec<Decision> = (0..len).map(|_| draw(&mut r)).collect();
        let gold: Vec<Decision> = (0..len).map(|_| draw(&mut r)).collect();
        let over = if i % 2 == 0 {
            F1Over::SeenAndReject
        } else {
            F1Over::Seen
        };
        let got = macro_f1(&pred, &gold, m, over).unwrap().macro_f1;
        worst_f1 = worst_f1.max((got - f1_oracle(&pred, &gold, m, over)).abs());
    }

    let pass = worst_mm <= 1e-12
        && worst_conv <= 1e-12
        && trimmed_mismatch == 0
        && decide_mismatch == 0
        && worst_f1 <= 1e-12;
    outcome(
        pass,
        format!(
            "matmul {worst_mm:.1e}, conv {worst_conv:.1e}, trimmed mean {trimmed_mismatch}/1000 mismatches, \
             decide {decide_mismatch}/1000 mismatches, macro-F1 {worst_f1:.1e}"
        ),
    )
}

fn threshold() -> Outcome {
    // Scores mirrored about 1: {0.8, 0.9, 1.2, 1.1}, deviations from 1 squared.
    let points = [0.8, 0.9, 1.2, 1.1];
    let sigma =
        (points.iter().map(|p: &f64| (p - 1.0).powi(2)).sum::<f64>() / points.len() as f64).sqrt();
    let expected = (1.0 - 3.0 * sigma).max(0.5);
    let (_, t) = gaussian_threshold(&[0.8, 0.9], 3.0).unwrap();
    let pass = (t - 0.525658).abs() <= 1e-6 && (t - expected).abs() <= 1e-12;
    outcome(pass, format!("t = {t:.9} (hand-derived {expected:.9})"))
}

fn pair_builder() -> Outcome {
    let mut r = rng(23);
    let mut failures = Vec::new();
    for trial in 0..50 {
        let m = r.gen_range(2..7);
        let sizes: Vec<usize> = (0..m).map(|_| r.gen_range(2..12)).collect();
        let groups: Vec<Vec<(usize, usize)>> = sizes
            .iter()
            .enumerate()
            .map(|(c, &n)| (0..n).map(|i| (c, i)).collect())
            .collect();
        let names = (0..m).map(|c| format!("c{c}")).collect();
        let data = LabeledDataset::new(names, groups).unwrap();
        let pairs = pair_refs(&data, r.gen()).unwrap();
        let total: usize = sizes.iter().sum();
        let positives = pairs.iter().filter(|p| p.same).count();
        let consistent = pairs.iter().all(|p| {
            let (ca, ia) = data.group(p.a.0)[p.a.1];
            let (cb, ib) = data.group(p.b.0)[p.b.1];
            (p.same == (ca == cb)) && !(p.same && ia == ib)
        });
        let mut anchors: Vec<(usize, usize, bool)> =
            pairs.iter().map(|p| (p.a.0, p.a.1, p.same)).collect();
        anchors.sort_unstable();
        anchors.dedup();
        let ok = pairs.len() == 2 * total
            && positives == total
            && consistent
            && anchors.len() == 2 * total;
        if !ok {
            failures.push(trial);
        }
    }
    outcome(
        failures.is_empty(),
        format!("50 datasets, failing trials {failures:?}"),
    )
}

fn serialization() -> Outcome {
    let tokens = ["<pad>", "<unk>", "alpha", "beta", "gamma"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let vocab = Vocab::from_tokens(tokens).unwrap();
    let mut round_trips = true;
    let mut rejected = 0;
    let mut attempts = 0;
    for (variant, seed) in [(Variant::Pm1, 1), (Variant::Pm2, 2)] {
        let emb = EmbeddingTable::random(&vocab, 6, seed).unwrap();
        let dims = ModelDims {
            max_len: 8,
            feature_maps: 3,
            hidden: 7,
        };
        let model = MatchModel::new(variant, vocab.clone(), emb, dims, seed).unwrap();
        let bytes = model_to_bytes(&model);
        let back = model_from_bytes(&bytes).unwrap();
        round_trips &= back.variant == model.variant
            && back.max_len == model.max_len
            && back.vocab == model.vocab
            && back.parameters().len() == model.parameters().len()
            && back
                .parameters()
                .iter()
                .zip(model.parameters())
                .all(|(a, b)| a.bitwise_eq(b));
        round_trips &= model_to_bytes(&back) == bytes;

        let mut corrupted: Vec<Vec<u8>> = (0..bytes.len())
            .step_by(7)
            .map(|n| bytes[..n].to_vec())
            .collect();
        let mut bad_magic = bytes.clone();
        bad_magic[0] ^= 0xff;
        corrupted.push(bad_magic);
        let mut bad_variant = bytes.clone();
        bad_variant[8] = 9;
        corrupted.push(bad_variant);
        let mut trailing = bytes.clone();
        trailing.push(0);
        corrupted.push(trailing);
        for c in &corrupted {
            attempts += 1;
            if model_from_bytes(c).is_err() {
                rejected += 1;
            }
        }
    }
    outcome(
        round_trips && rejected == attempts,
        format!("bitwise round trip {round_trips}; corrupted files rejected {rejected}/{attempts}"),
    )
}

struct SynthRuns {
    first: Result<(Report, Duration), String>,
    second: Result<(Report, Duration), String>,
    k1: Result<(Report, Duration), String>,
}

fn timed_run(cfg: &ExperimentConfig) -> Result<(Report, Duration), String> {
    let started = Instant::now();
    run_experiment(cfg, cfg.seed)
        .map(|r| (r, started.elapsed()))
        .map_err(|e| e.to_string())
}

fn synth_runs(dir: &Path) -> SynthRuns {
    synth::write_corpus(dir, &synth::SynthSpec::default(), 7).unwrap();
    let cfg = ExperimentConfig {
        train_path: Some(dir.join("train.tsv")),
        test_path: Some(dir.join("test.tsv")),
        variant: Variant::Pm2,
        k: 15,
        seed: 7,
        ..ExperimentConfig::default()
    };
    let first = timed_run(&cfg);
    let second = timed_run(&cfg);
    let k1 = timed_run(&ExperimentConfig { k: 1, ..cfg });
    SynthRuns { first, second, k1 }
}

fn end_to_end(runs: &SynthRuns) -> Outcome {
    let (r15, t15) = match &runs.first {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("K=15 run failed: {e}")),
    };
    let (r1, t1) = match &runs.k1 {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("K=1 run failed: {e}")),
    };
    let limit = Duration::from_secs(600);
    let pass = r15.macro_f1 >= 0.90 && *t15 < limit && r1.macro_f1 >= 0.75 && *t1 < limit;
    outcome(
        pass,
        format!(
            "{} {}: macro-F1 {:.4} (need >= 0.90) in {:.0}s; K=1: macro-F1 {:.4} (need >= 0.75) in {:.0}s; \
             final epoch loss {:.4}",
            r15.model,
            r15.split,
            r15.macro_f1,
            t15.as_secs_f64(),
            r1.macro_f1,
            t1.as_secs_f64(),
            r15.epoch_losses.last().copied().unwrap_or(f64::NAN),
        ),
    )
}

fn determinism(runs: &SynthRuns) -> Outcome {
    match (&runs.first, &runs.second) {
        (Ok((a, _)), Ok((b, _))) => {
            let ja = a.without_timings().to_json().unwrap();
            let jb = b.without_timings().to_json().unwrap();
            outcome(
                ja == jb,
                format!(
                    "report JSON without timings: {} vs {} bytes, equal = {}",
                    ja.len(),
                    jb.len(),
                    ja == jb
                ),
            )
        }
        _ => outcome(false, "a synthetic run failed"),
    }
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("gradient suite", gradients()),
        ("oracle equivalence", oracles()),
        ("threshold fit", threshold()),
        ("pair-builder contract", pair_builder()),
        ("serialization", serialization()),
    ];
    let dir = tempfile::tempdir().unwrap();
    let runs = synth_runs(dir.path());
    results.push(("end-to-end synthetic run", end_to_end(&runs)));
    results.push(("determinism", determinism(&runs)));

    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
