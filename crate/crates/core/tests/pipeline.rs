use std::sync::OnceLock;

use pmnet::harness::{
    evaluate, fit_memory, predict_text, relabel_test, synth, train_model, ExperimentConfig, F1Over,
    MemoryFile, Prepared, Report, Timings,
};
use pmnet::matcher::{
    cnn_encode, match_prob, EncoderParams, FilterBank, MatchModel, TrainOutcome, Variant,
};
use pmnet::numerics::{Tape, Tensor};
use pmnet::openworld::Decision;
use pmnet::text_data::{parse_dataset, RawDataset, TokenizeMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    cfg: ExperimentConfig,
    prep: Prepared,
    test: RawDataset,
    model: MatchModel,
    outcome: TrainOutcome,
    memory: MemoryFile,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let corpus = synth::generate(&synth::SynthSpec::default(), 7).unwrap();
        let train = parse_dataset(&corpus.train_tsv, "train.tsv", TokenizeMode::Lowercase).unwrap();
        let test = parse_dataset(&corpus.test_tsv, "test.tsv", TokenizeMode::Lowercase).unwrap();
        let cfg = ExperimentConfig::default();
        let prep = Prepared::from_dataset(&cfg, train, cfg.seed).unwrap();
        let (model, outcome) = train_model(&cfg, &prep, cfg.seed).unwrap();
        let memory = fit_memory(&cfg, &model, &prep, cfg.seed).unwrap();
        Fixture {
            cfg,
            prep,
            test,
            model,
            outcome,
            memory,
        }
    })
}

#[test]
fn untrained_loss_is_near_ln2() {
    let f = fixture();
    assert!(
        (f.outcome.initial_loss - std::f64::consts::LN_2).abs() < 0.1,
        "{}",
        f.outcome.initial_loss
    );
}

#[test]
fn final_epoch_loss_is_below_the_first() {
    let losses = &fixture().outcome.epoch_losses;
    assert_eq!(losses.len(), 5);
    assert!(losses[4] < losses[0], "{losses:?}");
}

#[test]
fn final_epoch_loss_matches_pinned_measurement() {
    let last = *fixture().outcome.epoch_losses.last().unwrap();
    assert!((last - 0.317).abs() <= 0.1, "{last}");
}

#[test]
fn match_probabilities_are_in_range() {
    let f = fixture();
    let data = f.prep.seen_train(&f.model.vocab, f.model.max_len);
    for c in 0..data.num_classes() {
        let p = match_prob(
            &f.model,
            &data.group(c)[0],
            &data.group((c + 1) % data.num_classes())[1],
        )
        .unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn split_and_gold_rejects() {
    let f = fixture();
    assert_eq!(f.prep.split_label(), "7:3");
    let gold = relabel_test(&f.test, &f.prep.seen_names());
    assert_eq!(
        gold.iter().filter(|d| **d == Decision::Reject).count(),
        3 * 20
    );
}

#[test]
fn report_is_internally_consistent() {
    let f = fixture();
    let eval = evaluate(&f.model, &f.memory, &f.test, F1Over::SeenAndReject).unwrap();
    let report = Report::new(
        &f.cfg,
        f.cfg.seed,
        f.model.variant,
        f.prep.split_label(),
        f.prep.unseen_names(),
        &f.memory,
        &eval,
        Some(&f.outcome),
        Timings::default(),
    );
    assert_eq!(report.per_class.len(), 8);
    let mean = report.per_class.iter().map(|c| c.f1).sum::<f64>() / 8.0;
    assert!((report.macro_f1 - mean).abs() < 1e-12);
    let total: usize = report.confusion.matrix.iter().flatten().sum();
    assert_eq!(total, 200);
    assert_eq!(report.memory.k, 15);
    assert!(report.memory.classes.iter().all(|m| m.len() == 15));
    assert_eq!(
        Report::from_json(&report.to_json().unwrap()).unwrap(),
        report
    );
}

#[test]
fn predict_matches_evaluate() {
    let f = fixture();
    let doc = f.test.group(0)[3].join(" ");
    let (d, p) = predict_text(&f.model, &f.memory, &doc).unwrap();
    assert_eq!(p.len(), 7);
    let single = parse_dataset(
        &format!("{}\t{doc}\n", f.test.class_name(0)),
        "one",
        TokenizeMode::Lowercase,
    )
    .unwrap();
    let eval = evaluate(&f.model, &f.memory, &single, F1Over::SeenAndReject).unwrap();
    assert_eq!(eval.predicted, vec![d]);
    assert_eq!(eval.probabilities, vec![p]);
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

#[test]
fn encoder_equals_hand_composed_reference() {
    let (l, h, maps) = (6, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_tensor(&mut rng, &[l, h]);
    let banks: Vec<FilterBank> = [3, 4, 5]
        .into_iter()
        .map(|n| FilterBank {
            width: n,
            weight: random_tensor(&mut rng, &[n, h, 1, maps]),
            bias: random_tensor(&mut rng, &[maps]),
        })
        .collect();
    let mut expected = Vec::new();
    for bank in &banks {
        let (w, b, n) = (bank.weight.data(), bank.bias.data(), bank.width);
        for f in 0..maps {
            let mut best = f64::NEG_INFINITY;
            for p in 0..=l - n {
                let mut s = b[f];
                for i in 0..n {
                    for j in 0..h {
                        s += x.data()[(p + i) * h + j] * w[(i * h + j) * maps + f];
                    }
                }
                best = best.max(s.max(0.0));
            }
            expected.push(best);
        }
    }
    let enc = EncoderParams { channels: 1, banks };
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let r = cnn_encode(&mut tape, xv, &enc).unwrap();
    let got = tape.value(r);
    assert_eq!(got.len(), 3 * maps);
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() < 1e-12, "{got:?} vs {expected:?}");
    }
}

#[test]
fn pm1_trains_end_to_end() {
    let f = fixture();
    let cfg = ExperimentConfig {
        variant: Variant::Pm1,
        epochs: 2,
        ..f.cfg.clone()
    };
    let (model, outcome) = train_model(&cfg, &f.prep, 3).unwrap();
    assert_eq!(model.variant, Variant::Pm1);
    assert!(outcome.epoch_losses.iter().all(|l| l.is_finite()));
}
