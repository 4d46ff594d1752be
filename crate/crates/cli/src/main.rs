//! `pmnet` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error,
//! 3 gradient check above tolerance.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmnet::harness::{
    self, emit_report, evaluate, fit_memory, gradient_suite, predict_text, render_table,
    run_experiment, synth, train_model, ExperimentConfig, F1Over, MemoryFile, Prepared, Report,
    SeenSpec, Timings, GRADIENT_TOLERANCE,
};
use pmnet::matcher::{load_model, save_model, Variant};
use pmnet::numerics::OptimizerKind;
use pmnet::openworld::{pair_refs, Decision, ThresholdMode};
use pmnet::text_data::{load_dataset, TokenizeMode};
use pmnet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "pmnet",
    version,
    about = "Pairwise matching networks for open-world text classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training pairs for the seen classes as TSV.
    BuildPairs {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a matching model and save it.
    Train {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        model: PathBuf,
    },
    /// Sample the per-class memory and fit rejection thresholds.
    FitThresholds {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        memory: PathBuf,
    },
    /// Score a test set and write a report.
    Eval {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        memory: PathBuf,
    },
    /// Classify one text.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        text: String,
    },
    /// Split, train, fit and evaluate in one go, once per seed.
    Run {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Generate the synthetic keyword corpus (train.tsv, test.tsv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Check analytic gradients against finite differences for both variants.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Experiment flags; each one overrides the matching field of `--config`.
#[derive(Args)]
struct ExpArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    min_freq: Option<usize>,
    /// lowercase | pretokenized
    #[arg(long)]
    tokenize: Option<TokenizeMode>,
    /// pm1 | pm2
    #[arg(long)]
    variant: Option<Variant>,
    /// Seen-class count, or a seen:unseen ratio such as 7:3.
    #[arg(long)]
    seen: Option<SeenSpec>,
    #[arg(long)]
    k: Option<usize>,
    /// adam | sgd
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    feature_maps: Option<usize>,
    #[arg(long)]
    fine_tune_embeddings: Option<bool>,
    #[arg(long)]
    symmetric_pairs: Option<bool>,
    /// scalar | per_class
    #[arg(long)]
    threshold_mode: Option<ThresholdMode>,
    #[arg(long)]
    alpha: Option<f64>,
    /// seen | seen+reject
    #[arg(long)]
    f1_over: Option<F1Over>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated; one report per seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    output: Option<PathBuf>,
}

impl ExpArgs {
    fn resolve(self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        set!(
            max_len => max_len, min_freq => min_freq, tokenize => tokenize,
            variant => variant, seen => seen, k => k, optimizer => optimizer,
            lr => learning_rate, batch_size => batch_size, epochs => epochs,
            hidden => hidden, feature_maps => feature_maps,
            fine_tune_embeddings => fine_tune_embeddings, symmetric_pairs => symmetric_pairs,
            threshold_mode => threshold_mode, alpha => alpha, f1_over => f1_over,
            output => output,
        );
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.seeds = None;
        }
        cfg.train_path = self.train.or(cfg.train_path);
        cfg.test_path = self.test.or(cfg.test_path);
        cfg.embeddings = self.embeddings.or(cfg.embeddings);
        cfg.embedding_dim = self.embedding_dim.or(cfg.embedding_dim);
        cfg.seeds = self.seeds.or(cfg.seeds);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn build_pairs(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let prep = Prepared::load(cfg, cfg.seed)?;
    let seen = prep.train.select(&prep.seen);
    let mut body = String::from("same\tclass_a\ttext_a\tclass_b\ttext_b\n");
    let refs = pair_refs(&seen, cfg.seed)?;
    for r in &refs {
        let (ca, ia) = r.a;
        let (cb, ib) = r.b;
        let _ = writeln!(
            body,
            "{}\t{}\t{}\t{}\t{}",
            u8::from(r.same),
            seen.class_name(ca),
            seen.group(ca)[ia].join(" "),
            seen.class_name(cb),
            seen.group(cb)[ib].join(" "),
        );
    }
    write_file(out, &body)?;
    println!(
        "{} pairs from {} seen-class instances -> {}",
        refs.len(),
        seen.len(),
        out.display()
    );
    Ok(())
}

fn train(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let prep = Prepared::load(cfg, cfg.seed)?;
    let (model, outcome) = train_model(cfg, &prep, cfg.seed)?;
    save_model(&model, path)?;
    for (e, loss) in outcome.epoch_losses.iter().enumerate() {
        println!("epoch {}: loss {loss:.6}", e + 1);
    }
    println!("seen classes: {}", prep.seen_names().join(" "));
    println!("model -> {}", path.display());
    Ok(())
}

fn fit(cfg: &ExperimentConfig, model_path: &Path, memory_path: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let prep = Prepared::load(cfg, cfg.seed)?;
    let mem = fit_memory(cfg, &model, &prep, cfg.seed)?;
    mem.save(memory_path)?;
    println!("thresholds: {:?}", mem.thresholds.values);
    println!("memory -> {}", memory_path.display());
    Ok(())
}

fn eval(cfg: &ExperimentConfig, model_path: &Path, memory_path: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let mem = MemoryFile::load(memory_path)?;
    let test_path = cfg.test_file()?;
    let test = load_dataset(&test_path, mem.tokenize)?;
    let eval = evaluate(&model, &mem, &test, cfg.f1_over)?;
    let unseen: Vec<String> = test
        .class_names()
        .iter()
        .filter(|n| !mem.class_names.contains(n))
        .cloned()
        .collect();
    let split = format!("{}:{}", mem.class_names.len(), unseen.len());
    let report = Report::new(
        cfg,
        cfg.seed,
        model.variant,
        split,
        unseen,
        &mem,
        &eval,
        None,
        Timings::default(),
    );
    emit_report(&report, &cfg.output)?;
    print!("{}", render_table(std::slice::from_ref(&report)));
    Ok(())
}

fn predict(model_path: &Path, memory_path: &Path, text: &str) -> Result<()> {
    let model = load_model(model_path)?;
    let mem = MemoryFile::load(memory_path)?;
    let (decision, p) = predict_text(&model, &mem, text)?;
    let label = match decision {
        Decision::Seen(i) => mem.class_names[i].clone(),
        Decision::Reject => harness::REJECT_LABEL.to_owned(),
    };
    let out = serde_json::json!({
        "decision": label,
        "classes": mem.class_names,
        "p": p.as_slice(),
    });
    println!("{out}");
    Ok(())
}

fn seed_path(output: &Path, seed: u64) -> PathBuf {
    let stem = output
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    output.with_file_name(format!("{stem}.seed{seed}.json"))
}

fn run(cfg: &ExperimentConfig) -> Result<()> {
    let seeds = cfg.seed_list();
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let report = run_experiment(cfg, seed)?;
        let path = if cfg.seeds.is_some() {
            seed_path(&cfg.output, seed)
        } else {
            cfg.output.clone()
        };
        emit_report(&report, &path)?;
        eprintln!("seed {seed}: report -> {}", path.display());
        reports.push(report);
    }
    let table = render_table(&reports);
    if cfg.seeds.is_some() {
        write_file(&cfg.output.with_extension("txt"), &table)?;
    }
    print!("{table}");
    Ok(())
}

/// Ok(false) when some error is over tolerance.
fn gradcheck(seed: u64) -> Result<bool> {
    let mut ok = true;
    for (variant, report) in gradient_suite(seed)? {
        let err = report.max_rel_error();
        let pass = err <= GRADIENT_TOLERANCE;
        ok &= pass;
        println!(
            "{}: max relative error {err:.3e} over {} coordinates ({})",
            variant.display_name(),
            report.coords_checked,
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::BuildPairs { exp, out } => build_pairs(&exp.resolve()?, &out)?,
        Command::Train { exp, model } => train(&exp.resolve()?, &model)?,
        Command::FitThresholds { exp, model, memory } => fit(&exp.resolve()?, &model, &memory)?,
        Command::Eval { exp, model, memory } => eval(&exp.resolve()?, &model, &memory)?,
        Command::Predict {
            model,
            memory,
            text,
        } => predict(&model, &memory, &text)?,
        Command::Run { exp } => run(&exp.resolve()?)?,
        Command::Synth { out, seed } => {
            synth::write_corpus(&out, &synth::SynthSpec::default(), seed)?;
            println!(
                "wrote {}/train.tsv and {}/test.tsv",
                out.display(),
                out.display()
            );
        }
        Command::Gradcheck { seed } => {
            if !gradcheck(seed)? {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
