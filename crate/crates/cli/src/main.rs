//! `dtsl`: train, evaluate and inspect the two-path semi-supervised text
//! classifier.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime
//! failure, 3 gradient check failure.

mod config;

use std::fs::{self, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;

use dtsl::checkpoint::{load_checkpoint, save_checkpoint};
use dtsl::data::{designate_labeled, encode_all, load_corpus, load_embeddings, EmbeddingTable, Label, TweetRecord};
use dtsl::eval::{confusion, fingerprint, macro_prf, predict_samples, render_table, run_loeo_with, ConfusionMatrix, PrfReport};
use dtsl::network::Architecture;
use dtsl::train::Trainer;
use dtsl::verify::run_gradcheck;

use config::{FileConfig, Flags};

#[derive(Debug, Parser)]
#[command(name = "dtsl", version, about = "Two-path semi-supervised CNN for fake-news text classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a corpus and write a checkpoint plus a JSON-lines epoch log
    Train {
        #[command(flatten)]
        flags: Flags,
        /// Continue from the checkpoint instead of starting fresh
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the labeled records of a corpus
    Evaluate {
        #[command(flatten)]
        flags: Flags,
    },
    /// Leave-one-event-out cross-validation
    Loeo {
        #[command(flatten)]
        flags: Flags,
    },
    /// Write one `id<TAB>label` line per record
    Predict {
        #[command(flatten)]
        flags: Flags,
    },
    /// Finite-difference check of every backward rule and the full objective
    Gradcheck {
        #[command(flatten)]
        flags: Flags,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
    Gradcheck(String),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Train { flags, resume } => cmd_train(&flags, resume),
        Command::Evaluate { flags } => cmd_evaluate(&flags),
        Command::Loeo { flags } => cmd_loeo(&flags),
        Command::Predict { flags } => cmd_predict(&flags),
        Command::Gradcheck { flags } => cmd_gradcheck(&flags),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Gradcheck(offenders)) => {
            eprintln!("gradient check failed: {offenders}");
            ExitCode::from(3)
        }
    }
}

struct Inputs {
    config: FileConfig,
    records: Vec<TweetRecord>,
    table: EmbeddingTable,
}

/// Resolves the configuration and loads corpus and embeddings.
fn load_inputs(flags: &Flags) -> Result<Inputs, Failure> {
    let config = FileConfig::resolve(flags).map_err(usage)?;
    let corpus = config.input("corpus").map_err(usage)?;
    let embeddings = config.input("embeddings").map_err(usage)?;
    let table = load_embeddings(embeddings).map_err(runtime)?;
    let records = load_corpus(corpus).map_err(runtime)?.records;
    Ok(Inputs { config, records, table })
}

fn write_output(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_train(flags: &Flags, resume: bool) -> Outcome {
    let Inputs { config, records, table } = load_inputs(flags)?;
    let checkpoint_path = config.require("checkpoint").map_err(usage)?.to_path_buf();
    let train_config = config.train_config(table.dim()).map_err(usage)?;
    let samples = encode_all(&records, &table, train_config.arch.max_len).map_err(runtime)?;
    let split = designate_labeled(samples, train_config.labeled_ratio, train_config.designation_seed(0))
        .map_err(runtime)?;
    let trainer = if resume {
        let ck = load_checkpoint(&checkpoint_path).map_err(runtime)?;
        Trainer::resume(&split, train_config.clone(), ck).map_err(runtime)?
    } else {
        Trainer::new(&split, train_config.clone()).map_err(runtime)?
    };
    let log_path = config
        .out
        .clone()
        .unwrap_or_else(|| checkpoint_path.with_extension("log.jsonl"));
    let log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume)
        .truncate(!resume)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))
        .map_err(runtime)?;
    let mut log = BufWriter::new(log_file);
    eprintln!(
        "training on {} samples ({} labeled), {} parameters, config {}",
        split.len(),
        split.labeled_count(),
        train_config.arch.parameter_count(),
        fingerprint(&train_config)
    );
    let state = trainer
        .run(|entry, _| {
            let line = entry.to_json_line();
            eprintln!("{line}");
            writeln!(log, "{line}").map_err(|e| dtsl::Error::Invalid(format!("writing epoch log: {e}")))
        })
        .map_err(runtime)?;
    log.flush().map_err(runtime)?;
    save_checkpoint(&checkpoint_path, &state.to_checkpoint()).map_err(runtime)?;
    eprintln!("wrote {} and {}", checkpoint_path.display(), log_path.display());
    Ok(())
}

/// Rejects a checkpoint whose input shape disagrees with the embeddings or
/// with explicitly configured dimensions.
fn check_architecture(arch: &Architecture, table: &EmbeddingTable, config: &FileConfig) -> anyhow::Result<()> {
    if arch.embed_dim != table.dim() {
        bail!(
            "architecture mismatch: checkpoint expects embed_dim {} but the embeddings have dimension {}",
            arch.embed_dim,
            table.dim()
        );
    }
    if let Some(d) = config.embed_dim.filter(|&d| d != arch.embed_dim) {
        bail!("architecture mismatch: embed_dim {d} configured, checkpoint has {}", arch.embed_dim);
    }
    if let Some(l) = config.max_len.filter(|&l| l != arch.max_len) {
        bail!("architecture mismatch: max_len {l} configured, checkpoint has {}", arch.max_len);
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport {
    checkpoint: PathBuf,
    epoch: u64,
    scored: usize,
    confusion: ConfusionMatrix,
    metrics: PrfReport,
}

fn cmd_evaluate(flags: &Flags) -> Outcome {
    let Inputs { config, records, table } = load_inputs(flags)?;
    let checkpoint_path = config.input("checkpoint").map_err(usage)?;
    let ck = load_checkpoint(checkpoint_path).map_err(runtime)?;
    check_architecture(ck.arch(), &table, &config).map_err(runtime)?;
    let labeled: Vec<TweetRecord> = records.into_iter().filter(|r| r.label.is_some()).collect();
    if labeled.is_empty() {
        return Err(runtime(anyhow!("corpus has no labeled records to score")));
    }
    let samples = encode_all(&labeled, &table, ck.arch().max_len).map_err(runtime)?;
    let predictions = predict_samples(&ck.params, &samples, 64).map_err(runtime)?;
    let truth: Vec<usize> = samples.iter().filter_map(|s| s.label).collect();
    let cm = confusion(&truth, &predictions, ck.arch().classes).map_err(runtime)?;
    let report = EvaluationReport {
        checkpoint: checkpoint_path.to_path_buf(),
        epoch: ck.epoch,
        scored: samples.len(),
        metrics: macro_prf(&cm),
        confusion: cm,
    };
    let m = &report.metrics;
    println!(
        "{} records: MP {:.2}%  MR {:.2}%  MF {:.2}%",
        report.scored,
        100.0 * m.macro_precision,
        100.0 * m.macro_recall,
        100.0 * m.macro_f
    );
    for (c, cm) in m.per_class.iter().enumerate() {
        let name = Label::from_index(c).map_or("?", Label::as_str);
        println!(
            "  {name:<6} P {:.2}%  R {:.2}%  F {:.2}%  support {}",
            100.0 * cm.precision,
            100.0 * cm.recall,
            100.0 * cm.f_score,
            cm.support
        );
    }
    if let Some(out) = &config.out {
        let json = serde_json::to_string_pretty(&report).map_err(runtime)?;
        write_output(Some(out), &json).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_loeo(flags: &Flags) -> Outcome {
    let Inputs { config, records, table } = load_inputs(flags)?;
    let train_config = config.train_config(table.dim()).map_err(usage)?;
    let report = run_loeo_with(&records, &table, &train_config, |k, fold| {
        eprintln!(
            "fold {} ({}): {} test records, macro-F {:.4}",
            k + 1,
            fold.event,
            fold.test_size,
            fold.metrics.macro_f
        );
    })
    .map_err(runtime)?;
    let table_text = render_table(&report);
    print!("{table_text}");
    if let Some(out) = &config.out {
        write_output(Some(out), &report.to_json()).map_err(runtime)?;
        write_output(Some(&out.with_extension("txt")), &table_text).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_predict(flags: &Flags) -> Outcome {
    let Inputs { config, records, table } = load_inputs(flags)?;
    let checkpoint_path = config.input("checkpoint").map_err(usage)?;
    let ck = load_checkpoint(checkpoint_path).map_err(runtime)?;
    check_architecture(ck.arch(), &table, &config).map_err(runtime)?;
    let samples = encode_all(&records, &table, ck.arch().max_len).map_err(runtime)?;
    let predictions = predict_samples(&ck.params, &samples, 64).map_err(runtime)?;
    let mut text = String::new();
    for (record, &p) in records.iter().zip(&predictions) {
        let label = Label::from_index(p).map_or("?", Label::as_str);
        text.push_str(&format!("{}\t{label}\n", record.id));
    }
    write_output(config.out.as_deref(), &text).map_err(runtime)
}

fn cmd_gradcheck(flags: &Flags) -> Outcome {
    let config = FileConfig::resolve(flags).map_err(usage)?;
    let report = run_gradcheck(config.seed.unwrap_or(0)).map_err(runtime)?;
    print!("{}", report.render());
    if let Some(out) = &config.out {
        let json = serde_json::to_string_pretty(&report).map_err(runtime)?;
        write_output(Some(out), &json).map_err(runtime)?;
    }
    if !report.passed() {
        let names: Vec<String> = report
            .offenders()
            .iter()
            .map(|c| format!("{} ({:.3e})", c.name, c.max_relative_error))
            .collect();
        return Err(Failure::Gradcheck(names.join(", ")));
    }
    Ok(())
}
