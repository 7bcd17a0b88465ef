//! Batch command-line front end: corpus conversion, training, generation,
//! evaluation and corpus statistics.

mod config;

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tabletext::baselines::{RandomCopyGenerator, TemplateStore};
use tabletext::eval::{evaluate, export_attention, mean_sentence_bleu, DecodeConfig, Generation, Generator, NeuralGenerator};
use tabletext::io::write_atomic;
use tabletext::table::{corpus_stats, load_jsonl, parse_triple_line};
use tabletext::train::{load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig};
use tabletext::{Error, Instance, Result, Vocabulary};

#[derive(Parser)]
#[command(name = "tabletext", version, about = "Table-to-text generation with attention and copying")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a raw corpus into the JSON-lines format.
    Convert {
        #[arg(long, value_enum, default_value_t = Format::TriplesTsv)]
        format: Format,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train a model and write a checkpoint plus a JSON-lines epoch log.
    Train(TrainArgs),
    /// Decode sentences for every row of a JSON-lines file.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Output file, one sentence per line; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeArgs,
        /// Directory receiving one attention CSV per instance.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
    },
    /// Score a model or baseline on a test set and emit a JSON report.
    Evaluate(EvaluateArgs),
    /// Corpus statistics as JSON.
    Stats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// `subject<TAB>predicate<TAB>object<TAB>question` per line.
    TriplesTsv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Template,
    RandomCopy,
    TcNlm,
}

#[derive(Args)]
struct DecodeArgs {
    /// Beam size; 1 decodes greedily.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
}

impl DecodeArgs {
    fn resolve(&self, checkpoint: &Checkpoint) -> Result<DecodeConfig> {
        let base = checkpoint.train.as_ref().map(TrainConfig::decode).unwrap_or_default();
        let decode = DecodeConfig {
            beam: self.beam.unwrap_or(base.beam),
            max_len: self.max_len.unwrap_or(base.max_len),
        };
        if decode.beam == 0 || decode.max_len == 0 {
            return Err(Error::Validation("beam and max-len must be at least 1".into()));
        }
        Ok(decode)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    output: PathBuf,
    /// Epoch log; defaults to the checkpoint path with `.log.jsonl` appended.
    #[arg(long)]
    log: Option<PathBuf>,
    /// `key=value` settings; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    vocab_limit: Option<usize>,
    #[arg(long)]
    word_dim: Option<usize>,
    #[arg(long)]
    attr_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    no_copy: bool,
    #[arg(long)]
    no_global: bool,
    #[arg(long)]
    no_local: bool,
    #[arg(long)]
    no_caption: bool,
    /// Make attributes attendable and copyable.
    #[arg(long)]
    plusplus: bool,
    /// Train the table-conditioned language model (no attention, no copying).
    #[arg(long, conflicts_with_all = ["plusplus"])]
    tc_nlm: bool,
    #[arg(long)]
    quiet: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => config::load(path)?,
            None => TrainConfig::default(),
        };
        let set = |slot: &mut usize, v: Option<usize>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut config.max_epochs, self.epochs);
        set(&mut config.batch_size, self.batch_size);
        set(&mut config.vocab_limit, self.vocab_limit);
        set(&mut config.model.word_dim, self.word_dim);
        set(&mut config.model.attr_dim, self.attr_dim);
        set(&mut config.model.hidden_dim, self.hidden_dim);
        set(&mut config.patience, self.patience);
        set(&mut config.beam, self.beam);
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        let flags = &mut config.model.flags;
        flags.copy &= !self.no_copy;
        flags.global &= !self.no_global;
        flags.local &= !self.no_local;
        flags.caption &= !self.no_caption;
        flags.plusplus |= self.plusplus;
        if self.tc_nlm {
            flags.copy = false;
            flags.attention = false;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    test: PathBuf,
    /// Trained model; required except for the template baseline.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Training corpus; required for the template baseline.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Generated sentences, one per test row.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
    /// Seed for the random-copy baseline.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add the mean smoothed sentence BLEU to the report.
    #[arg(long)]
    sentence_bleu: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Convert { format, input, output } => cmd_convert(format, &input, &output),
        Command::Train(args) => cmd_train(&args),
        Command::Generate {
            checkpoint,
            input,
            output,
            decode,
            dump_attention,
        } => cmd_generate(&checkpoint, &input, output.as_deref(), &decode, dump_attention.as_deref()),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Stats { input, output } => {
            require_files(&[&input])?;
            let stats = corpus_stats(&load_jsonl(&input)?)?;
            emit(output.as_deref(), &(serde_json::to_string_pretty(&stats)? + "\n"))
        }
    }
}

fn require_files(paths: &[&Path]) -> Result<()> {
    match paths.iter().find(|p| !p.is_file()) {
        Some(p) => Err(Error::Validation(format!("{} does not exist or is not a file", p.display()))),
        None => Ok(()),
    }
}

/// Write to `path` atomically, or to stdout.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn cmd_convert(format: Format, input: &Path, output: &Path) -> Result<()> {
    require_files(&[input])?;
    let file = fs::File::open(input).map_err(|e| Error::io(input, e))?;
    let mut out = String::new();
    match format {
        Format::TriplesTsv => {
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(input, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record = parse_triple_line(&line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                out.push_str(&serde_json::to_string(&record)?);
                out.push('\n');
            }
        }
    }
    write_atomic(output, out.as_bytes())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut inputs = vec![args.train.as_path()];
    inputs.extend(args.dev.as_deref());
    inputs.extend(args.config.as_deref());
    require_files(&inputs)?;
    let config = args.resolve()?;

    let train_set = load_jsonl(&args.train)?;
    let dev = match &args.dev {
        Some(p) => load_jsonl(p)?,
        None => Vec::new(),
    };
    let quiet = args.quiet;
    let outcome = train(&train_set, &dev, &config, |r| {
        if !quiet {
            match r.dev_bleu {
                Some(b) => eprintln!("epoch {:>3}  loss {:.6}  dev bleu {:.4}  scale {}", r.epoch, r.train_loss, b, r.scale),
                None => eprintln!("epoch {:>3}  loss {:.6}  scale {}", r.epoch, r.train_loss, r.scale),
            }
        }
        true
    })?;

    let mut log = String::new();
    for record in &outcome.history {
        log.push_str(&serde_json::to_string(record)?);
        log.push('\n');
    }
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.output.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    save_checkpoint(&args.output, &outcome.model, Some(&config))?;
    write_atomic(&log_path, log.as_bytes())?;
    let summary = serde_json::json!({
        "epochs": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "final_loss": outcome.history.last().map(|r| r.train_loss),
        "checkpoint": args.output,
        "log": log_path,
    });
    println!("{summary}");
    Ok(())
}

fn sentences(generations: &[Generation]) -> String {
    generations.iter().map(|g| g.tokens.join(" ") + "\n").collect()
}

fn cmd_generate(
    checkpoint: &Path,
    input: &Path,
    output: Option<&Path>,
    decode: &DecodeArgs,
    dump_attention: Option<&Path>,
) -> Result<()> {
    require_files(&[checkpoint, input])?;
    let ckpt = load_checkpoint(checkpoint)?;
    let generator = NeuralGenerator::new(&ckpt.model, decode.resolve(&ckpt)?);
    let instances = load_jsonl(input)?;
    let generations = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| generator.generate(i, inst))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = dump_attention {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, g) in generations.iter().enumerate() {
            if let Some(record) = &g.attention {
                export_attention(record, dir.join(format!("attention_{i:05}.csv")))?;
            }
        }
    }
    emit(output, &sentences(&generations))
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    // every path the chosen system needs is checked before loading anything
    let needs_checkpoint = args.baseline != Some(Baseline::Template);
    let mut inputs = vec![args.test.as_path()];
    match (&args.checkpoint, &args.train) {
        (None, _) if needs_checkpoint => {
            return Err(Error::Validation("--checkpoint is required for this system".into()));
        }
        (_, None) if !needs_checkpoint => {
            return Err(Error::Validation("the template baseline needs --train".into()));
        }
        (Some(c), _) if needs_checkpoint => inputs.push(c),
        (_, Some(t)) => inputs.push(t),
        _ => {}
    }
    require_files(&inputs)?;

    let test = load_jsonl(&args.test)?;
    let (mut report, generations) = if needs_checkpoint {
        let path = args.checkpoint.as_deref().unwrap_or(Path::new(""));
        let ckpt = load_checkpoint(path)?;
        let flags = ckpt.model.flags();
        let neural = NeuralGenerator::new(&ckpt.model, args.decode.resolve(&ckpt)?);
        match args.baseline {
            Some(Baseline::TcNlm) if !flags.is_tc_nlm() => {
                return Err(Error::Validation(
                    "the tc-nlm baseline needs a checkpoint trained with --tc-nlm".into(),
                ));
            }
            Some(Baseline::RandomCopy) => {
                let generator = RandomCopyGenerator {
                    inner: neural,
                    seed: args.seed,
                };
                evaluate(&generator, &test, &ckpt.model.attributes)?
            }
            _ => evaluate(&neural, &test, &ckpt.model.attributes)?,
        }
    } else {
        let train_set: Vec<Instance> = load_jsonl(args.train.as_deref().unwrap_or(Path::new("")))?;
        let store = TemplateStore::induce(&train_set);
        evaluate(&store, &test, &Vocabulary::attributes(&train_set))?
    };
    if args.sentence_bleu {
        report.sentence_bleu_mean = Some(mean_sentence_bleu(&test, &generations));
    }
    if let Some(p) = &args.predictions {
        write_atomic(p, sentences(&generations).as_bytes())?;
    }
    emit(args.output.as_deref(), &(serde_json::to_string_pretty(&report)? + "\n"))
}
