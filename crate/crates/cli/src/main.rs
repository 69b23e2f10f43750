//! `hmer`: labels, synthetic data, InkML ingestion, training, evaluation,
//! prediction and gradient checks from the command line.
//!
//! Failures print one line `error[Kind]: message` to standard error. Domain
//! errors exit with status 1, usage errors with status 2.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hmer::checks::{gradient_checks, CheckKind};
use hmer::counting::count_vector;
use hmer::dataset::{
    load_manifest, overfit_set, parse_inkml, rasterize, read_pgm, synth_corpus, synth_vocab, write_manifest, Dataset,
    ExprSample, Image, IMAGE_HEIGHT,
};
use hmer::latex::{tokenize, TokenSeq, Vocab};
use hmer::metrics::evaluate;
use hmer::posforest::encode_position_labels;
use hmer::tensor::Checkpoint;
use hmer::trainer::{fit, load_checkpoint, FitOptions, LoadedModel, TrainConfig};

/// Vocabulary file written next to every manifest.
const VOCAB_FILE: &str = "vocab.txt";

#[derive(Parser)]
#[command(name = "hmer", version, about = "Handwritten math expression recognition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print `token<TAB>depth<TAB>relpos` for every token of an expression.
    Labels {
        #[arg(long)]
        expr: String,
        /// Also print `count<TAB>token<TAB>n` lines.
        #[arg(long)]
        counts: bool,
    },
    /// Render a synthetic corpus to a manifest directory.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        max_depth: usize,
        /// Write the bundled 64-sample overfit set instead.
        #[arg(long)]
        overfit: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize InkML files (a file or every `*.inkml` in a directory).
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = IMAGE_HEIGHT)]
        height: usize,
    },
    /// Train a model; checkpoints and `train.jsonl` go to `--out`.
    Train {
        /// `key = value` configuration; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint, or a predictions file, against a manifest.
    Eval {
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// `sample_id<TAB>tokens` lines as written by `predict`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Write per-sample distances here.
        #[arg(long)]
        tsv: Option<PathBuf>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Transcribe images: `sample_id<TAB>space-joined tokens` per line.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required_unless_present = "images", conflicts_with = "images")]
        manifest: Option<PathBuf>,
        /// PGM files.
        #[arg(long, num_args = 1..)]
        images: Vec<PathBuf>,
        /// Append predicted (and, with a manifest, true) symbol counts.
        #[arg(long)]
        counts: bool,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Finite-difference gradient checks of every operation and module.
    Gradcheck {
        /// Selects the model variant checked end to end.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Domain(hmer::Error),
    Other { kind: &'static str, message: String },
}

impl From<hmer::Error> for Failure {
    fn from(e: hmer::Error) -> Self {
        Failure::Domain(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Domain(hmer::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// The vocabulary stored beside a manifest, or one built from its tokens.
fn manifest_vocab(data: &Dataset) -> hmer::Result<Vocab> {
    let file = data.root.join(VOCAB_FILE);
    if file.exists() {
        Vocab::load(&file)
    } else {
        data.vocab()
    }
}

fn sample_id(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_owned())
}

fn labels(expr: &str, counts: bool, out: &mut impl Write) -> Outcome {
    let seq = tokenize(expr)?;
    let labels = encode_position_labels(&seq)?;
    let mut text = String::new();
    for ((t, d), r) in seq.iter().zip(&labels.depths).zip(&labels.relpos) {
        let _ = writeln!(text, "{}\t{d}\t{}", t.as_str(), r.as_str());
    }
    if counts {
        let vocab = Vocab::build([&seq])?;
        for (tok, n) in count_vector(&seq, &vocab)?.nonzero(&vocab) {
            let _ = writeln!(text, "count\t{tok}\t{n}");
        }
    }
    let _ = out.write_all(text.as_bytes());
    Ok(())
}

fn synth(seed: u64, n: usize, max_depth: usize, overfit: bool, out: &Path) -> Outcome {
    let vocab = synth_vocab();
    let samples = if overfit {
        overfit_set()?
    } else {
        synth_corpus(seed, n, max_depth)
            .into_iter()
            .map(|t| ExprSample::synthetic(t, &vocab))
            .collect::<hmer::Result<Vec<_>>>()?
    };
    let path = write_manifest(&samples, &vocab, out)?;
    vocab.save(&out.join(VOCAB_FILE))?;
    println!("wrote {} samples to {}", samples.len(), path.display());
    Ok(())
}

fn ingest(input: &Path, out: &Path, height: usize) -> Outcome {
    let files: Vec<PathBuf> = if input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| io_err(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "inkml"))
            .collect();
        v.sort();
        v
    } else {
        vec![input.to_path_buf()]
    };
    let mut parsed = Vec::new();
    for f in &files {
        let text = fs::read_to_string(f).map_err(|e| io_err(f, e))?;
        let ink = parse_inkml(&text).map_err(|e| match e {
            hmer::Error::MalformedXml(m) => hmer::Error::MalformedXml(format!("{}: {m}", f.display())),
            e => e,
        })?;
        let tokens = ink.tokens()?;
        parsed.push((rasterize(&ink.traces, height)?, tokens, ink.traces.len(), f));
    }
    let vocab = Vocab::build(parsed.iter().map(|p| &p.1))?;
    let mut samples = Vec::new();
    for (image, tokens, traces, f) in parsed {
        println!("{}\t{traces} traces\t{}", f.display(), tokens.to_spaced());
        samples.push(ExprSample::new(image, tokens, &vocab)?);
    }
    write_manifest(&samples, &vocab, out)?;
    vocab.save(&out.join(VOCAB_FILE))?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> hmer::Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn train(
    config: Option<&Path>,
    train: &Path,
    val: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    resume: Option<&Path>,
) -> Outcome {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let train_set = load_manifest(train)?;
    let vocab = manifest_vocab(&train_set)?;
    let train_samples = train_set.samples(&vocab)?;
    let val_samples = match val {
        Some(v) => load_manifest(v)?.samples(&vocab)?,
        None => Vec::new(),
    };
    let ck = resume.map(Checkpoint::<f32>::load).transpose()?;
    let mut stdout = std::io::stdout();
    let opts = FitOptions {
        out_dir: Some(out),
        resume: ck.as_ref(),
        stop_at: None,
        echo: Some(&mut stdout),
    };
    let r = fit(&cfg, &vocab, &train_samples, &val_samples, opts)?;
    println!(
        "finished after {} steps (config {}){}",
        r.steps,
        cfg.hash(),
        if r.early_stopped { ", target train ExpRate reached" } else { "" }
    );
    Ok(())
}

fn load_model(path: &Path) -> hmer::Result<LoadedModel> {
    load_checkpoint(&Checkpoint::load(path)?)
}

fn token_text(vocab: &Vocab, ids: &[usize]) -> Vec<String> {
    ids.iter()
        .map(|&i| vocab.lookup(i).unwrap_or("<unk>").to_owned())
        .collect()
}

fn eval(
    checkpoint: Option<&Path>,
    predictions: Option<&Path>,
    manifest: &Path,
    tsv: Option<&Path>,
    max_len: Option<usize>,
) -> Outcome {
    let data = load_manifest(manifest)?;
    let ids: Vec<String> = data.records.iter().map(|r| sample_id(&r.image_path)).collect();
    let truths: Vec<Vec<String>> = data
        .records
        .iter()
        .map(|r| r.tokens.iter().map(|t| t.as_str().to_owned()).collect())
        .collect();
    let preds: Vec<Vec<String>> = match (checkpoint, predictions) {
        (Some(ck), _) => {
            let m = load_model(ck)?;
            let len = max_len.unwrap_or(m.config.max_decode_len);
            let mut out = Vec::new();
            for i in 0..data.len() {
                let p = m.model.predict(&m.store, &data.image(i)?, len)?;
                out.push(token_text(&m.vocab, &p.decoded.ids));
            }
            out
        }
        (None, Some(p)) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            let mut by_id = BTreeMap::new();
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let (id, toks) = line.split_once('\t').unwrap_or((line, ""));
                if by_id.insert(id.to_owned(), toks.split_whitespace().map(str::to_owned).collect::<Vec<_>>()).is_some() {
                    return Err(hmer::Error::CorruptRecord {
                        line: n + 1,
                        reason: format!("duplicate sample id `{id}`"),
                    }
                    .into());
                }
            }
            if by_id.len() != ids.len() {
                return Err(hmer::Error::PairCountMismatch(by_id.len(), ids.len()).into());
            }
            ids.iter()
                .map(|id| {
                    by_id.remove(id).ok_or_else(|| hmer::Error::CorruptRecord {
                        line: 0,
                        reason: format!("no prediction for sample `{id}`"),
                    })
                })
                .collect::<hmer::Result<_>>()?
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let report = evaluate(&preds, &truths)?;
    print!("{}", report.table());
    if let Some(path) = tsv {
        write_file(path, &report.per_sample_tsv(&ids)?)?;
    }
    Ok(())
}

fn count_text(pairs: impl Iterator<Item = (String, f64)>) -> String {
    pairs.map(|(t, c)| format!("{t}:{c:.2}")).collect::<Vec<_>>().join(",")
}

fn predict(checkpoint: &Path, manifest: Option<&Path>, images: &[PathBuf], counts: bool, max_len: Option<usize>) -> Outcome {
    let m = load_model(checkpoint)?;
    let len = max_len.unwrap_or(m.config.max_decode_len);
    let mut items: Vec<(String, Image, Option<TokenSeq>)> = Vec::new();
    match manifest {
        Some(path) => {
            let data = load_manifest(path)?;
            for (i, r) in data.records.iter().enumerate() {
                items.push((sample_id(&r.image_path), data.image(i)?, Some(r.tokens.clone())));
            }
        }
        None => {
            for p in images {
                items.push((sample_id(&p.to_string_lossy()), read_pgm(p)?, None));
            }
        }
    }
    let mut out = String::new();
    for (id, image, truth) in items {
        let p = m.model.predict(&m.store, &image, len)?;
        let _ = write!(out, "{id}\t{}", token_text(&m.vocab, &p.decoded.ids).join(" "));
        if counts {
            let pred = p.counts.map(|c| {
                count_text(
                    m.vocab
                        .classes()
                        .iter()
                        .zip(c.counts)
                        .filter(|(_, v)| *v >= 0.05)
                        .map(|(k, v)| (k.clone(), v)),
                )
            });
            let _ = write!(out, "\tpred_counts={}", pred.unwrap_or_else(|| "off".into()));
            if let Some(t) = truth {
                let mut tally = BTreeMap::new();
                for tok in t.iter() {
                    *tally.entry(tok.as_str().to_owned()).or_insert(0.0) += 1.0;
                }
                let _ = write!(out, "\ttrue_counts={}", count_text(tally.into_iter()));
            }
        }
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}

fn gradcheck(config: Option<&Path>, seed: u64) -> Outcome {
    let cfg = load_config(config)?;
    let results = gradient_checks(cfg.model.tasks, seed)?;
    let mut failed = 0;
    for r in &results {
        let kind = match r.kind {
            CheckKind::Primitive => "primitive",
            CheckKind::Composite => "module",
        };
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!r.passed());
        println!("{kind}\t{}\t{:.3e}\t{:.0e}\t{verdict}", r.name, r.max_rel_error, r.tolerance());
    }
    if failed > 0 {
        return Err(Failure::Other {
            kind: "GradCheckFailed",
            message: format!("{failed} of {} checks exceeded their tolerance", results.len()),
        });
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Labels { expr, counts } => labels(&expr, counts, &mut std::io::stdout()),
        Command::Synth {
            seed,
            n,
            max_depth,
            overfit,
            out,
        } => synth(seed, n, max_depth, overfit, &out),
        Command::Ingest { input, out, height } => ingest(&input, &out, height),
        Command::Train {
            config,
            train: t,
            val,
            out,
            seed,
            resume,
        } => train(config.as_deref(), &t, val.as_deref(), &out, seed, resume.as_deref()),
        Command::Eval {
            checkpoint,
            predictions,
            manifest,
            tsv,
            max_len,
        } => eval(checkpoint.as_deref(), predictions.as_deref(), &manifest, tsv.as_deref(), max_len),
        Command::Predict {
            checkpoint,
            manifest,
            images,
            counts,
            max_len,
        } => predict(&checkpoint, manifest.as_deref(), &images, counts, max_len),
        Command::Gradcheck { config, seed } => gradcheck(config.as_deref(), seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[UsageError]: {first}");
            for line in rendered.lines().skip(1).filter(|l| !l.trim().is_empty()) {
                eprintln!("{line}");
            }
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(e)) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(1)
        }
        Err(Failure::Other { kind, message }) => {
            eprintln!("error[{kind}]: {message}");
            ExitCode::from(1)
        }
    }
}

