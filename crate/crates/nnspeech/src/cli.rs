//! Command-line surface.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 when a
//! run fails (I/O, divergence, corrupt files).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nnspeech_core::datamodel::{MelSpectrogram, Persist, PhonemeSequence};
use nnspeech_core::mcd::mcd;
use nnspeech_core::SynthesisOptions;

use crate::checkpoint::Checkpoint;
use crate::corpus::{generate_corpus, Corpus, CorpusSpec};
use crate::error::{io, Error, Result};
use crate::experiments::{
    evaluate_unseen_mcd, run_ablation, sweep_adaption, sweep_gamma, train, write_scores_csv, AblationMode,
    ExperimentConfig, SweepDirs, SweepResult, SweepRow, TrainOptions,
};

#[derive(Debug, Parser)]
#[command(name = "nnspeech", version, about = "Zero-shot multi-speaker text-to-mel experiments on a synthetic corpus")]
pub struct Cli {
    /// Overrides the training seed (and the corpus seed for `corpus generate`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment config (TOML with [model], [train], [mcd] and [eval] tables).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic corpus tools.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Synthesise a mel-spectrogram from phonemes and reference mels.
    Synthesize(SynthesizeArgs),
    /// Objective evaluation.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Parameter sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Train and score the architecture ablations.
    Ablate(AblateArgs),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Write a seeded synthetic corpus into --out.
    Generate {
        /// Corpus spec (TOML); defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory made by `corpus generate`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Print a progress line every this many steps (0 = silent).
    #[arg(long, default_value_t = 500)]
    pub report_every: u64,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Text file of phoneme ids or symbols separated by whitespace.
    #[arg(long)]
    pub phonemes: PathBuf,
    /// Symbol table (`id<TAB>symbol` lines) for symbolic phonemes.
    #[arg(long)]
    pub symbols: Option<PathBuf>,
    /// Reference mel files; their encodings are averaged.
    #[arg(long = "ref", required = true)]
    pub refs: Vec<PathBuf>,
    /// Sample the latent with the seed instead of using the posterior mean.
    #[arg(long)]
    pub sample: bool,
    /// Also average the predicted speaker embedding over references.
    #[arg(long)]
    pub avg_shat: bool,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// MCD of one pair of mels, or of a checkpoint on a corpus's unseen speakers.
    Mcd(McdArgs),
}

#[derive(Debug, Args)]
pub struct McdArgs {
    /// Ground-truth mel file.
    #[arg(long = "ref", requires = "syn", conflicts_with_all = ["checkpoint", "corpus"])]
    pub reference: Option<PathBuf>,
    /// Synthesised mel file to score against --ref.
    #[arg(long)]
    pub syn: Option<PathBuf>,
    /// Score this checkpoint on the unseen speakers of --corpus.
    #[arg(long, requires = "corpus")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub corpus: Option<PathBuf>,
    /// References per synthesis (defaults to the config's eval.k).
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum SweepCommand {
    /// One model per γ value.
    Gamma {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated γ values (defaults to the config's grid).
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        /// Progress line interval in steps (0 = silent).
        #[arg(long, default_value_t = 500)]
        report_every: u64,
    },
    /// MCD against the number of averaged references.
    Adaption {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated reference counts (defaults to the config's list).
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
    },
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated modes among full, content_add, no_spk_pred.
    #[arg(long, value_delimiter = ',', default_value = "full,content_add,no_spk_pred")]
    pub modes: Vec<String>,
    #[arg(long, default_value_t = 500)]
    pub report_every: u64,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    let out = cli.out.as_deref().ok_or_else(|| Error::Config("--out is required for this command".into()))?;
    fs::create_dir_all(out).map_err(io(out))?;
    Ok(out)
}

fn experiment_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn read_mel(path: &Path) -> Result<MelSpectrogram> {
    let bytes = fs::read(path).map_err(io(path))?;
    MelSpectrogram::from_bytes(&bytes).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })
}

/// Whitespace-separated ids, or symbols looked up in `symbols`.
pub fn parse_phonemes(text: &str, symbols: Option<&str>) -> std::result::Result<Vec<usize>, String> {
    let table: Vec<(usize, &str)> = symbols
        .map(|s| {
            s.lines()
                .filter_map(|l| l.split_once('\t'))
                .filter_map(|(id, sym)| id.trim().parse().ok().map(|id| (id, sym.trim())))
                .collect()
        })
        .unwrap_or_default();
    text.split_whitespace()
        .map(|tok| match tok.parse::<usize>() {
            Ok(id) => Ok(id),
            Err(_) => table
                .iter()
                .find(|(_, s)| *s == tok)
                .map(|(id, _)| *id)
                .ok_or_else(|| format!("unknown phoneme {tok:?}")),
        })
        .collect()
}

fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Corpus(CorpusCommand::Generate { spec }) => {
            let mut s = match spec {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(io(p))?;
                    toml::from_str::<CorpusSpec>(&text)
                        .map_err(|e| Error::Parse { path: p.clone(), message: e.to_string() })?
                }
                None => CorpusSpec::default(),
            };
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            s.validate()?;
            let out = out_dir(cli)?;
            let manifest = generate_corpus(&s, out)?;
            println!("wrote {} utterances to {}", manifest.entries.len(), out.display());
        }
        Command::Train(args) => {
            let cfg = experiment_config(cli)?;
            let out = out_dir(cli)?;
            let corpus = Corpus::open(&args.corpus)?;
            let outcome = train(&cfg, &corpus, &TrainOptions { out_dir: Some(out), report_every: args.report_every })?;
            println!(
                "trained {} steps in {:.1}s; checkpoint {}",
                outcome.checkpoint.step,
                outcome.seconds,
                out.join("model.ckpt").display()
            );
        }
        Command::Synthesize(args) => {
            let out = out_dir(cli)?;
            let ckpt = Checkpoint::load(&args.checkpoint)?;
            let model = ckpt.model()?;
            let text = fs::read_to_string(&args.phonemes).map_err(io(&args.phonemes))?;
            let symbols = match &args.symbols {
                Some(p) => Some(fs::read_to_string(p).map_err(io(p))?),
                None => None,
            };
            let ids = parse_phonemes(&text, symbols.as_deref())
                .map_err(|message| Error::Parse { path: args.phonemes.clone(), message })?;
            let refs = args.refs.iter().map(|p| read_mel(p)).collect::<Result<Vec<_>>>()?;
            let opts = SynthesisOptions {
                sample_seed: if args.sample { Some(cli.seed.unwrap_or(0)) } else { None },
                average_predicted_speaker: args.avg_shat,
            };
            let syn = model.synthesize(&PhonemeSequence::new(ids), &refs, &opts)?;
            let path = out.join("synth.bin");
            fs::write(&path, syn.mel.to_bytes()).map_err(io(&path))?;
            println!("wrote {} frames to {}", syn.mel.n_frames(), path.display());
        }
        Command::Eval(EvalCommand::Mcd(args)) => {
            let cfg = experiment_config(cli)?;
            let out = out_dir(cli)?;
            match (&args.reference, &args.syn, &args.checkpoint, &args.corpus) {
                (Some(r), Some(s), None, None) => {
                    let value = mcd(&read_mel(r)?, &read_mel(s)?, &cfg.mcd)?;
                    let mut w = csv::Writer::from_path(out.join("mcd.csv"))?;
                    w.write_record(["reference", "synthesized", "mcd_db"])?;
                    w.write_record([r.display().to_string(), s.display().to_string(), format!("{value}")])?;
                    w.flush().map_err(io(out))?;
                    println!("{value:.4}");
                }
                (None, None, Some(c), Some(d)) => {
                    let model = Checkpoint::load(c)?.model()?;
                    let corpus = Corpus::open(d)?;
                    let k = args.k.unwrap_or(cfg.eval.k);
                    let opts = SynthesisOptions {
                        sample_seed: None,
                        average_predicted_speaker: cfg.eval.average_predicted_speaker,
                    };
                    let scores = evaluate_unseen_mcd(&model, &corpus, k, k, &cfg.mcd, &opts)?;
                    write_scores_csv(&out.join("scores_mcd.csv"), &scores)?;
                    let row = SweepRow::from_scores("eval", &k.to_string(), &scores);
                    println!("k={k} mean {:.4} dB (std {:.4}, n {})", row.mean_mcd_db, row.std_mcd_db, row.n);
                    SweepResult { rows: vec![row] }.write_csv(&out.join("eval_mcd.csv"))?;
                }
                _ => return Err(Error::Config("give either --ref and --syn, or --checkpoint and --corpus".into())),
            }
        }
        Command::Sweep(SweepCommand::Gamma { corpus, grid, report_every }) => {
            let cfg = experiment_config(cli)?;
            let out = out_dir(cli)?;
            let corpus = Corpus::open(corpus)?;
            let grid = grid.clone().unwrap_or_else(|| cfg.eval.gamma_grid.clone());
            let dirs = SweepDirs { runs: out.join("runs"), out: out.to_path_buf() };
            print!("{}", sweep_gamma(&grid, &cfg, &corpus, &dirs, *report_every)?.to_csv()?);
        }
        Command::Sweep(SweepCommand::Adaption { checkpoint, corpus, k }) => {
            let cfg = experiment_config(cli)?;
            let out = out_dir(cli)?;
            let corpus = Corpus::open(corpus)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            let ks = k.clone().unwrap_or_else(|| cfg.eval.adaption_k.clone());
            print!("{}", sweep_adaption(&ks, &ckpt, &corpus, &cfg, out)?.to_csv()?);
        }
        Command::Ablate(args) => {
            let cfg = experiment_config(cli)?;
            let modes = args
                .modes
                .iter()
                .map(|m| AblationMode::parse(m).ok_or_else(|| Error::Config(format!("unknown ablation mode {m:?}"))))
                .collect::<Result<Vec<_>>>()?;
            let out = out_dir(cli)?;
            let corpus = Corpus::open(&args.corpus)?;
            let dirs = SweepDirs { runs: out.join("runs"), out: out.to_path_buf() };
            print!("{}", run_ablation(&modes, &cfg, &corpus, &dirs, args.report_every)?.to_csv()?);
        }
    }
    Ok(())
}
