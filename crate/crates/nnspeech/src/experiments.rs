//! Training runs, unseen-speaker evaluation, sweeps and ablations.

use std::collections::hash_map::DefaultHasher;
use std::fs::{self, File};
use std::hash::{Hash, Hasher};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nnspeech_core::datamodel::{ManifestEntry, MelSpectrogram, PhonemeSequence, Split};
use nnspeech_core::mcd::{mcd, McdConfig};
use nnspeech_core::{
    Model, ModelConfig, ProsodyStats, StepRecord, SynthesisOptions, TrainConfig, Trainer, TrainingExample,
};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::Corpus;
use crate::error::{io, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Reference counts for the adaption sweep.
    pub adaption_k: Vec<usize>,
    pub gamma_grid: Vec<f64>,
    /// References per synthesis in single evaluations.
    pub k: usize,
    pub average_predicted_speaker: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            adaption_k: vec![1, 2, 3, 4],
            gamma_grid: vec![0.05, 0.005, 0.0005],
            k: 1,
            average_predicted_speaker: false,
        }
    }
}

/// Everything an experiment needs apart from the corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mcd: McdConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io(path))?;
        toml::from_str(&text).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    ContentAdd,
    NoSpkPred,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::Full, AblationMode::ContentAdd, AblationMode::NoSpkPred];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::ContentAdd => "content_add",
            AblationMode::NoSpkPred => "no_spk_pred",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn apply(self, model: &mut ModelConfig) {
        model.flags.standard_cvae_content_add = self == AblationMode::ContentAdd;
        model.flags.disable_speaker_predictor = self == AblationMode::NoSpkPred;
    }
}

/// Training examples of a corpus together with the model config fitted to it.
pub struct TrainingSet {
    pub model_config: ModelConfig,
    pub examples: Vec<TrainingExample>,
    /// Corpus speaker id of each speaker-table row.
    pub speakers: Vec<u32>,
}

/// Fits prosody statistics and the speaker table to the train split and
/// builds the examples. Widths and flags come from `base`.
pub fn training_set(corpus: &Corpus, base: &ModelConfig) -> Result<TrainingSet> {
    let entries: Vec<&ManifestEntry> = corpus.manifest.split(Split::Train).collect();
    if entries.is_empty() {
        return Err(Error::Config("corpus has no training utterances".into()));
    }
    let speakers = corpus.manifest.speakers(Split::Train);
    let mut raw = Vec::with_capacity(entries.len());
    for e in &entries {
        raw.push((corpus.mel(e)?, corpus.prosody(e)?));
    }
    let mut model_config = base.clone();
    model_config.n_mels = corpus.spec.audio.n_mels;
    model_config.vocab_size = corpus.spec.phoneme_vocab_size;
    model_config.n_speakers = speakers.len();
    model_config.prosody = ProsodyStats::fit(raw.iter().map(|(_, p)| p));
    // Only the config is needed to normalise; parameters are not read.
    let shell = Model::new(model_config.clone(), 0)?;
    let mut examples = Vec::with_capacity(entries.len());
    for (e, (mel, prosody)) in entries.iter().zip(&raw) {
        let row = speakers.binary_search(&e.speaker_id).expect("speaker taken from the same split");
        examples.push(shell.example(mel, &PhonemeSequence::new(e.phonemes.clone()), prosody, row)?);
    }
    Ok(TrainingSet { model_config, examples, speakers })
}

/// Progress hooks for [`train`].
pub struct TrainOptions<'a> {
    /// Receives the JSONL training log, checkpoints and the final model.
    pub out_dir: Option<&'a Path>,
    /// Print a line every this many steps (0 = silent).
    pub report_every: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub seconds: f64,
}

pub fn write_jsonl(path: &Path, records: &[StepRecord]) -> Result<()> {
    let file = File::create(path).map_err(io(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w).map_err(io(path))?;
    }
    w.flush().map_err(io(path))
}

/// Trains from scratch on the corpus train split. The model seed is the
/// training seed.
pub fn train(config: &ExperimentConfig, corpus: &Corpus, opts: &TrainOptions<'_>) -> Result<TrainOutcome> {
    let set = training_set(corpus, &config.model)?;
    let model = Model::new(set.model_config.clone(), config.train.seed)?;
    let mut trainer = Trainer::new(model, config.train.clone())?;
    if let Some(dir) = opts.out_dir {
        fs::create_dir_all(dir.join("checkpoints")).map_err(io(dir))?;
        fs::write(dir.join("config.toml"), config.to_toml()?).map_err(io(dir.join("config.toml")))?;
    }
    let log_path = opts.out_dir.map(|d| d.join("train_log.jsonl"));
    let mut log = match &log_path {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(io(p))?)),
        None => None,
    };
    let start = Instant::now();
    let every = config.train.checkpoint_every;
    // IO failures inside the step callback stop training; the original
    // error is kept here and returned instead of the stop signal.
    let mut failure: Option<Error> = None;
    let mut after_step = |t: &Trainer, rec: &StepRecord| -> Result<()> {
        if let (Some(w), Some(p)) = (log.as_mut(), &log_path) {
            serde_json::to_writer(&mut *w, rec)?;
            writeln!(w).map_err(io(p))?;
        }
        if let Some(dir) = opts.out_dir {
            if every > 0 && rec.step % every == 0 {
                let path = dir.join("checkpoints").join(format!("step_{:06}.ckpt", rec.step));
                Checkpoint::from_trainer(t, &set.speakers).save(&path)?;
            }
        }
        if opts.report_every > 0 && rec.step % opts.report_every == 0 {
            eprintln!(
                "step {:>6} stage {} total {:.4} mel {:.4} kl {:.4} spk {:.4} ({:.0}s)",
                rec.step,
                rec.stage,
                rec.loss.total,
                rec.loss.mel,
                rec.loss.kl,
                rec.loss.spk,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    };
    let result = trainer.run(&set.examples, |t, rec| {
        after_step(t, rec).map_err(|e| {
            let reason = e.to_string();
            failure = Some(e);
            nnspeech_core::Error::Invalid { entity: "training output", reason }
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    if let (Some(w), Some(p)) = (log.as_mut(), &log_path) {
        w.flush().map_err(io(p))?;
    }
    if let Err(e) = result {
        if let nnspeech_core::Error::Diverged { step, what } = &e {
            eprintln!("training diverged at step {step}: {what}");
        }
        return Err(e.into());
    }
    let checkpoint = Checkpoint::from_trainer(&trainer, &set.speakers);
    if let Some(dir) = opts.out_dir {
        checkpoint.save(&dir.join("model.ckpt"))?;
    }
    Ok(TrainOutcome { checkpoint, seconds: start.elapsed().as_secs_f64() })
}

/// Stable label for a training configuration, used to reuse finished runs.
pub fn run_fingerprint(config: &ExperimentConfig) -> Result<String> {
    let mut h = DefaultHasher::new();
    toml::to_string(&config.model).map_err(|e| Error::Config(e.to_string()))?.hash(&mut h);
    toml::to_string(&config.train).map_err(|e| Error::Config(e.to_string()))?.hash(&mut h);
    Ok(format!("{:016x}", h.finish()))
}

/// Trains under `runs_dir/<fingerprint>` unless a finished model for the
/// same model and training config is already there.
pub fn train_cached(
    config: &ExperimentConfig,
    corpus: &Corpus,
    runs_dir: &Path,
    report_every: u64,
) -> Result<TrainOutcome> {
    let dir = runs_dir.join(run_fingerprint(config)?);
    let path = dir.join("model.ckpt");
    if path.exists() {
        let ckpt = Checkpoint::load(&path)?;
        let set = training_set(corpus, &config.model)?;
        if ckpt.train_config == config.train
            && ckpt.model_config == set.model_config
            && ckpt.step == config.train.total_steps()
        {
            return Ok(TrainOutcome { checkpoint: ckpt, seconds: 0.0 });
        }
    }
    train(config, corpus, &TrainOptions { out_dir: Some(&dir), report_every })
}

/// MCD of one synthesised unseen-speaker utterance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceScore {
    pub utterance_id: String,
    pub speaker_id: u32,
    pub k: usize,
    pub mcd_db: f64,
}

/// Unseen-speaker utterances with their `k` references: the next `k`
/// utterances of the same speaker, cyclically. Speakers with fewer than
/// `max_k + 1` utterances are skipped.
fn unseen_tasks(corpus: &Corpus, k: usize, max_k: usize) -> Vec<(&ManifestEntry, Vec<&ManifestEntry>)> {
    let mut out = Vec::new();
    for speaker in corpus.manifest.speakers(Split::UnseenEval) {
        let utts: Vec<&ManifestEntry> =
            corpus.manifest.split(Split::UnseenEval).filter(|e| e.speaker_id == speaker).collect();
        if utts.len() < max_k + 1 {
            eprintln!("warning: speaker {speaker} has {} utterances, needs {}; skipped", utts.len(), max_k + 1);
            continue;
        }
        for (i, target) in utts.iter().enumerate() {
            let refs = (1..=k).map(|o| utts[(i + o) % utts.len()]).collect();
            out.push((*target, refs));
        }
    }
    out
}

fn synthesize_entry(
    model: &Model,
    corpus: &Corpus,
    target: &ManifestEntry,
    refs: &[&ManifestEntry],
    opts: &SynthesisOptions,
) -> Result<MelSpectrogram> {
    let ref_mels = refs.iter().map(|r| corpus.mel(r)).collect::<Result<Vec<_>>>()?;
    Ok(model.synthesize(&PhonemeSequence::new(target.phonemes.clone()), &ref_mels, opts)?.mel)
}

/// Synthesises every unseen-speaker utterance from `k` references and
/// scores it against its ground truth.
pub fn evaluate_unseen_mcd(
    model: &Model,
    corpus: &Corpus,
    k: usize,
    max_k: usize,
    mcd_cfg: &McdConfig,
    opts: &SynthesisOptions,
) -> Result<Vec<UtteranceScore>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut out = Vec::new();
    for (target, refs) in unseen_tasks(corpus, k, max_k.max(k)) {
        let syn = synthesize_entry(model, corpus, target, &refs, opts)?;
        let truth = corpus.mel(target)?;
        out.push(UtteranceScore {
            utterance_id: target.utterance_id.clone(),
            speaker_id: target.speaker_id,
            k,
            mcd_db: mcd(&truth, &syn, mcd_cfg)?,
        });
    }
    if out.is_empty() {
        return Err(Error::Config("no unseen-speaker utterances to evaluate".into()));
    }
    Ok(out)
}

/// Per-speaker outcome of the zero-shot discrimination check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrimination {
    pub speaker_id: u32,
    pub wins: usize,
    pub total: usize,
}

impl Discrimination {
    pub fn rate(&self) -> f64 {
        self.wins as f64 / self.total as f64
    }
}

/// For every unseen-speaker utterance synthesised from one other utterance
/// of that speaker: is MCD to the speaker's own recording lower than MCD to
/// every other speaker's recording of the same sentence?
pub fn speaker_discrimination(model: &Model, corpus: &Corpus, mcd_cfg: &McdConfig) -> Result<Vec<Discrimination>> {
    let mut out: Vec<Discrimination> = Vec::new();
    let all_speakers: Vec<u32> = (0..corpus.spec.n_speakers as u32).collect();
    for (target, refs) in unseen_tasks(corpus, 1, 1) {
        let syn = synthesize_entry(model, corpus, target, &refs, &SynthesisOptions::default())?;
        let index = crate::corpus::utterance_index(&target.utterance_id)
            .ok_or_else(|| Error::Config(format!("unexpected utterance id {}", target.utterance_id)))?;
        let own = mcd(&corpus.mel(target)?, &syn, mcd_cfg)?;
        let mut win = true;
        for &other in all_speakers.iter().filter(|&&s| s != target.speaker_id) {
            let Some(entry) = corpus.entry(other, index) else { continue };
            if mcd(&corpus.mel(entry)?, &syn, mcd_cfg)? <= own {
                win = false;
                break;
            }
        }
        match out.iter_mut().find(|d| d.speaker_id == target.speaker_id) {
            Some(d) => {
                d.total += 1;
                d.wins += usize::from(win);
            }
            None => out.push(Discrimination { speaker_id: target.speaker_id, wins: usize::from(win), total: 1 }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub config_id: String,
    pub param: String,
    pub mean_mcd_db: f64,
    pub std_mcd_db: f64,
    pub n: usize,
    /// Set when the cell failed (for example training diverged).
    #[serde(skip)]
    pub error: Option<String>,
}

impl SweepRow {
    pub fn from_scores(config_id: &str, param: &str, scores: &[UtteranceScore]) -> Self {
        let n = scores.len();
        let mean = scores.iter().map(|s| s.mcd_db).sum::<f64>() / n as f64;
        let var =
            if n > 1 { scores.iter().map(|s| (s.mcd_db - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        Self {
            config_id: config_id.into(),
            param: param.into(),
            mean_mcd_db: mean,
            std_mcd_db: var.sqrt(),
            n,
            error: None,
        }
    }

    pub fn failed(config_id: &str, param: &str, error: String) -> Self {
        Self {
            config_id: config_id.into(),
            param: param.into(),
            mean_mcd_db: f64::NAN,
            std_mcd_db: f64::NAN,
            n: 0,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, param: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.param == param)
    }

    /// `param,mean_mcd_db,std_mcd_db,n` with one line per row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["param", "mean_mcd_db", "std_mcd_db", "n"])?;
        for r in &self.rows {
            w.write_record([
                r.param.clone(),
                format!("{}", r.mean_mcd_db),
                format!("{}", r.std_mcd_db),
                r.n.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(io(path))
    }
}

pub fn write_scores_csv(path: &Path, scores: &[UtteranceScore]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in scores {
        w.serialize(s)?;
    }
    w.flush().map_err(io(path))
}

fn synthesis_options(cfg: &ExperimentConfig) -> SynthesisOptions {
    SynthesisOptions { sample_seed: None, average_predicted_speaker: cfg.eval.average_predicted_speaker }
}

/// Where sweeps keep their training runs and write their CSVs.
pub struct SweepDirs {
    pub runs: PathBuf,
    pub out: PathBuf,
}

fn train_and_score(
    config: &ExperimentConfig,
    corpus: &Corpus,
    dirs: &SweepDirs,
    param: &str,
    report_every: u64,
) -> Result<SweepRow> {
    let id = run_fingerprint(config)?;
    let outcome = match train_cached(config, corpus, &dirs.runs, report_every) {
        Ok(o) => o,
        Err(e @ Error::Core(nnspeech_core::Error::Diverged { .. })) => {
            return Ok(SweepRow::failed(&id, param, e.to_string()))
        }
        Err(e) => return Err(e),
    };
    let model = outcome.checkpoint.model()?;
    let k = config.eval.k;
    let scores = evaluate_unseen_mcd(&model, corpus, k, k, &config.mcd, &synthesis_options(config))?;
    write_scores_csv(&dirs.out.join(format!("scores_{param}.csv")), &scores)?;
    Ok(SweepRow::from_scores(&id, param, &scores))
}

/// One training run per γ (same seed and corpus), scored on unseen speakers.
pub fn sweep_gamma(
    grid: &[f64],
    base: &ExperimentConfig,
    corpus: &Corpus,
    dirs: &SweepDirs,
    report_every: u64,
) -> Result<SweepResult> {
    if grid.is_empty() || grid.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
        return Err(Error::Config("gamma grid must be non-empty and positive".into()));
    }
    fs::create_dir_all(&dirs.out).map_err(io(&dirs.out))?;
    let mut result = SweepResult::default();
    for &gamma in grid {
        let mut cfg = base.clone();
        cfg.train.gamma = gamma;
        let row = train_and_score(&cfg, corpus, dirs, &format!("{gamma}"), report_every)?;
        if let Some(e) = &row.error {
            eprintln!("gamma {gamma}: {e}");
        }
        result.rows.push(row);
    }
    result.write_csv(&dirs.out.join("sweep_gamma.csv"))?;
    Ok(result)
}

/// Scores a trained model with `k` averaged references for each `k`. Every
/// row uses the same target utterances.
pub fn sweep_adaption(
    ks: &[usize],
    ckpt: &Checkpoint,
    corpus: &Corpus,
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<SweepResult> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("k values must be at least 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let model = ckpt.model()?;
    let max_k = ks.iter().copied().max().unwrap_or(1);
    let mut result = SweepResult::default();
    let mut all = Vec::new();
    for &k in ks {
        let scores = evaluate_unseen_mcd(&model, corpus, k, max_k, &cfg.mcd, &synthesis_options(cfg))?;
        result.rows.push(SweepRow::from_scores(&format!("k{k}"), &k.to_string(), &scores));
        all.extend(scores);
    }
    write_scores_csv(&out_dir.join("scores_adaption.csv"), &all)?;
    result.write_csv(&out_dir.join("sweep_adaption.csv"))?;
    Ok(result)
}

/// One training run per mode, scored on unseen speakers.
pub fn run_ablation(
    modes: &[AblationMode],
    base: &ExperimentConfig,
    corpus: &Corpus,
    dirs: &SweepDirs,
    report_every: u64,
) -> Result<SweepResult> {
    fs::create_dir_all(&dirs.out).map_err(io(&dirs.out))?;
    let mut result = SweepResult::default();
    for &mode in modes {
        let mut cfg = base.clone();
        mode.apply(&mut cfg.model);
        let row = train_and_score(&cfg, corpus, dirs, mode.as_str(), report_every)?;
        if let Some(e) = &row.error {
            eprintln!("{}: {e}", mode.as_str());
        }
        result.rows.push(row);
    }
    result.write_csv(&dirs.out.join("ablation.csv"))?;
    Ok(result)
}
