//! Deterministic synthetic multi-speaker corpus.
//!
//! Each speaker is a harmonic source with a speaker-specific formant scale,
//! bandwidth, spectral tilt, base pitch and speaking rate. Phonemes are
//! formant targets (voiced) or shaped noise bands (unvoiced). Every speaker
//! reads the same script, so any utterance index gives a parallel sentence
//! across speakers. All randomness derives from [`CorpusSpec::seed`].

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nnspeech_core::datamodel::{
    AudioConfig, CorpusManifest, ManifestEntry, MelSpectrogram, Persist, PhonemeSequence, ProsodyTargets, Split,
    Waveform,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};
use crate::features::{boundaries_from_durations, FeatureExtractor};

const SYMBOLS: [&str; 32] = [
    "aa", "ae", "ah", "ao", "eh", "er", "ih", "iy", "uw", "ow", "m", "n", "l", "r", "w", "y", "s", "sh", "f", "th",
    "z", "v", "b", "d", "g", "k", "p", "t", "ch", "jh", "hh", "ng",
];
const UNVOICED: [&str; 9] = ["s", "sh", "f", "th", "k", "p", "t", "ch", "hh"];

/// Spacing of the sinusoid grid used for noise.
const NOISE_GRID_HZ: f64 = 50.0;
/// Upper edge of rendered content as a fraction of Nyquist.
const BAND_EDGE: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Trailing utterances of each seen speaker held out as seen-eval.
    pub seen_eval_per_speaker: usize,
    pub phoneme_vocab_size: usize,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
    /// Short utterances are stretched to at least this many frames.
    pub min_frames: usize,
    pub seed: u64,
    pub unseen_speaker_fraction: f64,
    pub audio: AudioConfig,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_speakers: 8,
            utterances_per_speaker: 50,
            seen_eval_per_speaker: 5,
            phoneme_vocab_size: 24,
            min_phonemes: 4,
            max_phonemes: 8,
            min_frames: 13,
            seed: 7,
            unseen_speaker_fraction: 0.25,
            audio: AudioConfig::default(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("corpus spec: {m}")));
        if self.n_speakers < 4 {
            return bad("n_speakers must be at least 4");
        }
        if !(self.unseen_speaker_fraction > 0.0 && self.unseen_speaker_fraction < 1.0) {
            return bad("unseen_speaker_fraction must lie in (0, 1)");
        }
        if self.utterances_per_speaker <= self.seen_eval_per_speaker {
            return bad("utterances_per_speaker must exceed seen_eval_per_speaker");
        }
        if !(2..=SYMBOLS.len() * 4).contains(&self.phoneme_vocab_size) {
            return bad("phoneme_vocab_size must be in 2..=128");
        }
        if self.min_phonemes == 0 || self.min_phonemes > self.max_phonemes {
            return bad("need 1 <= min_phonemes <= max_phonemes");
        }
        let a = &self.audio;
        if a.hop_length == 0 || a.win_length < a.hop_length || a.n_mels == 0 || a.sample_rate == 0 {
            return bad("audio needs hop > 0, win >= hop, n_mels > 0 and a sample rate");
        }
        if !(a.fmin >= 0.0 && a.fmin < a.fmax && a.fmax <= f64::from(a.sample_rate) / 2.0) {
            return bad("audio needs 0 <= fmin < fmax <= sample_rate / 2");
        }
        Ok(())
    }

    /// Held-out speakers, spread over the interior of the speaker range so
    /// that each lies between seen speakers.
    pub fn unseen_speakers(&self) -> Vec<u32> {
        let n = self.n_speakers;
        let k = ((n as f64 * self.unseen_speaker_fraction).round() as usize).clamp(1, n - 2);
        let mut ids: Vec<u32> =
            (1..=k).map(|i| ((i as f64 * n as f64 / (k + 1) as f64).round() as usize).clamp(1, n - 2) as u32).collect();
        ids.dedup();
        // Rounding collisions are resolved by taking the next free interior id.
        let mut next = 1;
        while ids.len() < k {
            if !ids.contains(&next) {
                ids.push(next);
            }
            next += 1;
        }
        ids.sort_unstable();
        ids
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeaker {
    pub speaker_id: u32,
    /// Multiplies every phoneme formant frequency.
    pub formant_scale: f64,
    pub bandwidth_scale: f64,
    /// Exponent of the `(1 + f/1000)^-tilt` source slope.
    pub tilt: f64,
    pub base_pitch: f64,
    /// Durations are divided by this.
    pub speaking_rate: f64,
    pub loudness: f64,
}

impl SyntheticSpeaker {
    pub fn new(spec: &CorpusSpec, speaker_id: u32) -> Self {
        let u = f64::from(speaker_id) / (spec.n_speakers - 1) as f64;
        let mut rng = spec.rng(1000 + u64::from(speaker_id));
        Self {
            speaker_id,
            formant_scale: 0.80 + 0.45 * u + rng.gen_range(-0.01..0.01),
            bandwidth_scale: 1.2 - 0.4 * u,
            tilt: 1.4 - 0.8 * u,
            base_pitch: 95.0 + 150.0 * u + rng.gen_range(-3.0..3.0),
            speaking_rate: 1.15 - 0.3 * u,
            loudness: 0.9 + 0.2 * u,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phoneme {
    pub symbol: String,
    pub voiced: bool,
    pub formants: [f64; 3],
    pub bandwidths: [f64; 3],
    /// Centre of the noise band for unvoiced phonemes.
    pub noise_centre: f64,
    pub intensity: f64,
    pub base_duration: u32,
    /// Relative pitch offset of this phoneme.
    pub pitch_offset: f64,
}

pub fn phoneme_inventory(spec: &CorpusSpec) -> Vec<Phoneme> {
    let mut rng = spec.rng(1);
    (0..spec.phoneme_vocab_size)
        .map(|i| {
            let symbol = match SYMBOLS.get(i) {
                Some(s) => (*s).to_string(),
                None => format!("ph{i}"),
            };
            let voiced = !UNVOICED.contains(&symbol.as_str());
            let f1 = rng.gen_range(250.0..850.0);
            let f2 = rng.gen_range((f1 + 300.0f64).max(850.0)..2500.0);
            let f3 = rng.gen_range(2600.0..3400.0);
            Phoneme {
                voiced,
                formants: [f1, f2, f3],
                bandwidths: [100.0, 140.0, 220.0],
                noise_centre: rng.gen_range(2500.0..6500.0),
                intensity: if voiced { rng.gen_range(0.6..1.0) } else { rng.gen_range(0.3..0.5) },
                base_duration: rng.gen_range(2..=5),
                pitch_offset: rng.gen_range(-0.06..0.06),
                symbol,
            }
        })
        .collect()
}

/// One line of the shared script: phoneme ids and a relative pitch contour
/// (a declination over the sentence plus each phoneme's own offset).
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub phonemes: Vec<usize>,
    pub pitch_factors: Vec<f64>,
}

pub fn script(spec: &CorpusSpec, inventory: &[Phoneme]) -> Vec<Sentence> {
    let mut rng = spec.rng(2);
    (0..spec.utterances_per_speaker)
        .map(|_| {
            let len = rng.gen_range(spec.min_phonemes..=spec.max_phonemes);
            let mut phonemes: Vec<usize> = Vec::with_capacity(len);
            while phonemes.len() < len {
                let p = rng.gen_range(0..spec.phoneme_vocab_size);
                if phonemes.last() != Some(&p) {
                    phonemes.push(p);
                }
            }
            let pitch_factors = phonemes
                .iter()
                .enumerate()
                .map(|(i, &p)| 1.0 - 0.1 * i as f64 / len as f64 + inventory[p].pitch_offset)
                .collect();
            Sentence { phonemes, pitch_factors }
        })
        .collect()
}

/// Frames per phoneme for one speaker: `max(1, round(base / rate))`, then
/// one frame at a time added round-robin until `min_frames` is reached.
pub fn durations(
    sentence: &Sentence,
    inventory: &[Phoneme],
    speaker: &SyntheticSpeaker,
    min_frames: usize,
) -> Vec<u32> {
    let mut d: Vec<u32> = sentence
        .phonemes
        .iter()
        .map(|&p| ((f64::from(inventory[p].base_duration) / speaker.speaking_rate).round() as u32).max(1))
        .collect();
    let (mut i, n) = (0, d.len());
    while (d.iter().sum::<u32>() as usize) < min_frames {
        d[i % n] += 1;
        i += 1;
    }
    d
}

/// Source parameters of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePlan {
    pub f0: f64,
    /// Harmonic amplitudes `a_1, a_2, ...` (zero for unvoiced frames).
    pub harmonics: Vec<f64>,
    /// Amplitudes of the noise grid components at `k · 50 Hz`, `k >= 1`.
    pub noise: Vec<f64>,
}

fn lorentz(f: f64, centre: f64, bandwidth: f64) -> f64 {
    let x = (f - centre) / (0.5 * bandwidth);
    1.0 / (1.0 + x * x)
}

/// Spectral envelope of a voiced phoneme as spoken by `speaker`.
pub fn voiced_envelope(ph: &Phoneme, speaker: &SyntheticSpeaker, f: f64) -> f64 {
    let gains = [1.0, 0.6, 0.3];
    let formants: f64 = (0..3)
        .map(|k| {
            gains[k] * lorentz(f, ph.formants[k] * speaker.formant_scale, ph.bandwidths[k] * speaker.bandwidth_scale)
        })
        .sum();
    (1.0 + f / 1000.0).powf(-speaker.tilt) * (0.1 + formants)
}

fn noise_envelope(ph: &Phoneme, speaker: &SyntheticSpeaker, f: f64) -> f64 {
    let centre = ph.noise_centre * speaker.formant_scale;
    0.05 + lorentz(f, centre, 1500.0 * speaker.formant_scale)
}

/// Scales `amps` so that the sum of sinusoids has RMS `target`.
fn normalise(amps: &mut [f64], target: f64) {
    let power: f64 = amps.iter().map(|a| a * a / 2.0).sum();
    if power > 0.0 {
        let k = target / power.sqrt();
        amps.iter_mut().for_each(|a| *a *= k);
    }
}

fn band_edge(audio: &AudioConfig) -> f64 {
    BAND_EDGE * f64::from(audio.sample_rate) / 2.0
}

/// Frame plans for a sentence spoken by `speaker` with the given durations.
pub fn frame_plans(
    sentence: &Sentence,
    durations: &[u32],
    inventory: &[Phoneme],
    speaker: &SyntheticSpeaker,
    audio: &AudioConfig,
) -> Vec<FramePlan> {
    let edge = band_edge(audio);
    let n_noise = (edge / NOISE_GRID_HZ) as usize;
    let mut plans = Vec::new();
    for ((&p, &factor), &d) in sentence.phonemes.iter().zip(&sentence.pitch_factors).zip(durations) {
        let ph = &inventory[p];
        let f0 = speaker.base_pitch * factor;
        let level = 0.1 * ph.intensity * speaker.loudness;
        let plan = if ph.voiced {
            let n_harm = (edge / f0) as usize;
            let mut harmonics: Vec<f64> = (1..=n_harm).map(|h| voiced_envelope(ph, speaker, h as f64 * f0)).collect();
            normalise(&mut harmonics, level);
            FramePlan { f0, harmonics, noise: Vec::new() }
        } else {
            let mut noise: Vec<f64> =
                (1..=n_noise).map(|k| noise_envelope(ph, speaker, k as f64 * NOISE_GRID_HZ)).collect();
            normalise(&mut noise, level);
            FramePlan { f0, harmonics: Vec::new(), noise }
        };
        plans.extend(std::iter::repeat(plan).take(d as usize));
    }
    plans
}

fn amp(v: &[f64], i: usize) -> f64 {
    v.get(i).copied().unwrap_or(0.0)
}

/// Renders `win + (T − 1)·hop` samples. Frame `t` is centred on sample
/// `t·hop + win/2`; pitch and amplitudes are interpolated linearly between
/// neighbouring frame centres. `noise_seed` fixes the noise phases.
pub fn render(plans: &[FramePlan], audio: &AudioConfig, noise_seed: u64) -> Waveform {
    let n_frames = plans.len();
    let n_samples = audio.n_samples(n_frames);
    let sr = f64::from(audio.sample_rate);
    let mut out = vec![0.0f32; n_samples];
    if n_frames == 0 {
        return Waveform { samples: out, sample_rate: audio.sample_rate };
    }
    let n_noise = (band_edge(audio) / NOISE_GRID_HZ) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    // Rotating phasors (cos, sin) for the noise grid.
    let mut noise_state: Vec<(f64, f64)> = (0..n_noise)
        .map(|_| {
            let theta = rng.gen_range(0.0..2.0 * PI);
            (theta.cos(), theta.sin())
        })
        .collect();
    let noise_step: Vec<(f64, f64)> = (1..=n_noise)
        .map(|k| {
            let w = 2.0 * PI * k as f64 * NOISE_GRID_HZ / sr;
            (w.cos(), w.sin())
        })
        .collect();
    let any_noise = plans.iter().any(|p| !p.noise.is_empty());
    let half_win = audio.win_length as f64 / 2.0;
    let hop = audio.hop_length as f64;
    let mut phase = 0.0f64;
    for (n, sample) in out.iter_mut().enumerate() {
        let x = ((n as f64 - half_win) / hop).max(0.0);
        let t0 = (x.floor() as usize).min(n_frames - 1);
        let t1 = (t0 + 1).min(n_frames - 1);
        let w = (x - t0 as f64).clamp(0.0, 1.0);
        let (a, b) = (&plans[t0], &plans[t1]);
        let mut y = 0.0;

        let f0 = (1.0 - w) * a.f0 + w * b.f0;
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
        let n_harm = a.harmonics.len().max(b.harmonics.len());
        if n_harm > 0 {
            // sin(hφ) by the Chebyshev recurrence.
            let c2 = 2.0 * phase.cos();
            let (mut prev, mut cur) = (0.0, phase.sin());
            for h in 0..n_harm {
                y += ((1.0 - w) * amp(&a.harmonics, h) + w * amp(&b.harmonics, h)) * cur;
                (prev, cur) = (cur, c2 * cur - prev);
            }
        }
        if any_noise {
            let active = !a.noise.is_empty() || !b.noise.is_empty();
            for (k, (state, step)) in noise_state.iter_mut().zip(&noise_step).enumerate() {
                if active {
                    y += ((1.0 - w) * amp(&a.noise, k) + w * amp(&b.noise, k)) * state.1;
                }
                *state = (state.0 * step.0 - state.1 * step.1, state.0 * step.1 + state.1 * step.0);
            }
        }
        *sample = y as f32;
    }
    Waveform { samples: out, sample_rate: audio.sample_rate }
}

/// A rendered utterance with its extracted features.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: u32,
    pub index: usize,
    pub phonemes: PhonemeSequence,
    pub wav: Waveform,
    pub mel: MelSpectrogram,
    pub prosody: ProsodyTargets,
}

/// Everything derived from a spec before any audio is rendered.
pub struct CorpusPlan {
    pub spec: CorpusSpec,
    pub inventory: Vec<Phoneme>,
    pub script: Vec<Sentence>,
    pub speakers: Vec<SyntheticSpeaker>,
    pub unseen: Vec<u32>,
    extractor: FeatureExtractor,
}

impl CorpusPlan {
    pub fn new(spec: &CorpusSpec) -> Result<Self> {
        spec.validate()?;
        let inventory = phoneme_inventory(spec);
        Ok(Self {
            script: script(spec, &inventory),
            inventory,
            speakers: (0..spec.n_speakers as u32).map(|id| SyntheticSpeaker::new(spec, id)).collect(),
            unseen: spec.unseen_speakers(),
            extractor: FeatureExtractor::new(spec.audio),
            spec: spec.clone(),
        })
    }

    pub fn split_of(&self, speaker: u32, index: usize) -> Split {
        if self.unseen.contains(&speaker) {
            Split::UnseenEval
        } else if index + self.spec.seen_eval_per_speaker >= self.spec.utterances_per_speaker {
            Split::SeenEval
        } else {
            Split::Train
        }
    }

    pub fn utterance(&self, speaker: u32, index: usize) -> Result<Utterance> {
        let sentence = &self.script[index];
        let spk = &self.speakers[speaker as usize];
        let durs = durations(sentence, &self.inventory, spk, self.spec.min_frames);
        let plans = frame_plans(sentence, &durs, &self.inventory, spk, &self.spec.audio);
        let wav = render(&plans, &self.spec.audio, self.spec.seed);
        let mel = self.extractor.mel(&wav)?;
        let prosody = self.extractor.prosody(&wav, &boundaries_from_durations(&durs))?;
        let text = sentence.phonemes.iter().map(|&p| self.inventory[p].symbol.as_str()).collect::<Vec<_>>().join(" ");
        Ok(Utterance {
            speaker,
            index,
            phonemes: PhonemeSequence { ids: sentence.phonemes.clone(), text: Some(text) },
            wav,
            mel,
            prosody,
        })
    }
}

pub fn utterance_id(speaker: u32, index: usize) -> String {
    format!("s{speaker:02}_u{index:03}")
}

/// Utterance index encoded in an id from [`utterance_id`].
pub fn utterance_index(id: &str) -> Option<usize> {
    id.rsplit_once("_u")?.1.parse().ok()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(io(path))
}

/// Renders every utterance, writes features under `out_dir` and returns the
/// manifest (also written as `manifest.tsv`).
pub fn generate_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<CorpusManifest> {
    let plan = CorpusPlan::new(spec)?;
    for sub in ["wav", "mel", "prosody"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(io(&d))?;
    }
    let mut manifest = CorpusManifest::default();
    for speaker in 0..spec.n_speakers as u32 {
        for index in 0..spec.utterances_per_speaker {
            let utt = plan.utterance(speaker, index)?;
            let id = utterance_id(speaker, index);
            let entry = ManifestEntry {
                utterance_id: id.clone(),
                speaker_id: speaker,
                split: plan.split_of(speaker, index),
                wav: format!("wav/{id}.bin"),
                mel: format!("mel/{id}.bin"),
                prosody: format!("prosody/{id}.bin"),
                phonemes: utt.phonemes.ids.clone(),
            };
            write(&out_dir.join(&entry.wav), utt.wav.to_bytes())?;
            write(&out_dir.join(&entry.mel), utt.mel.to_bytes())?;
            write(&out_dir.join(&entry.prosody), utt.prosody.to_bytes())?;
            manifest.entries.push(entry);
        }
    }

    let mut symbols = String::new();
    for (i, p) in plan.inventory.iter().enumerate() {
        writeln!(symbols, "{i}\t{}", p.symbol).expect("write to String");
    }
    write(&out_dir.join("phonemes.txt"), symbols)?;

    let mut speakers =
        String::from("speaker_id\tsplit\tformant_scale\tbandwidth_scale\ttilt\tbase_pitch\tspeaking_rate\tloudness\n");
    for s in &plan.speakers {
        let role = if plan.unseen.contains(&s.speaker_id) { "unseen" } else { "seen" };
        writeln!(
            speakers,
            "{}\t{role}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            s.speaker_id, s.formant_scale, s.bandwidth_scale, s.tilt, s.base_pitch, s.speaking_rate, s.loudness
        )
        .expect("write to String");
    }
    write(&out_dir.join("speakers.tsv"), speakers)?;
    let toml = toml::to_string(spec).map_err(|e| Error::Config(e.to_string()))?;
    write(&out_dir.join("spec.toml"), toml)?;
    write(&out_dir.join("manifest.tsv"), manifest.to_text())?;
    Ok(manifest)
}

/// A generated corpus on disk.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub spec: CorpusSpec,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Self> {
        let spec_path = dir.join("spec.toml");
        let spec_text = fs::read_to_string(&spec_path).map_err(io(&spec_path))?;
        let spec: CorpusSpec =
            toml::from_str(&spec_text).map_err(|e| Error::Parse { path: spec_path.clone(), message: e.to_string() })?;
        let manifest_path = dir.join("manifest.tsv");
        let text = fs::read_to_string(&manifest_path).map_err(io(&manifest_path))?;
        let manifest = CorpusManifest::from_text(&text)?;
        Ok(Self { dir: dir.to_path_buf(), spec, manifest })
    }

    fn read<T: Persist>(&self, rel: &str) -> Result<T> {
        let path = self.dir.join(rel);
        let bytes = fs::read(&path).map_err(io(&path))?;
        T::from_bytes(&bytes).map_err(|e| Error::Parse { path, message: e.to_string() })
    }

    pub fn mel(&self, entry: &ManifestEntry) -> Result<MelSpectrogram> {
        self.read(&entry.mel)
    }

    pub fn prosody(&self, entry: &ManifestEntry) -> Result<ProsodyTargets> {
        self.read(&entry.prosody)
    }

    pub fn wav(&self, entry: &ManifestEntry) -> Result<Waveform> {
        self.read(&entry.wav)
    }

    /// Utterance `index` of `speaker`, if present.
    pub fn entry(&self, speaker: u32, index: usize) -> Option<&ManifestEntry> {
        let id = utterance_id(speaker, index);
        self.manifest.entries.iter().find(|e| e.utterance_id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusSpec {
        CorpusSpec { n_speakers: 4, utterances_per_speaker: 3, seen_eval_per_speaker: 1, ..Default::default() }
    }

    #[test]
    fn unseen_speakers_are_interior() {
        let spec = CorpusSpec { n_speakers: 10, unseen_speaker_fraction: 0.2, ..Default::default() };
        assert_eq!(spec.unseen_speakers(), vec![3, 7]);
        assert_eq!(CorpusSpec::default().unseen_speakers(), vec![3, 5]);
        let spec = CorpusSpec { n_speakers: 4, unseen_speaker_fraction: 0.9, ..Default::default() };
        assert_eq!(spec.unseen_speakers(), vec![1, 2]);
        let spec = CorpusSpec { n_speakers: 5, unseen_speaker_fraction: 0.01, ..Default::default() };
        assert_eq!(spec.unseen_speakers(), vec![3]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        for spec in [
            CorpusSpec { n_speakers: 3, ..Default::default() },
            CorpusSpec { unseen_speaker_fraction: 0.0, ..Default::default() },
            CorpusSpec { unseen_speaker_fraction: 1.0, ..Default::default() },
            CorpusSpec { min_phonemes: 9, ..Default::default() },
            CorpusSpec { seen_eval_per_speaker: 50, ..Default::default() },
        ] {
            assert!(spec.validate().is_err(), "{spec:?}");
        }
    }

    #[test]
    fn speakers_are_deterministic_and_ordered() {
        let spec = CorpusSpec::default();
        let a: Vec<_> = (0..8).map(|i| SyntheticSpeaker::new(&spec, i)).collect();
        let b: Vec<_> = (0..8).map(|i| SyntheticSpeaker::new(&spec, i)).collect();
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert!(w[1].formant_scale > w[0].formant_scale);
            assert!(w[1].base_pitch > w[0].base_pitch);
        }
        for s in &a {
            assert!((60.0..500.0).contains(&s.base_pitch));
            assert!(s.formant_scale > 0.5 && s.formant_scale < 1.5);
        }
    }

    #[test]
    fn durations_follow_the_speaking_rate() {
        let spec = CorpusSpec::default();
        let inv = phoneme_inventory(&spec);
        let sentence = Sentence { phonemes: vec![0, 1, 2, 3, 4, 5, 6, 7], pitch_factors: vec![1.0; 8] };
        for id in [0, 7] {
            let spk = SyntheticSpeaker::new(&spec, id);
            let d = durations(&sentence, &inv, &spk, 1);
            for (&p, &di) in sentence.phonemes.iter().zip(&d) {
                assert_eq!(di, ((f64::from(inv[p].base_duration) / spk.speaking_rate).round() as u32).max(1));
            }
            let padded = durations(&sentence, &inv, &spk, 60);
            assert_eq!(padded.iter().sum::<u32>(), 60);
        }
    }

    #[test]
    fn two_speakers_reading_the_same_sentence_differ() {
        let plan = CorpusPlan::new(&small()).unwrap();
        let a = plan.utterance(0, 0).unwrap();
        let b = plan.utterance(3, 0).unwrap();
        assert_eq!(a.phonemes.ids, b.phonemes.ids);
        let t = a.mel.n_frames().min(b.mel.n_frames());
        let dist: f64 =
            (0..t).flat_map(|i| a.mel.frame(i).iter().zip(b.mel.frame(i)).map(|(x, y)| f64::from(x - y).powi(2))).sum();
        assert!(dist > 0.0);
        for u in [&a, &b] {
            assert_eq!(u.prosody.total_frames(), u.mel.n_frames());
            assert!(u.mel.data().iter().all(|v| v.is_finite()));
        }
        // The faster speaker never takes more frames per phoneme before padding.
        assert!(plan.speakers[0].speaking_rate > plan.speakers[3].speaking_rate);
    }

    #[test]
    fn voiced_pitch_tracks_the_generator() {
        let spec = small();
        let plan = CorpusPlan::new(&spec).unwrap();
        for speaker in 0..4u32 {
            let u = plan.utterance(speaker, 1).unwrap();
            let sentence = &plan.script[1];
            for (i, &p) in sentence.phonemes.iter().enumerate() {
                if !plan.inventory[p].voiced || u.prosody.durations[i] < 3 {
                    continue;
                }
                let want = plan.speakers[speaker as usize].base_pitch * sentence.pitch_factors[i];
                let got = u.prosody.pitch[i];
                assert!((got - want).abs() < 0.1 * want, "speaker {speaker} phoneme {i}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn flat_200_hz_speaker_reads_200_hz() {
        let spec = CorpusSpec::default();
        let inv = phoneme_inventory(&spec);
        let mut spk = SyntheticSpeaker::new(&spec, 4);
        spk.base_pitch = 200.0;
        let vowel = inv.iter().position(|p| p.voiced).unwrap();
        let sentence = Sentence { phonemes: vec![vowel], pitch_factors: vec![1.0] };
        let plans = frame_plans(&sentence, &[8], &inv, &spk, &spec.audio);
        let wav = render(&plans, &spec.audio, 0);
        let fx = FeatureExtractor::new(spec.audio);
        let p = fx.prosody(&wav, &[0..8]).unwrap();
        assert!((p.pitch[0] - 200.0).abs() < 5.0, "{}", p.pitch[0]);
    }

    #[test]
    fn render_length_matches_the_frame_count() {
        let spec = CorpusSpec::default();
        let inv = phoneme_inventory(&spec);
        let spk = SyntheticSpeaker::new(&spec, 0);
        let sentence = Sentence { phonemes: vec![0, 16], pitch_factors: vec![1.0, 1.0] };
        let plans = frame_plans(&sentence, &[3, 4], &inv, &spk, &spec.audio);
        let wav = render(&plans, &spec.audio, 1);
        assert_eq!(wav.samples.len(), 1024 + 6 * 256);
        assert_eq!(spec.audio.n_frames(wav.samples.len()), 7);
    }
}
