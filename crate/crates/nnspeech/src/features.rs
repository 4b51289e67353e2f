//! Mel-spectrogram and prosody extraction from waveforms.
//!
//! Frames are taken without padding: frame `t` covers samples
//! `[t·hop, t·hop + win)`. The window is a periodic Hann window, the
//! spectrum is the STFT magnitude, and the filterbank is a set of
//! peak-normalised triangles on the HTK mel scale. Energies are clamped at
//! [`LOG_FLOOR`] before the natural log.

use std::ops::Range;
use std::sync::Arc;

use nnspeech_core::datamodel::{AudioConfig, MelSpectrogram, ProsodyTargets, Waveform};
use nnspeech_core::Error;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Mel energies below this are clamped before taking the log.
pub const LOG_FLOOR: f64 = 1e-5;

/// Pitch search range in Hz.
const F0_MIN: f64 = 60.0;
const F0_MAX: f64 = 500.0;
/// A normalised-difference dip below this is taken as the period.
const DIP_THRESHOLD: f64 = 0.15;
/// Frames whose deepest dip stays above this are unvoiced.
const VOICING_THRESHOLD: f64 = 0.35;
/// Frames quieter than this RMS are unvoiced.
const SILENCE_RMS: f64 = 1e-4;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Centre frequencies of the `n_mels` filters.
pub fn mel_band_centres(cfg: &AudioConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    (1..=cfg.n_mels).map(|k| mel_to_hz(lo + (hi - lo) * k as f64 / (cfg.n_mels + 1) as f64)).collect()
}

/// `n_mels × (win/2 + 1)` triangular filter weights.
pub fn mel_filterbank(cfg: &AudioConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.win_length / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let points: Vec<f64> =
        (0..cfg.n_mels + 2).map(|k| mel_to_hz(lo + (hi - lo) * k as f64 / (cfg.n_mels + 1) as f64)).collect();
    let bin_hz = f64::from(cfg.sample_rate) / cfg.win_length as f64;
    (0..cfg.n_mels)
        .map(|k| {
            let (left, centre, right) = (points[k], points[k + 1], points[k + 2]);
            (0..n_bins)
                .map(|b| {
                    let f = b as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= centre {
                        (f - left) / (centre - left)
                    } else {
                        (right - f) / (right - centre)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// Reusable FFT plans, window and filterbank for one [`AudioConfig`].
pub struct FeatureExtractor {
    config: AudioConfig,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    stft: Arc<dyn Fft<f64>>,
    acf_forward: Arc<dyn Fft<f64>>,
    acf_inverse: Arc<dyn Fft<f64>>,
}

impl FeatureExtractor {
    pub fn new(config: AudioConfig) -> Self {
        let mut planner = FftPlanner::new();
        let acf_len = 2 * config.win_length;
        Self {
            config,
            window: hann_window(config.win_length),
            filterbank: mel_filterbank(&config),
            stft: planner.plan_fft_forward(config.win_length),
            acf_forward: planner.plan_fft_forward(acf_len),
            acf_inverse: planner.plan_fft_inverse(acf_len),
        }
    }

    pub fn config(&self) -> &AudioConfig {
        &self.config
    }

    fn check(&self, wav: &Waveform) -> Result<usize, Error> {
        if wav.sample_rate != self.config.sample_rate {
            return Err(Error::Invalid {
                entity: "Waveform",
                reason: format!("sample rate {} differs from {}", wav.sample_rate, self.config.sample_rate),
            });
        }
        let frames = self.config.n_frames(wav.samples.len());
        if frames == 0 {
            return Err(Error::TooShort { frames: wav.samples.len(), needed: self.config.win_length });
        }
        Ok(frames)
    }

    fn frame<'a>(&self, wav: &'a Waveform, t: usize) -> &'a [f32] {
        let start = t * self.config.hop_length;
        &wav.samples[start..start + self.config.win_length]
    }

    /// STFT magnitude of frame `t`, `win/2 + 1` bins.
    pub fn magnitude(&self, wav: &Waveform, t: usize) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> =
            self.frame(wav, t).iter().zip(&self.window).map(|(&x, &w)| Complex::new(f64::from(x) * w, 0.0)).collect();
        self.stft.process(&mut buf);
        buf[..self.config.win_length / 2 + 1].iter().map(|c| c.norm()).collect()
    }

    pub fn mel(&self, wav: &Waveform) -> Result<MelSpectrogram, Error> {
        let frames = self.check(wav)?;
        let mut out = Vec::with_capacity(frames * self.config.n_mels);
        for t in 0..frames {
            let mag = self.magnitude(wav, t);
            for filter in &self.filterbank {
                let e: f64 = filter.iter().zip(&mag).map(|(w, m)| w * m).sum();
                out.push(e.max(LOG_FLOOR).ln() as f32);
            }
        }
        Ok(MelSpectrogram::new(out, frames, self.config))
    }

    pub fn frame_rms(&self, wav: &Waveform, t: usize) -> f64 {
        let f = self.frame(wav, t);
        (f.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>() / f.len() as f64).sqrt()
    }

    /// Autocorrelation pitch estimate of frame `t` in Hz, or `None` when
    /// the frame is unvoiced.
    pub fn frame_pitch(&self, wav: &Waveform, t: usize) -> Option<f64> {
        if self.frame_rms(wav, t) < SILENCE_RMS {
            return None;
        }
        let n = self.config.win_length;
        let mut buf: Vec<Complex<f64>> = self.frame(wav, t).iter().map(|&x| Complex::new(f64::from(x), 0.0)).collect();
        buf.resize(2 * n, Complex::new(0.0, 0.0));
        self.acf_forward.process(&mut buf);
        for c in buf.iter_mut() {
            *c = Complex::new(c.norm_sqr(), 0.0);
        }
        self.acf_inverse.process(&mut buf);
        // Difference function d(l) = Σ (x_j − x_{j+l})² over the overlap,
        // from the autocorrelation and prefix energies, normalised by its
        // running mean (YIN). The first dip under the threshold is the period.
        let frame = self.frame(wav, t);
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        for &x in frame {
            prefix.push(prefix.last().copied().unwrap_or(0.0) + f64::from(x) * f64::from(x));
        }
        let sr = f64::from(self.config.sample_rate);
        let min_lag = ((sr / F0_MAX).floor() as usize).max(2);
        let max_lag = ((sr / F0_MIN).ceil() as usize).min(n / 2);
        // The inverse transform is unnormalised.
        let scale = buf.len() as f64;
        let mut cmnd = vec![1.0; max_lag + 2];
        let mut running = 0.0;
        for l in 1..=max_lag + 1 {
            let d = prefix[n - l] + (prefix[n] - prefix[l]) - 2.0 * buf[l].re / scale;
            running += d;
            cmnd[l] = if running > 0.0 { d * l as f64 / running } else { 1.0 };
        }
        let mut lag = None;
        for l in min_lag..=max_lag {
            if cmnd[l] < DIP_THRESHOLD {
                let mut m = l;
                while m < max_lag && cmnd[m + 1] < cmnd[m] {
                    m += 1;
                }
                lag = Some(m);
                break;
            }
        }
        let lag = match lag {
            Some(l) => l,
            None => {
                let l = (min_lag..=max_lag).min_by(|&a, &b| cmnd[a].total_cmp(&cmnd[b]))?;
                if cmnd[l] > VOICING_THRESHOLD {
                    return None;
                }
                l
            }
        };
        let r = |l: usize| -cmnd[l];
        let (a, b, c) = (r(lag - 1), r(lag), r(lag + 1));
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
        Some(sr / (lag as f64 + shift.clamp(-0.5, 0.5)))
    }

    /// Per-phoneme durations, mean voiced pitch (0 when no frame is voiced)
    /// and mean frame RMS. `boundaries` are frame ranges that must tile
    /// `0..T` in order.
    pub fn prosody(&self, wav: &Waveform, boundaries: &[Range<usize>]) -> Result<ProsodyTargets, Error> {
        let frames = self.check(wav)?;
        let mut expected = 0;
        for b in boundaries {
            if b.start != expected || b.end <= b.start {
                return Err(Error::Invalid {
                    entity: "ProsodyTargets",
                    reason: format!("boundary {b:?} does not continue from frame {expected}"),
                });
            }
            expected = b.end;
        }
        if expected != frames {
            return Err(Error::Invalid {
                entity: "ProsodyTargets",
                reason: format!("boundaries cover {expected} frames but the waveform has {frames}"),
            });
        }
        let mut targets = ProsodyTargets { durations: Vec::new(), pitch: Vec::new(), energy: Vec::new() };
        for b in boundaries {
            let voiced: Vec<f64> = b.clone().filter_map(|t| self.frame_pitch(wav, t)).collect();
            let pitch = if voiced.is_empty() { 0.0 } else { voiced.iter().sum::<f64>() / voiced.len() as f64 };
            let energy = b.clone().map(|t| self.frame_rms(wav, t)).sum::<f64>() / b.len() as f64;
            targets.durations.push(b.len() as u32);
            targets.pitch.push(pitch);
            targets.energy.push(energy);
        }
        Ok(targets)
    }
}

/// Frame ranges for consecutive durations.
pub fn boundaries_from_durations(durations: &[u32]) -> Vec<Range<usize>> {
    let mut start = 0;
    durations
        .iter()
        .map(|&d| {
            let r = start..start + d as usize;
            start = r.end;
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, n: usize, cfg: &AudioConfig) -> Waveform {
        let sr = f64::from(cfg.sample_rate);
        Waveform {
            samples: (0..n).map(|i| (0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr).sin()) as f32).collect(),
            sample_rate: cfg.sample_rate,
        }
    }

    #[test]
    fn silence_sits_at_the_log_floor() {
        let cfg = AudioConfig::default();
        let fx = FeatureExtractor::new(cfg);
        let wav = Waveform { samples: vec![0.0; 22050], sample_rate: 22050 };
        let mel = fx.mel(&wav).unwrap();
        assert_eq!(mel.n_frames(), (22050 - 1024) / 256 + 1);
        let floor = (LOG_FLOOR.ln()) as f32;
        assert!(mel.data().iter().all(|&v| v == floor));
    }

    #[test]
    fn frame_count_follows_the_no_padding_rule() {
        let cfg = AudioConfig::default();
        let fx = FeatureExtractor::new(cfg);
        let wav = Waveform { samples: vec![0.1; 1024], sample_rate: 22050 };
        assert_eq!(fx.mel(&wav).unwrap().n_frames(), 1);
        let short = Waveform { samples: vec![0.1; 1023], sample_rate: 22050 };
        assert!(matches!(fx.mel(&short), Err(Error::TooShort { .. })));
    }

    #[test]
    fn sine_at_a_band_centre_dominates_and_matches_a_direct_dft() {
        let cfg = AudioConfig::default();
        let fx = FeatureExtractor::new(cfg);
        let centres = mel_band_centres(&cfg);
        for k in [20usize, 45, 70] {
            let wav = sine(centres[k], 2048, &cfg);
            let mel = fx.mel(&wav).unwrap();
            let window = hann_window(cfg.win_length);
            let bank = mel_filterbank(&cfg);
            for t in 0..mel.n_frames() {
                let frame = mel.frame(t);
                let argmax = (0..cfg.n_mels).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
                assert_eq!(argmax, k);
                // Naive O(N²) DFT of the windowed frame.
                let x: Vec<f64> =
                    (0..cfg.win_length).map(|i| f64::from(wav.samples[t * cfg.hop_length + i]) * window[i]).collect();
                let n = cfg.win_length as f64;
                let mags: Vec<f64> = (0..=cfg.win_length / 2)
                    .map(|b| {
                        let (mut re, mut im) = (0.0, 0.0);
                        for (i, &v) in x.iter().enumerate() {
                            let ang = -2.0 * std::f64::consts::PI * b as f64 * i as f64 / n;
                            re += v * ang.cos();
                            im += v * ang.sin();
                        }
                        (re * re + im * im).sqrt()
                    })
                    .collect();
                for (m, filter) in bank.iter().enumerate() {
                    let e: f64 = filter.iter().zip(&mags).map(|(w, v)| w * v).sum();
                    let want = e.max(LOG_FLOOR).ln() as f32;
                    assert!((frame[m] - want).abs() < 1e-4, "band {m}: {} vs {want}", frame[m]);
                }
            }
        }
    }

    #[test]
    fn pitch_of_a_harmonic_tone() {
        let cfg = AudioConfig::default();
        let fx = FeatureExtractor::new(cfg);
        let sr = f64::from(cfg.sample_rate);
        let n = cfg.n_samples(12);
        let f0 = 200.0;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                (1..=12).map(|h| 0.1 / h as f64 * (2.0 * std::f64::consts::PI * f0 * h as f64 * t).sin()).sum::<f64>()
                    as f32
            })
            .collect();
        let wav = Waveform { samples, sample_rate: cfg.sample_rate };
        let p = fx.prosody(&wav, &[0..5, 5..12]).unwrap();
        assert_eq!(p.durations, vec![5, 7]);
        for &v in &p.pitch {
            assert!((v - 200.0).abs() < 5.0, "{v}");
        }
        assert!(p.energy.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn silent_phoneme_is_unvoiced_at_zero_energy() {
        let cfg = AudioConfig::default();
        let fx = FeatureExtractor::new(cfg);
        let wav = Waveform { samples: vec![0.0; cfg.n_samples(6)], sample_rate: cfg.sample_rate };
        let p = fx.prosody(&wav, &[0..2, 2..6]).unwrap();
        assert_eq!(p.pitch, vec![0.0, 0.0]);
        assert_eq!(p.energy, vec![0.0, 0.0]);
    }

    #[test]
    fn boundaries_must_tile_the_frames() {
        let cfg = AudioConfig::default();
        let fx = FeatureExtractor::new(cfg);
        let wav = Waveform { samples: vec![0.0; cfg.n_samples(6)], sample_rate: cfg.sample_rate };
        assert!(fx.prosody(&wav, &[0..2, 3..6]).is_err());
        assert!(fx.prosody(&wav, &[0..2, 2..5]).is_err());
        assert_eq!(boundaries_from_durations(&[2, 4]), vec![0..2, 2..6]);
    }
}
