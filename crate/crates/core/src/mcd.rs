//! Mel-cepstral distortion between two log-mel spectrograms.
//!
//! Each frame is taken to cepstra with an orthonormal DCT-II; coefficients
//! `1..=n_cepstra` are compared. Frames are paired either index by index or
//! by DTW restricted to a Sakoe–Chiba band around the length-scaled diagonal.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datamodel::MelSpectrogram;
use crate::error::{Error, Result};

/// `(10 / ln 10) · √2`.
pub const MCD_SCALE: f64 = 10.0 / core::f64::consts::LN_10 * core::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Frame `t` against frame `t` over the shorter length.
    None,
    Dtw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McdConfig {
    pub n_cepstra: usize,
    pub alignment: Alignment,
    /// Band half-width as a fraction of the longer sequence.
    pub band: f64,
}

impl Default for McdConfig {
    fn default() -> Self {
        Self { n_cepstra: 13, alignment: Alignment::Dtw, band: 0.1 }
    }
}

/// Orthonormal DCT-II coefficients `1..=n` of one frame.
pub fn cepstra(frame: &[f32], n: usize) -> Vec<f64> {
    let m = frame.len() as f64;
    let scale = libm::sqrt(2.0 / m);
    (1..=n)
        .map(|k| {
            let s: f64 = frame
                .iter()
                .enumerate()
                .map(|(i, &x)| f64::from(x) * libm::cos(core::f64::consts::PI * k as f64 * (i as f64 + 0.5) / m))
                .sum();
            scale * s
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Frame pairs of the minimum-cost monotone path within the band.
pub fn dtw_path(a: &[Vec<f64>], b: &[Vec<f64>], band: f64) -> Result<Vec<(usize, usize)>> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::EmptyAlignment);
    }
    let slope = if m > 1 { (n - 1) as f64 / (m - 1) as f64 } else { 0.0 };
    // Widened when the slope is steep so that neighbouring columns overlap.
    let radius = libm::ceil(band * n.max(m) as f64).max(libm::ceil(0.5 * slope + 1.0));
    let inside = |i: usize, j: usize| {
        let centre = j as f64 * slope;
        libm::fabs(i as f64 - centre) <= radius || n == 1 || m == 1
    };
    let inf = f64::INFINITY;
    let mut cost = alloc::vec![inf; n * m];
    for i in 0..n {
        for j in 0..m {
            if !inside(i, j) {
                continue;
            }
            let d = dist(&a[i], &b[j]);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = inf;
                if i > 0 {
                    best = best.min(cost[(i - 1) * m + j]);
                }
                if j > 0 {
                    best = best.min(cost[i * m + j - 1]);
                }
                if i > 0 && j > 0 {
                    best = best.min(cost[(i - 1) * m + j - 1]);
                }
                best
            };
            cost[i * m + j] = d + prev;
        }
    }
    if !cost[n * m - 1].is_finite() {
        return Err(Error::EmptyAlignment);
    }
    let (mut i, mut j) = (n - 1, m - 1);
    let mut path = alloc::vec![(i, j)];
    while i > 0 || j > 0 {
        let mut next = (i, j);
        let mut best = inf;
        if i > 0 && j > 0 && cost[(i - 1) * m + j - 1] < best {
            best = cost[(i - 1) * m + j - 1];
            next = (i - 1, j - 1);
        }
        if i > 0 && cost[(i - 1) * m + j] < best {
            best = cost[(i - 1) * m + j];
            next = (i - 1, j);
        }
        if j > 0 && cost[i * m + j - 1] < best {
            next = (i, j - 1);
        }
        (i, j) = next;
        path.push(next);
    }
    path.reverse();
    Ok(path)
}

/// Mel-cepstral distortion in dB.
pub fn mcd(reference: &MelSpectrogram, synthesized: &MelSpectrogram, cfg: &McdConfig) -> Result<f64> {
    if reference.config != synthesized.config || reference.n_mels() != synthesized.n_mels() {
        return Err(Error::Shape(format!(
            "audio configs differ ({} vs {} bands)",
            reference.n_mels(),
            synthesized.n_mels()
        )));
    }
    if cfg.n_cepstra == 0 || cfg.n_cepstra >= reference.n_mels() {
        return Err(Error::Invalid {
            entity: "McdConfig",
            reason: format!("n_cepstra must be in 1..{}", reference.n_mels()),
        });
    }
    let ca: Vec<Vec<f64>> = (0..reference.n_frames()).map(|t| cepstra(reference.frame(t), cfg.n_cepstra)).collect();
    let cb: Vec<Vec<f64>> = (0..synthesized.n_frames()).map(|t| cepstra(synthesized.frame(t), cfg.n_cepstra)).collect();
    let pairs: Vec<(usize, usize)> = match cfg.alignment {
        Alignment::None => (0..ca.len().min(cb.len())).map(|t| (t, t)).collect(),
        Alignment::Dtw => dtw_path(&ca, &cb, cfg.band)?,
    };
    if pairs.is_empty() {
        return Err(Error::EmptyAlignment);
    }
    let total: f64 = pairs.iter().map(|&(i, j)| dist(&ca[i], &cb[j])).sum();
    Ok(MCD_SCALE * total / pairs.len() as f64)
}
