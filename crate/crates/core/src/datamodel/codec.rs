//! Self-describing binary matrix format.
//!
//! ```text
//! magic     6 bytes   "NNSPK1"
//! dtype     u8        1 = f32, 2 = f64
//! rank      u8        1 or 2
//! dims      rank × u32 little-endian
//! meta_len  u32 little-endian
//! meta      meta_len bytes of UTF-8 "key=value" lines
//! payload   product(dims) values, little-endian, row-major
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::types::{
    AudioConfig, DiagonalGaussian, LatentSequence, LatentSource, MelSpectrogram, PhonemeSequence, ProsodyTargets,
    SpeakerEmbedding, SpeakerSource, Waveform,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"NNSPK1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Ordered `key=value` metadata carried in the header.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata(pub Vec<(String, String)>);

impl Metadata {
    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.0.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::CorruptHeader(format!("missing metadata key {key:?}")))
    }

    fn parse<T: core::str::FromStr>(&self, key: &str) -> Result<T> {
        self.require(key)?.parse().map_err(|_| Error::CorruptHeader(format!("unparseable metadata value for {key:?}")))
    }

    fn encode(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.0 {
            s.push_str(k);
            s.push('=');
            s.push_str(&escape(v));
            s.push('\n');
        }
        s
    }

    fn decode(s: &str) -> Result<Self> {
        let mut out = Vec::new();
        for line in s.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::CorruptHeader(format!("metadata line without '=': {line:?}")))?;
            out.push((k.into(), unescape(v)));
        }
        Ok(Self(out))
    }
}

fn escape(v: &str) -> String {
    v.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// Decoded file contents: shape, values, and metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub dims: Vec<usize>,
    pub data: MatrixData,
    pub meta: Metadata,
}

impl Matrix {
    pub fn dtype(&self) -> Dtype {
        match self.data {
            MatrixData::F32(_) => Dtype::F32,
            MatrixData::F64(_) => Dtype::F64,
        }
    }

    pub fn kind(&self) -> Option<&str> {
        self.meta.get("kind")
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::CorruptHeader(format!("expected kind {kind:?}, found {other:?}"))),
        }
    }

    fn into_f64(self) -> Vec<f64> {
        match self.data {
            MatrixData::F32(v) => v.into_iter().map(f64::from).collect(),
            MatrixData::F64(v) => v,
        }
    }

    fn dims2(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            [n] => Ok((1, n)),
            _ => Err(Error::Shape(format!("expected rank <= 2, got dims {:?}", self.dims))),
        }
    }
}

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let meta = m.meta.encode();
    let n: usize = m.dims.iter().product();
    let mut out = Vec::with_capacity(16 + 4 * m.dims.len() + meta.len() + n * m.dtype().size());
    out.extend_from_slice(MAGIC);
    out.push(m.dtype() as u8);
    out.push(m.dims.len() as u8);
    for &d in &m.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    match &m.data {
        MatrixData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        MatrixData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptHeader(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(6, "magic")? != MAGIC {
        return Err(Error::CorruptHeader("bad magic".into()));
    }
    let dtype = match r.take(1, "dtype")?[0] {
        1 => Dtype::F32,
        2 => Dtype::F64,
        other => return Err(Error::CorruptHeader(format!("unknown dtype tag {other}"))),
    };
    let rank = r.take(1, "rank")?[0] as usize;
    if !(1..=2).contains(&rank) {
        return Err(Error::CorruptHeader(format!("unsupported rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(r.u32("dims")? as usize);
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_bytes = r.take(meta_len, "metadata")?;
    let meta = core::str::from_utf8(meta_bytes)
        .map_err(|_| Error::CorruptHeader("metadata is not UTF-8".into()))
        .and_then(Metadata::decode)?;
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Shape("dims overflow".into()))?;
    let payload = &bytes[r.pos..];
    if Some(payload.len()) != n.checked_mul(dtype.size()) {
        return Err(Error::Shape(format!(
            "payload has {} bytes, dims {:?} of {:?} need {}",
            payload.len(),
            dims,
            dtype,
            n.saturating_mul(dtype.size())
        )));
    }
    let data = match dtype {
        Dtype::F32 => {
            MatrixData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
        }
        Dtype::F64 => MatrixData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect(),
        ),
    };
    Ok(Matrix { dims, data, meta })
}

/// Domain types with a binary-matrix representation.
pub trait Persist: Sized {
    fn to_matrix(&self) -> Matrix;
    fn from_matrix(m: Matrix) -> Result<Self>;

    fn to_bytes(&self) -> Vec<u8> {
        encode_matrix(&self.to_matrix())
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_matrix(decode_matrix(bytes)?)
    }
}

fn audio_meta(meta: Metadata, c: &AudioConfig) -> Metadata {
    meta.with("sample_rate", c.sample_rate)
        .with("hop_length", c.hop_length)
        .with("win_length", c.win_length)
        .with("n_mels", c.n_mels)
        .with("fmin", c.fmin)
        .with("fmax", c.fmax)
}

fn audio_from_meta(meta: &Metadata) -> Result<AudioConfig> {
    Ok(AudioConfig {
        sample_rate: meta.parse("sample_rate")?,
        hop_length: meta.parse("hop_length")?,
        win_length: meta.parse("win_length")?,
        n_mels: meta.parse("n_mels")?,
        fmin: meta.parse("fmin")?,
        fmax: meta.parse("fmax")?,
    })
}

impl Persist for MelSpectrogram {
    fn to_matrix(&self) -> Matrix {
        Matrix {
            dims: vec![self.n_frames(), self.n_mels()],
            data: MatrixData::F32(self.data().to_vec()),
            meta: audio_meta(Metadata::default().with("kind", "mel"), &self.config),
        }
    }

    fn from_matrix(m: Matrix) -> Result<Self> {
        m.expect_kind("mel")?;
        let config = audio_from_meta(&m.meta)?;
        let (t, n_mels) = m.dims2()?;
        if n_mels != config.n_mels {
            return Err(Error::Shape(format!("mel has {n_mels} bands but config says {}", config.n_mels)));
        }
        let frames = match m.data {
            MatrixData::F32(v) => v,
            MatrixData::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        };
        Ok(MelSpectrogram::new(frames, t, config))
    }
}

impl Persist for Waveform {
    fn to_matrix(&self) -> Matrix {
        Matrix {
            dims: vec![self.samples.len()],
            data: MatrixData::F32(self.samples.clone()),
            meta: Metadata::default().with("kind", "waveform").with("sample_rate", self.sample_rate),
        }
    }

    fn from_matrix(m: Matrix) -> Result<Self> {
        m.expect_kind("waveform")?;
        let sample_rate = m.meta.parse("sample_rate")?;
        let samples = match m.data {
            MatrixData::F32(v) => v,
            MatrixData::F64(v) => v.into_iter().map(|x| x as f32).collect(),
        };
        Ok(Waveform { samples, sample_rate })
    }
}

impl Persist for ProsodyTargets {
    fn to_matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.len() * 3);
        for i in 0..self.len() {
            data.extend_from_slice(&[f64::from(self.durations[i]), self.pitch[i], self.energy[i]]);
        }
        Matrix {
            dims: vec![self.len(), 3],
            data: MatrixData::F64(data),
            meta: Metadata::default().with("kind", "prosody"),
        }
    }

    fn from_matrix(m: Matrix) -> Result<Self> {
        m.expect_kind("prosody")?;
        let (l, c) = m.dims2()?;
        if c != 3 {
            return Err(Error::Shape(format!("prosody needs 3 columns, found {c}")));
        }
        let data = m.into_f64();
        let mut p = ProsodyTargets {
            durations: Vec::with_capacity(l),
            pitch: Vec::with_capacity(l),
            energy: Vec::with_capacity(l),
        };
        for row in data.chunks_exact(3) {
            if row[0] < 0.0 || libm::trunc(row[0]) != row[0] {
                return Err(Error::CorruptHeader(format!("non-integral duration {}", row[0])));
            }
            p.durations.push(row[0] as u32);
            p.pitch.push(row[1]);
            p.energy.push(row[2]);
        }
        Ok(p)
    }
}

impl Persist for PhonemeSequence {
    fn to_matrix(&self) -> Matrix {
        let mut meta = Metadata::default().with("kind", "phonemes");
        if let Some(t) = &self.text {
            meta = meta.with("text", t);
        }
        Matrix { dims: vec![self.ids.len()], data: MatrixData::F64(self.ids.iter().map(|&i| i as f64).collect()), meta }
    }

    fn from_matrix(m: Matrix) -> Result<Self> {
        m.expect_kind("phonemes")?;
        let text = m.meta.get("text").map(String::from);
        let ids = m.into_f64().into_iter().map(|v| v as usize).collect();
        Ok(PhonemeSequence { ids, text })
    }
}

impl Persist for SpeakerEmbedding {
    fn to_matrix(&self) -> Matrix {
        Matrix {
            dims: vec![self.vector.len()],
            data: MatrixData::F64(self.vector.clone()),
            meta: Metadata::default().with("kind", "speaker").with("source", self.source.as_str()),
        }
    }

    fn from_matrix(m: Matrix) -> Result<Self> {
        m.expect_kind("speaker")?;
        let source = SpeakerSource::parse(m.meta.require("source")?)
            .ok_or_else(|| Error::CorruptHeader("unknown speaker source".into()))?;
        Ok(SpeakerEmbedding { vector: m.into_f64(), source })
    }
}

impl Persist for DiagonalGaussian {
    fn to_matrix(&self) -> Matrix {
        let mut data = self.mu.clone();
        data.extend_from_slice(&self.log_var);
        Matrix {
            dims: vec![2, self.mu.len()],
            data: MatrixData::F64(data),
            meta: Metadata::default().with("kind", "gaussian"),
        }
    }

    fn from_matrix(m: Matrix) -> Result<Self> {
        m.expect_kind("gaussian")?;
        let (r, n) = m.dims2()?;
        if r != 2 {
            return Err(Error::Shape(format!("gaussian needs 2 rows, found {r}")));
        }
        let mut data = m.into_f64();
        let log_var = data.split_off(n);
        Ok(DiagonalGaussian { mu: data, log_var })
    }
}

impl Persist for LatentSequence {
    fn to_matrix(&self) -> Matrix {
        let mut data = self.z.data.clone();
        data.extend_from_slice(&self.eps.data);
        Matrix {
            dims: vec![2 * self.z.rows, self.z.cols],
            data: MatrixData::F64(data),
            meta: Metadata::default().with("kind", "latent").with("source", self.source.as_str()),
        }
    }

    fn from_matrix(m: Matrix) -> Result<Self> {
        m.expect_kind("latent")?;
        let source = LatentSource::parse(m.meta.require("source")?)
            .ok_or_else(|| Error::CorruptHeader("unknown latent source".into()))?;
        let (rows, cols) = m.dims2()?;
        if rows % 2 != 0 {
            return Err(Error::Shape("latent file must hold z and eps halves".into()));
        }
        let mut z = m.into_f64();
        let eps = z.split_off(rows / 2 * cols);
        Ok(LatentSequence {
            z: Tensor::from_vec(rows / 2, cols, z),
            eps: Tensor::from_vec(rows / 2, cols, eps),
            source,
        })
    }
}

impl Persist for Tensor {
    fn to_matrix(&self) -> Matrix {
        Matrix {
            dims: vec![self.rows, self.cols],
            data: MatrixData::F64(self.data.clone()),
            meta: Metadata::default().with("kind", "tensor"),
        }
    }

    fn from_matrix(m: Matrix) -> Result<Self> {
        m.expect_kind("tensor")?;
        let (r, c) = m.dims2()?;
        Ok(Tensor::from_vec(r, c, m.into_f64()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mel_strategy() -> impl Strategy<Value = MelSpectrogram> {
        (1usize..6, 1usize..5).prop_flat_map(|(t, m)| {
            proptest::collection::vec(-20.0f32..20.0, t * m).prop_map(move |data| {
                MelSpectrogram::new(data, t, AudioConfig { n_mels: m, fmax: 7999.5, ..AudioConfig::default() })
            })
        })
    }

    proptest! {
        #[test]
        fn mel_round_trip_is_bitwise(mel in mel_strategy()) {
            let back = MelSpectrogram::from_bytes(&mel.to_bytes()).unwrap();
            prop_assert_eq!(back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            mel.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, mel);
        }

        #[test]
        fn gaussian_and_latent_round_trip(
            mu in proptest::collection::vec(proptest::num::f64::NORMAL, 1..8),
            seed in any::<u64>(),
        ) {
            let n = mu.len();
            let log_var: Vec<f64> = (0..n).map(|i| ((seed >> (i % 60)) & 0xff) as f64 / 17.0 - 7.0).collect();
            let g = DiagonalGaussian { mu: mu.clone(), log_var };
            prop_assert_eq!(DiagonalGaussian::from_bytes(&g.to_bytes()).unwrap(), g);
            let lat = LatentSequence {
                z: Tensor::from_vec(1, n, mu.clone()),
                eps: Tensor::from_vec(1, n, mu.iter().map(|v| -v).collect()),
                source: LatentSource::Prior,
            };
            prop_assert_eq!(LatentSequence::from_bytes(&lat.to_bytes()).unwrap(), lat);
        }

        #[test]
        fn prosody_speaker_phoneme_round_trip(
            durs in proptest::collection::vec(1u32..40, 1..10),
            text in "[a-z \\n=\\\\]{0,12}",
        ) {
            let l = durs.len();
            let p = ProsodyTargets {
                durations: durs.clone(),
                pitch: (0..l).map(|i| 100.0 + i as f64 / 3.0).collect(),
                energy: (0..l).map(|i| i as f64 * 0.01).collect(),
            };
            prop_assert_eq!(ProsodyTargets::from_bytes(&p.to_bytes()).unwrap(), p);
            let ph = PhonemeSequence { ids: durs.iter().map(|&d| d as usize).collect(), text: Some(text) };
            prop_assert_eq!(PhonemeSequence::from_bytes(&ph.to_bytes()).unwrap(), ph);
            let s = SpeakerEmbedding { vector: (0..l).map(|i| i as f64 * 0.1 - 0.3).collect(), source: SpeakerSource::Averaged };
            prop_assert_eq!(SpeakerEmbedding::from_bytes(&s.to_bytes()).unwrap(), s);
        }
    }

    #[test]
    fn truncated_stream_is_corrupt_header() {
        let mel = MelSpectrogram::new(vec![0.5; 6], 2, AudioConfig { n_mels: 3, ..AudioConfig::default() });
        let bytes = mel.to_bytes();
        for cut in [0, 3, 7, 9, 14] {
            match MelSpectrogram::from_bytes(&bytes[..cut]) {
                Err(Error::CorruptHeader(_)) => {}
                other => panic!("cut {cut}: expected corrupt header, got {other:?}"),
            }
        }
    }

    #[test]
    fn short_payload_is_shape_mismatch() {
        let mel = MelSpectrogram::new(vec![0.5; 6], 2, AudioConfig { n_mels: 3, ..AudioConfig::default() });
        let bytes = mel.to_bytes();
        assert!(matches!(MelSpectrogram::from_bytes(&bytes[..bytes.len() - 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn header_layout_is_stable() {
        let t = Tensor::from_vec(1, 2, vec![1.0, 2.0]);
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..6], b"NNSPK1");
        assert_eq!(bytes[6], 2);
        assert_eq!(bytes[7], 2);
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 2, 0, 0, 0]);
        let meta = b"kind=tensor\n";
        assert_eq!(&bytes[16..20], &(meta.len() as u32).to_le_bytes());
        assert_eq!(&bytes[20..20 + meta.len()], meta);
        assert_eq!(&bytes[20 + meta.len()..], &[1.0f64.to_le_bytes(), 2.0f64.to_le_bytes()].concat()[..]);
    }
}
