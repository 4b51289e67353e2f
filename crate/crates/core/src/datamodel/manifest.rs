//! Line-delimited corpus manifest.
//!
//! The first line is `# nnspeech-manifest v1`; each following line is one
//! utterance with tab-separated fields:
//! `utterance_id  speaker_id  split  wav  mel  prosody  phoneme ids (space separated)`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "# nnspeech-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    SeenEval,
    UnseenEval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::SeenEval => "seen-eval",
            Split::UnseenEval => "unseen-eval",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "seen-eval" => Some(Split::SeenEval),
            "unseen-eval" => Some(Split::UnseenEval),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub speaker_id: u32,
    pub split: Split,
    /// Paths are relative to the corpus directory.
    pub wav: String,
    pub mel: String,
    pub prosody: String,
    pub phonemes: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Sorted, de-duplicated speaker ids appearing in `split`.
    pub fn speakers(&self, split: Split) -> Vec<u32> {
        let mut ids: Vec<u32> = self.split(split).map(|e| e.speaker_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            let ids: Vec<String> = e.phonemes.iter().map(ToString::to_string).collect();
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.utterance_id,
                e.speaker_id,
                e.split.as_str(),
                e.wav,
                e.mel,
                e.prosody,
                ids.join(" ")
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(Error::CorruptHeader("manifest header missing".into()));
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = |what: &str| Error::CorruptHeader(format!("manifest line {}: {what}", n + 2));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 7 {
                return Err(bad("expected 7 tab-separated fields"));
            }
            let phonemes = fields[6]
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<core::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad phoneme id"))?;
            entries.push(ManifestEntry {
                utterance_id: fields[0].into(),
                speaker_id: fields[1].parse().map_err(|_| bad("bad speaker id"))?,
                split: Split::parse(fields[2]).ok_or_else(|| bad("unknown split"))?,
                wav: fields[3].into(),
                mel: fields[4].into(),
                prosody: fields[5].into(),
                phonemes,
            });
        }
        Ok(Self { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Validate;
    use alloc::vec;

    fn entry(id: &str, spk: u32, split: Split) -> ManifestEntry {
        ManifestEntry {
            utterance_id: id.into(),
            speaker_id: spk,
            split,
            wav: format!("wav/{id}.bin"),
            mel: format!("mel/{id}.bin"),
            prosody: format!("prosody/{id}.bin"),
            phonemes: vec![3, 1, 4],
        }
    }

    #[test]
    fn three_entries_emit_three_records_in_order() {
        let m = CorpusManifest {
            entries: vec![
                entry("b", 1, Split::Train),
                entry("a", 0, Split::SeenEval),
                entry("c", 2, Split::UnseenEval),
            ],
        };
        let text = m.to_text();
        assert_eq!(text.lines().count(), 4);
        let back = CorpusManifest::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert!(back.validate().is_pass());
    }

    #[test]
    fn unseen_speaker_in_train_is_rejected() {
        let m = CorpusManifest { entries: vec![entry("a", 1, Split::Train), entry("b", 1, Split::UnseenEval)] };
        assert!(m.validate().mentions("unseen-eval speakers also in train"));
    }

    #[test]
    fn missing_header_is_corrupt() {
        assert!(matches!(CorpusManifest::from_text("a\t1\n"), Err(Error::CorruptHeader(_))));
    }
}
