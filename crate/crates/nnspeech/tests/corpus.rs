use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nnspeech::corpus::{generate_corpus, Corpus, CorpusSpec};
use nnspeech_core::datamodel::Split;

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_spec() -> CorpusSpec {
    CorpusSpec { n_speakers: 5, utterances_per_speaker: 6, seen_eval_per_speaker: 2, ..Default::default() }
}

#[test]
fn same_spec_gives_byte_identical_corpora() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_corpus(&small_spec(), a.path()).unwrap();
    generate_corpus(&small_spec(), b.path()).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta.len(), 4 + 3 * 5 * 6);
    assert_eq!(ta, tb);

    let c = tempfile::tempdir().unwrap();
    generate_corpus(&CorpusSpec { seed: 8, ..small_spec() }, c.path()).unwrap();
    assert_ne!(read_tree(c.path())["mel/s00_u000.bin"], ta["mel/s00_u000.bin"]);
}

#[test]
fn ten_speakers_at_a_fifth_hold_out_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        n_speakers: 10,
        utterances_per_speaker: 2,
        seen_eval_per_speaker: 1,
        unseen_speaker_fraction: 0.2,
        ..Default::default()
    };
    let manifest = generate_corpus(&spec, dir.path()).unwrap();
    let unseen = manifest.speakers(Split::UnseenEval);
    assert_eq!(unseen.len(), 2);
    let train = manifest.speakers(Split::Train);
    assert!(unseen.iter().all(|s| !train.contains(s)));
    assert_eq!(train.len(), 8);
    assert_eq!(manifest.speakers(Split::SeenEval), train);
}

#[test]
fn persisted_features_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(&small_spec(), dir.path()).unwrap();
    let corpus = Corpus::open(dir.path()).unwrap();
    assert_eq!(corpus.spec, small_spec());
    assert_eq!(corpus.manifest.entries.len(), 30);
    for e in &corpus.manifest.entries {
        let mel = corpus.mel(e).unwrap();
        let pros = corpus.prosody(e).unwrap();
        let wav = corpus.wav(e).unwrap();
        assert_eq!(pros.total_frames(), mel.n_frames(), "{}", e.utterance_id);
        assert_eq!(pros.len(), e.phonemes.len());
        assert_eq!(corpus.spec.audio.n_frames(wav.samples.len()), mel.n_frames());
        assert!(mel.n_frames() >= corpus.spec.min_frames);
        assert_eq!(mel.n_mels(), 80);
        assert!(pros.energy.iter().all(|&x| x > 0.0));
    }
    let symbols = fs::read_to_string(dir.path().join("phonemes.txt")).unwrap();
    assert_eq!(symbols.lines().count(), corpus.spec.phoneme_vocab_size);
}

#[test]
fn speakers_are_separable_by_their_average_frame() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec { utterances_per_speaker: 10, seen_eval_per_speaker: 2, ..Default::default() };
    generate_corpus(&spec, dir.path()).unwrap();
    let corpus = Corpus::open(dir.path()).unwrap();
    let means: Vec<(u32, Vec<f64>)> = corpus
        .manifest
        .entries
        .iter()
        .map(|e| {
            let mel = corpus.mel(e).unwrap();
            let mut m = vec![0.0; mel.n_mels()];
            for t in 0..mel.n_frames() {
                for (acc, &v) in m.iter_mut().zip(mel.frame(t)) {
                    *acc += f64::from(v) / mel.n_frames() as f64;
                }
            }
            (e.speaker_id, m)
        })
        .collect();
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0, 0.0, 0);
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d: f64 = means[i].1.iter().zip(&means[j].1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if means[i].0 == means[j].0 {
                within += d;
                nw += 1;
            } else {
                cross += d;
                nc += 1;
            }
        }
    }
    let (within, cross) = (within / nw as f64, cross / nc as f64);
    assert!(within < cross, "within {within} cross {cross}");
}

#[test]
fn invalid_spec_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("corpus");
    let err = generate_corpus(&CorpusSpec { n_speakers: 2, ..Default::default() }, &out).unwrap_err();
    assert!(err.is_validation());
    assert!(!out.exists());
}
