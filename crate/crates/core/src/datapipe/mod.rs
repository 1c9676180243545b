//! Dataset preparation: segmentation, channel isolation, label
//! construction, keyword curation and augmentation.

mod augment;
pub mod synth;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::PcmBuffer;
use crate::SAMPLE_RATE_HZ;

pub use augment::{
    augment_waveform, mix_at_snr, pitch_shift, spec_augment, AugmentBanks, AugmentConfig, AugmentLog, SpecAugmentConfig,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("channel error: {0}")]
    Channel(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("keyword curation produced no keywords")]
    Curation,
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stitch error: {0}")]
    Stitch(String),
}

fn seconds_to_samples(s: f64) -> usize {
    libm::round(s * SAMPLE_RATE_HZ as f64) as usize
}

/// Fixed-length windows starting every `window_s − overlap_s` seconds; a
/// trailing partial window is dropped.
pub fn segment_audio(pcm: &PcmBuffer, window_s: f64, overlap_s: f64) -> Result<Vec<PcmBuffer>, DataError> {
    if !(window_s > 0.0 && overlap_s >= 0.0 && window_s > overlap_s) {
        return Err(DataError::Config(format!("window {window_s} s must exceed overlap {overlap_s} s")));
    }
    let win = seconds_to_samples(window_s);
    let hop = seconds_to_samples(window_s - overlap_s);
    Ok(segment_starts(pcm.len(), win, hop)
        .map(|s| PcmBuffer::from_samples(pcm.samples[s..s + win].to_vec()))
        .collect())
}

fn segment_starts(len: usize, win: usize, hop: usize) -> impl Iterator<Item = usize> {
    let count = if len < win { 0 } else { (len - win) / hop + 1 };
    (0..count).map(move |i| i * hop)
}

/// Number of segments `segment_audio` yields for a clip of `len` samples.
pub fn segment_count(len: usize, window_s: f64, overlap_s: f64) -> usize {
    let win = seconds_to_samples(window_s);
    let hop = seconds_to_samples(window_s - overlap_s);
    if len < win || hop == 0 {
        0
    } else {
        (len - win) / hop + 1
    }
}

/// Splits interleaved two-channel PCM into two mono clips.
pub fn isolate_channels(interleaved: &[i16], channels: u16) -> Result<(PcmBuffer, PcmBuffer), DataError> {
    if channels != 2 {
        return Err(DataError::Channel(format!("expected 2 channels, got {channels}")));
    }
    if interleaved.len() % 2 != 0 {
        return Err(DataError::Channel("odd number of interleaved samples".into()));
    }
    let left = interleaved.iter().step_by(2).copied().collect();
    let right = interleaved.iter().skip(1).step_by(2).copied().collect();
    Ok((PcmBuffer::from_samples(left), PcmBuffer::from_samples(right)))
}

pub fn interleave(left: &PcmBuffer, right: &PcmBuffer) -> Result<Vec<i16>, DataError> {
    if left.len() != right.len() {
        return Err(DataError::Channel(format!("channel lengths differ: {} vs {}", left.len(), right.len())));
    }
    Ok(left.samples.iter().zip(&right.samples).flat_map(|(&l, &r)| [l, r]).collect())
}

/// Emotion classes in label-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Happy,
    Neutral,
    Sad,
    Angry,
    None,
}

impl Emotion {
    pub const ALL: [Emotion; 5] = [Emotion::Happy, Emotion::Neutral, Emotion::Sad, Emotion::Angry, Emotion::None];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Happy => "happy",
            Emotion::Neutral => "neutral",
            Emotion::Sad => "sad",
            Emotion::Angry => "angry",
            Emotion::None => "none",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Maps raw annotation tags onto retained classes; unmapped tags are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub map: BTreeMap<String, Emotion>,
}

impl Default for ClassMap {
    /// Five retained categories, with excited merged into happy.
    fn default() -> Self {
        let pairs = [
            ("happy", Emotion::Happy),
            ("hap", Emotion::Happy),
            ("excited", Emotion::Happy),
            ("exc", Emotion::Happy),
            ("neutral", Emotion::Neutral),
            ("neu", Emotion::Neutral),
            ("sad", Emotion::Sad),
            ("angry", Emotion::Angry),
            ("ang", Emotion::Angry),
            ("none", Emotion::None),
        ];
        Self { map: pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }
}

impl ClassMap {
    pub fn lookup(&self, tag: &str) -> Option<Emotion> {
        self.map.get(tag.trim().to_ascii_lowercase().as_str()).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub clip_id: String,
    /// One categorical vote per annotator.
    pub votes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel(pub [f32; 5]);

impl SoftLabel {
    pub fn one_hot(e: Emotion) -> Self {
        let mut p = [0.0; 5];
        p[e.index()] = 1.0;
        Self(p)
    }

    /// Most likely class; ties go to the lowest index.
    pub fn argmax(&self) -> Emotion {
        Emotion::ALL[crate::tensor::argmax(&self.0)]
    }
}

/// Fraction of retained votes per class.
pub fn make_soft_label(record: &AnnotationRecord, map: &ClassMap) -> Result<SoftLabel, DataError> {
    let mut counts = [0u32; 5];
    for v in &record.votes {
        if let Some(e) = map.lookup(v) {
            counts[e.index()] += 1;
        }
    }
    let total: u32 = counts.iter().sum();
    if total == 0 {
        return Err(DataError::Label(format!("clip `{}` has no votes for a retained class", record.clip_id)));
    }
    let mut p = [0f32; 5];
    for (p, &c) in p.iter_mut().zip(&counts) {
        *p = c as f32 / total as f32;
    }
    Ok(SoftLabel(p))
}

pub const UNKNOWN_CLASS: &str = "UNKNOWN";
pub const NEGATIVE_CLASS: &str = "NEGATIVE";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub top_per_emotion: usize,
    pub min_count: u64,
    pub max_count: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self { top_per_emotion: 100, min_count: 2_000, max_count: 20_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordEntry {
    pub word: String,
    pub count: u64,
    /// Target instance count when the word is over-represented.
    pub downsample_to: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Curation {
    pub keywords: Vec<KeywordEntry>,
    /// Keywords followed by the two non-keyword classes.
    pub classes: Vec<String>,
}

fn plausible_word(w: &str) -> bool {
    !w.is_empty() && w.chars().all(|c| c.is_ascii_alphabetic() || c == '\'')
}

/// Selects keyword candidates from per-emotion word counts.
///
/// For each emotion the `top_per_emotion` most frequent non-stopword words
/// are taken; the union is filtered by total instance count
/// (`min_count` ≤ n), and words above `max_count` are marked for
/// downsampling. `vocabulary`, when given, restricts words to that set.
pub fn curate_keywords(
    word_freq_per_emotion: &BTreeMap<String, BTreeMap<String, u64>>,
    stopwords: &BTreeSet<String>,
    vocabulary: Option<&BTreeSet<String>>,
    cfg: &CurationConfig,
) -> Result<Curation, DataError> {
    let keep = |w: &str| {
        let w = w.to_ascii_lowercase();
        plausible_word(&w) && !stopwords.contains(&w) && vocabulary.map_or(true, |v| v.contains(&w))
    };
    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    for table in word_freq_per_emotion.values() {
        for (w, &n) in table {
            *totals.entry(w.to_ascii_lowercase()).or_default() += n;
        }
    }
    let mut candidates: BTreeSet<String> = BTreeSet::new();
    for table in word_freq_per_emotion.values() {
        let mut ranked: Vec<(&String, &u64)> = table.iter().filter(|(w, _)| keep(w)).collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        candidates.extend(ranked.into_iter().take(cfg.top_per_emotion).map(|(w, _)| w.to_ascii_lowercase()));
    }
    let keywords: Vec<KeywordEntry> = candidates
        .into_iter()
        .filter_map(|w| {
            let count = totals[&w];
            (count >= cfg.min_count).then(|| KeywordEntry {
                downsample_to: (count > cfg.max_count).then_some(cfg.max_count),
                word: w,
                count,
            })
        })
        .collect();
    if keywords.is_empty() {
        return Err(DataError::Curation);
    }
    let mut classes: Vec<String> = keywords.iter().map(|k| k.word.clone()).collect();
    classes.push(UNKNOWN_CLASS.into());
    classes.push(NEGATIVE_CLASS.into());
    Ok(Curation { keywords, classes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Fixed-length clip centred on the word midpoint, zero-padded past the
/// ends of `pcm`.
pub fn extract_keyword_clip(pcm: &PcmBuffer, al: &AlignmentRecord, duration_s: f64) -> Result<PcmBuffer, DataError> {
    let dur = pcm.duration_s();
    if !(al.start_s >= 0.0 && al.start_s < al.end_s && al.end_s <= dur + 1e-9) {
        return Err(DataError::Alignment(format!(
            "`{}` at {}..{} s does not fit a {dur:.3} s clip",
            al.word, al.start_s, al.end_s
        )));
    }
    let len = seconds_to_samples(duration_s);
    let mid = libm::round((al.start_s + al.end_s) / 2.0 * SAMPLE_RATE_HZ as f64) as i64;
    let start = mid - (len / 2) as i64;
    let samples = (0..len as i64)
        .map(|i| {
            let s = start + i;
            if s < 0 || s >= pcm.len() as i64 {
                0
            } else {
                pcm.samples[s as usize]
            }
        })
        .collect();
    Ok(PcmBuffer::from_samples(samples))
}

pub const CLIP_SAMPLES: usize = SAMPLE_RATE_HZ as usize;

/// Concatenates five one-second clips in order.
pub fn stitch_five(clips: &[PcmBuffer]) -> Result<PcmBuffer, DataError> {
    if clips.len() != 5 {
        return Err(DataError::Stitch(format!("expected 5 clips, got {}", clips.len())));
    }
    if let Some((i, c)) = clips.iter().enumerate().find(|(_, c)| c.len() != CLIP_SAMPLES) {
        return Err(DataError::Stitch(format!("clip {i} has {} samples, expected {CLIP_SAMPLES}", c.len())));
    }
    Ok(PcmBuffer::from_samples(clips.iter().flat_map(|c| c.samples.iter().copied()).collect()))
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clip: String,
    pub label: Vec<f32>,
    pub split: String,
    #[serde(default)]
    pub augmentations: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pcm(n: usize) -> PcmBuffer {
        PcmBuffer::from_samples((0..n).map(|i| (i % 1000) as i16).collect())
    }

    #[test]
    fn segmentation_examples() {
        let s = segment_audio(&pcm(12 * 16_000), 5.0, 1.0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].samples[0], pcm(12 * 16_000).samples[4 * 16_000]);
        assert_eq!(segment_audio(&pcm(5 * 16_000), 5.0, 1.0).unwrap().len(), 1);
        assert!(segment_audio(&pcm(4 * 16_000), 5.0, 1.0).unwrap().is_empty());
        assert!(segment_audio(&pcm(100), 1.0, 1.0).is_err());
    }

    #[test]
    fn channel_isolation() {
        let inter: Vec<i16> = (0..20).map(|i| if i % 2 == 0 { i } else { 0 }).collect();
        let (l, r) = isolate_channels(&inter, 2).unwrap();
        assert!(r.samples.iter().all(|&v| v == 0));
        assert_eq!(l.len(), 10);
        assert_eq!(interleave(&l, &r).unwrap(), inter);
        assert!(matches!(isolate_channels(&inter, 1), Err(DataError::Channel(_))));
    }

    #[test]
    fn soft_label_examples() {
        let map = ClassMap::default();
        let rec = |v: &[&str]| AnnotationRecord { clip_id: "c".into(), votes: v.iter().map(|s| s.to_string()).collect() };
        let l = make_soft_label(&rec(&["angry", "neutral", "angry"]), &map).unwrap();
        assert_eq!(l.0, [0.0, 1.0 / 3.0, 0.0, 2.0 / 3.0, 0.0]);
        assert_eq!(make_soft_label(&rec(&["excited", "happy"]), &map).unwrap().0[0], 1.0);
        assert_eq!(make_soft_label(&rec(&["neutral"; 3]), &map).unwrap(), SoftLabel::one_hot(Emotion::Neutral));
        assert!(matches!(make_soft_label(&rec(&["frustrated"]), &map), Err(DataError::Label(_))));
    }

    #[test]
    fn curation_thresholds() {
        let mut table = BTreeMap::new();
        table.insert("rare".to_string(), 1_999u64);
        table.insert("common".to_string(), 25_000);
        table.insert("fine".to_string(), 2_000);
        table.insert("the".to_string(), 90_000);
        let mut per = BTreeMap::new();
        per.insert("happy".to_string(), table);
        let stop: BTreeSet<String> = ["the".to_string()].into();
        let c = curate_keywords(&per, &stop, None, &CurationConfig::default()).unwrap();
        let words: Vec<&str> = c.keywords.iter().map(|k| k.word.as_str()).collect();
        assert_eq!(words, ["common", "fine"]);
        assert_eq!(c.keywords[0].downsample_to, Some(20_000));
        assert_eq!(c.keywords[1].downsample_to, None);
        assert_eq!(c.classes.len(), c.keywords.len() + 2);
    }

    #[test]
    fn keyword_clip_is_centred_and_padded() {
        let p = pcm(3 * 16_000);
        let al = AlignmentRecord { word: "w".into(), start_s: 1.25, end_s: 1.75 };
        let c = extract_keyword_clip(&p, &al, 1.0).unwrap();
        assert_eq!(c.len(), 16_000);
        assert_eq!(c.samples[0], p.samples[16_000]);
        let edge = AlignmentRecord { word: "w".into(), start_s: 0.0, end_s: 0.2 };
        let c = extract_keyword_clip(&p, &edge, 1.0).unwrap();
        assert!(c.samples[..6_400].iter().all(|&v| v == 0));
        assert_eq!(c.samples[6_400], p.samples[0]);
        let bad = AlignmentRecord { word: "w".into(), start_s: 2.5, end_s: 3.5 };
        assert!(matches!(extract_keyword_clip(&p, &bad, 1.0), Err(DataError::Alignment(_))));
    }

    #[test]
    fn stitching() {
        let clips = vec![PcmBuffer::from_samples(vec![0; CLIP_SAMPLES]); 5];
        assert_eq!(stitch_five(&clips).unwrap().len(), 80_000);
        let mut bad = clips.clone();
        bad[2] = PcmBuffer::from_samples(vec![0; 10]);
        assert!(matches!(stitch_five(&bad), Err(DataError::Stitch(_))));
    }
}
