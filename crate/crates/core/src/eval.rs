//! Recognition and classification metrics: edit-distance word error rate,
//! false-alarm and miss rates, confusion matrices and per-class F1.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("empty reference")]
    EmptyReference,
    #[error("no {0} events to normalise by")]
    EmptyDenominator(&'static str),
    #[error("reference has {0} items, hypothesis {1}")]
    LengthMismatch(usize, usize),
    #[error("class id {0} outside 0..{1}")]
    ClassOutOfRange(usize, usize),
}

pub type Result<T> = core::result::Result<T, MetricError>;

/// Substitutions, deletions and insertions of a minimal alignment, plus the
/// reference length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub reference_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

impl core::ops::Add for EditCounts {
    type Output = EditCounts;
    fn add(self, o: EditCounts) -> EditCounts {
        EditCounts {
            substitutions: self.substitutions + o.substitutions,
            deletions: self.deletions + o.deletions,
            insertions: self.insertions + o.insertions,
            reference_len: self.reference_len + o.reference_len,
        }
    }
}

/// Levenshtein alignment with unit costs. Among minimal paths the one with
/// the most exact matches wins; remaining ties prefer substitution, then
/// deletion, then insertion.
pub fn align_and_count<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    // (errors, -matches), compared lexicographically
    let mut d = vec![(0usize, 0isize); (n + 1) * w];
    for j in 0..=m {
        d[j] = (j, 0);
    }
    let step = |(e, h): (usize, isize), err: usize, hit: bool| (e + err, h - hit as isize);
    for i in 1..=n {
        d[i * w] = (i, 0);
        for j in 1..=m {
            let same = reference[i - 1] == hypothesis[j - 1];
            let diag = step(d[(i - 1) * w + j - 1], !same as usize, same);
            d[i * w + j] = diag.min(step(d[(i - 1) * w + j], 1, false)).min(step(d[i * w + j - 1], 1, false));
        }
    }
    let mut c = EditCounts { reference_len: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if step(d[(i - 1) * w + j - 1], !same as usize, same) == here {
                c.substitutions += !same as usize;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && step(d[(i - 1) * w + j], 1, false) == here {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    c
}

/// `(S + D + I) / N`; may exceed 1.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let c = align_and_count(reference, hypothesis);
    Ok(c.errors() as f64 / c.reference_len as f64)
}

/// Word error rate over many utterances, pooled as total errors over total
/// reference length.
pub fn corpus_wer<T: PartialEq>(pairs: &[(&[T], &[T])]) -> Result<f64> {
    let total = pairs.iter().map(|(r, h)| align_and_count(r, h)).fold(EditCounts::default(), |a, b| a + b);
    if total.reference_len == 0 {
        return Err(MetricError::EmptyReference);
    }
    Ok(total.errors() as f64 / total.reference_len as f64)
}

/// Binary detection tallies. A keyword class counts as positive and any
/// class listed as negative counts as negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl DetectionCounts {
    pub fn tally(references: &[usize], hypotheses: &[usize], negatives: &[usize]) -> Result<Self> {
        if references.len() != hypotheses.len() {
            return Err(MetricError::LengthMismatch(references.len(), hypotheses.len()));
        }
        let mut c = Self::default();
        for (r, h) in references.iter().zip(hypotheses) {
            c.push(!negatives.contains(r), !negatives.contains(h));
        }
        Ok(c)
    }

    pub fn push(&mut self, reference_positive: bool, flagged: bool) {
        match (reference_positive, flagged) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// Same tallies read off a confusion matrix (rows = reference).
    pub fn from_confusion(confusion: &[Vec<u64>], negatives: &[usize]) -> Self {
        let mut c = Self::default();
        for (r, row) in confusion.iter().enumerate() {
            for (h, &n) in row.iter().enumerate() {
                match (!negatives.contains(&r), !negatives.contains(&h)) {
                    (true, true) => c.tp += n,
                    (true, false) => c.fn_ += n,
                    (false, true) => c.fp += n,
                    (false, false) => c.tn += n,
                }
            }
        }
        c
    }
}

/// False-alarm rate `FP / (FP + TN)`.
pub fn far(c: &DetectionCounts) -> Result<f64> {
    match c.fp + c.tn {
        0 => Err(MetricError::EmptyDenominator("negative")),
        d => Ok(c.fp as f64 / d as f64),
    }
}

/// Miss rate `FN / (FN + TP)`.
pub fn mr(c: &DetectionCounts) -> Result<f64> {
    match c.fn_ + c.tp {
        0 => Err(MetricError::EmptyDenominator("positive")),
        d => Ok(c.fn_ as f64 / d as f64),
    }
}

/// Hard class ids from soft labels; ties go to the lowest id.
pub fn resolve_soft(labels: &[Vec<f32>]) -> Vec<usize> {
    labels.iter().map(|l| crate::tensor::argmax(l)).collect()
}

/// `confusion[reference][hypothesis]` counts.
pub fn confusion_matrix(references: &[usize], hypotheses: &[usize], class_count: usize) -> Result<Vec<Vec<u64>>> {
    if references.len() != hypotheses.len() {
        return Err(MetricError::LengthMismatch(references.len(), hypotheses.len()));
    }
    let mut m = vec![vec![0u64; class_count]; class_count];
    for (&r, &h) in references.iter().zip(hypotheses) {
        for id in [r, h] {
            if id >= class_count {
                return Err(MetricError::ClassOutOfRange(id, class_count));
            }
        }
        m[r][h] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    /// Each item scored as a one-word utterance.
    pub wer: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mr: Option<f64>,
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Accuracy, per-class precision/recall/F1, macro and support-weighted F1
/// and the single-label WER. Undefined precision or recall counts as 0 and
/// is reported in `warnings`.
pub fn classification_report(references: &[usize], hypotheses: &[usize], class_count: usize) -> Result<EvalReport> {
    let confusion = confusion_matrix(references, hypotheses, class_count)?;
    if references.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let total = references.len() as u64;
    let correct: u64 = (0..class_count).map(|k| confusion[k][k]).sum();
    let mut warnings = Vec::new();
    let per_class: Vec<ClassMetrics> = (0..class_count)
        .map(|k| {
            let tp = confusion[k][k];
            let support: u64 = confusion[k].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[k]).sum();
            let precision = ratio(tp, predicted).unwrap_or_else(|| {
                warnings.push(format!("class {k} is never predicted; precision set to 0"));
                0.0
            });
            let recall = ratio(tp, support).unwrap_or_else(|| {
                warnings.push(format!("class {k} has no reference items; recall set to 0"));
                0.0
            });
            let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
            ClassMetrics { precision, recall, f1, support }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / class_count.max(1) as f64;
    let weighted_f1 = per_class.iter().map(|c| c.f1 * c.support as f64).sum::<f64>() / total as f64;
    let pairs: Vec<(&[usize], &[usize])> =
        references.iter().zip(hypotheses).map(|(r, h)| (core::slice::from_ref(r), core::slice::from_ref(h))).collect();
    Ok(EvalReport {
        labels: (0..class_count).map(|k| format!("{k}")).collect(),
        confusion,
        accuracy: correct as f64 / total as f64,
        per_class,
        macro_f1,
        weighted_f1,
        wer: corpus_wer(&pairs)?,
        far: None,
        mr: None,
        warnings,
    })
}

impl EvalReport {
    pub fn with_labels(mut self, labels: &[String]) -> Self {
        if labels.len() == self.labels.len() {
            self.labels = labels.to_vec();
        }
        self
    }

    /// Fills in FAR and MR, treating `negatives` as the non-keyword classes.
    pub fn with_detection(mut self, negatives: &[usize]) -> Self {
        let c = DetectionCounts::from_confusion(&self.confusion, negatives);
        self.far = far(&c).ok();
        self.mr = mr(&c).ok();
        self
    }

    /// Plain-text table: one row per class, then the averages.
    pub fn to_text(&self) -> String {
        let width = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(12);
        let mut s = format!("{:<width$} {:>9} {:>9} {:>9} {:>8}\n", "class", "precision", "recall", "f1", "support");
        for (label, c) in self.labels.iter().zip(&self.per_class) {
            s += &format!("{label:<width$} {:>9.4} {:>9.4} {:>9.4} {:>8}\n", c.precision, c.recall, c.f1, c.support);
        }
        let total: u64 = self.per_class.iter().map(|c| c.support).sum();
        s += &format!("{:<width$} {:>9} {:>9} {:>9.4} {:>8}\n", "macro avg", "", "", self.macro_f1, total);
        s += &format!("{:<width$} {:>9} {:>9} {:>9.4} {:>8}\n", "weighted avg", "", "", self.weighted_f1, total);
        s += &format!("accuracy {:.2}%  wer {:.2}%", 100.0 * self.accuracy, 100.0 * self.wer);
        if let (Some(f), Some(m)) = (self.far, self.mr) {
            s += &format!("  far {:.2}%  mr {:.2}%", 100.0 * f, 100.0 * m);
        }
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_examples() {
        let r = ['a', 'b', 'c', 'd', 'e'];
        assert_eq!(align_and_count(&r, &r), EditCounts { reference_len: 5, ..Default::default() });
        let c = align_and_count(&r, &['a', 'x', 'c', 'e', 'f']);
        assert_eq!((c.substitutions, c.deletions, c.insertions), (1, 1, 1));
        assert!((wer(&r, &['a', 'x', 'c', 'e', 'f']).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(align_and_count(&r, &[]).deletions, 5);
        assert_eq!(align_and_count(&[] as &[char], &['a']).insertions, 1);
        assert_eq!(wer::<u8>(&[], &[1]), Err(MetricError::EmptyReference));
        assert_eq!(wer(&[1, 2], &[1, 2, 3, 4, 5]).unwrap(), 1.5);
    }

    #[test]
    fn detection_rates() {
        let mut c = DetectionCounts::default();
        (0..10).for_each(|i| c.push(false, i < 2));
        assert_eq!(far(&c), Ok(0.2));
        assert!(mr(&c).is_err());
        (0..4).for_each(|_| c.push(true, true));
        assert_eq!(mr(&c), Ok(0.0));
    }

    #[test]
    fn hand_tallied_three_class() {
        // reference rows, hypothesis columns:
        // [3 1 0]
        // [0 2 2]
        // [1 0 1]
        let refs = [0, 0, 0, 0, 1, 1, 1, 1, 2, 2];
        let hyps = [0, 0, 0, 1, 1, 1, 2, 2, 0, 2];
        let r = classification_report(&refs, &hyps, 3).unwrap();
        assert_eq!(r.confusion, vec![vec![3, 1, 0], vec![0, 2, 2], vec![1, 0, 1]]);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(r.accuracy, 0.6));
        assert!(close(r.wer, 0.4));
        // precision 3/4, 2/3, 1/3; recall 3/4, 1/2, 1/2
        let f1 = [0.75, 4.0 / 7.0, 0.4];
        for (c, f) in r.per_class.iter().zip(f1) {
            assert!(close(c.f1, f));
        }
        assert!(close(r.macro_f1, (0.75 + 4.0 / 7.0 + 0.4) / 3.0));
        assert!(close(r.weighted_f1, (0.75 * 4.0 + 4.0 / 7.0 * 4.0 + 0.4 * 2.0) / 10.0));
        let r = r.with_detection(&[2]);
        // negatives = class 2: fp = 1 (2->0), tn = 1; fn = 2 (1->2), tp = 6
        assert_eq!(r.far, Some(0.5));
        assert_eq!(r.mr, Some(0.25));
    }

    #[test]
    fn never_predicted_class_warns() {
        let r = classification_report(&[0, 1, 2], &[0, 1, 1], 3).unwrap();
        assert_eq!(r.per_class[2].precision, 0.0);
        assert_eq!(r.warnings.len(), 1);
        let perfect = classification_report(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(perfect.macro_f1, 1.0);
        assert!(perfect.warnings.is_empty());
        assert!(matches!(classification_report(&[0], &[0, 1], 2), Err(MetricError::LengthMismatch(1, 2))));
        assert!(matches!(classification_report(&[0], &[3], 2), Err(MetricError::ClassOutOfRange(3, 2))));
    }

    #[test]
    fn soft_ties_go_low() {
        assert_eq!(resolve_soft(&[vec![0.4, 0.4, 0.2], vec![0.1, 0.2, 0.7]]), [0, 2]);
    }
}
