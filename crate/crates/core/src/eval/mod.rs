//! Calibration-free evaluation: rank-based AUC-ROC over scored
//! segments, with optional duration weighting, plus a synthetic toy
//! corpus for end-to-end validation at desk scale.

pub mod toy;

pub use toy::{make_toy_corpus, ToyCorpus, ToyCorpusSpec};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::infer::ScoredSegment;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("degenerate labels: need at least one positive and one negative")]
    DegenerateLabels,
    #[error("label '{0}' missing from the mapping file")]
    UnmappedLabel(String),
    #[error("bad mapping line {0}: expected 'label<TAB>pos|neg'")]
    BadMapping(usize),
    #[error("non-finite score for {0}")]
    BadScore(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
}

/// One evaluation sample: a score, its truth, and an optional duration
/// weight (1 for unweighted evaluation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledScore {
    pub score: f64,
    pub positive: bool,
    pub weight: f64,
}

/// Rank-based AUC-ROC, equal to `P(score_pos > score_neg) + 0.5 P(tie)`
/// over (weighted) positive/negative pairs.
pub fn auc_roc(items: &[LabeledScore], weighted: bool) -> Result<f64, EvalError> {
    let mut sorted: Vec<&LabeledScore> = items.iter().collect();
    if sorted.iter().any(|s| !s.score.is_finite()) {
        return Err(EvalError::BadScore("(non-finite)".into()));
    }
    sorted.sort_by(|a, b| a.score.partial_cmp(&b.score).unwrap());

    let w = |s: &LabeledScore| if weighted { s.weight } else { 1.0 };
    let total_pos: f64 = sorted.iter().filter(|s| s.positive).map(|s| w(s)).sum();
    let total_neg: f64 = sorted.iter().filter(|s| !s.positive).map(|s| w(s)).sum();
    if total_pos <= 0.0 || total_neg <= 0.0 {
        return Err(EvalError::DegenerateLabels);
    }

    let mut credit = 0.0;
    let mut neg_below = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        // tie group [i, j)
        let mut j = i;
        let mut pos_here = 0.0;
        let mut neg_here = 0.0;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            if sorted[j].positive {
                pos_here += w(sorted[j]);
            } else {
                neg_here += w(sorted[j]);
            }
            j += 1;
        }
        credit += pos_here * (neg_below + 0.5 * neg_here);
        neg_below += neg_here;
        i = j;
    }
    Ok(credit / (total_pos * total_neg))
}

/// Parses a label mapping file: lines of `label<TAB>pos|neg`.
pub fn load_label_map(path: &Path) -> Result<HashMap<String, bool>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, kind) = line.split_once('\t').ok_or(EvalError::BadMapping(lineno + 1))?;
        let positive = match kind.trim() {
            "pos" => true,
            "neg" => false,
            _ => return Err(EvalError::BadMapping(lineno + 1)),
        };
        map.insert(label.to_string(), positive);
    }
    Ok(map)
}

#[derive(Clone, Debug)]
pub struct LabelStats {
    pub label: String,
    pub positive: bool,
    pub count: usize,
    pub mean_score: f64,
    /// 16 equal bins over the score range `[0, 32]`.
    pub histogram: [usize; 16],
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub auc: f64,
    pub weighted_auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub per_label: Vec<LabelStats>,
}

/// Scores against a label->pos/neg mapping: AUC both unweighted and
/// duration-weighted, plus per-label score histograms.
pub fn evaluate(
    scored: &[ScoredSegment],
    mapping: &HashMap<String, bool>,
) -> Result<EvalReport, EvalError> {
    let mut items = Vec::with_capacity(scored.len());
    let mut by_label: BTreeMap<String, LabelStats> = BTreeMap::new();
    for s in scored {
        let positive = *mapping
            .get(&s.segment.label)
            .ok_or_else(|| EvalError::UnmappedLabel(s.segment.label.clone()))?;
        if !s.score.is_finite() {
            return Err(EvalError::BadScore(s.segment.audio_path.clone()));
        }
        items.push(LabeledScore {
            score: s.score,
            positive,
            weight: s.segment.duration_s().max(0.0),
        });
        let stats = by_label
            .entry(s.segment.label.clone())
            .or_insert_with(|| LabelStats {
                label: s.segment.label.clone(),
                positive,
                count: 0,
                mean_score: 0.0,
                histogram: [0; 16],
            });
        stats.count += 1;
        stats.mean_score += s.score;
        let bin = ((s.score / 32.0 * 16.0) as usize).min(15);
        stats.histogram[bin] += 1;
    }
    for stats in by_label.values_mut() {
        stats.mean_score /= stats.count.max(1) as f64;
    }
    let auc = auc_roc(&items, false)?;
    let weighted_auc = auc_roc(&items, true)?;
    Ok(EvalReport {
        auc,
        weighted_auc,
        n_pos: items.iter().filter(|i| i.positive).count(),
        n_neg: items.iter().filter(|i| !i.positive).count(),
        per_label: by_label.into_values().collect(),
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "segments: {} positive, {} negative", self.n_pos, self.n_neg)?;
        writeln!(f, "score histograms (16 bins over [0, 32]):")?;
        for s in &self.per_label {
            let bars: String = s
                .histogram
                .iter()
                .map(|&c| match c {
                    0 => '.',
                    1..=2 => ':',
                    3..=9 => 'o',
                    _ => '#',
                })
                .collect();
            writeln!(
                f,
                "  {:<16} {} n={:<5} mean={:6.2} [{}]",
                s.label,
                if s.positive { "pos" } else { "neg" },
                s.count,
                s.mean_score,
                bars
            )?;
        }
        writeln!(f, "auc_weighted={:.6}", self.weighted_auc)?;
        write!(f, "auc={:.6}", self.auc)
    }
}
