//! Downstream-task evaluation protocols: tappability-as-generation scoring,
//! not-tappable upsampling, grounding-as-generation selection, and the
//! finetuning question templates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbox::BBox;

/// Generation string decoded for a tappable element.
pub const TAPPABLE_CAPTION: &str = "yes the object is interactive";
/// Generation string decoded for a not-tappable element.
pub const NOT_TAPPABLE_CAPTION: &str = "no the object is not interactive";

#[derive(Debug, Error, PartialEq)]
pub enum TasksError {
    #[error("length mismatch: {predictions} predictions vs {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("grounding instance {index}: {detail}")]
    InvalidInstance { index: usize, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapClass {
    Tappable,
    NotTappable,
}

impl TapClass {
    pub fn caption_form(&self) -> &'static str {
        match self {
            TapClass::Tappable => TAPPABLE_CAPTION,
            TapClass::NotTappable => NOT_TAPPABLE_CAPTION,
        }
    }
}

/// Parse a generated string back to a class by prefix match on "yes"/"no".
/// Unparseable strings fall back to not-tappable; the flag reports whether
/// the parse succeeded so callers can tally the fallback.
pub fn parse_tap_prediction(text: &str) -> (TapClass, bool) {
    let t = text.trim().to_lowercase();
    if t.starts_with("yes") {
        (TapClass::Tappable, true)
    } else if t.starts_with("no") {
        (TapClass::NotTappable, true)
    } else {
        (TapClass::NotTappable, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TapReport {
    pub f1: f64,
    pub accuracy: f64,
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
    pub unparseable: u64,
}

/// F1 (tappable as the positive class) and accuracy of generated
/// predictions against labels.
pub fn tappability_scores(
    predictions: &[String],
    labels: &[TapClass],
) -> Result<TapReport, TasksError> {
    if predictions.len() != labels.len() {
        return Err(TasksError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_, mut unparseable) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for (pred, label) in predictions.iter().zip(labels) {
        let (class, parsed) = parse_tap_prediction(pred);
        if !parsed {
            unparseable += 1;
        }
        match (class, label) {
            (TapClass::Tappable, TapClass::Tappable) => tp += 1,
            (TapClass::Tappable, TapClass::NotTappable) => fp += 1,
            (TapClass::NotTappable, TapClass::NotTappable) => tn += 1,
            (TapClass::NotTappable, TapClass::Tappable) => fn_ += 1,
        }
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let total = predictions.len() as f64;
    let accuracy = if total > 0.0 {
        (tp + tn) as f64 / total
    } else {
        0.0
    };
    Ok(TapReport {
        f1,
        accuracy,
        true_positive: tp,
        false_positive: fp,
        true_negative: tn,
        false_negative: fn_,
        unparseable,
    })
}

/// Duplicate every not-tappable sample `factor` times (total copies), keeping
/// tappable samples untouched and preserving the original index order.
pub fn upsample_not_tappable<T: Clone>(samples: &[(T, TapClass)], factor: usize) -> Vec<(T, TapClass)> {
    let mut out = Vec::new();
    for (item, class) in samples {
        let copies = match class {
            TapClass::Tappable => 1,
            TapClass::NotTappable => factor.max(1),
        };
        for _ in 0..copies {
            out.push((item.clone(), *class));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Grounding

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    TokenF1,
    Cider1gram,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundingElement {
    pub element_id: String,
    pub generated_command: String,
}

/// One screen's grounding evaluation: the gold command, every element's
/// generated command, and which element is the target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundingInstance {
    pub gold_command: String,
    pub elements: Vec<GroundingElement>,
    pub target_element_id: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroundingReport {
    pub accuracy: f64,
    pub per_instance: Vec<bool>,
    pub similarity: Similarity,
}

fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase().split_whitespace().map(String::from).collect()
}

/// Token-overlap F1 between two strings. Both empty scores 1, one empty
/// scores 0.
pub fn token_f1(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let mut counts: std::collections::HashMap<&str, i64> = std::collections::HashMap::new();
    for t in &ta {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0i64;
    for t in &tb {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / ta.len() as f64;
    let r = overlap as f64 / tb.len() as f64;
    2.0 * p * r / (p + r)
}

/// Cosine over unigram count vectors. Both empty scores 1, one empty 0.
pub fn cider_1gram(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    if ta.is_empty() && tb.is_empty() {
        return 1.0;
    }
    fn count(v: &[String]) -> std::collections::HashMap<&str, f64> {
        let mut m = std::collections::HashMap::new();
        for t in v {
            *m.entry(t.as_str()).or_insert(0.0) += 1.0;
        }
        m
    }
    let ca = count(&ta);
    let cb = count(&tb);
    let na: f64 = ca.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = cb.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = ca
        .iter()
        .filter_map(|(t, x)| cb.get(t).map(|y| x * y))
        .sum();
    dot / (na * nb)
}

fn score_pair(sim: Similarity, a: &str, b: &str) -> f64 {
    match sim {
        Similarity::TokenF1 => token_f1(a, b),
        Similarity::Cider1gram => cider_1gram(a, b),
    }
}

/// Selection protocol: score every element's generated command against the
/// gold command; the instance counts as correct when the target's score is
/// greater than or equal to every other element's score (top ties count).
pub fn grounding_accuracy(
    instances: &[GroundingInstance],
    similarity: Similarity,
) -> Result<GroundingReport, TasksError> {
    let mut per_instance = Vec::with_capacity(instances.len());
    for (index, inst) in instances.iter().enumerate() {
        if inst.elements.is_empty() {
            return Err(TasksError::InvalidInstance {
                index,
                detail: "no elements".into(),
            });
        }
        let target = inst
            .elements
            .iter()
            .find(|e| e.element_id == inst.target_element_id)
            .ok_or_else(|| TasksError::InvalidInstance {
                index,
                detail: format!("target {:?} not among elements", inst.target_element_id),
            })?;
        let target_score = score_pair(similarity, &target.generated_command, &inst.gold_command);
        let correct = inst
            .elements
            .iter()
            .all(|e| score_pair(similarity, &e.generated_command, &inst.gold_command) <= target_score);
        per_instance.push(correct);
    }
    let accuracy = if per_instance.is_empty() {
        0.0
    } else {
        per_instance.iter().filter(|c| **c).count() as f64 / per_instance.len() as f64
    };
    Ok(GroundingReport {
        accuracy,
        per_instance,
        similarity,
    })
}

// ---------------------------------------------------------------------------
// Finetuning questions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneTask {
    Widget,
    Tap,
    Ground,
}

/// The question prepended to each finetuning sample, with 4-decimal
/// coordinates substituted.
pub fn render_finetune_question(task: FinetuneTask, bbox: &BBox) -> String {
    let coords = bbox.coord_text();
    match task {
        FinetuneTask::Widget => format!(
            "What describes the functionality of the UI object found at {coords}?"
        ),
        FinetuneTask::Tap => format!("Can the UI object found at {coords} be interacted with?"),
        FinetuneTask::Ground => {
            format!("What command refers to the element located at {coords}?")
        }
    }
}
