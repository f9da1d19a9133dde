//! Next-token cross-entropy: the language-modeling objective optimized over
//! caption targets, with per-step diagnostics and analytic gradients.
//!
//! The numerics are model-agnostic: any external model that can dump
//! per-step vocabulary logits plus target token ids can be scored through
//! the JSONL interface ([`LogitsRecord`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("duplicate token {0:?}")]
    Duplicate(String),
    #[error("token {0:?} collides with a reserved token")]
    Reserved(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite logit at step {step}, index {index}")]
    NonFiniteLogit { step: usize, index: usize },
    #[error("target id {id} out of range for vocabulary of {vocab_size} at step {step}")]
    InvalidTokenId {
        step: usize,
        id: usize,
        vocab_size: usize,
    },
}

/// Ordered token inventory with `<bos>`, `<eos>`, `<unk>` pinned at indices
/// 0, 1, 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: std::collections::HashMap<String, usize>,
}

impl Vocabulary {
    /// Build from non-reserved word tokens; duplicates and reserved names
    /// are rejected.
    pub fn new(words: impl IntoIterator<Item = String>) -> Result<Self, VocabError> {
        let mut tokens: Vec<String> = vec![BOS.into(), EOS.into(), UNK.into()];
        let mut index = std::collections::HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            index.insert(t.clone(), i);
        }
        for w in words {
            if w == BOS || w == EOS || w == UNK {
                return Err(VocabError::Reserved(w));
            }
            if index.contains_key(&w) {
                return Err(VocabError::Duplicate(w));
            }
            index.insert(w.clone(), tokens.len());
            tokens.push(w);
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Build from a corpus of captions: lowercased whitespace tokens in
    /// first-seen order, duplicates skipped.
    pub fn from_corpus<'a>(captions: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let mut words = Vec::new();
        for caption in captions {
            for tok in caption.to_lowercase().split_whitespace() {
                if tok != BOS && tok != EOS && tok != UNK && seen.insert(tok.to_string()) {
                    words.push(tok.to_string());
                }
            }
        }
        Vocabulary::new(words).expect("corpus words are deduplicated")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved tokens are always present
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Lowercase, split on whitespace, map unknown tokens to `<unk>`, and
    /// append `<eos>`.
    pub fn tokenize(&self, caption: &str) -> TokenizedCaption {
        let mut ids: Vec<usize> = caption
            .to_lowercase()
            .split_whitespace()
            .map(|t| self.id(t).unwrap_or(UNK_ID))
            .collect();
        ids.push(EOS_ID);
        TokenizedCaption { ids }
    }
}

/// Token-id sequence, always terminated with `<eos>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedCaption {
    pub ids: Vec<usize>,
}

impl TokenizedCaption {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Which objective a loss report was computed for. The numerics are shared;
/// the tag records what the target caption was.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Xe,
    Foresight,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    Sum,
    Mean,
}

/// Per-sequence loss: total, per-step negative log-likelihoods, and the
/// per-step gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub objective: Objective,
    pub total: f64,
    pub per_step: Vec<f64>,
    pub grad_logits: Vec<Vec<f64>>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn validate(steps: &[Vec<f64>], target_ids: &[usize]) -> Result<usize, LossError> {
    if steps.len() != target_ids.len() {
        return Err(LossError::LengthMismatch(format!(
            "{} logit steps vs {} target tokens",
            steps.len(),
            target_ids.len()
        )));
    }
    if steps.is_empty() {
        return Err(LossError::LengthMismatch("no decoding steps".into()));
    }
    let vocab_size = steps[0].len();
    if vocab_size == 0 {
        return Err(LossError::LengthMismatch("empty logit vector".into()));
    }
    for (si, step) in steps.iter().enumerate() {
        if step.len() != vocab_size {
            return Err(LossError::LengthMismatch(format!(
                "step {si} has {} logits, step 0 has {vocab_size}",
                step.len()
            )));
        }
        for (i, v) in step.iter().enumerate() {
            if !v.is_finite() {
                return Err(LossError::NonFiniteLogit { step: si, index: i });
            }
        }
        if target_ids[si] >= vocab_size {
            return Err(LossError::InvalidTokenId {
                step: si,
                id: target_ids[si],
                vocab_size,
            });
        }
    }
    Ok(vocab_size)
}

fn xe_core(
    steps: &[Vec<f64>],
    target_ids: &[usize],
    objective: Objective,
    reduction: Reduction,
) -> Result<LossReport, LossError> {
    validate(steps, target_ids)?;
    let mut per_step = Vec::with_capacity(steps.len());
    let mut grads = Vec::with_capacity(steps.len());
    for (logits, &target) in steps.iter().zip(target_ids) {
        let lse = log_sum_exp(logits);
        per_step.push(lse - logits[target]);
        let mut grad: Vec<f64> = logits.iter().map(|&x| (x - lse).exp()).collect();
        grad[target] -= 1.0;
        grads.push(grad);
    }
    let sum: f64 = per_step.iter().sum();
    let total = match reduction {
        Reduction::Sum => sum,
        Reduction::Mean => sum / per_step.len() as f64,
    };
    Ok(LossReport {
        objective,
        total,
        per_step,
        grad_logits: grads,
    })
}

/// Summed negative log-likelihood of the target tokens under the softmax of
/// each step's logits, stabilized with the log-sum-exp max shift.
pub fn xe_loss(steps: &[Vec<f64>], target_ids: &[usize]) -> Result<LossReport, LossError> {
    xe_core(steps, target_ids, Objective::Xe, Reduction::Sum)
}

/// As [`xe_loss`] with a selectable reduction over steps.
pub fn xe_loss_with(
    steps: &[Vec<f64>],
    target_ids: &[usize],
    reduction: Reduction,
) -> Result<LossReport, LossError> {
    xe_core(steps, target_ids, Objective::Xe, reduction)
}

/// Per-step loss gradient: `softmax(logits) - onehot(target)`.
pub fn xe_grad(steps: &[Vec<f64>], target_ids: &[usize]) -> Result<Vec<Vec<f64>>, LossError> {
    Ok(xe_loss(steps, target_ids)?.grad_logits)
}

/// The foresight objective: cross entropy against the *next* screen's
/// caption. Identical numerics to [`xe_loss`].
pub fn foresight_loss(steps: &[Vec<f64>], target_ids: &[usize]) -> Result<LossReport, LossError> {
    xe_core(steps, target_ids, Objective::Foresight, Reduction::Sum)
}

/// The static objective: cross entropy against the current screen's caption
/// (element-list or screen caption), no question input. Identical numerics
/// to [`xe_loss`].
pub fn static_loss(steps: &[Vec<f64>], target_ids: &[usize]) -> Result<LossReport, LossError> {
    xe_core(steps, target_ids, Objective::Static, Reduction::Sum)
}

/// One line of a logits file: per-step vocabulary logits and the target ids
/// they should decode to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogitsRecord {
    pub sample_id: String,
    pub steps: Vec<Vec<f64>>,
    pub target_ids: Vec<usize>,
}

/// One line of the emitted loss-report file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossReportRecord {
    pub sample_id: String,
    pub objective: Objective,
    pub total: f64,
    pub per_step: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_logits: Option<Vec<Vec<f64>>>,
}

impl LossReportRecord {
    pub fn from_report(sample_id: String, report: LossReport, with_grads: bool) -> Self {
        LossReportRecord {
            sample_id,
            objective: report.objective,
            total: report.total,
            per_step: report.per_step,
            grad_logits: with_grads.then_some(report.grad_logits),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        let v = Vocabulary::new(vec!["options".to_string()]).unwrap();
        assert_eq!(v.tokenize("").ids, vec![EOS_ID]);
        assert_eq!(v.tokenize("options").ids, vec![3, EOS_ID]);
        assert_eq!(v.tokenize("OPTIONS").ids, vec![3, EOS_ID]);
        assert_eq!(v.tokenize("zzz").ids, vec![UNK_ID, EOS_ID]);
        assert_eq!(v.tokenize("zzz options").ids, vec![UNK_ID, 3, EOS_ID]);
    }

    #[test]
    fn from_corpus_keeps_first_seen_order() {
        let v = Vocabulary::from_corpus(["save button", "Options save", "new tab"]);
        assert_eq!(v.id("save"), Some(3));
        assert_eq!(v.id("button"), Some(4));
        assert_eq!(v.id("options"), Some(5));
        assert_eq!(v.id("new"), Some(6));
        assert_eq!(v.id("tab"), Some(7));
        assert_eq!(v.len(), 8);
        assert_eq!(v.token(3), Some("save"));
    }

    #[test]
    fn reserved_tokens_pinned() {
        let v = Vocabulary::new(std::iter::empty()).unwrap();
        assert_eq!(v.id(BOS), Some(0));
        assert_eq!(v.id(EOS), Some(1));
        assert_eq!(v.id(UNK), Some(2));
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn duplicate_and_reserved_rejected() {
        assert_eq!(
            Vocabulary::new(vec!["a".to_string(), "a".to_string()]).unwrap_err(),
            VocabError::Duplicate("a".into())
        );
        assert_eq!(
            Vocabulary::new(vec!["<eos>".to_string()]).unwrap_err(),
            VocabError::Reserved("<eos>".into())
        );
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let report = xe_loss(&[vec![0.0; 4]], &[2]).unwrap();
        assert!((report.total - 4.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn near_one_hot_is_near_zero() {
        let report = xe_loss(&[vec![10.0, -10.0, -10.0, -10.0]], &[0]).unwrap();
        assert!(report.total < 1e-6);
        assert!(report.total >= 0.0);
    }

    #[test]
    fn direct_softmax_value() {
        // ln(1 + e^-1 + e^-2) for logits [1,2,3] and target 2
        let report = xe_loss(&[vec![1.0, 2.0, 3.0]], &[2]).unwrap();
        let expected = (1.0 + (-1.0f64).exp() + (-2.0f64).exp()).ln();
        assert!((report.total - expected).abs() < 1e-12);
        assert!((report.total - 0.407606).abs() < 1e-6);
    }

    #[test]
    fn uniform_gradient_symmetry() {
        let grads = xe_grad(&[vec![0.0; 4]], &[0]).unwrap();
        let g = &grads[0];
        assert!((g[0] + 0.75).abs() < 1e-12);
        for v in &g[1..] {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_sums_to_zero() {
        let steps = vec![vec![0.3, -1.2, 4.0, 0.0, 2.2], vec![1.0, 1.0, -3.0, 0.5, 0.0]];
        let grads = xe_grad(&steps, &[4, 0]).unwrap();
        for g in grads {
            let s: f64 = g.iter().sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn objectives_share_numerics() {
        let steps = vec![vec![1.0, 2.0, 3.0], vec![0.0, 0.5, -0.5]];
        let targets = [2, 1];
        let xe = xe_loss(&steps, &targets).unwrap();
        let fore = foresight_loss(&steps, &targets).unwrap();
        let stat = static_loss(&steps, &targets).unwrap();
        assert_eq!(xe.total.to_bits(), fore.total.to_bits());
        assert_eq!(xe.total.to_bits(), stat.total.to_bits());
        assert_eq!(xe.per_step, fore.per_step);
        assert_eq!(fore.objective, Objective::Foresight);
        assert_eq!(stat.objective, Objective::Static);
    }

    #[test]
    fn single_step_eos_only_target() {
        // an empty caption tokenizes to just <eos>: one decoding step
        let v = Vocabulary::new(vec!["w".to_string()]).unwrap();
        let t = v.tokenize("");
        let report = foresight_loss(&[vec![0.0; v.len()]], &t.ids).unwrap();
        assert_eq!(report.per_step.len(), 1);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(
            xe_loss(&[vec![0.0; 4]], &[0, 1]),
            Err(LossError::LengthMismatch(_))
        ));
        assert!(matches!(
            xe_loss(&[vec![0.0, f64::NAN]], &[0]),
            Err(LossError::NonFiniteLogit { .. })
        ));
        assert!(matches!(
            xe_loss(&[vec![0.0, 1.0]], &[5]),
            Err(LossError::InvalidTokenId { .. })
        ));
        assert!(matches!(
            xe_loss(&[vec![0.0, 1.0], vec![0.0]], &[0, 0]),
            Err(LossError::LengthMismatch(_))
        ));
    }

    #[test]
    fn shift_invariance() {
        let base = vec![0.5, -2.0, 1.5, 3.0];
        let shifted: Vec<f64> = base.iter().map(|x| x + 123.456).collect();
        let a = xe_loss(&[base], &[3]).unwrap();
        let b = xe_loss(&[shifted], &[3]).unwrap();
        assert!((a.total - b.total).abs() < 1e-10);
    }

    #[test]
    fn mean_reduction() {
        let steps = vec![vec![0.0; 4], vec![0.0; 4]];
        let sum = xe_loss_with(&steps, &[0, 1], Reduction::Sum).unwrap();
        let mean = xe_loss_with(&steps, &[0, 1], Reduction::Mean).unwrap();
        assert!((sum.total - 2.0 * 4.0f64.ln()).abs() < 1e-12);
        assert!((mean.total - 4.0f64.ln()).abs() < 1e-12);
    }
}
