//! Element-caption pipeline: extract candidate captions from view-hierarchy
//! fields, apply the text and visual filter rules, enforce the per-dataset
//! frequency threshold, deduplicate, and build per-screen element lists.
//!
//! The pipeline is two-phase so the frequency rule sees every occurrence:
//! phase 1 extracts candidates and counts caption occurrences per source
//! dataset, phase 2 demotes below-threshold captions and emits samples.
//! Occurrences are counted over all extractions that pass the text and visual
//! rules, before deduplication.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::io::{ImageStore, IoError};
use crate::trace::{ScreenState, UIElement, UITrace};

/// The generic-word list used by the "does not only consist of generic
/// words" rule, frozen verbatim in `data/generic_words.txt`.
pub fn builtin_generic_words() -> &'static BTreeSet<String> {
    static WORDS: OnceLock<BTreeSet<String>> = OnceLock::new();
    WORDS.get_or_init(|| {
        include_str!("../data/generic_words.txt")
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect()
    })
}

#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Minimum occurrences of a caption within its originating dataset.
    pub min_frequency: u64,
    /// Minimum caption length in characters.
    pub min_length: usize,
    pub generic_words: BTreeSet<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_frequency: 5,
            min_length: 2,
            generic_words: builtin_generic_words().clone(),
        }
    }
}

/// Which view-hierarchy field a candidate caption came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldTag {
    Text,
    ContentDescription,
    ResourceId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooShort,
    Url,
    NonAlphabetic,
    AllGeneric,
    Invisible,
    OutOfBounds,
    ColorBlock,
    LowFrequency,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::TooShort => "too_short",
            RejectReason::Url => "url",
            RejectReason::NonAlphabetic => "non_alphabetic",
            RejectReason::AllGeneric => "all_generic",
            RejectReason::Invisible => "invisible",
            RejectReason::OutOfBounds => "out_of_bounds",
            RejectReason::ColorBlock => "color_block",
            RejectReason::LowFrequency => "low_frequency",
        }
    }
}

/// Candidate caption strings of one element: each present field, lowercased,
/// in (text, content_description, resource_id) order. A text-free element
/// yields an empty list.
pub fn candidate_texts(element: &UIElement) -> Vec<(FieldTag, String)> {
    let mut out = Vec::new();
    if let Some(t) = &element.text {
        out.push((FieldTag::Text, t.to_lowercase()));
    }
    if let Some(t) = &element.content_description {
        out.push((FieldTag::ContentDescription, t.to_lowercase()));
    }
    if let Some(t) = &element.resource_id {
        out.push((FieldTag::ResourceId, t.to_lowercase()));
    }
    out
}

fn looks_like_url(caption: &str) -> bool {
    caption.contains("://")
        || caption.contains("www.")
        || caption.contains(".com")
        || caption.contains(".org")
        || caption.contains(".net")
}

/// Text filter rules, applied to an already-lowercased caption. Returns the
/// first failing rule: longer than one character, not a URL, alphabetic-only
/// tokens, and not every token generic.
pub fn passes_text_rules(caption: &str, cfg: &FilterConfig) -> Result<(), RejectReason> {
    if caption.chars().count() < cfg.min_length {
        return Err(RejectReason::TooShort);
    }
    if looks_like_url(caption) {
        return Err(RejectReason::Url);
    }
    let tokens: Vec<&str> = caption.split_whitespace().collect();
    if tokens.is_empty()
        || tokens
            .iter()
            .any(|t| !t.chars().all(|c| c.is_ascii_lowercase()))
    {
        return Err(RejectReason::NonAlphabetic);
    }
    if tokens.iter().all(|t| cfg.generic_words.contains(*t)) {
        return Err(RejectReason::AllGeneric);
    }
    Ok(())
}

/// True when the crop of `img` under the normalized box holds at least two
/// distinct pixel values.
fn crop_has_two_values(img: &image::RgbaImage, b: &BBox) -> bool {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = (b.x1() * w).floor().max(0.0) as u32;
    let y0 = (b.y1() * h).floor().max(0.0) as u32;
    let x1 = ((b.x2() * w).ceil() as u32).clamp(x0 + 1, img.width());
    let y1 = ((b.y2() * h).ceil() as u32).clamp(y0 + 1, img.height());
    let mut first: Option<&image::Rgba<u8>> = None;
    for y in y0..y1 {
        for x in x0..x1 {
            let px = img.get_pixel(x.min(img.width() - 1), y.min(img.height() - 1));
            match first {
                None => first = Some(px),
                Some(f) if f != px => return true,
                _ => {}
            }
        }
    }
    false
}

/// Visual filter rules for one element: visible, bounding box valid and
/// inside the image, and the screenshot crop is not a single color block.
///
/// Passing `None` for the image skips the color-block check (recorded by the
/// caller in the run manifest). On success the normalized box is returned.
pub fn passes_visual_rules(
    element: &UIElement,
    state: &ScreenState,
    img: Option<&image::RgbaImage>,
) -> Result<BBox, RejectReason> {
    if !element.visible {
        return Err(RejectReason::Invisible);
    }
    let bbox = element
        .normalized_bbox(state.image_dims)
        .map_err(|_| RejectReason::OutOfBounds)?;
    if let Some(img) = img {
        if !crop_has_two_values(img, &bbox) {
            return Err(RejectReason::ColorBlock);
        }
    }
    Ok(bbox)
}

#[derive(Debug, Clone)]
pub enum CandidateOutcome {
    Pass { bbox: BBox },
    Reject { reason: RejectReason },
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub node_index: usize,
    pub field: FieldTag,
    pub caption: String,
    pub outcome: CandidateOutcome,
}

/// All candidate outcomes of one screen, in scan order.
#[derive(Debug, Clone)]
pub struct StateExtraction {
    pub trace_id: String,
    pub app_id: String,
    pub source_dataset: String,
    pub state_index: usize,
    pub image_id: String,
    pub image_path: String,
    pub candidates: Vec<Candidate>,
}

impl StateExtraction {
    pub fn passing(&self) -> impl Iterator<Item = (&Candidate, &BBox)> {
        self.candidates.iter().filter_map(|c| match &c.outcome {
            CandidateOutcome::Pass { bbox } => Some((c, bbox)),
            CandidateOutcome::Reject { .. } => None,
        })
    }
}

fn extract_state(
    trace: &UITrace,
    state_index: usize,
    state: &ScreenState,
    cfg: &FilterConfig,
    images: Option<&ImageStore>,
) -> Result<StateExtraction, IoError> {
    // Decode the screenshot lazily: only needed once a candidate passes the
    // text rules and visibility/bounds checks.
    let mut img: Option<std::sync::Arc<image::RgbaImage>> = None;
    let mut candidates = Vec::new();
    for element in &state.elements {
        for (field, caption) in candidate_texts(element) {
            let outcome = match passes_text_rules(&caption, cfg) {
                Err(reason) => CandidateOutcome::Reject { reason },
                Ok(()) => {
                    let needs_img = images.is_some()
                        && element.visible
                        && element.normalized_bbox(state.image_dims).is_ok();
                    if needs_img && img.is_none() {
                        img = Some(images.unwrap().get(&state.image_path)?);
                    }
                    match passes_visual_rules(element, state, img.as_deref()) {
                        Err(reason) => CandidateOutcome::Reject { reason },
                        Ok(bbox) => CandidateOutcome::Pass { bbox },
                    }
                }
            };
            candidates.push(Candidate {
                node_index: element.node_index,
                field,
                caption,
                outcome,
            });
        }
    }
    Ok(StateExtraction {
        trace_id: trace.trace_id.clone(),
        app_id: trace.app_id.clone(),
        source_dataset: trace.source_dataset.clone(),
        state_index,
        image_id: state.image_id.clone(),
        image_path: state.image_path.clone(),
        candidates,
    })
}

/// Phase 1: run text and visual rules over every candidate of every state.
/// Parallel per trace; output order matches trace/state scan order.
pub fn extract_states(
    traces: &[UITrace],
    cfg: &FilterConfig,
    images: Option<&ImageStore>,
) -> Result<Vec<StateExtraction>, IoError> {
    let per_trace: Result<Vec<Vec<StateExtraction>>, IoError> = traces
        .par_iter()
        .map(|trace| {
            trace
                .states
                .iter()
                .enumerate()
                .map(|(si, state)| extract_state(trace, si, state, cfg, images))
                .collect()
        })
        .collect();
    Ok(per_trace?.into_iter().flatten().collect())
}

/// Per-dataset caption occurrence counts.
#[derive(Debug, Clone, Default)]
pub struct FrequencyIndex {
    counts: BTreeMap<(String, String), u64>,
}

impl FrequencyIndex {
    /// Count `(source_dataset, caption)` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut counts = BTreeMap::new();
        for (ds, cap) in pairs {
            *counts.entry((ds.to_string(), cap.to_string())).or_insert(0) += 1;
        }
        FrequencyIndex { counts }
    }

    pub fn count(&self, dataset: &str, caption: &str) -> u64 {
        self.counts
            .get(&(dataset.to_string(), caption.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn survives(&self, dataset: &str, caption: &str, min_frequency: u64) -> bool {
        self.count(dataset, caption) >= min_frequency
    }

    fn merge(mut self, other: FrequencyIndex) -> FrequencyIndex {
        for (k, v) in other.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
        self
    }
}

/// Count caption occurrences per dataset over every rule-passing candidate.
/// A parallel fold with commutative merge; the result is independent of the
/// worker count.
pub fn count_frequencies(states: &[StateExtraction]) -> FrequencyIndex {
    states
        .par_iter()
        .fold(FrequencyIndex::default, |mut idx, st| {
            for (c, _) in st.passing() {
                *idx.counts
                    .entry((st.source_dataset.clone(), c.caption.clone()))
                    .or_insert(0) += 1;
            }
            idx
        })
        .reduce(FrequencyIndex::default, FrequencyIndex::merge)
}

/// Phase 2: demote passing candidates whose caption falls below the
/// per-dataset frequency threshold.
pub fn apply_frequency_filter(
    states: &mut [StateExtraction],
    index: &FrequencyIndex,
    min_frequency: u64,
) {
    for st in states.iter_mut() {
        let ds = st.source_dataset.clone();
        for c in st.candidates.iter_mut() {
            if matches!(c.outcome, CandidateOutcome::Pass { .. })
                && !index.survives(&ds, &c.caption, min_frequency)
            {
                c.outcome = CandidateOutcome::Reject {
                    reason: RejectReason::LowFrequency,
                };
            }
        }
    }
}

/// One emitted element-caption record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementCaptionSample {
    pub app_id: String,
    pub image_path: String,
    pub bbox: BBox,
    pub caption: String,
}

/// One emitted element-list record: the comma-joined surviving captions of a
/// screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementListSample {
    pub app_id: String,
    pub image_path: String,
    pub caption: String,
}

/// One audit-log line for a rejected candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectRecord {
    pub trace_id: String,
    pub image_path: String,
    pub node_index: usize,
    pub field: FieldTag,
    pub caption: String,
    pub reason: RejectReason,
}

/// Pre-dedup samples in scan order. Boxes are rounded to 4 decimals here,
/// the precision of both the dedup key and the serialized record.
pub fn collect_caption_samples(states: &[StateExtraction]) -> Vec<ElementCaptionSample> {
    states
        .iter()
        .flat_map(|st| {
            st.passing().map(|(c, bbox)| ElementCaptionSample {
                app_id: st.app_id.clone(),
                image_path: st.image_path.clone(),
                bbox: bbox.rounded4(),
                caption: c.caption.clone(),
            })
        })
        .collect()
}

/// Keep exactly one sample per distinct `(app_id, caption, bbox)` key; the
/// first occurrence in input order wins. Output is sorted by key.
pub fn dedup_samples(samples: Vec<ElementCaptionSample>) -> Vec<ElementCaptionSample> {
    let mut seen: BTreeMap<(String, String, [i64; 4]), ElementCaptionSample> = BTreeMap::new();
    for s in samples {
        let key = (s.app_id.clone(), s.caption.clone(), s.bbox.key4());
        seen.entry(key).or_insert(s);
    }
    seen.into_values().collect()
}

/// One list sample per screen with at least one surviving caption, joined by
/// `", "` in node order.
pub fn build_element_lists(states: &[StateExtraction]) -> Vec<ElementListSample> {
    states
        .iter()
        .filter_map(|st| {
            let parts: Vec<&str> = st.passing().map(|(c, _)| c.caption.as_str()).collect();
            if parts.is_empty() {
                return None;
            }
            Some(ElementListSample {
                app_id: st.app_id.clone(),
                image_path: st.image_path.clone(),
                caption: parts.join(", "),
            })
        })
        .collect()
}

/// Every rejected candidate in scan order.
pub fn collect_rejects(states: &[StateExtraction]) -> Vec<RejectRecord> {
    states
        .iter()
        .flat_map(|st| {
            st.candidates.iter().filter_map(|c| match &c.outcome {
                CandidateOutcome::Reject { reason } => Some(RejectRecord {
                    trace_id: st.trace_id.clone(),
                    image_path: st.image_path.clone(),
                    node_index: c.node_index,
                    field: c.field,
                    caption: c.caption.clone(),
                    reason: *reason,
                }),
                CandidateOutcome::Pass { .. } => None,
            })
        })
        .collect()
}

/// Everything the `forge elements` / `forge lists` commands need.
#[derive(Debug)]
pub struct ElementPipelineOutput {
    /// Deduplicated samples, sorted by `(app_id, caption, bbox)`.
    pub captions: Vec<ElementCaptionSample>,
    /// Sample count before deduplication.
    pub pre_dedup_samples: u64,
    pub lists: Vec<ElementListSample>,
    pub rejects: Vec<RejectRecord>,
    pub reject_counts: BTreeMap<String, u64>,
    pub candidate_total: u64,
    pub frequencies: FrequencyIndex,
    pub color_check_skipped: bool,
}

/// Run the full two-phase pipeline over loaded traces. `images` of `None`
/// disables the color-block check.
pub fn run_element_pipeline(
    traces: &[UITrace],
    cfg: &FilterConfig,
    images: Option<&ImageStore>,
) -> Result<ElementPipelineOutput, IoError> {
    let mut states = extract_states(traces, cfg, images)?;
    let frequencies = count_frequencies(&states);
    apply_frequency_filter(&mut states, &frequencies, cfg.min_frequency);

    let pre_dedup = collect_caption_samples(&states);
    let pre_dedup_samples = pre_dedup.len() as u64;
    let captions = dedup_samples(pre_dedup);
    let lists = build_element_lists(&states);
    let rejects = collect_rejects(&states);

    let mut reject_counts: BTreeMap<String, u64> = BTreeMap::new();
    for r in &rejects {
        *reject_counts.entry(r.reason.as_str().to_string()).or_insert(0) += 1;
    }
    let candidate_total = states.iter().map(|s| s.candidates.len() as u64).sum();

    Ok(ElementPipelineOutput {
        captions,
        pre_dedup_samples,
        lists,
        rejects,
        reject_counts,
        candidate_total,
        frequencies,
        color_check_skipped: images.is_none(),
    })
}
