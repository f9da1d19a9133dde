//! Foresight pipeline: map tap actions to element bounding boxes, filter
//! consecutive state pairs, and emit (screen, action bbox, next-screen
//! caption) training records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::screens::PromptCollection;
use crate::trace::{ActionKind, ScreenState, UITrace};

/// Geometry knobs for action-to-element matching.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Maximum number of symmetric dilation steps tried before falling back
    /// to a synthetic square.
    pub enlarge_steps: u32,
    /// Dilation per step, as a fraction of each screen dimension.
    pub enlarge_pct: f64,
    /// Top banner region height as a fraction of image height; taps landing
    /// above it are excluded as banner navigation.
    pub banner_pct: f64,
    /// Side length in pixels of the synthetic fallback square.
    pub synthetic_px: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            enlarge_steps: 5,
            enlarge_pct: 0.01,
            banner_pct: 0.03,
            synthetic_px: 65.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMethod {
    Exact,
    Enlarged { steps: u32 },
    SyntheticSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcludeReason {
    BannerBack,
}

/// A successful action-to-bbox match.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMatch {
    pub bbox: BBox,
    pub method: MatchMethod,
    /// Number of candidate boxes containing the point at the matched
    /// dilation step (zero for the synthetic fallback).
    pub candidate_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatchOutcome {
    Matched(ActionMatch),
    Excluded(ExcludeReason),
}

/// Pick one box among several containing the action point: minimum Euclidean
/// distance from the point to the box midpoint, ties broken by smaller area,
/// remaining ties by lower node index. The choice is independent of the
/// candidate order.
pub fn resolve_overlaps(point: (f64, f64), candidates: &[(usize, BBox)]) -> Option<(usize, BBox)> {
    candidates
        .iter()
        .map(|(node, bbox)| {
            let (mx, my) = bbox.midpoint();
            let dist = ((point.0 - mx).powi(2) + (point.1 - my).powi(2)).sqrt();
            (dist, bbox.area(), *node, *bbox)
        })
        .min_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1.total_cmp(&b.1))
                .then(a.2.cmp(&b.2))
        })
        .map(|(_, _, node, bbox)| (node, bbox))
}

/// 65x65-pixel (by default) square centered on the action point in image
/// pixel space, clipped to the image, then normalized.
fn synthetic_square(point: (f64, f64), image_dims: (u32, u32), side_px: f64) -> BBox {
    let (w, h) = (image_dims.0 as f64, image_dims.1 as f64);
    let (px, py) = (point.0 * w, point.1 * h);
    let half = side_px / 2.0;
    let x1 = (px - half).max(0.0);
    let x2 = (px + half).min(w);
    let y1 = (py - half).max(0.0);
    let y2 = (py + half).min(h);
    BBox::new(x1 / w, y1 / h, x2 / w, y2 / h)
        .expect("clipped square around an in-bounds point is valid")
}

/// Match a normalized tap point against a screen's elements.
///
/// Banner taps are excluded outright. Otherwise containment is tested at
/// dilation steps `0..=enlarge_steps` (step `k` grows every box by
/// `k * enlarge_pct` of each dimension per side); the first step with any
/// containing box wins, with overlaps resolved by [`resolve_overlaps`] over
/// the dilated geometry. If no step succeeds the synthetic square is used.
pub fn match_tap_point(
    point: (f64, f64),
    state: &ScreenState,
    cfg: &MatchConfig,
) -> MatchOutcome {
    if point.1 < cfg.banner_pct {
        return MatchOutcome::Excluded(ExcludeReason::BannerBack);
    }
    let boxes: Vec<(usize, BBox)> = state
        .elements
        .iter()
        .filter_map(|e| {
            e.normalized_bbox(state.image_dims)
                .ok()
                .map(|b| (e.node_index, b))
        })
        .collect();

    for step in 0..=cfg.enlarge_steps {
        let d = step as f64 * cfg.enlarge_pct;
        let containing: Vec<(usize, BBox)> = boxes
            .iter()
            .map(|(n, b)| (*n, b.dilated(d, d)))
            .filter(|(_, b)| b.contains(point.0, point.1))
            .collect();
        if let Some((_, bbox)) = resolve_overlaps(point, &containing) {
            let method = if step == 0 {
                MatchMethod::Exact
            } else {
                MatchMethod::Enlarged { steps: step }
            };
            return MatchOutcome::Matched(ActionMatch {
                bbox,
                method,
                candidate_count: containing.len(),
            });
        }
    }

    MatchOutcome::Matched(ActionMatch {
        bbox: synthetic_square(point, state.image_dims, cfg.synthetic_px),
        method: MatchMethod::SyntheticSquare,
        candidate_count: 0,
    })
}

/// Match the tap action recorded on `state`, if any, against its elements.
/// Returns `None` when the state has no tap action.
pub fn match_action_to_bbox(state: &ScreenState, cfg: &MatchConfig) -> Option<MatchOutcome> {
    let action = state.action.as_ref()?;
    if action.kind != ActionKind::Tap {
        return None;
    }
    Some(match_tap_point(action.normalized_point(), state, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    Terminal,
    NonTap,
    Identical,
    Unmatched,
    BannerBack,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairVerdict {
    Keep(ActionMatch),
    Drop(DropReason),
}

/// Decide whether the `(s_t, s_{t+1})` pair can become a foresight sample.
///
/// Checks run in order: the final state of a sequence has no following state
/// to caption; only tap actions are used; the two states must differ by image
/// id or by their ordered element text fields; and the tap itself must map to
/// a box rather than being excluded.
pub fn state_pair_filter(
    current: &ScreenState,
    next: Option<&ScreenState>,
    cfg: &MatchConfig,
) -> PairVerdict {
    let Some(next) = next else {
        return PairVerdict::Drop(DropReason::Terminal);
    };
    let is_tap = current
        .action
        .as_ref()
        .is_some_and(|a| a.kind == ActionKind::Tap);
    if !is_tap {
        return PairVerdict::Drop(DropReason::NonTap);
    }
    if current.image_id == next.image_id || current.text_fields() == next.text_fields() {
        return PairVerdict::Drop(DropReason::Identical);
    }
    match match_action_to_bbox(current, cfg).expect("tap action checked above") {
        MatchOutcome::Excluded(ExcludeReason::BannerBack) => {
            PairVerdict::Drop(DropReason::BannerBack)
        }
        MatchOutcome::Matched(m) => PairVerdict::Keep(m),
    }
}

/// The question paired with every foresight sample. Coordinates are printed
/// to four decimal places; element text never appears in the question.
pub fn render_foresight_question(bbox: &BBox) -> String {
    format!(
        "What does the screen show if the UI object found at {} is interacted with?",
        bbox.coord_text()
    )
}

/// One emitted foresight record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForesightSample {
    pub app_id: String,
    pub image_path: String,
    pub bbox: BBox,
    pub question: String,
    pub caption: String,
    pub next_image_path: String,
}

/// Per-reason drop tally, reported in the run manifest. Emitted samples plus
/// all drops account for every state examined.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub terminal: u64,
    pub non_tap: u64,
    pub identical: u64,
    pub unmatched: u64,
    pub banner_back: u64,
    pub missing_caption: u64,
}

impl DropCounts {
    fn bump(&mut self, reason: DropReason) {
        match reason {
            DropReason::Terminal => self.terminal += 1,
            DropReason::NonTap => self.non_tap += 1,
            DropReason::Identical => self.identical += 1,
            DropReason::Unmatched => self.unmatched += 1,
            DropReason::BannerBack => self.banner_back += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.terminal
            + self.non_tap
            + self.identical
            + self.unmatched
            + self.banner_back
            + self.missing_caption
    }
}

#[derive(Debug, Default)]
pub struct ForesightOutput {
    pub samples: Vec<ForesightSample>,
    pub drops: DropCounts,
    /// Total states examined as potential pair starts.
    pub examined: u64,
}

/// Build the foresight sample set.
///
/// `prompts` must come from the same prompt extraction that produced the
/// screen captions, so next-state captions can be joined by prompt key;
/// `captions` maps prompt keys to resolved captions. Kept pairs whose next
/// state has no caption are tallied as `missing_caption`.
pub fn build_foresight_set(
    traces: &[UITrace],
    prompts: &PromptCollection,
    captions: &BTreeMap<String, String>,
    cfg: &MatchConfig,
) -> ForesightOutput {
    // prompt key per (trace, state)
    let mut key_of: BTreeMap<(&str, usize), &str> = BTreeMap::new();
    for (key, site) in &prompts.sites_in_scan_order {
        key_of.insert((site.trace_id.as_str(), site.state_index), key.as_str());
    }

    let mut out = ForesightOutput::default();
    for trace in traces {
        for (si, state) in trace.states.iter().enumerate() {
            out.examined += 1;
            let next = trace.states.get(si + 1);
            match state_pair_filter(state, next, cfg) {
                PairVerdict::Drop(reason) => out.drops.bump(reason),
                PairVerdict::Keep(matched) => {
                    let next = next.expect("kept pairs have a next state");
                    let caption = key_of
                        .get(&(trace.trace_id.as_str(), si + 1))
                        .and_then(|key| captions.get(*key));
                    match caption {
                        None => out.drops.missing_caption += 1,
                        Some(caption) => out.samples.push(ForesightSample {
                            app_id: trace.app_id.clone(),
                            image_path: state.image_path.clone(),
                            bbox: matched.bbox,
                            question: render_foresight_question(&matched.bbox),
                            caption: caption.clone(),
                            next_image_path: next.image_path.clone(),
                        }),
                    }
                }
            }
        }
    }
    out
}
