//! Canonical trace format: domain types plus the on-disk JSON schema every
//! downstream pipeline consumes.
//!
//! One trace is stored as one UTF-8 JSON document in a `*.trace.json` file
//! under a root directory:
//!
//! ```json
//! {
//!   "trace_id": "t01",
//!   "app_id": "com.example.app",
//!   "source_dataset": "fixture_a",
//!   "states": [
//!     {
//!       "image_id": "t01-s0",
//!       "image_path": "images/screen.png",
//!       "image_dims": [1080, 1920],
//!       "elements": [
//!         {"text": "Options", "content_description": null, "resource_id": null,
//!          "bbox_raw": [108, 96, 324, 192], "visible": true}
//!       ],
//!       "action": {"kind": "tap", "point_raw": [540, 960], "scale_dims": [1080, 1920]}
//!     }
//!   ]
//! }
//! ```
//!
//! Element order in the `elements` array is the depth-first view-hierarchy
//! order captured at ingestion; the loader assigns each element its position
//! as `node_index`. Relative `image_path` values are resolved against the
//! trace root directory. The final state of a trace carries no action;
//! non-terminal states may carry `"action": null` when the annotation is
//! missing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::bbox::{normalize_bbox, BBox, BBoxError};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {detail}")]
    Schema { file: PathBuf, detail: String },
}

/// Kind of user action recorded on a screen state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Tap,
    Swipe,
    TextEdit,
    Other,
}

/// The action taken *on* a state, in its own annotation coordinate scale.
///
/// Action annotations and view-hierarchy boxes commonly live in different
/// scales, so the point carries the dimensions it was recorded against.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionRecord {
    pub kind: ActionKind,
    pub point_raw: (f64, f64),
    pub scale_dims: (f64, f64),
}

impl ActionRecord {
    /// The action point divided by its own scale, yielding `[0, 1]` coords.
    pub fn normalized_point(&self) -> (f64, f64) {
        (
            self.point_raw.0 / self.scale_dims.0,
            self.point_raw.1 / self.scale_dims.1,
        )
    }
}

/// One view-hierarchy node.
#[derive(Debug, Clone, PartialEq)]
pub struct UIElement {
    pub text: Option<String>,
    pub content_description: Option<String>,
    pub resource_id: Option<String>,
    /// Pixel-coordinate rectangle in view-hierarchy scale (same scale as
    /// the screenshot dimensions).
    pub bbox_raw: [f64; 4],
    pub visible: bool,
    /// Depth-first position within the state's hierarchy; unique per state.
    pub node_index: usize,
}

impl UIElement {
    /// Normalize `bbox_raw` against the screenshot dimensions.
    pub fn normalized_bbox(&self, image_dims: (u32, u32)) -> Result<BBox, BBoxError> {
        normalize_bbox(self.bbox_raw, image_dims)
    }

    pub fn is_text_free(&self) -> bool {
        self.text.is_none() && self.content_description.is_none() && self.resource_id.is_none()
    }
}

/// One screen of an interaction sequence: screenshot reference, view
/// hierarchy, and optionally the action taken on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenState {
    pub image_id: String,
    pub image_path: String,
    pub image_dims: (u32, u32),
    pub elements: Vec<UIElement>,
    pub action: Option<ActionRecord>,
}

impl ScreenState {
    /// Non-null element `text` fields in node order. This is the sequence
    /// compared when deciding whether two consecutive states are identical.
    pub fn text_fields(&self) -> Vec<&str> {
        self.elements
            .iter()
            .filter_map(|e| e.text.as_deref())
            .collect()
    }
}

/// An ordered app interaction sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct UITrace {
    pub trace_id: String,
    pub app_id: String,
    pub source_dataset: String,
    pub states: Vec<ScreenState>,
}

// ---------------------------------------------------------------------------
// Wire schema

/// Serde mirror of the on-disk trace document. Field names and shapes are
/// frozen; `UITrace` is produced from this via validation.
pub mod wire {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Clone, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct TraceFile {
        pub trace_id: String,
        pub app_id: String,
        pub source_dataset: String,
        pub states: Vec<StateRecord>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct StateRecord {
        pub image_id: String,
        pub image_path: String,
        pub image_dims: [u32; 2],
        pub elements: Vec<ElementRecord>,
        pub action: Option<ActionRecord>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct ElementRecord {
        pub text: Option<String>,
        pub content_description: Option<String>,
        pub resource_id: Option<String>,
        pub bbox_raw: [f64; 4],
        pub visible: bool,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    #[serde(deny_unknown_fields)]
    pub struct ActionRecord {
        pub kind: super::ActionKind,
        pub point_raw: [f64; 2],
        pub scale_dims: [f64; 2],
    }
}

impl From<&UITrace> for wire::TraceFile {
    fn from(t: &UITrace) -> Self {
        wire::TraceFile {
            trace_id: t.trace_id.clone(),
            app_id: t.app_id.clone(),
            source_dataset: t.source_dataset.clone(),
            states: t
                .states
                .iter()
                .map(|s| wire::StateRecord {
                    image_id: s.image_id.clone(),
                    image_path: s.image_path.clone(),
                    image_dims: [s.image_dims.0, s.image_dims.1],
                    elements: s
                        .elements
                        .iter()
                        .map(|e| wire::ElementRecord {
                            text: e.text.clone(),
                            content_description: e.content_description.clone(),
                            resource_id: e.resource_id.clone(),
                            bbox_raw: e.bbox_raw,
                            visible: e.visible,
                        })
                        .collect(),
                    action: s.action.as_ref().map(|a| wire::ActionRecord {
                        kind: a.kind,
                        point_raw: [a.point_raw.0, a.point_raw.1],
                        scale_dims: [a.scale_dims.0, a.scale_dims.1],
                    }),
                })
                .collect(),
        }
    }
}

fn validate(file: wire::TraceFile) -> Result<UITrace, String> {
    let tid = &file.trace_id;
    if file.states.is_empty() {
        return Err(format!("trace {tid}: states must be non-empty"));
    }
    let last = file.states.len() - 1;
    let mut states = Vec::with_capacity(file.states.len());
    for (si, s) in file.states.into_iter().enumerate() {
        let at = |detail: String| format!("trace {tid}: states[{si}]: {detail}");
        if s.image_dims[0] == 0 || s.image_dims[1] == 0 {
            return Err(at(format!(
                "image_dims must be positive, got [{}, {}]",
                s.image_dims[0], s.image_dims[1]
            )));
        }
        let mut elements = Vec::with_capacity(s.elements.len());
        for (ei, e) in s.elements.into_iter().enumerate() {
            let raw = e.bbox_raw;
            if raw.iter().any(|v| !v.is_finite()) {
                return Err(at(format!("elements[{ei}].bbox_raw: non-finite coordinate")));
            }
            if raw[0] >= raw[2] || raw[1] >= raw[3] {
                return Err(at(format!(
                    "elements[{ei}].bbox_raw: degenerate rectangle [{}, {}, {}, {}]",
                    raw[0], raw[1], raw[2], raw[3]
                )));
            }
            elements.push(UIElement {
                text: e.text,
                content_description: e.content_description,
                resource_id: e.resource_id,
                bbox_raw: raw,
                visible: e.visible,
                node_index: ei,
            });
        }
        let action = match s.action {
            None => None,
            Some(a) => {
                if si == last {
                    return Err(at("terminal state must not carry an action".into()));
                }
                if a.scale_dims[0] <= 0.0 || a.scale_dims[1] <= 0.0 {
                    return Err(at(format!(
                        "action.scale_dims must be positive, got [{}, {}]",
                        a.scale_dims[0], a.scale_dims[1]
                    )));
                }
                if a.kind == ActionKind::Tap {
                    let (x, y) = (a.point_raw[0], a.point_raw[1]);
                    if x < 0.0 || y < 0.0 || x > a.scale_dims[0] || y > a.scale_dims[1] {
                        return Err(at(format!(
                            "action.point_raw [{x}, {y}] outside scale_dims [{}, {}]",
                            a.scale_dims[0], a.scale_dims[1]
                        )));
                    }
                }
                Some(ActionRecord {
                    kind: a.kind,
                    point_raw: (a.point_raw[0], a.point_raw[1]),
                    scale_dims: (a.scale_dims[0], a.scale_dims[1]),
                })
            }
        };
        states.push(ScreenState {
            image_id: s.image_id,
            image_path: s.image_path,
            image_dims: (s.image_dims[0], s.image_dims[1]),
            elements,
            action,
        });
    }
    Ok(UITrace {
        trace_id: file.trace_id,
        app_id: file.app_id,
        source_dataset: file.source_dataset,
        states,
    })
}

/// Parse one canonical trace document. `file` labels errors only.
pub fn trace_from_json(json: &str, file: &Path) -> Result<UITrace, TraceError> {
    let parsed: wire::TraceFile =
        serde_json::from_str(json).map_err(|e| TraceError::Schema {
            file: file.to_path_buf(),
            detail: e.to_string(), // carries line/column
        })?;
    validate(parsed).map_err(|detail| TraceError::Schema {
        file: file.to_path_buf(),
        detail,
    })
}

fn read_trace_file(path: &Path) -> Result<UITrace, TraceError> {
    let json = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    trace_from_json(&json, path)
}

/// Load traces from a `*.trace.json` file or from every such file under a
/// root directory.
///
/// The returned traces are sorted by `trace_id` (ties broken by path), so the
/// result is independent of filesystem enumeration order. A malformed file
/// fails the load with an error naming the file and record.
pub fn load_traces(path: &Path) -> Result<Vec<UITrace>, TraceError> {
    let mut files: Vec<PathBuf> = Vec::new();
    if path.is_file() {
        files.push(path.to_path_buf());
    } else {
        for entry in WalkDir::new(path).follow_links(true).sort_by_file_name() {
            let entry = entry.map_err(|e| TraceError::Io {
                path: path.to_path_buf(),
                source: e.into(),
            })?;
            let p = entry.path();
            if p.is_file() && p.file_name().is_some_and(|n| {
                n.to_string_lossy().ends_with(".trace.json")
            }) {
                files.push(p.to_path_buf());
            }
        }
        files.sort();
    }
    let mut traces = Vec::with_capacity(files.len());
    for f in &files {
        traces.push((read_trace_file(f)?, f.clone()));
    }
    traces.sort_by(|(a, pa), (b, pb)| a.trace_id.cmp(&b.trace_id).then_with(|| pa.cmp(pb)));
    Ok(traces.into_iter().map(|(t, _)| t).collect())
}

/// Serialize a trace to its canonical JSON document.
pub fn trace_to_json(trace: &UITrace) -> String {
    let wire: wire::TraceFile = trace.into();
    serde_json::to_string_pretty(&wire).expect("trace serialization cannot fail")
}

/// Write `trace` as `<dir>/<trace_id>.trace.json`.
pub fn save_trace(trace: &UITrace, dir: &Path) -> Result<PathBuf, TraceError> {
    let path = dir.join(format!("{}.trace.json", trace.trace_id));
    fs::write(&path, trace_to_json(trace)).map_err(|source| TraceError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
