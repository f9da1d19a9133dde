//! Property tests over the pipeline invariants: scale invariance of bbox
//! normalization, trace round-tripping, dedup idempotence, frequency
//! monotonicity, list reconstruction, loss numerics, and overlap-resolution
//! permutation invariance.

use proptest::prelude::*;

use uiforge_core::bbox::{normalize_bbox, BBox};
use uiforge_core::elements::{dedup_samples, run_element_pipeline, ElementCaptionSample, FilterConfig};
use uiforge_core::foresight::resolve_overlaps;
use uiforge_core::loss::{xe_loss, xe_grad};
use uiforge_core::trace::{
    load_traces, trace_from_json, trace_to_json, ActionKind, ActionRecord, ScreenState, UIElement,
    UITrace,
};

fn rect_strategy() -> impl Strategy<Value = ([f64; 4], (u32, u32))> {
    // integer pixel rects strictly inside a 1080x1920 screen
    (0u32..1000, 1u32..80, 0u32..1800, 1u32..120).prop_map(|(x1, w, y1, h)| {
        (
            [x1 as f64, y1 as f64, (x1 + w) as f64, (y1 + h) as f64],
            (1080, 1920),
        )
    })
}

proptest! {
    #[test]
    fn normalize_is_scale_invariant((rect, dims) in rect_strategy(), k in 1u32..50) {
        let base = normalize_bbox(rect, dims).unwrap();
        let scaled_rect = [
            rect[0] * k as f64,
            rect[1] * k as f64,
            rect[2] * k as f64,
            rect[3] * k as f64,
        ];
        let scaled_dims = (dims.0 * k, dims.1 * k);
        let scaled = normalize_bbox(scaled_rect, scaled_dims).unwrap();
        for (a, b) in base.to_array().iter().zip(scaled.to_array()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bbox_serde_roundtrip(x1 in 0.0f64..0.9, y1 in 0.0f64..0.9, dw in 0.01f64..0.1, dh in 0.01f64..0.1) {
        let b = BBox::new(x1, y1, (x1 + dw).min(1.0), (y1 + dh).min(1.0)).unwrap();
        let json = serde_json::to_string(&b).unwrap();
        let back: BBox = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(b, back);
    }
}

// ---------------------------------------------------------------------------
// Trace round trip

fn word() -> impl Strategy<Value = String> {
    "[a-z]{2,8}"
}

fn element_strategy(node_index: usize) -> impl Strategy<Value = UIElement> {
    (
        prop::option::of(word()),
        prop::option::of(word()),
        prop::option::of("[a-z_]{2,10}"),
        (0u32..90, 1u32..10, 0u32..180, 1u32..20),
        any::<bool>(),
    )
        .prop_map(move |(text, cd, rid, (x1, w, y1, h), visible)| UIElement {
            text,
            content_description: cd,
            resource_id: rid,
            bbox_raw: [x1 as f64, y1 as f64, (x1 + w) as f64, (y1 + h) as f64],
            visible,
            node_index,
        })
}

fn state_strategy(terminal: bool) -> impl Strategy<Value = ScreenState> {
    let elements = prop::collection::vec(any::<bool>(), 0..4).prop_flat_map(|mask| {
        mask.iter()
            .enumerate()
            .map(|(i, _)| element_strategy(i))
            .collect::<Vec<_>>()
    });
    let action = if terminal {
        Just(None).boxed()
    } else {
        prop::option::of((0u32..=100, 0u32..=200, prop::sample::select(vec![
            ActionKind::Tap,
            ActionKind::Swipe,
            ActionKind::TextEdit,
            ActionKind::Other,
        ]))
        .prop_map(|(x, y, kind)| ActionRecord {
            kind,
            point_raw: (x as f64, y as f64),
            scale_dims: (100.0, 200.0),
        }))
        .boxed()
    };
    ("[a-z0-9]{4,8}", elements, action).prop_map(|(id, elements, action)| ScreenState {
        image_id: id.clone(),
        image_path: format!("images/{id}.png"),
        image_dims: (100, 200),
        elements,
        action,
    })
}

fn trace_strategy() -> impl Strategy<Value = UITrace> {
    (1usize..4).prop_flat_map(|n| {
        let states: Vec<_> = (0..n).map(|i| state_strategy(i == n - 1)).collect();
        ("[a-z0-9]{3,6}", "[a-z.]{5,12}", states).prop_map(|(trace_id, app_id, states)| UITrace {
            trace_id,
            app_id,
            source_dataset: "prop".into(),
            states,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_roundtrip(trace in trace_strategy()) {
        let json = trace_to_json(&trace);
        let back = trace_from_json(&json, std::path::Path::new("prop")).unwrap();
        prop_assert_eq!(trace, back);
    }

    #[test]
    fn load_order_independent_of_write_order(ids in prop::collection::btree_set("[a-z0-9]{4,6}", 2..6)) {
        let dir = tempfile::tempdir().unwrap();
        // write in reverse lexicographic order under shuffled filenames
        let ids: Vec<String> = ids.iter().rev().cloned().collect();
        for (n, id) in ids.iter().enumerate() {
            let trace = UITrace {
                trace_id: id.clone(),
                app_id: "com.example".into(),
                source_dataset: "prop".into(),
                states: vec![ScreenState {
                    image_id: format!("{id}-s0"),
                    image_path: "images/x.png".into(),
                    image_dims: (100, 200),
                    elements: vec![],
                    action: None,
                }],
            };
            let json = trace_to_json(&trace);
            std::fs::write(dir.path().join(format!("f{n}.trace.json")), json).unwrap();
        }
        let traces = load_traces(dir.path()).unwrap();
        let got: Vec<&str> = traces.iter().map(|t| t.trace_id.as_str()).collect();
        let mut expected: Vec<&str> = ids.iter().map(String::as_str).collect();
        expected.sort();
        prop_assert_eq!(got, expected);
    }
}

// ---------------------------------------------------------------------------
// Element pipeline properties

fn caption_pool() -> Vec<&'static str> {
    vec!["alpha", "beta", "gamma", "delta", "epsilon"]
}

fn corpus_trace(picks: &[(usize, usize)]) -> Vec<UITrace> {
    // Each pick (caption index, screen) drops one element on one of 4 screens.
    let pool = caption_pool();
    let mut states: Vec<ScreenState> = (0..4)
        .map(|i| ScreenState {
            image_id: format!("s{i}"),
            image_path: format!("images/s{i}.png"),
            image_dims: (100, 200),
            elements: vec![],
            action: None,
        })
        .collect();
    for (n, (cap, screen)) in picks.iter().enumerate() {
        let si = screen % states.len();
        let node_index = states[si].elements.len();
        states[si].elements.push(UIElement {
            text: Some(pool[cap % pool.len()].to_string()),
            content_description: None,
            resource_id: None,
            bbox_raw: [
                (n as f64 % 8.0) * 10.0,
                (n as f64 / 8.0).floor() * 10.0,
                (n as f64 % 8.0) * 10.0 + 8.0,
                (n as f64 / 8.0).floor() * 10.0 + 8.0,
            ],
            visible: true,
            node_index,
        });
    }
    vec![UITrace {
        trace_id: "t0".into(),
        app_id: "com.example".into(),
        source_dataset: "prop".into(),
        states,
    }]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dedup_is_idempotent_and_sorted(picks in prop::collection::vec((0usize..5, 0usize..4), 1..24)) {
        let traces = corpus_trace(&picks);
        let cfg = FilterConfig { min_frequency: 1, ..FilterConfig::default() };
        let out = run_element_pipeline(&traces, &cfg, None).unwrap();
        let again = dedup_samples(out.captions.clone());
        prop_assert_eq!(&again, &out.captions);
        let keys: Vec<_> = out
            .captions
            .iter()
            .map(|s| (s.app_id.clone(), s.caption.clone(), s.bbox.key4()))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        prop_assert_eq!(keys, sorted);
    }

    #[test]
    fn raising_min_frequency_never_adds_samples(
        picks in prop::collection::vec((0usize..5, 0usize..4), 1..24),
        low in 1u64..4,
    ) {
        let traces = corpus_trace(&picks);
        let run = |min_frequency: u64| {
            let cfg = FilterConfig { min_frequency, ..FilterConfig::default() };
            run_element_pipeline(&traces, &cfg, None).unwrap()
        };
        let a = run(low);
        let b = run(low + 1);
        prop_assert!(b.captions.len() <= a.captions.len());
        prop_assert!(b.pre_dedup_samples <= a.pre_dedup_samples);
        prop_assert!(b.lists.len() <= a.lists.len());
    }

    #[test]
    fn list_captions_reconstruct_survivors(
        picks in prop::collection::vec((0usize..5, 0usize..4), 1..24),
        min_frequency in 1u64..3,
    ) {
        let traces = corpus_trace(&picks);
        let cfg = FilterConfig { min_frequency, ..FilterConfig::default() };
        let out = run_element_pipeline(&traces, &cfg, None).unwrap();
        // survivors per image, recomputed from the frequency index
        for list in &out.lists {
            let parts: Vec<&str> = list.caption.split(", ").collect();
            for p in parts {
                prop_assert!(out.frequencies.survives("prop", p, min_frequency));
            }
        }
        // image count of lists is bounded by screens; caption samples bound images
        let caption_images: std::collections::BTreeSet<_> =
            out.captions.iter().map(|s| s.image_path.clone()).collect();
        prop_assert!(caption_images.len() <= out.captions.len().max(1));
    }
}

// ---------------------------------------------------------------------------
// Loss numerics

fn logits_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (2usize..20, 1usize..5).prop_flat_map(|(vocab, steps)| {
        (
            prop::collection::vec(
                prop::collection::vec(-10.0f64..10.0, vocab..=vocab),
                steps..=steps,
            ),
            prop::collection::vec(0usize..vocab, steps..=steps),
        )
    })
}

proptest! {
    #[test]
    fn loss_invariants((steps, targets) in logits_strategy(), shift in -50.0f64..50.0) {
        let report = xe_loss(&steps, &targets).unwrap();
        // non-negative per step, total is the sum
        for v in &report.per_step {
            prop_assert!(*v >= 0.0);
        }
        let sum: f64 = report.per_step.iter().sum();
        prop_assert!((report.total - sum).abs() < 1e-12);

        // shift invariance
        let shifted: Vec<Vec<f64>> = steps
            .iter()
            .map(|s| s.iter().map(|x| x + shift).collect())
            .collect();
        let shifted_report = xe_loss(&shifted, &targets).unwrap();
        for (a, b) in report.per_step.iter().zip(&shifted_report.per_step) {
            prop_assert!((a - b).abs() < 1e-10);
        }

        // recovered softmax sums to one, gradient sums to zero
        let grads = xe_grad(&steps, &targets).unwrap();
        for (g, &t) in grads.iter().zip(&targets) {
            let grad_sum: f64 = g.iter().sum();
            prop_assert!(grad_sum.abs() < 1e-12);
            let mut prob_sum: f64 = g.iter().sum();
            prob_sum += 1.0; // add back the one-hot
            prop_assert!((prob_sum - 1.0).abs() < 1e-12);
            // p(target) = grad[target] + 1 must be a probability
            let pt = g[t] + 1.0;
            prop_assert!((0.0..=1.0).contains(&pt));
        }
    }
}

// ---------------------------------------------------------------------------
// Overlap resolution

proptest! {
    #[test]
    fn resolve_overlaps_is_permutation_invariant(
        boxes in prop::collection::vec((0u32..80, 1u32..20, 0u32..180, 1u32..20), 1..6),
        seed in any::<u64>(),
    ) {
        let candidates: Vec<(usize, BBox)> = boxes
            .iter()
            .enumerate()
            .map(|(i, (x1, w, y1, h))| {
                (
                    i,
                    BBox::new(
                        *x1 as f64 / 100.0,
                        *y1 as f64 / 200.0,
                        (*x1 + *w) as f64 / 100.0,
                        (*y1 + *h) as f64 / 200.0,
                    )
                    .unwrap(),
                )
            })
            .collect();
        let point = (0.41, 0.43);
        let baseline = resolve_overlaps(point, &candidates).unwrap();
        // rotate by the seed for a cheap permutation
        let mut rotated = candidates.clone();
        let n = rotated.len().max(1);
        rotated.rotate_left((seed as usize) % n);
        let permuted = resolve_overlaps(point, &rotated).unwrap();
        prop_assert_eq!(baseline.0, permuted.0);
        prop_assert_eq!(baseline.1, permuted.1);
    }
}

// ---------------------------------------------------------------------------
// Unique-image bound

#[test]
fn unique_images_bounded_by_samples() {
    let picks: Vec<(usize, usize)> = (0..12).map(|i| (i % 5, i % 4)).collect();
    let traces = corpus_trace(&picks);
    let cfg = FilterConfig {
        min_frequency: 1,
        ..FilterConfig::default()
    };
    let out = run_element_pipeline(&traces, &cfg, None).unwrap();
    let images: std::collections::BTreeSet<&str> =
        out.captions.iter().map(|s| s.image_path.as_str()).collect();
    assert!(images.len() <= out.captions.len());
    let list_images: std::collections::BTreeSet<&str> =
        out.lists.iter().map(|s| s.image_path.as_str()).collect();
    assert_eq!(list_images.len(), out.lists.len());
}

#[allow(dead_code)]
fn unused(_: ElementCaptionSample) {}
