//! End-to-end CLI behaviour: exit codes, command dependencies, eval command
//! outputs, and stats accounting.

use std::path::{Path, PathBuf};
use std::process::Command;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_uiforge"))
        .args(args)
        .output()
        .expect("run uiforge")
}

fn run_ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "uiforge {args:?}:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn metrics(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

fn write_jsonl(path: &Path, lines: &[serde_json::Value]) {
    let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(path, body).unwrap();
}

#[test]
fn foresight_before_captions_exits_1_with_dependency_message() {
    let out = tempfile::tempdir().unwrap();
    let traces = fixtures().join("traces");
    let result = run(&[
        "forge", "foresight",
        "--traces", traces.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("forge captions"), "stderr was: {stderr}");
}

#[test]
fn missing_traces_dir_exits_1() {
    let out = tempfile::tempdir().unwrap();
    let result = run(&[
        "forge", "elements",
        "--traces", "/nonexistent/traces",
        "--out", out.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn malformed_trace_exits_2_naming_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.trace.json"),
        r#"{"trace_id": "bad", "app_id": "a", "source_dataset": "d", "states": [
            {"image_id": "s0", "image_path": "x.png", "image_dims": [100, 200],
             "elements": [{"text": "hi", "content_description": null, "resource_id": null,
                           "bbox_raw": [0.5, 0.5, 0.2, 0.9], "visible": true}],
             "action": null}
        ]}"#,
    )
    .unwrap();
    let result = run(&[
        "forge", "elements",
        "--traces", dir.path().to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("bad.trace.json"), "{stderr}");
    assert!(stderr.contains("states[0]"), "{stderr}");
}

#[test]
fn fixture_miss_exits_3() {
    let out = tempfile::tempdir().unwrap();
    let traces = fixtures().join("traces");
    let empty_fixture = out.path().join("empty.json");
    std::fs::write(&empty_fixture, "{}").unwrap();
    let result = run(&[
        "forge", "captions",
        "--traces", traces.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
        "--provider", "fixture",
        "--fixture", empty_fixture.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(3));
}

#[test]
fn eval_loss_uniform_logits_mean_is_ln4() {
    let dir = tempfile::tempdir().unwrap();
    let logits = dir.path().join("logits.jsonl");
    write_jsonl(
        &logits,
        &[
            serde_json::json!({"sample_id": "a", "steps": [[0.0, 0.0, 0.0, 0.0]], "target_ids": [1]}),
            serde_json::json!({"sample_id": "b", "steps": [[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]], "target_ids": [0, 3]}),
        ],
    );
    run_ok(&[
        "eval", "loss",
        "--logits", logits.to_str().unwrap(),
        "--objective", "foresight",
        "--out", dir.path().to_str().unwrap(),
    ]);
    let m = metrics(dir.path());
    let ln4 = 4.0f64.ln();
    assert!((m["mean_per_step"].as_f64().unwrap() - ln4).abs() < 1e-12);
    assert_eq!(m["objective"], "foresight");
    assert_eq!(m["num_steps"], 3);
    let reports = std::fs::read_to_string(dir.path().join("loss_reports.jsonl")).unwrap();
    assert_eq!(reports.lines().count(), 2);
    // gradients excluded unless requested
    assert!(!reports.contains("grad_logits"));
}

#[test]
fn eval_loss_bad_record_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let logits = dir.path().join("logits.jsonl");
    write_jsonl(
        &logits,
        &[serde_json::json!({"sample_id": "a", "steps": [[0.0, 0.0]], "target_ids": [7]})],
    );
    let result = run(&[
        "eval", "loss",
        "--logits", logits.to_str().unwrap(),
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn eval_cider_cli_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let cands = dir.path().join("candidates.jsonl");
    let refs = dir.path().join("references.jsonl");
    write_jsonl(
        &cands,
        &[
            serde_json::json!({"id": "a", "text": "a music player screen"}),
            serde_json::json!({"id": "b", "text": "something unrelated"}),
        ],
    );
    write_jsonl(
        &refs,
        &[
            serde_json::json!({"id": "a", "texts": ["a music player screen"]}),
            serde_json::json!({"id": "b", "texts": ["a photo gallery grid"]}),
        ],
    );
    run_ok(&[
        "eval", "cider",
        "--candidates", cands.to_str().unwrap(),
        "--references", refs.to_str().unwrap(),
        "--out", dir.path().to_str().unwrap(),
    ]);
    let m = metrics(dir.path());

    let mut c = std::collections::BTreeMap::new();
    c.insert("a".to_string(), "a music player screen".to_string());
    c.insert("b".to_string(), "something unrelated".to_string());
    let mut r = std::collections::BTreeMap::new();
    r.insert("a".to_string(), vec!["a music player screen".to_string()]);
    r.insert("b".to_string(), vec!["a photo gallery grid".to_string()]);
    let expected = uiforge_core::cider::cider(
        &c,
        &r,
        &uiforge_core::cider::CiderConfig::default(),
    )
    .unwrap();
    assert!(
        (m["corpus_score"].as_f64().unwrap() - expected.corpus_score).abs() < 1e-12
    );
    // identical candidate scores the full 10.0 when every n-gram is informative
    assert!(m["per_image"]["a"].as_f64().unwrap() > 0.0);
    assert_eq!(m["per_image"]["b"].as_f64().unwrap(), 0.0);
}

#[test]
fn eval_grounding_tie_counts_as_correct() {
    let dir = tempfile::tempdir().unwrap();
    let instances = dir.path().join("instances.jsonl");
    write_jsonl(
        &instances,
        &[
            serde_json::json!({
                "gold_command": "open the menu",
                "elements": [
                    {"element_id": "t", "generated_command": "open the menu"},
                    {"element_id": "x", "generated_command": "open the menu"}
                ],
                "target_element_id": "t"
            }),
            serde_json::json!({
                "gold_command": "open the menu",
                "elements": [
                    {"element_id": "t", "generated_command": "something else"},
                    {"element_id": "x", "generated_command": "open the menu"}
                ],
                "target_element_id": "t"
            }),
        ],
    );
    run_ok(&[
        "eval", "grounding",
        "--instances", instances.to_str().unwrap(),
        "--out", dir.path().to_str().unwrap(),
    ]);
    let m = metrics(dir.path());
    assert_eq!(m["accuracy"].as_f64().unwrap(), 0.5);
    assert_eq!(m["per_instance"][0], true);
    assert_eq!(m["per_instance"][1], false);
}

#[test]
fn eval_grounding_unknown_similarity_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let instances = dir.path().join("instances.jsonl");
    write_jsonl(&instances, &[]);
    let result = run(&[
        "eval", "grounding",
        "--instances", instances.to_str().unwrap(),
        "--similarity", "bleu",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn eval_tappability_cli() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("predictions.jsonl");
    let labels = dir.path().join("labels.jsonl");
    write_jsonl(
        &preds,
        &[
            serde_json::json!({"id": "1", "text": "yes the object is interactive"}),
            serde_json::json!({"id": "2", "text": "no the object is not interactive"}),
            serde_json::json!({"id": "3", "text": "???"}),
        ],
    );
    write_jsonl(
        &labels,
        &[
            serde_json::json!({"id": "1", "class": "tappable"}),
            serde_json::json!({"id": "2", "class": "not_tappable"}),
            serde_json::json!({"id": "3", "class": "not_tappable"}),
        ],
    );
    run_ok(&[
        "eval", "tappability",
        "--predictions", preds.to_str().unwrap(),
        "--labels", labels.to_str().unwrap(),
        "--out", dir.path().to_str().unwrap(),
    ]);
    let m = metrics(dir.path());
    assert_eq!(m["f1"].as_f64().unwrap(), 1.0);
    assert_eq!(m["accuracy"].as_f64().unwrap(), 1.0);
    assert_eq!(m["unparseable"], 1);
}

#[test]
fn stats_reports_the_four_sets() {
    let out = tempfile::tempdir().unwrap();
    let traces = fixtures().join("traces");
    let fixture = fixtures().join("captions_fixture.json");
    let base = [
        "--traces", traces.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
    ];
    for set in ["elements", "lists"] {
        let mut args = vec!["forge", set];
        args.extend_from_slice(&base);
        run_ok(&args);
    }
    let mut args = vec![
        "forge", "captions",
        "--provider", "fixture",
        "--fixture", fixture.to_str().unwrap(),
    ];
    args.extend_from_slice(&base);
    run_ok(&args);
    let mut args = vec!["forge", "foresight"];
    args.extend_from_slice(&base);
    run_ok(&args);

    run_ok(&["stats", "--out", out.path().to_str().unwrap()]);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("stats.json")).unwrap())
            .unwrap();
    assert_eq!(stats["element"]["samples"], 10);
    assert_eq!(stats["element_list"]["samples"], 11);
    assert_eq!(stats["screen"]["samples"], 25);
    assert_eq!(stats["screen"]["unique_images"], 24); // one screenshot shared
    assert_eq!(stats["screen"]["unique_captions"], 19);
    assert_eq!(stats["foresight"]["samples"], 4);
    assert!(
        stats["foresight"]["samples"].as_u64() <= stats["screen"]["samples"].as_u64(),
        "foresight row must not exceed the screen row"
    );
    // unique captions never exceed samples
    for set in ["element", "element_list", "screen", "foresight"] {
        assert!(
            stats[set]["unique_captions"].as_u64() <= stats[set]["samples"].as_u64(),
            "{set}"
        );
    }
}

#[test]
fn stats_on_empty_file_is_zeros() {
    let out = tempfile::tempdir().unwrap();
    std::fs::write(out.path().join("element_captions.jsonl"), "").unwrap();
    run_ok(&["stats", "--out", out.path().to_str().unwrap()]);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("stats.json")).unwrap())
            .unwrap();
    assert_eq!(stats["element"]["samples"], 0);
    assert_eq!(stats["element"]["unique_images"], 0);
}

#[test]
fn stats_on_malformed_file_exits_2() {
    let out = tempfile::tempdir().unwrap();
    std::fs::write(out.path().join("element_captions.jsonl"), "not json\n").unwrap();
    let result = run(&["stats", "--out", out.path().to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let config = dir.path().join("forge.toml");
    std::fs::write(&config, "min_frequency = 1\n").unwrap();
    let traces = fixtures().join("traces");
    // config min_frequency=1 keeps every caption that passes the other rules
    run_ok(&[
        "forge", "elements",
        "--traces", traces.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
        "--config", config.to_str().unwrap(),
    ]);
    let captions = std::fs::read_to_string(out.path().join("element_captions.jsonl")).unwrap();
    assert!(captions.contains("\"rare\""));
    // flag overrides the file back to the default threshold
    run_ok(&[
        "forge", "elements",
        "--traces", traces.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
        "--config", config.to_str().unwrap(),
        "--min-freq", "5",
    ]);
    let captions = std::fs::read_to_string(out.path().join("element_captions.jsonl")).unwrap();
    assert!(!captions.contains("\"rare\""));
}

#[test]
fn manifest_lists_every_output_file_with_digest() {
    let out = tempfile::tempdir().unwrap();
    let traces = fixtures().join("traces");
    run_ok(&[
        "forge", "elements",
        "--traces", traces.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
    ]);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.path().join("manifest_elements.json")).unwrap(),
    )
    .unwrap();
    let files = manifest["files"].as_array().unwrap();
    let names: Vec<&str> = files.iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert!(names.contains(&"element_captions.jsonl"));
    assert!(names.contains(&"rejects.jsonl"));
    for f in files {
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
        assert!(f["records"].as_u64().is_some());
    }
    assert!(manifest["config_hash"].as_str().unwrap().len() == 32);
    assert!(manifest["started_at"].as_str().is_some());
    assert!(manifest["finished_at"].as_str().is_some());
}

#[test]
fn remaining_sample_sets_match_their_golden_files() {
    let out = tempfile::tempdir().unwrap();
    let traces = fixtures().join("traces");
    let fixture = fixtures().join("captions_fixture.json");
    let base = [
        "--traces", traces.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
    ];
    for set in ["lists", "prompts"] {
        let mut args = vec!["forge", set];
        args.extend_from_slice(&base);
        run_ok(&args);
    }
    let mut args = vec![
        "forge", "captions",
        "--provider", "fixture",
        "--fixture", fixture.to_str().unwrap(),
    ];
    args.extend_from_slice(&base);
    run_ok(&args);
    let mut args = vec!["forge", "foresight"];
    args.extend_from_slice(&base);
    run_ok(&args);

    for name in [
        "element_lists.jsonl",
        "screen_prompts.jsonl",
        "screen_captions.jsonl",
        "foresight.jsonl",
    ] {
        let produced = std::fs::read(out.path().join(name)).unwrap();
        let golden = std::fs::read(fixtures().join("golden").join(name)).unwrap();
        assert_eq!(produced, golden, "{name} drifted from its golden file");
    }

    // fan-out conservation: multiplicities plus skipped screens account for
    // every state in the corpus
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.path().join("manifest_prompts.json")).unwrap(),
    )
    .unwrap();
    let with_prompts = manifest["input_counts"]["screens_with_prompts"].as_u64().unwrap();
    let skipped = manifest["input_counts"]["screens_skipped_empty"].as_u64().unwrap();
    let states = manifest["input_counts"]["states"].as_u64().unwrap();
    assert_eq!(with_prompts + skipped, states);
    assert_eq!((with_prompts, skipped, states), (25, 1, 26));
}

#[test]
fn emitted_captions_pass_the_rules_post_hoc() {
    use uiforge_core::bbox::BBox;
    use uiforge_core::elements::{passes_text_rules, FilterConfig};

    let golden = fixtures().join("golden/element_captions.jsonl");
    let cfg = FilterConfig::default();
    let body = std::fs::read_to_string(golden).unwrap();
    let mut checked = 0;
    for line in body.lines().filter(|l| !l.trim().is_empty()) {
        let rec: serde_json::Value = serde_json::from_str(line).unwrap();
        let caption = rec["caption"].as_str().unwrap();
        assert!(passes_text_rules(caption, &cfg).is_ok(), "{caption}");
        // a valid normalized box deserializes; an invalid one errors
        let bbox: BBox = serde_json::from_value(rec["bbox"].clone()).unwrap();
        assert!(bbox.area() > 0.0);
        checked += 1;
    }
    assert_eq!(checked, 10);
}

#[test]
fn enlarge_steps_zero_turns_near_misses_into_synthetic_squares() {
    let out = tempfile::tempdir().unwrap();
    let traces = fixtures().join("traces");
    let fixture = fixtures().join("captions_fixture.json");
    let base = [
        "--traces", traces.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
    ];
    let mut args = vec![
        "forge", "captions",
        "--provider", "fixture",
        "--fixture", fixture.to_str().unwrap(),
    ];
    args.extend_from_slice(&base);
    run_ok(&args);
    let mut args = vec!["forge", "foresight", "--enlarge-steps", "0"];
    args.extend_from_slice(&base);
    run_ok(&args);
    let body = std::fs::read_to_string(out.path().join("foresight.jsonl")).unwrap();
    // the one-step-enlargement pair now matches via the 65x65 fallback square
    let t08: Vec<serde_json::Value> = body
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .filter(|r: &serde_json::Value| {
            r["image_path"].as_str().unwrap().contains("t08-s1")
        })
        .collect();
    assert_eq!(t08.len(), 1);
    let bbox = t08[0]["bbox"].as_array().unwrap();
    // square of 65px centered on (39.5, 90) in a 100x200 image
    let x1 = bbox[0].as_f64().unwrap();
    assert!((x1 - 0.07).abs() < 1e-9, "expected clipped square, got {bbox:?}");
}

#[test]
fn live_provider_requires_api_key_env() {
    let out = tempfile::tempdir().unwrap();
    let traces = fixtures().join("traces");
    let result = Command::new(env!("CARGO_BIN_EXE_uiforge"))
        .args([
            "forge", "captions",
            "--traces", traces.to_str().unwrap(),
            "--out", out.path().to_str().unwrap(),
            "--provider", "live",
        ])
        .env_remove("CAPTION_API_KEY")
        .output()
        .expect("run uiforge");
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("CAPTION_API_KEY"), "{stderr}");
}

#[test]
fn skip_color_check_is_recorded_and_keeps_color_blocks() {
    let out = tempfile::tempdir().unwrap();
    let traces = fixtures().join("traces");
    run_ok(&[
        "forge", "elements",
        "--traces", traces.to_str().unwrap(),
        "--out", out.path().to_str().unwrap(),
        "--skip-color-check",
        "--min-freq", "1",
    ]);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.path().join("manifest_elements.json")).unwrap(),
    )
    .unwrap();
    let notes = manifest["notes"].as_array().unwrap();
    assert!(notes.iter().any(|n| n.as_str().unwrap().contains("color-block")));
    // the color-block candidate from the split screenshot now survives
    let captions = std::fs::read_to_string(out.path().join("element_captions.jsonl")).unwrap();
    assert!(captions.contains("\"blocky\""));
}
