//! `eval`: score model outputs with the captioning metric, tappability and
//! grounding protocols, or the cross-entropy objective.

use std::collections::BTreeMap;

use serde::Deserialize;
use serde_json::json;
use uiforge_core::cider::{cider, CiderConfig, CiderVariant};
use uiforge_core::io::{read_jsonl, write_json_atomic, write_jsonl_atomic};
use uiforge_core::loss::{xe_loss_with, LogitsRecord, LossReportRecord, Objective, Reduction};
use uiforge_core::tasks::{
    grounding_accuracy, tappability_scores, GroundingInstance, Similarity, TapClass,
};

use crate::{CliError, EvalCiderArgs, EvalGroundingArgs, EvalLossArgs, EvalTapArgs};

#[derive(Deserialize)]
struct CandidateRow {
    id: String,
    text: String,
}

#[derive(Deserialize)]
struct ReferenceRow {
    id: String,
    texts: Vec<String>,
}

pub fn run_cider(args: &EvalCiderArgs) -> Result<(), CliError> {
    let cands: Vec<CandidateRow> =
        read_jsonl(&args.candidates).map_err(|e| CliError::Schema(e.to_string()))?;
    let refs: Vec<ReferenceRow> =
        read_jsonl(&args.references).map_err(|e| CliError::Schema(e.to_string()))?;
    let candidates: BTreeMap<String, String> =
        cands.into_iter().map(|r| (r.id, r.text)).collect();
    let references: BTreeMap<String, Vec<String>> =
        refs.into_iter().map(|r| (r.id, r.texts)).collect();
    let cfg = CiderConfig {
        max_n: args.max_n,
        variant: if args.cider_d {
            CiderVariant::LengthPenalty
        } else {
            CiderVariant::Plain
        },
        ..CiderConfig::default()
    };
    let report = cider(&candidates, &references, &cfg)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    let metrics = json!({
        "task": "cider",
        "variant": report.variant,
        "max_n": report.max_n,
        "corpus_score": report.corpus_score,
        "num_images": report.per_image.len(),
        "per_image": report.per_image,
    });
    write_metrics(&args.out, &metrics)?;
    println!(
        "cider: corpus score {:.4} over {} images ({:?})",
        report.corpus_score,
        report.per_image.len(),
        report.variant
    );
    Ok(())
}

#[derive(Deserialize)]
struct PredictionRow {
    id: String,
    text: String,
}

#[derive(Deserialize)]
struct LabelRow {
    id: String,
    class: TapClass,
}

pub fn run_tappability(args: &EvalTapArgs) -> Result<(), CliError> {
    let preds: Vec<PredictionRow> =
        read_jsonl(&args.predictions).map_err(|e| CliError::Schema(e.to_string()))?;
    let labels: Vec<LabelRow> =
        read_jsonl(&args.labels).map_err(|e| CliError::Schema(e.to_string()))?;
    let by_id: BTreeMap<&str, &str> =
        preds.iter().map(|p| (p.id.as_str(), p.text.as_str())).collect();
    let mut ordered_preds = Vec::with_capacity(labels.len());
    let mut ordered_labels = Vec::with_capacity(labels.len());
    for l in &labels {
        let text = by_id.get(l.id.as_str()).ok_or_else(|| {
            CliError::Schema(format!("no prediction for label id {:?}", l.id))
        })?;
        ordered_preds.push(text.to_string());
        ordered_labels.push(l.class);
    }
    let report = tappability_scores(&ordered_preds, &ordered_labels)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    let metrics = json!({
        "task": "tappability",
        "f1": report.f1,
        "accuracy": report.accuracy,
        "confusion": {
            "true_positive": report.true_positive,
            "false_positive": report.false_positive,
            "true_negative": report.true_negative,
            "false_negative": report.false_negative,
        },
        "unparseable": report.unparseable,
        "num_samples": labels.len(),
    });
    write_metrics(&args.out, &metrics)?;
    println!(
        "tappability: F1 {:.4}, accuracy {:.4} over {} samples ({} unparseable)",
        report.f1,
        report.accuracy,
        labels.len(),
        report.unparseable
    );
    Ok(())
}

pub fn run_grounding(args: &EvalGroundingArgs) -> Result<(), CliError> {
    let instances: Vec<GroundingInstance> =
        read_jsonl(&args.instances).map_err(|e| CliError::Schema(e.to_string()))?;
    let similarity = match args.similarity.as_str() {
        "token_f1" => Similarity::TokenF1,
        "cider_1gram" => Similarity::Cider1gram,
        other => {
            return Err(CliError::Config(format!(
                "unknown similarity {other:?}; use token_f1 or cider_1gram"
            )))
        }
    };
    let report = grounding_accuracy(&instances, similarity)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    let metrics = json!({
        "task": "grounding",
        "similarity": report.similarity,
        "accuracy": report.accuracy,
        "num_instances": instances.len(),
        "per_instance": report.per_instance,
    });
    write_metrics(&args.out, &metrics)?;
    println!(
        "grounding: accuracy {:.4} over {} instances ({:?})",
        report.accuracy,
        instances.len(),
        similarity
    );
    Ok(())
}

pub fn run_loss(args: &EvalLossArgs) -> Result<(), CliError> {
    let records: Vec<LogitsRecord> =
        read_jsonl(&args.logits).map_err(|e| CliError::Schema(e.to_string()))?;
    let objective = match args.objective.as_str() {
        "xe" => Objective::Xe,
        "foresight" => Objective::Foresight,
        "static" => Objective::Static,
        other => {
            return Err(CliError::Config(format!(
                "unknown objective {other:?}; use xe, foresight, or static"
            )))
        }
    };
    let reduction = if args.mean { Reduction::Mean } else { Reduction::Sum };
    let mut reports = Vec::with_capacity(records.len());
    let mut total_sum = 0.0;
    let mut step_sum = 0.0;
    let mut steps = 0usize;
    for rec in &records {
        let mut report = xe_loss_with(&rec.steps, &rec.target_ids, reduction)
            .map_err(|e| CliError::Schema(format!("sample {:?}: {e}", rec.sample_id)))?;
        report.objective = objective;
        total_sum += report.total;
        step_sum += report.per_step.iter().sum::<f64>();
        steps += report.per_step.len();
        reports.push(LossReportRecord::from_report(
            rec.sample_id.clone(),
            report,
            args.grads,
        ));
    }
    let reports_path = args.out.join("loss_reports.jsonl");
    write_jsonl_atomic(&reports_path, &reports).map_err(|e| CliError::Schema(e.to_string()))?;
    let mean_total = if reports.is_empty() { 0.0 } else { total_sum / reports.len() as f64 };
    let mean_per_step = if steps == 0 { 0.0 } else { step_sum / steps as f64 };
    let metrics = json!({
        "task": "loss",
        "objective": objective,
        "reduction": reduction,
        "num_samples": reports.len(),
        "num_steps": steps,
        "mean_total": mean_total,
        "mean_per_step": mean_per_step,
    });
    write_metrics(&args.out, &metrics)?;
    println!(
        "loss: {} samples, mean total {:.6}, mean per-step {:.6} ({:?})",
        reports.len(),
        mean_total,
        mean_per_step,
        objective
    );
    Ok(())
}

fn write_metrics(out: &std::path::Path, metrics: &serde_json::Value) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;
    write_json_atomic(&out.join("metrics.json"), metrics)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    Ok(())
}
