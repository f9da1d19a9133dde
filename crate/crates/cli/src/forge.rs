//! The five `forge` subcommands: elements, lists, prompts, captions,
//! foresight. Every command loads traces, runs its pipeline, writes outputs
//! atomically, and finishes with a run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use uiforge_core::elements::run_element_pipeline;
use uiforge_core::foresight::build_foresight_set;
use uiforge_core::io::{write_json_atomic, write_jsonl_atomic, FileDigest, ImageStore};
use uiforge_core::manifest::{DatasetStats, RunManifest};
use uiforge_core::screens::{
    attach_captions, cache_file_path, collect_screen_prompts, fetch_captions, CaptionCache,
    CaptionProvider, FixtureProvider, HttpProvider, PromptCollection, ScreenCaptionSample,
};
use uiforge_core::trace::{load_traces, UITrace};

use crate::config::{ForgeConfig, ProviderKind};
use crate::{CliError, ForgeArgs, ForgeSet};

pub fn run(set: ForgeSet, args: &ForgeArgs) -> Result<(), CliError> {
    let mut cfg = ForgeConfig::load(args.config.as_deref())?;
    apply_overrides(&mut cfg, args);
    if !args.traces.exists() {
        return Err(CliError::Config(format!(
            "traces path {} does not exist",
            args.traces.display()
        )));
    }
    let traces = load_traces(&args.traces).map_err(|e| CliError::Schema(e.to_string()))?;
    let ctx = ForgeContext {
        cfg,
        traces,
        traces_root: traces_root(&args.traces),
        out: args.out.clone(),
    };
    std::fs::create_dir_all(&ctx.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", ctx.out.display())))?;
    match set {
        ForgeSet::Elements => forge_elements(&ctx, false),
        ForgeSet::Lists => forge_elements(&ctx, true),
        ForgeSet::Prompts => forge_prompts(&ctx),
        ForgeSet::Captions => forge_captions(&ctx, args),
        ForgeSet::Foresight => forge_foresight(&ctx),
    }
}

fn traces_root(path: &Path) -> PathBuf {
    if path.is_file() {
        path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf()
    } else {
        path.to_path_buf()
    }
}

struct ForgeContext {
    cfg: ForgeConfig,
    traces: Vec<UITrace>,
    traces_root: PathBuf,
    out: PathBuf,
}

impl ForgeContext {
    fn image_store(&self) -> Option<ImageStore> {
        (!self.cfg.skip_color_check).then(|| ImageStore::new(&self.traces_root))
    }

    fn manifest(&self, command: &str) -> RunManifest {
        let mut m = RunManifest::new(command, self.cfg.effective_json());
        let states: u64 = self.traces.iter().map(|t| t.states.len() as u64).sum();
        let elements: u64 = self
            .traces
            .iter()
            .flat_map(|t| &t.states)
            .map(|s| s.elements.len() as u64)
            .sum();
        m.input_counts.insert("traces".into(), self.traces.len() as u64);
        m.input_counts.insert("states".into(), states);
        m.input_counts.insert("elements".into(), elements);
        for t in &self.traces {
            *m.per_source_counts.entry(t.source_dataset.clone()).or_insert(0) +=
                t.states.len() as u64;
        }
        m
    }

    fn finish_manifest(
        &self,
        mut manifest: RunManifest,
        files: Vec<FileDigest>,
        name: &str,
    ) -> Result<(), CliError> {
        manifest.files = files.into_iter().map(Into::into).collect();
        manifest.finish();
        write_json_atomic(&self.out.join(name), &manifest)
            .map_err(|e| CliError::Schema(e.to_string()))?;
        Ok(())
    }
}

fn apply_overrides(cfg: &mut ForgeConfig, args: &ForgeArgs) {
    if let Some(v) = args.min_freq {
        cfg.min_frequency = v;
    }
    if let Some(v) = args.enlarge_steps {
        cfg.enlarge_steps = v;
    }
    if let Some(v) = args.enlarge_pct {
        cfg.enlarge_pct = v;
    }
    if let Some(v) = args.banner_pct {
        cfg.banner_pct = v;
    }
    if args.skip_color_check {
        cfg.skip_color_check = true;
    }
    if let Some(kind) = args.provider {
        cfg.provider_kind = kind.into();
    }
    if let Some(path) = &args.fixture {
        cfg.fixture_path = Some(path.clone());
    }
}

fn to_count_map<T: serde::Serialize>(value: &T) -> BTreeMap<String, u64> {
    let json = serde_json::to_value(value).expect("count serialization cannot fail");
    json.as_object()
        .map(|obj| {
            obj.iter()
                .filter_map(|(k, v)| v.as_u64().map(|n| (k.clone(), n)))
                .collect()
        })
        .unwrap_or_default()
}

fn forge_elements(ctx: &ForgeContext, lists: bool) -> Result<(), CliError> {
    let command = if lists { "forge lists" } else { "forge elements" };
    let store = ctx.image_store();
    let out = run_element_pipeline(&ctx.traces, &ctx.cfg.filter(), store.as_ref())
        .map_err(|e| CliError::Schema(e.to_string()))?;

    let mut manifest = ctx.manifest(command);
    manifest.input_counts.insert("candidates".into(), out.candidate_total);
    manifest
        .drop_counts
        .insert("element_filter".into(), out.reject_counts.clone());
    if out.color_check_skipped {
        manifest.notes.push("color-block check skipped".into());
    }

    let mut files = Vec::new();
    if lists {
        let stats = DatasetStats::compute(
            out.lists
                .iter()
                .map(|s| (s.app_id.as_str(), s.image_path.as_str(), s.caption.as_str())),
        );
        manifest.output_counts.insert("element_lists".into(), stats.set_counts());
        files.push(
            write_jsonl_atomic(&ctx.out.join("element_lists.jsonl"), &out.lists)
                .map_err(|e| CliError::Schema(e.to_string()))?,
        );
    } else {
        let stats = DatasetStats::compute(
            out.captions
                .iter()
                .map(|s| (s.app_id.as_str(), s.image_path.as_str(), s.caption.as_str())),
        );
        manifest
            .output_counts
            .insert("element_captions".into(), stats.set_counts());
        manifest
            .input_counts
            .insert("pre_dedup_samples".into(), out.pre_dedup_samples);
        files.push(
            write_jsonl_atomic(&ctx.out.join("element_captions.jsonl"), &out.captions)
                .map_err(|e| CliError::Schema(e.to_string()))?,
        );
    }
    files.push(
        write_jsonl_atomic(&ctx.out.join("rejects.jsonl"), &out.rejects)
            .map_err(|e| CliError::Schema(e.to_string()))?,
    );

    let emitted = if lists { out.lists.len() } else { out.captions.len() };
    let manifest_name = if lists { "manifest_lists.json" } else { "manifest_elements.json" };
    ctx.finish_manifest(manifest, files, manifest_name)?;
    println!("{command}: {emitted} samples, {} rejects", out.rejects.len());
    Ok(())
}

fn collect_prompts_for(ctx: &ForgeContext) -> Result<PromptCollection, CliError> {
    let store = ctx.image_store();
    let filter = ctx.cfg.filter();
    let freq_index;
    let frequency = if ctx.cfg.apply_frequency_to_prompts {
        let states = uiforge_core::elements::extract_states(&ctx.traces, &filter, store.as_ref())
            .map_err(|e| CliError::Schema(e.to_string()))?;
        freq_index = uiforge_core::elements::count_frequencies(&states);
        Some((&freq_index, ctx.cfg.min_frequency))
    } else {
        None
    };
    collect_screen_prompts(&ctx.traces, &filter, store.as_ref(), frequency)
        .map_err(|e| CliError::Schema(e.to_string()))
}

fn forge_prompts(ctx: &ForgeContext) -> Result<(), CliError> {
    let coll = collect_prompts_for(ctx)?;
    let prompts: Vec<_> = coll.prompts.values().cloned().collect();

    let mut manifest = ctx.manifest("forge prompts");
    manifest
        .input_counts
        .insert("screens_with_prompts".into(), coll.fanout_total());
    manifest
        .input_counts
        .insert("screens_skipped_empty".into(), coll.skipped_screens);
    let stats = DatasetStats::compute(prompts.iter().map(|p| {
        (p.app_id.as_str(), "", p.prompt_text.as_str())
    }));
    manifest.output_counts.insert(
        "screen_prompts".into(),
        uiforge_core::manifest::SetCounts {
            num_images: coll.fanout_total(),
            num_samples: stats.samples,
        },
    );

    let digest = write_jsonl_atomic(&ctx.out.join("screen_prompts.jsonl"), &prompts)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    ctx.finish_manifest(manifest, vec![digest], "manifest_prompts.json")?;
    println!(
        "forge prompts: {} unique prompts over {} screens ({} skipped empty)",
        prompts.len(),
        coll.fanout_total(),
        coll.skipped_screens
    );
    Ok(())
}

fn build_provider(ctx: &ForgeContext) -> Result<Box<dyn CaptionProvider>, CliError> {
    match ctx.cfg.provider_kind {
        ProviderKind::Fixture => {
            let path = ctx.cfg.fixture_path.as_ref().ok_or_else(|| {
                CliError::Config("fixture provider requires --fixture <file>".into())
            })?;
            let provider =
                FixtureProvider::from_file(path).map_err(|e| CliError::Config(e.to_string()))?;
            Ok(Box::new(provider))
        }
        ProviderKind::Live => {
            let key = std::env::var("CAPTION_API_KEY").map_err(|_| {
                CliError::Config("live provider requires the CAPTION_API_KEY environment variable".into())
            })?;
            Ok(Box::new(HttpProvider::new(
                ctx.cfg.provider.endpoint.clone(),
                ctx.cfg.provider.model_name.clone(),
                key,
            )))
        }
    }
}

fn forge_captions(ctx: &ForgeContext, _args: &ForgeArgs) -> Result<(), CliError> {
    let coll = collect_prompts_for(ctx)?;
    let provider = build_provider(ctx)?;
    let cache_path = cache_file_path(&ctx.out);
    let mut cache = if ctx.cfg.requery_captions {
        CaptionCache::default()
    } else {
        CaptionCache::load(&cache_path).map_err(|e| CliError::Schema(e.to_string()))?
    };
    let prompts: Vec<_> = coll.prompts.values().cloned().collect();
    let outcome = fetch_captions(&prompts, provider.as_ref(), &mut cache, &ctx.cfg.provider);
    let cache_digest = cache
        .save(&cache_path)
        .map_err(|e| CliError::Schema(e.to_string()))?;

    let (samples, failed_screens) = attach_captions(&coll, &outcome.captions);

    let mut manifest = ctx.manifest("forge captions");
    manifest
        .input_counts
        .insert("unique_prompts".into(), prompts.len() as u64);
    manifest
        .input_counts
        .insert("screens_skipped_empty".into(), coll.skipped_screens);
    let stats = DatasetStats::compute(
        samples
            .iter()
            .map(|s| (s.app_id.as_str(), s.image_path.as_str(), s.caption.as_str())),
    );
    manifest
        .output_counts
        .insert("screen_captions".into(), stats.set_counts());
    let mut drops = BTreeMap::new();
    drops.insert("failed_prompts".into(), outcome.failed.len() as u64);
    drops.insert("failed_screens".into(), failed_screens);
    manifest.drop_counts.insert("captions".into(), drops);
    let mut fetch_counts = to_count_map(&outcome.stats);
    fetch_counts.insert("unique_captions".into(), stats.unique_captions);
    // lint only: captions are shipped as-is even when they run past one sentence
    let multi_sentence = outcome
        .captions
        .values()
        .filter(|c| c.matches(['.', '!', '?']).count() > 1)
        .count() as u64;
    fetch_counts.insert("multi_sentence_captions".into(), multi_sentence);
    manifest.drop_counts.insert("fetch".into(), fetch_counts);
    manifest.notes.push(format!(
        "provider={} estimated_cost={:.6}",
        provider.name(),
        outcome.stats.estimated_cost
    ));

    let digest = write_jsonl_atomic(&ctx.out.join("screen_captions.jsonl"), &samples)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    ctx.finish_manifest(manifest, vec![digest, cache_digest], "manifest_captions.json")?;

    println!(
        "forge captions: {} samples from {} unique prompts ({} provider calls, {} cache hits, {} failed)",
        samples.len(),
        prompts.len(),
        outcome.stats.provider_calls,
        outcome.stats.cache_hits,
        outcome.failed.len()
    );
    if !outcome.failed.is_empty() {
        let preview: Vec<&String> = outcome.failed.keys().take(3).collect();
        return Err(CliError::Provider(format!(
            "{} prompts failed after retries (e.g. {:?})",
            outcome.failed.len(),
            preview
        )));
    }
    Ok(())
}

fn forge_foresight(ctx: &ForgeContext) -> Result<(), CliError> {
    let captions_path = ctx.out.join("screen_captions.jsonl");
    if !captions_path.exists() {
        return Err(CliError::Config(format!(
            "foresight requires screen captions: run `uiforge forge captions` into {} first",
            ctx.out.display()
        )));
    }
    let caption_samples: Vec<ScreenCaptionSample> =
        uiforge_core::io::read_jsonl(&captions_path).map_err(|e| CliError::Schema(e.to_string()))?;
    let mut captions_by_key: BTreeMap<String, String> = BTreeMap::new();
    for s in caption_samples {
        captions_by_key.entry(s.prompt_key).or_insert(s.caption);
    }

    let coll = collect_prompts_for(ctx)?;
    let out = build_foresight_set(&ctx.traces, &coll, &captions_by_key, &ctx.cfg.match_config());

    let mut manifest = ctx.manifest("forge foresight");
    manifest.input_counts.insert("examined_states".into(), out.examined);
    let stats = DatasetStats::compute(
        out.samples
            .iter()
            .map(|s| (s.app_id.as_str(), s.image_path.as_str(), s.caption.as_str())),
    );
    manifest.output_counts.insert("foresight".into(), stats.set_counts());
    manifest
        .drop_counts
        .insert("foresight_drops".into(), to_count_map(&out.drops));

    let digest = write_jsonl_atomic(&ctx.out.join("foresight.jsonl"), &out.samples)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    ctx.finish_manifest(manifest, vec![digest], "manifest_foresight.json")?;
    println!(
        "forge foresight: {} samples from {} states ({} drops)",
        out.samples.len(),
        out.examined,
        out.drops.total()
    );
    Ok(())
}
