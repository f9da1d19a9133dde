//! Screen-caption pipeline: render per-screen summary prompts from element
//! text, deduplicate identical prompts, fetch captions from a provider (live
//! HTTP or offline fixture), and fan the captions back out to every screen.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::elements::{passes_text_rules, passes_visual_rules, FilterConfig, FrequencyIndex};
use crate::io::{ImageStore, IoError};
use crate::trace::{ScreenState, UITrace};

#[derive(Debug, Error)]
pub enum ScreensError {
    #[error("prompt requires at least one element")]
    EmptyElements,
    #[error(transparent)]
    Io(#[from] IoError),
}

/// One summary request for a screen. `prompt_text` is the frozen template
/// with the app package name and ` | `-joined elements substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenPrompt {
    pub prompt_key: String,
    pub app_id: String,
    pub elements: Vec<String>,
    pub prompt_text: String,
}

/// One emitted screen-caption record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenCaptionSample {
    pub app_id: String,
    pub image_path: String,
    pub caption: String,
    pub prompt_key: String,
}

/// Stable 64-bit key of `(app_id, ordered elements)`, hex encoded.
/// Length-prefixed hashing keeps distinct element lists from colliding.
pub fn prompt_key(app_id: &str, elements: &[String]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((app_id.len() as u64).to_le_bytes());
    hasher.update(app_id.as_bytes());
    for e in elements {
        hasher.update((e.len() as u64).to_le_bytes());
        hasher.update(e.as_bytes());
    }
    hex::encode(&hasher.finalize()[..8])
}

/// Render the screen-summary prompt for an app and its ordered element
/// strings.
pub fn render_prompt(app_id: &str, elements: &[String]) -> Result<ScreenPrompt, ScreensError> {
    if elements.is_empty() {
        return Err(ScreensError::EmptyElements);
    }
    let joined = elements.join(" | ");
    let prompt_text = format!(
        "If an {app_id} app screen consisted of the following elements: {joined}, \
         how would you summarize the screen? Provide a single sentence description \
         that focuses on the functionality and category of the app given these \
         elements. Do not repeat the app name and do not include too many specifics."
    );
    Ok(ScreenPrompt {
        prompt_key: prompt_key(app_id, elements),
        app_id: app_id.to_string(),
        elements: elements.to_vec(),
        prompt_text,
    })
}

/// Element strings fed into a screen prompt: `text` and
/// `content_description` fields only (resource IDs are excluded as noisy
/// metadata), original casing retained, after the same text and visual
/// validity rules used for element captions except lowercasing.
///
/// `frequency` optionally applies the per-dataset frequency threshold to the
/// lowercased form; the default pipeline leaves it off.
pub fn screen_elements_for_prompt(
    state: &ScreenState,
    cfg: &FilterConfig,
    img: Option<&image::RgbaImage>,
    frequency: Option<(&FrequencyIndex, &str, u64)>,
) -> Vec<String> {
    let mut out = Vec::new();
    for element in &state.elements {
        for field in [&element.text, &element.content_description] {
            let Some(original) = field else { continue };
            let lowered = original.to_lowercase();
            if passes_text_rules(&lowered, cfg).is_err() {
                continue;
            }
            if passes_visual_rules(element, state, img).is_err() {
                continue;
            }
            if let Some((idx, dataset, min)) = frequency {
                if !idx.survives(dataset, &lowered, min) {
                    continue;
                }
            }
            out.push(original.clone());
        }
    }
    out
}

/// Where a prompt's caption fans back out to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptSite {
    pub trace_id: String,
    pub state_index: usize,
    pub image_id: String,
    pub image_path: String,
}

/// Unique prompts plus the multiplicity map used to fan captions back out.
#[derive(Debug, Default)]
pub struct PromptCollection {
    /// One prompt per key, ordered by key.
    pub prompts: BTreeMap<String, ScreenPrompt>,
    /// Fan-out targets per key, in scan order.
    pub fanout: BTreeMap<String, Vec<PromptSite>>,
    /// (key, site) pairs in scan order, for deterministic emission.
    pub sites_in_scan_order: Vec<(String, PromptSite)>,
    /// Screens whose element list came up empty, per trace.
    pub skipped_screens: u64,
    pub total_screens: u64,
}

impl PromptCollection {
    /// Conservation check: the fan-out multiplicities must account for every
    /// screen that produced a non-empty element list.
    pub fn fanout_total(&self) -> u64 {
        self.fanout.values().map(|v| v.len() as u64).sum()
    }
}

/// Deduplicate rendered prompts by key, retaining every fan-out target.
pub fn dedup_prompts(
    rendered: impl IntoIterator<Item = (ScreenPrompt, PromptSite)>,
) -> PromptCollection {
    let mut coll = PromptCollection::default();
    for (prompt, site) in rendered {
        let key = prompt.prompt_key.clone();
        coll.fanout.entry(key.clone()).or_default().push(site.clone());
        coll.prompts.entry(key.clone()).or_insert(prompt);
        coll.sites_in_scan_order.push((key, site));
    }
    coll
}

/// Walk every screen of every trace, render prompts, and deduplicate.
pub fn collect_screen_prompts(
    traces: &[UITrace],
    cfg: &FilterConfig,
    images: Option<&ImageStore>,
    frequency: Option<(&FrequencyIndex, u64)>,
) -> Result<PromptCollection, ScreensError> {
    let mut rendered = Vec::new();
    let mut skipped = 0u64;
    let mut total = 0u64;
    for trace in traces {
        for (si, state) in trace.states.iter().enumerate() {
            total += 1;
            let img = match images {
                Some(store) if state.elements.iter().any(|e| e.visible) => {
                    Some(store.get(&state.image_path).map_err(ScreensError::Io)?)
                }
                _ => None,
            };
            let freq = frequency.map(|(idx, min)| (idx, trace.source_dataset.as_str(), min));
            let elements = screen_elements_for_prompt(state, cfg, img.as_deref(), freq);
            if elements.is_empty() {
                skipped += 1;
                continue;
            }
            let prompt = render_prompt(&trace.app_id, &elements)?;
            rendered.push((
                prompt,
                PromptSite {
                    trace_id: trace.trace_id.clone(),
                    state_index: si,
                    image_id: state.image_id.clone(),
                    image_path: state.image_path.clone(),
                },
            ));
        }
    }
    let mut coll = dedup_prompts(rendered);
    coll.skipped_screens = skipped;
    coll.total_screens = total;
    Ok(coll)
}

// ---------------------------------------------------------------------------
// Providers

/// Connection settings for the live caption provider plus retry/cost knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_name: String,
    pub max_concurrent: usize,
    pub retry_limit: u32,
    /// Base backoff; attempt `n` sleeps `backoff_ms * 2^(n-1)`.
    pub backoff_ms: u64,
    pub cost_per_1k_tokens: f64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_name: "gpt-3.5-turbo".into(),
            max_concurrent: 4,
            retry_limit: 3,
            backoff_ms: 250,
            cost_per_1k_tokens: 0.002,
        }
    }
}

#[derive(Debug, Error, Clone)]
pub enum ProviderCallError {
    /// Transient failure worth retrying (rate limit, 5xx, network).
    #[error("retryable provider error: {0}")]
    Retryable(String),
    #[error("provider error: {0}")]
    Fatal(String),
    #[error("fixture has no caption for prompt_key {0}")]
    FixtureMiss(String),
}

#[derive(Debug, Clone)]
pub struct ProviderReply {
    pub caption: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

/// A caption source. Implementations must be callable from multiple fetch
/// workers at once.
pub trait CaptionProvider: Sync {
    fn fetch(&self, prompt: &ScreenPrompt) -> Result<ProviderReply, ProviderCallError>;
    fn name(&self) -> &'static str;
}

/// Offline provider backed by a `{prompt_key: caption}` JSON file.
pub struct FixtureProvider {
    captions: BTreeMap<String, String>,
}

impl FixtureProvider {
    pub fn new(captions: BTreeMap<String, String>) -> Self {
        FixtureProvider { captions }
    }

    pub fn from_file(path: &Path) -> Result<Self, IoError> {
        let body = std::fs::read_to_string(path).map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let captions: BTreeMap<String, String> =
            serde_json::from_str(&body).map_err(|e| IoError::Record {
                path: path.to_path_buf(),
                line: 0,
                detail: e.to_string(),
            })?;
        Ok(FixtureProvider { captions })
    }
}

impl CaptionProvider for FixtureProvider {
    fn fetch(&self, prompt: &ScreenPrompt) -> Result<ProviderReply, ProviderCallError> {
        match self.captions.get(&prompt.prompt_key) {
            Some(caption) => Ok(ProviderReply {
                caption: caption.clone(),
                prompt_tokens: None,
                completion_tokens: None,
            }),
            None => Err(ProviderCallError::FixtureMiss(prompt.prompt_key.clone())),
        }
    }

    fn name(&self) -> &'static str {
        "fixture"
    }
}

/// Live provider speaking the chat-completions protocol: one POST per
/// prompt, bearer auth from the API key, temperature pinned to zero.
pub struct HttpProvider {
    endpoint: String,
    model_name: String,
    api_key: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

impl HttpProvider {
    pub fn new(endpoint: String, model_name: String, api_key: String) -> Self {
        HttpProvider {
            endpoint,
            model_name,
            api_key,
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

impl CaptionProvider for HttpProvider {
    fn fetch(&self, prompt: &ScreenPrompt) -> Result<ProviderReply, ProviderCallError> {
        let body = ChatRequest {
            model: &self.model_name,
            messages: [ChatMessage {
                role: "user",
                content: &prompt.prompt_text,
            }],
            temperature: 0.0,
        };
        let result = self
            .agent
            .post(&self.endpoint)
            .header("authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code)) if code == 429 || code >= 500 => {
                return Err(ProviderCallError::Retryable(format!("HTTP {code}")));
            }
            Err(ureq::Error::StatusCode(code)) => {
                return Err(ProviderCallError::Fatal(format!("HTTP {code}")));
            }
            Err(e) => return Err(ProviderCallError::Retryable(e.to_string())),
        };
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| ProviderCallError::Fatal(format!("bad response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderCallError::Fatal("response carried no choices".into()))?;
        let (pt, ct) = parsed
            .usage
            .map(|u| (u.prompt_tokens, u.completion_tokens))
            .unwrap_or((None, None));
        Ok(ProviderReply {
            caption: choice.message.content,
            prompt_tokens: pt,
            completion_tokens: ct,
        })
    }

    fn name(&self) -> &'static str {
        "live"
    }
}

// ---------------------------------------------------------------------------
// Fetching and the persistent cache

/// Persistent `{prompt_key: caption}` cache so interrupted runs resume
/// without re-spending on the provider.
#[derive(Debug, Default)]
pub struct CaptionCache {
    entries: BTreeMap<String, String>,
}

impl CaptionCache {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        if !path.exists() {
            return Ok(CaptionCache::default());
        }
        let body = std::fs::read_to_string(path).map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let entries: BTreeMap<String, String> =
            serde_json::from_str(&body).map_err(|e| IoError::Record {
                path: path.to_path_buf(),
                line: 0,
                detail: e.to_string(),
            })?;
        Ok(CaptionCache { entries })
    }

    pub fn save(&self, path: &Path) -> Result<crate::io::FileDigest, IoError> {
        crate::io::write_json_atomic(path, &self.entries)
    }

    pub fn get(&self, key: &str) -> Option<&String> {
        self.entries.get(key)
    }

    pub fn insert(&mut self, key: String, caption: String) {
        self.entries.insert(key, caption);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Totals reported after a fetch pass.
#[derive(Debug, Default, Clone, Serialize)]
pub struct FetchStats {
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub estimated_cost: f64,
}

/// Result of resolving a batch of prompts.
#[derive(Debug, Default)]
pub struct FetchOutcome {
    pub captions: BTreeMap<String, String>,
    /// Prompts that failed after exhausting retries, with the final error.
    pub failed: BTreeMap<String, String>,
    pub stats: FetchStats,
}

/// Strip surrounding whitespace and one pair of wrapping quotes.
fn clean_caption(raw: &str) -> String {
    let s = raw.trim();
    let quote_pairs = [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}')];
    for (open, close) in quote_pairs {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim().to_string();
        }
    }
    s.to_string()
}

fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Resolve captions for `prompts` through `provider`, consulting and filling
/// `cache`.
///
/// Prompts are deduplicated by key before dispatch and cached keys are never
/// sent, so the provider sees at most one call per `prompt_key` regardless of
/// concurrency. Transient errors are retried with exponential backoff up to
/// `retry_limit` extra attempts; prompts still failing are recorded in
/// `failed` rather than aborting the batch.
pub fn fetch_captions(
    prompts: &[ScreenPrompt],
    provider: &dyn CaptionProvider,
    cache: &mut CaptionCache,
    cfg: &ProviderConfig,
) -> FetchOutcome {
    let mut outcome = FetchOutcome::default();

    // Cache pass plus in-run dedup.
    let mut pending: Vec<&ScreenPrompt> = Vec::new();
    let mut seen: BTreeSetLike = BTreeSetLike::default();
    for p in prompts {
        if let Some(hit) = cache.get(&p.prompt_key) {
            outcome.stats.cache_hits += 1;
            outcome.captions.insert(p.prompt_key.clone(), hit.clone());
            continue;
        }
        if seen.insert(p.prompt_key.clone()) {
            pending.push(p);
        }
    }

    let calls = AtomicU64::new(0);
    let retries = AtomicU64::new(0);
    let tokens_in = AtomicU64::new(0);
    let tokens_out = AtomicU64::new(0);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(String, Result<String, String>)>> = Mutex::new(Vec::new());

    let workers = cfg.max_concurrent.max(1).min(pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some(prompt) = pending.get(idx) else { break };
                let mut attempt = 0u32;
                let result = loop {
                    calls.fetch_add(1, Ordering::SeqCst);
                    match provider.fetch(prompt) {
                        Ok(reply) => {
                            let pt = reply
                                .prompt_tokens
                                .unwrap_or_else(|| estimate_tokens(&prompt.prompt_text));
                            let ct = reply
                                .completion_tokens
                                .unwrap_or_else(|| estimate_tokens(&reply.caption));
                            tokens_in.fetch_add(pt, Ordering::SeqCst);
                            tokens_out.fetch_add(ct, Ordering::SeqCst);
                            break Ok(clean_caption(&reply.caption));
                        }
                        Err(ProviderCallError::Retryable(msg)) if attempt < cfg.retry_limit => {
                            attempt += 1;
                            retries.fetch_add(1, Ordering::SeqCst);
                            let backoff = cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                            std::thread::sleep(Duration::from_millis(backoff));
                            let _ = msg;
                        }
                        Err(e) => break Err(e.to_string()),
                    }
                };
                results
                    .lock()
                    .unwrap()
                    .push((prompt.prompt_key.clone(), result));
            });
        }
    });

    for (key, result) in results.into_inner().unwrap() {
        match result {
            Ok(caption) => {
                cache.insert(key.clone(), caption.clone());
                outcome.captions.insert(key, caption);
            }
            Err(msg) => {
                outcome.stats.failures += 1;
                outcome.failed.insert(key, msg);
            }
        }
    }

    outcome.stats.provider_calls = calls.into_inner();
    outcome.stats.retries = retries.into_inner();
    outcome.stats.prompt_tokens = tokens_in.into_inner();
    outcome.stats.completion_tokens = tokens_out.into_inner();
    let total_tokens = outcome.stats.prompt_tokens + outcome.stats.completion_tokens;
    outcome.stats.estimated_cost = total_tokens as f64 / 1000.0 * cfg.cost_per_1k_tokens;
    outcome
}

#[derive(Default)]
struct BTreeSetLike(std::collections::BTreeSet<String>);

impl BTreeSetLike {
    fn insert(&mut self, v: String) -> bool {
        self.0.insert(v)
    }
}

/// Fan resolved captions back out to every screen. Screens whose prompt
/// failed are omitted; the count is returned alongside the samples.
pub fn attach_captions(
    collection: &PromptCollection,
    captions: &BTreeMap<String, String>,
) -> (Vec<ScreenCaptionSample>, u64) {
    let mut samples = Vec::new();
    let mut failed_screens = 0u64;
    for (key, site) in &collection.sites_in_scan_order {
        let Some(prompt) = collection.prompts.get(key) else { continue };
        match captions.get(key) {
            Some(caption) => samples.push(ScreenCaptionSample {
                app_id: prompt.app_id.clone(),
                image_path: site.image_path.clone(),
                caption: caption.clone(),
                prompt_key: key.clone(),
            }),
            None => failed_screens += 1,
        }
    }
    (samples, failed_screens)
}

/// Default name of the persistent cache file inside an output directory.
pub fn cache_file_path(out_dir: &Path) -> PathBuf {
    out_dir.join("caption_cache.json")
}
