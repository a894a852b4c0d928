use std::time::Duration;

use log::{info, warn};
use serde_json::json;
use thiserror::Error;

use super::normalize::normalize_response;
use super::prompts::{build_habitat_prompt, build_taxonomy_texts, build_visual_prompt};
use super::{
    CacheKey, ClassSpec, CorpusError, DescriptionRecord, ResponseCache, Result, Source, TextCorpus,
    TextKind,
};

pub const DEFAULT_VISUAL_SYSTEM_ROLE: &str =
    "You are a helpful assistant who can identify any [domain] based on its photo.";
pub const DEFAULT_HABITAT_SYSTEM_ROLE: &str =
    "You are a helpful assistant who knows about the habitat of any [domain].";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    /// Worth retrying: network failures, rate limits, server errors.
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider rejected credentials: {0}")]
    Auth(String),
    #[error("provider request failed: {0}")]
    Fatal(String),
    #[error("no cached response for prompt and network access is disabled")]
    Offline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub prompt: String,
    pub temperature: f64,
}

pub trait ChatProvider: Send + Sync {
    /// Stable identifier used in cache keys, e.g. `openai`.
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, ProviderError>;
}

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct OpenAiProvider {
    id: String,
    base_url: String,
    api_key: String,
    http: reqwest::blocking::Client,
}

impl OpenAiProvider {
    pub fn new(base_url: &str, api_key: &str) -> std::result::Result<Self, ProviderError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| ProviderError::Fatal(e.to_string()))?;
        Ok(OpenAiProvider {
            id: "openai".to_string(),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            http,
        })
    }
}

impl ChatProvider for OpenAiProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> std::result::Result<String, ProviderError> {
        let body = json!({
            "model": request.model,
            "temperature": request.temperature,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.prompt},
            ],
        });
        let resp = self
            .http
            .post(format!("{}/chat/completions", self.base_url))
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ProviderError::Transient(e.to_string()))?;
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(ProviderError::Auth(format!("{status}: {text}")));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(ProviderError::Transient(format!("{status}: {text}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Fatal(format!("{status}: {text}")));
        }
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::Fatal(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Fatal("response has no message content".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

/// Deterministic LLM client: temperature 0, cached responses, retries.
pub struct LlmClient {
    provider: Box<dyn ChatProvider>,
    pub model: String,
    pub source: Source,
    pub visual_system_role: String,
    pub habitat_system_role: String,
    pub retry: RetryPolicy,
    cache: Option<ResponseCache>,
    offline: bool,
}

impl LlmClient {
    pub fn new(provider: Box<dyn ChatProvider>, model: &str, source: Source) -> Self {
        LlmClient {
            provider,
            model: model.to_string(),
            source,
            visual_system_role: DEFAULT_VISUAL_SYSTEM_ROLE.to_string(),
            habitat_system_role: DEFAULT_HABITAT_SYSTEM_ROLE.to_string(),
            retry: RetryPolicy::default(),
            cache: None,
            offline: false,
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Serve only from the cache; a miss is `ProviderError::Offline`.
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn system_role(&self, kind: TextKind, spec: &ClassSpec) -> String {
        let template = match kind {
            TextKind::Habitat => &self.habitat_system_role,
            _ => &self.visual_system_role,
        };
        template.replace("[domain]", spec.target_word())
    }

    pub fn complete(&self, system: &str, prompt: &str) -> Result<String> {
        let key = CacheKey {
            provider: self.provider.id().to_string(),
            model: self.model.clone(),
            system: system.to_string(),
            prompt: prompt.to_string(),
        };
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key)? {
                return Ok(hit);
            }
        }
        if self.offline {
            return Err(ProviderError::Offline.into());
        }
        let request = ChatRequest {
            model: self.model.clone(),
            system: system.to_string(),
            prompt: prompt.to_string(),
            temperature: 0.0,
        };
        let mut attempt = 0;
        let response = loop {
            match self.provider.complete(&request) {
                Ok(r) => break r,
                Err(ProviderError::Transient(msg)) if attempt < self.retry.max_retries => {
                    let delay = self.retry.delay_for(attempt);
                    warn!("transient provider error ({msg}); retry {} in {delay:?}", attempt + 1);
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e.into()),
            }
        };
        if let Some(cache) = &self.cache {
            cache.put(&key, &response)?;
        }
        Ok(response)
    }
}

/// Sends one prompt and turns the response into description records.
pub fn query_and_normalize(
    client: &LlmClient,
    prompt: &str,
    spec: &ClassSpec,
    kind: TextKind,
) -> Result<Vec<DescriptionRecord>> {
    if prompt.trim().is_empty() {
        return Err(CorpusError::MissingField("prompt"));
    }
    let system = client.system_role(kind, spec);
    let response = client.complete(&system, prompt)?;
    let records: Vec<DescriptionRecord> = normalize_response(&response, spec, kind)
        .into_iter()
        .map(|(raw_line, text)| DescriptionRecord {
            text,
            kind,
            source: client.source,
            raw_line,
        })
        .collect();
    if records.is_empty() {
        return Err(CorpusError::Format(format!(
            "{} response for `{}`",
            kind, spec.class_name
        )));
    }
    Ok(records)
}

/// Builds a corpus for `specs`, querying visual and habitat kinds through
/// `client` and adding template taxonomy texts. Classes without taxonomy
/// fields are skipped for the taxonomy kind with a warning.
pub fn generate_corpus(
    client: &LlmClient,
    dataset: &str,
    specs: &[ClassSpec],
    kinds: &[TextKind],
) -> Result<TextCorpus> {
    let domain = specs.first().map(|s| s.domain_word.clone()).unwrap_or_default();
    let mut corpus = TextCorpus::new(dataset, domain);
    for spec in specs {
        spec.validate()?;
        for &kind in kinds {
            let records = match kind {
                TextKind::Visual => {
                    query_and_normalize(client, &build_visual_prompt(spec)?, spec, kind)?
                }
                TextKind::Habitat => {
                    query_and_normalize(client, &build_habitat_prompt(spec)?, spec, kind)?
                }
                TextKind::Taxonomy => match build_taxonomy_texts(spec) {
                    Ok(r) => r,
                    Err(CorpusError::NoTaxonomyFields(name)) => {
                        warn!("no taxonomy fields for `{name}`; skipping taxonomy texts");
                        continue;
                    }
                    Err(e) => return Err(e),
                },
            };
            corpus.extend(&spec.class_name, records);
        }
        info!("{}: {} texts", spec.class_name, corpus.len_of(&spec.class_name));
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    /// Scripted provider: pops failures first, then answers with `reply`.
    struct Scripted {
        failures: Mutex<Vec<ProviderError>>,
        reply: String,
        calls: Arc<AtomicUsize>,
        seen: Arc<Mutex<Vec<ChatRequest>>>,
    }

    impl ChatProvider for Scripted {
        fn id(&self) -> &str {
            "scripted"
        }
        fn complete(&self, req: &ChatRequest) -> std::result::Result<String, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.seen.lock().unwrap().push(req.clone());
            if let Some(e) = self.failures.lock().unwrap().pop() {
                return Err(e);
            }
            Ok(self.reply.clone())
        }
    }

    fn scripted(reply: &str, failures: Vec<ProviderError>) -> (Box<Scripted>, Arc<AtomicUsize>, Arc<Mutex<Vec<ChatRequest>>>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let seen = Arc::new(Mutex::new(Vec::new()));
        (
            Box::new(Scripted { failures: Mutex::new(failures), reply: reply.into(), calls: calls.clone(), seen: seen.clone() }),
            calls,
            seen,
        )
    }

    fn fast_retry(n: u32) -> RetryPolicy {
        RetryPolicy { max_retries: n, base_delay: Duration::from_millis(1), max_delay: Duration::from_millis(2) }
    }

    #[test]
    fn deterministic_request_and_system_role() {
        let (p, _, seen) = scripted("- A bird with red legs.", vec![]);
        let client = LlmClient::new(p, "gpt-4-0613", Source::Gpt4);
        let spec = ClassSpec::new("Common Tern", "bird");
        let recs = query_and_normalize(&client, &build_visual_prompt(&spec).unwrap(), &spec, TextKind::Visual).unwrap();
        assert_eq!(recs[0].text, "a photo of a Common Tern bird with red legs.");
        assert_eq!(recs[0].source, Source::Gpt4);
        let req = seen.lock().unwrap()[0].clone();
        assert_eq!(req.temperature, 0.0);
        assert_eq!(req.system, "You are a helpful assistant who can identify any bird based on its photo.");
        assert_eq!(
            client.system_role(TextKind::Habitat, &spec),
            "You are a helpful assistant who knows about the habitat of any bird."
        );
    }

    #[test]
    fn empty_response_is_format_error() {
        let (p, _, _) = scripted("", vec![]);
        let client = LlmClient::new(p, "gpt-4-0613", Source::Gpt4);
        let spec = ClassSpec::new("Common Tern", "bird");
        assert!(matches!(
            query_and_normalize(&client, "prompt", &spec, TextKind::Visual),
            Err(CorpusError::Format(_))
        ));
        assert!(matches!(
            query_and_normalize(&client, " ", &spec, TextKind::Visual),
            Err(CorpusError::MissingField("prompt"))
        ));
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let fails = vec![ProviderError::Transient("503".into()), ProviderError::Transient("timeout".into())];
        let (p, calls, _) = scripted("- x", fails);
        let client = LlmClient::new(p, "m", Source::Gpt4).with_retry(fast_retry(3));
        assert_eq!(client.complete("s", "p").unwrap(), "- x");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retry_limit_surfaces_provider_error() {
        let fails = vec![ProviderError::Transient("a".into()); 5];
        let (p, calls, _) = scripted("- x", fails);
        let client = LlmClient::new(p, "m", Source::Gpt4).with_retry(fast_retry(2));
        assert!(matches!(client.complete("s", "p"), Err(CorpusError::Provider(ProviderError::Transient(_)))));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn auth_errors_are_not_retried() {
        let (p, calls, _) = scripted("- x", vec![ProviderError::Auth("401".into())]);
        let client = LlmClient::new(p, "m", Source::Gpt4).with_retry(fast_retry(4));
        assert!(matches!(client.complete("s", "p"), Err(CorpusError::Provider(ProviderError::Auth(_)))));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let r = RetryPolicy { max_retries: 10, base_delay: Duration::from_millis(100), max_delay: Duration::from_secs(1) };
        assert_eq!(r.delay_for(0), Duration::from_millis(100));
        assert_eq!(r.delay_for(2), Duration::from_millis(400));
        assert_eq!(r.delay_for(9), Duration::from_secs(1));
        assert_eq!(r.delay_for(40), Duration::from_secs(1));
    }

    #[test]
    fn cache_hit_is_network_free_and_identical() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ClassSpec::new("Common Tern", "bird");
        let prompt = build_habitat_prompt(&spec).unwrap();
        let (p, calls, _) = scripted("- A bird which nests on sand.\n- A bird which dives.", vec![]);
        let client = LlmClient::new(p, "gpt-4-0613", Source::Gpt4).with_cache(ResponseCache::open(dir.path()).unwrap());
        let first = query_and_normalize(&client, &prompt, &spec, TextKind::Habitat).unwrap();
        let second = query_and_normalize(&client, &prompt, &spec, TextKind::Habitat).unwrap();
        assert_eq!(first, second);
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        // A different provider instance with the same id replays offline.
        let (p2, calls2, _) = scripted("should not be used", vec![]);
        let replay = LlmClient::new(p2, "gpt-4-0613", Source::Gpt4)
            .with_cache(ResponseCache::open(dir.path()).unwrap())
            .offline(true);
        assert_eq!(query_and_normalize(&replay, &prompt, &spec, TextKind::Habitat).unwrap(), first);
        assert_eq!(calls2.load(Ordering::SeqCst), 0);
        assert!(matches!(
            replay.complete("other", "prompt"),
            Err(CorpusError::Provider(ProviderError::Offline))
        ));
    }

    #[test]
    fn generate_corpus_all_kinds() {
        let (p, _, _) = scripted("- A bird with a black cap.\n- A bird with red legs.", vec![]);
        let client = LlmClient::new(p, "gpt-4-0613", Source::Gpt4);
        let specs = vec![
            ClassSpec::new("Common Tern", "bird").with_scientific_name("Sterna hirundo"),
            ClassSpec::new("Downy Woodpecker", "bird").with_id(1),
        ];
        let corpus = generate_corpus(&client, "cub", &specs, &TextKind::ALL).unwrap();
        assert_eq!(corpus.len_of("Common Tern"), 5);
        assert_eq!(corpus.len_of("Downy Woodpecker"), 4);
        assert_eq!(corpus.domain_word, "bird");
        let kinds: Vec<_> = corpus.records("Common Tern").unwrap().iter().map(|r| r.kind).collect();
        assert_eq!(kinds, vec![TextKind::Visual, TextKind::Visual, TextKind::Habitat, TextKind::Habitat, TextKind::Taxonomy]);
    }
}
