//! Web search: look up pages, fetch them, keep the passages closest to the
//! query, and condense each page to a short summary.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use chrono::Utc;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agent::{parse_action, Action, LlmProvider, Message, PromptBundle};
use crate::embed::{embed_batch, EmbedError, EmbeddingProvider};
use crate::html::html_to_text;
use crate::index::{FlatIndex, IndexError};
use crate::ingest::{chunk_document, Chunk, ChunkPolicy, FetchError, Fetcher, PlainDocument};
use crate::tools::{ToolDescriptor, ToolError, ToolHandler};

pub const PAGE_TIMEOUT: Duration = Duration::from_secs(10);
pub const PIPELINE_TIMEOUT: Duration = Duration::from_secs(60);
pub const FETCH_CONCURRENCY: usize = 4;
pub const SUMMARY_CHAR_LIMIT: usize = 500;
pub const DEFAULT_MAX_RESULTS: usize = 5;
pub const DEFAULT_TOP_CHUNKS: usize = 8;

const CONDENSE_INSTRUCTION: &str = "Condense the web page excerpts below into the essential content that \
answers the query. Keep concrete facts. Respond with {\"type\": \"final\", \"text\": <summary>}.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub url: String,
    pub title: String,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WebSearchError {
    #[error("search provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("query must not be empty")]
    EmptyQuery,
    #[error("web search did not finish within {0:?}")]
    Timeout(Duration),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[async_trait]
pub trait SearchProvider: Send + Sync {
    async fn search(&self, query: &str, max_results: usize) -> Result<Vec<SearchResult>, WebSearchError>;
}

/// Returns the same results for every query.
#[derive(Debug, Clone, Default)]
pub struct MockSearchProvider {
    pub results: Vec<SearchResult>,
}

#[async_trait]
impl SearchProvider for MockSearchProvider {
    async fn search(&self, _query: &str, max_results: usize) -> Result<Vec<SearchResult>, WebSearchError> {
        Ok(self.results.iter().take(max_results).cloned().collect())
    }
}

/// DuckDuckGo's HTML results page.
pub struct DuckDuckGoProvider {
    client: reqwest::Client,
    endpoint: String,
}

impl DuckDuckGoProvider {
    pub fn new() -> Result<Self, WebSearchError> {
        Self::with_endpoint("https://html.duckduckgo.com/html/")
    }

    pub fn with_endpoint(endpoint: impl Into<String>) -> Result<Self, WebSearchError> {
        let client = reqwest::Client::builder()
            .timeout(PAGE_TIMEOUT)
            .user_agent(concat!("agentkit/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| WebSearchError::ProviderUnavailable(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
        })
    }
}

#[async_trait]
impl SearchProvider for DuckDuckGoProvider {
    async fn search(&self, query: &str, max_results: usize) -> Result<Vec<SearchResult>, WebSearchError> {
        let mut url = url::Url::parse(&self.endpoint).map_err(|e| WebSearchError::ProviderUnavailable(e.to_string()))?;
        url.query_pairs_mut().append_pair("q", query);
        let resp = self
            .client
            .get(url)
            .send()
            .await
            .map_err(|e| WebSearchError::ProviderUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(WebSearchError::ProviderUnavailable(format!("HTTP {}", resp.status())));
        }
        let body = resp
            .text()
            .await
            .map_err(|e| WebSearchError::ProviderUnavailable(e.to_string()))?;
        let mut results = parse_duckduckgo_html(&body);
        results.truncate(max_results);
        Ok(results)
    }
}

fn attr_value<'a>(tag: &'a str, name: &str) -> Option<&'a str> {
    let needle = format!("{name}=\"");
    let start = tag.find(&needle)? + needle.len();
    let len = tag[start..].find('"')?;
    Some(&tag[start..start + len])
}

/// Result links wrapped in the `/l/?uddg=` redirect are unwrapped.
fn resolve_result_href(href: &str) -> Option<String> {
    let decoded = html_escape::decode_html_entities(href);
    let absolute = if decoded.starts_with("//") {
        format!("https:{decoded}")
    } else {
        decoded.to_string()
    };
    let url = url::Url::parse(&absolute).ok()?;
    if let Some((_, target)) = url.query_pairs().find(|(k, _)| k == "uddg") {
        let target = url::Url::parse(&target).ok()?;
        return matches!(target.scheme(), "http" | "https").then(|| target.to_string());
    }
    matches!(url.scheme(), "http" | "https").then(|| url.to_string())
}

/// Extracts results from DuckDuckGo's HTML endpoint. Anchors with class
/// `result__a` give url and title; the following `result__snippet` gives
/// the snippet.
pub fn parse_duckduckgo_html(html: &str) -> Vec<SearchResult> {
    let mut out = Vec::new();
    let marks: Vec<usize> = html.match_indices("result__a").map(|(i, _)| i).collect();
    for (n, &mark) in marks.iter().enumerate() {
        let Some(tag_start) = html[..mark].rfind('<') else { continue };
        let Some(tag_len) = html[mark..].find('>') else { continue };
        let tag = &html[tag_start..mark + tag_len];
        if !tag.starts_with("<a") {
            continue;
        }
        let Some(url) = attr_value(tag, "href").and_then(resolve_result_href) else {
            continue;
        };
        let body_start = mark + tag_len + 1;
        let Some(body_len) = html[body_start..].find("</a>") else { continue };
        let title = html_to_text(html[body_start..body_start + body_len].as_bytes());
        // A later mark can sit inside this anchor's own tag.
        let region_end = marks.get(n + 1).copied().unwrap_or(html.len()).max(body_start);
        let snippet = html[body_start..region_end]
            .find("result__snippet")
            .and_then(|i| {
                let from = body_start + i;
                let tag_open = html[..from].rfind('<')?;
                let name: String = html[tag_open + 1..]
                    .chars()
                    .take_while(|c| c.is_ascii_alphanumeric())
                    .collect();
                let open = from + html[from..].find('>')? + 1;
                let close = open + html[open..].find(&format!("</{name}"))?;
                Some(html_to_text(html[open..close].as_bytes()))
            })
            .unwrap_or_default();
        out.push(SearchResult { url, title, snippet });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSummary {
    pub url: String,
    pub title: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WebSearchReport {
    pub summaries: Vec<PageSummary>,
    pub failures: Vec<FetchError>,
}

/// Everything the pipeline talks to.
#[derive(Clone)]
pub struct WebSearch {
    pub provider: Arc<dyn SearchProvider>,
    pub fetcher: Arc<dyn Fetcher>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub llm: Option<Arc<dyn LlmProvider>>,
    pub policy: ChunkPolicy,
    pub page_timeout: Duration,
    pub total_timeout: Duration,
}

impl WebSearch {
    pub fn new(
        provider: Arc<dyn SearchProvider>,
        fetcher: Arc<dyn Fetcher>,
        embedder: Arc<dyn EmbeddingProvider>,
    ) -> Self {
        Self {
            provider,
            fetcher,
            embedder,
            llm: None,
            policy: ChunkPolicy::default(),
            page_timeout: PAGE_TIMEOUT,
            total_timeout: PIPELINE_TIMEOUT,
        }
    }

    pub fn with_llm(mut self, llm: Arc<dyn LlmProvider>) -> Self {
        self.llm = Some(llm);
        self
    }
}

fn clip_chars(text: &str, limit: usize) -> String {
    text.chars().take(limit).collect()
}

async fn fetch_page(ws: &WebSearch, url: &str) -> Result<Vec<u8>, FetchError> {
    match tokio::time::timeout(ws.page_timeout, ws.fetcher.fetch(url)).await {
        Ok(r) => r,
        Err(_) => Err(FetchError::new(url, format!("timed out after {:?}", ws.page_timeout))),
    }
}

async fn condense(ws: &WebSearch, query: &str, chunks: &[&Chunk]) -> String {
    let best = clip_chars(&chunks[0].text, SUMMARY_CHAR_LIMIT);
    let Some(llm) = &ws.llm else {
        return best;
    };
    let excerpts = chunks.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n---\n");
    let bundle = PromptBundle {
        system: CONDENSE_INSTRUCTION.into(),
        messages: vec![Message::user(format!("Query: {query}\n\nExcerpts:\n{excerpts}"))],
        tools: Vec::new(),
    };
    match llm.complete(&bundle).await.map(|p| parse_action(&p)) {
        Ok(Ok(Action::FinalAnswer(text))) if !text.trim().is_empty() => text,
        _ => best,
    }
}

async fn pipeline(
    ws: &WebSearch,
    query: &str,
    max_results: usize,
    top_chunks: usize,
) -> Result<WebSearchReport, WebSearchError> {
    let mut results = ws.provider.search(query, max_results).await?;
    results.truncate(max_results);
    let fetches: Vec<_> = results.iter().map(|r| fetch_page(ws, &r.url)).collect();
    let fetched: Vec<Result<Vec<u8>, FetchError>> = stream::iter(fetches)
        .buffered(FETCH_CONCURRENCY)
        .collect()
        .await;

    let mut report = WebSearchReport::default();
    let mut chunks: Vec<Chunk> = Vec::new();
    for (i, page) in fetched.into_iter().enumerate() {
        match page {
            Ok(bytes) => {
                let doc = PlainDocument {
                    source_id: "web".into(),
                    url: results[i].url.clone(),
                    url_index: i,
                    text: html_to_text(&bytes),
                    fetched_at: Utc::now(),
                };
                chunks.extend(chunk_document(&doc, &ws.policy));
            }
            Err(e) => {
                tracing::warn!(url = %results[i].url, %e, "page fetch failed");
                report.failures.push(e);
            }
        }
    }
    if chunks.is_empty() || top_chunks == 0 {
        return Ok(report);
    }

    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = embed_batch(ws.embedder.as_ref(), &texts).await?;
    let mut store = FlatIndex::with_capacity(ws.embedder.dim(), chunks.len());
    for (c, v) in chunks.iter().zip(&vectors) {
        store.push(c.chunk_id.clone(), v)?;
    }
    let q = embed_batch(ws.embedder.as_ref(), &[query.to_string()]).await?.remove(0);
    let hits = store.search(&q, top_chunks)?;

    // Group by page, pages ordered by their best hit.
    let by_id: BTreeMap<&str, &Chunk> = chunks.iter().map(|c| (c.chunk_id.as_str(), c)).collect();
    let mut groups: Vec<(String, Vec<&Chunk>)> = Vec::new();
    for hit in &hits {
        let chunk = by_id[hit.chunk_id.as_str()];
        match groups.iter_mut().find(|(url, _)| *url == chunk.url) {
            Some((_, list)) => list.push(chunk),
            None => groups.push((chunk.url.clone(), vec![chunk])),
        }
    }
    for (url, group) in groups {
        let title = results
            .iter()
            .find(|r| r.url == url)
            .map(|r| r.title.clone())
            .unwrap_or_default();
        let summary = condense(ws, query, &group).await;
        report.summaries.push(PageSummary { url, title, summary });
    }
    Ok(report)
}

/// Runs the whole pipeline under the total deadline. Pages that fail to
/// fetch are skipped and listed in `failures`.
pub async fn search_and_summarize(
    ws: &WebSearch,
    query: &str,
    max_results: usize,
    top_chunks: usize,
) -> Result<WebSearchReport, WebSearchError> {
    if query.trim().is_empty() {
        return Err(WebSearchError::EmptyQuery);
    }
    tokio::time::timeout(ws.total_timeout, pipeline(ws, query, max_results, top_chunks))
        .await
        .map_err(|_| WebSearchError::Timeout(ws.total_timeout))?
}

pub struct WebSearchTool {
    search: WebSearch,
}

impl WebSearchTool {
    pub fn new(search: WebSearch) -> Self {
        Self { search }
    }

    pub fn descriptor() -> ToolDescriptor {
        ToolDescriptor::new(
            "web_search",
            "Search the web and return condensed summaries of the most relevant pages.",
            json!({
                "type": "object",
                "properties": {
                    "query": {"type": "string", "description": "Search terms"},
                    "max_results": {"type": "integer", "default": DEFAULT_MAX_RESULTS, "description": "Pages to read"}
                },
                "required": ["query"]
            }),
        )
    }
}

#[async_trait]
impl ToolHandler for WebSearchTool {
    async fn call(&self, args: Value) -> Result<Value, ToolError> {
        let query = args["query"].as_str().unwrap_or_default();
        let max_results = args["max_results"].as_u64().unwrap_or(DEFAULT_MAX_RESULTS as u64) as usize;
        let report = search_and_summarize(&self.search, query, max_results, DEFAULT_TOP_CHUNKS)
            .await
            .map_err(|e| match e {
                WebSearchError::ProviderUnavailable(_) => ToolError::new("ProviderUnavailable", e.to_string()),
                WebSearchError::Timeout(_) => ToolError::new(crate::tools::ErrorKind::Timeout, e.to_string()),
                WebSearchError::EmptyQuery => ToolError::new("InvalidArgument", e.to_string()),
                other => ToolError::handler(other.to_string()),
            })?;
        Ok(json!({"results": report.summaries, "failures": report.failures.iter().map(|f| json!({
            "url": f.link, "reason": f.reason
        })).collect::<Vec<_>>()}))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use std::collections::HashMap;

    struct MapFetcher(HashMap<String, String>);

    #[async_trait]
    impl Fetcher for MapFetcher {
        async fn fetch(&self, link: &str) -> Result<Vec<u8>, FetchError> {
            self.0
                .get(link)
                .map(|s| s.clone().into_bytes())
                .ok_or_else(|| FetchError::new(link, "HTTP 404"))
        }
    }

    fn result(url: &str) -> SearchResult {
        SearchResult {
            url: url.into(),
            title: format!("title of {url}"),
            snippet: String::new(),
        }
    }

    fn ws(results: Vec<SearchResult>, pages: &[(&str, &str)]) -> WebSearch {
        WebSearch::new(
            Arc::new(MockSearchProvider { results }),
            Arc::new(MapFetcher(pages.iter().map(|(u, p)| (u.to_string(), p.to_string())).collect())),
            Arc::new(HashEmbedder::new(256).unwrap()),
        )
    }

    #[tokio::test]
    async fn planted_fact_is_returned() {
        let page = "<html><head><title>x</title><script>var a=1;</script></head><body>\
            <h1>Segmentation tools</h1><p>Cellpose segments cells.</p></body></html>";
        let w = ws(vec![result("https://example.org/cellpose")], &[("https://example.org/cellpose", page)]);
        let report = search_and_summarize(&w, "cellpose", 5, 4).await.unwrap();
        assert_eq!(report.summaries.len(), 1);
        assert!(report.summaries[0].summary.contains("Cellpose segments cells."));
        assert_eq!(report.summaries[0].title, "title of https://example.org/cellpose");
    }

    #[tokio::test]
    async fn zero_results_and_all_failures() {
        let w = ws(vec![], &[]);
        assert_eq!(search_and_summarize(&w, "q", 5, 4).await.unwrap(), WebSearchReport::default());
        let w = ws(vec![result("https://a.test/"), result("https://b.test/")], &[]);
        let report = search_and_summarize(&w, "q", 5, 4).await.unwrap();
        assert!(report.summaries.is_empty());
        assert_eq!(report.failures.len(), 2);
    }

    #[tokio::test]
    async fn summaries_clip_to_limit_and_respect_max_results() {
        let body: String = (0..400).map(|i| format!("word{i} ")).collect();
        let long = format!("<p>{body}</p>");
        let w = ws(
            vec![result("https://a.test/"), result("https://b.test/")],
            &[("https://a.test/", &long), ("https://b.test/", &long)],
        );
        let report = search_and_summarize(&w, "word1 word2 word3", 1, 4).await.unwrap();
        assert_eq!(report.summaries.len(), 1);
        assert_eq!(report.summaries[0].summary.chars().count(), SUMMARY_CHAR_LIMIT);
    }

    #[tokio::test]
    async fn llm_condensation_used_when_configured() {
        let w = ws(vec![result("https://a.test/")], &[("https://a.test/", "<p>facts</p>")]).with_llm(Arc::new(
            crate::agent::ScriptedProvider::new([Action::final_answer("condensed")]),
        ));
        let report = search_and_summarize(&w, "facts", 5, 4).await.unwrap();
        assert_eq!(report.summaries[0].summary, "condensed");
    }

    #[tokio::test]
    async fn slow_pages_time_out_individually() {
        struct Slow;
        #[async_trait]
        impl Fetcher for Slow {
            async fn fetch(&self, _: &str) -> Result<Vec<u8>, FetchError> {
                tokio::time::sleep(Duration::from_secs(30)).await;
                Ok(Vec::new())
            }
        }
        let mut w = ws(vec![result("https://slow.test/")], &[]);
        w.fetcher = Arc::new(Slow);
        w.page_timeout = Duration::from_millis(20);
        let report = search_and_summarize(&w, "q", 5, 4).await.unwrap();
        assert_eq!(report.failures.len(), 1);
        assert!(report.failures[0].reason.contains("timed out"));
        w.page_timeout = Duration::from_secs(30);
        w.total_timeout = Duration::from_millis(20);
        assert!(matches!(
            search_and_summarize(&w, "q", 5, 4).await,
            Err(WebSearchError::Timeout(_))
        ));
    }

    #[test]
    fn parses_duckduckgo_results() {
        let html = r#"
<div class="result">
  <h2 class="result__title">
    <a rel="nofollow" class="result__a" href="//duckduckgo.com/l/?uddg=https%3A%2F%2Fwww.cellpose.org%2F&amp;rut=abc">Cellpose &amp; friends</a>
  </h2>
  <a class="result__snippet" href="x">A <b>generalist</b> algorithm for cell segmentation.</a>
</div>
<div class="result">
  <a rel="nofollow" class="result__a" href="https://imagej.net/">ImageJ</a>
</div>
<div class="result"><a class="result__a" href="javascript:alert(1)">bad</a></div>"#;
        let results = parse_duckduckgo_html(html);
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].url, "https://www.cellpose.org/");
        assert_eq!(results[0].title, "Cellpose & friends");
        assert_eq!(results[0].snippet, "A generalist algorithm for cell segmentation.");
        assert_eq!(results[1].url, "https://imagej.net/");
        assert_eq!(results[1].snippet, "");
        assert!(parse_duckduckgo_html("<a class=\"result__a\"").is_empty());
    }

    #[test]
    fn repeated_class_inside_one_tag() {
        let results = parse_duckduckgo_html(r#"<a class="result__a result__a" href="https://a.test/">x</a>"#);
        assert!(results.iter().all(|r| r.url == "https://a.test/"), "{results:?}");
    }
}
