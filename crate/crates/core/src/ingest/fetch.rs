use std::path::{Path, PathBuf};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[error("failed to fetch {link}: {reason}")]
pub struct FetchError {
    pub link: String,
    pub reason: String,
}

impl FetchError {
    pub fn new(link: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            link: link.into(),
            reason: reason.into(),
        }
    }
}

/// Retrieves the raw bytes behind a manifest link or a web page URL.
#[async_trait]
pub trait Fetcher: Send + Sync {
    async fn fetch(&self, link: &str) -> Result<Vec<u8>, FetchError>;
}

/// Reads local paths and `file://` URLs. Relative paths resolve against
/// `base_dir`.
#[derive(Debug, Clone)]
pub struct FsFetcher {
    base_dir: PathBuf,
}

impl FsFetcher {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        Self {
            base_dir: base_dir.into(),
        }
    }

    pub fn resolve(&self, link: &str) -> Result<PathBuf, FetchError> {
        if let Ok(url) = url::Url::parse(link) {
            match url.scheme() {
                "file" => {
                    return url
                        .to_file_path()
                        .map_err(|_| FetchError::new(link, "invalid file URL"))
                }
                s if s.len() > 1 => {
                    return Err(FetchError::new(link, format!("scheme `{s}` is not a local path")))
                }
                _ => {}
            }
        }
        let path = Path::new(link);
        Ok(if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        })
    }
}

#[async_trait]
impl Fetcher for FsFetcher {
    async fn fetch(&self, link: &str) -> Result<Vec<u8>, FetchError> {
        let path = self.resolve(link)?;
        tokio::fs::read(&path)
            .await
            .map_err(|e| FetchError::new(link, format!("{}: {e}", path.display())))
    }
}

/// Plain HTTP GET with a per-request timeout.
#[derive(Debug, Clone)]
pub struct HttpFetcher {
    client: reqwest::Client,
}

impl HttpFetcher {
    pub fn new(timeout: Duration) -> Result<Self, FetchError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .user_agent(concat!("agentkit/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| FetchError::new("", e.to_string()))?;
        Ok(Self { client })
    }
}

#[async_trait]
impl Fetcher for HttpFetcher {
    async fn fetch(&self, link: &str) -> Result<Vec<u8>, FetchError> {
        let resp = self
            .client
            .get(link)
            .send()
            .await
            .map_err(|e| FetchError::new(link, e.to_string()))?;
        if !resp.status().is_success() {
            return Err(FetchError::new(link, format!("HTTP {}", resp.status())));
        }
        resp.bytes()
            .await
            .map(|b| b.to_vec())
            .map_err(|e| FetchError::new(link, e.to_string()))
    }
}

/// Routes http(s) links to [`HttpFetcher`] and everything else to
/// [`FsFetcher`].
#[derive(Debug, Clone)]
pub struct DefaultFetcher {
    fs: FsFetcher,
    http: HttpFetcher,
}

impl DefaultFetcher {
    pub fn new(base_dir: impl Into<PathBuf>) -> Result<Self, FetchError> {
        Ok(Self {
            fs: FsFetcher::new(base_dir),
            http: HttpFetcher::new(Duration::from_secs(10))?,
        })
    }
}

#[async_trait]
impl Fetcher for DefaultFetcher {
    async fn fetch(&self, link: &str) -> Result<Vec<u8>, FetchError> {
        if link.starts_with("http://") || link.starts_with("https://") {
            self.http.fetch(link).await
        } else {
            self.fs.fetch(link).await
        }
    }
}
