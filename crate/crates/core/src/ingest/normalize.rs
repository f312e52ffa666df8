use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{DocumentFormat, IngestError};
use crate::html::html_to_text;

/// A fetched document reduced to plain text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlainDocument {
    pub source_id: String,
    pub url: String,
    /// Position of `url` in the source's link list.
    pub url_index: usize,
    pub text: String,
    pub fetched_at: DateTime<Utc>,
}

/// Pluggable PDF text extraction.
pub trait PdfExtractor: Send + Sync {
    fn extract(&self, bytes: &[u8]) -> Result<String, String>;
}

#[derive(Clone, Default)]
pub struct Normalizer {
    pdf: Option<Arc<dyn PdfExtractor>>,
}

impl Normalizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_pdf_extractor(mut self, extractor: Arc<dyn PdfExtractor>) -> Self {
        self.pdf = Some(extractor);
        self
    }

    pub fn normalize_text(&self, raw: &[u8], format: DocumentFormat) -> Result<String, IngestError> {
        let text = match format {
            DocumentFormat::Markdown => strip_front_matter(&decode_utf8(raw)?).to_string(),
            DocumentFormat::Plaintext => decode_utf8(raw)?,
            DocumentFormat::Html => html_to_text(raw),
            DocumentFormat::Pdf => {
                let extractor = self.pdf.as_ref().ok_or(IngestError::PdfExtractorUnavailable)?;
                extractor.extract(raw).map_err(IngestError::DecodeError)?
            }
        };
        Ok(clean(&text))
    }

    pub fn normalize(
        &self,
        source_id: &str,
        url: &str,
        url_index: usize,
        raw: &[u8],
        format: DocumentFormat,
    ) -> Result<PlainDocument, IngestError> {
        Ok(PlainDocument {
            source_id: source_id.to_string(),
            url: url.to_string(),
            url_index,
            text: self.normalize_text(raw, format)?,
            fetched_at: Utc::now(),
        })
    }
}

fn decode_utf8(raw: &[u8]) -> Result<String, IngestError> {
    let raw = raw.strip_prefix(b"\xef\xbb\xbf").unwrap_or(raw);
    String::from_utf8(raw.to_vec()).map_err(|e| IngestError::DecodeError(e.to_string()))
}

fn clean(text: &str) -> String {
    text.replace("\r\n", "\n").replace(['\r'], "\n").replace('\0', "")
}

/// Drops a leading `---` YAML front-matter block.
fn strip_front_matter(text: &str) -> &str {
    let Some(body) = text.strip_prefix("---\n").or_else(|| text.strip_prefix("---\r\n")) else {
        return text;
    };
    let mut offset = 0;
    for line in body.split_inclusive('\n') {
        offset += line.len();
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if trimmed == "---" || trimmed == "..." {
            return &body[offset..];
        }
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Upper;
    impl PdfExtractor for Upper {
        fn extract(&self, bytes: &[u8]) -> Result<String, String> {
            Ok(String::from_utf8_lossy(bytes).to_uppercase())
        }
    }

    #[test]
    fn markdown_passes_through() {
        let n = Normalizer::new();
        assert_eq!(
            n.normalize_text(b"## Title\nBody", DocumentFormat::Markdown).unwrap(),
            "## Title\nBody"
        );
    }

    #[test]
    fn markdown_front_matter_dropped() {
        let n = Normalizer::new();
        let src = b"---\ntitle: x\n---\n# Heading\r\ntext";
        assert_eq!(
            n.normalize_text(src, DocumentFormat::Markdown).unwrap(),
            "# Heading\ntext"
        );
        // An unterminated block is left alone.
        assert_eq!(
            n.normalize_text(b"---\nno end", DocumentFormat::Markdown).unwrap(),
            "---\nno end"
        );
    }

    #[test]
    fn html_is_stripped() {
        let n = Normalizer::new();
        assert_eq!(
            n.normalize_text(b"<p>Hello <b>world</b></p>", DocumentFormat::Html).unwrap(),
            "Hello world"
        );
    }

    #[test]
    fn pdf_needs_an_extractor() {
        let n = Normalizer::new();
        assert_eq!(
            n.normalize_text(b"%PDF-1.4", DocumentFormat::Pdf),
            Err(IngestError::PdfExtractorUnavailable)
        );
        let n = n.with_pdf_extractor(Arc::new(Upper));
        assert_eq!(n.normalize_text(b"abc", DocumentFormat::Pdf).unwrap(), "ABC");
    }

    #[test]
    fn invalid_utf8_and_nul() {
        let n = Normalizer::new();
        assert!(matches!(
            n.normalize_text(&[0xff, 0xfe], DocumentFormat::Plaintext),
            Err(IngestError::DecodeError(_))
        ));
        assert_eq!(
            n.normalize_text(b"a\0b\r\nc\rd", DocumentFormat::Plaintext).unwrap(),
            "ab\nc\nd"
        );
    }
}
