use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_yaml::Value;

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentFormat {
    Markdown,
    Html,
    Pdf,
    Plaintext,
}

impl DocumentFormat {
    /// Guesses a format from a link's file extension, defaulting to markdown.
    pub fn infer(link: &str) -> Self {
        let path = link.split(['?', '#']).next().unwrap_or(link).to_ascii_lowercase();
        if path.ends_with(".html") || path.ends_with(".htm") {
            Self::Html
        } else if path.ends_with(".pdf") {
            Self::Pdf
        } else if path.ends_with(".txt") {
            Self::Plaintext
        } else {
            Self::Markdown
        }
    }
}

impl FromStr for DocumentFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "html" => Ok(Self::Html),
            "pdf" => Ok(Self::Pdf),
            "plaintext" | "text" | "txt" => Ok(Self::Plaintext),
            other => Err(IngestError::UnsupportedFormat(other.to_string())),
        }
    }
}

impl fmt::Display for DocumentFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Markdown => "markdown",
            Self::Html => "html",
            Self::Pdf => "pdf",
            Self::Plaintext => "plaintext",
        })
    }
}

/// One collection entry of the knowledge-base manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSource {
    pub id: String,
    pub name: String,
    pub description: String,
    pub links: Vec<String>,
    pub format: DocumentFormat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestWarning {
    /// Index of the offending entry, or `None` for top-level keys.
    pub entry: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub sources: Vec<DocumentSource>,
    pub warnings: Vec<ManifestWarning>,
}

const KNOWN_KEYS: &[&str] = &["id", "name", "description", "links", "format"];

pub fn is_valid_source_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

/// A link must be an absolute http(s)/file URL or something usable as a
/// filesystem path. Existence of local paths is checked by the fetcher.
fn check_link(link: &str) -> Result<(), String> {
    if link.trim().is_empty() {
        return Err("empty link".into());
    }
    if link.contains('\0') {
        return Err("link contains NUL".into());
    }
    match url::Url::parse(link) {
        Ok(u) if matches!(u.scheme(), "http" | "https" | "file") => Ok(()),
        Ok(u) if u.scheme().len() > 1 => Err(format!("unsupported URL scheme `{}`", u.scheme())),
        // Relative paths and Windows drive letters.
        _ => Ok(()),
    }
}

/// Parses the YAML manifest: a top-level `collections` sequence of entries
/// with `id`, `name`, `description`, `links` and `format`.
///
/// Unknown keys are ignored and reported as warnings. A missing `format` is
/// inferred from the first link.
pub fn parse_manifest(text: &str) -> Result<Manifest, IngestError> {
    let root: Value =
        serde_yaml::from_str(text).map_err(|e| IngestError::MalformedManifest(e.to_string()))?;
    let Value::Mapping(root) = root else {
        return Err(IngestError::MalformedManifest(
            "top level must be a mapping with a `collections` key".into(),
        ));
    };

    let mut manifest = Manifest::default();
    for key in root.keys() {
        let name = key.as_str().unwrap_or("<non-string key>");
        if name != "collections" {
            manifest.warnings.push(ManifestWarning {
                entry: None,
                message: format!("ignoring unknown top-level key `{name}`"),
            });
        }
    }
    let entries = match root.get("collections") {
        Some(Value::Sequence(seq)) => seq,
        Some(Value::Null) => return Ok(manifest),
        Some(_) => {
            return Err(IngestError::MalformedManifest(
                "`collections` must be a sequence".into(),
            ))
        }
        None => {
            return Err(IngestError::MalformedManifest(
                "missing top-level `collections`".into(),
            ))
        }
    };

    let mut seen = BTreeSet::new();
    for (i, entry) in entries.iter().enumerate() {
        let Value::Mapping(map) = entry else {
            return Err(IngestError::MalformedManifest(format!(
                "collection entry {i} is not a mapping"
            )));
        };
        for key in map.keys() {
            let k = key.as_str().unwrap_or("<non-string key>");
            if !KNOWN_KEYS.contains(&k) {
                manifest.warnings.push(ManifestWarning {
                    entry: Some(i),
                    message: format!("ignoring unknown key `{k}`"),
                });
            }
        }

        let string_field = |field: &'static str| -> Result<Option<String>, IngestError> {
            match map.get(field) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => Ok(Some(s.clone())),
                Some(Value::Number(n)) => Ok(Some(n.to_string())),
                Some(Value::Bool(b)) => Ok(Some(b.to_string())),
                Some(_) => Err(IngestError::InvalidField {
                    entry: i,
                    field,
                    reason: "expected a string".into(),
                }),
            }
        };

        let id = string_field("id")?.ok_or(IngestError::MissingField { entry: i, field: "id" })?;
        if !is_valid_source_id(&id) {
            return Err(IngestError::InvalidField {
                entry: i,
                field: "id",
                reason: format!("`{id}` does not match [a-z0-9-]+"),
            });
        }
        let name = string_field("name")?
            .filter(|s| !s.trim().is_empty())
            .ok_or(IngestError::MissingField { entry: i, field: "name" })?;
        let description = string_field("description")?.unwrap_or_default();

        let links: Vec<String> = match map.get("links") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::String(s)) => vec![s.clone()],
            Some(Value::Sequence(seq)) => seq
                .iter()
                .map(|v| {
                    v.as_str().map(str::to_owned).ok_or(IngestError::InvalidField {
                        entry: i,
                        field: "links",
                        reason: "every link must be a string".into(),
                    })
                })
                .collect::<Result<_, _>>()?,
            Some(_) => {
                return Err(IngestError::InvalidField {
                    entry: i,
                    field: "links",
                    reason: "expected a list of strings".into(),
                })
            }
        };
        if links.is_empty() {
            return Err(IngestError::MissingField { entry: i, field: "links" });
        }
        for link in &links {
            check_link(link).map_err(|reason| IngestError::InvalidField {
                entry: i,
                field: "links",
                reason,
            })?;
        }

        let format = match string_field("format")? {
            Some(f) => f.parse()?,
            None => DocumentFormat::infer(&links[0]),
        };

        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateSourceId(id));
        }
        manifest.sources.push(DocumentSource {
            id,
            name,
            description,
            links,
            format,
        });
    }
    Ok(manifest)
}
