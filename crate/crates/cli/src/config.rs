//! Layered settings: command-line flags over environment variables over a
//! TOML config file, with every resolved value traced to where it came from.
//!
//! The file mirrors the flags. Keys are looked up in the subcommand's table
//! first (`[serve]`, `[microscope-sim]`, ...) and then at the top level, so
//! shared values such as `token` or `gateway` can be set once.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Flag,
    Env(String),
    File(String),
    Default,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Flag => f.write_str("flag"),
            Source::Env(name) => write!(f, "env {name}"),
            Source::File(key) => write!(f, "config {key}"),
            Source::Default => f.write_str("default"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Resolved {
    pub key: String,
    pub shown: String,
    pub source: Source,
}

pub struct Layers {
    file: Option<(PathBuf, toml::Table)>,
    section: &'static str,
    trace: Vec<Resolved>,
    env: Box<dyn Fn(&str) -> Option<String>>,
}

/// Keys whose values are never echoed.
const SECRET_KEYS: &[&str] = &["token"];

impl Layers {
    pub fn new(section: &'static str, file: Option<(PathBuf, toml::Table)>) -> Self {
        Self {
            file,
            section,
            trace: Vec::new(),
            env: Box::new(|name| std::env::var(name).ok().filter(|v| !v.is_empty())),
        }
    }

    /// Replaces the process environment, for tests.
    pub fn with_env(mut self, env: impl Fn(&str) -> Option<String> + 'static) -> Self {
        self.env = Box::new(env);
        self
    }

    pub fn load(section: &'static str, path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            None => None,
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", p.display())))?;
                let table: toml::Table = text
                    .parse()
                    .map_err(|e| CliError::Usage(format!("invalid config file {}: {e}", p.display())))?;
                Some((p.to_path_buf(), table))
            }
        };
        Ok(Self::new(section, file))
    }

    pub fn trace(&self) -> &[Resolved] {
        &self.trace
    }

    pub fn report(&self) -> String {
        self.trace
            .iter()
            .map(|r| format!("{} = {} ({})", r.key, r.shown, r.source))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn file_value(&self, key: &str) -> Option<(String, &toml::Value)> {
        let (_, table) = self.file.as_ref()?;
        if let Some(v) = table.get(self.section).and_then(|s| s.as_table()).and_then(|s| s.get(key)) {
            return Some((format!("{}.{key}", self.section), v));
        }
        // A top-level table with the same name as a key is a section, not a value.
        table.get(key).filter(|v| !v.is_table()).map(|v| (key.to_string(), v))
    }

    fn record(&mut self, key: &str, shown: String, source: Source) {
        let shown = if SECRET_KEYS.contains(&key) { "<redacted>".into() } else { shown };
        self.trace.push(Resolved {
            key: key.to_string(),
            shown,
            source,
        });
    }

    fn parse<T: FromStr>(key: &str, raw: &str, source: &Source) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        raw.parse()
            .map_err(|e| CliError::Usage(format!("invalid value `{raw}` for {key} ({source}): {e}")))
    }

    /// Highest-precedence value for `key`, or `None` when no layer sets it.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, env: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        if let Some(v) = flag {
            self.record(key, v.to_string(), Source::Flag);
            return Ok(Some(v));
        }
        if let Some(raw) = (self.env)(env) {
            let source = Source::Env(env.to_string());
            let v: T = Self::parse(key, &raw, &source)?;
            self.record(key, v.to_string(), source);
            return Ok(Some(v));
        }
        if let Some((path, value)) = self.file_value(key) {
            let raw = scalar(value).ok_or_else(|| CliError::Usage(format!("config {path} must be a scalar")))?;
            let source = Source::File(path);
            let v: T = Self::parse(key, &raw, &source)?;
            self.record(key, v.to_string(), source);
            return Ok(Some(v));
        }
        Ok(None)
    }

    pub fn get_or<T>(&mut self, key: &str, flag: Option<T>, env: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        match self.get(key, flag, env)? {
            Some(v) => Ok(v),
            None => {
                self.record(key, default.to_string(), Source::Default);
                Ok(default)
            }
        }
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<T>, env: &str) -> Result<T, CliError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        self.get(key, flag, env)?.ok_or_else(|| {
            CliError::Usage(format!(
                "missing required value `{key}`: pass --{}, set {env}, or add it to the config file",
                key.replace('_', "-")
            ))
        })
    }

    /// Switches: a set flag wins; otherwise env (`1`/`true`/...) or file.
    pub fn switch(&mut self, key: &str, flag: bool, env: &str) -> Result<bool, CliError> {
        let v = self.get_or(key, flag.then_some(Bool(true)), env, Bool(false))?;
        Ok(v.0)
    }

    /// Lists: flags replace everything; env is comma-separated; the file
    /// takes an array or a single string.
    pub fn list(&mut self, key: &str, flag: Vec<String>, env: &str) -> Result<Vec<String>, CliError> {
        let (items, source) = if !flag.is_empty() {
            (flag, Source::Flag)
        } else if let Some(raw) = (self.env)(env) {
            let items = raw.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
            (items, Source::Env(env.to_string()))
        } else if let Some((path, value)) = self.file_value(key) {
            let items = match value {
                toml::Value::Array(a) => a
                    .iter()
                    .map(|v| scalar(v).ok_or_else(|| CliError::Usage(format!("config {path} must hold scalars"))))
                    .collect::<Result<Vec<_>, _>>()?,
                other => vec![scalar(other).ok_or_else(|| CliError::Usage(format!("config {path} must be a list")))?],
            };
            (items, Source::File(path))
        } else {
            (Vec::new(), Source::Default)
        };
        self.record(key, format!("[{}]", items.join(", ")), source);
        Ok(items)
    }

    /// Resolves a path from the file relative to the file's directory.
    pub fn path(&mut self, key: &str, flag: Option<PathBuf>, env: &str) -> Result<Option<PathBuf>, CliError> {
        let from_file = flag.is_none() && (self.env)(env).is_none();
        let v = self.get(key, flag.map(DisplayPath), env)?.map(|p| p.0);
        Ok(v.map(|p| if from_file { self.relative_to_file(p) } else { p }))
    }

    pub fn relative_to_file(&self, p: PathBuf) -> PathBuf {
        match (&self.file, p.is_relative()) {
            (Some((file, _)), true) => file.parent().map(|d| d.join(&p)).unwrap_or(p),
            _ => p,
        }
    }

    /// Like [`list`](Self::list), resolving file entries relative to the file.
    pub fn paths(&mut self, key: &str, flag: Vec<PathBuf>, env: &str) -> Result<Vec<PathBuf>, CliError> {
        let flag: Vec<String> = flag.iter().map(|p| p.display().to_string()).collect();
        let from_file = flag.is_empty() && (self.env)(env).is_none();
        let items = self.list(key, flag, env)?;
        Ok(items
            .into_iter()
            .map(PathBuf::from)
            .map(|p| if from_file { self.relative_to_file(p) } else { p })
            .collect())
    }
}

fn scalar(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Lenient boolean for env and file values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bool(pub bool);

impl FromStr for Bool {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" | "on" => Ok(Bool(true)),
            "0" | "false" | "no" | "off" => Ok(Bool(false)),
            _ => Err("expected true or false".into()),
        }
    }
}

impl fmt::Display for Bool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone)]
struct DisplayPath(PathBuf);

impl FromStr for DisplayPath {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Self(PathBuf::from(s)))
    }
}

impl fmt::Display for DisplayPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.display().fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn layers(env: &[(&str, &str)], file: &str) -> Layers {
        let env: HashMap<String, String> = env.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let table: toml::Table = file.parse().unwrap();
        Layers::new("serve", Some((PathBuf::from("/etc/agentkit/agentkit.toml"), table)))
            .with_env(move |k| env.get(k).cloned())
    }

    #[test]
    fn precedence_flag_env_file_default() {
        let file = "port = 1\n[serve]\nport = 2\nhost = \"0.0.0.0\"\n";
        let mut l = layers(&[("AGENTKIT_PORT", "3")], file);
        assert_eq!(l.get_or("port", Some(4u16), "AGENTKIT_PORT", 0).unwrap(), 4);
        assert_eq!(l.get_or("port", None::<u16>, "AGENTKIT_PORT", 0).unwrap(), 3);
        let mut l = layers(&[], file);
        assert_eq!(l.get_or("port", None::<u16>, "AGENTKIT_PORT", 0).unwrap(), 2);
        assert_eq!(l.get_or("host", None::<String>, "AGENTKIT_HOST", "127.0.0.1".into()).unwrap(), "0.0.0.0");
        assert_eq!(l.get_or("k", None::<usize>, "AGENTKIT_K", 5).unwrap(), 5);
        let report = l.report();
        assert!(report.contains("port = 2 (config serve.port)"), "{report}");
        assert!(report.contains("host = 0.0.0.0 (config serve.host)"));
        assert!(report.contains("k = 5 (default)"));
    }

    #[test]
    fn top_level_fallback_and_secrets() {
        let mut l = layers(&[], "token = \"abc\"\ngateway = \"http://g\"\n[serve]\n");
        assert_eq!(l.get("token", None::<String>, "AGENTKIT_TOKEN").unwrap().as_deref(), Some("abc"));
        assert_eq!(l.get("gateway", None::<String>, "AGENTKIT_GATEWAY").unwrap().as_deref(), Some("http://g"));
        let report = l.report();
        assert!(report.contains("token = <redacted> (config token)"));
        assert!(!report.contains("abc"));
    }

    #[test]
    fn lists_switches_and_paths() {
        let mut l = layers(&[("AGENTKIT_WEB_SEARCH", "yes")], "[serve]\nkb = [\"a.kb\", \"b.kb\"]\nassistant = \"demo.json\"\n");
        assert_eq!(l.list("kb", vec![], "AGENTKIT_KB").unwrap(), vec!["a.kb", "b.kb"]);
        assert_eq!(l.list("kb", vec!["c.kb".into()], "AGENTKIT_KB").unwrap(), vec!["c.kb"]);
        assert_eq!(
            l.paths("kb", vec![], "AGENTKIT_KB").unwrap(),
            vec![PathBuf::from("/etc/agentkit/a.kb"), PathBuf::from("/etc/agentkit/b.kb")]
        );
        assert!(l.switch("web_search", false, "AGENTKIT_WEB_SEARCH").unwrap());
        assert!(!l.switch("run_code", false, "AGENTKIT_RUN_CODE").unwrap());
        assert_eq!(
            l.path("assistant", None, "AGENTKIT_ASSISTANT").unwrap(),
            Some(PathBuf::from("/etc/agentkit/demo.json"))
        );
        assert_eq!(
            l.path("assistant", Some("x.json".into()), "AGENTKIT_ASSISTANT").unwrap(),
            Some(PathBuf::from("x.json"))
        );
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let mut l = layers(&[("AGENTKIT_PORT", "http")], "");
        assert!(matches!(l.get::<u16>("port", None, "AGENTKIT_PORT"), Err(CliError::Usage(_))));
        let mut l = layers(&[], "");
        assert!(matches!(l.require::<String>("gateway", None, "AGENTKIT_GATEWAY"), Err(CliError::Usage(_))));
    }
}
