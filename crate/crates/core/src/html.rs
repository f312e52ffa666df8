//! Markup stripping shared by document ingestion and web search.

/// Elements whose entire content is discarded.
const DROPPED: &[&str] = &["script", "style", "head", "noscript", "template"];

/// Elements that start a new line when opened or closed.
const BLOCK: &[&str] = &[
    "address", "article", "aside", "blockquote", "br", "caption", "dd", "details", "div", "dl",
    "dt", "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4", "h5",
    "h6", "header", "hr", "li", "main", "nav", "ol", "p", "pre", "section", "summary", "table",
    "tbody", "td", "tfoot", "th", "thead", "title", "tr", "ul",
];

/// Converts HTML to plain text.
///
/// Contents of `script`, `style` and `head` are dropped, tags are removed,
/// block elements break lines, character references are decoded, runs of
/// whitespace become one space and blank lines collapse. Invalid UTF-8 is
/// replaced rather than rejected.
pub fn html_to_text(input: &[u8]) -> String {
    let src = String::from_utf8_lossy(input);
    let src = src.replace("\r\n", "\n").replace('\r', "\n");
    let mut raw = String::with_capacity(src.len());
    let mut text_run = String::new();
    let mut rest = src.as_str();

    while let Some(lt) = rest.find('<') {
        text_run.push_str(&rest[..lt]);
        let after = &rest[lt..];
        match scan_markup(after) {
            Markup::Text => {
                text_run.push('<');
                rest = &after[1..];
            }
            Markup::Skip(len) => rest = &after[len..],
            Markup::Tag { len, name, closing } => {
                flush_text(&mut raw, &mut text_run);
                rest = &after[len..];
                if BLOCK.contains(&name.as_str()) {
                    raw.push('\n');
                }
                if !closing && DROPPED.contains(&name.as_str()) {
                    rest = skip_past_close(rest, &name);
                    raw.push('\n');
                }
            }
        }
    }
    text_run.push_str(rest);
    flush_text(&mut raw, &mut text_run);
    collapse_whitespace(&raw)
}

fn flush_text(out: &mut String, run: &mut String) {
    if !run.is_empty() {
        out.push_str(&html_escape::decode_html_entities(run.as_str()));
        run.clear();
    }
}

enum Markup {
    /// A literal `<` that does not start markup.
    Text,
    /// Comment, doctype or processing instruction of the given byte length.
    Skip(usize),
    Tag { len: usize, name: String, closing: bool },
}

fn scan_markup(s: &str) -> Markup {
    let bytes = s.as_bytes();
    let Some(&next) = bytes.get(1) else {
        return Markup::Text;
    };
    if s.starts_with("<!--") {
        return match s[4..].find("-->") {
            Some(end) => Markup::Skip(4 + end + 3),
            None => Markup::Skip(s.len()),
        };
    }
    if next == b'!' || next == b'?' {
        return match s.find('>') {
            Some(end) => Markup::Skip(end + 1),
            None => Markup::Text,
        };
    }
    let closing = next == b'/';
    let name_start = if closing { 2 } else { 1 };
    if !bytes.get(name_start).is_some_and(u8::is_ascii_alphabetic) {
        return Markup::Text;
    }
    let name_len = bytes[name_start..]
        .iter()
        .take_while(|b| b.is_ascii_alphanumeric() || **b == b'-' || **b == b':')
        .count();
    let name = s[name_start..name_start + name_len].to_ascii_lowercase();
    match find_tag_end(&bytes[name_start + name_len..]) {
        Some(end) => Markup::Tag {
            len: name_start + name_len + end + 1,
            name,
            closing,
        },
        None => Markup::Text,
    }
}

/// Offset of the `>` that ends a tag, honouring quoted attribute values.
fn find_tag_end(bytes: &[u8]) -> Option<usize> {
    let mut quote: Option<u8> = None;
    for (i, &b) in bytes.iter().enumerate() {
        match quote {
            Some(q) if b == q => quote = None,
            Some(_) => {}
            None if b == b'"' || b == b'\'' => quote = Some(b),
            None if b == b'>' => return Some(i),
            None => {}
        }
    }
    None
}

fn skip_past_close<'a>(s: &'a str, name: &str) -> &'a str {
    let needle = format!("</{name}");
    let lower = s.to_ascii_lowercase();
    let mut from = 0;
    while let Some(pos) = lower[from..].find(&needle) {
        let at = from + pos;
        let after = at + needle.len();
        let boundary = lower.as_bytes().get(after).map_or(true, |b| !b.is_ascii_alphanumeric());
        if boundary {
            return match s[after..].find('>') {
                Some(end) => &s[after + end + 1..],
                None => "",
            };
        }
        from = after;
    }
    ""
}

fn collapse_whitespace(raw: &str) -> String {
    let mut lines: Vec<String> = Vec::new();
    for line in raw.split('\n') {
        let collapsed = line.split_whitespace().collect::<Vec<_>>().join(" ");
        if !collapsed.is_empty() {
            lines.push(collapsed);
        }
    }
    lines.join("\n")
}
