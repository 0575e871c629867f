//! Dublin Core in HTML `meta` elements (`<meta name="DC.Title" content="…">`).
//!
//! A tag-level scanner rather than an HTML parser: comments, `script` and
//! `style` bodies are skipped, every other tag except `meta` is ignored.

use quick_xml::escape::resolve_html5_entity;

use crate::dc::{ElementName, MetadataRecord, Statement};

use super::split_dc_name;

fn find_ci(haystack: &[u8], needle: &[u8], from: usize) -> Option<usize> {
    if needle.is_empty() || from > haystack.len() {
        return None;
    }
    haystack[from..]
        .windows(needle.len())
        .position(|w| w.eq_ignore_ascii_case(needle))
        .map(|p| p + from)
}

/// Index of the `>` closing a tag, skipping quoted attribute values.
fn tag_end(raw: &[u8], from: usize) -> Option<usize> {
    let mut quote = None;
    for (i, &b) in raw.iter().enumerate().skip(from) {
        match (quote, b) {
            (None, b'>') => return Some(i),
            (None, b'"' | b'\'') => quote = Some(b),
            (Some(q), b) if q == b => quote = None,
            _ => {}
        }
    }
    None
}

/// Parses the attributes of a tag body (everything after the tag name, up to
/// but excluding `>`). Keys are lowercased; later duplicates are ignored.
fn parse_attributes(body: &str) -> Vec<(String, String)> {
    let mut attrs: Vec<(String, String)> = Vec::new();
    let mut rest = body;
    loop {
        rest = rest.trim_start_matches(|c: char| c.is_whitespace() || c == '/');
        if rest.is_empty() {
            break;
        }
        let key_end = rest
            .find(|c: char| c.is_whitespace() || c == '=' || c == '/')
            .unwrap_or(rest.len());
        let key = rest[..key_end].to_ascii_lowercase();
        rest = rest[key_end..].trim_start();
        let value = if let Some(after_eq) = rest.strip_prefix('=') {
            let after_eq = after_eq.trim_start();
            match after_eq.chars().next() {
                Some(q @ ('"' | '\'')) => {
                    let inner = &after_eq[1..];
                    let end = inner.find(q).unwrap_or(inner.len());
                    rest = inner.get(end + 1..).unwrap_or("");
                    inner[..end].to_string()
                }
                _ => {
                    let end = after_eq.find(char::is_whitespace).unwrap_or(after_eq.len());
                    rest = &after_eq[end..];
                    after_eq[..end].to_string()
                }
            }
        } else {
            String::new()
        };
        if key.is_empty() {
            // stray `=`; drop one char and move on
            rest = rest.get(1..).unwrap_or("");
            continue;
        }
        if !attrs.iter().any(|(k, _)| *k == key) {
            attrs.push((key, decode_entities(&value)));
        }
    }
    attrs
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp..];
        let decoded = tail.find(';').filter(|&semi| semi <= 32).and_then(|semi| {
            let name = &tail[1..semi];
            let c: Option<String> = if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                u32::from_str_radix(hex, 16).ok().and_then(char::from_u32).map(String::from)
            } else if let Some(dec) = name.strip_prefix('#') {
                dec.parse::<u32>().ok().and_then(char::from_u32).map(String::from)
            } else {
                resolve_html5_entity(name).map(str::to_string)
            };
            c.map(|c| (c, semi))
        });
        match decoded {
            Some((c, semi)) => {
                out.push_str(&c);
                rest = &tail[semi + 1..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn meta_to_statement(attrs: &[(String, String)], warnings: &mut Vec<String>) -> Option<Statement> {
    let get = |k: &str| attrs.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let name = get("name")?;
    let (element, qualifier) = split_dc_name(name)?;
    let Ok(element) = element.parse::<ElementName>() else {
        warnings.push(format!("unknown Dublin Core element in meta name `{name}`"));
        return None;
    };
    let value = get("content").unwrap_or("");
    let mut statement = Statement::new(element, value);
    statement.qualifier = qualifier.map(str::to_string);
    statement.scheme = get("scheme").map(str::to_string);
    statement.language = get("lang").or_else(|| get("xml:lang")).map(str::to_string);
    if let Err(e) = statement.check() {
        warnings.push(format!("skipping meta `{name}`: {e}"));
        return None;
    }
    Some(statement)
}

/// Extracts `DC.*` meta elements in document order.
pub fn extract_dc_from_html(bytes: &[u8]) -> (MetadataRecord, Vec<String>) {
    let text = String::from_utf8_lossy(bytes);
    let raw = text.as_bytes();
    let mut record = MetadataRecord::default();
    let mut warnings = Vec::new();
    let mut i = 0;
    while let Some(lt) = raw[i..].iter().position(|&b| b == b'<').map(|p| p + i) {
        let rest = &raw[lt..];
        if rest.starts_with(b"<!--") {
            i = find_ci(raw, b"-->", lt + 4).map(|p| p + 3).unwrap_or(raw.len());
            continue;
        }
        let name_end = rest[1..]
            .iter()
            .position(|b| b.is_ascii_whitespace() || *b == b'>' || *b == b'/')
            .map(|p| p + 1)
            .unwrap_or(rest.len());
        let tag = &rest[1..name_end];
        let Some(gt) = tag_end(raw, lt + name_end) else {
            break;
        };
        if tag.eq_ignore_ascii_case(b"script") || tag.eq_ignore_ascii_case(b"style") {
            let closing: &[u8] = if tag.eq_ignore_ascii_case(b"script") { b"</script" } else { b"</style" };
            i = find_ci(raw, closing, gt + 1).unwrap_or(raw.len());
            continue;
        }
        if tag.eq_ignore_ascii_case(b"meta") {
            // lt + name_end .. gt is on char boundaries: both are ASCII bytes
            let body = &text[lt + name_end..gt];
            let attrs = parse_attributes(body);
            if let Some(s) = meta_to_statement(&attrs, &mut warnings) {
                record.push(s);
            }
        }
        i = gt + 1;
    }
    (record, warnings)
}
