//! Minimal XML tree used by the record and harvest-response decoders.

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::CodecError;

const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Element(Element),
    Text(String),
}

impl Element {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    /// Child elements, failing on non-whitespace text.
    pub fn element_children(&self) -> Result<Vec<&Element>, CodecError> {
        let mut out = Vec::new();
        for child in &self.children {
            match child {
                Node::Element(e) => out.push(e),
                Node::Text(t) if t.trim().is_empty() => {}
                Node::Text(_) => {
                    return Err(CodecError::Structure(format!("unexpected text inside <{}>", self.name)))
                }
            }
        }
        Ok(out)
    }

    /// Concatenated text content, failing on child elements.
    pub fn text(&self) -> Result<String, CodecError> {
        let mut out = String::new();
        for child in &self.children {
            match child {
                Node::Text(t) => out.push_str(t),
                Node::Element(e) => {
                    return Err(CodecError::Structure(format!(
                        "unexpected element <{}> inside <{}>",
                        e.name, self.name
                    )))
                }
            }
        }
        Ok(out)
    }

    pub fn only_attrs(&self, allowed: &[&str]) -> Result<(), CodecError> {
        match self.attrs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
            Some((k, _)) => Err(CodecError::Structure(format!("unexpected attribute `{k}` on <{}>", self.name))),
            None => Ok(()),
        }
    }
}

// Deep trees drop iteratively; the default recursive drop could overflow.
impl Drop for Element {
    fn drop(&mut self) {
        let mut stack: Vec<Node> = std::mem::take(&mut self.children);
        while let Some(node) = stack.pop() {
            if let Node::Element(mut e) = node {
                stack.append(&mut e.children);
            }
        }
    }
}

fn start_element(start: &BytesStart<'_>) -> Result<Element, CodecError> {
    let name = std::str::from_utf8(start.name().as_ref())
        .map_err(|e| CodecError::Xml(e.to_string()))?
        .to_string();
    let mut attrs = Vec::new();
    for attr in start.attributes() {
        let attr = attr.map_err(|e| CodecError::Xml(e.to_string()))?;
        let key = std::str::from_utf8(attr.key.as_ref())
            .map_err(|e| CodecError::Xml(e.to_string()))?
            .to_string();
        let value = attr.unescape_value().map_err(|e| CodecError::Xml(e.to_string()))?.into_owned();
        attrs.push((key, value));
    }
    Ok(Element { name, attrs, children: Vec::new() })
}

/// Parses a single-rooted document. Comments, processing instructions and
/// an XML declaration are tolerated; anything after the root element that is
/// not whitespace is an error.
pub fn parse(bytes: &[u8]) -> Result<Element, CodecError> {
    let text = std::str::from_utf8(bytes).map_err(|e| CodecError::Xml(format!("invalid UTF-8: {e}")))?;
    let mut reader = Reader::from_str(text);
    let config = reader.config_mut();
    config.trim_text(false);
    config.check_end_names = true;
    config.expand_empty_elements = false;

    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;
    loop {
        let event = reader.read_event().map_err(|e| CodecError::Xml(e.to_string()))?;
        match event {
            Event::Start(s) => {
                if root.is_some() {
                    return Err(CodecError::Xml("content after root element".into()));
                }
                if stack.len() >= MAX_DEPTH {
                    return Err(CodecError::Xml("nesting too deep".into()));
                }
                stack.push(start_element(&s)?);
            }
            Event::Empty(s) => {
                if root.is_some() {
                    return Err(CodecError::Xml("content after root element".into()));
                }
                let e = start_element(&s)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Element(e)),
                    None => root = Some(e),
                }
            }
            Event::End(_) => {
                let done = stack.pop().ok_or_else(|| CodecError::Xml("unmatched end tag".into()))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Element(done)),
                    None => root = Some(done),
                }
            }
            Event::Text(t) => {
                let s = t.unescape().map_err(|e| CodecError::Xml(e.to_string()))?;
                match stack.last_mut() {
                    Some(parent) => match parent.children.last_mut() {
                        Some(Node::Text(prev)) => prev.push_str(&s),
                        _ => parent.children.push(Node::Text(s.into_owned())),
                    },
                    None if s.trim().is_empty() => {}
                    None => return Err(CodecError::Xml("text outside root element".into())),
                }
            }
            Event::CData(_) => return Err(CodecError::Xml("CDATA sections are not accepted".into())),
            Event::DocType(_) => return Err(CodecError::Xml("DOCTYPE is not accepted".into())),
            Event::Comment(_) | Event::PI(_) | Event::Decl(_) => {}
            Event::Eof => break,
        }
    }
    if !stack.is_empty() {
        return Err(CodecError::Xml("unexpected end of document".into()));
    }
    root.ok_or_else(|| CodecError::Xml("empty document".into()))
}

/// Escapes the five predefined XML entities.
pub fn escape_into(out: &mut String, s: &str) {
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    escape_into(&mut out, s);
    out
}
