//! Carriers for [`MetadataRecord`]s: harvest XML, Dublin Core in HTML `meta`
//! elements, and tagged text files.

mod html;
mod text;
pub mod xml;

pub use html::extract_dc_from_html;
pub use text::parse_tagged_text;

use serde::{Deserialize, Serialize};

use crate::dc::{ElementName, MetadataRecord, Statement};
use crate::harvest::{Datestamp, RecordHeader};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("unexpected structure: {0}")]
    Structure(String),
    #[error("unknown element <{0}>")]
    UnknownElement(String),
    #[error("missing <{0}>")]
    Missing(&'static str),
    #[error("malformed datestamp `{0}`")]
    BadDatestamp(String),
    #[error("malformed identifier `{0}`")]
    BadIdentifier(String),
    #[error("metadata present on a deleted record")]
    MetadataOnDeleted,
    #[error("live record without metadata")]
    MissingMetadata,
    #[error("invalid statement: {0}")]
    BadStatement(String),
}

/// A header plus its record; the record is absent exactly when deleted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRecord {
    pub header: RecordHeader,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<MetadataRecord>,
}

impl WireRecord {
    pub fn live(header: RecordHeader, record: MetadataRecord) -> Self {
        debug_assert!(!header.deleted);
        WireRecord { header, record: Some(record) }
    }

    pub fn deleted(mut header: RecordHeader) -> Self {
        header.deleted = true;
        WireRecord { header, record: None }
    }

    pub fn is_consistent(&self) -> bool {
        self.header.deleted == self.record.is_none()
    }
}

pub(crate) fn write_header(out: &mut String, header: &RecordHeader) {
    if header.deleted {
        out.push_str("<header status=\"deleted\">");
    } else {
        out.push_str("<header>");
    }
    out.push_str("<identifier>");
    xml::escape_into(out, &header.identifier);
    out.push_str("</identifier><datestamp>");
    out.push_str(&header.datestamp.to_string());
    out.push_str("</datestamp></header>");
}

/// Writes the `<dc>` element for a record.
pub fn write_dc(out: &mut String, record: &MetadataRecord) {
    out.push_str("<dc>");
    for s in &record.statements {
        let name = s.element.as_str();
        out.push('<');
        out.push_str(name);
        for (attr, value) in [("qualifier", &s.qualifier), ("scheme", &s.scheme), ("lang", &s.language)] {
            if let Some(v) = value {
                out.push(' ');
                out.push_str(attr);
                out.push_str("=\"");
                xml::escape_into(out, v);
                out.push('"');
            }
        }
        out.push('>');
        xml::escape_into(out, &s.value);
        out.push_str("</");
        out.push_str(name);
        out.push('>');
    }
    out.push_str("</dc>");
}

pub(crate) fn write_record(out: &mut String, wire: &WireRecord) {
    out.push_str("<record>");
    write_header(out, &wire.header);
    if let Some(record) = &wire.record {
        out.push_str("<metadata>");
        write_dc(out, record);
        out.push_str("</metadata>");
    }
    out.push_str("</record>");
}

pub fn encode_record_xml(wire: &WireRecord) -> Vec<u8> {
    let mut out = String::new();
    write_record(&mut out, wire);
    out.into_bytes()
}

pub fn decode_record_xml(bytes: &[u8]) -> Result<WireRecord, CodecError> {
    let root = xml::parse(bytes)?;
    record_from_element(&root)
}

pub(crate) fn header_from_element(e: &xml::Element) -> Result<RecordHeader, CodecError> {
    e.only_attrs(&["status"])?;
    let deleted = match e.attr("status") {
        None => false,
        Some("deleted") => true,
        Some(other) => return Err(CodecError::Structure(format!("unknown header status `{other}`"))),
    };
    let mut identifier = None;
    let mut datestamp = None;
    for child in e.element_children()? {
        child.only_attrs(&[])?;
        let slot = match child.name.as_str() {
            "identifier" => &mut identifier,
            "datestamp" => &mut datestamp,
            other => return Err(CodecError::UnknownElement(other.to_string())),
        };
        if slot.replace(child.text()?).is_some() {
            return Err(CodecError::Structure(format!("duplicate <{}>", child.name)));
        }
    }
    let identifier = identifier.ok_or(CodecError::Missing("identifier"))?;
    if !crate::harvest::is_oai_identifier(&identifier) {
        return Err(CodecError::BadIdentifier(identifier));
    }
    let datestamp = datestamp.ok_or(CodecError::Missing("datestamp"))?;
    let datestamp: Datestamp = datestamp.parse().map_err(|_| CodecError::BadDatestamp(datestamp))?;
    Ok(RecordHeader { identifier, datestamp, deleted })
}

pub(crate) fn dc_from_element(dc: &xml::Element) -> Result<MetadataRecord, CodecError> {
    dc.only_attrs(&[])?;
    let mut record = MetadataRecord::default();
    for child in dc.element_children()? {
        let element: ElementName =
            child.name.parse().map_err(|_| CodecError::UnknownElement(child.name.clone()))?;
        // element names on the wire are canonical lowercase
        if child.name != element.as_str() {
            return Err(CodecError::UnknownElement(child.name.clone()));
        }
        child.only_attrs(&["qualifier", "scheme", "lang"])?;
        let statement = Statement {
            element,
            qualifier: child.attr("qualifier").map(str::to_string),
            scheme: child.attr("scheme").map(str::to_string),
            language: child.attr("lang").map(str::to_string),
            value: child.text()?,
        };
        statement.check().map_err(|e| CodecError::BadStatement(e.to_string()))?;
        record.push(statement);
    }
    Ok(record)
}

pub(crate) fn record_from_element(root: &xml::Element) -> Result<WireRecord, CodecError> {
    if root.name != "record" {
        return Err(CodecError::UnknownElement(root.name.clone()));
    }
    root.only_attrs(&[])?;
    let children = root.element_children()?;
    let mut header = None;
    let mut record = None;
    for child in children {
        match child.name.as_str() {
            "header" if header.is_none() => header = Some(header_from_element(child)?),
            "metadata" if record.is_none() => {
                child.only_attrs(&[])?;
                let inner = child.element_children()?;
                match inner.as_slice() {
                    [dc] if dc.name == "dc" => record = Some(dc_from_element(dc)?),
                    [other] => return Err(CodecError::UnknownElement(other.name.clone())),
                    _ => return Err(CodecError::Structure("<metadata> must hold exactly one <dc>".into())),
                }
            }
            "header" | "metadata" => {
                return Err(CodecError::Structure(format!("duplicate <{}>", child.name)))
            }
            other => return Err(CodecError::UnknownElement(other.to_string())),
        }
    }
    let header = header.ok_or(CodecError::Missing("header"))?;
    match (header.deleted, record.is_some()) {
        (true, true) => Err(CodecError::MetadataOnDeleted),
        (false, false) => Err(CodecError::MissingMetadata),
        _ => Ok(WireRecord { header, record }),
    }
}

/// Splits `DC.<element>[.<qualifier>]`, case-insensitive on the prefix.
pub(crate) fn split_dc_name(name: &str) -> Option<(&str, Option<&str>)> {
    let prefix = name.get(..3)?;
    if !prefix.eq_ignore_ascii_case("dc.") {
        return None;
    }
    let rest = &name[3..];
    Some(match rest.split_once('.') {
        Some((e, q)) => (e, Some(q)),
        None => (rest, None),
    })
}
