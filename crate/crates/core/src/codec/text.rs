//! Tagged text records.
//!
//! ```text
//! DC.Title: A very
//!  long title
//! DC.Creator: Silva, A.
//!
//! DC.Title: Second record
//! ```
//!
//! Records are separated by blank lines. A line starting with a space
//! continues the previous value, joined by a single space.

use crate::dc::{ElementName, MetadataRecord, Statement};

use super::split_dc_name;

struct Block {
    record: MetadataRecord,
    warnings: Vec<String>,
    pending: Option<(usize, String, Option<String>, String)>,
}

impl Block {
    fn new() -> Self {
        Block { record: MetadataRecord::default(), warnings: Vec::new(), pending: None }
    }

    fn is_blank(&self) -> bool {
        self.record.is_empty() && self.warnings.is_empty() && self.pending.is_none()
    }

    fn flush(&mut self) {
        let Some((line, name, qualifier, value)) = self.pending.take() else {
            return;
        };
        let Ok(element) = name.parse::<ElementName>() else {
            self.warnings.push(format!("line {line}: unknown Dublin Core element `{name}`"));
            return;
        };
        let mut s = Statement::new(element, value.trim());
        s.qualifier = qualifier;
        match s.check() {
            Ok(()) => self.record.push(s),
            Err(e) => self.warnings.push(format!("line {line}: {e}")),
        }
    }
}

pub fn parse_tagged_text(bytes: &[u8]) -> Vec<(MetadataRecord, Vec<String>)> {
    let text = String::from_utf8_lossy(bytes);
    let mut out = Vec::new();
    let mut block = Block::new();
    for (n, raw_line) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            block.flush();
            if !block.is_blank() {
                out.push((std::mem::take(&mut block.record), std::mem::take(&mut block.warnings)));
            }
            continue;
        }
        if line.starts_with(' ') || line.starts_with('\t') {
            match &mut block.pending {
                Some((_, _, _, value)) => {
                    value.push(' ');
                    value.push_str(line.trim());
                }
                None => block.warnings.push(format!("line {line_no}: continuation without a field")),
            }
            continue;
        }
        block.flush();
        let parsed = line.split_once(':').and_then(|(tag, value)| {
            let (element, qualifier) = split_dc_name(tag.trim_end())?;
            Some((element.to_string(), qualifier.map(str::to_string), value.trim().to_string()))
        });
        match parsed {
            Some((element, qualifier, value)) => block.pending = Some((line_no, element, qualifier, value)),
            None => block.warnings.push(format!("line {line_no}: not a `DC.<element>: value` line")),
        }
    }
    block.flush();
    if !block.is_blank() {
        out.push((block.record, block.warnings));
    }
    out
}
