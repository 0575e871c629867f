//! Harvest protocol: four OAI-style verbs over a snapshot of a repository.
//!
//! Request handling is a pure function of (snapshot, repository info,
//! request, now). Paging uses self-describing resumption tokens, so servers
//! keep no session state and tokens survive restarts.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Bound;
use std::str::FromStr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::codec::{self, xml, CodecError, WireRecord};

/// Resumption tokens expire this many seconds after they are issued.
pub const TOKEN_LIFETIME_SECS: i64 = 3600;
pub const DEFAULT_PAGE_SIZE: usize = 100;

/// UTC instant at second granularity, rendered `YYYY-MM-DDThh:mm:ssZ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Datestamp(i64);

impl Datestamp {
    pub const fn from_unix(secs: i64) -> Self {
        Datestamp(secs)
    }

    pub fn unix(self) -> i64 {
        self.0
    }

    pub fn now() -> Self {
        Datestamp(Utc::now().timestamp())
    }

    pub fn plus_secs(self, secs: i64) -> Self {
        Datestamp(self.0.saturating_add(secs))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed datestamp `{0}`")]
pub struct BadDatestamp(pub String);

impl FromStr for Datestamp {
    type Err = BadDatestamp;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.as_bytes();
        let shape_ok = b.len() == 20
            && b.iter().enumerate().all(|(i, c)| match i {
                4 | 7 => *c == b'-',
                10 => *c == b'T',
                13 | 16 => *c == b':',
                19 => *c == b'Z',
                _ => c.is_ascii_digit(),
            });
        if !shape_ok {
            return Err(BadDatestamp(s.to_string()));
        }
        NaiveDateTime::parse_from_str(&s[..19], "%Y-%m-%dT%H:%M:%S")
            .map(|dt| Datestamp(dt.and_utc().timestamp()))
            .map_err(|_| BadDatestamp(s.to_string()))
    }
}

impl fmt::Display for Datestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::<Utc>::from_timestamp(self.0, 0) {
            Some(dt) => write!(f, "{}", dt.format("%Y-%m-%dT%H:%M:%SZ")),
            None => write!(f, "@{}", self.0),
        }
    }
}

impl Serialize for Datestamp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Datestamp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `oai:<repositoryId>:<localId>`, both parts non-empty and colon-free.
pub fn is_oai_identifier(s: &str) -> bool {
    let mut parts = s.split(':');
    matches!(
        (parts.next(), parts.next(), parts.next(), parts.next()),
        (Some("oai"), Some(repo), Some(local), None) if !repo.is_empty() && !local.is_empty()
    )
}

pub fn oai_identifier(repository_id: &str, local_id: u64) -> String {
    format!("oai:{repository_id}:{local_id}")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecordHeader {
    pub identifier: String,
    pub datestamp: Datestamp,
    #[serde(default)]
    pub deleted: bool,
}

impl RecordHeader {
    pub fn new(identifier: impl Into<String>, datestamp: Datestamp) -> Self {
        RecordHeader { identifier: identifier.into(), datestamp, deleted: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verb {
    Identify,
    ListRecords,
    ListIdentifiers,
    GetRecord,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Identify => "Identify",
            Verb::ListRecords => "ListRecords",
            Verb::ListIdentifiers => "ListIdentifiers",
            Verb::GetRecord => "GetRecord",
        }
    }
}

impl FromStr for Verb {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "Identify" => Ok(Verb::Identify),
            "ListRecords" => Ok(Verb::ListRecords),
            "ListIdentifiers" => Ok(Verb::ListIdentifiers),
            "GetRecord" => Ok(Verb::GetRecord),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum HarvestErrorCode {
    BadVerb,
    BadArgument,
    BadResumptionToken,
    IdDoesNotExist,
    NoRecordsMatch,
}

impl HarvestErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            HarvestErrorCode::BadVerb => "badVerb",
            HarvestErrorCode::BadArgument => "badArgument",
            HarvestErrorCode::BadResumptionToken => "badResumptionToken",
            HarvestErrorCode::IdDoesNotExist => "idDoesNotExist",
            HarvestErrorCode::NoRecordsMatch => "noRecordsMatch",
        }
    }
}

impl FromStr for HarvestErrorCode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        [
            HarvestErrorCode::BadVerb,
            HarvestErrorCode::BadArgument,
            HarvestErrorCode::BadResumptionToken,
            HarvestErrorCode::IdDoesNotExist,
            HarvestErrorCode::NoRecordsMatch,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or(())
    }
}

impl fmt::Display for HarvestErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{code}: {message}")]
pub struct HarvestError {
    pub code: HarvestErrorCode,
    pub message: String,
}

impl HarvestError {
    fn new(code: HarvestErrorCode, message: impl Into<String>) -> Self {
        HarvestError { code, message: message.into() }
    }

    fn bad_argument(message: impl Into<String>) -> Self {
        Self::new(HarvestErrorCode::BadArgument, message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HarvestRequest {
    pub verb: Option<Verb>,
    pub identifier: Option<String>,
    pub from: Option<Datestamp>,
    pub until: Option<Datestamp>,
    pub resumption_token: Option<String>,
}

const ARG_NAMES: [&str; 5] = ["verb", "identifier", "from", "until", "resumptionToken"];

impl HarvestRequest {
    pub fn verb(verb: Verb) -> Self {
        HarvestRequest { verb: Some(verb), ..Default::default() }
    }

    /// Query parameters in canonical order.
    pub fn to_params(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if let Some(v) = self.verb {
            out.push(("verb", v.as_str().to_string()));
        }
        if let Some(i) = &self.identifier {
            out.push(("identifier", i.clone()));
        }
        if let Some(f) = self.from {
            out.push(("from", f.to_string()));
        }
        if let Some(u) = self.until {
            out.push(("until", u.to_string()));
        }
        if let Some(t) = &self.resumption_token {
            out.push(("resumptionToken", t.clone()));
        }
        out
    }

    /// Validates raw query parameters.
    pub fn from_params(params: &[(String, String)]) -> Result<HarvestRequest, HarvestError> {
        let mut seen: HashMap<&str, &str> = HashMap::new();
        for (k, v) in params {
            if !ARG_NAMES.contains(&k.as_str()) {
                // without a verb the request is reported as badVerb below
                if params.iter().any(|(k, _)| k == "verb") {
                    return Err(HarvestError::bad_argument(format!("illegal argument `{k}`")));
                }
                continue;
            }
            if seen.insert(k.as_str(), v.as_str()).is_some() {
                let code = if k == "verb" { HarvestErrorCode::BadVerb } else { HarvestErrorCode::BadArgument };
                return Err(HarvestError::new(code, format!("repeated argument `{k}`")));
            }
        }
        let verb: Verb = match seen.get("verb") {
            None => return Err(HarvestError::new(HarvestErrorCode::BadVerb, "missing verb")),
            Some(v) => v
                .parse()
                .map_err(|_| HarvestError::new(HarvestErrorCode::BadVerb, format!("illegal verb `{v}`")))?,
        };
        let allowed: &[&str] = match verb {
            Verb::Identify => &["verb"],
            Verb::GetRecord => &["verb", "identifier"],
            Verb::ListRecords | Verb::ListIdentifiers => &["verb", "from", "until", "resumptionToken"],
        };
        if let Some(extra) = seen.keys().find(|k| !allowed.contains(k)) {
            return Err(HarvestError::bad_argument(format!("argument `{extra}` not allowed for {}", verb.as_str())));
        }
        let parse_ds = |name: &str| -> Result<Option<Datestamp>, HarvestError> {
            seen.get(name)
                .map(|v| v.parse().map_err(|_| HarvestError::bad_argument(format!("malformed `{name}`: `{v}`"))))
                .transpose()
        };
        let req = HarvestRequest {
            verb: Some(verb),
            identifier: seen.get("identifier").map(|s| s.to_string()),
            from: parse_ds("from")?,
            until: parse_ds("until")?,
            resumption_token: seen.get("resumptionToken").map(|s| s.to_string()),
        };
        if verb == Verb::GetRecord && req.identifier.is_none() {
            return Err(HarvestError::bad_argument("GetRecord requires `identifier`"));
        }
        if req.resumption_token.is_some() && (req.from.is_some() || req.until.is_some()) {
            return Err(HarvestError::bad_argument("resumptionToken is an exclusive argument"));
        }
        if let (Some(f), Some(u)) = (req.from, req.until) {
            if f > u {
                return Err(HarvestError::bad_argument("`from` is later than `until`"));
            }
        }
        Ok(req)
    }
}

/// Server-side content of a resumption token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenContent {
    pub cursor: usize,
    pub from: Option<Datestamp>,
    pub until: Option<Datestamp>,
    pub issued_at: Datestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResumptionToken(pub String);

impl ResumptionToken {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

fn opt_unix(d: Option<Datestamp>) -> String {
    d.map(|d| d.unix().to_string()).unwrap_or_else(|| "-".into())
}

pub fn mint_token(cursor: usize, from: Option<Datestamp>, until: Option<Datestamp>, now: Datestamp) -> ResumptionToken {
    let plain = format!("v1;{};{};{};{}", cursor, opt_unix(from), opt_unix(until), now.unix());
    ResumptionToken(URL_SAFE_NO_PAD.encode(plain))
}

pub fn parse_token(text: &str, now: Datestamp) -> Result<TokenContent, HarvestError> {
    let bad = |why: &str| HarvestError::new(HarvestErrorCode::BadResumptionToken, why.to_string());
    let raw = URL_SAFE_NO_PAD.decode(text).map_err(|_| bad("unparseable token"))?;
    let plain = String::from_utf8(raw).map_err(|_| bad("unparseable token"))?;
    let fields: Vec<&str> = plain.split(';').collect();
    let [version, cursor, from, until, issued] = fields.as_slice() else {
        return Err(bad("unparseable token"));
    };
    if *version != "v1" {
        return Err(bad("unknown token version"));
    }
    let opt = |s: &str| -> Result<Option<Datestamp>, HarvestError> {
        if s == "-" {
            Ok(None)
        } else {
            s.parse::<i64>().map(|n| Some(Datestamp(n))).map_err(|_| bad("unparseable token"))
        }
    };
    let content = TokenContent {
        cursor: cursor.parse().map_err(|_| bad("unparseable token"))?,
        from: opt(from)?,
        until: opt(until)?,
        issued_at: Datestamp(issued.parse().map_err(|_| bad("unparseable token"))?),
    };
    if now.unix() >= content.issued_at.unix().saturating_add(TOKEN_LIFETIME_SECS) {
        return Err(bad("expired token"));
    }
    Ok(content)
}

/// Read access to a repository snapshot, ordered by (datestamp, identifier).
pub trait HarvestSource {
    fn count_in_range(&self, from: Option<Datestamp>, until: Option<Datestamp>) -> usize;
    fn page_in_range(
        &self,
        from: Option<Datestamp>,
        until: Option<Datestamp>,
        skip: usize,
        take: usize,
    ) -> Vec<WireRecord>;
    fn get(&self, identifier: &str) -> Option<WireRecord>;
    fn earliest_datestamp(&self) -> Option<Datestamp>;
}

/// Wire records kept in harvest order with an identifier lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordSet {
    ordered: BTreeMap<(Datestamp, String), WireRecord>,
    by_id: HashMap<String, Datestamp>,
}

impl RecordSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }

    /// Inserts or replaces the record with the same identifier.
    pub fn put(&mut self, wire: WireRecord) -> Option<WireRecord> {
        let id = wire.header.identifier.clone();
        let previous = self.by_id.insert(id.clone(), wire.header.datestamp).and_then(|ds| self.ordered.remove(&(ds, id.clone())));
        self.ordered.insert((wire.header.datestamp, id), wire);
        previous
    }

    pub fn lookup(&self, identifier: &str) -> Option<&WireRecord> {
        let ds = self.by_id.get(identifier)?;
        self.ordered.get(&(*ds, identifier.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &WireRecord> {
        self.ordered.values()
    }

    fn range(
        &self,
        from: Option<Datestamp>,
        until: Option<Datestamp>,
    ) -> impl Iterator<Item = &WireRecord> + '_ {
        let lo = match from {
            Some(f) => Bound::Included((f, String::new())),
            None => Bound::Unbounded,
        };
        let hi = match until {
            // identifiers are non-empty, so (until+1, "") bounds every key at `until`
            Some(u) => Bound::Excluded((u.plus_secs(1), String::new())),
            None => Bound::Unbounded,
        };
        let empty = matches!((from, until), (Some(f), Some(u)) if f > u);
        let iter = if empty { None } else { Some(self.ordered.range((lo, hi))) };
        iter.into_iter().flatten().map(|(_, w)| w)
    }
}

impl FromIterator<WireRecord> for RecordSet {
    fn from_iter<T: IntoIterator<Item = WireRecord>>(iter: T) -> Self {
        let mut set = RecordSet::new();
        for w in iter {
            set.put(w);
        }
        set
    }
}

impl HarvestSource for RecordSet {
    fn count_in_range(&self, from: Option<Datestamp>, until: Option<Datestamp>) -> usize {
        self.range(from, until).count()
    }

    fn page_in_range(
        &self,
        from: Option<Datestamp>,
        until: Option<Datestamp>,
        skip: usize,
        take: usize,
    ) -> Vec<WireRecord> {
        self.range(from, until).skip(skip).take(take).cloned().collect()
    }

    fn get(&self, identifier: &str) -> Option<WireRecord> {
        self.lookup(identifier).cloned()
    }

    fn earliest_datestamp(&self) -> Option<Datestamp> {
        self.ordered.keys().next().map(|(d, _)| *d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Page {
    pub records: Vec<WireRecord>,
    /// Cursor of the next page, when more records remain.
    pub next_cursor: Option<usize>,
    pub complete_list_size: usize,
}

/// Records `[cursor, cursor + page_size)` of the inclusive datestamp range,
/// tombstones included, in (datestamp, identifier) order.
pub fn select_page<S: HarvestSource + ?Sized>(
    source: &S,
    from: Option<Datestamp>,
    until: Option<Datestamp>,
    cursor: usize,
    page_size: usize,
) -> Page {
    let page_size = page_size.max(1);
    let complete_list_size = source.count_in_range(from, until);
    let records = source.page_in_range(from, until, cursor, page_size);
    let end = cursor.saturating_add(records.len());
    Page {
        next_cursor: (end < complete_list_size).then_some(end),
        records,
        complete_list_size,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepositoryInfo {
    pub repository_id: String,
    pub name: String,
    pub admin_contact: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenInfo {
    pub token: ResumptionToken,
    pub complete_list_size: usize,
    /// Position of the first record of the page carrying this token.
    pub cursor: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentifyInfo {
    pub name: String,
    pub repository_id: String,
    pub admin_contact: String,
    pub earliest_datestamp: Option<Datestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseBody {
    Error(HarvestError),
    Identify(IdentifyInfo),
    Records { records: Vec<WireRecord>, token: Option<TokenInfo> },
    Identifiers { headers: Vec<RecordHeader>, token: Option<TokenInfo> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarvestResponse {
    pub responded_at: Datestamp,
    /// Echo of the recognised request arguments, canonical order.
    pub request: Vec<(String, String)>,
    pub body: ResponseBody,
}

impl HarvestResponse {
    pub fn error(&self) -> Option<&HarvestError> {
        match &self.body {
            ResponseBody::Error(e) => Some(e),
            _ => None,
        }
    }

    pub fn token(&self) -> Option<&TokenInfo> {
        match &self.body {
            ResponseBody::Records { token, .. } | ResponseBody::Identifiers { token, .. } => token.as_ref(),
            _ => None,
        }
    }
}

fn echo(params: &[(String, String)]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for name in ARG_NAMES {
        if let Some((k, v)) = params.iter().find(|(k, _)| k == name) {
            out.push((k.clone(), v.clone()));
        }
    }
    out
}

/// Answers one harvest request. `page_size` is the server's configuration.
pub fn handle_request<S: HarvestSource + ?Sized>(
    source: &S,
    info: &RepositoryInfo,
    params: &[(String, String)],
    now: Datestamp,
    page_size: usize,
) -> HarvestResponse {
    let body = match HarvestRequest::from_params(params) {
        Err(e) => ResponseBody::Error(e),
        Ok(req) => execute(source, info, &req, now, page_size).unwrap_or_else(ResponseBody::Error),
    };
    HarvestResponse { responded_at: now, request: echo(params), body }
}

fn execute<S: HarvestSource + ?Sized>(
    source: &S,
    info: &RepositoryInfo,
    req: &HarvestRequest,
    now: Datestamp,
    page_size: usize,
) -> Result<ResponseBody, HarvestError> {
    let verb = req.verb.expect("validated request has a verb");
    match verb {
        Verb::Identify => Ok(ResponseBody::Identify(IdentifyInfo {
            name: info.name.clone(),
            repository_id: info.repository_id.clone(),
            admin_contact: info.admin_contact.clone(),
            earliest_datestamp: source.earliest_datestamp(),
        })),
        Verb::GetRecord => {
            let id = req.identifier.as_deref().unwrap_or_default();
            let wire = source.get(id).ok_or_else(|| {
                HarvestError::new(HarvestErrorCode::IdDoesNotExist, format!("no record `{id}`"))
            })?;
            Ok(ResponseBody::Records { records: vec![wire], token: None })
        }
        Verb::ListRecords | Verb::ListIdentifiers => {
            let (cursor, from, until) = match &req.resumption_token {
                Some(t) => {
                    let c = parse_token(t, now)?;
                    (c.cursor, c.from, c.until)
                }
                // An open upper bound is pinned to the response time so
                // later pages see the same list.
                None => (0, req.from, Some(req.until.unwrap_or(now))),
            };
            let page = select_page(source, from, until, cursor, page_size);
            if page.complete_list_size == 0 {
                return Err(HarvestError::new(HarvestErrorCode::NoRecordsMatch, "no records match"));
            }
            if page.records.is_empty() {
                return Err(HarvestError::new(HarvestErrorCode::BadResumptionToken, "cursor beyond list"));
            }
            let token = page.next_cursor.map(|next| TokenInfo {
                token: mint_token(next, from, until, now),
                complete_list_size: page.complete_list_size,
                cursor,
            });
            Ok(if verb == Verb::ListRecords {
                ResponseBody::Records { records: page.records, token }
            } else {
                ResponseBody::Identifiers { headers: page.records.into_iter().map(|w| w.header).collect(), token }
            })
        }
    }
}

fn write_token(out: &mut String, token: &Option<TokenInfo>) {
    if let Some(t) = token {
        out.push_str(&format!(
            "<resumptionToken completeListSize=\"{}\" cursor=\"{}\">",
            t.complete_list_size, t.cursor
        ));
        xml::escape_into(out, t.token.as_str());
        out.push_str("</resumptionToken>");
    }
}

fn write_text_element(out: &mut String, name: &str, value: &str) {
    out.push('<');
    out.push_str(name);
    out.push('>');
    xml::escape_into(out, value);
    out.push_str("</");
    out.push_str(name);
    out.push('>');
}

/// Renders the response envelope. Byte-deterministic.
pub fn render_response(resp: &HarvestResponse) -> String {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
    out.push_str(&format!("<repository-response respondedAt=\"{}\">", resp.responded_at));
    out.push_str("<request");
    for (k, v) in &resp.request {
        out.push(' ');
        out.push_str(k);
        out.push_str("=\"");
        xml::escape_into(&mut out, v);
        out.push('"');
    }
    out.push_str("/>");
    match &resp.body {
        ResponseBody::Error(e) => {
            out.push_str(&format!("<error code=\"{}\">", e.code));
            xml::escape_into(&mut out, &e.message);
            out.push_str("</error>");
        }
        ResponseBody::Identify(i) => {
            out.push_str("<identify>");
            write_text_element(&mut out, "repositoryName", &i.name);
            write_text_element(&mut out, "repositoryId", &i.repository_id);
            write_text_element(&mut out, "adminContact", &i.admin_contact);
            if let Some(e) = i.earliest_datestamp {
                write_text_element(&mut out, "earliestDatestamp", &e.to_string());
            }
            out.push_str("</identify>");
        }
        ResponseBody::Records { records, token } => {
            out.push_str("<records>");
            for r in records {
                codec::write_record(&mut out, r);
            }
            write_token(&mut out, token);
            out.push_str("</records>");
        }
        ResponseBody::Identifiers { headers, token } => {
            out.push_str("<identifiers>");
            for h in headers {
                codec::write_header(&mut out, h);
            }
            write_token(&mut out, token);
            out.push_str("</identifiers>");
        }
    }
    out.push_str("</repository-response>");
    out
}

fn parse_token_element(e: &xml::Element) -> Result<TokenInfo, CodecError> {
    e.only_attrs(&["completeListSize", "cursor"])?;
    let num = |name: &'static str| -> Result<usize, CodecError> {
        e.attr(name)
            .ok_or(CodecError::Missing(name))?
            .parse()
            .map_err(|_| CodecError::Structure(format!("bad `{name}`")))
    };
    Ok(TokenInfo {
        token: ResumptionToken(e.text()?),
        complete_list_size: num("completeListSize")?,
        cursor: num("cursor")?,
    })
}

/// Parses a response envelope produced by [`render_response`].
pub fn parse_response(bytes: &[u8]) -> Result<HarvestResponse, CodecError> {
    let root = xml::parse(bytes)?;
    if root.name != "repository-response" {
        return Err(CodecError::UnknownElement(root.name.clone()));
    }
    let responded_at = root.attr("respondedAt").ok_or(CodecError::Missing("respondedAt"))?;
    let responded_at: Datestamp =
        responded_at.parse().map_err(|_| CodecError::BadDatestamp(responded_at.to_string()))?;
    let children = root.element_children()?;
    let [request, body] = children.as_slice() else {
        return Err(CodecError::Structure("expected <request> and one body element".into()));
    };
    if request.name != "request" {
        return Err(CodecError::Missing("request"));
    }
    let body = match body.name.as_str() {
        "error" => {
            let code = body.attr("code").ok_or(CodecError::Missing("code"))?;
            let code = code.parse().map_err(|_| CodecError::Structure(format!("unknown error code `{code}`")))?;
            ResponseBody::Error(HarvestError { code, message: body.text()? })
        }
        "identify" => {
            let mut fields: HashMap<String, String> = HashMap::new();
            for c in body.element_children()? {
                fields.insert(c.name.clone(), c.text()?);
            }
            let mut take = |k: &'static str| fields.remove(k).ok_or(CodecError::Missing(k));
            ResponseBody::Identify(IdentifyInfo {
                name: take("repositoryName")?,
                repository_id: take("repositoryId")?,
                admin_contact: take("adminContact")?,
                earliest_datestamp: match fields.remove("earliestDatestamp") {
                    Some(s) => Some(s.parse().map_err(|_| CodecError::BadDatestamp(s))?),
                    None => None,
                },
            })
        }
        "records" => {
            let mut records = Vec::new();
            let mut token = None;
            for c in body.element_children()? {
                match c.name.as_str() {
                    "record" if token.is_none() => records.push(codec::record_from_element(c)?),
                    "resumptionToken" if token.is_none() => token = Some(parse_token_element(c)?),
                    other => return Err(CodecError::UnknownElement(other.to_string())),
                }
            }
            ResponseBody::Records { records, token }
        }
        "identifiers" => {
            let mut headers = Vec::new();
            let mut token = None;
            for c in body.element_children()? {
                match c.name.as_str() {
                    "header" if token.is_none() => headers.push(codec::header_from_element(c)?),
                    "resumptionToken" if token.is_none() => token = Some(parse_token_element(c)?),
                    other => return Err(CodecError::UnknownElement(other.to_string())),
                }
            }
            ResponseBody::Identifiers { headers, token }
        }
        other => return Err(CodecError::UnknownElement(other.to_string())),
    };
    Ok(HarvestResponse {
        responded_at,
        request: request.attrs.clone(),
        body,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc::{ElementName, MetadataRecord, Statement};
    use proptest::prelude::*;

    const T0: i64 = 991_396_800; // 2001-06-01T12:00:00Z

    fn ds(s: &str) -> Datestamp {
        s.parse().unwrap()
    }

    fn live(id: &str, secs: i64) -> WireRecord {
        WireRecord::live(
            RecordHeader::new(id, Datestamp(secs)),
            [Statement::new(ElementName::Title, id)].into_iter().collect::<MetadataRecord>(),
        )
    }

    fn params(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn info() -> RepositoryInfo {
        RepositoryInfo { repository_id: "rep1".into(), name: "Rep One".into(), admin_contact: "a@b".into() }
    }

    #[test]
    fn datestamp_round_trip() {
        let d = ds("2001-06-01T12:00:00Z");
        assert_eq!(d.unix(), T0);
        assert_eq!(d.to_string(), "2001-06-01T12:00:00Z");
        for bad in ["2001-13-01T00:00:00Z", "2001-06-01T12:00:00", "2001-06-01", "2001-02-30T00:00:00Z", "+001-06-01T12:00:00Z", "2001-06-01T24:00:00Z"] {
            assert!(bad.parse::<Datestamp>().is_err(), "{bad}");
        }
    }

    #[test]
    fn oai_identifier_pattern() {
        assert!(is_oai_identifier("oai:rep1:1"));
        for bad in ["oai:rep1", "oai::1", "oai:rep1:", "x:rep1:1", "oai:a:b:c"] {
            assert!(!is_oai_identifier(bad), "{bad}");
        }
    }

    #[test]
    fn pages_of_two() {
        let set: RecordSet = (1..=5).map(|i| live(&format!("oai:r:{i}"), T0 + i)).collect();
        let sizes: Vec<usize> = [0, 2, 4].iter().map(|&c| select_page(&set, None, None, c, 2).records.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert_eq!(select_page(&set, None, None, 2, 2).next_cursor, Some(4));
        assert_eq!(select_page(&set, None, None, 4, 2).next_cursor, None);
        assert_eq!(select_page(&set, None, None, 0, 2).complete_list_size, 5);
    }

    #[test]
    fn empty_range_and_ties() {
        let set: RecordSet = [live("oai:r:b", T0), live("oai:r:a", T0), live("oai:r:c", T0 - 5)].into_iter().collect();
        assert!(select_page(&set, Some(Datestamp(T0 + 1)), None, 0, 10).records.is_empty());
        let ids: Vec<_> = select_page(&set, None, None, 0, 10).records.into_iter().map(|w| w.header.identifier).collect();
        assert_eq!(ids, ["oai:r:c", "oai:r:a", "oai:r:b"]);
        // inclusive bounds
        assert_eq!(select_page(&set, Some(Datestamp(T0)), Some(Datestamp(T0)), 0, 10).records.len(), 2);
    }

    #[test]
    fn put_replaces_by_identifier() {
        let mut set = RecordSet::new();
        set.put(live("oai:r:1", T0));
        set.put(WireRecord::deleted(RecordHeader::new("oai:r:1", Datestamp(T0 + 9))));
        assert_eq!(set.len(), 1);
        assert!(set.lookup("oai:r:1").unwrap().header.deleted);
    }

    #[test]
    fn token_round_trip_and_expiry() {
        let t = Datestamp(T0);
        assert_eq!(parse_token(mint_token(7, None, None, t).as_str(), t.plus_secs(10)).unwrap().cursor, 7);
        let e = parse_token(mint_token(0, None, None, t).as_str(), t.plus_secs(3601)).unwrap_err();
        assert_eq!(e.code, HarvestErrorCode::BadResumptionToken);
        assert!(parse_token(mint_token(0, None, None, t).as_str(), t.plus_secs(3599)).is_ok());
        assert!(parse_token(mint_token(0, None, None, t).as_str(), t.plus_secs(3600)).is_err());
        assert_eq!(parse_token("garbage", t).unwrap_err().code, HarvestErrorCode::BadResumptionToken);
        let c = parse_token(mint_token(3, Some(Datestamp(5)), Some(Datestamp(9)), t).as_str(), t).unwrap();
        assert_eq!((c.from, c.until), (Some(Datestamp(5)), Some(Datestamp(9))));
    }

    #[test]
    fn request_validation() {
        let code = |p: &[(&str, &str)]| HarvestRequest::from_params(&params(p)).unwrap_err().code;
        assert_eq!(code(&[("verb", "Harvest")]), HarvestErrorCode::BadVerb);
        assert_eq!(code(&[]), HarvestErrorCode::BadVerb);
        assert_eq!(code(&[("verb", "GetRecord")]), HarvestErrorCode::BadArgument);
        assert_eq!(code(&[("verb", "Identify"), ("from", "2001-01-01T00:00:00Z")]), HarvestErrorCode::BadArgument);
        assert_eq!(code(&[("verb", "ListRecords"), ("from", "yesterday")]), HarvestErrorCode::BadArgument);
        assert_eq!(
            code(&[("verb", "ListRecords"), ("from", "2001-01-02T00:00:00Z"), ("until", "2001-01-01T00:00:00Z")]),
            HarvestErrorCode::BadArgument
        );
        assert_eq!(code(&[("verb", "ListRecords"), ("resumptionToken", "x"), ("from", "2001-01-01T00:00:00Z")]), HarvestErrorCode::BadArgument);
        assert_eq!(code(&[("verb", "ListRecords"), ("set", "x")]), HarvestErrorCode::BadArgument);
        assert_eq!(code(&[("verb", "ListRecords"), ("verb", "ListRecords")]), HarvestErrorCode::BadVerb);
        assert!(HarvestRequest::from_params(&params(&[("verb", "ListIdentifiers"), ("until", "2001-01-01T00:00:00Z")])).is_ok());
    }

    #[test]
    fn list_records_over_empty_store() {
        let resp = handle_request(&RecordSet::new(), &info(), &params(&[("verb", "ListRecords")]), Datestamp(T0), 10);
        assert_eq!(resp.error().unwrap().code, HarvestErrorCode::NoRecordsMatch);
    }

    #[test]
    fn get_record_tombstone() {
        let set: RecordSet = [WireRecord::deleted(RecordHeader::new("oai:rep1:1", Datestamp(T0)))].into_iter().collect();
        let resp = handle_request(&set, &info(), &params(&[("verb", "GetRecord"), ("identifier", "oai:rep1:1")]), Datestamp(T0 + 1), 10);
        let xml = render_response(&resp);
        assert!(xml.contains("<header status=\"deleted\"><identifier>oai:rep1:1</identifier>"));
        assert!(!xml.contains("<metadata>"));
        let missing = handle_request(&set, &info(), &params(&[("verb", "GetRecord"), ("identifier", "oai:rep1:2")]), Datestamp(T0), 10);
        assert_eq!(missing.error().unwrap().code, HarvestErrorCode::IdDoesNotExist);
    }

    #[test]
    fn bad_verb_response_document() {
        let resp = handle_request(&RecordSet::new(), &info(), &params(&[("verb", "Harvest")]), Datestamp(T0), 10);
        assert_eq!(
            render_response(&resp),
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?><repository-response respondedAt=\"2001-06-01T12:00:00Z\"><request verb=\"Harvest\"/><error code=\"badVerb\">illegal verb `Harvest`</error></repository-response>"
        );
    }

    #[test]
    fn identify_and_parse_back() {
        let set: RecordSet = [live("oai:rep1:1", T0 - 100)].into_iter().collect();
        let resp = handle_request(&set, &info(), &params(&[("verb", "Identify")]), Datestamp(T0), 10);
        let xml = render_response(&resp);
        assert!(xml.contains("<earliestDatestamp>2001-06-01T11:58:20Z</earliestDatestamp>"));
        assert_eq!(parse_response(xml.as_bytes()).unwrap(), resp);
    }

    fn harvest_all(set: &RecordSet, page_size: usize, verb: &str) -> Vec<HarvestResponse> {
        let now = Datestamp(T0 + 10_000);
        let mut out = Vec::new();
        let mut resp = handle_request(set, &info(), &params(&[("verb", verb)]), now, page_size);
        loop {
            let parsed = parse_response(render_response(&resp).as_bytes()).unwrap();
            assert_eq!(parsed, resp);
            let next = resp.token().map(|t| t.token.0.clone());
            out.push(resp);
            match next {
                Some(t) => resp = handle_request(set, &info(), &params(&[("verb", verb), ("resumptionToken", &t)]), now, page_size),
                None => return out,
            }
        }
    }

    #[test]
    fn list_identifiers_pages() {
        let set: RecordSet = (0..5).map(|i| live(&format!("oai:r:{i}"), T0 + i)).collect();
        let pages = harvest_all(&set, 2, "ListIdentifiers");
        assert_eq!(pages.len(), 3);
        let t = pages[1].token().unwrap();
        assert_eq!((t.cursor, t.complete_list_size), (2, 5));
    }

    fn arb_set() -> impl Strategy<Value = RecordSet> {
        prop::collection::vec((0i64..40, any::<bool>()), 0..60).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (off, del))| {
                    let w = live(&format!("oai:r:{i}"), T0 + off);
                    if del { WireRecord::deleted(w.header) } else { w }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn paging_equivalence(set in arb_set()) {
            let all: Vec<WireRecord> = select_page(&set, None, None, 0, usize::MAX).records;
            for size in [1usize, 7, 100] {
                let mut got = Vec::new();
                for resp in harvest_all(&set, size, "ListRecords") {
                    if let ResponseBody::Records { records, .. } = resp.body {
                        got.extend(records);
                    }
                }
                prop_assert_eq!(&got, &all);
            }
        }

        #[test]
        fn range_split(set in arb_set(), f in 0i64..40, m in 0i64..40, u in 0i64..40) {
            let mut b = [f, m, u];
            b.sort();
            let [f, m, u] = b.map(|x| Datestamp(T0 + x));
            let whole = select_page(&set, Some(f), Some(u), 0, usize::MAX).records;
            let mut parts = select_page(&set, Some(f), Some(m), 0, usize::MAX).records;
            parts.extend(select_page(&set, Some(m.plus_secs(1)), Some(u), 0, usize::MAX).records);
            prop_assert_eq!(whole, parts);
        }

        #[test]
        fn deleted_headers_are_selected(set in arb_set()) {
            for w in set.iter().filter(|w| w.header.deleted) {
                let d = w.header.datestamp;
                let sel = select_page(&set, Some(d), Some(d), 0, usize::MAX).records;
                prop_assert!(sel.contains(w));
            }
        }

        #[test]
        fn deterministic_responses(set in arb_set(), size in 1usize..10) {
            let p = params(&[("verb", "ListRecords")]);
            let a = render_response(&handle_request(&set, &info(), &p, Datestamp(T0 + 50), size));
            let b = render_response(&handle_request(&set, &info(), &p, Datestamp(T0 + 50), size));
            prop_assert_eq!(a, b);
        }

        #[test]
        fn datestamp_render_parse(secs in -2_000_000_000i64..4_000_000_000) {
            let d = Datestamp(secs);
            prop_assert_eq!(d.to_string().parse::<Datestamp>().unwrap(), d);
        }
    }
}
