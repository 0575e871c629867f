//! Fielded boolean query language.
//!
//! ```text
//! query  := or
//! or     := and { "OR" and }
//! and    := not { ["AND"] not }
//! not    := "NOT" not | atom
//! atom   := "(" or ")" | clause
//! clause := [ field ":" ] ( WORD | QUOTED )
//! field  := elementName | "any"
//! ```
//!
//! Keywords are case-sensitive uppercase. Adjacent operands without a keyword
//! are joined by AND. Precedence is NOT > AND > OR, all left-associative.

use std::fmt;

use crate::dc::{normalize_text, tokenize, ElementName, MetadataRecord};

/// Field a clause is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Field {
    Any,
    Element(ElementName),
}

impl Field {
    pub fn as_str(self) -> &'static str {
        match self {
            Field::Any => "any",
            Field::Element(e) => e.as_str(),
        }
    }

    fn parse(s: &str) -> Option<Field> {
        if s.eq_ignore_ascii_case("any") {
            Some(Field::Any)
        } else {
            s.parse().ok().map(Field::Element)
        }
    }
}

/// Clause payload. Tokens are non-empty and already normalized.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Match {
    Term(String),
    Phrase(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum QueryNode {
    And(Box<QueryNode>, Box<QueryNode>),
    Or(Box<QueryNode>, Box<QueryNode>),
    Not(Box<QueryNode>),
    Clause { field: Field, matcher: Match },
}

impl QueryNode {
    pub fn term(field: Field, token: impl Into<String>) -> Self {
        QueryNode::Clause { field, matcher: Match::Term(token.into()) }
    }

    pub fn phrase<I, S>(field: Field, tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        QueryNode::Clause {
            field,
            matcher: Match::Phrase(tokens.into_iter().map(Into::into).collect()),
        }
    }

    pub fn and(self, other: QueryNode) -> Self {
        QueryNode::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: QueryNode) -> Self {
        QueryNode::Or(Box::new(self), Box::new(other))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        QueryNode::Not(Box::new(self))
    }

    /// Visits every clause that is not beneath a `Not`.
    pub fn positive_clauses<'a>(&'a self, out: &mut Vec<(&'a Field, &'a Match)>) {
        match self {
            QueryNode::And(l, r) | QueryNode::Or(l, r) => {
                l.positive_clauses(out);
                r.positive_clauses(out);
            }
            QueryNode::Not(_) => {}
            QueryNode::Clause { field, matcher } => out.push((field, matcher)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SyntaxErrorKind {
    #[error("empty query")]
    EmptyQuery,
    #[error("unbalanced parenthesis")]
    UnbalancedParenthesis,
    #[error("unterminated quoted string")]
    UnbalancedQuote,
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("empty clause")]
    EmptyClause,
    #[error("unexpected `{0}`")]
    Unexpected(String),
    #[error("unexpected end of query")]
    UnexpectedEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at offset {offset}: {kind}")]
pub struct SyntaxError {
    /// Byte offset into the query text.
    pub offset: usize,
    pub kind: SyntaxErrorKind,
}

impl SyntaxError {
    fn new(offset: usize, kind: SyntaxErrorKind) -> Self {
        SyntaxError { offset, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok<'a> {
    LParen,
    RParen,
    And,
    Or,
    Not,
    /// `field:` immediately followed by a quoted string.
    FieldPrefix(&'a str),
    Word(&'a str),
    Quoted(&'a str),
}

fn is_reserved(c: char) -> bool {
    matches!(c, '(' | ')' | '"')
}

fn lex(text: &str) -> Result<Vec<(usize, Tok<'_>)>, SyntaxError> {
    // Balance is checked up front so the error points at the culprit rather
    // than wherever the parser happens to give up.
    let mut open: Vec<usize> = Vec::new();
    let mut quote: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match (c, quote) {
            ('"', None) => quote = Some(i),
            ('"', Some(_)) => quote = None,
            (_, Some(_)) => {}
            ('(', None) => open.push(i),
            (')', None) => {
                if open.pop().is_none() {
                    return Err(SyntaxError::new(i, SyntaxErrorKind::UnbalancedParenthesis));
                }
            }
            _ => {}
        }
    }
    if let Some(q) = quote {
        return Err(SyntaxError::new(q, SyntaxErrorKind::UnbalancedQuote));
    }
    if let Some(&p) = open.first() {
        return Err(SyntaxError::new(p, SyntaxErrorKind::UnbalancedParenthesis));
    }

    let mut toks = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = text[i..].chars().next().unwrap();
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        match c {
            '(' => {
                toks.push((i, Tok::LParen));
                i += 1;
            }
            ')' => {
                toks.push((i, Tok::RParen));
                i += 1;
            }
            '"' => {
                let end = i + 1 + text[i + 1..].find('"').expect("balance checked");
                toks.push((i, Tok::Quoted(&text[i + 1..end])));
                i = end + 1;
            }
            _ => {
                let start = i;
                let end = text[i..]
                    .char_indices()
                    .find(|(_, c)| c.is_whitespace() || is_reserved(*c))
                    .map(|(j, _)| i + j)
                    .unwrap_or(text.len());
                let word = &text[start..end];
                let tok = match word {
                    "AND" => Tok::And,
                    "OR" => Tok::Or,
                    "NOT" => Tok::Not,
                    w if w.ends_with(':') && w.find(':') == Some(w.len() - 1) && text[end..].starts_with('"') => {
                        Tok::FieldPrefix(&w[..w.len() - 1])
                    }
                    w => Tok::Word(w),
                };
                toks.push((start, tok));
                i = end;
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    len: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok<'a>> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.len)
    }

    fn unexpected(&self) -> SyntaxError {
        match self.toks.get(self.pos) {
            None => SyntaxError::new(self.len, SyntaxErrorKind::UnexpectedEnd),
            Some((o, t)) => {
                let shown = match t {
                    Tok::LParen => "(".to_string(),
                    Tok::RParen => ")".to_string(),
                    Tok::And => "AND".to_string(),
                    Tok::Or => "OR".to_string(),
                    Tok::Not => "NOT".to_string(),
                    Tok::FieldPrefix(f) => format!("{f}:"),
                    Tok::Word(w) => (*w).to_string(),
                    Tok::Quoted(q) => format!("\"{q}\""),
                };
                SyntaxError::new(*o, SyntaxErrorKind::Unexpected(shown))
            }
        }
    }

    fn parse_or(&mut self) -> Result<QueryNode, SyntaxError> {
        let mut node = self.parse_and()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            let rhs = self.parse_and()?;
            node = node.or(rhs);
        }
        Ok(node)
    }

    fn parse_and(&mut self) -> Result<QueryNode, SyntaxError> {
        let mut node = self.parse_not()?;
        loop {
            match self.peek() {
                Some(Tok::And) => {
                    self.pos += 1;
                }
                Some(Tok::Not | Tok::LParen | Tok::Word(_) | Tok::Quoted(_) | Tok::FieldPrefix(_)) => {}
                _ => break,
            }
            let rhs = self.parse_not()?;
            node = node.and(rhs);
        }
        Ok(node)
    }

    fn parse_not(&mut self) -> Result<QueryNode, SyntaxError> {
        if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            return Ok(self.parse_not()?.not());
        }
        self.parse_atom()
    }

    fn parse_atom(&mut self) -> Result<QueryNode, SyntaxError> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.parse_or()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.unexpected());
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Tok::Quoted(q)) => {
                self.pos += 1;
                phrase_clause(Field::Any, q, offset)
            }
            Some(Tok::FieldPrefix(f)) => {
                let field = Field::parse(f)
                    .ok_or_else(|| SyntaxError::new(offset, SyntaxErrorKind::UnknownField(f.to_string())))?;
                self.pos += 1;
                let q_offset = self.offset();
                match self.peek().cloned() {
                    Some(Tok::Quoted(q)) => {
                        self.pos += 1;
                        phrase_clause(field, q, q_offset)
                    }
                    _ => Err(self.unexpected()),
                }
            }
            Some(Tok::Word(w)) => {
                self.pos += 1;
                word_clause(w, offset)
            }
            _ => Err(self.unexpected()),
        }
    }
}

fn phrase_clause(field: Field, text: &str, offset: usize) -> Result<QueryNode, SyntaxError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(SyntaxError::new(offset, SyntaxErrorKind::EmptyClause));
    }
    Ok(QueryNode::Clause { field, matcher: Match::Phrase(tokens) })
}

fn word_clause(word: &str, offset: usize) -> Result<QueryNode, SyntaxError> {
    let (field, value, value_offset) = match word.find(':') {
        Some(colon) => {
            let name = &word[..colon];
            let field = Field::parse(name)
                .ok_or_else(|| SyntaxError::new(offset, SyntaxErrorKind::UnknownField(name.to_string())))?;
            (field, &word[colon + 1..], offset + colon + 1)
        }
        None => (Field::Any, word, offset),
    };
    if value.is_empty() {
        // `title:` followed by `(`, whitespace or end of input.
        return Err(SyntaxError::new(value_offset, SyntaxErrorKind::EmptyClause));
    }
    let mut tokens = tokenize(value);
    match tokens.len() {
        0 => Err(SyntaxError::new(value_offset, SyntaxErrorKind::EmptyClause)),
        1 => Ok(QueryNode::Clause { field, matcher: Match::Term(tokens.pop().unwrap()) }),
        // `foo-bar` tokenizes like the statement text it is meant to match.
        _ => Ok(QueryNode::Clause { field, matcher: Match::Phrase(tokens) }),
    }
}

pub fn parse_query(text: &str) -> Result<QueryNode, SyntaxError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(SyntaxError::new(0, SyntaxErrorKind::EmptyQuery));
    }
    let mut p = Parser { toks, pos: 0, len: text.len() };
    let node = p.parse_or()?;
    if p.pos != p.toks.len() {
        return Err(p.unexpected());
    }
    Ok(node)
}

/// Fully parenthesized rendering that parses back to the same tree.
pub fn canonical_text(node: &QueryNode) -> String {
    let mut out = String::new();
    write_canonical(node, &mut out);
    out
}

fn write_canonical(node: &QueryNode, out: &mut String) {
    match node {
        QueryNode::And(l, r) | QueryNode::Or(l, r) => {
            out.push('(');
            write_canonical(l, out);
            out.push_str(if matches!(node, QueryNode::And(..)) { " AND " } else { " OR " });
            write_canonical(r, out);
            out.push(')');
        }
        QueryNode::Not(c) => {
            out.push_str("(NOT ");
            write_canonical(c, out);
            out.push(')');
        }
        QueryNode::Clause { field, matcher } => {
            out.push('(');
            out.push_str(field.as_str());
            out.push(':');
            match matcher {
                Match::Term(t) => out.push_str(t),
                Match::Phrase(ts) => {
                    out.push('"');
                    out.push_str(&ts.join(" "));
                    out.push('"');
                }
            }
            out.push(')');
        }
    }
}

impl fmt::Display for QueryNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonical_text(self))
    }
}

/// Per-statement token lists, computed once per record.
#[derive(Debug, Clone, Default)]
pub struct TokenizedRecord {
    /// (element, tokens) in statement order.
    pub statements: Vec<(ElementName, Vec<String>)>,
}

impl TokenizedRecord {
    pub fn new(record: &MetadataRecord) -> Self {
        TokenizedRecord {
            statements: record.statements.iter().map(|s| (s.element, tokenize(&s.value))).collect(),
        }
    }

    fn in_field<'a>(&'a self, field: Field) -> impl Iterator<Item = &'a [String]> + 'a {
        self.statements
            .iter()
            .filter(move |(e, _)| match field {
                Field::Any => true,
                Field::Element(f) => *e == f,
            })
            .map(|(_, t)| t.as_slice())
    }

    /// Occurrences of the match within statements of exactly `element`.
    pub fn frequency(&self, element: ElementName, matcher: &Match) -> usize {
        self.in_field(Field::Element(element))
            .map(|tokens| occurrences(tokens, matcher))
            .sum()
    }

    pub fn matches(&self, field: Field, matcher: &Match) -> bool {
        self.in_field(field).any(|tokens| occurrences(tokens, matcher) > 0)
    }
}

fn occurrences(tokens: &[String], matcher: &Match) -> usize {
    match matcher {
        Match::Term(t) => tokens.iter().filter(|x| *x == t).count(),
        Match::Phrase(p) if p.is_empty() => 0,
        Match::Phrase(p) => tokens.windows(p.len()).filter(|w| *w == p.as_slice()).count(),
    }
}

pub fn eval_tokenized(node: &QueryNode, record: &TokenizedRecord) -> bool {
    match node {
        QueryNode::And(l, r) => eval_tokenized(l, record) && eval_tokenized(r, record),
        QueryNode::Or(l, r) => eval_tokenized(l, record) || eval_tokenized(r, record),
        QueryNode::Not(c) => !eval_tokenized(c, record),
        QueryNode::Clause { field, matcher } => record.matches(*field, matcher),
    }
}

pub fn eval_query(node: &QueryNode, record: &MetadataRecord) -> bool {
    eval_tokenized(node, &TokenizedRecord::new(record))
}

/// True when the token is already in normalized single-token form.
pub fn is_normalized_token(t: &str) -> bool {
    !t.is_empty() && normalize_text(t) == t && !t.contains(' ')
}
