//! Dublin Core record model.
//!
//! A [`MetadataRecord`] is an ordered list of [`Statement`]s over the fifteen
//! DCMES 1.1 elements. Every element is optional and repeatable; statement
//! order is significant and is kept by every codec and store in this
//! workspace.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// One of the fifteen Dublin Core element names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementName {
    Title,
    Creator,
    Subject,
    Description,
    Publisher,
    Contributor,
    Date,
    Type,
    Format,
    Identifier,
    Source,
    Language,
    Relation,
    Coverage,
    Rights,
}

impl ElementName {
    pub const ALL: [ElementName; 15] = [
        ElementName::Title,
        ElementName::Creator,
        ElementName::Subject,
        ElementName::Description,
        ElementName::Publisher,
        ElementName::Contributor,
        ElementName::Date,
        ElementName::Type,
        ElementName::Format,
        ElementName::Identifier,
        ElementName::Source,
        ElementName::Language,
        ElementName::Relation,
        ElementName::Coverage,
        ElementName::Rights,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ElementName::Title => "title",
            ElementName::Creator => "creator",
            ElementName::Subject => "subject",
            ElementName::Description => "description",
            ElementName::Publisher => "publisher",
            ElementName::Contributor => "contributor",
            ElementName::Date => "date",
            ElementName::Type => "type",
            ElementName::Format => "format",
            ElementName::Identifier => "identifier",
            ElementName::Source => "source",
            ElementName::Language => "language",
            ElementName::Relation => "relation",
            ElementName::Coverage => "coverage",
            ElementName::Rights => "rights",
        }
    }

    /// Position in [`ElementName::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ElementName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown Dublin Core element `{0}`")]
pub struct UnknownElement(pub String);

impl FromStr for ElementName {
    type Err = UnknownElement;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ElementName::ALL
            .iter()
            .copied()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownElement(s.to_string()))
    }
}

/// Letters, digits and hyphen; non-empty.
pub fn is_valid_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_alphanumeric() || c == '-')
}

/// 2 to 8 characters of letters and hyphen.
pub fn is_valid_language_tag(s: &str) -> bool {
    let n = s.chars().count();
    (2..=8).contains(&n) && s.chars().all(|c| c.is_alphabetic() || c == '-')
}

/// A single Dublin Core statement.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Statement {
    pub element: ElementName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualifier: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(default, rename = "lang", skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatementError {
    #[error("{element}: value is empty")]
    EmptyValue { element: ElementName },
    #[error("{element}: malformed qualifier `{value}`")]
    BadQualifier { element: ElementName, value: String },
    #[error("{element}: malformed scheme `{value}`")]
    BadScheme { element: ElementName, value: String },
    #[error("{element}: malformed language tag `{value}`")]
    BadLanguage { element: ElementName, value: String },
}

impl Statement {
    /// Unqualified statement. Not validated; see [`Statement::check`].
    pub fn new(element: ElementName, value: impl Into<String>) -> Self {
        Statement {
            element,
            qualifier: None,
            scheme: None,
            language: None,
            value: value.into(),
        }
    }

    pub fn with_qualifier(mut self, qualifier: impl Into<String>) -> Self {
        self.qualifier = Some(qualifier.into());
        self
    }

    pub fn with_scheme(mut self, scheme: impl Into<String>) -> Self {
        self.scheme = Some(scheme.into());
        self
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = Some(language.into());
        self
    }

    pub fn check(&self) -> Result<(), StatementError> {
        let element = self.element;
        if self.value.trim().is_empty() {
            return Err(StatementError::EmptyValue { element });
        }
        if let Some(q) = &self.qualifier {
            if !is_valid_token(q) {
                return Err(StatementError::BadQualifier { element, value: q.clone() });
            }
        }
        if let Some(s) = &self.scheme {
            if !is_valid_token(s) {
                return Err(StatementError::BadScheme { element, value: s.clone() });
            }
        }
        if let Some(l) = &self.language {
            if !is_valid_language_tag(l) {
                return Err(StatementError::BadLanguage { element, value: l.clone() });
            }
        }
        Ok(())
    }
}

/// An ordered list of Dublin Core statements.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetadataRecord {
    pub statements: Vec<Statement>,
}

impl MetadataRecord {
    pub fn new(statements: Vec<Statement>) -> Self {
        MetadataRecord { statements }
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn push(&mut self, statement: Statement) {
        self.statements.push(statement);
    }

    pub fn values(&self, element: ElementName) -> impl Iterator<Item = &str> + '_ {
        self.statements
            .iter()
            .filter(move |s| s.element == element)
            .map(|s| s.value.as_str())
    }

    pub fn first(&self, element: ElementName) -> Option<&str> {
        self.values(element).next()
    }
}

impl FromIterator<Statement> for MetadataRecord {
    fn from_iter<T: IntoIterator<Item = Statement>>(iter: T) -> Self {
        MetadataRecord { statements: iter.into_iter().collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocumentKind {
    Thesis,
    JournalArticle,
    ConferencePaper,
    ResearchReport,
    Generic,
}

impl DocumentKind {
    pub const ALL: [DocumentKind; 5] = [
        DocumentKind::Thesis,
        DocumentKind::JournalArticle,
        DocumentKind::ConferencePaper,
        DocumentKind::ResearchReport,
        DocumentKind::Generic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DocumentKind::Thesis => "thesis",
            DocumentKind::JournalArticle => "journal-article",
            DocumentKind::ConferencePaper => "conference-paper",
            DocumentKind::ResearchReport => "research-report",
            DocumentKind::Generic => "generic",
        }
    }

    pub fn profile(self) -> DocumentProfile {
        DocumentProfile::for_kind(self)
    }
}

impl fmt::Display for DocumentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown document kind `{0}`")]
pub struct UnknownKind(pub String);

impl FromStr for DocumentKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DocumentKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownKind(s.to_string()))
    }
}

/// An (element, optional qualifier) pair a profile requires at least once.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Requirement {
    pub element: ElementName,
    pub qualifier: Option<&'static str>,
}

impl Requirement {
    const fn plain(element: ElementName) -> Self {
        Requirement { element, qualifier: None }
    }

    const fn qualified(element: ElementName, qualifier: &'static str) -> Self {
        Requirement { element, qualifier: Some(qualifier) }
    }

    /// An unqualified requirement is met by any statement of the element.
    pub fn is_met_by(&self, statement: &Statement) -> bool {
        statement.element == self.element
            && match self.qualifier {
                None => true,
                Some(q) => statement.qualifier.as_deref().is_some_and(|sq| sq.eq_ignore_ascii_case(q)),
            }
    }
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.qualifier {
            Some(q) => write!(f, "({}, {})", self.element, q),
            None => write!(f, "({}, -)", self.element),
        }
    }
}

const BASE_REQUIREMENTS: [Requirement; 3] = [
    Requirement::plain(ElementName::Title),
    Requirement::plain(ElementName::Identifier),
    Requirement::plain(ElementName::Date),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentProfile {
    pub kind: DocumentKind,
    pub required: Vec<Requirement>,
}

impl DocumentProfile {
    pub fn for_kind(kind: DocumentKind) -> Self {
        use ElementName::*;
        let extra: &[Requirement] = match kind {
            DocumentKind::Thesis => &[
                Requirement::qualified(Description, "degree-name"),
                Requirement::qualified(Description, "degree-level"),
                Requirement::qualified(Description, "degree-grantor"),
            ],
            DocumentKind::JournalArticle => &[Requirement::qualified(Relation, "citation")],
            DocumentKind::ConferencePaper => &[
                Requirement::qualified(Relation, "conference-name"),
                Requirement::qualified(Date, "conference-date"),
            ],
            DocumentKind::ResearchReport => &[
                Requirement::plain(Publisher),
                Requirement::qualified(Identifier, "report-number"),
            ],
            DocumentKind::Generic => &[],
        };
        let mut required = BASE_REQUIREMENTS.to_vec();
        required.extend_from_slice(extra);
        DocumentProfile { kind, required }
    }
}

/// One problem found by [`validate_record`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("missing required statement {0}")]
    Missing(Requirement),
    #[error("statement #{index} is malformed: {error}")]
    Malformed { index: usize, error: StatementError },
}

/// Checks a record against a profile. Unknown qualifiers are accepted.
pub fn validate_record(record: &MetadataRecord, profile: &DocumentProfile) -> Vec<Violation> {
    let mut violations: Vec<Violation> = record
        .statements
        .iter()
        .enumerate()
        .filter_map(|(index, s)| s.check().err().map(|error| Violation::Malformed { index, error }))
        .collect();
    for req in &profile.required {
        // A malformed statement does not satisfy a requirement.
        let met = record
            .statements
            .iter()
            .any(|s| req.is_met_by(s) && s.check().is_ok());
        if !met {
            violations.push(Violation::Missing(req.clone()));
        }
    }
    violations
}

/// Lowercase, strip diacritics, replace punctuation by spaces, collapse
/// whitespace and trim.
pub fn normalize_text(s: &str) -> String {
    // char-wise lowercasing avoids the context-dependent final sigma rule.
    let lowered: String = s.chars().flat_map(char::to_lowercase).collect();
    let mut spaced = String::with_capacity(lowered.len());
    for c in lowered.nfd() {
        if is_combining_mark(c) {
            continue;
        }
        if c.is_alphanumeric() {
            spaced.push(c);
        } else {
            spaced.push(' ');
        }
    }
    let mut out = String::with_capacity(spaced.len());
    for word in spaced.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// `normalize_text` split into tokens.
pub fn tokenize(s: &str) -> Vec<String> {
    normalize_text(s).split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

/// Deduplication key: normalized title, sorted normalized creators, year.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl Fingerprint {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn fingerprint(record: &MetadataRecord) -> Fingerprint {
    let title = record.first(ElementName::Title).map(normalize_text).unwrap_or_default();
    let mut creators: Vec<String> = record.values(ElementName::Creator).map(normalize_text).collect();
    creators.sort();
    let year = record
        .values(ElementName::Date)
        .find_map(year_prefix)
        .unwrap_or("----");
    Fingerprint(format!("{}|{}|{}", title, creators.join(";"), year))
}

fn year_prefix(date: &str) -> Option<&str> {
    let d = date.trim_start();
    let prefix = d.get(..4)?;
    prefix.bytes().all(|b| b.is_ascii_digit()).then_some(prefix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ElementName::*;

    fn rec(stmts: &[(ElementName, &str)]) -> MetadataRecord {
        stmts.iter().map(|(e, v)| Statement::new(*e, *v)).collect()
    }

    #[test]
    fn element_set_is_closed_and_case_insensitive() {
        assert_eq!(ElementName::ALL.len(), 15);
        assert_eq!("TiTlE".parse::<ElementName>().unwrap(), Title);
        assert_eq!(Title.to_string(), "title");
        assert!("isbn".parse::<ElementName>().is_err());
        for (i, e) in ElementName::ALL.iter().enumerate() {
            assert_eq!(e.index(), i);
            assert_eq!(e.as_str().parse::<ElementName>().unwrap(), *e);
        }
    }

    #[test]
    fn every_profile_requires_base_triple() {
        for kind in DocumentKind::ALL {
            let p = kind.profile();
            for base in &BASE_REQUIREMENTS {
                assert!(p.required.contains(base), "{kind} lacks {base}");
            }
        }
    }

    #[test]
    fn minimal_generic_record_is_valid() {
        let r = rec(&[(Title, "X"), (Identifier, "i1"), (Date, "2001-05-01")]);
        assert!(validate_record(&r, &DocumentKind::Generic.profile()).is_empty());
    }

    #[test]
    fn thesis_missing_degree_level() {
        let mut r = rec(&[(Title, "X"), (Identifier, "i1"), (Date, "2001-05-01")]);
        r.push(Statement::new(Description, "Computer Science").with_qualifier("degree-name"));
        r.push(Statement::new(Description, "UFF").with_qualifier("degree-grantor"));
        let v = validate_record(&r, &DocumentKind::Thesis.profile());
        assert_eq!(
            v,
            vec![Violation::Missing(Requirement::qualified(Description, "degree-level"))]
        );
        assert!(v[0].to_string().contains("(description, degree-level)"));
    }

    #[test]
    fn blank_value_is_malformed() {
        let r = rec(&[(Title, "X"), (Identifier, "i1"), (Date, "2001"), (Subject, "   ")]);
        let v = validate_record(&r, &DocumentKind::Generic.profile());
        assert_eq!(v.len(), 1);
        assert!(matches!(v[0], Violation::Malformed { index: 3, error: StatementError::EmptyValue { .. } }));
    }

    #[test]
    fn unknown_qualifiers_are_kept() {
        let mut r = rec(&[(Title, "X"), (Identifier, "i1"), (Date, "2001")]);
        r.push(Statement::new(Subject, "redes").with_qualifier("made-up"));
        assert!(validate_record(&r, &DocumentKind::Generic.profile()).is_empty());
    }

    #[test]
    fn malformed_attributes() {
        assert!(Statement::new(Title, "a").with_qualifier("a b").check().is_err());
        assert!(Statement::new(Title, "a").with_scheme("").check().is_err());
        assert!(Statement::new(Title, "a").with_language("p").check().is_err());
        assert!(Statement::new(Title, "a").with_language("pt-BR").check().is_ok());
        assert!(Statement::new(Title, "a").with_language("pt1").check().is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_text("Ciência  da Informação!"), "ciencia da informacao");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("ABC"), "abc");
        assert_eq!(normalize_text("  Silva, A. "), "silva a");
    }

    #[test]
    fn fingerprint_examples() {
        let r = rec(&[
            (Title, "Open Archives"),
            (Creator, "Silva, A."),
            (Creator, "Souza, B."),
            (Date, "2001-09-01"),
        ]);
        assert_eq!(fingerprint(&r).as_str(), "open archives|silva a;souza b|2001");
        assert_eq!(fingerprint(&MetadataRecord::default()).as_str(), "||----");

        let shuffled = rec(&[
            (Date, "2001-09-01"),
            (Creator, "Souza, B."),
            (Title, "Open Archives"),
            (Creator, "Silva, A."),
        ]);
        assert_eq!(fingerprint(&r), fingerprint(&shuffled));
    }

    #[test]
    fn year_falls_through_to_parseable_date() {
        let r = rec(&[(Date, "circa 1999"), (Date, "2003-01")]);
        assert_eq!(fingerprint(&r).as_str(), "||2003");
        let r = rec(&[(Date, "99")]);
        assert_eq!(fingerprint(&r).as_str(), "||----");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
        }

        #[test]
        fn normalize_any_string_is_idempotent(s in any::<String>()) {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
        }

        #[test]
        fn fingerprint_ignores_creator_order_and_punctuation(
            creators in proptest::collection::vec("[a-zA-Z]{1,8}", 0..5),
            title in "[a-zA-Z ]{0,20}",
            seed in any::<u64>(),
        ) {
            let mut a = MetadataRecord::default();
            a.push(Statement::new(Title, title.clone()));
            for c in &creators {
                a.push(Statement::new(Creator, c.clone()));
            }
            let mut shuffled = creators.clone();
            let n = shuffled.len();
            if n > 1 {
                shuffled.rotate_left((seed as usize) % n);
            }
            let mut b = MetadataRecord::default();
            for c in &shuffled {
                b.push(Statement::new(Creator, format!(" {}. ", c.to_uppercase())));
            }
            b.push(Statement::new(Title, format!("{}!!", title.replace(' ', "  "))));
            prop_assert_eq!(fingerprint(&a), fingerprint(&b));
        }
    }
}
