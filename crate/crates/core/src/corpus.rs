//! Seeded synthetic corpora and queries for simulations and tests.
//!
//! Record `i` of seed `s` depends only on `(s, i)`: each record draws from its
//! own ChaCha stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dc::{DocumentKind, ElementName, MetadataRecord, Statement};

const TITLE_WORDS: &[&str] = &[
    "informação", "ciência", "redes", "bibliotecas", "digitais", "arquivos", "abertos", "metadados",
    "interoperabilidade", "comunicação", "científica", "publicação", "eletrônica", "teses", "periódicos",
    "genoma", "física", "nuclear", "matemática", "aplicada", "saúde", "pública", "energia", "sistemas",
    "distribuídos", "busca", "integrada", "acesso", "unificado", "xml", "protocolos", "coleta", "dados",
    "análise", "modelos", "estatística", "brasil", "tecnologia", "open", "archives", "digital", "library",
    "harvesting", "federated", "search", "preprints", "documents",
];

const SURNAMES: &[&str] = &[
    "Silva", "Souza", "Santos", "Oliveira", "Pereira", "Lima", "Carvalho", "Ferreira", "Rodrigues",
    "Almeida", "Costa", "Gomes", "Martins", "Araújo", "Melo", "Barbosa", "Ribeiro", "Marcondes", "Sayão",
    "Conceição",
];

const INSTITUTIONS: &[&str] = &["USP", "UNICAMP", "UFSC", "PUC-Rio", "ENS/FIOCRUZ", "UFF", "IMPA", "CNEN"];

const JOURNALS: &[&str] = &["Ciência da Informação", "Revista de Saúde Pública", "Anais da Academia", "DataGramaZero"];

const CONFERENCES: &[&str] = &["ENANCIB", "SBBD", "SNBU", "Workshop on Digital Libraries"];

/// Relative weights of the five document kinds, in [`DocumentKind::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KindMix(pub [u32; 5]);

impl Default for KindMix {
    fn default() -> Self {
        KindMix([1; 5])
    }
}

impl KindMix {
    pub fn only(kind: DocumentKind) -> Self {
        let mut w = [0; 5];
        w[kind as usize] = 1;
        KindMix(w)
    }

    fn pick(&self, rng: &mut impl Rng) -> DocumentKind {
        let total: u32 = self.0.iter().sum();
        if total == 0 {
            return DocumentKind::Generic;
        }
        let mut roll = rng.random_range(0..total);
        for (kind, w) in DocumentKind::ALL.iter().zip(self.0) {
            if roll < w {
                return *kind;
            }
            roll -= w;
        }
        unreachable!()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedRecord {
    pub kind: DocumentKind,
    pub record: MetadataRecord,
}

fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn pick<'a>(rng: &mut impl Rng, items: &[&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn words(rng: &mut impl Rng, lo: usize, hi: usize) -> String {
    let n = rng.random_range(lo..=hi);
    (0..n).map(|_| pick(rng, TITLE_WORDS)).collect::<Vec<_>>().join(" ")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn date(rng: &mut impl Rng) -> String {
    format!("{}-{:02}-{:02}", rng.random_range(1990..=2001), rng.random_range(1..=12), rng.random_range(1..=28))
}

/// Record `index` of the corpus for `seed`.
pub fn generate_record(seed: u64, index: u64, mix: KindMix) -> GeneratedRecord {
    use ElementName::*;
    let mut rng = rng_for(seed, index);
    let kind = mix.pick(&mut rng);
    let mut r = MetadataRecord::default();
    let lang = if rng.random_bool(0.7) { "pt" } else { "en" };
    r.push(Statement::new(Title, capitalize(&words(&mut rng, 3, 6))).with_language(lang));
    for _ in 0..rng.random_range(1..=3) {
        let initial = (b'A' + rng.random_range(0..26u8)) as char;
        r.push(Statement::new(Creator, format!("{}, {}.", pick(&mut rng, SURNAMES), initial)));
    }
    for _ in 0..rng.random_range(1..=3) {
        r.push(Statement::new(Subject, pick(&mut rng, TITLE_WORDS)));
    }
    r.push(Statement::new(Description, capitalize(&words(&mut rng, 6, 14))).with_qualifier("abstract"));
    let issued = date(&mut rng);
    r.push(Statement::new(Date, issued.clone()).with_qualifier("issued").with_scheme("W3CDTF"));
    r.push(Statement::new(Type, kind.as_str()));
    r.push(Statement::new(Identifier, format!("urn:bdl:{seed}:{index}")).with_scheme("URN"));
    r.push(Statement::new(Language, lang).with_scheme("ISO639-1"));
    match kind {
        DocumentKind::Thesis => {
            let level = if rng.random_bool(0.5) { "doctoral" } else { "masters" };
            r.push(Statement::new(Description, format!("{} em {}", capitalize(level), pick(&mut rng, TITLE_WORDS))).with_qualifier("degree-name"));
            r.push(Statement::new(Description, level).with_qualifier("degree-level"));
            r.push(Statement::new(Description, pick(&mut rng, INSTITUTIONS)).with_qualifier("degree-grantor"));
        }
        DocumentKind::JournalArticle => {
            let citation = format!(
                "{}; {}; {}; {}-{}",
                pick(&mut rng, JOURNALS),
                rng.random_range(1..40),
                rng.random_range(1..6),
                rng.random_range(1..200),
                rng.random_range(200..400)
            );
            r.push(Statement::new(Relation, citation).with_qualifier("citation"));
        }
        DocumentKind::ConferencePaper => {
            r.push(Statement::new(Relation, pick(&mut rng, CONFERENCES)).with_qualifier("conference-name"));
            r.push(Statement::new(Date, issued).with_qualifier("conference-date"));
        }
        DocumentKind::ResearchReport => {
            r.push(Statement::new(Publisher, pick(&mut rng, INSTITUTIONS)));
            r.push(
                Statement::new(Identifier, format!("RR-{}-{:04}", rng.random_range(1990..2002), index % 10_000))
                    .with_qualifier("report-number"),
            );
        }
        DocumentKind::Generic => {
            if rng.random_bool(0.5) {
                r.push(Statement::new(Rights, "Acesso livre"));
            }
        }
    }
    GeneratedRecord { kind, record: r }
}

pub fn generate_corpus(seed: u64, n: usize, mix: KindMix) -> Vec<GeneratedRecord> {
    (0..n as u64).map(|i| generate_record(seed, i, mix)).collect()
}

/// Random query text over the corpus vocabulary; always parses.
pub fn random_query(seed: u64, index: u64) -> String {
    let mut rng = rng_for(seed ^ 0x9e37_79b9_7f4a_7c15, index);
    random_expr(&mut rng, 0)
}

fn random_clause(rng: &mut impl Rng) -> String {
    let field = match rng.random_range(0..6) {
        0 => "",
        1 => "title:",
        2 => "creator:",
        3 => "subject:",
        4 => "any:",
        _ => ["description:", "type:", "date:", "relation:", "publisher:"][rng.random_range(0..5)],
    };
    if field == "creator:" {
        return format!("creator:{}", crate::dc::normalize_text(pick(rng, SURNAMES)));
    }
    if rng.random_bool(0.2) {
        format!("{field}\"{}\"", words(rng, 2, 2))
    } else {
        format!("{field}{}", pick(rng, TITLE_WORDS))
    }
}

fn random_expr(rng: &mut impl Rng, depth: u32) -> String {
    if depth >= 3 || rng.random_bool(0.4) {
        let c = random_clause(rng);
        return if rng.random_bool(0.15) { format!("NOT {c}") } else { c };
    }
    let l = random_expr(rng, depth + 1);
    let r = random_expr(rng, depth + 1);
    match rng.random_range(0..4) {
        0 => format!("({l} AND {r})"),
        1 => format!("({l} OR {r})"),
        2 => format!("({l} {r})"),
        _ => format!("({l} AND NOT {r})"),
    }
}
