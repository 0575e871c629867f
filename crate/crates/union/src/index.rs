//! The union index: every harvested record keyed by (provider, identifier),
//! an inverted index over live records, and ranked query evaluation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use bdl_core::codec::WireRecord;
use bdl_core::dc::{fingerprint, ElementName, Fingerprint, MetadataRecord};
use bdl_core::harvest::{Datestamp, RecordHeader};
use bdl_core::journal::{Journal, JournalError, JournalOptions, Replay};
use bdl_core::query::{parse_query, Field, Match, QueryNode, SyntaxError, TokenizedRecord};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::job::HarvestJob;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedEntry {
    pub provider_id: String,
    pub header: RecordHeader,
    /// `None` for a tombstone.
    pub record: Option<MetadataRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<Fingerprint>,
}

impl IndexedEntry {
    pub fn new(provider_id: impl Into<String>, wire: WireRecord) -> Self {
        IndexedEntry {
            provider_id: provider_id.into(),
            fingerprint: wire.record.as_ref().map(fingerprint),
            header: wire.header,
            record: wire.record,
        }
    }

    pub fn key(&self) -> EntryKey {
        (self.provider_id.clone(), self.header.identifier.clone())
    }

    pub fn is_live(&self) -> bool {
        self.record.is_some()
    }
}

/// (providerId, identifier)
pub type EntryKey = (String, String);

/// Everything the index persists.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnionState {
    #[serde(with = "entry_list")]
    pub entries: BTreeMap<EntryKey, IndexedEntry>,
    pub checkpoints: BTreeMap<String, Datestamp>,
    /// Finished jobs, oldest first.
    pub jobs: Vec<HarvestJob>,
}

// JSON maps need string keys; store the entries as a list.
mod entry_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<EntryKey, IndexedEntry>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<EntryKey, IndexedEntry>, D::Error> {
        let list: Vec<IndexedEntry> = Vec::deserialize(d)?;
        Ok(list.into_iter().map(|e| (e.key(), e)).collect())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum UnionOp {
    Upsert { entry: IndexedEntry },
    Checkpoint { provider_id: String, until: Datestamp },
    Job { job: HarvestJob },
}

impl Replay for UnionState {
    type Op = UnionOp;

    fn replay(&mut self, op: UnionOp) {
        match op {
            UnionOp::Upsert { entry } => {
                self.entries.insert(entry.key(), entry);
            }
            UnionOp::Checkpoint { provider_id, until } => {
                let slot = self.checkpoints.entry(provider_id).or_insert(until);
                *slot = (*slot).max(until);
            }
            UnionOp::Job { job } => self.jobs.push(job),
        }
    }
}

/// Result of [`UnionIndex::apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyOutcome {
    Upserted,
    Deleted,
    Skipped,
}

/// One ranked hit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnionHit {
    pub provider_id: String,
    pub identifier: String,
    pub datestamp: Datestamp,
    pub score: u64,
    pub record: MetadataRecord,
}

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error(transparent)]
    Query(#[from] SyntaxError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("entry invariant violated: {0}")]
    Invariant(String),
}

/// Field weight used in scoring.
pub fn field_weight(element: ElementName) -> u64 {
    match element {
        ElementName::Title => 3,
        ElementName::Creator | ElementName::Subject => 2,
        _ => 1,
    }
}

type DocId = u32;

/// Derived, in-memory structures. Rebuilt from [`UnionState`] on open.
#[derive(Default)]
struct Postings {
    keys: Vec<EntryKey>,
    doc_ids: HashMap<EntryKey, DocId>,
    live: BTreeSet<DocId>,
    tokens: HashMap<DocId, TokenizedRecord>,
    postings: HashMap<(ElementName, String), BTreeSet<DocId>>,
}

impl Postings {
    fn build(state: &UnionState) -> Self {
        let mut p = Postings::default();
        for entry in state.entries.values() {
            p.put(entry);
        }
        p
    }

    fn doc_id(&mut self, key: EntryKey) -> DocId {
        if let Some(id) = self.doc_ids.get(&key) {
            return *id;
        }
        let id = self.keys.len() as DocId;
        self.keys.push(key.clone());
        self.doc_ids.insert(key, id);
        id
    }

    fn put(&mut self, entry: &IndexedEntry) {
        let id = self.doc_id(entry.key());
        if let Some(old) = self.tokens.remove(&id) {
            for (element, toks) in &old.statements {
                for t in toks {
                    if let Some(set) = self.postings.get_mut(&(*element, t.clone())) {
                        set.remove(&id);
                        if set.is_empty() {
                            self.postings.remove(&(*element, t.clone()));
                        }
                    }
                }
            }
        }
        self.live.remove(&id);
        if let Some(record) = &entry.record {
            let tokens = TokenizedRecord::new(record);
            for (element, toks) in &tokens.statements {
                for t in toks {
                    self.postings.entry((*element, t.clone())).or_default().insert(id);
                }
            }
            self.tokens.insert(id, tokens);
            self.live.insert(id);
        }
    }

    fn postings_for(&self, field: Field, token: &str) -> BTreeSet<DocId> {
        let elements: &[ElementName] = match &field {
            Field::Any => &ElementName::ALL,
            Field::Element(e) => std::slice::from_ref(e),
        };
        let mut out = BTreeSet::new();
        for e in elements {
            if let Some(set) = self.postings.get(&(*e, token.to_string())) {
                out.extend(set.iter().copied());
            }
        }
        out
    }

    fn candidates(&self, node: &QueryNode) -> BTreeSet<DocId> {
        match node {
            QueryNode::And(l, r) => {
                let left = self.candidates(l);
                if left.is_empty() {
                    return left;
                }
                left.intersection(&self.candidates(r)).copied().collect()
            }
            QueryNode::Or(l, r) => {
                let mut left = self.candidates(l);
                left.extend(self.candidates(r));
                left
            }
            QueryNode::Not(c) => self.live.difference(&self.candidates(c)).copied().collect(),
            QueryNode::Clause { field, matcher } => match matcher {
                Match::Term(t) => self.postings_for(*field, t),
                Match::Phrase(words) => {
                    let Some((first, rest)) = words.split_first() else {
                        return BTreeSet::new();
                    };
                    let mut set = self.postings_for(*field, first);
                    for w in rest {
                        if set.is_empty() {
                            break;
                        }
                        let next = self.postings_for(*field, w);
                        set.retain(|d| next.contains(d));
                    }
                    // adjacency is checked on the token lists
                    set.retain(|d| self.tokens[d].matches(*field, matcher));
                    set
                }
            },
        }
    }
}

/// Σ over distinct positive clauses of weight × term frequency; `ANY` takes
/// the best single field.
pub fn score(query: &QueryNode, tokens: &TokenizedRecord) -> u64 {
    let mut clauses = Vec::new();
    query.positive_clauses(&mut clauses);
    let mut distinct: Vec<(&Field, &Match)> = Vec::new();
    for c in clauses {
        if !distinct.contains(&c) {
            distinct.push(c);
        }
    }
    distinct
        .into_iter()
        .map(|(field, matcher)| match field {
            Field::Element(e) => field_weight(*e) * tokens.frequency(*e, matcher) as u64,
            Field::Any => ElementName::ALL
                .iter()
                .map(|e| field_weight(*e) * tokens.frequency(*e, matcher) as u64)
                .max()
                .unwrap_or(0),
        })
        .sum()
}

struct View {
    state: UnionState,
    postings: Postings,
}

/// Options for [`UnionIndex::open`].
#[derive(Debug, Clone)]
pub struct IndexOptions {
    pub snapshot_every: usize,
    pub sync_writes: bool,
}

impl Default for IndexOptions {
    fn default() -> Self {
        IndexOptions { snapshot_every: 1000, sync_writes: true }
    }
}

/// The persistent union index. Writes are serialized; readers share a
/// consistent view.
pub struct UnionIndex {
    writer: Mutex<Journal>,
    view: RwLock<View>,
}

impl UnionIndex {
    pub fn open(dir: impl AsRef<Path>, options: IndexOptions) -> Result<Self, IndexError> {
        let opts = JournalOptions { snapshot_every: options.snapshot_every, sync_appends: options.sync_writes };
        let (journal, state): (Journal, UnionState) = Journal::open(dir, opts)?;
        let postings = Postings::build(&state);
        Ok(UnionIndex { writer: Mutex::new(journal), view: RwLock::new(View { state, postings }) })
    }

    fn commit(&self, journal: &mut Journal, op: UnionOp) -> Result<(), IndexError> {
        journal.append(&op)?;
        let mut view = self.view.write();
        if let UnionOp::Upsert { entry } = &op {
            view.postings.put(entry);
        }
        view.state.replay(op);
        let view = parking_lot::RwLockWriteGuard::downgrade(view);
        journal.maybe_snapshot(&view.state)?;
        Ok(())
    }

    /// Stores an entry, replacing any entry with the same key.
    pub fn upsert(&self, entry: IndexedEntry) -> Result<(), IndexError> {
        let expected = entry.record.as_ref().map(fingerprint);
        if entry.fingerprint != expected || entry.header.deleted != entry.record.is_none() {
            return Err(IndexError::Invariant(format!("entry {:?} is inconsistent", entry.key())));
        }
        let mut journal = self.writer.lock();
        self.commit(&mut journal, UnionOp::Upsert { entry })
    }

    /// Replaces the entry with a tombstone, kept forever.
    pub fn mark_deleted(&self, provider_id: &str, identifier: &str, datestamp: Datestamp) -> Result<(), IndexError> {
        let mut header = RecordHeader::new(identifier, datestamp);
        header.deleted = true;
        self.upsert(IndexedEntry::new(provider_id, WireRecord { header, record: None }))
    }

    /// Last-write-wins reconciliation of one harvested record.
    ///
    /// Older than the stored entry: skipped. Identical to it: skipped.
    /// Otherwise the incoming record (or tombstone) replaces it.
    pub fn apply(&self, provider_id: &str, wire: WireRecord) -> Result<ApplyOutcome, IndexError> {
        let mut journal = self.writer.lock();
        let key = (provider_id.to_string(), wire.header.identifier.clone());
        if let Some(stored) = self.view.read().state.entries.get(&key) {
            if wire.header.datestamp < stored.header.datestamp
                || (wire.header == stored.header && wire.record == stored.record)
            {
                return Ok(ApplyOutcome::Skipped);
            }
        }
        let outcome = if wire.header.deleted { ApplyOutcome::Deleted } else { ApplyOutcome::Upserted };
        let mut wire = wire;
        if wire.header.deleted {
            wire.record = None;
        }
        self.commit(&mut journal, UnionOp::Upsert { entry: IndexedEntry::new(provider_id, wire) })?;
        Ok(outcome)
    }

    pub fn lookup(&self, provider_id: &str, identifier: &str) -> Option<IndexedEntry> {
        self.view.read().state.entries.get(&(provider_id.to_string(), identifier.to_string())).cloned()
    }

    /// All entries, tombstones included, in key order.
    pub fn entries(&self) -> Vec<IndexedEntry> {
        self.view.read().state.entries.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.view.read().state.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn live_count(&self) -> usize {
        self.view.read().postings.live.len()
    }

    /// A copy of the persisted state.
    pub fn state(&self) -> UnionState {
        self.view.read().state.clone()
    }

    pub fn checkpoint(&self, provider_id: &str) -> Option<Datestamp> {
        self.view.read().state.checkpoints.get(provider_id).copied()
    }

    pub fn checkpoints(&self) -> BTreeMap<String, Datestamp> {
        self.view.read().state.checkpoints.clone()
    }

    /// Advances a provider's checkpoint; never moves it backwards.
    pub fn set_checkpoint(&self, provider_id: &str, until: Datestamp) -> Result<(), IndexError> {
        let mut journal = self.writer.lock();
        if self.checkpoint(provider_id).is_some_and(|c| c >= until) {
            return Ok(());
        }
        self.commit(&mut journal, UnionOp::Checkpoint { provider_id: provider_id.to_string(), until })
    }

    pub fn record_job(&self, job: HarvestJob) -> Result<(), IndexError> {
        let mut journal = self.writer.lock();
        self.commit(&mut journal, UnionOp::Job { job })
    }

    pub fn finished_jobs(&self) -> Vec<HarvestJob> {
        self.view.read().state.jobs.clone()
    }

    /// Ranked search over live entries.
    pub fn query(&self, query_text: &str, start: usize, max: usize) -> Result<(usize, Vec<UnionHit>), IndexError> {
        let query = parse_query(query_text)?;
        Ok(self.query_parsed(&query, start, max))
    }

    pub fn query_parsed(&self, query: &QueryNode, start: usize, max: usize) -> (usize, Vec<UnionHit>) {
        let view = self.view.read();
        let p = &view.postings;
        let mut scored: Vec<(u64, &IndexedEntry)> = p
            .candidates(query)
            .into_iter()
            .map(|d| (score(query, &p.tokens[&d]), &view.state.entries[&p.keys[d as usize]]))
            .collect();
        scored.sort_by(|(sa, a), (sb, b)| {
            sb.cmp(sa)
                .then_with(|| b.header.datestamp.cmp(&a.header.datestamp))
                .then_with(|| a.header.identifier.cmp(&b.header.identifier))
                .then_with(|| a.provider_id.cmp(&b.provider_id))
        });
        let total = scored.len();
        let hits = scored
            .into_iter()
            .skip(start)
            .take(max.max(1))
            .map(|(score, e)| UnionHit {
                provider_id: e.provider_id.clone(),
                identifier: e.header.identifier.clone(),
                datestamp: e.header.datestamp,
                score,
                record: e.record.clone().unwrap_or_default(),
            })
            .collect();
        (total, hits)
    }

    /// Reconstructs the inverted index from the stored entries.
    pub fn rebuild(&self) {
        let mut view = self.view.write();
        view.postings = Postings::build(&view.state);
    }

    /// Writes a snapshot and empties the log.
    pub fn snapshot(&self) -> Result<(), IndexError> {
        let mut journal = self.writer.lock();
        journal.snapshot(&self.view.read().state)?;
        Ok(())
    }
}
