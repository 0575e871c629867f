//! The repository store: items, their documents and the harvest view.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use bdl_core::codec::WireRecord;
use bdl_core::dc::{validate_record, DocumentKind, MetadataRecord, Violation};
use bdl_core::harvest::{
    handle_request, oai_identifier, Datestamp, HarvestResponse, RecordHeader, RecordSet, RepositoryInfo,
};
use bdl_core::journal::{Journal, JournalError, JournalOptions, Replay};
use bdl_core::query::{eval_tokenized, parse_query, SyntaxError, TokenizedRecord};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::config::RepositoryConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredItem {
    pub local_id: u64,
    pub kind: DocumentKind,
    pub header: RecordHeader,
    /// `None` once deleted.
    pub record: Option<MetadataRecord>,
    /// Media type of the stored document, if one was uploaded and not deleted.
    pub media_type: Option<String>,
}

impl StoredItem {
    pub fn wire(&self) -> WireRecord {
        WireRecord { header: self.header.clone(), record: self.record.clone() }
    }
}

/// Everything that survives a restart, apart from document bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreState {
    pub last_local_id: u64,
    pub items: BTreeMap<u64, StoredItem>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum StoreOp {
    Submit { item: StoredItem },
    Update { local_id: u64, record: MetadataRecord, datestamp: Datestamp },
    Delete { local_id: u64, datestamp: Datestamp },
}

impl Replay for StoreState {
    type Op = StoreOp;

    fn replay(&mut self, op: StoreOp) {
        match op {
            StoreOp::Submit { item } => {
                self.last_local_id = self.last_local_id.max(item.local_id);
                self.items.insert(item.local_id, item);
            }
            StoreOp::Update { local_id, record, datestamp } => {
                if let Some(item) = self.items.get_mut(&local_id) {
                    item.record = Some(record);
                    item.header.datestamp = datestamp;
                }
            }
            StoreOp::Delete { local_id, datestamp } => {
                if let Some(item) = self.items.get_mut(&local_id) {
                    item.record = None;
                    item.media_type = None;
                    item.header.deleted = true;
                    item.header.datestamp = datestamp;
                }
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("record does not satisfy the {kind} profile")]
    Invalid { kind: DocumentKind, violations: Vec<Violation> },
    #[error("no record `{0}`")]
    IdDoesNotExist(String),
    #[error("record `{0}` is deleted")]
    Deleted(String),
    #[error("clock moved backwards: {now} is earlier than the current datestamp {current}")]
    ClockRegression { current: Datestamp, now: Datestamp },
    #[error("document of {size} bytes exceeds the {limit}-byte limit")]
    DocumentTooLarge { size: usize, limit: usize },
    #[error(transparent)]
    Query(#[from] SyntaxError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("document storage failed: {0}")]
    Io(#[from] io::Error),
}

/// An uploaded document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub bytes: Vec<u8>,
    pub media_type: String,
}

/// One search result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalHit {
    pub identifier: String,
    pub datestamp: Datestamp,
    pub record: MetadataRecord,
}

struct View {
    state: StoreState,
    harvest: RecordSet,
    tokens: HashMap<u64, TokenizedRecord>,
}

impl View {
    fn new(state: StoreState) -> Self {
        let harvest = state.items.values().map(StoredItem::wire).collect();
        let tokens = state
            .items
            .values()
            .filter_map(|i| i.record.as_ref().map(|r| (i.local_id, TokenizedRecord::new(r))))
            .collect();
        View { state, harvest, tokens }
    }

    fn apply(&mut self, op: StoreOp) {
        let local_id = match &op {
            StoreOp::Submit { item } => item.local_id,
            StoreOp::Update { local_id, .. } | StoreOp::Delete { local_id, .. } => *local_id,
        };
        self.state.replay(op);
        let item = &self.state.items[&local_id];
        self.harvest.put(item.wire());
        match &item.record {
            Some(r) => self.tokens.insert(local_id, TokenizedRecord::new(r)),
            None => self.tokens.remove(&local_id),
        };
    }
}

/// A repository: serialized writers, concurrent readers.
///
/// Each read takes the view lock once, so a harvest page or search never
/// sees a half-applied write.
pub struct Repository {
    config: RepositoryConfig,
    info: RepositoryInfo,
    documents: PathBuf,
    writer: Mutex<Journal>,
    view: RwLock<View>,
}

const DOCUMENTS_DIR: &str = "documents";

impl Repository {
    /// Opens the store in `config.data_dir`, recovering any previous state.
    pub fn open(config: RepositoryConfig) -> Result<Self, StoreError> {
        let options = JournalOptions { snapshot_every: config.snapshot_every, sync_appends: config.sync_writes };
        let (journal, state): (Journal, StoreState) = Journal::open(&config.data_dir, options)?;
        let documents = config.data_dir.join(DOCUMENTS_DIR);
        fs::create_dir_all(&documents)?;
        // Drop payloads whose deletion was logged but not carried out, and
        // uploads whose submission never reached the log.
        for entry in fs::read_dir(&documents)? {
            let entry = entry?;
            let keep = entry
                .file_name()
                .to_str()
                .and_then(|n| n.parse::<u64>().ok())
                .and_then(|id| state.items.get(&id))
                .is_some_and(|item| item.media_type.is_some());
            if !keep {
                fs::remove_file(entry.path())?;
            }
        }
        let info = RepositoryInfo {
            repository_id: config.repository_id.clone(),
            name: config.display_name.clone(),
            admin_contact: config.admin_contact.clone(),
        };
        Ok(Repository { config, info, documents, writer: Mutex::new(journal), view: RwLock::new(View::new(state)) })
    }

    pub fn config(&self) -> &RepositoryConfig {
        &self.config
    }

    pub fn repository_id(&self) -> &str {
        &self.config.repository_id
    }

    /// A copy of the durable state.
    pub fn state(&self) -> StoreState {
        self.view.read().state.clone()
    }

    fn local_id_of(&self, identifier: &str) -> Option<u64> {
        let rest = identifier.strip_prefix("oai:")?.strip_prefix(self.config.repository_id.as_str())?;
        rest.strip_prefix(':')?.parse().ok()
    }

    fn document_path(&self, local_id: u64) -> PathBuf {
        self.documents.join(local_id.to_string())
    }

    fn commit(&self, journal: &mut Journal, op: StoreOp) -> Result<(), StoreError> {
        journal.append(&op)?;
        let mut view = self.view.write();
        view.apply(op);
        let view = parking_lot::RwLockWriteGuard::downgrade(view);
        journal.maybe_snapshot(&view.state)?;
        Ok(())
    }

    /// Validates and stores a new item; returns its identifier.
    pub fn submit(
        &self,
        record: MetadataRecord,
        kind: DocumentKind,
        document: Option<Document>,
        now: Datestamp,
    ) -> Result<String, StoreError> {
        let violations = validate_record(&record, &kind.profile());
        if !violations.is_empty() {
            return Err(StoreError::Invalid { kind, violations });
        }
        if let Some(doc) = &document {
            if doc.bytes.len() > self.config.max_document_bytes {
                return Err(StoreError::DocumentTooLarge { size: doc.bytes.len(), limit: self.config.max_document_bytes });
            }
        }
        let mut journal = self.writer.lock();
        let local_id = self.view.read().state.last_local_id + 1;
        let identifier = oai_identifier(&self.config.repository_id, local_id);
        let media_type = match document {
            Some(doc) => {
                write_atomically(&self.document_path(local_id), &doc.bytes)?;
                Some(doc.media_type)
            }
            None => None,
        };
        let item = StoredItem {
            local_id,
            kind,
            header: RecordHeader::new(identifier.clone(), now),
            record: Some(record),
            media_type,
        };
        self.commit(&mut journal, StoreOp::Submit { item })?;
        Ok(identifier)
    }

    fn writable(&self, identifier: &str, now: Datestamp) -> Result<StoredItem, StoreError> {
        let missing = || StoreError::IdDoesNotExist(identifier.to_string());
        let local_id = self.local_id_of(identifier).ok_or_else(missing)?;
        let item = self.view.read().state.items.get(&local_id).cloned().ok_or_else(missing)?;
        if item.header.deleted {
            return Err(StoreError::Deleted(identifier.to_string()));
        }
        if now < item.header.datestamp {
            return Err(StoreError::ClockRegression { current: item.header.datestamp, now });
        }
        Ok(item)
    }

    /// Replaces an item's record.
    pub fn update(&self, identifier: &str, record: MetadataRecord, now: Datestamp) -> Result<Datestamp, StoreError> {
        let mut journal = self.writer.lock();
        let item = self.writable(identifier, now)?;
        let violations = validate_record(&record, &item.kind.profile());
        if !violations.is_empty() {
            return Err(StoreError::Invalid { kind: item.kind, violations });
        }
        self.commit(&mut journal, StoreOp::Update { local_id: item.local_id, record, datestamp: now })?;
        Ok(now)
    }

    /// Tombstones an item and removes its document.
    pub fn delete(&self, identifier: &str, now: Datestamp) -> Result<Datestamp, StoreError> {
        let mut journal = self.writer.lock();
        let item = self.writable(identifier, now)?;
        self.commit(&mut journal, StoreOp::Delete { local_id: item.local_id, datestamp: now })?;
        if item.media_type.is_some() {
            match fs::remove_file(self.document_path(item.local_id)) {
                Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            }
        }
        Ok(now)
    }

    pub fn get(&self, identifier: &str) -> Option<StoredItem> {
        let local_id = self.local_id_of(identifier)?;
        self.view.read().state.items.get(&local_id).cloned()
    }

    pub fn document(&self, local_id: u64) -> Result<Option<Document>, StoreError> {
        let Some(media_type) = self.view.read().state.items.get(&local_id).and_then(|i| i.media_type.clone()) else {
            return Ok(None);
        };
        match fs::read(self.document_path(local_id)) {
            Ok(bytes) => Ok(Some(Document { bytes, media_type })),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Live items matching `query_text`, newest first, windowed.
    pub fn search_local(&self, query_text: &str, start: usize, max: usize) -> Result<(usize, Vec<LocalHit>), StoreError> {
        let query = parse_query(query_text)?;
        let view = self.view.read();
        let mut hits: Vec<&StoredItem> = view
            .tokens
            .iter()
            .filter(|(_, tokens)| eval_tokenized(&query, tokens))
            .map(|(id, _)| &view.state.items[id])
            .collect();
        hits.sort_by(|a, b| {
            b.header.datestamp.cmp(&a.header.datestamp).then_with(|| a.header.identifier.cmp(&b.header.identifier))
        });
        let total = hits.len();
        let window = hits
            .into_iter()
            .skip(start)
            .take(max.max(1))
            .map(|i| LocalHit {
                identifier: i.header.identifier.clone(),
                datestamp: i.header.datestamp,
                record: i.record.clone().unwrap_or_default(),
            })
            .collect();
        Ok((total, window))
    }

    /// Answers a harvest request against the current snapshot.
    pub fn harvest(&self, params: &[(String, String)], now: Datestamp) -> HarvestResponse {
        let view = self.view.read();
        handle_request(&view.harvest, &self.info, params, now, self.config.page_size)
    }

    /// Writes a snapshot and empties the log.
    pub fn checkpoint(&self) -> Result<(), StoreError> {
        let mut journal = self.writer.lock();
        let view = self.view.read();
        journal.snapshot(&view.state)?;
        Ok(())
    }
}

fn write_atomically(path: &std::path::Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}
