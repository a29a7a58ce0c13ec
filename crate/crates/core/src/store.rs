//! Embedded key-value persistence behind a small trait.

use std::collections::BTreeMap;
use std::path::Path;

use parking_lot::Mutex;
use redb::{Database, ReadableTable, TableDefinition};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("store: {0}")]
pub struct StoreError(pub String);

fn err(e: impl std::fmt::Display) -> StoreError {
    StoreError(e.to_string())
}

/// Named tables of string keys to byte values.
pub trait Store: Send + Sync {
    fn put(&self, table: &'static str, key: &str, value: &[u8]) -> Result<(), StoreError>;
    fn get(&self, table: &'static str, key: &str) -> Result<Option<Vec<u8>>, StoreError>;
    fn list(&self, table: &'static str) -> Result<Vec<(String, Vec<u8>)>, StoreError>;
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    tables: Mutex<BTreeMap<&'static str, BTreeMap<String, Vec<u8>>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn put(&self, table: &'static str, key: &str, value: &[u8]) -> Result<(), StoreError> {
        self.tables
            .lock()
            .entry(table)
            .or_default()
            .insert(key.to_owned(), value.to_vec());
        Ok(())
    }

    fn get(&self, table: &'static str, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(self.tables.lock().get(table).and_then(|t| t.get(key).cloned()))
    }

    fn list(&self, table: &'static str) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        Ok(self
            .tables
            .lock()
            .get(table)
            .map(|t| t.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default())
    }
}

/// redb-backed store; every `put` is its own committed transaction.
pub struct RedbStore {
    db: Database,
}

impl std::fmt::Debug for RedbStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("RedbStore")
    }
}

impl RedbStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Ok(Self {
            db: Database::create(path).map_err(err)?,
        })
    }
}

fn def(table: &'static str) -> TableDefinition<'static, &'static str, &'static [u8]> {
    TableDefinition::new(table)
}

impl Store for RedbStore {
    fn put(&self, table: &'static str, key: &str, value: &[u8]) -> Result<(), StoreError> {
        let tx = self.db.begin_write().map_err(err)?;
        {
            let mut t = tx.open_table(def(table)).map_err(err)?;
            t.insert(key, value).map_err(err)?;
        }
        tx.commit().map_err(err)
    }

    fn get(&self, table: &'static str, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        let tx = self.db.begin_read().map_err(err)?;
        let t = match tx.open_table(def(table)) {
            Ok(t) => t,
            Err(redb::TableError::TableDoesNotExist(_)) => return Ok(None),
            Err(e) => return Err(err(e)),
        };
        let v = t.get(key).map_err(err)?;
        Ok(v.map(|v| v.value().to_vec()))
    }

    fn list(&self, table: &'static str) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        let tx = self.db.begin_read().map_err(err)?;
        let t = match tx.open_table(def(table)) {
            Ok(t) => t,
            Err(redb::TableError::TableDoesNotExist(_)) => return Ok(Vec::new()),
            Err(e) => return Err(err(e)),
        };
        let mut out = Vec::new();
        for row in t.iter().map_err(err)? {
            let (k, v) = row.map_err(err)?;
            out.push((k.value().to_owned(), v.value().to_vec()));
        }
        Ok(out)
    }
}
