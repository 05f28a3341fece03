//! On-disk store: `<name>.jsonl` with one example per line, plus a
//! `<name>.jsonl.meta.json` sidecar recording the pivot language.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::MultiWayStore;
use crate::model::{LanguageId, MultiWayExample};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: line {line}: key {key:?} is out of order or duplicated")]
    Order {
        path: PathBuf,
        line: u64,
        key: String,
    },
    #[error("{path}: missing metadata sidecar and no pivot given")]
    MissingMeta { path: PathBuf },
}

pub const STORE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub format_version: u32,
    pub pivot: LanguageId,
    pub examples: u64,
}

pub fn meta_path(store: &Path) -> PathBuf {
    let mut name = store.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn read_meta(store: &Path) -> Result<Option<StoreMeta>, StoreError> {
    let path = meta_path(store);
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(source) => return Err(StoreError::Io { path, source }),
    };
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| StoreError::Malformed {
            path,
            line: e.line() as u64,
            message: e.to_string(),
        })
}

/// Resolves the pivot: an explicit override wins, otherwise the sidecar.
pub fn resolve_pivot(
    store: &Path,
    explicit: Option<&LanguageId>,
) -> Result<LanguageId, StoreError> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    read_meta(store)?
        .map(|m| m.pivot)
        .ok_or_else(|| StoreError::MissingMeta {
            path: store.to_owned(),
        })
}

/// Streams examples from a store file, checking that keys ascend strictly.
pub struct StoreReader {
    path: PathBuf,
    reader: BufReader<File>,
    buf: String,
    line: u64,
    last_key: Option<String>,
    failed: bool,
}

impl StoreReader {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let file = File::open(path).map_err(|source| StoreError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(StoreReader {
            path: path.to_owned(),
            reader: BufReader::with_capacity(1 << 16, file),
            buf: String::new(),
            line: 0,
            last_key: None,
            failed: false,
        })
    }

    fn read_next(&mut self) -> Result<Option<MultiWayExample>, StoreError> {
        self.buf.clear();
        let n = self
            .reader
            .read_line(&mut self.buf)
            .map_err(|e| StoreError::Malformed {
                path: self.path.clone(),
                line: self.line + 1,
                message: e.to_string(),
            })?;
        if n == 0 {
            return Ok(None);
        }
        self.line += 1;
        let text = self.buf.strip_suffix('\n').unwrap_or(&self.buf);
        let ex: MultiWayExample =
            serde_json::from_str(text).map_err(|e| StoreError::Malformed {
                path: self.path.clone(),
                line: self.line,
                message: e.to_string(),
            })?;
        if let Some(prev) = &self.last_key {
            if prev.as_str() >= ex.key() {
                return Err(StoreError::Order {
                    path: self.path.clone(),
                    line: self.line,
                    key: ex.key().to_owned(),
                });
            }
        }
        self.last_key = Some(ex.key().to_owned());
        Ok(Some(ex))
    }
}

impl Iterator for StoreReader {
    type Item = Result<MultiWayExample, StoreError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.read_next().transpose();
        if matches!(item, Some(Err(_))) {
            self.failed = true;
        }
        item
    }
}

pub fn load_store(path: &Path, pivot: Option<&LanguageId>) -> Result<MultiWayStore, StoreError> {
    let pivot = resolve_pivot(path, pivot)?;
    let examples = StoreReader::open(path)?.collect::<Result<Vec<_>, _>>()?;
    // StoreReader has already checked order and uniqueness.
    Ok(MultiWayStore::from_examples(pivot, examples).expect("keys verified unique"))
}

/// Writes examples as they arrive, then the sidecar on [`StoreWriter::finish`].
pub struct StoreWriter {
    path: PathBuf,
    out: BufWriter<File>,
    pivot: LanguageId,
    count: u64,
}

impl StoreWriter {
    pub fn create(path: &Path, pivot: LanguageId) -> Result<Self, StoreError> {
        let file = File::create(path).map_err(|source| StoreError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(StoreWriter {
            path: path.to_owned(),
            out: BufWriter::with_capacity(1 << 16, file),
            pivot,
            count: 0,
        })
    }

    fn io_err(&self) -> impl Fn(io::Error) -> StoreError + '_ {
        |source| StoreError::Io {
            path: self.path.clone(),
            source,
        }
    }

    pub fn write(&mut self, example: &MultiWayExample) -> Result<(), StoreError> {
        serde_json::to_writer(&mut self.out, example).map_err(|e| StoreError::Io {
            path: self.path.clone(),
            source: e.into(),
        })?;
        self.out.write_all(b"\n").map_err(self.io_err())?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<StoreMeta, StoreError> {
        self.out.flush().map_err(self.io_err())?;
        let meta = StoreMeta {
            format_version: STORE_FORMAT_VERSION,
            pivot: self.pivot.clone(),
            examples: self.count,
        };
        let mpath = meta_path(&self.path);
        let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
        text.push('\n');
        std::fs::write(&mpath, text).map_err(|source| StoreError::Io {
            path: mpath,
            source,
        })?;
        Ok(meta)
    }
}

pub fn write_store(path: &Path, store: &MultiWayStore) -> Result<StoreMeta, StoreError> {
    let mut w = StoreWriter::create(path, store.pivot().clone())?;
    for ex in store {
        w.write(ex)?;
    }
    w.finish()
}
