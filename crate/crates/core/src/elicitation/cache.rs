use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::record::{ElicitationRecord, RecordKey};
use super::ElicitError;

/// Append-only JSONL store of elicitation records, safe to share between
/// worker threads. Writes are serialized and flushed before `insert`
/// returns.
#[derive(Debug)]
pub struct RecordCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

#[derive(Debug, Default)]
struct Inner {
    index: HashMap<RecordKey, ElicitationRecord>,
    file: Option<File>,
    writes: usize,
}

impl RecordCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner::default()),
        }
    }

    /// Open or create the cache file. A torn final line left by an
    /// interrupted write is cut off; any other unreadable line is an error.
    pub fn open(path: &Path) -> Result<Self, ElicitError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut index: HashMap<RecordKey, ElicitationRecord> = HashMap::new();
        let mut good_len: u64 = 0;
        let mut torn = false;
        {
            let mut reader = BufReader::new(&file);
            let mut line = String::new();
            let mut lineno = 0usize;
            loop {
                line.clear();
                let read = reader.read_line(&mut line)?;
                if read == 0 {
                    break;
                }
                lineno += 1;
                let complete = line.ends_with('\n');
                let text = line.trim();
                if text.is_empty() {
                    good_len += read as u64;
                    continue;
                }
                match serde_json::from_str::<ElicitationRecord>(text) {
                    Ok(rec) => {
                        if let Some(prev) = index.get(&rec.key) {
                            if *prev != rec {
                                return Err(ElicitError::Integrity(format!(
                                    "{}: line {lineno} conflicts with an earlier record for {}",
                                    path.display(),
                                    rec.key
                                )));
                            }
                        }
                        index.insert(rec.key.clone(), rec);
                        good_len += read as u64;
                        if !complete {
                            torn = true;
                        }
                    }
                    Err(_) if !complete => {
                        torn = true;
                        break;
                    }
                    Err(e) => {
                        return Err(ElicitError::Integrity(format!(
                            "{}: line {lineno} is not a record: {e}",
                            path.display()
                        )))
                    }
                }
            }
        }
        if torn {
            // drop a partial tail, or terminate a complete record missing its newline
            let len = file.metadata()?.len();
            if good_len < len {
                file.set_len(good_len)?;
            } else {
                file.write_all(b"\n")?;
            }
            file.seek(SeekFrom::End(0))?;
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner {
                index,
                file: Some(file),
                writes: 0,
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &RecordKey) -> Option<ElicitationRecord> {
        self.inner.lock().expect("cache lock").index.get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lines appended by this handle.
    pub fn writes(&self) -> usize {
        self.inner.lock().expect("cache lock").writes
    }

    /// Persist a record. Re-inserting identical content is a no-op; different
    /// content under an existing key is an integrity error and nothing is written.
    pub fn insert(&self, record: &ElicitationRecord) -> Result<(), ElicitError> {
        let mut inner = self.inner.lock().expect("cache lock");
        if let Some(prev) = inner.index.get(&record.key) {
            if prev == record {
                return Ok(());
            }
            return Err(ElicitError::Integrity(format!(
                "refusing to overwrite the cached record for {}",
                record.key
            )));
        }
        if let Some(file) = inner.file.as_mut() {
            let mut line = record.to_json_line();
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        inner.index.insert(record.key.clone(), record.clone());
        inner.writes += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Dimension;
    use crate::elicitation::record::{Candidate, RequestParams};

    fn rec(item: &str, lp: f64) -> ElicitationRecord {
        ElicitationRecord {
            key: RecordKey {
                model_name: "m".into(),
                session_id: "1".into(),
                study_id: "s".into(),
                item_id: item.into(),
                dimension: Dimension::Familiarity,
                prompt_hash: "h".into(),
            },
            top_candidates: vec![Candidate::new("3", lp)],
            params: RequestParams {
                temperature: 0.0,
                max_output_tokens: 1,
                top_logprob_count: 3,
            },
            timestamp: 0,
            raw_response: String::new(),
        }
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c/e.jsonl");
        let c = RecordCache::open(&path).unwrap();
        c.insert(&rec("1", -0.1)).unwrap();
        c.insert(&rec("2", -0.2)).unwrap();
        c.insert(&rec("2", -0.2)).unwrap();
        assert_eq!(c.writes(), 2);
        drop(c);
        let c = RecordCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(&rec("2", 0.0).key).unwrap(), rec("2", -0.2));
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn conflicting_write_is_rejected() {
        let c = RecordCache::in_memory();
        c.insert(&rec("1", -0.1)).unwrap();
        assert!(matches!(c.insert(&rec("1", -0.3)), Err(ElicitError::Integrity(_))));
        assert_eq!(c.get(&rec("1", 0.0).key).unwrap(), rec("1", -0.1));
    }

    #[test]
    fn conflicting_lines_on_disk_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        let body = format!("{}\n{}\n", rec("1", -0.1).to_json_line(), rec("1", -0.5).to_json_line());
        std::fs::write(&path, body).unwrap();
        assert!(matches!(RecordCache::open(&path), Err(ElicitError::Integrity(_))));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        let full = rec("1", -0.1).to_json_line();
        let partial = &rec("2", -0.1).to_json_line()[..20];
        std::fs::write(&path, format!("{full}\n{partial}")).unwrap();
        let c = RecordCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        c.insert(&rec("3", -0.1)).unwrap();
        drop(c);
        let c = RecordCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
    }
}
