use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dimension, ItemRef, StudyCorpus};

use super::backend::{Backend, ErrorClass, QueryRequest, RetryPolicy};
use super::cache::RecordCache;
use super::prompt::{build_prompt, PromptSpec, PromptTemplate};
use super::record::{sort_candidates, ElicitationRecord, RecordKey};
use super::{ElicitError, ElicitationParams};

/// Query one item, or return its cached record. New records are written to
/// the cache before this returns; failures persist nothing.
pub fn elicit(
    params: &ElicitationParams,
    prompt: &PromptSpec,
    item: &ItemRef,
    dimension: Dimension,
    backend: &dyn Backend,
    cache: &RecordCache,
    retry: RetryPolicy,
) -> Result<ElicitationRecord, ElicitError> {
    params.validate()?;
    let (record, fresh) = fetch(params, prompt, item, dimension, backend, cache, retry)?;
    if fresh {
        cache.insert(&record)?;
    }
    Ok(record)
}

/// Cached record, or a validated new one (flagged `true`) that the caller
/// still has to persist.
fn fetch(
    params: &ElicitationParams,
    prompt: &PromptSpec,
    item: &ItemRef,
    dimension: Dimension,
    backend: &dyn Backend,
    cache: &RecordCache,
    retry: RetryPolicy,
) -> Result<(ElicitationRecord, bool), ElicitError> {
    let key = RecordKey {
        model_name: params.model_name.clone(),
        session_id: params.session_id.clone(),
        study_id: item.study_id.clone(),
        item_id: item.item_id.clone(),
        dimension,
        prompt_hash: prompt.prompt_hash(),
    };
    let request_params = params.request_params();
    if let Some(hit) = cache.get(&key) {
        if hit.params != request_params {
            return Err(ElicitError::Integrity(format!(
                "{key}: cached under different sampling parameters {:?}",
                hit.params
            )));
        }
        return Ok((hit, false));
    }

    let request = QueryRequest {
        params,
        prompt,
        item: item.clone(),
        dimension,
    };
    let mut attempt = 0u32;
    let response = loop {
        match backend.query(&request) {
            Ok(r) => break r,
            Err(e) => match e.class() {
                ErrorClass::Credential => return Err(ElicitError::Credential(e.to_string())),
                ErrorClass::Protocol => return Err(ElicitError::Protocol(format!("{key}: {e}"))),
                ErrorClass::Retryable => {
                    if attempt >= params.retry_limit {
                        return Err(ElicitError::Retryable {
                            attempts: attempt + 1,
                            last: e.to_string(),
                        });
                    }
                    std::thread::sleep(retry.delay(attempt));
                    attempt += 1;
                }
            },
        }
    };

    let mut candidates = response.candidates;
    sort_candidates(&mut candidates);
    candidates.truncate(params.top_logprob_count as usize);
    let record = ElicitationRecord {
        key,
        top_candidates: candidates,
        params: request_params,
        timestamp: backend.timestamp(),
        raw_response: response.raw,
    };
    record.validate()?;
    Ok((record, true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub item: ItemRef,
    pub class: String,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Setup(ElicitError),
    #[error("session aborted on a credential error: {0}")]
    Credential(String),
    #[error("{} of {total} items failed; first: {} ({})", failures.len(), failures[0].item, failures[0].message)]
    Incomplete {
        total: usize,
        failures: Vec<ItemFailure>,
        /// Successful records, corpus order.
        completed: Vec<ElicitationRecord>,
    },
}

/// Elicit every corpus item rated on `dimension`, with at most
/// `params.concurrency_limit` queries in flight. Records come back in corpus
/// order. Only a credential error stops the session early; other failures
/// are collected and reported together after all items were attempted.
pub fn run_session(
    corpus: &StudyCorpus,
    dimension: Dimension,
    params: &ElicitationParams,
    template: &PromptTemplate,
    backend: &dyn Backend,
    cache: &RecordCache,
    retry: RetryPolicy,
) -> Result<Vec<ElicitationRecord>, SessionError> {
    params.validate().map_err(SessionError::Setup)?;
    let mut jobs: Vec<(ItemRef, PromptSpec)> = Vec::new();
    for s in corpus.stimuli() {
        let Some(norm) = s.norms.get(&dimension) else { continue };
        let instructions = corpus.instructions(&s.study_id, dimension).ok_or_else(|| {
            SessionError::Setup(ElicitError::Prompt(format!(
                "no {dimension} instructions for study {}",
                s.study_id
            )))
        })?;
        let prompt = build_prompt(instructions, s, dimension, norm.scale, template).map_err(SessionError::Setup)?;
        jobs.push((s.item_ref(), prompt));
    }

    // Queries run concurrently but new records are appended to the cache
    // in corpus order, so identical runs leave identical cache files. A
    // record waits in memory only until every earlier item has finished.
    struct Commit {
        cursor: usize,
        slots: Vec<Option<Result<(ElicitationRecord, bool), ElicitError>>>,
        results: Vec<Option<Result<ElicitationRecord, ElicitError>>>,
    }
    let commit = Mutex::new(Commit {
        cursor: 0,
        slots: jobs.iter().map(|_| None).collect(),
        results: jobs.iter().map(|_| None).collect(),
    });
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = params.concurrency_limit.max(1).min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((item, prompt)) = jobs.get(i) else { break };
                let result = fetch(params, prompt, item, dimension, backend, cache, retry);
                if matches!(&result, Err(e) if e.class() == ErrorClass::Credential) {
                    abort.store(true, Ordering::SeqCst);
                }
                let mut c = commit.lock().expect("commit lock");
                c.slots[i] = Some(result);
                while c.cursor < c.slots.len() {
                    let cursor = c.cursor;
                    let Some(done) = c.slots[cursor].take() else { break };
                    let out = match done {
                        Ok((record, true)) => cache.insert(&record).map(|_| record),
                        Ok((record, false)) => Ok(record),
                        Err(e) => Err(e),
                    };
                    c.results[cursor] = Some(out);
                    c.cursor += 1;
                }
            });
        }
    });
    let slots = commit.into_inner().expect("commit lock").results;

    let mut completed = Vec::new();
    let mut failures = Vec::new();
    for ((item, _), slot) in jobs.iter().zip(slots) {
        match slot {
            Some(Ok(r)) => completed.push(r),
            Some(Err(ElicitError::Credential(m))) => return Err(SessionError::Credential(m)),
            Some(Err(e)) => failures.push(ItemFailure {
                item: item.clone(),
                class: format!("{:?}", e.class()).to_lowercase(),
                message: e.to_string(),
            }),
            None => {}
        }
    }
    if abort.load(Ordering::SeqCst) {
        return Err(SessionError::Credential("credential rejected".into()));
    }
    if failures.is_empty() {
        Ok(completed)
    } else {
        Err(SessionError::Incomplete {
            total: jobs.len(),
            failures,
            completed,
        })
    }
}
