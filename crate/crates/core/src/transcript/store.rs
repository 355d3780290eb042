//! Line-delimited JSON trajectory files: one `meta` record, the steps and
//! injections in chronological order, then one `outcome` record.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{InjectedGuidance, Outcome, Step, Transcript};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Meta { instance_id: String, step_budget: usize },
    Step(Step),
    Injection(InjectedGuidance),
    Outcome { outcome: Outcome },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("write failed after {records_written} records: {source}")]
    Write { records_written: usize, source: io::Error },
    #[error("read failed at record {record}: {source}")]
    Read { record: usize, source: io::Error },
    #[error("record {record}: {reason}")]
    Parse { record: usize, reason: String },
    #[error("transcript has no outcome")]
    MissingOutcome,
}

/// Writes the transcript and returns the number of records emitted.
pub fn persist<W: Write>(transcript: &Transcript, mut sink: W) -> Result<usize, StoreError> {
    let outcome = transcript.outcome().ok_or(StoreError::MissingOutcome)?;
    let mut written = 0usize;
    let mut emit = |record: &Record, written: &mut usize| -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        sink.write_all(line.as_bytes())
            .map_err(|source| StoreError::Write { records_written: *written, source })?;
        *written += 1;
        Ok(())
    };
    emit(
        &Record::Meta {
            instance_id: transcript.instance_id().to_owned(),
            step_budget: transcript.step_budget(),
        },
        &mut written,
    )?;
    let mut injections = transcript.injections().iter().peekable();
    for step in transcript.steps() {
        emit(&Record::Step(step.clone()), &mut written)?;
        while let Some(inj) = injections.next_if(|inj| inj.after_step == step.index) {
            emit(&Record::Injection(inj.clone()), &mut written)?;
        }
    }
    emit(&Record::Outcome { outcome }, &mut written)?;
    sink.flush().map_err(|source| StoreError::Write { records_written: written, source })?;
    Ok(written)
}

/// Reads a trajectory file, enforcing every transcript invariant.
pub fn load<R: io::Read>(source: R) -> Result<Transcript, StoreError> {
    let mut transcript: Option<Transcript> = None;
    let mut finished = false;
    for (record, line) in BufReader::new(source).lines().enumerate() {
        let line = line.map_err(|source| StoreError::Read { record, source })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| StoreError::Parse { record, reason };
        if finished {
            return Err(parse_err("record after outcome".into()));
        }
        let parsed: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        match (parsed, transcript.as_mut()) {
            (Record::Meta { instance_id, step_budget }, None) => {
                transcript = Some(Transcript::with_budget(instance_id, step_budget));
            }
            (Record::Meta { .. }, Some(_)) => return Err(parse_err("duplicate meta record".into())),
            (_, None) => return Err(parse_err("first record must be meta".into())),
            (Record::Step(step), Some(t)) => {
                t.append_step(step).map_err(|e| parse_err(e.to_string()))?;
            }
            (Record::Injection(inj), Some(t)) => {
                if t.last_step().map(|s| s.index) != Some(inj.after_step) {
                    return Err(parse_err(format!(
                        "injection after step {} is out of position",
                        inj.after_step
                    )));
                }
                t.add_injection(inj).map_err(|e| parse_err(e.to_string()))?;
            }
            (Record::Outcome { outcome }, Some(t)) => {
                if t.is_empty() {
                    return Err(parse_err("trajectory has no steps".into()));
                }
                t.set_outcome(outcome);
                finished = true;
            }
        }
    }
    match transcript {
        Some(t) if finished => Ok(t),
        Some(t) if t.is_empty() => Err(StoreError::Parse { record: 1, reason: "trajectory has no steps".into() }),
        Some(_) => Err(StoreError::MissingOutcome),
        None => Err(StoreError::Parse { record: 0, reason: "empty trajectory file".into() }),
    }
}

pub fn persist_file(transcript: &Transcript, path: &Path) -> Result<usize, StoreError> {
    let file = fs::File::create(path)
        .map_err(|source| StoreError::Write { records_written: 0, source })?;
    persist(transcript, file)
}

pub fn load_file(path: &Path) -> Result<Transcript, StoreError> {
    let file = fs::File::open(path).map_err(|source| StoreError::Read { record: 0, source })?;
    load(file)
}
