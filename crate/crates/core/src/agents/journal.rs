//! Append-only transcript journal and the replay backend that reads it.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{prompt_digest, sha256_hex, AgentBackend, AgentError, BackendIdentity, RequestContext};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub prompt_digest: String,
    pub prompt: String,
    pub answer: String,
    pub backend: String,
    pub timestamp: String,
}

/// Line-delimited journal with a single serialised writer.
pub struct Journal {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

impl Journal {
    /// Opens `path` for appending, creating it if needed.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            writer: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &JournalRecord) -> Result<(), AgentError> {
        let line = serde_json::to_string(record).map_err(|e| AgentError::Journal(e.to_string()))?;
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(w, "{line}")?;
        w.flush()?;
        Ok(())
    }
}

/// Records every successful exchange of the wrapped backend.
pub struct JournalingBackend<B> {
    inner: B,
    journal: Journal,
}

impl<B: AgentBackend> JournalingBackend<B> {
    pub fn new(inner: B, journal: Journal) -> Self {
        Self { inner, journal }
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: AgentBackend> AgentBackend for JournalingBackend<B> {
    fn respond(&self, prompt: &str, ctx: &RequestContext) -> Result<String, AgentError> {
        let answer = self.inner.respond(prompt, ctx)?;
        self.journal.append(&JournalRecord {
            prompt_digest: prompt_digest(prompt),
            prompt: prompt.to_string(),
            answer: answer.clone(),
            backend: self.inner.identity().to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        })?;
        Ok(answer)
    }

    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }

    fn max_concurrency(&self) -> usize {
        self.inner.max_concurrency()
    }
}

/// Serves answers from a journal, keyed by prompt digest.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    answers: HashMap<String, String>,
    duplicates: Vec<String>,
    sources: BTreeSet<String>,
}

impl ReplayBackend {
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, AgentError> {
        let mut answers = HashMap::new();
        let mut duplicates = Vec::new();
        let mut sources = BTreeSet::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JournalRecord =
                serde_json::from_str(&line).map_err(|e| AgentError::Journal(format!("line {}: {e}", i + 1)))?;
            sources.insert(rec.backend);
            if answers.insert(rec.prompt_digest.clone(), rec.answer).is_some() {
                log::warn!(
                    "journal line {}: duplicate prompt digest {}, keeping the later answer",
                    i + 1,
                    rec.prompt_digest
                );
                duplicates.push(rec.prompt_digest);
            }
        }
        Ok(Self {
            answers,
            duplicates,
            sources,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    /// Digests that appeared more than once, in journal order.
    pub fn duplicates(&self) -> &[String] {
        &self.duplicates
    }
}

impl AgentBackend for ReplayBackend {
    fn respond(&self, prompt: &str, _ctx: &RequestContext) -> Result<String, AgentError> {
        let digest = prompt_digest(prompt);
        self.answers.get(&digest).cloned().ok_or(AgentError::Miss { digest })
    }

    fn identity(&self) -> BackendIdentity {
        let joined = self.sources.iter().cloned().collect::<Vec<_>>().join("\n");
        BackendIdentity {
            name: "replay".into(),
            config_digest: sha256_hex(joined.as_bytes()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::FnBackend;

    fn rec(prompt: &str, answer: &str) -> String {
        serde_json::to_string(&JournalRecord {
            prompt_digest: prompt_digest(prompt),
            prompt: prompt.into(),
            answer: answer.into(),
            backend: "fixture:0".into(),
            timestamp: "2026-01-01T00:00:00+00:00".into(),
        })
        .unwrap()
    }

    #[test]
    fn replay_hits_and_misses() {
        let text = format!("{}\n{}\n", rec("a", "1"), rec("b", "2"));
        let r = ReplayBackend::from_reader(text.as_bytes()).unwrap();
        let ctx = RequestContext::default();
        assert_eq!(r.respond("b", &ctx).unwrap(), "2");
        match r.respond("c", &ctx) {
            Err(AgentError::Miss { digest }) => assert_eq!(digest, prompt_digest("c")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_keys_last_write_wins() {
        let text = format!("{}\n{}\n{}\n", rec("a", "old"), rec("b", "x"), rec("a", "new"));
        let r = ReplayBackend::from_reader(text.as_bytes()).unwrap();
        assert_eq!(r.respond("a", &RequestContext::default()).unwrap(), "new");
        assert_eq!(r.duplicates(), &[prompt_digest("a")]);
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn malformed_line_is_an_error() {
        assert!(matches!(
            ReplayBackend::from_reader("{not json}\n".as_bytes()),
            Err(AgentError::Journal(_))
        ));
    }

    #[test]
    fn journaling_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("j.jsonl");
        let live = JournalingBackend::new(
            FnBackend::new("echo", |p: &str, _: &RequestContext| Ok(format!("<{p}>"))),
            Journal::open(&path).unwrap(),
        );
        let ctx = RequestContext::default();
        let answers: Vec<String> = ["x", "y", "z"].iter().map(|p| live.respond(p, &ctx).unwrap()).collect();
        let replay = ReplayBackend::from_path(&path).unwrap();
        for (p, a) in ["x", "y", "z"].iter().zip(&answers) {
            assert_eq!(&replay.respond(p, &ctx).unwrap(), a);
        }
        assert!(replay.duplicates().is_empty());
    }
}
