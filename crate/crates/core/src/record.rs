//! JSONL result records.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::metrics::{Anatomy, ProbeOutcome};
use crate::probe_builder::{PrefillArm, ProbeKind};
use crate::teacher_forced::AuthorTF;
use crate::trace_parser::ParserConvention;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Canary,
    Qa,
    Retain,
    /// Teacher-forced continuation score.
    Tf,
}

impl RecordKind {
    pub fn probe_kind(self) -> Option<ProbeKind> {
        match self {
            RecordKind::Canary => Some(ProbeKind::Canary),
            RecordKind::Qa => Some(ProbeKind::Qa),
            RecordKind::Retain => Some(ProbeKind::Retain),
            RecordKind::Tf => None,
        }
    }
}

impl From<ProbeKind> for RecordKind {
    fn from(k: ProbeKind) -> Self {
        match k {
            ProbeKind::Canary => RecordKind::Canary,
            ProbeKind::Qa => RecordKind::Qa,
            ProbeKind::Retain => RecordKind::Retain,
        }
    }
}

/// Identity of a record; a later record with the same key replaces an
/// earlier one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub adapter: String,
    pub author_id: String,
    pub probe_index: usize,
    pub arm: PrefillArm,
    pub convention: Option<ParserConvention>,
    pub kind: RecordKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub run_id: String,
    pub timestamp: String,
    pub adapter: String,
    /// Author id, or the retain probe id for retain records.
    pub author_id: String,
    #[serde(default)]
    pub probe_index: usize,
    pub arm: PrefillArm,
    /// Absent on teacher-forced records, which never touch the parser.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convention: Option<ParserConvention>,
    pub kind: RecordKind,
    pub forget_set_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_hit: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thk_hit: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thk_emitted: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anatomy: Option<Anatomy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_len_chars: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wellformed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tf: Option<AuthorTF>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    /// Set on error rows; no metric fields accompany it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            adapter: self.adapter.clone(),
            author_id: self.author_id.clone(),
            probe_index: self.probe_index,
            arm: self.arm,
            convention: self.convention,
            kind: self.kind,
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    /// The generation outcome carried by this record, if it is a successful
    /// generation record.
    pub fn outcome(&self) -> Option<ProbeOutcome> {
        if self.is_error() {
            return None;
        }
        Some(ProbeOutcome {
            adapter_id: self.adapter.clone(),
            author_id: self.author_id.clone(),
            probe_index: self.probe_index,
            arm: self.arm,
            kind: self.kind.probe_kind()?,
            out_hit: self.out_hit?,
            thk_hit: self.thk_hit?,
            thk_emitted: self.thk_emitted?,
            answer_len_chars: self.answer_len_chars?,
            anatomy: self.anatomy?,
        })
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

/// Reads every record of a JSONL file, in file order. Blank lines are
/// skipped; anything else that does not parse is a format error naming
/// the line.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let (records, bad) = scan(path.as_ref())?;
    match bad.into_iter().next() {
        Some(err) => Err(err),
        None => Ok(records),
    }
}

/// Like [`read_records`] but skips unparsable lines, such as a line cut
/// short by an interrupted run, and returns how many were skipped.
pub fn read_records_lenient(path: impl AsRef<Path>) -> Result<(Vec<ResultRecord>, usize)> {
    let (records, bad) = scan(path.as_ref())?;
    Ok((records, bad.len()))
}

fn scan(path: &Path) -> Result<(Vec<ResultRecord>, Vec<AuditError>)> {
    let file = File::open(path).map_err(|e| AuditError::io(path, e))?;
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| AuditError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(rec) => out.push(rec),
            Err(e) => bad.push(AuditError::Format {
                record: format!("{} line {}", path.display(), i + 1),
                detail: e.to_string(),
            }),
        }
    }
    Ok((out, bad))
}

/// Keeps the last record per key, ordered by key.
pub fn latest_by_key(records: Vec<ResultRecord>) -> Vec<ResultRecord> {
    let mut map: BTreeMap<RecordKey, ResultRecord> = BTreeMap::new();
    for r in records {
        map.insert(r.key(), r);
    }
    map.into_values().collect()
}

/// Appends records to a JSONL file, one line each, flushed per write.
pub struct RecordWriter {
    file: File,
    path: std::path::PathBuf,
}

impl RecordWriter {
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| AuditError::io(dir, e))?;
        }
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| AuditError::io(&path, e))?;
        // An interrupted earlier run may have left a partial last line.
        let len = file.metadata().map_err(|e| AuditError::io(&path, e))?.len();
        if len > 0 && !ends_with_newline(&path)? {
            file.write_all(b"\n").map_err(|e| AuditError::io(&path, e))?;
        }
        Ok(RecordWriter { file, path })
    }

    pub fn write(&mut self, rec: &ResultRecord) -> Result<()> {
        let mut line = rec.to_json_line();
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| AuditError::io(&self.path, e))
    }
}

fn ends_with_newline(path: &Path) -> Result<bool> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = File::open(path).map_err(|e| AuditError::io(path, e))?;
    f.seek(SeekFrom::End(-1)).map_err(|e| AuditError::io(path, e))?;
    let mut b = [0u8; 1];
    f.read_exact(&mut b).map_err(|e| AuditError::io(path, e))?;
    Ok(b[0] == b'\n')
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(author: &str, out: bool) -> ResultRecord {
        ResultRecord {
            run_id: "r".into(),
            timestamp: "t".into(),
            adapter: "a".into(),
            author_id: author.into(),
            probe_index: 0,
            arm: PrefillArm::Auto,
            convention: Some(ParserConvention::EmptyThink),
            kind: RecordKind::Canary,
            forget_set_hash: "h".into(),
            out_hit: Some(out),
            thk_hit: Some(true),
            thk_emitted: Some(true),
            anatomy: Some(if out { Anatomy::NotBypass } else { Anatomy::Other }),
            answer_len_chars: Some(3),
            wellformed: Some(true),
            tf: None,
            raw: None,
            error: None,
        }
    }

    #[test]
    fn roundtrip_and_last_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/r.jsonl");
        let mut w = RecordWriter::append(&path).unwrap();
        w.write(&rec("x", false)).unwrap();
        w.write(&rec("y", true)).unwrap();
        w.write(&rec("x", true)).unwrap();
        let all = read_records(&path).unwrap();
        assert_eq!(all.len(), 3);
        let latest = latest_by_key(all);
        assert_eq!(latest.len(), 2);
        assert_eq!(latest[0].out_hit, Some(true));
        assert!(latest[0].outcome().unwrap().out_hit);
    }

    #[test]
    fn bad_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(&path, format!("{}\n{{nope\n", rec("x", true).to_json_line())).unwrap();
        match read_records(&path) {
            Err(AuditError::Format { record, .. }) => assert!(record.ends_with("line 2")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_line_is_fenced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(&path, "{\"run_id\":").unwrap();
        let mut w = RecordWriter::append(&path).unwrap();
        w.write(&rec("x", true)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let (records, skipped) = read_records_lenient(&path).unwrap();
        assert_eq!((records.len(), skipped), (1, 1));
    }

    #[test]
    fn optional_fields_are_omitted() {
        let mut r = rec("x", true);
        r.convention = None;
        let line = r.to_json_line();
        assert!(!line.contains("convention"));
        assert!(!line.contains("raw"));
        assert!(!line.contains("error"));
    }
}
