//! File-based ticket adapter.
//!
//! Tickets are read from JSON-lines (canonical) or CSV files. Invalid records
//! are rejected individually with a line-numbered diagnostic; a load only
//! fails outright when no record survives.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dispatcher::DispatchDecision;
use crate::error::{Error, Result};

/// Reserved label for tickets the engine hands back to human dispatchers.
pub const MANUAL_QUEUE: &str = "MANUAL_QUEUE";

/// One helpdesk email.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: String,
    pub subject: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_group: Option<String>,
}

impl Ticket {
    pub fn new(id: impl Into<String>, subject: impl Into<String>, body: impl Into<String>) -> Self {
        Ticket {
            id: id.into(),
            subject: subject.into(),
            body: body.into(),
            metadata: BTreeMap::new(),
            gold_group: None,
        }
    }

    pub fn with_gold(mut self, group: impl Into<String>) -> Self {
        self.gold_group = Some(group.into());
        self
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    /// Checks the record-level invariants: non-empty id, some text, and no
    /// reserved gold label.
    pub fn validate(&self) -> std::result::Result<(), RejectReason> {
        if self.id.is_empty() {
            return Err(RejectReason::Malformed("empty id".into()));
        }
        if self.subject.is_empty() && self.body.is_empty() {
            return Err(RejectReason::EmptyText);
        }
        if self.gold_group.as_deref() == Some(MANUAL_QUEUE) {
            return Err(RejectReason::ReservedLabel);
        }
        Ok(())
    }
}

/// An ordered, immutable collection of tickets with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TicketCorpus {
    tickets: Vec<Ticket>,
    label_set: BTreeSet<String>,
}

impl TicketCorpus {
    /// Builds a corpus, keeping the first ticket for every id. Callers that
    /// need diagnostics should go through [`load_tickets`].
    pub fn new(tickets: Vec<Ticket>) -> Self {
        let mut seen = HashSet::new();
        let tickets: Vec<Ticket> = tickets
            .into_iter()
            .filter(|t| seen.insert(t.id.clone()))
            .collect();
        let label_set = tickets.iter().filter_map(|t| t.gold_group.clone()).collect();
        TicketCorpus { tickets, label_set }
    }

    pub fn tickets(&self) -> &[Ticket] {
        &self.tickets
    }

    pub fn label_set(&self) -> &BTreeSet<String> {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.tickets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickets.is_empty()
    }

    pub fn into_tickets(self) -> Vec<Ticket> {
        self.tickets
    }

    /// Number of tickets per gold label.
    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.tickets {
            if let Some(g) = &t.gold_group {
                *counts.entry(g.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Sub-corpus of tickets satisfying `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&Ticket) -> bool) -> TicketCorpus {
        TicketCorpus::new(self.tickets.iter().filter(|t| keep(t)).cloned().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Guesses the format from a file extension; anything but `.csv` is jsonl.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Jsonl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    Malformed(String),
    EmptyText,
    DuplicateId,
    ReservedLabel,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Malformed(m) => write!(f, "malformed record: {m}"),
            RejectReason::EmptyText => f.write_str("subject and body are both empty"),
            RejectReason::DuplicateId => f.write_str("duplicate id"),
            RejectReason::ReservedLabel => write!(f, "gold group {MANUAL_QUEUE} is reserved"),
        }
    }
}

/// A rejected input record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line in the source file.
    pub line: u64,
    pub id: Option<String>,
    pub reason: RejectReason,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} (id {id}): {}", self.line, self.reason),
            None => write!(f, "line {}: {}", self.line, self.reason),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub corpus: TicketCorpus,
    pub rejected: Vec<Rejection>,
}

pub fn load_tickets(path: impl AsRef<Path>, format: Format) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records = match format {
        Format::Jsonl => read_jsonl(BufReader::new(file), path)?,
        Format::Csv => read_csv(file),
    };

    let mut seen = HashSet::new();
    let mut tickets = Vec::new();
    let mut rejected = Vec::new();
    for (line, record) in records {
        let ticket = match record {
            Ok(t) => t,
            Err(reason) => {
                rejected.push(Rejection { line, id: None, reason });
                continue;
            }
        };
        let id = Some(ticket.id.clone());
        if let Err(reason) = ticket.validate() {
            rejected.push(Rejection { line, id, reason });
        } else if !seen.insert(ticket.id.clone()) {
            rejected.push(Rejection { line, id, reason: RejectReason::DuplicateId });
        } else {
            tickets.push(ticket);
        }
    }
    if tickets.is_empty() {
        return Err(Error::NoValidRecords { path: path.to_path_buf(), rejected: rejected.len() });
    }
    for r in &rejected {
        log::warn!("{}: {r}", path.display());
    }
    Ok(LoadReport { corpus: TicketCorpus::new(tickets), rejected })
}

type Record = (u64, std::result::Result<Ticket, RejectReason>);

fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i as u64 + 1, parse_json_record(&line)));
    }
    Ok(out)
}

fn value_to_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_json_record(line: &str) -> std::result::Result<Ticket, RejectReason> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| RejectReason::Malformed(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(RejectReason::Malformed("record is not an object".into()));
    };
    let text = |key: &str| match map.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(RejectReason::Malformed(format!("{key} is not a string"))),
        None => Err(RejectReason::Malformed(format!("missing {key}"))),
    };
    let mut ticket = Ticket::new(text("id")?, text("subject")?, text("body")?);
    ticket.gold_group = match map.get("gold_group") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if s.is_empty() => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(RejectReason::Malformed("gold_group is not a string".into())),
    };
    for (key, v) in &map {
        match key.as_str() {
            "id" | "subject" | "body" | "gold_group" => {}
            "metadata" => match v {
                Value::Object(meta) => {
                    for (k, mv) in meta {
                        ticket.metadata.insert(k.clone(), value_to_string(mv));
                    }
                }
                Value::Null => {}
                _ => return Err(RejectReason::Malformed("metadata is not an object".into())),
            },
            // unknown adapter fields are kept
            other => {
                ticket.metadata.entry(other.to_string()).or_insert_with(|| value_to_string(v));
            }
        }
    }
    Ok(ticket)
}

fn read_csv(file: File) -> Vec<Record> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return vec![(1, Err(RejectReason::Malformed(e.to_string())))],
    };
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(id_col), Some(subject_col), Some(body_col)) = (col("id"), col("subject"), col("body"))
    else {
        return vec![(1, Err(RejectReason::Malformed("header must contain id,subject,body".into())))];
    };
    let gold_col = col("gold_group");

    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line() + 1;
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                out.push((line, Err(RejectReason::Malformed(e.to_string()))));
                continue;
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        if record.len() != headers.len() {
            let msg = format!("expected {} fields, found {}", headers.len(), record.len());
            out.push((line, Err(RejectReason::Malformed(msg))));
            continue;
        }
        let mut ticket = Ticket::new(&record[id_col], &record[subject_col], &record[body_col]);
        ticket.gold_group = gold_col.map(|c| record[c].to_string()).filter(|g| !g.is_empty());
        for (i, name) in headers.iter().enumerate() {
            if [Some(id_col), Some(subject_col), Some(body_col), gold_col].contains(&Some(i)) {
                continue;
            }
            let key = name.strip_prefix("meta_").unwrap_or(name);
            ticket.metadata.insert(key.to_string(), record[i].to_string());
        }
        out.push((line, Ok(ticket)));
    }
    out
}

/// Writes tickets as JSON lines in the canonical record schema.
pub fn write_tickets(tickets: &[Ticket], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(tickets, path.as_ref())
}

/// Writes one JSON line per decision: `{id, group, confidence, source, trace}`.
pub fn write_assignments(decisions: &[DispatchDecision], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(decisions, path.as_ref())
}

pub fn read_assignments(path: impl AsRef<Path>) -> Result<Vec<DispatchDecision>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d = serde_json::from_str(&line)
            .map_err(|e| Error::Malformed(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(d);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::Malformed(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
