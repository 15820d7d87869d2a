//! Query traces: `unix_ts,client_id,qname,qtype` CSV and a compact
//! in-memory form with interned record keys.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dns::{RecordKey, RecordType};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace has no valid rows")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryEvent {
    pub ts: u64,
    pub client: u32,
    pub key: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TraceStats {
    pub rows: u64,
    pub malformed: u64,
    /// Rows dropped because their type is neither A nor AAAA.
    pub unsupported: u64,
    /// Rows that arrived with a timestamp below their predecessor.
    pub reordered: u64,
}

/// Events ordered by timestamp (ties keep input order).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QueryTrace {
    keys: Vec<RecordKey>,
    index: HashMap<RecordKey, u32>,
    events: Vec<QueryEvent>,
    pub stats: TraceStats,
}

#[derive(Deserialize, Serialize)]
struct Row {
    unix_ts: u64,
    client_id: u32,
    qname: String,
    qtype: String,
}

impl QueryTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, key: RecordKey) -> u32 {
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.index.insert(key.clone(), id);
        self.keys.push(key);
        id
    }

    /// Appends an event; out-of-order events are fixed by [`finish`](Self::finish).
    pub fn push(&mut self, ts: u64, client: u32, key: u32) {
        if self.events.last().is_some_and(|e| e.ts > ts) {
            self.stats.reordered += 1;
        }
        self.events.push(QueryEvent { ts, client, key });
    }

    pub fn finish(&mut self) {
        if self.stats.reordered > 0 {
            self.events.sort_by_key(|e| e.ts);
        }
    }

    pub fn events(&self) -> &[QueryEvent] {
        &self.events
    }

    pub fn key(&self, id: u32) -> &RecordKey {
        &self.keys[id as usize]
    }

    pub fn keys(&self) -> &[RecordKey] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn start(&self) -> Option<u64> {
        self.events.first().map(|e| e.ts)
    }

    pub fn hours(&self) -> u64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => (b.ts - a.ts) / 3600 + 1,
            _ => 0,
        }
    }

    pub fn clients(&self) -> usize {
        self.events.iter().map(|e| e.client as usize + 1).max().unwrap_or(0)
    }

    /// Reads a trace, skipping (and counting) rows that do not parse.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let mut trace = Self::new();
        for row in rdr.deserialize::<Row>() {
            trace.stats.rows += 1;
            let Ok(row) = row else {
                trace.stats.malformed += 1;
                continue;
            };
            let name = row.qname.trim_end_matches('.').parse::<crate::dns::DomainName>();
            let Some(name) = name.ok().filter(|n| n.is_hostname_compliant()) else {
                trace.stats.malformed += 1;
                continue;
            };
            let rtype = row.qtype.parse::<RecordType>();
            let Some(rtype) = rtype.ok().filter(|t| *t == RecordType::A || *t == RecordType::AAAA) else {
                trace.stats.unsupported += 1;
                continue;
            };
            let key = trace.intern(RecordKey::new(name, rtype));
            trace.push(row.unix_ts, row.client_id, key);
        }
        if trace.is_empty() {
            return Err(TraceError::Empty);
        }
        trace.finish();
        Ok(trace)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(writer);
        for e in &self.events {
            let key = self.key(e.key);
            w.serialize(Row {
                unix_ts: e.ts,
                client_id: e.client,
                qname: key.name.to_string(),
                qtype: key.rtype.to_string(),
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_and_unsupported_rows_are_counted() {
        let text = "unix_ts,client_id,qname,qtype\n\
                    10,1,a.test,A\n\
                    oops,1,a.test,A\n\
                    12,2,b.test,AAAA\n\
                    13,2,b.test,MX\n\
                    11,3,-bad-.test.,A\n\
                    9,4,c.test.,A\n\
                    14,5\n";
        let t = QueryTrace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.stats.rows, 7);
        assert_eq!(t.stats.unsupported, 1);
        assert_eq!(t.stats.reordered, 1);
        assert_eq!(t.stats.malformed, 3, "{:?}", t.stats);
        let ts: Vec<u64> = t.events().iter().map(|e| e.ts).collect();
        assert_eq!(ts, [9, 10, 12]);
    }

    #[test]
    fn csv_round_trip() {
        let mut t = QueryTrace::new();
        let a = t.intern(RecordKey::new("x.example".parse().unwrap(), RecordType::A));
        let b = t.intern(RecordKey::new("y.example".parse().unwrap(), RecordType::AAAA));
        t.push(100, 0, a);
        t.push(100, 7, b);
        t.push(4000, 7, a);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = QueryTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.events(), t.events());
        assert_eq!(back.keys(), t.keys());
        assert_eq!(back.hours(), 2);
        assert_eq!(back.clients(), 8);
    }
}
