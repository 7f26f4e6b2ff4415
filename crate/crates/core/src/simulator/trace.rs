//! Movement traces as JSON lines.
//!
//! The first line is a header naming the rooms configuration by hash;
//! every following line is one [`TraceRecord`]:
//!
//! ```text
//! {"eery_trace":1,"rooms_hash":"9f86d0..."}
//! {"t":0.0,"participant":"ana","room":"main","x":1.0,"y":2.5}
//! ```

use std::collections::BTreeMap;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RoomsFile;
use crate::space::{EerySpace, Vec2};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceFormatError {
    #[error("trace is missing its header line")]
    MissingHeader,
    #[error("line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("trace was recorded against rooms {found}, expected {expected}")]
    RoomsMismatch { expected: String, found: String },
}

fn at_line(line: usize, reason: impl Into<String>) -> TraceFormatError {
    TraceFormatError::Line {
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub eery_trace: u32,
    pub rooms_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Seconds.
    pub t: f64,
    pub participant: String,
    pub room: String,
    pub x: f64,
    pub y: f64,
}

impl TraceRecord {
    pub fn local(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(rooms: &RoomsFile) -> Self {
        Self {
            header: TraceHeader {
                eery_trace: TRACE_VERSION,
                rooms_hash: rooms.content_hash(),
            },
            records: Vec::new(),
        }
    }

    /// Parses and checks per-line syntax and per-participant time order.
    pub fn parse(text: &str) -> Result<Self, TraceFormatError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hl, first) = lines.next().ok_or(TraceFormatError::MissingHeader)?;
        let header: TraceHeader =
            serde_json::from_str(first).map_err(|e| at_line(hl + 1, format!("bad header: {e}")))?;
        if header.eery_trace != TRACE_VERSION {
            return Err(at_line(
                hl + 1,
                format!("unsupported trace version {}", header.eery_trace),
            ));
        }
        let mut last_t: BTreeMap<String, f64> = BTreeMap::new();
        let mut records = Vec::new();
        for (i, line) in lines {
            let r: TraceRecord = serde_json::from_str(line).map_err(|e| at_line(i + 1, e.to_string()))?;
            if !(r.t.is_finite() && r.t >= 0.0 && r.x.is_finite() && r.y.is_finite()) {
                return Err(at_line(i + 1, "non-finite or negative field"));
            }
            if let Some(prev) = last_t.insert(r.participant.clone(), r.t) {
                if r.t < prev {
                    return Err(at_line(i + 1, format!("time runs backwards for {}", r.participant)));
                }
            }
            records.push(r);
        }
        Ok(Self { header, records })
    }

    /// Checks the trace against a rooms configuration: hash, room names,
    /// bounds, and that nobody changes room.
    pub fn validate(&self, rooms: &RoomsFile) -> Result<(), TraceFormatError> {
        let expected = rooms.content_hash();
        if self.header.rooms_hash != expected {
            return Err(TraceFormatError::RoomsMismatch {
                expected,
                found: self.header.rooms_hash.clone(),
            });
        }
        let space = EerySpace::from_config(rooms).map_err(|e| at_line(1, e.to_string()))?;
        let mut home: BTreeMap<&str, &str> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            let line = i + 2;
            let room = space.room_by_name(&r.room).map_err(|e| at_line(line, e.to_string()))?;
            if space.to_virtual(room.id, r.local()).is_err() {
                return Err(at_line(line, format!("({}, {}) lies outside {}", r.x, r.y, r.room)));
            }
            let h = *home.entry(&r.participant).or_insert(&r.room);
            if h != r.room {
                return Err(at_line(line, format!("{} moved from {h} to {}", r.participant, r.room)));
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "{}",
            serde_json::to_string(&self.header).expect("header serializes")
        )?;
        for r in &self.records {
            writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"))?;
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rooms() -> RoomsFile {
        RoomsFile::parse(r#"{"rooms":[{"id":"main","width_m":6,"depth_m":5,"display_x0_m":2,"display_x1_m":4}]}"#)
            .unwrap()
    }

    fn rec(t: f64, who: &str, x: f64) -> TraceRecord {
        TraceRecord {
            t,
            participant: who.into(),
            room: "main".into(),
            x,
            y: 1.0,
        }
    }

    #[test]
    fn round_trip() {
        let mut tr = Trace::new(&rooms());
        tr.records = vec![rec(0.0, "a", 1.0), rec(0.0, "b", 2.0), rec(0.1, "a", 1.1)];
        let parsed = Trace::parse(&tr.render()).unwrap();
        assert_eq!(parsed, tr);
        parsed.validate(&rooms()).unwrap();
    }

    #[test]
    fn rejects_bad_traces() {
        assert_eq!(Trace::parse(""), Err(TraceFormatError::MissingHeader));
        let mut tr = Trace::new(&rooms());
        tr.records = vec![rec(1.0, "a", 1.0), rec(0.5, "a", 1.0)];
        assert!(matches!(
            Trace::parse(&tr.render()),
            Err(TraceFormatError::Line { line: 3, .. })
        ));

        tr.records = vec![rec(0.0, "a", 7.0)];
        assert!(Trace::parse(&tr.render()).unwrap().validate(&rooms()).is_err());

        tr.header.rooms_hash = "00".into();
        tr.records.clear();
        assert!(matches!(
            tr.validate(&rooms()),
            Err(TraceFormatError::RoomsMismatch { .. })
        ));
        let text = tr.render() + "{not json}\n";
        assert!(matches!(
            Trace::parse(&text),
            Err(TraceFormatError::Line { line: 2, .. })
        ));
    }
}
