//! The tab-separated event file shared by every stage after preprocessing,
//! and the vocabulary file that maps its indices back to raw item ids.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{compare_session_ids, Event, Session, Vocabulary};
use crate::error::{Result, StarError};

/// Writes `session_id<TAB>item_index<TAB>epoch_seconds`, ordered by
/// session id then time.
pub fn write_canonical<W: Write>(sessions: &[Session], w: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    let mut order: Vec<&Session> = sessions.iter().collect();
    order.sort_by(|a, b| compare_session_ids(&a.id, &b.id));
    for s in order {
        for e in &s.events {
            writeln!(w, "{}\t{}\t{}", s.id, e.item, e.timestamp)?;
        }
    }
    w.flush()
}

pub fn read_canonical(path: &Path) -> Result<Vec<Session>> {
    let file = File::open(path).map_err(|e| StarError::io(path, e))?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Event>> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| StarError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| StarError::Parse {
            line: i + 1,
            message: format!("{}: {m}", path.display()),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(bad("expected 3 tab-separated fields"));
        }
        let item = f[1].parse().map_err(|_| bad("bad item index"))?;
        let timestamp: i64 = f[2].parse().map_err(|_| bad("bad timestamp"))?;
        if timestamp < 0 {
            return Err(bad("negative timestamp"));
        }
        let events = groups.entry(f[0].to_string()).or_insert_with(|| {
            order.push(f[0].to_string());
            Vec::new()
        });
        events.push(Event { item, timestamp });
    }
    order.sort_by(|a, b| compare_session_ids(a, b));
    Ok(order
        .into_iter()
        .map(|id| {
            let mut events = groups.remove(&id).unwrap_or_default();
            events.sort_by_key(|e| e.timestamp);
            Session::new(id, events)
        })
        .collect())
}

/// One `index<TAB>raw_id` line per item.
pub fn write_vocabulary<W: Write>(vocab: &Vocabulary, w: W) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    for (i, raw) in vocab.raw_ids().iter().enumerate() {
        writeln!(w, "{i}\t{raw}")?;
    }
    w.flush()
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let file = File::open(path).map_err(|e| StarError::io(path, e))?;
    let mut raw = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| StarError::io(path, e))?;
        let (idx, id) = line.split_once('\t').ok_or(StarError::Parse {
            line: i + 1,
            message: "expected index<TAB>raw_id".into(),
        })?;
        if idx.parse::<usize>().ok() != Some(raw.len()) {
            return Err(StarError::Parse {
                line: i + 1,
                message: format!("vocabulary index {idx} out of sequence"),
            });
        }
        raw.push(id.to_string());
    }
    Vocabulary::from_raw(raw)
}
