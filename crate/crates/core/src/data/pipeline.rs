use std::collections::{HashMap, HashSet};

use super::{
    compare_by_start, compare_session_ids, Event, Interval, ItemId, RawRow, RejectLog, RejectReason, SequenceSample,
    Session,
};
use crate::error::{Result, StarError};
use crate::par::{self, Execution};

pub const DAY_SECS: i64 = 86_400;
pub const WEEK_SECS: i64 = 7 * DAY_SECS;

/// Bidirectional map between raw item ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    raw: Vec<String>,
    index: HashMap<String, ItemId>,
}

impl Vocabulary {
    pub fn from_raw(raw: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(raw.len());
        for (i, r) in raw.iter().enumerate() {
            if index.insert(r.clone(), i as ItemId).is_some() {
                return Err(StarError::InvalidArgument(format!("duplicate vocabulary entry `{r}`")));
            }
        }
        Ok(Vocabulary { raw, index })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn intern(&mut self, raw: &str) -> ItemId {
        if let Some(&id) = self.index.get(raw) {
            return id;
        }
        let id = self.raw.len() as ItemId;
        self.raw.push(raw.to_string());
        self.index.insert(raw.to_string(), id);
        id
    }

    pub fn get(&self, raw: &str) -> Option<ItemId> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, id: ItemId) -> &str {
        &self.raw[id as usize]
    }

    pub fn raw_ids(&self) -> &[String] {
        &self.raw
    }

    /// Dense vocabulary of the items appearing in `sessions` (ids under
    /// `source`), numbered by first appearance.
    pub fn from_sessions(sessions: &[Session], source: &Vocabulary) -> Vocabulary {
        let mut vocab = Vocabulary::default();
        for s in sessions {
            for item in s.items() {
                vocab.intern(source.raw(item));
            }
        }
        vocab
    }

    /// Rewrites item ids from `source` numbering to this vocabulary's,
    /// dropping unknown items and then sessions shorter than `min_len`.
    pub fn remap(&self, sessions: Vec<Session>, source: &Vocabulary, min_len: usize) -> Vec<Session> {
        sessions
            .into_iter()
            .filter_map(|mut s| {
                s.events = s
                    .events
                    .into_iter()
                    .filter_map(|e| self.get(source.raw(e.item)).map(|item| Event { item, ..e }))
                    .collect();
                (s.len() >= min_len).then_some(s)
            })
            .collect()
    }
}

/// Groups rows into time-sorted sessions. Item ids are interned in the
/// returned vocabulary. Rows with negative timestamps go to `rejects`.
pub fn parse_events(rows: Vec<RawRow>, rejects: &mut RejectLog) -> (Vec<Session>, Vocabulary) {
    let mut groups: HashMap<String, Vec<RawRow>> = HashMap::new();
    for row in rows {
        if row.timestamp_ms < 0 {
            let raw = format!("{}\t{}\t{}", row.session_id, row.item, row.timestamp_ms);
            rejects.push(row.line, RejectReason::NegativeTimestamp, raw);
            continue;
        }
        groups.entry(row.session_id.clone()).or_default().push(row);
    }
    let mut ids: Vec<String> = groups.keys().cloned().collect();
    ids.sort_by(|a, b| compare_session_ids(a, b));

    let mut vocab = Vocabulary::default();
    let sessions = ids
        .into_iter()
        .map(|id| {
            let mut rows = groups.remove(&id).unwrap_or_default();
            rows.sort_by_key(|r| (r.timestamp_ms, r.line));
            let events = rows
                .iter()
                .map(|r| Event {
                    item: vocab.intern(&r.item),
                    timestamp: r.timestamp_ms.div_euclid(1000),
                })
                .collect();
            Session::new(id, events)
        })
        .collect();
    (sessions, vocab)
}

/// Removes items with fewer than `min_item_support` clicks and sessions
/// shorter than `min_session_len`, repeating until nothing changes.
pub fn filter_corpus(
    mut sessions: Vec<Session>,
    min_item_support: usize,
    min_session_len: usize,
) -> Result<Vec<Session>> {
    loop {
        let mut support: HashMap<ItemId, usize> = HashMap::new();
        for s in &sessions {
            for item in s.items() {
                *support.entry(item).or_default() += 1;
            }
        }
        let before: usize = sessions.iter().map(Session::len).sum::<usize>() + sessions.len();
        sessions = sessions
            .into_iter()
            .filter_map(|mut s| {
                s.events.retain(|e| support[&e.item] >= min_item_support);
                (s.len() >= min_session_len).then_some(s)
            })
            .collect();
        let after: usize = sessions.iter().map(Session::len).sum::<usize>() + sessions.len();
        if after == before {
            break;
        }
    }
    if sessions.is_empty() {
        return Err(StarError::EmptyCorpus("filtering"));
    }
    Ok(sessions)
}

/// Drops items outside `items`, then sessions shorter than `min_len`.
pub fn restrict_to_items(sessions: Vec<Session>, items: &HashSet<ItemId>, min_len: usize) -> Vec<Session> {
    sessions
        .into_iter()
        .filter_map(|mut s| {
            s.events.retain(|e| items.contains(&e.item));
            (s.len() >= min_len).then_some(s)
        })
        .collect()
}

/// Sends sessions whose last event falls within `boundary_secs` of the
/// latest event in the corpus to the test side. Test items unseen in
/// training are removed, as are test sessions left shorter than two events.
pub fn split_chronological(sessions: Vec<Session>, boundary_secs: i64) -> Result<(Vec<Session>, Vec<Session>)> {
    if sessions.is_empty() {
        return Err(StarError::EmptyCorpus("splitting"));
    }
    if boundary_secs <= 0 {
        return Err(StarError::InvalidSplit(format!(
            "boundary must be positive, got {boundary_secs}s"
        )));
    }
    let max_ts = sessions.iter().map(Session::end_time).max().unwrap_or(0);
    let cutoff = max_ts - boundary_secs;
    let (test, train): (Vec<Session>, Vec<Session>) = sessions.into_iter().partition(|s| s.end_time() >= cutoff);
    if train.is_empty() {
        return Err(StarError::InvalidSplit(
            "no training sessions before the test boundary".into(),
        ));
    }
    let train_items: HashSet<ItemId> = train.iter().flat_map(Session::items).collect();
    let test = restrict_to_items(test, &train_items, 2);
    Ok((train, test))
}

/// Moves the latest `fraction` of sessions (by start time) to validation.
pub fn split_validation(train: Vec<Session>, fraction: f64) -> Result<(Vec<Session>, Vec<Session>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(StarError::InvalidSplit(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    if train.len() < 2 {
        return Err(StarError::InvalidSplit(format!(
            "need at least two sessions to hold out validation, got {}",
            train.len()
        )));
    }
    let mut sorted = train;
    sorted.sort_by(compare_by_start);
    let n = sorted.len();
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let validation = sorted.split_off(n - n_val);
    Ok((sorted, validation))
}

/// Keeps the latest `count` sessions by start time, in chronological order.
pub fn take_most_recent(mut sessions: Vec<Session>, count: usize) -> Vec<Session> {
    sessions.sort_by(compare_by_start);
    let skip = sessions.len().saturating_sub(count);
    sessions.split_off(skip)
}

/// One sample per non-initial event: the prefix before it and the item.
pub fn expand_sequences(session: &Session) -> Vec<SequenceSample> {
    let ts: Vec<i64> = session.events.iter().map(|e| e.timestamp).collect();
    let gap = |i: usize| -> Interval { Some((ts[i + 1] - ts[i]).max(0) as u64) };
    (1..session.len())
        .map(|k| {
            let prefix: Vec<ItemId> = session.events[..k].iter().map(|e| e.item).collect();
            let before = (0..k).map(|j| if j == 0 { None } else { gap(j - 1) }).collect();
            let after = (0..k).map(|j| if j + 1 == k { None } else { gap(j) }).collect();
            SequenceSample {
                prefix,
                before,
                after,
                target: session.events[k].item,
            }
        })
        .collect()
}

/// Expands every session, keeping session order.
pub fn expand_corpus(sessions: &[Session], exec: Execution) -> Vec<SequenceSample> {
    par::map(exec, sessions, expand_sequences)
        .into_iter()
        .flatten()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub n_clicks: usize,
    pub n_sessions: usize,
    pub n_sequences: usize,
    pub n_items: usize,
    pub clicks_per_session: f64,
    pub sequences_per_session: f64,
}

impl CorpusStats {
    pub fn compute(sessions: &[Session]) -> Self {
        let n_clicks: usize = sessions.iter().map(Session::len).sum();
        let n_sessions = sessions.len();
        let n_sequences: usize = sessions.iter().map(|s| s.len().saturating_sub(1)).sum();
        let n_items = sessions.iter().flat_map(Session::items).collect::<HashSet<_>>().len();
        let per = |x: usize| {
            if n_sessions == 0 {
                0.0
            } else {
                x as f64 / n_sessions as f64
            }
        };
        CorpusStats {
            n_clicks,
            n_sessions,
            n_sequences,
            n_items,
            clicks_per_session: per(n_clicks),
            sequences_per_session: per(n_sequences),
        }
    }
}

impl std::fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "clicks={} sessions={} sequences={} items={} clicks/session={:.2} sequences/session={:.2}",
            self.n_clicks,
            self.n_sessions,
            self.n_sequences,
            self.n_items,
            self.clicks_per_session,
            self.sequences_per_session
        )
    }
}
