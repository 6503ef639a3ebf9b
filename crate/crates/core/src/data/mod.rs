//! Click-log ingestion: parsing, filtering, chronological splits, and
//! expansion of sessions into next-item training samples.

mod adapters;
mod canonical;
mod pipeline;
mod preprocess;

use std::cmp::Ordering;

pub use adapters::{parse_line, read_raw_file, Dataset, RawRow, Reject, RejectLog, RejectReason};
pub use canonical::{read_canonical, read_vocabulary, write_canonical, write_vocabulary};
pub use pipeline::{
    expand_corpus, expand_sequences, filter_corpus, parse_events, restrict_to_items, split_chronological,
    split_validation, take_most_recent, CorpusStats, Vocabulary, DAY_SECS, WEEK_SECS,
};
pub use preprocess::{preprocess, Fraction, PreprocessConfig, Preprocessed};

/// Dense item index.
pub type ItemId = u32;

/// Seconds between two adjacent events; `None` marks the absent ends.
pub type Interval = Option<u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub item: ItemId,
    /// Whole seconds since the Unix epoch, UTC.
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Session {
    pub id: String,
    pub events: Vec<Event>,
}

impl Session {
    pub fn new(id: impl Into<String>, events: Vec<Event>) -> Self {
        Session { id: id.into(), events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn start_time(&self) -> i64 {
        self.events.first().map_or(0, |e| e.timestamp)
    }

    pub fn end_time(&self) -> i64 {
        self.events.last().map_or(0, |e| e.timestamp)
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.events.iter().map(|e| e.item)
    }

    /// Gaps between consecutive events, in seconds.
    pub fn intervals(&self) -> impl Iterator<Item = u64> + '_ {
        self.events
            .windows(2)
            .map(|w| (w[1].timestamp - w[0].timestamp).max(0) as u64)
    }
}

/// A session prefix with its per-position time gaps and the next item.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SequenceSample {
    pub prefix: Vec<ItemId>,
    /// Gap preceding each prefix item; the first is always absent.
    pub before: Vec<Interval>,
    /// Gap following each prefix item; the last is always absent.
    pub after: Vec<Interval>,
    pub target: ItemId,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.prefix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefix.is_empty()
    }
}

/// Orders session ids numerically when both are integers, textually
/// otherwise (numeric ids first).
pub fn compare_session_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Chronological order by start time, ties broken by session id.
pub fn compare_by_start(a: &Session, b: &Session) -> Ordering {
    a.start_time()
        .cmp(&b.start_time())
        .then_with(|| compare_session_ids(&a.id, &b.id))
}
