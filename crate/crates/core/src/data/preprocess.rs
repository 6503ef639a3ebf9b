use std::fmt;
use std::str::FromStr;

use super::{
    filter_corpus, parse_events, split_chronological, take_most_recent, CorpusStats, Dataset, RawRow, RejectLog,
    Session, Vocabulary, DAY_SECS, WEEK_SECS,
};
use crate::error::{Result, StarError};

/// Share of the (chronologically latest) training sessions to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fraction {
    Full,
    Latest { num: u32, den: u32 },
}

impl Fraction {
    pub fn apply(self, sessions: Vec<Session>) -> Vec<Session> {
        match self {
            Fraction::Full => sessions,
            Fraction::Latest { num, den } => {
                let keep = (sessions.len() * num as usize / den as usize).max(1);
                take_most_recent(sessions, keep)
            }
        }
    }
}

impl FromStr for Fraction {
    type Err = StarError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "full" {
            return Ok(Fraction::Full);
        }
        let bad = || StarError::InvalidArgument(format!("bad fraction `{s}`, expected p/q or full"));
        let (a, b) = s.split_once('/').ok_or_else(bad)?;
        let num: u32 = a.trim().parse().map_err(|_| bad())?;
        let den: u32 = b.trim().parse().map_err(|_| bad())?;
        if num == 0 || den == 0 || num > den {
            return Err(bad());
        }
        if num == den {
            return Ok(Fraction::Full);
        }
        Ok(Fraction::Latest { num, den })
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fraction::Full => f.write_str("full"),
            Fraction::Latest { num, den } => write!(f, "{num}/{den}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub min_item_support: usize,
    pub min_session_len: usize,
    pub test_boundary_secs: i64,
    pub fraction: Fraction,
}

impl PreprocessConfig {
    /// Final day as test for Yoochoose, final week for Diginetica.
    pub fn for_dataset(dataset: Dataset) -> Self {
        PreprocessConfig {
            min_item_support: 5,
            min_session_len: 2,
            test_boundary_secs: match dataset {
                Dataset::Diginetica => WEEK_SECS,
                _ => DAY_SECS,
            },
            fraction: Fraction::Full,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub train: Vec<Session>,
    pub test: Vec<Session>,
    pub vocab: Vocabulary,
    pub train_stats: CorpusStats,
    pub test_stats: CorpusStats,
}

/// parse → filter → chronological split → fraction → vocabulary.
pub fn preprocess(rows: Vec<RawRow>, rejects: &mut RejectLog, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let (sessions, raw_vocab) = parse_events(rows, rejects);
    let sessions = filter_corpus(sessions, cfg.min_item_support, cfg.min_session_len)?;
    let (train, test) = split_chronological(sessions, cfg.test_boundary_secs)?;
    let train = cfg.fraction.apply(train);
    let vocab = Vocabulary::from_sessions(&train, &raw_vocab);
    let train = vocab.remap(train, &raw_vocab, cfg.min_session_len);
    let test = vocab.remap(test, &raw_vocab, 2);
    if test.is_empty() {
        return Err(StarError::EmptyCorpus("removing test items unseen in training"));
    }
    let train = sort_canonical(train);
    let test = sort_canonical(test);
    Ok(Preprocessed {
        train_stats: CorpusStats::compute(&train),
        test_stats: CorpusStats::compute(&test),
        train,
        test,
        vocab,
    })
}

fn sort_canonical(mut sessions: Vec<Session>) -> Vec<Session> {
    sessions.sort_by(|a, b| super::compare_session_ids(&a.id, &b.id));
    sessions
}
