use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate};

use crate::error::{Result, StarError};

/// Supported raw click-log layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    /// `session_id,timestamp_iso8601,item_id,category`
    Yoochoose,
    /// `sessionId;userId;itemId;timeframe;eventdate` with a header line.
    Diginetica,
    /// `session_id<TAB>item<TAB>epoch_seconds`
    Canonical,
}

impl FromStr for Dataset {
    type Err = StarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yoochoose" => Ok(Dataset::Yoochoose),
            "diginetica" => Ok(Dataset::Diginetica),
            "canonical" => Ok(Dataset::Canonical),
            other => Err(StarError::InvalidArgument(format!("unknown dataset `{other}`"))),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::Yoochoose => "yoochoose",
            Dataset::Diginetica => "diginetica",
            Dataset::Canonical => "canonical",
        })
    }
}

/// One click before grouping; `timestamp_ms` keeps sub-second order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRow {
    pub line: usize,
    pub session_id: String,
    pub item: String,
    pub timestamp_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    FieldCount,
    EmptyField,
    BadTimestamp,
    NegativeTimestamp,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::FieldCount => "field_count",
            RejectReason::EmptyField => "empty_field",
            RejectReason::BadTimestamp => "bad_timestamp",
            RejectReason::NegativeTimestamp => "negative_timestamp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reject {
    pub line: usize,
    pub reason: RejectReason,
    pub raw: String,
}

/// Every skipped input row, with the reason it was skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RejectLog {
    pub entries: Vec<Reject>,
}

impl RejectLog {
    pub fn push(&mut self, line: usize, reason: RejectReason, raw: impl Into<String>) {
        self.entries.push(Reject {
            line,
            reason,
            raw: raw.into(),
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One `line<TAB>reason<TAB>raw` record per rejected row.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.entries {
            writeln!(w, "{}\t{}\t{}", r.line, r.reason.code(), r.raw)?;
        }
        Ok(())
    }
}

fn non_empty(s: &str) -> std::result::Result<&str, RejectReason> {
    let s = s.trim();
    if s.is_empty() {
        Err(RejectReason::EmptyField)
    } else {
        Ok(s)
    }
}

/// Parses a single data line. Returns `Ok(None)` for lines that carry no
/// click (blank lines, the Diginetica header).
pub fn parse_line(dataset: Dataset, line_no: usize, line: &str) -> std::result::Result<Option<RawRow>, RejectReason> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() {
        return Ok(None);
    }
    let (session, item, ts) = match dataset {
        Dataset::Yoochoose => {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(RejectReason::FieldCount);
            }
            let ts = DateTime::parse_from_rfc3339(non_empty(f[1])?)
                .map_err(|_| RejectReason::BadTimestamp)?
                .timestamp_millis();
            (non_empty(f[0])?, non_empty(f[2])?, ts)
        }
        Dataset::Diginetica => {
            if line.starts_with("sessionId") {
                return Ok(None);
            }
            let f: Vec<&str> = line.split(';').collect();
            if f.len() != 5 {
                return Err(RejectReason::FieldCount);
            }
            let offset: i64 = non_empty(f[3])?.parse().map_err(|_| RejectReason::BadTimestamp)?;
            let day =
                NaiveDate::parse_from_str(non_empty(f[4])?, "%Y-%m-%d").map_err(|_| RejectReason::BadTimestamp)?;
            let midnight = day
                .and_hms_opt(0, 0, 0)
                .ok_or(RejectReason::BadTimestamp)?
                .and_utc()
                .timestamp_millis();
            (non_empty(f[0])?, non_empty(f[2])?, midnight + offset)
        }
        Dataset::Canonical => {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(RejectReason::FieldCount);
            }
            let secs: i64 = non_empty(f[2])?.parse().map_err(|_| RejectReason::BadTimestamp)?;
            (non_empty(f[0])?, non_empty(f[1])?, secs.saturating_mul(1000))
        }
    };
    Ok(Some(RawRow {
        line: line_no,
        session_id: session.to_string(),
        item: item.to_string(),
        timestamp_ms: ts,
    }))
}

/// Reads a raw click file, collecting malformed lines in the reject log.
pub fn read_raw_file(path: &Path, dataset: Dataset, rejects: &mut RejectLog) -> Result<Vec<RawRow>> {
    let file = File::open(path).map_err(|e| StarError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| StarError::io(path, e))?;
        match parse_line(dataset, i + 1, &line) {
            Ok(Some(row)) => rows.push(row),
            Ok(None) => {}
            Err(reason) => rejects.push(i + 1, reason, line),
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yoochoose_rows() {
        let row = parse_line(Dataset::Yoochoose, 1, "1,2014-04-07T10:51:09.277Z,214536502,0")
            .unwrap()
            .unwrap();
        assert_eq!(row.session_id, "1");
        assert_eq!(row.item, "214536502");
        assert_eq!(row.timestamp_ms, 1_396_867_869_277);
        assert_eq!(
            parse_line(Dataset::Yoochoose, 2, "1,not-a-date,5,0"),
            Err(RejectReason::BadTimestamp)
        );
        assert_eq!(
            parse_line(Dataset::Yoochoose, 3, "1,2,3"),
            Err(RejectReason::FieldCount)
        );
    }

    #[test]
    fn diginetica_rows() {
        assert_eq!(
            parse_line(Dataset::Diginetica, 1, "sessionId;userId;itemId;timeframe;eventdate"),
            Ok(None)
        );
        let row = parse_line(Dataset::Diginetica, 2, "1;NA;81766;526309;2016-05-09")
            .unwrap()
            .unwrap();
        assert_eq!(row.item, "81766");
        assert_eq!(row.timestamp_ms, 1_462_752_000_000 + 526_309);
        assert_eq!(
            parse_line(Dataset::Diginetica, 3, "1;NA;;5;2016-05-09"),
            Err(RejectReason::EmptyField)
        );
    }

    #[test]
    fn canonical_rows_and_reject_log() {
        let row = parse_line(Dataset::Canonical, 1, "s1\t7\t100").unwrap().unwrap();
        assert_eq!(row.timestamp_ms, 100_000);
        let mut log = RejectLog::default();
        log.push(4, RejectReason::FieldCount, "garbage");
        let mut out = Vec::new();
        log.write_to(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "4\tfield_count\tgarbage\n");
    }
}
