//! Event-log parsing, revisit removal and temporal train/test splitting.
//!
//! Input is tab-separated text, one event per line: `user \t timestamp \t item`,
//! or `user \t item` for corpora without timestamps. Blank lines and lines
//! starting with `#` are skipped. String identifiers are mapped to dense
//! integer ids in first-appearance order; everything downstream of this module
//! works on ids only.

use std::io::{BufRead, Write};

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A raw event at the I/O boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub user: String,
    pub item: String,
    /// Seconds since the epoch; `None` for timestampless corpora.
    pub timestamp: Option<f64>,
}

/// One visit of a user to an item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub item: u32,
    /// Timestamp in seconds. Always 0 in timestampless logs.
    pub time: f64,
}

/// Bijection between external string ids and dense integer ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Dictionary {
    names: IndexSet<String>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `name`, assigning the next free id if it is new.
    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(idx) = self.names.get_index_of(name) {
            return idx as u32;
        }
        let (idx, _) = self.names.insert_full(name.to_owned());
        idx as u32
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.names.get_index_of(name).map(|i| i as u32)
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get_index(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

impl From<Vec<String>> for Dictionary {
    fn from(names: Vec<String>) -> Self {
        Self {
            names: names.into_iter().collect(),
        }
    }
}

impl From<Dictionary> for Vec<String> {
    fn from(dict: Dictionary) -> Self {
        dict.names.into_iter().collect()
    }
}

/// Column layout of a corpus file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Format {
    pub timestamps: bool,
}

impl Default for Format {
    fn default() -> Self {
        Self { timestamps: true }
    }
}

/// Per-user, time-ordered visit sequences plus the id dictionaries.
///
/// `sequences` is indexed by dense user id and always has one entry per user
/// in the dictionary; a user absent from one side of a split simply has an
/// empty sequence there, which keeps ids stable across train and test logs.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub users: Dictionary,
    pub items: Dictionary,
    pub sequences: Vec<Vec<Visit>>,
    pub timestamped: bool,
}

impl EventLog {
    pub fn empty(timestamped: bool) -> Self {
        Self {
            users: Dictionary::new(),
            items: Dictionary::new(),
            sequences: Vec::new(),
            timestamped,
        }
    }

    /// Builds a log from raw events, grouping by user and stably sorting
    /// each group by timestamp.
    pub fn from_events<I>(events: I, timestamped: bool) -> Result<Self>
    where
        I: IntoIterator<Item = Event>,
    {
        let mut log = Self::empty(timestamped);
        for (idx, ev) in events.into_iter().enumerate() {
            log.push(&ev.user, &ev.item, ev.timestamp)
                .map_err(|msg| Error::parse(idx + 1, msg))?;
        }
        log.sort_sequences();
        Ok(log)
    }

    fn push(&mut self, user: &str, item: &str, timestamp: Option<f64>) -> std::result::Result<(), String> {
        let time = match (self.timestamped, timestamp) {
            (true, Some(t)) if t.is_finite() && t >= 0.0 => t,
            (true, Some(t)) => return Err(format!("timestamp {t} is not a finite non-negative number")),
            (true, None) => return Err("missing timestamp".into()),
            (false, _) => 0.0,
        };
        let u = self.users.intern(user) as usize;
        let i = self.items.intern(item);
        if u == self.sequences.len() {
            self.sequences.push(Vec::new());
        }
        self.sequences[u].push(Visit { item: i, time });
        Ok(())
    }

    fn sort_sequences(&mut self) {
        if self.timestamped {
            for seq in &mut self.sequences {
                // stable: equal timestamps keep input order
                seq.sort_by(|a, b| a.time.total_cmp(&b.time));
            }
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_events(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Number of consecutive-visit pairs over all users.
    pub fn n_transitions(&self) -> usize {
        self.sequences.iter().map(|s| s.len().saturating_sub(1)).sum()
    }

    /// All `(user, from, to)` consecutive pairs, user by user in time order.
    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        self.sequences.iter().enumerate().flat_map(|(u, seq)| {
            seq.windows(2).map(move |w| Transition {
                user: u as u32,
                src: w[0].item,
                dst: w[1].item,
                time: w[1].time,
                gap: w[1].time - w[0].time,
            })
        })
    }

    /// Writes the log in the same TSV layout `parse_events` reads.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (u, seq) in self.sequences.iter().enumerate() {
            let user = self.users.name(u as u32).unwrap_or_default();
            for v in seq {
                let item = self.items.name(v.item).unwrap_or_default();
                if self.timestamped {
                    writeln!(out, "{user}\t{}\t{item}", v.time)?;
                } else {
                    writeln!(out, "{user}\t{item}")?;
                }
            }
        }
        Ok(())
    }
}

/// A single observed move between two items.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub user: u32,
    pub src: u32,
    pub dst: u32,
    /// Timestamp of arrival at `dst`.
    pub time: f64,
    /// Inter-event time between the two visits.
    pub gap: f64,
}

/// Parses a TSV event stream.
pub fn parse_events<R: BufRead>(reader: R, format: Format) -> Result<EventLog> {
    let mut log = EventLog::empty(format.timestamps);
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let (user, item, timestamp) = match (format.timestamps, fields.as_slice()) {
            (true, [user, ts, item]) => {
                let ts: f64 = ts
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("bad timestamp `{ts}`")))?;
                (*user, *item, Some(ts))
            }
            (false, [user, item]) => (*user, *item, None),
            (true, _) => {
                return Err(Error::parse(
                    lineno,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ))
            }
            (false, _) => {
                return Err(Error::parse(
                    lineno,
                    format!("expected 2 tab-separated fields, found {}", fields.len()),
                ))
            }
        };
        if user.is_empty() || item.is_empty() {
            return Err(Error::parse(lineno, "empty user or item id"));
        }
        log.push(user, item, timestamp)
            .map_err(|msg| Error::parse(lineno, msg))?;
    }
    log.sort_sequences();
    Ok(log)
}

/// Collapses runs of consecutive visits to the same item into their first
/// visit, so that no user ever transitions from an item to itself.
pub fn dedup_revisits(log: &EventLog) -> EventLog {
    let sequences = log
        .sequences
        .iter()
        .map(|seq| {
            let mut out: Vec<Visit> = Vec::with_capacity(seq.len());
            for v in seq {
                if out.last().map(|last| last.item) != Some(v.item) {
                    out.push(*v);
                }
            }
            out
        })
        .collect();
    EventLog {
        users: log.users.clone(),
        items: log.items.clone(),
        sequences,
        timestamped: log.timestamped,
    }
}

/// Splits a log at a global timestamp so that the earliest
/// `ceil(fraction * T)` of the `T` transitions (plus any tied with the last of
/// them) land in the training log and the rest in the test log.
///
/// The visit that ends a user's last training transition also starts their
/// first test transition, so every transition lands on exactly one side.
pub fn temporal_split(log: &EventLog, fraction: f64) -> Result<(EventLog, EventLog)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    if !log.timestamped {
        return Err(Error::Config(
            "temporal split requires a timestamped corpus".into(),
        ));
    }
    let mut times: Vec<f64> = log.transitions().map(|t| t.time).collect();
    times.sort_by(f64::total_cmp);
    let cut = if times.is_empty() {
        f64::INFINITY
    } else {
        let keep = ((fraction * times.len() as f64).ceil() as usize).clamp(1, times.len());
        times[keep - 1]
    };

    let mut train = Vec::with_capacity(log.sequences.len());
    let mut test = Vec::with_capacity(log.sequences.len());
    for seq in &log.sequences {
        let n_train = seq.iter().skip(1).take_while(|v| v.time <= cut).count();
        match (seq.len(), n_train) {
            (0, _) => {
                train.push(Vec::new());
                test.push(Vec::new());
            }
            (1, _) => {
                if seq[0].time <= cut {
                    train.push(seq.clone());
                    test.push(Vec::new());
                } else {
                    train.push(Vec::new());
                    test.push(seq.clone());
                }
            }
            (_, 0) => {
                train.push(Vec::new());
                test.push(seq.clone());
            }
            (len, j) => {
                train.push(seq[..=j].to_vec());
                test.push(if j + 1 < len { seq[j..].to_vec() } else { Vec::new() });
            }
        }
    }
    let side = |sequences| EventLog {
        users: log.users.clone(),
        items: log.items.clone(),
        sequences,
        timestamped: true,
    };
    Ok((side(train), side(test)))
}
