//! Sliding-window training tuples.
//!
//! Every run of `B + 1` consecutive visits of a user becomes one window: the
//! user, the `B + 1` items and the `B` inter-event times between them. Windows
//! overlap with stride 1. They are stored flat so that a corpus of millions of
//! windows is three contiguous arrays.

use serde::{Deserialize, Serialize};

use crate::corpus::EventLog;
use crate::error::{Error, Result};

/// Borrowed view of one training window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window<'a> {
    pub user: u32,
    /// `B + 1` item ids, oldest first.
    pub items: &'a [u32],
    /// `B` inter-event times, or empty for timestampless corpora.
    pub taus: &'a [f64],
}

impl Window<'_> {
    /// Largest inter-event time in the window, 0 when there are none.
    pub fn max_tau(&self) -> f64 {
        self.taus.iter().copied().fold(0.0, f64::max)
    }
}

/// The full set of training windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    b: usize,
    timestamped: bool,
    n_users: usize,
    n_items: usize,
    users: Vec<u32>,
    items: Vec<u32>,
    taus: Vec<f64>,
    per_user: Vec<u32>,
}

impl WindowSet {
    pub fn b(&self) -> usize {
        self.b
    }

    pub fn timestamped(&self) -> bool {
        self.timestamped
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Number of windows per user (`n_u`).
    pub fn per_user(&self) -> &[u32] {
        &self.per_user
    }

    pub fn get(&self, idx: usize) -> Window<'_> {
        let span = self.b + 1;
        let taus = if self.timestamped {
            &self.taus[idx * self.b..(idx + 1) * self.b]
        } else {
            &[]
        };
        Window {
            user: self.users[idx],
            items: &self.items[idx * span..(idx + 1) * span],
            taus,
        }
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = Window<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Drops the inter-event times, turning this into a timestampless set.
    pub fn without_taus(mut self) -> Self {
        self.timestamped = false;
        self.taus = Vec::new();
        self
    }

    /// Builds a window set directly from explicit windows. Mostly useful for
    /// constructing small hand-made corpora.
    pub fn from_parts(
        b: usize,
        n_users: usize,
        n_items: usize,
        windows: &[(u32, Vec<u32>, Vec<f64>)],
    ) -> Result<Self> {
        if b == 0 {
            return Err(Error::Config("window length B must be at least 1".into()));
        }
        let timestamped = windows.first().is_some_and(|w| !w.2.is_empty());
        let mut set = Self::with_capacity(b, timestamped, n_users, n_items, windows.len());
        for (user, items, taus) in windows {
            if items.len() != b + 1 || (timestamped && taus.len() != b) || (!timestamped && !taus.is_empty()) {
                return Err(Error::Config(format!(
                    "window needs {} items and {} taus",
                    b + 1,
                    if timestamped { b } else { 0 }
                )));
            }
            if *user as usize >= n_users || items.iter().any(|&i| i as usize >= n_items) {
                return Err(Error::Config("window id out of range".into()));
            }
            if items.windows(2).any(|p| p[0] == p[1]) {
                return Err(Error::Config("window contains a revisit".into()));
            }
            if taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return Err(Error::Config("inter-event times must be finite and non-negative".into()));
            }
            set.users.push(*user);
            set.items.extend_from_slice(items);
            set.taus.extend_from_slice(taus);
            set.per_user[*user as usize] += 1;
        }
        Ok(set)
    }

    /// The windows at `idxs`, in that order, over the same id spaces.
    pub fn select(&self, idxs: &[u32]) -> Self {
        let mut set = Self::with_capacity(self.b, self.timestamped, self.n_users, self.n_items, idxs.len());
        for &idx in idxs {
            let w = self.get(idx as usize);
            set.users.push(w.user);
            set.items.extend_from_slice(w.items);
            set.taus.extend_from_slice(w.taus);
            set.per_user[w.user as usize] += 1;
        }
        set
    }

    fn with_capacity(b: usize, timestamped: bool, n_users: usize, n_items: usize, cap: usize) -> Self {
        Self {
            b,
            timestamped,
            n_users,
            n_items,
            users: Vec::with_capacity(cap),
            items: Vec::with_capacity(cap * (b + 1)),
            taus: Vec::with_capacity(if timestamped { cap * b } else { 0 }),
            per_user: vec![0; n_users],
        }
    }
}

/// Slides a length-`B + 1` window over every user's visit sequence.
///
/// The log is expected to be revisit-free already (see
/// [`crate::corpus::dedup_revisits`]); windows spanning a revisit are rejected.
pub fn build_windows(log: &EventLog, b: usize) -> Result<WindowSet> {
    if b == 0 {
        return Err(Error::Config("window length B must be at least 1".into()));
    }
    let total: usize = log.sequences.iter().map(|s| s.len().saturating_sub(b)).sum();
    let mut set = WindowSet::with_capacity(b, log.timestamped, log.n_users(), log.n_items(), total);
    for (u, seq) in log.sequences.iter().enumerate() {
        if seq.windows(2).any(|p| p[0].item == p[1].item) {
            return Err(Error::Config(format!(
                "user `{}` has consecutive revisits; dedup the log first",
                log.users.name(u as u32).unwrap_or("?")
            )));
        }
        for span in seq.windows(b + 1) {
            set.users.push(u as u32);
            set.items.extend(span.iter().map(|v| v.item));
            if log.timestamped {
                // `max(0.0)` also normalizes -0.0
                set.taus.extend(span.windows(2).map(|p| (p[1].time - p[0].time).max(0.0)));
            }
        }
        set.per_user[u] = seq.len().saturating_sub(b) as u32;
    }
    Ok(set)
}
