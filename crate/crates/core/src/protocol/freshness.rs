//! Message-freshness machinery: retention-pruned timestamp tables for the
//! table-based protocols and the bounded validation window that replaces
//! them in ISNAP.
//!
//! Tables and windows belong to a node, not to a single handshake: replay
//! detection only works if the records survive across sessions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::term::NodeId;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Per-node table of `(sender, timestamp)` records with day-based retention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampTable {
    records: BTreeSet<(NodeId, i64)>,
    /// Days each record is retained before pruning.
    pub retention_days: u32,
    /// Bytes of static memory one record occupies.
    pub bytes_per_record: u32,
    /// Receiver-local staleness bound for incoming stamps, seconds.
    pub tolerance_secs: i64,
}

impl TimestampTable {
    pub fn new(retention_days: u32, bytes_per_record: u32, tolerance_secs: i64) -> Self {
        TimestampTable {
            records: BTreeSet::new(),
            retention_days,
            bytes_per_record,
            tolerance_secs,
        }
    }

    pub fn contains(&self, sender: &NodeId, ts: i64) -> bool {
        self.records.contains(&(sender.clone(), ts))
    }

    pub fn record(&mut self, sender: NodeId, ts: i64) {
        self.records.insert((sender, ts));
    }

    /// Drop records strictly older than the retention period, judged by the
    /// owning node's local clock.
    pub fn prune(&mut self, local_now: i64) {
        let cutoff = local_now - self.retention_days as i64 * SECONDS_PER_DAY;
        self.records.retain(|(_, ts)| *ts >= cutoff);
    }

    pub fn live_records(&self) -> usize {
        self.records.len()
    }

    /// Static memory the live records occupy.
    pub fn memory_bytes(&self) -> u64 {
        self.bytes_per_record as u64 * self.records.len() as u64
    }

    /// Prune to retention, then report occupancy.
    pub fn memory_bytes_at(&mut self, local_now: i64) -> u64 {
        self.prune(local_now);
        self.memory_bytes()
    }
}

/// Outcome of checking one timestamp against a validation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowCheck {
    Accept,
    StaleTimestamp,
    DuplicateInWindow,
}

/// Window-based timestamp validation: a message is fresh iff its timestamp
/// lies within `width_secs` of the receiver clock and the `(sender, ts)`
/// pair has not been seen inside the window. The duplicate cache only ever
/// holds entries younger than the window, so its size is bounded by the
/// traffic of the last `width_secs` seconds no matter how long the node
/// stays up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationWindow {
    pub width_secs: i64,
    cache: BTreeSet<(NodeId, i64)>,
}

impl ValidationWindow {
    pub fn new(width_secs: i64) -> Self {
        ValidationWindow {
            width_secs,
            cache: BTreeSet::new(),
        }
    }

    /// Check and, on acceptance, remember `(sender, ts)` until it ages out.
    pub fn validate(&mut self, sender: &NodeId, ts: i64, local_now: i64) -> WindowCheck {
        self.prune(local_now);
        if (local_now - ts).abs() > self.width_secs {
            return WindowCheck::StaleTimestamp;
        }
        if self.cache.contains(&(sender.clone(), ts)) {
            return WindowCheck::DuplicateInWindow;
        }
        self.cache.insert((sender.clone(), ts));
        WindowCheck::Accept
    }

    pub fn prune(&mut self, local_now: i64) {
        let w = self.width_secs;
        self.cache.retain(|(_, ts)| local_now - *ts <= w);
    }

    pub fn cached_entries(&self) -> usize {
        self.cache.len()
    }
}

/// The freshness state a node carries for one protocol: nothing for the
/// nonce-only protocols, a retention table for the table-based ones, a
/// validation window for ISNAP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Freshness {
    None,
    Table(TimestampTable),
    Window(ValidationWindow),
}

impl Freshness {
    pub fn table(&self) -> Option<&TimestampTable> {
        match self {
            Freshness::Table(t) => Some(t),
            _ => None,
        }
    }

    pub fn table_mut(&mut self) -> Option<&mut TimestampTable> {
        match self {
            Freshness::Table(t) => Some(t),
            _ => None,
        }
    }

    pub fn window(&self) -> Option<&ValidationWindow> {
        match self {
            Freshness::Window(w) => Some(w),
            _ => None,
        }
    }

    pub fn window_mut(&mut self) -> Option<&mut ValidationWindow> {
        match self {
            Freshness::Window(w) => Some(w),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ss() -> NodeId {
        NodeId::from("ss1")
    }

    #[test]
    fn empty_table_occupies_nothing() {
        let t = TimestampTable::new(15, 4, 2);
        assert_eq!(t.memory_bytes(), 0);
    }

    #[test]
    fn fifteen_hundred_records_at_four_bytes_is_6000() {
        let mut t = TimestampTable::new(15, 4, 2);
        for i in 0..1500 {
            t.record(ss(), i);
        }
        assert_eq!(t.live_records(), 1500);
        assert_eq!(t.memory_bytes(), 6000);
    }

    #[test]
    fn prune_then_count() {
        // 10 records, 3 of them older than the retention period.
        let mut t = TimestampTable::new(15, 4, 2);
        let now = 100 * SECONDS_PER_DAY;
        let cutoff = now - 15 * SECONDS_PER_DAY;
        for i in 0..3 {
            t.record(ss(), cutoff - 1 - i); // strictly older than retention
        }
        for i in 0..7 {
            t.record(ss(), cutoff + i); // at or inside retention
        }
        assert_eq!(t.live_records(), 10);
        assert_eq!(t.memory_bytes_at(now), 7 * 4);
        assert_eq!(t.live_records(), 7);
    }

    #[test]
    fn record_then_contains() {
        let mut t = TimestampTable::new(15, 4, 2);
        assert!(!t.contains(&ss(), 42));
        t.record(ss(), 42);
        assert!(t.contains(&ss(), 42));
        // same stamp from another sender is a distinct record
        assert!(!t.contains(&NodeId::from("ss2"), 42));
    }

    #[test]
    fn table_growth_matches_distinct_messages() {
        let mut t = TimestampTable::new(15, 4, 2);
        for i in 0..250 {
            t.record(ss(), 1000 + i);
        }
        t.prune(1000 + 250);
        assert_eq!(t.live_records(), 250);
    }

    #[test]
    fn fresh_message_is_accepted() {
        let mut w = ValidationWindow::new(1);
        assert_eq!(w.validate(&ss(), 100, 100), WindowCheck::Accept);
    }

    #[test]
    fn boundary_is_inclusive_and_one_past_is_stale() {
        let mut w = ValidationWindow::new(5);
        assert_eq!(w.validate(&ss(), 95, 100), WindowCheck::Accept);
        assert_eq!(w.validate(&ss(), 94, 100), WindowCheck::StaleTimestamp);
        // future stamps are held to the same bound
        assert_eq!(w.validate(&ss(), 105, 100), WindowCheck::Accept);
        assert_eq!(w.validate(&ss(), 106, 100), WindowCheck::StaleTimestamp);
    }

    #[test]
    fn duplicate_inside_window_is_rejected() {
        let mut w = ValidationWindow::new(5);
        assert_eq!(w.validate(&ss(), 100, 100), WindowCheck::Accept);
        assert_eq!(w.validate(&ss(), 100, 102), WindowCheck::DuplicateInWindow);
    }

    #[test]
    fn cache_never_outlives_the_window() {
        let mut w = ValidationWindow::new(5);
        for ts in 0..100 {
            w.validate(&ss(), ts, ts);
            assert!(w.cached_entries() <= 6); // entries aged 0..=5
        }
        // after the window passes, the same stamp is stale, not duplicate
        assert_eq!(w.validate(&ss(), 100, 100), WindowCheck::Accept);
        assert_eq!(w.validate(&ss(), 100, 106), WindowCheck::StaleTimestamp);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            /// Feed one window an arbitrary time-ordered stream: the stale
            /// bound is exact, duplicates are exactly re-presentations
            /// inside the window, and the cache never holds anything older
            /// than the window.
            #[test]
            fn window_decisions_match_a_replayed_model(
                width in 0i64..30,
                steps in proptest::collection::vec((0i64..20, 0u8..3, -40i64..40), 1..120),
            ) {
                let mut w = ValidationWindow::new(width);
                let mut model: Vec<(NodeId, i64)> = Vec::new();
                let mut now = 0i64;
                for (advance, sender, ts_offset) in steps {
                    now += advance;
                    let sender = NodeId::from(["a", "b", "c"][sender as usize]);
                    let ts = now + ts_offset;
                    let got = w.validate(&sender, ts, now);
                    let fresh = (now - ts).abs() <= width;
                    let dup = model
                        .iter()
                        .any(|(s, t)| *s == sender && *t == ts && now - *t <= width);
                    let want = if !fresh {
                        WindowCheck::StaleTimestamp
                    } else if dup {
                        WindowCheck::DuplicateInWindow
                    } else {
                        WindowCheck::Accept
                    };
                    prop_assert_eq!(got, want);
                    if want == WindowCheck::Accept {
                        model.push((sender, ts));
                    }
                    prop_assert!(w.cached_entries()
                        <= model.iter().filter(|(_, t)| now - *t <= width).count());
                }
            }

            /// Tables prune strictly by age and bill delta bytes per record.
            #[test]
            fn table_memory_is_delta_times_live_records(
                delta in 1u32..16,
                rho in 1u32..10,
                stamps in proptest::collection::vec(0i64..2_000_000, 0..80),
            ) {
                let mut t = TimestampTable::new(rho, delta, 2);
                for ts in &stamps {
                    t.record(NodeId::from("s"), *ts);
                }
                let now = 2_000_000;
                let cutoff = now - rho as i64 * SECONDS_PER_DAY;
                let live: std::collections::BTreeSet<i64> =
                    stamps.iter().copied().filter(|ts| *ts >= cutoff).collect();
                prop_assert_eq!(t.memory_bytes_at(now), delta as u64 * live.len() as u64);
            }
        }
    }
}
