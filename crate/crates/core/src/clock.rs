//! Per-node simulated clocks with configurable offset and linear drift.
//!
//! Timestamp freshness checks only work when the nodes agree on the time,
//! so skew is a first-class scenario input here: each node reads the global
//! simulation time through its own offset and drift rate, and a
//! resynchronization action pulls the offset back toward zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::term::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NodeClock {
    /// Fixed offset from simulation time, seconds.
    offset: f64,
    /// Drift rate in seconds per second of simulation time.
    drift: f64,
    /// Simulation time at which drift last started accumulating; a resync
    /// restarts accumulation from the moment it runs.
    drift_epoch: f64,
}

/// Clock state for every registered node, advanced by the event loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    sim_time: f64,
    nodes: BTreeMap<NodeId, NodeClock>,
}

impl Default for ClockState {
    fn default() -> Self {
        ClockState {
            sim_time: 0.0,
            nodes: BTreeMap::new(),
        }
    }
}

impl ClockState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, node: NodeId, offset: f64, drift: f64) {
        self.nodes.insert(
            node,
            NodeClock {
                offset,
                drift,
                drift_epoch: 0.0,
            },
        );
    }

    pub fn is_registered(&self, node: &NodeId) -> bool {
        self.nodes.contains_key(node)
    }

    /// Global simulation time, seconds.
    pub fn sim_time(&self) -> f64 {
        self.sim_time
    }

    /// Advance global time. Never moves backwards.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.sim_time {
            self.sim_time = t;
        }
    }

    /// What node `n`'s clock reads right now:
    /// `sim_time + offset(n) + drift(n) * (sim_time - drift_epoch(n))`.
    pub fn node_now(&self, n: &NodeId) -> Result<f64, ClockError> {
        let c = self
            .nodes
            .get(n)
            .ok_or_else(|| ClockError::UnknownNode(n.clone()))?;
        Ok(self.sim_time + c.offset + c.drift * (self.sim_time - c.drift_epoch))
    }

    /// Node-local wall clock truncated to whole epoch seconds; this is the
    /// value a node writes into a message timestamp field.
    pub fn node_timestamp(&self, n: &NodeId) -> Result<i64, ClockError> {
        Ok(self.node_now(n)?.floor() as i64)
    }

    /// Absolute clock disagreement between two nodes, seconds.
    pub fn skew(&self, a: &NodeId, b: &NodeId) -> Result<f64, ClockError> {
        Ok((self.node_now(a)? - self.node_now(b)?).abs())
    }

    /// Resynchronize node `n`: clamp its offset into `[-residual, residual]`
    /// preserving sign, and restart drift accumulation from now. Drift rate
    /// itself is a hardware property and stays.
    pub fn resync(&mut self, n: &NodeId, residual: f64) -> Result<(), ClockError> {
        let now = self.sim_time;
        let c = self
            .nodes
            .get_mut(n)
            .ok_or_else(|| ClockError::UnknownNode(n.clone()))?;
        c.offset = c.offset.clamp(-residual, residual);
        c.drift_epoch = now;
        Ok(())
    }
}

/// When and how well nodes resynchronize their clocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncPolicy {
    /// Seconds between resynchronizations; `None` means never.
    pub resync_interval: Option<f64>,
    /// Offset magnitude that may remain after a resync.
    pub post_resync_residual: f64,
}

impl Default for SyncPolicy {
    fn default() -> Self {
        SyncPolicy {
            resync_interval: None,
            post_resync_residual: 0.0,
        }
    }
}

impl SyncPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.post_resync_residual < 0.0 {
            return Err("post_resync_residual must be >= 0".into());
        }
        if let Some(iv) = self.resync_interval {
            if iv <= 0.0 {
                return Err("resync_interval must be > 0 when set".into());
            }
        }
        Ok(())
    }
}
