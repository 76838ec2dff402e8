//! Scenario configuration and the attack-matrix runner.
//!
//! A scenario is fully described by one JSON document; unknown keys are
//! rejected so typos fail fast. The matrix runner executes every attack
//! against every protocol and compares the verdict grid against the
//! reference grid compiled in below.

pub mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::attacks::{run_attack, AttackError, AttackParams, AttackRun};
use crate::adversary::{AttackKind, AttackOutcome, Verdict};
use crate::clock::SyncPolicy;
use crate::netsim::{OverloadPolicy, SimWorld, WorldConfig};
use crate::overhead::{ComputeParams, StorageParams};
use crate::protocol::{FreshnessParams, ProtocolId};
use crate::term::{NodeId, SizeModel};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid scenario file {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

/// Every knob of a simulation scenario. Defaults reproduce the reference
/// attack matrix and overhead figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Honest-run repetitions for sweep-style commands.
    pub trials: u32,
    /// Protocols to cover; `None` means all five.
    pub protocols: Option<Vec<ProtocolId>>,
    /// Attacks to cover; `None` means the full playbook.
    pub attacks: Option<Vec<AttackKind>>,
    /// Replayed trigger copies (flood volume).
    pub flood_volume: u64,
    pub flood_interval: f64,
    /// Legitimate joins under denial of service.
    pub legit_joins: u64,
    pub join_interval: f64,
    /// Suppress-replay forwarding delay, seconds.
    pub adversary_delay: f64,
    /// Receiver clock lag for suppress-replay; `None` picks the reference
    /// setup per protocol.
    pub receiver_lag: Option<f64>,
    /// Adversary store-and-forward handling time, seconds.
    pub relay_handling: f64,
    pub dos_budget: usize,
    pub dos_threshold: f64,
    pub flood_threshold: f64,
    /// Per-node clock offsets for honest-trace runs, seconds.
    pub clock_offsets: BTreeMap<String, f64>,
    /// Per-node clock drift rates, seconds per second.
    pub clock_drifts: BTreeMap<String, f64>,
    /// Freshness window and staleness tolerance, seconds.
    pub window_secs: i64,
    /// Bytes per stored timestamp.
    pub table_delta: u32,
    /// Table retention, days.
    pub table_rho: u32,
    /// Messages validated per day (storage model).
    pub psi: u64,
    /// Machine cycles per second (compute model).
    pub sigma: f64,
    /// Subscribers per base station (fleet aggregate).
    pub fleet: u64,
    pub latency: f64,
    pub bs_processing: f64,
    pub session_ttl: f64,
    pub resync_interval: Option<f64>,
    pub post_resync_residual: f64,
    /// Fate of triggers arriving at a saturated station.
    pub overload: OverloadPolicy,
    /// Default report directory; the command line may override it.
    pub out_dir: Option<String>,
    pub size_model: SizeModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let attack = AttackParams::default();
        ScenarioConfig {
            seed: 1,
            trials: 100,
            protocols: None,
            attacks: None,
            flood_volume: attack.flood_volume,
            flood_interval: attack.flood_interval,
            legit_joins: attack.legit_joins,
            join_interval: attack.join_interval,
            adversary_delay: attack.suppress_delay,
            receiver_lag: None,
            relay_handling: attack.relay_handling,
            dos_budget: attack.dos_budget,
            dos_threshold: attack.dos_threshold,
            flood_threshold: attack.flood_threshold,
            clock_offsets: BTreeMap::new(),
            clock_drifts: BTreeMap::new(),
            window_secs: FreshnessParams::default().window_secs,
            table_delta: 4,
            table_rho: 15,
            psi: 100,
            sigma: 1e9,
            fleet: 64,
            latency: 1.0,
            bs_processing: 1.0,
            session_ttl: 10.0,
            resync_interval: None,
            post_resync_residual: 0.0,
            overload: OverloadPolicy::Drop,
            out_dir: None,
            size_model: SizeModel::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ScenarioConfig =
            serde_json::from_str(&text).map_err(|source| ScenarioError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.latency <= 0.0 || self.bs_processing < 0.0 || self.session_ttl <= 0.0 {
            return Err(ScenarioError::Invalid(
                "timing parameters must be positive".into(),
            ));
        }
        if self.window_secs < 0 {
            return Err(ScenarioError::Invalid("window must be non-negative".into()));
        }
        if self.sigma <= 0.0 {
            return Err(ScenarioError::Invalid("sigma must be positive".into()));
        }
        if let Some(ps) = &self.protocols {
            if ps.is_empty() {
                return Err(ScenarioError::Invalid("empty protocol list".into()));
            }
        }
        if let Some(at) = &self.attacks {
            if at.is_empty() {
                return Err(ScenarioError::Invalid("empty attack list".into()));
            }
        }
        self.attack_params()
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        SyncPolicy {
            resync_interval: self.resync_interval,
            post_resync_residual: self.post_resync_residual,
        }
        .validate()
        .map_err(ScenarioError::Invalid)
    }

    pub fn protocols(&self) -> Vec<ProtocolId> {
        self.protocols
            .clone()
            .unwrap_or_else(|| ProtocolId::ALL.to_vec())
    }

    pub fn attacks(&self) -> Vec<AttackKind> {
        self.attacks
            .clone()
            .unwrap_or_else(|| AttackKind::ALL.to_vec())
    }

    pub fn attack_params(&self) -> AttackParams {
        AttackParams {
            seed: self.seed,
            flood_volume: self.flood_volume,
            flood_interval: self.flood_interval,
            legit_joins: self.legit_joins,
            join_interval: self.join_interval,
            dos_budget: self.dos_budget,
            dos_threshold: self.dos_threshold,
            flood_threshold: self.flood_threshold,
            suppress_delay: self.adversary_delay,
            receiver_lag: self.receiver_lag,
            relay_handling: self.relay_handling,
        }
    }

    pub fn freshness(&self) -> FreshnessParams {
        FreshnessParams {
            retention_days: self.table_rho,
            bytes_per_timestamp: self.table_delta,
            window_secs: self.window_secs,
        }
    }

    pub fn world_config(&self, protocol: ProtocolId) -> WorldConfig {
        let mut w = WorldConfig::new(protocol, self.seed);
        w.latency = self.latency;
        w.bs_processing = self.bs_processing;
        w.session_ttl = self.session_ttl;
        w.freshness = self.freshness();
        w.overload = self.overload;
        w.size_model = self.size_model.clone();
        w.sync = SyncPolicy {
            resync_interval: self.resync_interval,
            post_resync_residual: self.post_resync_residual,
        };
        w
    }

    pub fn storage_params(&self) -> StorageParams {
        StorageParams {
            psi: self.psi,
            delta: self.table_delta as u64,
            rho: self.table_rho as u64,
            fleet: self.fleet,
        }
    }

    pub fn compute_params(&self) -> ComputeParams {
        ComputeParams {
            sigma: self.sigma,
            flops_per_compare: 2,
            entries: self.psi * self.table_rho as u64,
            literal_lambda: None,
        }
    }
}

/// Verdict class a matrix cell is expected to land in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedVerdict {
    Success,
    PartialSuccess,
    Failed,
    NotApplicable,
}

impl ExpectedVerdict {
    pub fn matches(self, v: &Verdict) -> bool {
        matches!(
            (self, v),
            (ExpectedVerdict::Success, Verdict::Success)
                | (ExpectedVerdict::PartialSuccess, Verdict::PartialSuccess)
                | (ExpectedVerdict::Failed, Verdict::Failed(_))
                | (ExpectedVerdict::NotApplicable, Verdict::NotApplicable)
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            ExpectedVerdict::Success => "success",
            ExpectedVerdict::PartialSuccess => "partial_success",
            ExpectedVerdict::Failed => "failed",
            ExpectedVerdict::NotApplicable => "not_applicable",
        }
    }
}

/// The reference verdict grid under the default scenario. This constant is
/// the single source of truth for `--check`; each cell names the mechanism
/// its verdict rests on.
pub fn expected_matrix() -> BTreeMap<(AttackKind, ProtocolId), ExpectedVerdict> {
    use AttackKind::*;
    use ExpectedVerdict::*;
    use ProtocolId::*;
    let mut m = BTreeMap::new();
    // trigger flooding: no protocol but the window-validated one can tell
    // a replayed presence announcement from a fresh one
    m.insert((WaterTorture, Pkmv1), Success); // trigger unauthenticated, unvalidated
    m.insert((WaterTorture, Pkmv2), Success); // same trigger as v1
    m.insert((WaterTorture, Tsa), Success); // stamp carried but unverifiable at the trigger
    m.insert((WaterTorture, Ha), Success); // trigger outside the stamped message set
    m.insert((WaterTorture, Isnap), Failed); // window rejects duplicates and stale stamps
                                             // denial of service follows the flood wherever it lands
    m.insert((Dos, Pkmv1), Success);
    m.insert((Dos, Pkmv2), Success);
    m.insert((Dos, Tsa), Success);
    m.insert((Dos, Ha), Success);
    m.insert((Dos, Isnap), Failed); // rejected floods never occupy cycles
                                    // full-session replay
    m.insert((MessageReplay, Pkmv1), Success); // nothing links or dates the messages
    m.insert((MessageReplay, Pkmv2), PartialSuccess); // nonce echo stops sessions, not triggers
    m.insert((MessageReplay, Tsa), Failed); // tables remember every stamp
    m.insert((MessageReplay, Ha), Failed); // tables plus nonce echoes
    m.insert((MessageReplay, Isnap), Failed); // replays are stale or duplicate
                                              // hardware-identity theft
    m.insert((IdentityTheft, Pkmv1), NotApplicable); // fixed network, identities registered once
    m.insert((IdentityTheft, Tsa), NotApplicable); // fixed-network variant of v1
    m.insert((IdentityTheft, Pkmv2), Success); // acknowledgement leaks the identity in clear
    m.insert((IdentityTheft, Ha), Success); // same acknowledgement layout
    m.insert((IdentityTheft, Isnap), Failed); // identity only ever travels encrypted
                                              // rogue base station
    m.insert((Impersonation, Pkmv1), Success); // subscriber never verifies the station
    m.insert((Impersonation, Tsa), Success); // stamps do not authenticate the sender
    m.insert((Impersonation, Pkmv2), Failed); // station certificate and signature checked
    m.insert((Impersonation, Ha), Failed);
    m.insert((Impersonation, Isnap), Failed);
    // man-in-the-middle relay of one live session
    m.insert((Interleaving, Pkmv1), NotApplicable); // plain impersonation already wins
    m.insert((Interleaving, Tsa), NotApplicable);
    m.insert((Interleaving, Pkmv2), Success); // nonces survive a verbatim relay
    m.insert((Interleaving, Ha), Failed); // relays go stale; signed stamps resist refresh
    m.insert((Interleaving, Isnap), Failed); // same, window-checked end to end
                                             // suppress and forward late, under the reference skew setup
    m.insert((SuppressReplay, Pkmv1), NotApplicable); // nothing is timestamped
    m.insert((SuppressReplay, Pkmv2), NotApplicable);
    m.insert((SuppressReplay, Tsa), Success); // lagging receiver sees the stale stamp as fresh
    m.insert((SuppressReplay, Ha), Success); // same skew masking
    m.insert((SuppressReplay, Isnap), Failed); // synchronized clocks catch the delay
    m
}

/// One cell of a finished matrix run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub attack: AttackKind,
    pub protocol: ProtocolId,
    pub outcome: AttackOutcome,
    pub expected: ExpectedVerdict,
    pub conforms: bool,
}

/// The complete verdict grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMatrix {
    pub seed: u64,
    pub cells: Vec<MatrixCell>,
}

impl AttackMatrix {
    pub fn get(&self, attack: AttackKind, protocol: ProtocolId) -> Option<&MatrixCell> {
        self.cells
            .iter()
            .find(|c| c.attack == attack && c.protocol == protocol)
    }

    /// Complete means one cell per requested (attack, protocol) pair.
    pub fn is_complete_for(&self, attacks: &[AttackKind], protocols: &[ProtocolId]) -> bool {
        attacks
            .iter()
            .all(|a| protocols.iter().all(|p| self.get(*a, *p).is_some()))
    }

    pub fn conforms(&self) -> bool {
        self.cells.iter().all(|c| c.conforms)
    }

    pub fn mismatches(&self) -> Vec<&MatrixCell> {
        self.cells.iter().filter(|c| !c.conforms).collect()
    }
}

impl fmt::Display for AttackMatrix {
    /// Fixed-width grid, attacks down the side, protocols across.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let protocols: Vec<ProtocolId> = ProtocolId::ALL
            .iter()
            .copied()
            .filter(|p| self.cells.iter().any(|c| c.protocol == *p))
            .collect();
        write!(f, "{:<16}", "attack")?;
        for p in &protocols {
            write!(f, " {:<16}", p.name())?;
        }
        writeln!(f)?;
        for a in AttackKind::ALL {
            if !self.cells.iter().any(|c| c.attack == a) {
                continue;
            }
            write!(f, "{:<16}", a.name())?;
            for p in &protocols {
                let text = match self.get(a, *p) {
                    Some(cell) => {
                        let mark = if cell.conforms { "" } else { "*" };
                        format!("{}{}", cell.outcome.verdict.label(), mark)
                    }
                    None => "-".to_string(),
                };
                write!(f, " {text:<16}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// A matrix run plus the per-cell worlds, kept for trace emission and
/// soundness audits.
pub struct MatrixRun {
    pub matrix: AttackMatrix,
    pub worlds: Vec<(AttackKind, ProtocolId, Vec<SimWorld>)>,
}

/// One honest join under this scenario: a single subscriber and base
/// station, clocks taken from the scenario's offset/drift tables.
pub fn honest_run(cfg: &ScenarioConfig, protocol: ProtocolId) -> Result<SimWorld, ScenarioError> {
    cfg.validate()?;
    let mut w = SimWorld::new(cfg.world_config(protocol));
    let bs = w.add_bs("bs1").expect("fresh world");
    let ss = w.add_ss("ss1");
    for node in [&bs, &ss] {
        let offset = cfg.clock_offsets.get(node.as_str()).copied().unwrap_or(0.0);
        let drift = cfg.clock_drifts.get(node.as_str()).copied().unwrap_or(0.0);
        if offset != 0.0 || drift != 0.0 {
            w.set_clock(node, offset, drift);
        }
    }
    w.schedule_join(&ss, 0.0);
    let horizon = 4.0 * cfg.latency + 2.0 * cfg.bs_processing + cfg.session_ttl + 2.0;
    w.run_until(horizon)
        .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
    Ok(w)
}

/// Run `cfg.trials` seeded honest joins and report how many completed
/// with both sides authorized on the same key.
pub fn honest_sweep(
    cfg: &ScenarioConfig,
    protocol: ProtocolId,
) -> Result<(u32, u32), ScenarioError> {
    let mut completed = 0;
    for trial in 0..cfg.trials {
        let mut per_trial = cfg.clone();
        per_trial.seed = cfg.seed.wrapping_add(trial as u64);
        let w = honest_run(&per_trial, protocol)?;
        let m = w.metrics();
        let bs_ok = w
            .sessions(&NodeId::from("bs1"))
            .iter()
            .any(|s| s.state.outcome.is_authorized());
        if m.completed_auths == 1 && m.rejected_requests == 0 && bs_ok {
            completed += 1;
        }
    }
    Ok((completed, cfg.trials))
}

/// Run the requested grid. Simulation faults surface as `error` verdicts
/// in the affected cell, never as a counterfeit `failed`.
pub fn run_matrix(cfg: &ScenarioConfig) -> Result<MatrixRun, ScenarioError> {
    cfg.validate()?;
    let expected = expected_matrix();
    let params = cfg.attack_params();
    let mut cells = Vec::new();
    let mut worlds = Vec::new();
    for attack in cfg.attacks() {
        for protocol in cfg.protocols() {
            let (outcome, cell_worlds) = match run_attack(attack, protocol, &params) {
                Ok(AttackRun { outcome, worlds }) => (outcome, worlds),
                Err(AttackError::Config(msg)) => {
                    return Err(ScenarioError::Invalid(msg));
                }
                Err(AttackError::Sim(e)) => (
                    AttackOutcome {
                        attack,
                        protocol,
                        verdict: Verdict::Error(e.to_string()),
                        metrics: BTreeMap::new(),
                    },
                    Vec::new(),
                ),
            };
            let want = expected[&(attack, protocol)];
            cells.push(MatrixCell {
                attack,
                protocol,
                conforms: want.matches(&outcome.verdict),
                expected: want,
                outcome,
            });
            worlds.push((attack, protocol, cell_worlds));
        }
    }
    Ok(MatrixRun {
        matrix: AttackMatrix {
            seed: cfg.seed,
            cells,
        },
        worlds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_reproduces_the_reference_grid() {
        let cfg = ScenarioConfig::default();
        let run = run_matrix(&cfg).expect("matrix runs");
        assert!(run
            .matrix
            .is_complete_for(&AttackKind::ALL, &ProtocolId::ALL));
        assert_eq!(run.matrix.cells.len(), 35);
        for cell in &run.matrix.cells {
            assert!(
                cell.conforms,
                "{}/{}: expected {}, got {}",
                cell.attack,
                cell.protocol,
                cell.expected.label(),
                cell.outcome.verdict
            );
        }
    }

    #[test]
    fn single_protocol_column_is_consistent_with_the_full_grid() {
        let cfg = ScenarioConfig {
            protocols: Some(vec![ProtocolId::Isnap]),
            ..ScenarioConfig::default()
        };
        let column = run_matrix(&cfg).unwrap();
        assert_eq!(column.matrix.cells.len(), 7);
        let full = run_matrix(&ScenarioConfig::default()).unwrap();
        for cell in &column.matrix.cells {
            let full_cell = full.matrix.get(cell.attack, cell.protocol).unwrap();
            assert!(
                cell.outcome.verdict.same_class(&full_cell.outcome.verdict),
                "{}: column and grid disagree",
                cell.attack
            );
        }
    }

    #[test]
    fn masking_skew_flips_the_window_suppress_cell() {
        let base = ScenarioConfig::default();
        let cfg = ScenarioConfig {
            protocols: Some(vec![ProtocolId::Isnap]),
            attacks: Some(vec![AttackKind::SuppressReplay]),
            receiver_lag: Some(base.adversary_delay - base.window_secs as f64),
            ..base
        };
        let run = run_matrix(&cfg).unwrap();
        let cell = run
            .matrix
            .get(AttackKind::SuppressReplay, ProtocolId::Isnap)
            .unwrap();
        assert_eq!(cell.outcome.verdict, Verdict::Success);
        assert!(
            !cell.conforms,
            "deviation from the reference grid is reported"
        );
    }

    #[test]
    fn unknown_scenario_keys_are_rejected() {
        let err = serde_json::from_str::<ScenarioConfig>(r#"{ "flood_volum": 3 }"#);
        assert!(err.is_err());
    }

    #[test]
    fn scenario_validation_catches_nonsense() {
        let cfg = ScenarioConfig {
            adversary_delay: 0.0,
            ..ScenarioConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ScenarioConfig {
            protocols: Some(vec![]),
            ..ScenarioConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn matrix_runs_are_deterministic() {
        let cfg = ScenarioConfig::default();
        let a = run_matrix(&cfg).unwrap();
        let b = run_matrix(&cfg).unwrap();
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn grid_rendering_is_complete() {
        let run = run_matrix(&ScenarioConfig::default()).unwrap();
        let text = run.matrix.to_string();
        for a in AttackKind::ALL {
            assert!(text.contains(a.name()));
        }
        for p in ProtocolId::ALL {
            assert!(text.contains(p.name()));
        }
    }
}
