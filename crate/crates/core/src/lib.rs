//! Deterministic simulator for the IEEE 802.16 authorization frameworks
//! (PKM v1, PKM v2, TSA, HA, ISNAP), an active symbolic adversary running
//! the classic attack playbook against them, and analytical models of the
//! storage, computation and transmission overheads the hardened variants
//! pay for their defenses.
//!
//! Cryptography here is perfect and symbolic: attacks succeed or fail on
//! message structure, freshness and key possession, never on cryptanalysis.
//! Every simulation is a pure function of its configuration and seed.

pub mod adversary;
pub mod clock;
pub mod harness;
pub mod netsim;
pub mod overhead;
pub mod protocol;
pub mod term;

pub use adversary::{AttackKind, AttackOutcome, Knowledge, Verdict};
pub use clock::{ClockState, SyncPolicy};
pub use harness::{expected_matrix, run_matrix, AttackMatrix, ScenarioConfig};
pub use netsim::{SimWorld, WorldConfig};
pub use overhead::{
    overhead_report, storage_overhead, transmission_report, validation_cost, ComputeParams,
    OverheadReport, StorageParams,
};
pub use protocol::{Outcome, ProtocolId, RejectReason, Role, SessionConfig, SessionState};
pub use term::{KeyKind, KeyRef, NodeId, SizeModel, Term};
