//! Round-based simulator for Nakamoto and Stubborn Nakamoto consensus.
//!
//! The engine drives honest node state machines, a synchronous network and
//! an adversary over a shared block store and emits JSONL traces. Verifiers
//! check consistency, liveness and the stochastic mining bounds on traces.

pub mod adversary;
pub mod chain;
pub mod economics;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod mining;
pub mod network;
pub mod node;
pub mod presets;
pub mod recovery;
pub mod scenario;
pub mod trace;
pub mod verify;

pub use chain::{Block, BlockId, BlockStore, Chain, Log, Miner, NodeId, Round, Transaction, TxId};
pub use economics::{CommunityResponse, CostReport, EconParams, Usd};
pub use error::{Error, Result};
pub use network::{Msg, NetParams, Network, ADVERSARY};
pub use node::{NodeView, Protocol, ProtocolParams, Role};
pub use trace::{NodeSnapshot, RunTrace, TraceEvent, TraceHeader};
pub use verify::{Verdict, Witness};
