//! Run traces as JSON lines.
//!
//! Line 1 is the header, then one line per event in round order, then one
//! snapshot line per node and a closing `end` line. Every event carries its
//! round; blocks are defined by their `MINE` line before any other line refers
//! to them. Verifiers consume only this format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::chain::{Block, BlockId, BlockStore, NodeId, Round, TxId};
use crate::error::{Error, Result};
use crate::network::Envelope;
use crate::node::{Protocol, Role};

pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: NodeId,
    pub role: Role,
    pub power: u32,
    pub join: Round,
    #[serde(default)]
    pub leave: Option<Round>,
    pub k: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub scenario: String,
    pub variant: String,
    pub seed: u64,
    pub trial: u64,
    pub protocol: Protocol,
    pub p: f64,
    pub delta: Round,
    pub k: u64,
    pub max_rounds: Round,
    /// Mining units held by the adversary, including corrupt nodes.
    pub adversary_power: u32,
    pub nodes: Vec<NodeInfo>,
}

impl TraceHeader {
    pub fn is_honest(&self, node: NodeId) -> bool {
        self.nodes.get(node.0 as usize).is_some_and(|n| n.role.is_honest())
    }

    pub fn honest_power(&self) -> u32 {
        self.nodes.iter().filter(|n| n.role == Role::Honest).map(|n| n.power).sum()
    }

    pub fn total_power(&self) -> u32 {
        self.honest_power() + self.adversary_power
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraceEvent {
    Mine { round: Round, block: Block },
    Send { round: Round, envelope: Envelope },
    Deliver { round: Round, envelope: Envelope },
    Confirm { round: Round, node: NodeId, block: BlockId },
    Finalize { round: Round, node: NodeId, block: BlockId, height: u64 },
    Halt { round: Round, node: NodeId },
    Ignore { round: Round, node: NodeId, block: BlockId },
    Join { round: Round, node: NodeId },
    Leave { round: Round, node: NodeId },
    Recovery { round: Round, chosen: NodeId, genesis: BlockId, parent: BlockId },
    TxIssue { round: Round, tx: TxId, node: NodeId },
}

impl TraceEvent {
    pub fn round(&self) -> Round {
        match self {
            TraceEvent::Mine { round, .. }
            | TraceEvent::Send { round, .. }
            | TraceEvent::Deliver { round, .. }
            | TraceEvent::Confirm { round, .. }
            | TraceEvent::Finalize { round, .. }
            | TraceEvent::Halt { round, .. }
            | TraceEvent::Ignore { round, .. }
            | TraceEvent::Join { round, .. }
            | TraceEvent::Leave { round, .. }
            | TraceEvent::Recovery { round, .. }
            | TraceEvent::TxIssue { round, .. } => *round,
        }
    }

    fn blocks(&self) -> Vec<BlockId> {
        match self {
            TraceEvent::Confirm { block, .. }
            | TraceEvent::Finalize { block, .. }
            | TraceEvent::Ignore { block, .. } => vec![*block],
            TraceEvent::Recovery { genesis, parent, .. } => vec![*genesis, *parent],
            _ => Vec::new(),
        }
    }
}

/// A node's state when the run ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub node: NodeId,
    pub active: bool,
    pub halted: Option<Round>,
    pub genesis: BlockId,
    pub tip: BlockId,
    pub finalized: Vec<BlockId>,
    pub first_confirmed: Vec<BlockId>,
    pub ignored: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(TraceHeader),
    Event(TraceEvent),
    Snapshot(NodeSnapshot),
    End { round: Round },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
    pub snapshots: Vec<NodeSnapshot>,
    /// Last simulated round.
    pub end_round: Round,
}

impl RunTrace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &Line::Header(self.header.clone()))?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, &Line::Event(e.clone()))?;
            w.write_all(b"\n")?;
        }
        for s in &self.snapshots {
            serde_json::to_writer(&mut w, &Line::Snapshot(s.clone()))?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut w, &Line::End { round: self.end_round })?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    /// Parses and validates a trace: round order, block definitions before
    /// use, and parent links.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut header = None;
        let mut events = Vec::new();
        let mut snapshots = Vec::new();
        let mut end_round = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let at = |m: String| Error::Trace(format!("line {}: {m}", i + 1));
            let parsed: Line = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
            if end_round.is_some() {
                return Err(at("content after end line".into()));
            }
            match parsed {
                Line::Header(h) => {
                    if header.is_some() || i != 0 {
                        return Err(at("header must be the first and only header line".into()));
                    }
                    if h.version != TRACE_VERSION {
                        return Err(at(format!("unsupported trace version {}", h.version)));
                    }
                    header = Some(h);
                }
                _ if header.is_none() => return Err(at("missing header".into())),
                Line::Event(e) => {
                    if !snapshots.is_empty() {
                        return Err(at("event after snapshots".into()));
                    }
                    events.push(e);
                }
                Line::Snapshot(s) => snapshots.push(s),
                Line::End { round } => end_round = Some(round),
            }
        }
        let header = header.ok_or_else(|| Error::Trace("empty trace".into()))?;
        let end_round = end_round.ok_or_else(|| Error::Trace("truncated trace: no end line".into()))?;
        let trace = RunTrace { header, events, snapshots, end_round };
        trace.store()?;
        Ok(trace)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::read_jsonl(text.as_bytes())
    }

    /// Rebuilds the block store from `MINE` lines, checking round order and
    /// that every referenced block is already defined.
    pub fn store(&self) -> Result<BlockStore> {
        let mut store = BlockStore::new();
        let mut last = 0;
        for (i, e) in self.events.iter().enumerate() {
            if e.round() < last {
                return Err(Error::Trace(format!("event {i} goes back in time to round {}", e.round())));
            }
            last = e.round();
            if let TraceEvent::Mine { block, .. } = e {
                store.insert_record(block.clone())?;
            }
            for b in e.blocks() {
                if store.get(b).is_none() {
                    return Err(Error::Trace(format!("event {i} refers to undefined block {b}")));
                }
            }
        }
        if last > self.end_round {
            return Err(Error::Trace(format!("events run past the end round {}", self.end_round)));
        }
        for s in &self.snapshots {
            for b in s.finalized.iter().chain(&s.first_confirmed).chain([&s.tip, &s.genesis]) {
                if store.get(*b).is_none() {
                    return Err(Error::Trace(format!("snapshot of {} refers to undefined block {b}", s.node)));
                }
            }
        }
        Ok(store)
    }

    pub fn snapshot(&self, node: NodeId) -> Option<&NodeSnapshot> {
        self.snapshots.iter().find(|s| s.node == node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Miner;

    fn sample() -> RunTrace {
        let header = TraceHeader {
            version: TRACE_VERSION,
            scenario: "t".into(),
            variant: "v".into(),
            seed: 1,
            trial: 0,
            protocol: Protocol::Stubborn,
            p: 0.02,
            delta: 2,
            k: 3,
            max_rounds: 10,
            adversary_power: 0,
            nodes: vec![NodeInfo { id: NodeId(0), role: Role::Honest, power: 1, join: 0, leave: None, k: 3 }],
        };
        let g =
            Block { id: BlockId(0), parent: None, height: 0, miner: Miner::Oracle, mined_round: 0, payload: vec![] };
        let b = Block {
            id: BlockId(1),
            parent: Some(BlockId(0)),
            height: 1,
            miner: Miner::Node(NodeId(0)),
            mined_round: 4,
            payload: vec![TxId(0)],
        };
        RunTrace {
            header,
            events: vec![
                TraceEvent::Mine { round: 0, block: g },
                TraceEvent::Join { round: 0, node: NodeId(0) },
                TraceEvent::TxIssue { round: 2, tx: TxId(0), node: NodeId(0) },
                TraceEvent::Mine { round: 4, block: b },
                TraceEvent::Confirm { round: 7, node: NodeId(0), block: BlockId(1) },
            ],
            snapshots: vec![NodeSnapshot {
                node: NodeId(0),
                active: true,
                halted: None,
                genesis: BlockId(0),
                tip: BlockId(1),
                finalized: vec![BlockId(0)],
                first_confirmed: vec![BlockId(0), BlockId(1)],
                ignored: 0,
            }],
            end_round: 10,
        }
    }

    #[test]
    fn roundtrip() {
        let t = sample();
        let text = t.to_jsonl();
        assert!(text.lines().nth(4).unwrap().contains("\"event\":\"MINE\""));
        assert_eq!(RunTrace::from_jsonl(&text).unwrap(), t);
        assert_eq!(RunTrace::from_jsonl(&text).unwrap().to_jsonl(), text);
    }

    #[test]
    fn rejects_malformed() {
        let text = sample().to_jsonl();
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(RunTrace::from_jsonl(&truncated).is_err());

        let mut t = sample();
        t.events.swap(3, 4);
        assert!(RunTrace::from_jsonl(&t.to_jsonl()).is_err());

        let mut t = sample();
        t.events.push(TraceEvent::Finalize { round: 8, node: NodeId(0), block: BlockId(9), height: 1 });
        assert!(matches!(RunTrace::from_jsonl(&t.to_jsonl()), Err(Error::Trace(_))));

        assert!(RunTrace::from_jsonl("{\"type\":\"event\"}\n").is_err());
    }
}
