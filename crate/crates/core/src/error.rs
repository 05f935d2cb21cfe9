use crate::chain::{BlockId, NodeId, Round, TxId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("unknown parent block {0}")]
    UnknownParent(BlockId),
    #[error("transaction {0} appears twice in a block payload")]
    DuplicatePayload(TxId),
    #[error("broken parent link below block {0}")]
    BrokenChain(BlockId),
    #[error("honest envelope {msg} from {sender} to {recipient} sent at {sent} delivered at {deliver} exceeds delta {delta}")]
    Synchrony { msg: String, sender: NodeId, recipient: NodeId, sent: Round, deliver: Round, delta: Round },
    #[error("node {0} is already active")]
    AlreadyActive(NodeId),
    #[error("node {node}: finalizing {block} at height {height} would break the finalized chain")]
    FinalizeGap { node: NodeId, block: BlockId, height: u64 },
    #[error("recovery: {0}")]
    Recovery(String),
    #[error("bribery: {0}")]
    Bribery(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario {path}: {message}")]
    Scenario { path: String, message: String },
    #[error("trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
