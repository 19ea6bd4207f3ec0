//! Deterministic simulator of a decentralized security-audit marketplace:
//! hash-chained ledger, node registry, scheduling, task workflows, incentives
//! and a seeded vulnerability oracle.

pub mod codec;
pub mod digest;
pub mod ids;
pub mod incentive;
pub mod ledger;
pub mod oracle;
pub mod registry;
pub mod scheduler;
pub mod sim;
pub mod task;
pub mod workflows;

pub use digest::Digest;
pub use ids::{AccountId, KeyId, NodeId, OfferId, PocId, TaskId};
pub use ledger::{Ledger, LedgerError, Verification};
pub use registry::{NodeProfile, NodeRegistry};
pub use workflows::{Protocol, ProtocolParams};
