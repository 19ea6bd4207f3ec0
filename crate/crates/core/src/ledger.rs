//! Append-only hash-chained ledger.
//!
//! One canonical chain per simulation. Blocks are sealed once per tick that
//! produced transactions; node-local copies are read-only [`LedgerView`]s
//! brought up to date by [`sync_views`] when a task or claim completes.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::codec::Encoder;
use crate::digest::{Digest, DIGEST_ALGORITHM};
use crate::ids::{AccountId, NodeId};

pub const LEDGER_FORMAT: &str = "sapiens-ledger";
pub const LEDGER_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    TaskSubmitted,
    SegmentAssigned,
    PocSubmitted,
    PocVerdict,
    VulnSubmitted,
    VulnVerdict,
    ClaimOffered,
    ClaimDecided,
    ReportDelivered,
    Escrow,
    Reward,
    Penalty,
    NodeAbandoned,
    /// Node registration; `amount` is the node's genesis SACF allocation.
    NodeRegistered,
    WorkProofAccepted,
    /// Task transitions without a dedicated kind (Running, Gathering, Failed).
    TaskStatusChanged,
}

impl TxKind {
    pub const ALL: [TxKind; 16] = [
        TxKind::TaskSubmitted,
        TxKind::SegmentAssigned,
        TxKind::PocSubmitted,
        TxKind::PocVerdict,
        TxKind::VulnSubmitted,
        TxKind::VulnVerdict,
        TxKind::ClaimOffered,
        TxKind::ClaimDecided,
        TxKind::ReportDelivered,
        TxKind::Escrow,
        TxKind::Reward,
        TxKind::Penalty,
        TxKind::NodeAbandoned,
        TxKind::NodeRegistered,
        TxKind::WorkProofAccepted,
        TxKind::TaskStatusChanged,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Kinds allowed to carry a non-zero amount.
    pub fn carries_amount(self) -> bool {
        matches!(
            self,
            TxKind::Escrow | TxKind::Reward | TxKind::Penalty | TxKind::NodeRegistered
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub tx_id: u64,
    pub kind: TxKind,
    pub actor: String,
    pub subject: String,
    pub amount: u64,
    pub logical_time: u64,
    pub payload_digest: Digest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<AccountId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<AccountId>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub tag: String,
}

impl TransactionRecord {
    pub fn encode_into(&self, e: &mut Encoder) {
        e.u64(self.tx_id)
            .u8(self.kind.code())
            .str(&self.actor)
            .str(&self.subject)
            .u64(self.amount)
            .u64(self.logical_time)
            .digest(&self.payload_digest)
            .opt_account(self.from.as_ref())
            .opt_account(self.to.as_ref())
            .str(&self.tag);
    }
}

/// Transaction contents before the journal stamps an id and tick.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxBody {
    pub kind: TxKind,
    pub actor: String,
    pub subject: String,
    pub amount: u64,
    pub payload_digest: Digest,
    pub from: Option<AccountId>,
    pub to: Option<AccountId>,
    pub tag: String,
}

impl TxBody {
    pub fn event(kind: TxKind, actor: impl Into<String>, subject: impl Into<String>) -> Self {
        Self {
            kind,
            actor: actor.into(),
            subject: subject.into(),
            amount: 0,
            payload_digest: Digest::ZERO,
            from: None,
            to: None,
            tag: String::new(),
        }
    }

    pub fn digest(mut self, d: Digest) -> Self {
        self.payload_digest = d;
        self
    }

    pub fn tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    /// Attach a balance movement. `from = None` is a genesis allocation.
    ///
    /// Panics if the kind may not carry an amount.
    pub fn transfer(mut self, from: Option<AccountId>, to: AccountId, amount: u64) -> Self {
        assert!(
            self.kind.carries_amount(),
            "{:?} transactions cannot move SACF",
            self.kind
        );
        self.from = from;
        self.to = Some(to);
        self.amount = amount;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Digest,
    pub content_hash: Digest,
    pub sealed_at: u64,
    pub transactions: Vec<TransactionRecord>,
}

impl Block {
    pub fn compute_content_hash(transactions: &[TransactionRecord]) -> Digest {
        let mut e = Encoder::new();
        e.u64(transactions.len() as u64);
        for tx in transactions {
            tx.encode_into(&mut e);
        }
        e.digest_of()
    }

    /// Digest over the header fields; the next block's `prev_hash` must equal it.
    pub fn header_digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.u64(self.index)
            .digest(&self.prev_hash)
            .digest(&self.content_hash)
            .u64(self.sealed_at);
        e.digest_of()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LedgerError {
    #[error("cannot seal an empty transaction batch")]
    EmptyBatch,
    #[error("ledger failed verification at block {0}")]
    CorruptChain(u64),
    #[error("transaction time {tx_time} precedes tail seal time {tail_time}")]
    TimeRegression { tx_time: u64, tail_time: u64 },
    #[error("transaction {0} is not on the chain")]
    UnknownTransaction(u64),
    #[error("transaction {0} is not a task-completion trigger")]
    NotATrigger(u64),
    #[error("ledger dump: {0}")]
    Format(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verification {
    Valid,
    FirstBadIndex(u64),
}

impl Verification {
    pub fn is_valid(self) -> bool {
        self == Verification::Valid
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Ledger {
    blocks: Vec<Block>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wrap blocks without checking them. Use [`Ledger::verify_chain`] afterwards.
    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Block> {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tail(&self) -> Option<&Block> {
        self.blocks.last()
    }

    /// Header digest of the tail block, or the zero digest for an empty chain.
    pub fn head_digest(&self) -> Digest {
        self.tail().map(Block::header_digest).unwrap_or(Digest::ZERO)
    }

    pub fn transactions(&self) -> impl Iterator<Item = &TransactionRecord> {
        self.blocks.iter().flat_map(|b| b.transactions.iter())
    }

    pub fn tx_count(&self) -> usize {
        self.blocks.iter().map(|b| b.transactions.len()).sum()
    }

    pub fn append_block(&mut self, pending: Vec<TransactionRecord>) -> Result<&Block, LedgerError> {
        if pending.is_empty() {
            return Err(LedgerError::EmptyBatch);
        }
        if let Verification::FirstBadIndex(i) = self.verify_chain() {
            return Err(LedgerError::CorruptChain(i));
        }
        let tail_time = self.tail().map(|b| b.sealed_at).unwrap_or(0);
        let mut last = tail_time;
        for tx in &pending {
            if tx.logical_time < last {
                return Err(LedgerError::TimeRegression {
                    tx_time: tx.logical_time,
                    tail_time: last,
                });
            }
            last = tx.logical_time;
        }
        let block = Block {
            index: self.blocks.len() as u64,
            prev_hash: self.head_digest(),
            content_hash: Block::compute_content_hash(&pending),
            sealed_at: last,
            transactions: pending,
        };
        self.blocks.push(block);
        Ok(self.blocks.last().expect("just pushed"))
    }

    pub fn verify_chain(&self) -> Verification {
        let mut prev: Option<&Block> = None;
        for (pos, block) in self.blocks.iter().enumerate() {
            if !block_is_sound(pos as u64, block, prev) {
                return Verification::FirstBadIndex(pos as u64);
            }
            prev = Some(block);
        }
        Verification::Valid
    }

    pub fn query(&self, filter: &TxFilter) -> Result<Vec<&TransactionRecord>, LedgerError> {
        if let Verification::FirstBadIndex(i) = self.verify_chain() {
            return Err(LedgerError::CorruptChain(i));
        }
        Ok(self.transactions().filter(|tx| filter.matches(tx)).collect())
    }

    /// Index of the block holding `tx_id`.
    pub fn block_of(&self, tx_id: u64) -> Option<usize> {
        self.blocks
            .iter()
            .position(|b| b.transactions.iter().any(|tx| tx.tx_id == tx_id))
    }

    pub fn write_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = DumpHeader {
            format: LEDGER_FORMAT.to_owned(),
            version: LEDGER_FORMAT_VERSION,
            digest: DIGEST_ALGORITHM.to_owned(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for block in &self.blocks {
            serde_json::to_writer(&mut out, block)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn dump_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_dump(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// Parse a dump. Structural problems are errors; integrity is left to
    /// [`Ledger::verify_chain`].
    pub fn read_dump<R: BufRead>(input: R) -> Result<Self, LedgerError> {
        let mut lines = input.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| LedgerError::Format("missing header line".into()))?;
        let header = header.map_err(|e| LedgerError::Format(e.to_string()))?;
        let header: DumpHeader = serde_json::from_str(&header)
            .map_err(|e| LedgerError::Format(format!("line 1: {e}")))?;
        if header.format != LEDGER_FORMAT || header.version != LEDGER_FORMAT_VERSION {
            return Err(LedgerError::Format(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        if header.digest != DIGEST_ALGORITHM {
            return Err(LedgerError::Format(format!(
                "unsupported digest algorithm {}",
                header.digest
            )));
        }
        let mut blocks = Vec::new();
        for (n, line) in lines {
            let line = line.map_err(|e| LedgerError::Format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let block: Block = serde_json::from_str(&line)
                .map_err(|e| LedgerError::Format(format!("line {}: {e}", n + 1)))?;
            blocks.push(block);
        }
        Ok(Self { blocks })
    }
}

fn block_is_sound(pos: u64, block: &Block, prev: Option<&Block>) -> bool {
    if block.index != pos {
        return false;
    }
    let expected_prev = prev.map(Block::header_digest).unwrap_or(Digest::ZERO);
    if block.prev_hash != expected_prev {
        return false;
    }
    if Block::compute_content_hash(&block.transactions) != block.content_hash {
        return false;
    }
    let Some(last) = block.transactions.last() else {
        return false;
    };
    if block.sealed_at != last.logical_time {
        return false;
    }
    let floor = prev.map(|p| p.sealed_at).unwrap_or(0);
    let mut t = floor;
    for tx in &block.transactions {
        if tx.logical_time < t {
            return false;
        }
        t = tx.logical_time;
        if tx.amount != 0 && !tx.kind.carries_amount() {
            return false;
        }
    }
    true
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    format: String,
    version: u32,
    digest: String,
}

/// Conjunctive transaction filter; unset fields match everything.
#[derive(Clone, Debug, Default)]
pub struct TxFilter {
    pub kinds: Option<Vec<TxKind>>,
    pub actor: Option<String>,
    pub subject: Option<String>,
    /// Inclusive tick range.
    pub time_range: Option<(u64, u64)>,
}

impl TxFilter {
    pub fn kind(kind: TxKind) -> Self {
        Self {
            kinds: Some(vec![kind]),
            ..Self::default()
        }
    }

    pub fn actor(actor: impl Into<String>) -> Self {
        Self {
            actor: Some(actor.into()),
            ..Self::default()
        }
    }

    pub fn matches(&self, tx: &TransactionRecord) -> bool {
        if let Some(kinds) = &self.kinds {
            if !kinds.contains(&tx.kind) {
                return false;
            }
        }
        if self.actor.as_deref().is_some_and(|a| a != tx.actor) {
            return false;
        }
        if self.subject.as_deref().is_some_and(|s| s != tx.subject) {
            return false;
        }
        if let Some((lo, hi)) = self.time_range {
            if tx.logical_time < lo || tx.logical_time > hi {
                return false;
            }
        }
        true
    }
}

/// Transactions produced during the current tick, waiting to be sealed.
#[derive(Clone, Debug, Default)]
pub struct Journal {
    tick: u64,
    next_tx_id: u64,
    pending: Vec<TransactionRecord>,
}

impl Journal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    /// Move the clock forward. Pending transactions keep their stamped time.
    pub fn set_tick(&mut self, tick: u64) {
        assert!(tick >= self.tick, "logical time cannot run backwards");
        self.tick = tick;
    }

    pub fn record(&mut self, body: TxBody) -> u64 {
        let tx_id = self.next_tx_id;
        self.next_tx_id += 1;
        self.pending.push(TransactionRecord {
            tx_id,
            kind: body.kind,
            actor: body.actor,
            subject: body.subject,
            amount: body.amount,
            logical_time: self.tick,
            payload_digest: body.payload_digest,
            from: body.from,
            to: body.to,
            tag: body.tag,
        });
        tx_id
    }

    pub fn pending(&self) -> &[TransactionRecord] {
        &self.pending
    }

    pub fn take_pending(&mut self) -> Vec<TransactionRecord> {
        std::mem::take(&mut self.pending)
    }
}

/// A node's read-only copy of a chain prefix.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LedgerView {
    pub blocks: Vec<Block>,
}

impl LedgerView {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Bring every view up to the block holding `trigger_tx`, which must be a
/// `ReportDelivered` or `ClaimDecided` transaction. Views already past that
/// block are left alone. Returns the trigger's block index.
pub fn sync_views(
    views: &mut BTreeMap<NodeId, LedgerView>,
    chain: &Ledger,
    trigger_tx: u64,
) -> Result<usize, LedgerError> {
    let block_idx = chain
        .block_of(trigger_tx)
        .ok_or(LedgerError::UnknownTransaction(trigger_tx))?;
    let trigger = chain.blocks[block_idx]
        .transactions
        .iter()
        .find(|tx| tx.tx_id == trigger_tx)
        .expect("block_of located it");
    if !matches!(trigger.kind, TxKind::ReportDelivered | TxKind::ClaimDecided) {
        return Err(LedgerError::NotATrigger(trigger_tx));
    }
    let target_len = block_idx + 1;
    for view in views.values_mut() {
        if view.blocks.len() < target_len {
            let have = view.blocks.len();
            view.blocks
                .extend(chain.blocks[have..target_len].iter().cloned());
        }
    }
    Ok(block_idx)
}
