//! Single-process hash-chained contract ledger.
//!
//! Contracts are broadcast into a pending pool ordered by fee (highest first,
//! then earliest submission, then id). Once the pool holds `threshold`
//! contracts the top of the pool is packed into a block, appended to the
//! ordering node's chain and copied to every simulated node. Fees are escrowed
//! at submission, collected when a contract executes and released when it is
//! cancelled.

mod block;
mod chain;
mod pool;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Carrier;
use crate::tokens::{Right, Side, TokenBook, TokenError};
use crate::{ActorId, ContractId, DeviceId, LineId};

pub use block::{decode_block, encode_block, Block, DecodeError, Digest};
pub use chain::{verify_chain, verify_records, Chain, CorruptBlock};
pub use pool::{order_pending, pool_order, PendingPool};

/// Bilateral energy contract terms. Lifecycle status lives in the [`Ledger`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contract {
    pub id: ContractId,
    pub seller: ActorId,
    pub buyer: ActorId,
    pub seller_device: DeviceId,
    pub buyer_device: DeviceId,
    /// Party whose tokens fund the fee.
    pub payer: ActorId,
    pub carrier: Carrier,
    /// MW delivered in every step of the delivery window.
    pub quantity: f64,
    /// Fiat per MWh.
    pub price: f64,
    /// Tokens offered to the ordering node.
    pub fee: u64,
    pub submitted_at: u64,
    /// Consecutive steps of delivery, starting at the execution step.
    pub delivery_steps: u32,
}

impl Contract {
    pub fn check(&self) -> Result<(), String> {
        if !(self.quantity.is_finite() && self.quantity > 0.0) {
            return Err(format!("quantity must be positive, got {}", self.quantity));
        }
        if !(self.price.is_finite() && self.price >= 0.0) {
            return Err(format!("price must be non-negative, got {}", self.price));
        }
        if self.seller == self.buyer {
            return Err("seller and buyer must differ".into());
        }
        if self.payer != self.seller && self.payer != self.buyer {
            return Err("payer must be the seller or the buyer".into());
        }
        if self.delivery_steps == 0 {
            return Err("delivery_steps must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractStatus {
    Pending,
    Packed,
    Executed,
    /// Refused at submission.
    Rejected,
    /// Packed but not executed; fee refunded.
    Cancelled,
}

/// Why a contract was refused or cancelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    Congestion { step: u64, line: LineId, flow: f64, capacity: f64 },
    DeviceLimit { step: u64, device: DeviceId, requested: f64, limit: f64 },
    SlackLimit { step: u64, output: f64 },
    Restricted { actor: ActorId },
    InsufficientFee { actor: ActorId },
    Invalid { message: String },
    HorizonEnded,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

/// Grid-side feasibility of a contract against the evolving schedule.
pub trait ContractValidator {
    /// Checks the contract for delivery starting at `step`.
    fn validate(&self, contract: &Contract, step: u64) -> Verdict;
    /// Adds an accepted contract to the schedule.
    fn commit(&mut self, contract: &Contract, step: u64);
}

#[derive(Debug, Error, PartialEq)]
pub enum LedgerError {
    #[error("block threshold must be at least 1")]
    ZeroThreshold,
    #[error("at least one node is required")]
    NoNodes,
    #[error("contract `{0}` was already submitted")]
    DuplicateContract(ContractId),
    #[error("contract refused: {0:?}")]
    Refused(RejectReason),
    #[error(transparent)]
    Token(#[from] TokenError),
}

/// Result of executing one packed contract.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub contract: Contract,
    pub status: ContractStatus,
    pub reason: Option<RejectReason>,
}

#[derive(Debug, Clone)]
pub struct Ledger {
    threshold: usize,
    pool: PendingPool,
    nodes: Vec<Chain>,
    statuses: BTreeMap<ContractId, ContractStatus>,
}

impl Ledger {
    pub fn new(threshold: usize, node_count: usize) -> Result<Self, LedgerError> {
        if threshold == 0 {
            return Err(LedgerError::ZeroThreshold);
        }
        if node_count == 0 {
            return Err(LedgerError::NoNodes);
        }
        Ok(Self {
            threshold,
            pool: PendingPool::default(),
            nodes: vec![Chain::genesis(); node_count],
            statuses: BTreeMap::new(),
        })
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn pool(&self) -> &PendingPool {
        &self.pool
    }

    /// The ordering node's chain.
    pub fn chain(&self) -> &Chain {
        &self.nodes[0]
    }

    pub fn nodes(&self) -> &[Chain] {
        &self.nodes
    }

    pub fn status(&self, id: &ContractId) -> Option<ContractStatus> {
        self.statuses.get(id).copied()
    }

    pub fn statuses(&self) -> &BTreeMap<ContractId, ContractStatus> {
        &self.statuses
    }

    /// Broadcasts a contract into the pending pool, escrowing its fee.
    pub fn submit_contract(
        &mut self,
        contract: Contract,
        book: &mut TokenBook,
    ) -> Result<(), LedgerError> {
        if self.statuses.contains_key(&contract.id) {
            return Err(LedgerError::DuplicateContract(contract.id));
        }
        let refusal = if let Err(message) = contract.check() {
            Some(RejectReason::Invalid { message })
        } else if !book.is_trading_allowed(&contract.seller, Side::Supply) {
            Some(RejectReason::Restricted {
                actor: contract.seller.clone(),
            })
        } else if !book.is_trading_allowed(&contract.buyer, Side::Purchase) {
            Some(RejectReason::Restricted {
                actor: contract.buyer.clone(),
            })
        } else if book.escrow(&contract.payer, contract.fee).is_err() {
            Some(RejectReason::InsufficientFee {
                actor: contract.payer.clone(),
            })
        } else {
            None
        };
        if let Some(reason) = refusal {
            self.statuses
                .insert(contract.id.clone(), ContractStatus::Rejected);
            return Err(LedgerError::Refused(reason));
        }
        self.statuses
            .insert(contract.id.clone(), ContractStatus::Pending);
        self.pool.insert(contract);
        Ok(())
    }

    /// Packs the top `threshold` pending contracts into a new block once the
    /// pool is large enough, and syncs it to every node.
    pub fn form_block(&mut self, step: u64) -> Option<Block> {
        if self.pool.len() < self.threshold {
            return None;
        }
        let contracts = self.pool.take_top(self.threshold);
        Some(self.append(contracts, step))
    }

    /// Packs whatever is left in the pool into a final, possibly undersized
    /// block.
    pub fn flush(&mut self, step: u64) -> Option<Block> {
        if self.pool.is_empty() {
            return None;
        }
        let contracts = self.pool.take_top(self.pool.len());
        Some(self.append(contracts, step))
    }

    fn append(&mut self, contracts: Vec<Contract>, step: u64) -> Block {
        for c in &contracts {
            self.statuses.insert(c.id.clone(), ContractStatus::Packed);
        }
        let tip = self.nodes[0].tip();
        let block = Block::new(tip.height + 1, tip.digest, contracts, step);
        for node in &mut self.nodes {
            node.push(block.clone());
        }
        block
    }

    pub fn nodes_consistent(&self) -> bool {
        let tip = self.nodes[0].tip().digest;
        self.nodes
            .iter()
            .all(|n| n.len() == self.nodes[0].len() && n.tip().digest == tip)
    }

    /// Executes a packed block against the grid schedule.
    ///
    /// Contracts whose seller holds priority generation or whose buyer holds
    /// priority purchase are validated first; otherwise block (fee) order is
    /// kept. Accepted contracts pay their fee into the fee pool; rejected ones
    /// are cancelled and refunded.
    pub fn execute_block<V: ContractValidator>(
        &mut self,
        block: &Block,
        validator: &mut V,
        book: &mut TokenBook,
        step: u64,
    ) -> Vec<Execution> {
        let mut order: Vec<&Contract> = block.contracts.iter().collect();
        let has_priority = |c: &Contract| {
            book.holds(&c.seller, Right::PriorityGeneration)
                || book.holds(&c.buyer, Right::PriorityPurchase)
        };
        // Stable sort keeps fee order inside each class.
        order.sort_by_key(|c| !has_priority(c));

        let mut out = Vec::with_capacity(order.len());
        for contract in order {
            let verdict = if !book.is_trading_allowed(&contract.seller, Side::Supply) {
                Verdict::Reject(RejectReason::Restricted {
                    actor: contract.seller.clone(),
                })
            } else if !book.is_trading_allowed(&contract.buyer, Side::Purchase) {
                Verdict::Reject(RejectReason::Restricted {
                    actor: contract.buyer.clone(),
                })
            } else {
                validator.validate(contract, step)
            };
            out.push(self.conclude(contract, verdict, validator, book, step));
        }
        out
    }

    /// Cancels every contract of a block without validation, refunding fees.
    pub fn cancel_block(
        &mut self,
        block: &Block,
        reason: RejectReason,
        book: &mut TokenBook,
    ) -> Vec<Execution> {
        block
            .contracts
            .iter()
            .map(|c| {
                let _ = book.refund(&c.payer, c.fee);
                self.statuses.insert(c.id.clone(), ContractStatus::Cancelled);
                Execution {
                    contract: c.clone(),
                    status: ContractStatus::Cancelled,
                    reason: Some(reason.clone()),
                }
            })
            .collect()
    }

    fn conclude<V: ContractValidator>(
        &mut self,
        contract: &Contract,
        verdict: Verdict,
        validator: &mut V,
        book: &mut TokenBook,
        step: u64,
    ) -> Execution {
        let (status, reason) = match verdict {
            Verdict::Accept => {
                validator.commit(contract, step);
                book.collect_fee(&contract.payer, contract.fee, step)
                    .expect("payer account exists once submitted");
                (ContractStatus::Executed, None)
            }
            Verdict::Reject(reason) => {
                book.refund(&contract.payer, contract.fee)
                    .expect("payer account exists once submitted");
                (ContractStatus::Cancelled, Some(reason))
            }
        };
        self.statuses.insert(contract.id.clone(), status);
        Execution {
            contract: contract.clone(),
            status,
            reason,
        }
    }
}
