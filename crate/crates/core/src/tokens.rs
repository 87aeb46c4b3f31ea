//! Token issuance and levies, account caps, restrictions and backup
//! reinforcers (fiat exchange and priority rights).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ActorId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenError {
    #[error("contribution factor is not finite: {0}")]
    NonFiniteFactor(f64),
    #[error("token amount for factor {0} does not fit in an account")]
    Overflow(f64),
    #[error("invalid token rule: {0}")]
    InvalidRule(String),
    #[error("account `{0}` is restricted (negative balance)")]
    Restricted(ActorId),
    #[error("account `{actor}` has {available} tokens available, needs {needed}")]
    InsufficientBalance {
        actor: ActorId,
        available: i64,
        needed: u64,
    },
    #[error("account `{0}` already holds {1:?} this period")]
    DuplicateRight(ActorId, Right),
    #[error("exchange rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error("unknown account `{0}`")]
    UnknownAccount(ActorId),
    #[error("invalid account `{0}`: {1}")]
    InvalidAccount(ActorId, String),
}

/// Piecewise factor-to-token rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRule {
    /// Penalty coefficient.
    pub theta: f64,
    /// Reward coefficient.
    pub xi: f64,
    /// Factor below which no reward is paid.
    pub f1: f64,
    /// Factor from which the reward saturates at `n_max`.
    pub f2: f64,
    pub n_max: u64,
}

impl TokenRule {
    pub fn validate(&self) -> Result<(), TokenError> {
        let bad = |m: String| Err(TokenError::InvalidRule(m));
        if !(self.theta.is_finite() && self.theta > 0.0) {
            return bad(format!("theta must be positive, got {}", self.theta));
        }
        if !(self.xi.is_finite() && self.xi > 0.0) {
            return bad(format!("xi must be positive, got {}", self.xi));
        }
        if !(self.f1.is_finite() && self.f2.is_finite() && 0.0 < self.f1 && self.f1 < self.f2) {
            return bad(format!(
                "thresholds must satisfy 0 < f1 < f2, got f1={} f2={}",
                self.f1, self.f2
            ));
        }
        if self.n_max == 0 || self.n_max > i64::MAX as u64 {
            return bad(format!("n_max must be a positive integer, got {}", self.n_max));
        }
        Ok(())
    }

    /// Signed token count for a contribution factor. Rounding is floor in
    /// every branch, so levies round away from zero.
    pub fn tokens_for_factor(&self, f: f64) -> Result<i64, TokenError> {
        if !f.is_finite() {
            return Err(TokenError::NonFiniteFactor(f));
        }
        let raw = if f < 0.0 {
            -self.theta * (-f).exp_m1()
        } else if f < self.f1 {
            return Ok(0);
        } else if f < self.f2 {
            self.xi * f.exp_m1()
        } else {
            return Ok(self.n_max as i64);
        };
        let floored = raw.floor();
        // i64::MIN is exactly representable; i64::MAX is not, so compare
        // against 2^63 with a strict bound.
        if !floored.is_finite() || floored < i64::MIN as f64 || floored >= (1u64 << 63) as f64 {
            return Err(TokenError::Overflow(f));
        }
        Ok(floored as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Right {
    PriorityGeneration,
    PriorityPurchase,
    CorridorUse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Supply,
    Purchase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssuanceCause {
    CarbonReward,
    CarbonLevy,
    CongestionReward,
    FeePayment,
    FiatExchange,
    RightPurchase,
}

/// One audited balance change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issuance {
    pub actor: ActorId,
    pub amount: i64,
    pub cause: IssuanceCause,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Account {
    pub actor: ActorId,
    pub balance: i64,
    pub balance_cap: i64,
    /// Maximum positive issuance per accounting period.
    pub period_cap: u64,
    pub issued_this_period: u64,
    /// Tokens reserved for pending contract fees.
    pub escrowed: u64,
    pub restricted: bool,
    pub rights: BTreeSet<Right>,
}

impl Account {
    pub fn new(
        actor: ActorId,
        balance: i64,
        balance_cap: i64,
        period_cap: u64,
    ) -> Result<Self, TokenError> {
        if balance_cap <= 0 {
            return Err(TokenError::InvalidAccount(actor, "balance cap must be positive".into()));
        }
        if balance > balance_cap {
            return Err(TokenError::InvalidAccount(
                actor,
                format!("initial balance {balance} exceeds cap {balance_cap}"),
            ));
        }
        Ok(Self {
            actor,
            balance,
            balance_cap,
            period_cap,
            issued_this_period: 0,
            escrowed: 0,
            restricted: balance < 0,
            rights: BTreeSet::new(),
        })
    }

    /// Balance not reserved for escrowed fees.
    pub fn available(&self) -> i64 {
        self.balance - self.escrowed as i64
    }

    fn apply(&mut self, amount: i64, cause: IssuanceCause, step: u64) -> Issuance {
        self.balance += amount;
        self.restricted = self.balance < 0;
        Issuance {
            actor: self.actor.clone(),
            amount,
            cause,
            step,
        }
    }

    /// Applies a settlement. Rewards are clipped to the period cap and the
    /// balance cap; levies apply in full and may drive the balance negative.
    pub fn settle(&mut self, n: i64, cause: IssuanceCause, step: u64) -> Issuance {
        let applied = if n > 0 {
            let period_room = self.period_cap.saturating_sub(self.issued_this_period);
            let cap_room = (self.balance_cap - self.balance).max(0) as u64;
            let granted = (n as u64).min(period_room).min(cap_room);
            self.issued_this_period += granted;
            granted as i64
        } else {
            n
        };
        self.apply(applied, cause, step)
    }

    pub fn reset_period(&mut self) {
        self.issued_this_period = 0;
    }

    pub fn expire_rights(&mut self) {
        self.rights.clear();
    }

    fn ensure_available(&self, needed: u64) -> Result<(), TokenError> {
        if self.available() < needed as i64 {
            return Err(TokenError::InsufficientBalance {
                actor: self.actor.clone(),
                available: self.available(),
                needed,
            });
        }
        Ok(())
    }

    /// Converts tokens to fiat at `rate` currency units per token.
    pub fn exchange_fiat(
        &mut self,
        tokens: u64,
        rate: f64,
        step: u64,
    ) -> Result<(Issuance, f64), TokenError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(TokenError::InvalidRate(rate));
        }
        if self.restricted {
            return Err(TokenError::Restricted(self.actor.clone()));
        }
        self.ensure_available(tokens)?;
        let issuance = self.apply(-(tokens as i64), IssuanceCause::FiatExchange, step);
        Ok((issuance, tokens as f64 * rate))
    }

    pub fn buy_right(&mut self, right: Right, price: u64, step: u64) -> Result<Issuance, TokenError> {
        if self.restricted {
            return Err(TokenError::Restricted(self.actor.clone()));
        }
        if self.rights.contains(&right) {
            return Err(TokenError::DuplicateRight(self.actor.clone(), right));
        }
        self.ensure_available(price)?;
        self.rights.insert(right);
        Ok(self.apply(-(price as i64), IssuanceCause::RightPurchase, step))
    }

    pub fn is_trading_allowed(&self, _side: Side) -> bool {
        !self.restricted
    }

    pub fn holds(&self, right: Right) -> bool {
        self.rights.contains(&right)
    }

    pub fn escrow(&mut self, fee: u64) -> Result<(), TokenError> {
        self.ensure_available(fee)?;
        self.escrowed += fee;
        Ok(())
    }

    pub fn release(&mut self, fee: u64) {
        self.escrowed = self.escrowed.saturating_sub(fee);
    }

    /// Pays an escrowed fee out of the account.
    pub fn pay_escrowed(&mut self, fee: u64, step: u64) -> Issuance {
        self.release(fee);
        self.apply(-(fee as i64), IssuanceCause::FeePayment, step)
    }
}

/// Every account plus the audit log and collected fees.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenBook {
    accounts: BTreeMap<ActorId, Account>,
    initial: BTreeMap<ActorId, i64>,
    audit: Vec<Issuance>,
    fee_pool: u64,
}

impl TokenBook {
    pub fn new(accounts: impl IntoIterator<Item = Account>) -> Self {
        let accounts: BTreeMap<_, _> = accounts.into_iter().map(|a| (a.actor.clone(), a)).collect();
        let initial = accounts.iter().map(|(k, a)| (k.clone(), a.balance)).collect();
        Self {
            accounts,
            initial,
            audit: Vec::new(),
            fee_pool: 0,
        }
    }

    pub fn account(&self, actor: &ActorId) -> Option<&Account> {
        self.accounts.get(actor)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn audit(&self) -> &[Issuance] {
        &self.audit
    }

    pub fn initial_balance(&self, actor: &ActorId) -> Option<i64> {
        self.initial.get(actor).copied()
    }

    pub fn fee_pool(&self) -> u64 {
        self.fee_pool
    }

    /// Sum of all balances plus collected fees.
    pub fn total_supply(&self) -> i128 {
        self.accounts.values().map(|a| a.balance as i128).sum::<i128>() + self.fee_pool as i128
    }

    fn get_mut(&mut self, actor: &ActorId) -> Result<&mut Account, TokenError> {
        self.accounts
            .get_mut(actor)
            .ok_or_else(|| TokenError::UnknownAccount(actor.clone()))
    }

    fn record(&mut self, issuance: Issuance) -> Issuance {
        if issuance.amount != 0 {
            self.audit.push(issuance.clone());
        }
        issuance
    }

    pub fn settle(
        &mut self,
        actor: &ActorId,
        n: i64,
        cause: IssuanceCause,
        step: u64,
    ) -> Result<Issuance, TokenError> {
        let issuance = self.get_mut(actor)?.settle(n, cause, step);
        Ok(self.record(issuance))
    }

    pub fn exchange_fiat(
        &mut self,
        actor: &ActorId,
        tokens: u64,
        rate: f64,
        step: u64,
    ) -> Result<f64, TokenError> {
        let (issuance, fiat) = self.get_mut(actor)?.exchange_fiat(tokens, rate, step)?;
        self.record(issuance);
        Ok(fiat)
    }

    pub fn buy_right(
        &mut self,
        actor: &ActorId,
        right: Right,
        price: u64,
        step: u64,
    ) -> Result<(), TokenError> {
        let issuance = self.get_mut(actor)?.buy_right(right, price, step)?;
        self.record(issuance);
        Ok(())
    }

    pub fn escrow(&mut self, actor: &ActorId, fee: u64) -> Result<(), TokenError> {
        self.get_mut(actor)?.escrow(fee)
    }

    pub fn refund(&mut self, actor: &ActorId, fee: u64) -> Result<(), TokenError> {
        self.get_mut(actor)?.release(fee);
        Ok(())
    }

    /// Moves an escrowed fee into the fee pool.
    pub fn collect_fee(&mut self, actor: &ActorId, fee: u64, step: u64) -> Result<(), TokenError> {
        let issuance = self.get_mut(actor)?.pay_escrowed(fee, step);
        self.fee_pool += fee;
        self.record(issuance);
        Ok(())
    }

    pub fn is_trading_allowed(&self, actor: &ActorId, side: Side) -> bool {
        self.accounts
            .get(actor)
            .is_some_and(|a| a.is_trading_allowed(side))
    }

    pub fn holds(&self, actor: &ActorId, right: Right) -> bool {
        self.accounts.get(actor).is_some_and(|a| a.holds(right))
    }

    /// Period boundary: clears issuance counters and expires rights.
    pub fn close_period(&mut self) {
        for a in self.accounts.values_mut() {
            a.reset_period();
            a.expire_rights();
        }
    }

    /// True when every balance equals its initial value plus its audited
    /// issuances.
    pub fn audit_consistent(&self) -> bool {
        let mut expected = self.initial.clone();
        for i in &self.audit {
            *expected.entry(i.actor.clone()).or_insert(0) += i.amount;
        }
        self.accounts
            .iter()
            .all(|(k, a)| expected.get(k).copied() == Some(a.balance))
    }
}
