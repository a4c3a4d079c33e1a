//! Deploy/mint/transfer token bookkeeping.
//!
//! Every operation validates fully before touching state, so a rejected
//! operation leaves the registry unchanged.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Amount = BigUint;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Brc20Error {
    #[error("tick {0:?} is already deployed")]
    DuplicateTick(String),
    #[error("invalid deploy parameters: lim {lim} exceeds max {max}")]
    InvalidParams { max: Amount, lim: Amount },
    #[error("tick {0:?} is not deployed")]
    UnknownTick(String),
    #[error("mint of {amt} exceeds per-mint limit {lim}")]
    ExceedsMintLimit { amt: Amount, lim: Amount },
    #[error("mint of {amt} would exceed max supply {max} (minted {minted})")]
    ExceedsMaxSupply {
        amt: Amount,
        minted: Amount,
        max: Amount,
    },
    #[error("balance {balance} is below transfer amount {amt}")]
    InsufficientBalance { balance: Amount, amt: Amount },
}

impl Brc20Error {
    /// Short variant name, used as an event return value.
    pub fn name(&self) -> &'static str {
        match self {
            Brc20Error::DuplicateTick(_) => "DuplicateTick",
            Brc20Error::InvalidParams { .. } => "InvalidParams",
            Brc20Error::UnknownTick(_) => "UnknownTick",
            Brc20Error::ExceedsMintLimit { .. } => "ExceedsMintLimit",
            Brc20Error::ExceedsMaxSupply { .. } => "ExceedsMaxSupply",
            Brc20Error::InsufficientBalance { .. } => "InsufficientBalance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenState {
    pub tick: String,
    #[serde(with = "crate::amount_serde")]
    pub max: Amount,
    #[serde(with = "crate::amount_serde")]
    pub lim: Amount,
    #[serde(with = "crate::amount_serde::map")]
    pub balances: BTreeMap<String, Amount>,
    #[serde(with = "crate::amount_serde")]
    pub minted_total: Amount,
}

impl TokenState {
    pub fn balance(&self, addr: &str) -> Amount {
        self.balances.get(addr).cloned().unwrap_or_default()
    }
}

/// One token operation, in a form convenient for replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Brc20Op {
    Deploy {
        tick: String,
        max: Amount,
        lim: Amount,
    },
    Mint {
        tick: String,
        minter: String,
        amt: Amount,
    },
    Transfer {
        tick: String,
        sender: String,
        receiver: String,
        amt: Amount,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Brc20Registry {
    tokens: BTreeMap<String, TokenState>,
}

impl Brc20Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, tick: &str) -> Option<&TokenState> {
        self.tokens.get(tick)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &TokenState> {
        self.tokens.values()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn balance(&self, tick: &str, addr: &str) -> Amount {
        self.tokens
            .get(tick)
            .map(|t| t.balance(addr))
            .unwrap_or_default()
    }

    pub fn apply(&mut self, op: &Brc20Op) -> Result<(), Brc20Error> {
        match op {
            Brc20Op::Deploy { tick, max, lim } => self.apply_deploy(tick, max.clone(), lim.clone()),
            Brc20Op::Mint { tick, minter, amt } => self.apply_mint(tick, minter, amt),
            Brc20Op::Transfer {
                tick,
                sender,
                receiver,
                amt,
            } => self.apply_transfer(tick, sender, receiver, amt),
        }
    }

    pub fn apply_deploy(&mut self, tick: &str, max: Amount, lim: Amount) -> Result<(), Brc20Error> {
        if self.tokens.contains_key(tick) {
            return Err(Brc20Error::DuplicateTick(tick.to_string()));
        }
        if lim > max {
            return Err(Brc20Error::InvalidParams { max, lim });
        }
        self.tokens.insert(
            tick.to_string(),
            TokenState {
                tick: tick.to_string(),
                max,
                lim,
                balances: BTreeMap::new(),
                minted_total: Amount::zero(),
            },
        );
        Ok(())
    }

    pub fn apply_mint(&mut self, tick: &str, minter: &str, amt: &Amount) -> Result<(), Brc20Error> {
        let token = self
            .tokens
            .get_mut(tick)
            .ok_or_else(|| Brc20Error::UnknownTick(tick.to_string()))?;
        if *amt > token.lim {
            return Err(Brc20Error::ExceedsMintLimit {
                amt: amt.clone(),
                lim: token.lim.clone(),
            });
        }
        if &token.minted_total + amt > token.max {
            return Err(Brc20Error::ExceedsMaxSupply {
                amt: amt.clone(),
                minted: token.minted_total.clone(),
                max: token.max.clone(),
            });
        }
        token.minted_total += amt;
        credit(&mut token.balances, minter, amt);
        Ok(())
    }

    pub fn apply_transfer(
        &mut self,
        tick: &str,
        sender: &str,
        receiver: &str,
        amt: &Amount,
    ) -> Result<(), Brc20Error> {
        let token = self
            .tokens
            .get_mut(tick)
            .ok_or_else(|| Brc20Error::UnknownTick(tick.to_string()))?;
        let balance = token.balance(sender);
        if balance < *amt {
            return Err(Brc20Error::InsufficientBalance {
                balance,
                amt: amt.clone(),
            });
        }
        if sender == receiver || amt.is_zero() {
            return Ok(());
        }
        // Entries stay once created, even when they drain to zero.
        *token
            .balances
            .get_mut(sender)
            .expect("sender holds a positive balance") -= amt;
        credit(&mut token.balances, receiver, amt);
        Ok(())
    }

    /// Checks supply conservation for every token.
    pub fn check_invariants(&self) -> Result<(), String> {
        for token in self.tokens.values() {
            let sum: Amount = token.balances.values().sum();
            if sum != token.minted_total {
                return Err(format!(
                    "{}: balances sum {} != minted {}",
                    token.tick, sum, token.minted_total
                ));
            }
            if token.minted_total > token.max {
                return Err(format!(
                    "{}: minted {} exceeds max {}",
                    token.tick, token.minted_total, token.max
                ));
            }
        }
        Ok(())
    }
}

/// Entries are created lazily on the first positive credit.
fn credit(balances: &mut BTreeMap<String, Amount>, addr: &str, amt: &Amount) {
    if amt.is_zero() {
        return;
    }
    *balances.entry(addr.to_string()).or_default() += amt;
}
