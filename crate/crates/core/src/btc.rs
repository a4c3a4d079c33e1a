//! Deterministic single-branch UTXO chain.
//!
//! Blocks are produced on a logical clock; there is no proof of work and no
//! fork choice. Accepted transactions update the UTXO set immediately, which
//! is equivalent to applying them at mining time because the mempool is
//! drained in FIFO order and nothing is ever reorganized.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, DigestBuilder};

pub type Txid = Digest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutPoint {
    pub txid: Txid,
    pub vout: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOutput {
    pub value: u64,
    pub recipient: String,
    #[serde(with = "hex_payload", default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Vec<u8>>,
}

impl TxOutput {
    pub fn pay(recipient: impl Into<String>, value: u64) -> Self {
        TxOutput {
            value,
            recipient: recipient.into(),
            payload: None,
        }
    }

    pub fn inscribed(recipient: impl Into<String>, value: u64, payload: Vec<u8>) -> Self {
        TxOutput {
            value,
            recipient: recipient.into(),
            payload: Some(payload),
        }
    }
}

/// A transaction as handed to [`BtcChain::submit_transaction`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnsignedTx {
    pub sender: String,
    pub inputs: Vec<OutPoint>,
    pub outputs: Vec<TxOutput>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTransaction {
    pub txid: Txid,
    pub sender: String,
    pub inputs: Vec<OutPoint>,
    pub outputs: Vec<TxOutput>,
    /// Logical time of acceptance (tip timestamp at submission).
    pub submitted_at: u64,
    /// Submission counter; keeps otherwise identical bodies distinct.
    pub nonce: u64,
}

impl SimTransaction {
    fn compute_txid(
        sender: &str,
        inputs: &[OutPoint],
        outputs: &[TxOutput],
        submitted_at: u64,
        nonce: u64,
    ) -> Txid {
        let mut b = DigestBuilder::tagged("tx")
            .str(sender)
            .u64(inputs.len() as u64);
        for i in inputs {
            b = b.digest(&i.txid).u64(u64::from(i.vout));
        }
        b = b.u64(outputs.len() as u64);
        for o in outputs {
            b = b.u64(o.value).str(&o.recipient);
            b = match &o.payload {
                Some(p) => b.u64(1).field(p),
                None => b.u64(0),
            };
        }
        b.u64(submitted_at).u64(nonce).finish()
    }

    pub fn output_value(&self) -> u64 {
        self.outputs.iter().map(|o| o.value).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimBlock {
    pub height: u64,
    pub timestamp: u64,
    pub txs: Vec<SimTransaction>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub genesis_time: u64,
    /// Logical seconds between consecutive blocks.
    pub block_interval: u64,
    /// Flat fee every non-faucet transaction must leave unspent.
    pub fee_per_tx: u64,
    /// Confirmations after which a transaction counts as final.
    pub finality_depth: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            genesis_time: 1_700_000_000,
            block_interval: 600,
            fee_per_tx: 0,
            finality_depth: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("outpoint {0:?} is already spent or pending")]
    RejectedDoubleSpend(OutPoint),
    #[error("malformed transaction: {0}")]
    RejectedMalformed(String),
    #[error("block {requested} is not yet mined (tip {tip})")]
    NotYetMined { requested: u64, tip: u64 },
    #[error("unknown transaction {0}")]
    UnknownTx(Txid),
    #[error("insufficient funds for {sender}: have {available}, need {needed}")]
    InsufficientFunds {
        sender: String,
        available: u64,
        needed: u64,
    },
}

#[derive(Clone, Debug)]
struct Coin {
    value: u64,
    owner: String,
}

#[derive(Clone, Debug)]
pub struct BtcChain {
    config: ChainConfig,
    blocks: Vec<SimBlock>,
    mempool: VecDeque<SimTransaction>,
    utxos: BTreeMap<OutPoint, Coin>,
    /// Unspent outpoints per owner, for coin selection.
    by_owner: HashMap<String, BTreeSet<OutPoint>>,
    /// txid → containing height; `None` while in the mempool.
    locations: HashMap<Txid, Option<u64>>,
    nonce: u64,
}

/// Sender name used for coin-granting faucet transactions.
pub const FAUCET: &str = "faucet";

impl BtcChain {
    pub fn new(config: ChainConfig) -> Self {
        let genesis = SimBlock {
            height: 0,
            timestamp: config.genesis_time,
            txs: Vec::new(),
        };
        BtcChain {
            config,
            blocks: vec![genesis],
            mempool: VecDeque::new(),
            utxos: BTreeMap::new(),
            by_owner: HashMap::new(),
            locations: HashMap::new(),
            nonce: 0,
        }
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn tip_height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn tip(&self) -> &SimBlock {
        self.blocks.last().expect("genesis always exists")
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }

    fn accept(&mut self, sender: String, inputs: Vec<OutPoint>, outputs: Vec<TxOutput>) -> Txid {
        let submitted_at = self.tip().timestamp;
        let nonce = self.nonce;
        self.nonce += 1;
        let txid = SimTransaction::compute_txid(&sender, &inputs, &outputs, submitted_at, nonce);
        for i in &inputs {
            if let Some(coin) = self.utxos.remove(i) {
                if let Some(set) = self.by_owner.get_mut(&coin.owner) {
                    set.remove(i);
                }
            }
        }
        for (vout, o) in outputs.iter().enumerate() {
            let op = OutPoint {
                txid,
                vout: vout as u32,
            };
            self.by_owner
                .entry(o.recipient.clone())
                .or_default()
                .insert(op);
            self.utxos.insert(
                op,
                Coin {
                    value: o.value,
                    owner: o.recipient.clone(),
                },
            );
        }
        self.locations.insert(txid, None);
        self.mempool.push_back(SimTransaction {
            txid,
            sender,
            inputs,
            outputs,
            submitted_at,
            nonce,
        });
        txid
    }

    /// Grants fresh coins; the only way value enters the chain.
    pub fn faucet(&mut self, to: &str, amount: u64) -> OutPoint {
        let txid = self.accept(
            FAUCET.to_string(),
            Vec::new(),
            vec![TxOutput::pay(to, amount)],
        );
        OutPoint { txid, vout: 0 }
    }

    pub fn submit_transaction(&mut self, tx: UnsignedTx) -> Result<Txid, ChainError> {
        if tx.inputs.is_empty() {
            return Err(ChainError::RejectedMalformed("no inputs".into()));
        }
        if tx.outputs.is_empty() {
            return Err(ChainError::RejectedMalformed("no outputs".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut input_value: u64 = 0;
        for i in &tx.inputs {
            if !seen.insert(*i) {
                return Err(ChainError::RejectedDoubleSpend(*i));
            }
            let coin = self
                .utxos
                .get(i)
                .ok_or(ChainError::RejectedDoubleSpend(*i))?;
            if coin.owner != tx.sender {
                return Err(ChainError::RejectedMalformed(format!(
                    "input {:?} belongs to {}, not {}",
                    i, coin.owner, tx.sender
                )));
            }
            input_value = input_value
                .checked_add(coin.value)
                .ok_or_else(|| ChainError::RejectedMalformed("input overflow".into()))?;
        }
        let output_value = tx
            .outputs
            .iter()
            .try_fold(0u64, |acc, o| acc.checked_add(o.value))
            .ok_or_else(|| ChainError::RejectedMalformed("output overflow".into()))?;
        let needed = output_value.saturating_add(self.config.fee_per_tx);
        if input_value < needed {
            return Err(ChainError::RejectedMalformed(format!(
                "outputs {output_value} + fee {} exceed inputs {input_value}",
                self.config.fee_per_tx
            )));
        }
        Ok(self.accept(tx.sender, tx.inputs, tx.outputs))
    }

    /// Spends the sender's coins (smallest outpoints first) into `outputs`,
    /// returning change to the sender.
    pub fn pay(&mut self, sender: &str, outputs: Vec<TxOutput>) -> Result<Txid, ChainError> {
        let needed = outputs
            .iter()
            .map(|o| o.value)
            .sum::<u64>()
            .saturating_add(self.config.fee_per_tx);
        let mut inputs = Vec::new();
        let mut gathered = 0u64;
        for op in self.by_owner.get(sender).into_iter().flatten() {
            inputs.push(*op);
            gathered += self.utxos[op].value;
            if gathered >= needed {
                break;
            }
        }
        if gathered < needed || inputs.is_empty() {
            return Err(ChainError::InsufficientFunds {
                sender: sender.to_string(),
                available: gathered,
                needed,
            });
        }
        let mut outputs = outputs;
        if gathered > needed {
            outputs.push(TxOutput::pay(sender, gathered - needed));
        }
        self.submit_transaction(UnsignedTx {
            sender: sender.to_string(),
            inputs,
            outputs,
        })
    }

    /// Inscribes `payload` onto an output of `value` sats paid to `recipient`.
    pub fn inscribe(
        &mut self,
        sender: &str,
        recipient: &str,
        value: u64,
        payload: Vec<u8>,
    ) -> Result<Txid, ChainError> {
        self.pay(sender, vec![TxOutput::inscribed(recipient, value, payload)])
    }

    pub fn mine_block(&mut self) -> &SimBlock {
        let height = self.tip_height() + 1;
        let timestamp = self.tip().timestamp + self.config.block_interval;
        let txs: Vec<SimTransaction> = self.mempool.drain(..).collect();
        for tx in &txs {
            self.locations.insert(tx.txid, Some(height));
        }
        self.blocks.push(SimBlock {
            height,
            timestamp,
            txs,
        });
        self.tip()
    }

    pub fn get_block(&self, height: u64) -> Result<&SimBlock, ChainError> {
        self.blocks
            .get(height as usize)
            .ok_or(ChainError::NotYetMined {
                requested: height,
                tip: self.tip_height(),
            })
    }

    pub fn confirmations(&self, txid: &Txid) -> Result<u64, ChainError> {
        match self.locations.get(txid) {
            None => Err(ChainError::UnknownTx(*txid)),
            Some(None) => Ok(0),
            Some(Some(h)) => Ok(self.tip_height() - h + 1),
        }
    }

    pub fn is_final(&self, txid: &Txid) -> Result<bool, ChainError> {
        Ok(self.confirmations(txid)? >= self.config.finality_depth)
    }

    /// Containing height of a mined transaction.
    pub fn tx_height(&self, txid: &Txid) -> Option<u64> {
        self.locations.get(txid).copied().flatten()
    }

    pub fn transaction(&self, txid: &Txid) -> Option<&SimTransaction> {
        match self.locations.get(txid)? {
            Some(h) => self.blocks[*h as usize]
                .txs
                .iter()
                .find(|t| t.txid == *txid),
            None => self.mempool.iter().find(|t| t.txid == *txid),
        }
    }

    pub fn balance(&self, owner: &str) -> u64 {
        self.by_owner
            .get(owner)
            .into_iter()
            .flatten()
            .map(|op| self.utxos[op].value)
            .sum()
    }

    pub fn blocks(&self) -> &[SimBlock] {
        &self.blocks
    }

    /// Full chain export for offline indexers and debugging.
    pub fn dump(&self) -> ChainDump {
        ChainDump {
            config: self.config.clone(),
            blocks: self.blocks.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainDump {
    pub config: ChainConfig,
    pub blocks: Vec<SimBlock>,
}

mod hex_payload {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(bytes) => s.serialize_some(&hex::encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        let opt = Option::<String>::deserialize(d)?;
        opt.map(|s| hex::decode(s).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> BtcChain {
        BtcChain::new(ChainConfig::default())
    }

    #[test]
    fn genesis_and_empty_blocks() {
        let mut c = chain();
        assert_eq!(c.get_block(0).unwrap().height, 0);
        assert!(matches!(
            c.get_block(1),
            Err(ChainError::NotYetMined {
                requested: 1,
                tip: 0
            })
        ));
        let b = c.mine_block().clone();
        assert_eq!((b.height, b.txs.len()), (1, 0));
    }

    #[test]
    fn cadence_is_exact() {
        let mut c = chain();
        let t1 = c.mine_block().timestamp;
        let t2 = c.mine_block().timestamp;
        assert_eq!(t2 - t1, c.config().block_interval);
    }

    #[test]
    fn fifo_block_contents() {
        let mut c = chain();
        c.faucet("a", 1000);
        let ids: Vec<Txid> = (0..3)
            .map(|i| {
                c.inscribe("a", "b", 10, format!("p{i}").into_bytes())
                    .unwrap()
            })
            .collect();
        let block = c.mine_block().clone();
        let mined: Vec<Txid> = block.txs.iter().skip(1).map(|t| t.txid).collect();
        assert_eq!(mined, ids);
        assert_eq!(c.get_block(1).unwrap(), &block);
    }

    #[test]
    fn double_spend_and_overspend() {
        let mut c = chain();
        let coin = c.faucet("a", 100);
        let tx = UnsignedTx {
            sender: "a".into(),
            inputs: vec![coin],
            outputs: vec![TxOutput::pay("b", 100)],
        };
        c.submit_transaction(tx.clone()).unwrap();
        assert_eq!(
            c.submit_transaction(tx),
            Err(ChainError::RejectedDoubleSpend(coin))
        );

        let coin2 = c.faucet("a", 50);
        let over = UnsignedTx {
            sender: "a".into(),
            inputs: vec![coin2],
            outputs: vec![TxOutput::pay("b", 51)],
        };
        assert!(matches!(
            c.submit_transaction(over),
            Err(ChainError::RejectedMalformed(_))
        ));
    }

    #[test]
    fn foreign_inputs_rejected() {
        let mut c = chain();
        let coin = c.faucet("a", 100);
        let steal = UnsignedTx {
            sender: "m".into(),
            inputs: vec![coin],
            outputs: vec![TxOutput::pay("m", 1)],
        };
        assert!(matches!(
            c.submit_transaction(steal),
            Err(ChainError::RejectedMalformed(_))
        ));
    }

    #[test]
    fn confirmations_count() {
        let mut c = chain();
        let coin = c.faucet("a", 1);
        assert_eq!(c.confirmations(&coin.txid), Ok(0));
        c.mine_block();
        assert_eq!(c.confirmations(&coin.txid), Ok(1));
        for _ in 0..6 {
            c.mine_block();
        }
        assert_eq!(c.confirmations(&coin.txid), Ok(7));
        assert!(c.is_final(&coin.txid).unwrap());
        let unknown = Digest::of(b"nope");
        assert_eq!(
            c.confirmations(&unknown),
            Err(ChainError::UnknownTx(unknown))
        );
    }

    #[test]
    fn flat_fee_enforced() {
        let mut c = BtcChain::new(ChainConfig {
            fee_per_tx: 5,
            ..ChainConfig::default()
        });
        c.faucet("a", 20);
        assert!(c.pay("a", vec![TxOutput::pay("b", 16)]).is_err());
        c.pay("a", vec![TxOutput::pay("b", 15)]).unwrap();
        assert_eq!(c.balance("b"), 15);
        assert_eq!(c.balance("a"), 0);
    }

    #[test]
    fn deterministic_replay() {
        let run = || {
            let mut c = chain();
            c.faucet("a", 500);
            c.inscribe("a", "b", 5, b"x".to_vec()).unwrap();
            c.mine_block();
            c.pay("b", vec![TxOutput::pay("c", 5)]).unwrap();
            c.mine_block();
            c.dump()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dump_round_trips_through_json() {
        let mut c = chain();
        c.faucet("a", 500);
        c.inscribe("a", "b", 5, b"{\"p\":1}".to_vec()).unwrap();
        c.mine_block();
        let dump = c.dump();
        let text = serde_json::to_string(&dump).unwrap();
        let back: ChainDump = serde_json::from_str(&text).unwrap();
        assert_eq!(back, dump);
    }
}
