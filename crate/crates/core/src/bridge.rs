//! The epoch loop that carries inscriptions from the UTXO chain into
//! contract calls and publishes receipts back.
//!
//! Per block: parse every output, route inscriptions into the pending
//! bundle. At heights divisible by `epsilon`: sort the bundle, agree on it,
//! execute it with fee accounting, and inscribe one receipt covering every
//! executed inscription.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brc20::Brc20Registry;
use crate::btc::{BtcChain, ChainError, SimBlock, Txid};
use crate::committee::{Committee, CommitteeError, SlashRecord};
use crate::crypto::{Digest, DigestBuilder};
use crate::evm::{fee_credit_digest, Call, EvmSim, Template};
use crate::inscription::{
    build_receipt_payload, function_name, parse_inscription, receipt_events, serialize_inscription,
    Inscription, InscriptionId, Op, OrderingKey, ReceiptEntry,
};
use crate::pbft::MessageCounts;

pub const VAULT: &str = "middleware-vault";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    /// Blocks between epochs.
    pub epsilon: u64,
    /// Sats carried by each receipt output.
    pub receipt_value: u64,
    /// Blocks a receipt may take to be mined after its epoch.
    pub receipt_lag: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            epsilon: 6,
            receipt_value: 546,
            receipt_lag: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BridgeError {
    #[error("epsilon must be positive")]
    ZeroEpsilon,
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Where a parsed inscription went.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "route", rename_all = "snake_case")]
pub enum Routing {
    Bundled {
        op: Op,
        c_addr: String,
        value: u64,
    },
    /// Receipts and registrations are not contract requests.
    NotBundled {
        op: Op,
    },
    DroppedInvalid {
        reason: String,
    },
    Duplicate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub id: InscriptionId,
    pub height: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    pub epoch: u64,
    pub inscriptions: Vec<Inscription>,
}

impl Bundle {
    pub fn sort(&mut self) {
        self.inscriptions.sort_by_key(|i| (i.ordering_key, i.id));
    }

    pub fn digest(&self) -> Digest {
        let mut b = DigestBuilder::tagged("bundle").u64(self.inscriptions.len() as u64);
        for ins in &self.inscriptions {
            let payload = serialize_inscription(&ins.envelope).unwrap_or_default();
            b = b
                .digest(&ins.id.txid)
                .u64(u64::from(ins.id.vout))
                .field(&payload)
                .u64(ins.value)
                .str(&ins.origin)
                .str(&ins.recipient);
        }
        b.finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub id: InscriptionId,
    pub ordering_key: OrderingKey,
    pub c_addr: String,
    pub function: String,
    pub caller: String,
    pub value: u64,
    pub fee: u64,
    pub post_fee_value: u64,
    /// Fee share per validator UTXO address.
    pub credits: BTreeMap<String, u64>,
    pub success: bool,
    pub return_value: String,
    pub gas_used: u64,
    /// Arguments the contract saw; kept for replay audits.
    pub args: Vec<(String, String)>,
    pub recipient: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusSummary {
    pub sequence: u64,
    pub view: u64,
    pub messages: MessageCounts,
    pub elapsed_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochReport {
    pub height: u64,
    pub epoch: u64,
    pub bundle_size: usize,
    pub bundle_digest: Digest,
    pub consensus: Option<ConsensusSummary>,
    /// Consensus failed; the bundle is retried next epoch.
    pub deferred: bool,
    pub failure: Option<String>,
    pub slashes: Vec<SlashRecord>,
    pub executions: Vec<ExecutionRecord>,
    pub receipt: Option<Txid>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptRecord {
    pub txid: Txid,
    pub epoch_height: u64,
    pub mined_height: Option<u64>,
    pub events: BTreeMap<InscriptionId, ReceiptEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bridge {
    config: BridgeConfig,
    seed: u64,
    next_height: u64,
    pending: Vec<Inscription>,
    contracts: BTreeSet<String>,
    seen: BTreeSet<InscriptionId>,
    included_at: BTreeMap<InscriptionId, u64>,
    sequence: u64,
    view: u64,
    fee_ledger: BTreeMap<String, u64>,
    fees_collected: u64,
    receipt_costs: u64,
    receipt_subsidy: u64,
    vault_funded: bool,
    epochs: Vec<EpochReport>,
    receipts: Vec<ReceiptRecord>,
    /// Published receipts not yet seen in a block, by position.
    unmined: BTreeMap<Txid, usize>,
    dropped: Vec<Dropped>,
}

impl Bridge {
    /// A bridge that starts scanning at `start_height`.
    pub fn new(config: BridgeConfig, seed: u64, start_height: u64) -> Result<Self, BridgeError> {
        if config.epsilon == 0 {
            return Err(BridgeError::ZeroEpsilon);
        }
        Ok(Bridge {
            config,
            seed,
            next_height: start_height,
            pending: Vec::new(),
            contracts: BTreeSet::new(),
            seen: BTreeSet::new(),
            included_at: BTreeMap::new(),
            sequence: 0,
            view: 0,
            fee_ledger: BTreeMap::new(),
            fees_collected: 0,
            receipt_costs: 0,
            receipt_subsidy: 0,
            vault_funded: false,
            epochs: Vec::new(),
            receipts: Vec::new(),
            unmined: BTreeMap::new(),
            dropped: Vec::new(),
        })
    }

    pub fn config(&self) -> &BridgeConfig {
        &self.config
    }

    pub fn next_height(&self) -> u64 {
        self.next_height
    }

    pub fn pending(&self) -> &[Inscription] {
        &self.pending
    }

    pub fn pending_contracts(&self) -> &BTreeSet<String> {
        &self.contracts
    }

    pub fn epochs(&self) -> &[EpochReport] {
        &self.epochs
    }

    pub fn receipts(&self) -> &[ReceiptRecord] {
        &self.receipts
    }

    pub fn dropped(&self) -> &[Dropped] {
        &self.dropped
    }

    /// Fee balance per validator UTXO address, net of receipt costs.
    pub fn fee_ledger(&self) -> &BTreeMap<String, u64> {
        &self.fee_ledger
    }

    pub fn fees_collected(&self) -> u64 {
        self.fees_collected
    }

    /// Receipt chain fees paid out of the fee ledger.
    pub fn receipt_costs(&self) -> u64 {
        self.receipt_costs
    }

    /// Receipt chain fees the ledger could not cover.
    pub fn receipt_subsidy(&self) -> u64 {
        self.receipt_subsidy
    }

    pub fn included_at(&self) -> &BTreeMap<InscriptionId, u64> {
        &self.included_at
    }

    /// Inscriptions carried by a block, in output order.
    pub fn parse_block(block: &SimBlock) -> Vec<Inscription> {
        let mut out = Vec::new();
        for (tx_index, tx) in block.txs.iter().enumerate() {
            for (vout, output) in tx.outputs.iter().enumerate() {
                let Some(envelope) = output.payload.as_deref().and_then(parse_inscription) else {
                    continue;
                };
                out.push(Inscription {
                    id: InscriptionId::new(tx.txid, vout as u32),
                    envelope,
                    value: output.value,
                    origin: tx.sender.clone(),
                    recipient: output.recipient.clone(),
                    ordering_key: OrderingKey {
                        timestamp: block.timestamp,
                        block_height: block.height,
                        tx_index: tx_index as u32,
                        output_index: vout as u32,
                    },
                });
            }
        }
        out
    }

    pub fn handle_inscription(&mut self, ins: Inscription) -> Routing {
        if !self.seen.insert(ins.id) {
            return Routing::Duplicate;
        }
        let op = ins.op();
        if matches!(op, Op::Receipt | Op::Registration) {
            return Routing::NotBundled { op };
        }
        let Some(c_addr) = ins.c_addr().map(str::to_string) else {
            let reason = format!("{op} names no contract address");
            self.dropped.push(Dropped {
                id: ins.id,
                height: ins.ordering_key.block_height,
                reason: reason.clone(),
            });
            return Routing::DroppedInvalid { reason };
        };
        let value = ins.value;
        self.included_at
            .insert(ins.id, ins.ordering_key.block_height);
        self.contracts.insert(c_addr.clone());
        self.pending.push(ins);
        Routing::Bundled { op, c_addr, value }
    }

    /// Processes every mined block the bridge has not seen yet.
    pub fn sync(
        &mut self,
        chain: &mut BtcChain,
        evm: &mut EvmSim,
        committee: &mut Committee,
    ) -> Result<Vec<EpochReport>, BridgeError> {
        let mut reports = Vec::new();
        while self.next_height <= chain.tip_height() {
            let height = self.next_height;
            let block = chain.get_block(height)?.clone();
            self.note_mined_receipts(&block);
            for ins in Self::parse_block(&block) {
                self.handle_inscription(ins);
            }
            if height.is_multiple_of(self.config.epsilon) {
                if let Some(report) = self.run_epoch(height, chain, evm, committee)? {
                    reports.push(report);
                }
            }
            self.next_height += 1;
        }
        Ok(reports)
    }

    fn note_mined_receipts(&mut self, block: &SimBlock) {
        for tx in &block.txs {
            if let Some(i) = self.unmined.remove(&tx.txid) {
                self.receipts[i].mined_height = Some(block.height);
            }
        }
    }

    /// The `H mod epsilon == 0` step. `None` for a vacuous epoch.
    pub fn run_epoch(
        &mut self,
        height: u64,
        chain: &mut BtcChain,
        evm: &mut EvmSim,
        committee: &mut Committee,
    ) -> Result<Option<EpochReport>, BridgeError> {
        if self.pending.is_empty() {
            return Ok(None);
        }
        let mut bundle = Bundle {
            epoch: height / self.config.epsilon,
            inscriptions: std::mem::take(&mut self.pending),
        };
        bundle.sort();
        let digest = bundle.digest();
        self.sequence += 1;
        let mut report = EpochReport {
            height,
            epoch: bundle.epoch,
            bundle_size: bundle.inscriptions.len(),
            bundle_digest: digest,
            consensus: None,
            deferred: false,
            failure: None,
            slashes: Vec::new(),
            executions: Vec::new(),
            receipt: None,
        };

        let outcome = match committee.run_consensus(digest, self.sequence, self.view, self.seed) {
            Ok(o) => o,
            Err(e) => {
                // Keep the bundle; the next epoch boundary retries with a
                // fresh leader.
                self.pending = bundle.inscriptions;
                self.view += 1;
                report.deferred = true;
                report.failure = Some(e.to_string());
                self.epochs.push(report.clone());
                return Ok(Some(report));
            }
        };
        self.view = outcome.view;
        report.consensus = Some(ConsensusSummary {
            sequence: self.sequence,
            view: outcome.view,
            messages: outcome.messages.clone(),
            elapsed_ms: outcome.elapsed_ms,
        });
        for ev in &outcome.evidence {
            if let Ok(rec) = committee.detect_and_slash(ev) {
                report.slashes.push(rec);
            }
        }
        evm.install_authority(committee.authority());

        let leader = committee
            .leader(outcome.view)
            .map(|v| v.btc_addr.clone())
            .unwrap_or_default();
        let mut receipt_events = BTreeMap::new();
        for ins in &bundle.inscriptions {
            let rec = self.update_evm_state(ins, &leader, evm, committee);
            receipt_events.insert(
                ins.id,
                ReceiptEntry::new(rec.success, rec.return_value.clone()),
            );
            report.executions.push(rec);
        }
        self.contracts.clear();
        report.receipt = self.publish_receipts(height, receipt_events, chain)?;
        self.epochs.push(report.clone());
        Ok(Some(report))
    }

    fn update_evm_state(
        &mut self,
        ins: &Inscription,
        leader: &str,
        evm: &mut EvmSim,
        committee: &Committee,
    ) -> ExecutionRecord {
        let fee = evm.schedule().fee_rate.apply_floor(ins.value);
        let post_fee_value = ins.value - fee;
        let credits = split_fee(fee, committee.active().map(|v| v.btc_addr.as_str()), leader);
        for (addr, share) in &credits {
            *self.fee_ledger.entry(addr.clone()).or_default() += share;
        }
        self.fees_collected += fee;

        let c_addr = ins.c_addr().unwrap_or_default().to_string();
        let manages_tokens = evm
            .contract(&c_addr)
            .is_ok_and(|c| c.template.manages_tokens());
        if manages_tokens && fee > 0 {
            let tick = ins.envelope.tick().unwrap_or_default();
            let nonzero: BTreeMap<String, u64> = credits
                .iter()
                .filter(|(_, v)| **v > 0)
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            let d = fee_credit_digest(&c_addr, &ins.id, tick, &nonzero);
            if let Ok(proof) = committee.sign_with_quorum(d) {
                // Only fails on replay, which bundle deduplication rules out.
                let _ = evm.credit_fees(&c_addr, &ins.id, tick, &nonzero, &proof);
            }
        }

        let call = Call::from_inscription(ins, post_fee_value)
            .expect("bundled inscriptions name a contract");
        let (success, return_value, gas_used) = match committee.sign_with_quorum(call.digest()) {
            Ok(proof) => match evm.invoke(&call, &proof) {
                Ok(ev) => (ev.success, ev.return_value, ev.gas_used),
                Err(e) => (false, e.name().to_string(), 0),
            },
            Err(CommitteeError::QuorumNotMet { .. }) => (false, "QuorumNotMet".to_string(), 0),
            Err(e) => (false, e.to_string(), 0),
        };
        ExecutionRecord {
            id: ins.id,
            ordering_key: ins.ordering_key,
            c_addr,
            function: function_name(&call.function).to_string(),
            caller: call.caller.clone(),
            value: ins.value,
            fee,
            post_fee_value,
            credits,
            success,
            return_value,
            gas_used,
            args: call
                .args
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            recipient: call.recipient.clone(),
        }
    }

    fn publish_receipts(
        &mut self,
        height: u64,
        events: BTreeMap<InscriptionId, ReceiptEntry>,
        chain: &mut BtcChain,
    ) -> Result<Option<Txid>, BridgeError> {
        if events.is_empty() {
            return Ok(None);
        }
        let payload = build_receipt_payload(&events).expect("non-empty receipt set encodes");
        if !self.vault_funded {
            chain.faucet(VAULT, self.config.receipt_value);
            self.vault_funded = true;
        }
        let chain_fee = chain.config().fee_per_tx;
        if chain_fee > 0 {
            chain.faucet(VAULT, chain_fee);
            self.charge_receipt(chain_fee);
        }
        let txid = chain.inscribe(VAULT, VAULT, self.config.receipt_value, payload)?;
        self.unmined.insert(txid, self.receipts.len());
        self.receipts.push(ReceiptRecord {
            txid,
            epoch_height: height,
            mined_height: None,
            events,
        });
        Ok(Some(txid))
    }

    /// Debits a receipt's chain fee from validator fee balances, largest
    /// balances first. A shortfall is recorded as a subsidy.
    fn charge_receipt(&mut self, mut cost: u64) {
        let mut holders: Vec<(String, u64)> = self
            .fee_ledger
            .iter()
            .map(|(a, b)| (a.clone(), *b))
            .collect();
        holders.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (addr, balance) in holders {
            let take = balance.min(cost);
            *self.fee_ledger.get_mut(&addr).expect("listed above") -= take;
            self.receipt_costs += take;
            cost -= take;
        }
        self.receipt_subsidy += cost;
    }

    /// Checks every safety property over the run so far.
    pub fn audit(&self, chain: &BtcChain, evm: &EvmSim) -> AuditReport {
        let mut report = AuditReport::default();
        let executed: BTreeMap<InscriptionId, &ExecutionRecord> = self
            .epochs
            .iter()
            .flat_map(|e| e.executions.iter())
            .map(|r| (r.id, r))
            .collect();

        // Settlement: each executed id appears in exactly one mined receipt.
        let mut seen_in_receipts: BTreeMap<InscriptionId, usize> = BTreeMap::new();
        for block in chain.blocks() {
            for tx in &block.txs {
                if tx.sender != VAULT {
                    continue;
                }
                for out in &tx.outputs {
                    let Some(env) = out.payload.as_deref().and_then(parse_inscription) else {
                        continue;
                    };
                    if env.op != Op::Receipt {
                        continue;
                    }
                    let Some(events) = receipt_events(&env) else {
                        report
                            .settlement
                            .push(format!("receipt {} has unparseable ids", tx.txid));
                        continue;
                    };
                    for (id, entry) in events {
                        *seen_in_receipts.entry(id).or_default() += 1;
                        match executed.get(&id) {
                            None => report
                                .settlement
                                .push(format!("receipt names unexecuted {id}")),
                            Some(rec)
                                if rec.success != entry.success
                                    || rec.return_value != entry.return_value =>
                            {
                                report.settlement.push(format!(
                                    "receipt outcome for {id} differs from execution"
                                ))
                            }
                            Some(_) => {}
                        }
                    }
                }
            }
        }
        let unmined: BTreeSet<InscriptionId> = self
            .receipts
            .iter()
            .filter(|r| r.mined_height.is_none() && chain.tx_height(&r.txid).is_none())
            .flat_map(|r| r.events.keys().copied())
            .collect();
        for id in executed.keys() {
            let count = seen_in_receipts.get(id).copied().unwrap_or(0);
            if count > 1 || (count == 0 && !unmined.contains(id)) {
                report
                    .settlement
                    .push(format!("{id} appears in {count} mined receipts"));
            }
        }

        // Value conservation, per inscription and in aggregate.
        for rec in executed.values() {
            let credited: u64 = rec.credits.values().sum();
            if rec.post_fee_value + credited != rec.value || credited != rec.fee {
                report.conservation.push(format!(
                    "{}: value {} != post-fee {} + credits {}",
                    rec.id, rec.value, rec.post_fee_value, credited
                ));
            }
        }
        let ledger: u64 = self.fee_ledger.values().sum();
        if ledger + self.receipt_costs != self.fees_collected {
            report.conservation.push(format!(
                "fee ledger {ledger} + receipt costs {} != collected {}",
                self.receipt_costs, self.fees_collected
            ));
        }

        // Fairness: execution order is ordering-key order within each epoch.
        for e in &self.epochs {
            if e.executions
                .windows(2)
                .any(|w| (w[0].ordering_key, w[0].id) > (w[1].ordering_key, w[1].id))
            {
                report
                    .ordering
                    .push(format!("epoch at {} executed out of order", e.height));
            }
        }

        // Liveness: receipts mined within one lag of the epoch boundary.
        let eps = self.config.epsilon;
        for r in &self.receipts {
            let Some(mined) = r.mined_height.or_else(|| chain.tx_height(&r.txid)) else {
                continue;
            };
            for id in r.events.keys() {
                let Some(&h) = self.included_at.get(id) else {
                    continue;
                };
                let bound = h.div_ceil(eps) * eps + self.config.receipt_lag;
                if mined > bound {
                    report.liveness.push(format!(
                        "{id} included at {h}, receipted at {mined} > {bound}"
                    ));
                }
            }
        }

        // Token contracts: conservation, and state equal to a replay of
        // the executed bundle log with no other source of change.
        let mut replayed: BTreeMap<String, Brc20Registry> = BTreeMap::new();
        let mut fee_replay: BTreeMap<String, BTreeMap<String, BTreeMap<String, u64>>> =
            BTreeMap::new();
        for e in &self.epochs {
            for rec in &e.executions {
                let Ok(contract) = evm.contract(&rec.c_addr) else {
                    continue;
                };
                if contract.storage.registry().is_none() {
                    continue;
                }
                let reg = replayed.entry(rec.c_addr.clone()).or_default();
                let ok = replay_token_call(reg, rec, contract.template == Template::Stablecoin);
                if ok != rec.success {
                    report.state.push(format!(
                        "{}: replay outcome {ok} != recorded {}",
                        rec.id, rec.success
                    ));
                }
                if contract.template.manages_tokens() && rec.fee > 0 {
                    let tick = rec
                        .args
                        .iter()
                        .find(|(k, _)| k == "tick")
                        .map(|(_, v)| v.clone())
                        .unwrap_or_default();
                    for (addr, share) in rec.credits.iter().filter(|(_, v)| **v > 0) {
                        *fee_replay
                            .entry(rec.c_addr.clone())
                            .or_default()
                            .entry(addr.clone())
                            .or_default()
                            .entry(tick.clone())
                            .or_default() += share;
                    }
                }
            }
        }
        for contract in evm.contracts() {
            let Some(registry) = contract.storage.registry() else {
                continue;
            };
            if let Err(e) = registry.check_invariants() {
                report.state.push(format!("{}: {e}", contract.c_addr));
            }
            let expected = replayed.remove(&contract.c_addr).unwrap_or_default();
            if *registry != expected {
                report.state.push(format!(
                    "{}: token state differs from bundle replay",
                    contract.c_addr
                ));
            }
            let expected_fees = fee_replay.remove(&contract.c_addr).unwrap_or_default();
            if contract.fee_balances != expected_fees {
                report.state.push(format!(
                    "{}: fee balances differ from credit log",
                    contract.c_addr
                ));
            }
        }
        report
    }
}

/// Equal split; the remainder goes to `leader`.
pub fn split_fee<'a>(
    fee: u64,
    validators: impl Iterator<Item = &'a str>,
    leader: &str,
) -> BTreeMap<String, u64> {
    let addrs: Vec<&str> = validators.collect();
    let mut credits: BTreeMap<String, u64> = BTreeMap::new();
    if addrs.is_empty() {
        return credits;
    }
    let share = fee / addrs.len() as u64;
    let remainder = fee % addrs.len() as u64;
    for a in &addrs {
        credits.insert(a.to_string(), share);
    }
    let to = if addrs.contains(&leader) {
        leader
    } else {
        addrs[0]
    };
    *credits.get_mut(to).expect("present") += remainder;
    credits
}

fn replay_token_call(reg: &mut Brc20Registry, rec: &ExecutionRecord, needs_backing: bool) -> bool {
    let arg = |k: &str| {
        rec.args
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.as_str())
    };
    let num = |k: &str| arg(k).and_then(|v| v.parse::<crate::brc20::Amount>().ok());
    let Some(tick) = arg("tick") else {
        return false;
    };
    let mut scratch = reg.clone();
    let ok = match rec.function.as_str() {
        "deploy" => match (num("max"), num("lim")) {
            (Some(max), Some(lim)) => scratch.apply_deploy(tick, max, lim).is_ok(),
            _ => false,
        },
        "mint" => num("amt").is_some_and(|amt| scratch.apply_mint(tick, &rec.caller, &amt).is_ok()),
        "transfer" => num("amt").is_some_and(|amt| {
            scratch
                .apply_transfer(tick, &rec.caller, &rec.recipient, &amt)
                .is_ok()
        }),
        _ => false,
    };
    let ok = ok && !(needs_backing && rec.function == "mint" && rec.post_fee_value == 0);
    if ok {
        *reg = scratch;
    }
    ok
}

/// Property violations found by [`Bridge::audit`]; empty means clean.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub settlement: Vec<String>,
    pub conservation: Vec<String>,
    pub ordering: Vec<String>,
    pub liveness: Vec<String>,
    pub state: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations().next().is_none()
    }

    pub fn violations(&self) -> impl Iterator<Item = &String> {
        self.settlement
            .iter()
            .chain(&self.conservation)
            .chain(&self.ordering)
            .chain(&self.liveness)
            .chain(&self.state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        let five: Vec<String> = (0..5).map(|i| format!("v{i}")).collect();
        let c = split_fee(50, five.iter().map(String::as_str), "v3");
        assert!(c.values().all(|v| *v == 10));

        let three = ["alice", "bob", "carol"];
        let c = split_fee(50, three.into_iter(), "bob");
        assert_eq!(c["alice"], 16);
        assert_eq!(c["bob"], 18);
        assert_eq!(c.values().sum::<u64>(), 50);

        assert!(split_fee(50, std::iter::empty(), "x").is_empty());
    }

    #[test]
    fn zero_epsilon_rejected() {
        let cfg = BridgeConfig {
            epsilon: 0,
            ..BridgeConfig::default()
        };
        assert_eq!(
            Bridge::new(cfg, 0, 1).unwrap_err(),
            BridgeError::ZeroEpsilon
        );
    }
}
