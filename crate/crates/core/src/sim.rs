//! One simulated deployment: UTXO chain, contract platform, committee and
//! bridge, advanced block by block.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{
    AuditReport, Bridge, BridgeConfig, BridgeError, Dropped, EpochReport, ReceiptRecord,
};
use crate::btc::{BtcChain, ChainConfig, ChainError};
use crate::committee::{Committee, CommitteeConfig, CommitteeError, ValidatorStatus};
use crate::crypto::{Digest, SecretKey};
use crate::evm::{EvmError, EvmSim, GasSchedule, StateSnapshot, Template};
use crate::inscription::{
    function_signature, serialize_inscription, CodecError, Envelope, InscriptionId, Op, Protocol,
};
use crate::pbft::Behavior;
use crate::units::Eth;

/// Sats carried by a registration inscription.
const REGISTRATION_VALUE: u64 = 546;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub chain: ChainConfig,
    pub gas: GasSchedule,
    pub committee: CommitteeConfig,
    pub bridge: BridgeConfig,
}

impl SimConfig {
    /// Digest of the canonical JSON form; printed next to every result.
    pub fn digest(&self) -> Digest {
        config_digest(self)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.gas.validate()?;
        if self.bridge.epsilon == 0 {
            return Err(SimError::Bridge(BridgeError::ZeroEpsilon));
        }
        Ok(())
    }
}

pub fn config_digest<T: Serialize>(config: &T) -> Digest {
    Digest::of(&serde_json::to_vec(config).expect("configs serialize"))
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Evm(#[from] EvmError),
    #[error(transparent)]
    Committee(#[from] CommitteeError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("{0}")]
    Invalid(String),
}

/// Validator index → injected behavior.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FaultPlan(pub BTreeMap<usize, Behavior>);

impl FaultPlan {
    pub fn behavior(&self, index: usize) -> Behavior {
        self.0.get(&index).copied().unwrap_or_default()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromStr for FaultPlan {
    type Err = String;

    /// `"1:silent,4:equivocating"`; an empty string is the honest plan.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut plan = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (idx, behavior) = part
                .split_once(':')
                .ok_or_else(|| format!("fault entry {part:?} is not index:behavior"))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| format!("bad validator index in {part:?}"))?;
            let behavior = match behavior.trim() {
                "honest" => Behavior::Honest,
                "silent" => Behavior::Silent,
                "equivocating" => Behavior::Equivocating,
                other => return Err(format!("unknown behavior {other:?}")),
            };
            plan.insert(idx, behavior);
        }
        Ok(FaultPlan(plan))
    }
}

impl fmt::Display for FaultPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(i, b)| format!("{i}:{}", format!("{b:?}").to_lowercase()))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enrolment {
    pub btc_addr: String,
    pub eth_addr: String,
    pub registration: InscriptionId,
    pub behavior: Behavior,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatorSummary {
    pub btc_addr: String,
    pub eth_addr: String,
    pub deposit: Eth,
    pub status: ValidatorStatus,
}

/// Everything a run produced, in deterministic order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config_digest: Digest,
    pub tip_height: u64,
    pub formed_at: Option<u64>,
    pub validators: Vec<ValidatorSummary>,
    pub rejected: Vec<(String, String)>,
    pub epochs: Vec<EpochReport>,
    pub receipts: Vec<ReceiptRecord>,
    pub dropped: Vec<Dropped>,
    pub fee_ledger: BTreeMap<String, u64>,
    pub contracts: Vec<StateSnapshot>,
    pub audit: AuditReport,
}

#[derive(Debug)]
pub struct Simulation {
    config: SimConfig,
    pub chain: BtcChain,
    pub evm: EvmSim,
    pub committee: Committee,
    deposit_contract: String,
    enrolments: Vec<Enrolment>,
    rejected: Vec<(String, String)>,
    bridge: Option<Bridge>,
    formed_at: Option<u64>,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let mut evm = EvmSim::new(config.gas.clone());
        let deposit_contract = evm.deploy_contract(Template::Deposit, "middleware");
        Ok(Simulation {
            chain: BtcChain::new(config.chain.clone()),
            evm,
            committee: Committee::new(config.committee.clone()),
            config,
            deposit_contract,
            enrolments: Vec::new(),
            rejected: Vec::new(),
            bridge: None,
            formed_at: None,
        })
    }

    /// A simulation whose committee of `n` validators is already formed.
    pub fn with_committee(
        config: SimConfig,
        n: usize,
        faults: &FaultPlan,
    ) -> Result<Self, SimError> {
        let mut config = config;
        config.committee.min_committee_size = n;
        let mut sim = Simulation::new(config)?;
        let deposit = sim.config.committee.deposit_threshold;
        for i in 0..n {
            sim.enrol_validator(
                &format!("btc-v{i}"),
                &format!("0xv{i:039}"),
                deposit,
                faults.behavior(i),
            )?;
        }
        while !sim.is_formed() {
            sim.step()?;
            if sim.chain.tip_height() > 10 * sim.chain.config().finality_depth + 10 {
                return Err(SimError::Invalid("committee did not form".into()));
            }
        }
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn deposit_contract(&self) -> &str {
        &self.deposit_contract
    }

    pub fn bridge(&self) -> Option<&Bridge> {
        self.bridge.as_ref()
    }

    pub fn is_formed(&self) -> bool {
        self.bridge.is_some()
    }

    pub fn formed_at(&self) -> Option<u64> {
        self.formed_at
    }

    pub fn enrolments(&self) -> &[Enrolment] {
        &self.enrolments
    }

    pub fn fund(&mut self, addr: &str, sats: u64) {
        self.chain.faucet(addr, sats);
    }

    pub fn deploy_contract(&mut self, template: Template, owner: &str) -> String {
        self.evm.deploy_contract(template, owner)
    }

    /// Inscribes a registration and deposits `deposit_eth` for it.
    pub fn enrol_validator(
        &mut self,
        btc_addr: &str,
        eth_addr: &str,
        deposit_eth: u64,
        behavior: Behavior,
    ) -> Result<InscriptionId, SimError> {
        let env = Envelope::new(Protocol::Middleware, Op::Registration)
            .with_signature(function_signature("registration"))
            .with_field("tick", "eth")
            .with_field("max", deposit_eth.to_string())
            .with_c_addr(self.deposit_contract.clone())
            .with_field("eth_addr", eth_addr);
        self.chain.faucet(btc_addr, REGISTRATION_VALUE);
        let txid = self.chain.inscribe(
            btc_addr,
            btc_addr,
            REGISTRATION_VALUE,
            serialize_inscription(&env)?,
        )?;
        let id = InscriptionId::new(txid, 0);
        self.evm.register_validator_onchain(
            &self.deposit_contract,
            eth_addr,
            btc_addr,
            Eth::from_eth(deposit_eth),
            id,
        )?;
        self.enrolments.push(Enrolment {
            btc_addr: btc_addr.into(),
            eth_addr: eth_addr.into(),
            registration: id,
            behavior,
        });
        Ok(id)
    }

    /// Inscribes `env` from `sender`, paying `value` sats to `recipient`.
    pub fn inscribe(
        &mut self,
        sender: &str,
        recipient: &str,
        env: &Envelope,
        value: u64,
    ) -> Result<InscriptionId, SimError> {
        let txid = self
            .chain
            .inscribe(sender, recipient, value, serialize_inscription(env)?)?;
        Ok(InscriptionId::new(txid, 0))
    }

    /// Mines one block and lets the middleware react to it.
    pub fn step(&mut self) -> Result<Vec<EpochReport>, SimError> {
        self.chain.mine_block();
        match &mut self.bridge {
            Some(bridge) => Ok(bridge.sync(&mut self.chain, &mut self.evm, &mut self.committee)?),
            None => {
                self.try_register();
                Ok(Vec::new())
            }
        }
    }

    pub fn run_blocks(&mut self, n: u64) -> Result<Vec<EpochReport>, SimError> {
        let mut out = Vec::new();
        for _ in 0..n {
            out.extend(self.step()?);
        }
        Ok(out)
    }

    /// Runs until every bundled inscription is receipted and mined, or
    /// `max_blocks` pass.
    pub fn settle(&mut self, max_blocks: u64) -> Result<Vec<EpochReport>, SimError> {
        let mut out = Vec::new();
        for _ in 0..max_blocks {
            let idle = self.chain.mempool_len() == 0
                && self.bridge.as_ref().is_none_or(|b| b.pending().is_empty());
            if idle {
                break;
            }
            out.extend(self.step()?);
        }
        Ok(out)
    }

    fn try_register(&mut self) {
        let admitted: Vec<String> = self
            .committee
            .validators()
            .iter()
            .map(|v| v.eth_addr.clone())
            .collect();
        let seed = self.config.seed;
        for e in self.enrolments.clone() {
            if admitted.contains(&e.eth_addr) || self.rejected.iter().any(|(a, _)| *a == e.eth_addr)
            {
                continue;
            }
            let key = SecretKey::derive(seed, &format!("validator:{}", e.eth_addr));
            match self.committee.register_validator(
                &self.chain,
                &self.evm,
                &self.deposit_contract,
                &e.btc_addr,
                &e.eth_addr,
                e.registration,
                key,
            ) {
                Ok(_) => {
                    self.committee.set_behavior(&e.eth_addr, e.behavior);
                }
                Err(CommitteeError::NotFinalized { .. }) => {}
                Err(err) => self.rejected.push((e.eth_addr.clone(), err.to_string())),
            }
        }
        if self.committee.is_formed() {
            let tip = self.chain.tip_height();
            self.evm.install_authority(self.committee.authority());
            self.bridge = Some(
                Bridge::new(self.config.bridge.clone(), self.config.seed, tip + 1)
                    .expect("epsilon validated"),
            );
            self.formed_at = Some(tip);
        }
    }

    pub fn audit(&self) -> AuditReport {
        self.bridge
            .as_ref()
            .map(|b| b.audit(&self.chain, &self.evm))
            .unwrap_or_default()
    }

    pub fn report(&self) -> RunReport {
        let bridge = self.bridge.as_ref();
        RunReport {
            seed: self.config.seed,
            config_digest: self.config.digest(),
            tip_height: self.chain.tip_height(),
            formed_at: self.formed_at,
            validators: self
                .committee
                .validators()
                .iter()
                .map(|v| ValidatorSummary {
                    btc_addr: v.btc_addr.clone(),
                    eth_addr: v.eth_addr.clone(),
                    deposit: v.deposit,
                    status: v.status,
                })
                .collect(),
            rejected: self.rejected.clone(),
            epochs: bridge.map(|b| b.epochs().to_vec()).unwrap_or_default(),
            receipts: bridge.map(|b| b.receipts().to_vec()).unwrap_or_default(),
            dropped: bridge.map(|b| b.dropped().to_vec()).unwrap_or_default(),
            fee_ledger: bridge.map(|b| b.fee_ledger().clone()).unwrap_or_default(),
            contracts: self
                .evm
                .contracts()
                .map(|c| {
                    self.evm
                        .get_state(&c.c_addr)
                        .expect("listed contract exists")
                })
                .collect(),
            audit: self.audit(),
        }
    }

    /// One JSON line per published receipt.
    pub fn receipt_log(&self) -> String {
        receipt_log(
            self.bridge
                .as_ref()
                .map(|b| b.receipts())
                .unwrap_or_default(),
        )
    }
}

/// One JSON line per receipt, in publication order.
pub fn receipt_log(receipts: &[ReceiptRecord]) -> String {
    let mut out = String::new();
    for r in receipts {
        out.push_str(&serde_json::to_string(r).expect("receipts serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fault_plan_text() {
        let plan: FaultPlan = "1:silent, 4:equivocating".parse().unwrap();
        assert_eq!(plan.behavior(1), Behavior::Silent);
        assert_eq!(plan.behavior(4), Behavior::Equivocating);
        assert_eq!(plan.behavior(0), Behavior::Honest);
        assert_eq!(plan.to_string(), "1:silent,4:equivocating");
        assert!("".parse::<FaultPlan>().unwrap().is_empty());
        assert!("x:silent".parse::<FaultPlan>().is_err());
        assert!("1:lazy".parse::<FaultPlan>().is_err());
    }

    #[test]
    fn committee_forms_after_finality() {
        let sim =
            Simulation::with_committee(SimConfig::default(), 4, &FaultPlan::default()).unwrap();
        assert_eq!(sim.committee.active_count(), 4);
        // Registrations mined at height 1 are final at height 6.
        assert_eq!(sim.formed_at(), Some(6));
        assert_eq!(sim.bridge().unwrap().next_height(), 7);
    }

    #[test]
    fn quiescent_chain_changes_nothing() {
        let mut sim =
            Simulation::with_committee(SimConfig::default(), 4, &FaultPlan::default()).unwrap();
        let before: Vec<_> = sim.report().contracts;
        sim.run_blocks(60).unwrap();
        let report = sim.report();
        assert_eq!(report.contracts, before);
        assert!(report.epochs.is_empty() && report.receipts.is_empty());
        assert!(report.audit.is_clean());
    }
}
