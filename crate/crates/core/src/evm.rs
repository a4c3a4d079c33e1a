//! Account-model contract platform.
//!
//! Contracts are instances of a fixed set of templates. Every state change
//! to an existing contract goes through [`EvmSim::invoke`] or
//! [`EvmSim::credit_fees`], both of which demand a [`QuorumProof`] over the
//! exact request digest from the installed validator [`Authority`]. The one
//! exception is [`EvmSim::register_validator_onchain`], which models a
//! validator depositing its own ether before any committee exists.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brc20::{Amount, Brc20Error, Brc20Registry};
use crate::crypto::{Digest, DigestBuilder, KeyDirectory, PublicKey, Signature};
use crate::inscription::{function_name, function_signature, Inscription, InscriptionId};
use crate::units::{Eth, Rate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Template {
    Deposit,
    FT,
    NFT,
    Stablecoin,
    Insurance,
    Loan,
    Auction,
    DAO,
}

impl Template {
    pub const ALL: [Template; 8] = [
        Template::Deposit,
        Template::FT,
        Template::NFT,
        Template::Stablecoin,
        Template::Insurance,
        Template::Loan,
        Template::Auction,
        Template::DAO,
    ];

    /// The application templates, cheapest first.
    pub const APPLICATIONS: [Template; 7] = [
        Template::FT,
        Template::Stablecoin,
        Template::NFT,
        Template::Loan,
        Template::Auction,
        Template::Insurance,
        Template::DAO,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::Deposit => "Deposit",
            Template::FT => "FT",
            Template::NFT => "NFT",
            Template::Stablecoin => "Stablecoin",
            Template::Insurance => "Insurance",
            Template::Loan => "Loan",
            Template::Auction => "Auction",
            Template::DAO => "DAO",
        }
    }

    pub fn functions(self) -> &'static [&'static str] {
        match self {
            Template::Deposit => &["registration"],
            Template::FT | Template::Stablecoin | Template::NFT => &["deploy", "mint", "transfer"],
            Template::Loan => &["deploy", "borrow", "repay"],
            Template::Auction => &["deploy", "bid", "settle"],
            Template::Insurance => &["deploy", "insure", "claim"],
            Template::DAO => &["deploy", "propose", "vote"],
        }
    }

    pub fn interfaces(self) -> BTreeSet<String> {
        self.functions()
            .iter()
            .map(|f| function_signature(f))
            .collect()
    }

    /// Token-managing templates keep a per-address fee balance map.
    pub fn manages_tokens(self) -> bool {
        matches!(self, Template::FT | Template::Stablecoin | Template::NFT)
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Template::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown template {s:?}"))
    }
}

/// Per-template execution cost and the inscription fee rate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasSchedule {
    pub base_costs: BTreeMap<Template, u64>,
    pub fee_rate: Rate,
}

fn default_fee_rate() -> Rate {
    Rate::from_ppm(50_000).expect("5% is a valid rate")
}

impl Default for GasSchedule {
    fn default() -> Self {
        let base_costs = BTreeMap::from([
            (Template::Deposit, 25),
            (Template::FT, 21),
            (Template::Stablecoin, 34),
            (Template::NFT, 55),
            (Template::Loan, 68),
            (Template::Auction, 80),
            (Template::Insurance, 92),
            (Template::DAO, 120),
        ]);
        GasSchedule {
            base_costs,
            fee_rate: default_fee_rate(),
        }
    }
}

impl GasSchedule {
    pub fn cost(&self, template: Template) -> u64 {
        self.base_costs.get(&template).copied().unwrap_or(0)
    }

    /// Checks the relative cost ordering of the application templates and
    /// that the fee rate is below one.
    pub fn validate(&self) -> Result<(), EvmError> {
        use Template::*;
        for t in Template::ALL {
            if !self.base_costs.contains_key(&t) {
                return Err(EvmError::InvalidSchedule(format!("missing cost for {t}")));
            }
        }
        let c = |t| self.cost(t);
        let chain = [
            (FT, Stablecoin, true),
            (Stablecoin, NFT, true),
            (NFT, Loan, false),
            (Loan, Auction, false),
            (Auction, Insurance, true),
            (Insurance, DAO, false),
        ];
        for (lo, hi, strict) in chain {
            let ok = if strict {
                c(lo) < c(hi)
            } else {
                c(lo) <= c(hi)
            };
            if !ok {
                let rel = if strict { "<" } else { "<=" };
                return Err(EvmError::InvalidSchedule(format!(
                    "expected cost({lo}) {rel} cost({hi}), got {} and {}",
                    c(lo),
                    c(hi)
                )));
            }
        }
        if self.fee_rate >= Rate::ONE {
            return Err(EvmError::InvalidSchedule("fee rate must be below 1".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EvmError> {
        let schedule: GasSchedule =
            toml::from_str(text).map_err(|e| EvmError::InvalidSchedule(e.to_string()))?;
        schedule.validate()?;
        Ok(schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvmError {
    #[error("unknown contract {0}")]
    UnknownContract(String),
    #[error("function {function:?} is not an interface of {c_addr}")]
    NoSuchInterface { c_addr: String, function: String },
    #[error("quorum not met: {valid} valid signatures, {threshold} required")]
    QuorumNotMet { valid: usize, threshold: usize },
    #[error("no validator authority installed")]
    NoAuthority,
    #[error("quorum proof was already consumed")]
    ProofReplayed,
    #[error("contract {c_addr} is a {actual}, expected {expected}")]
    WrongTemplate {
        c_addr: String,
        expected: Template,
        actual: Template,
    },
    #[error("invalid gas schedule: {0}")]
    InvalidSchedule(String),
}

impl EvmError {
    pub fn name(&self) -> &'static str {
        match self {
            EvmError::UnknownContract(_) => "UnknownContract",
            EvmError::NoSuchInterface { .. } => "NoSuchInterface",
            EvmError::QuorumNotMet { .. } => "QuorumNotMet",
            EvmError::NoAuthority => "NoAuthority",
            EvmError::ProofReplayed => "ProofReplayed",
            EvmError::WrongTemplate { .. } => "WrongTemplate",
            EvmError::InvalidSchedule(_) => "InvalidSchedule",
        }
    }
}

/// Template-level failure; recorded in an event, never surfaced as an error.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error(transparent)]
    Token(#[from] Brc20Error),
    #[error("missing argument {0:?}")]
    MissingArgument(&'static str),
    #[error("invalid argument {0:?}")]
    InvalidArgument(&'static str),
    #[error("{0}")]
    Rejected(&'static str),
}

impl ExecError {
    pub fn name(&self) -> &'static str {
        match self {
            ExecError::Token(e) => e.name(),
            ExecError::MissingArgument(_) => "MissingArgument",
            ExecError::InvalidArgument(_) => "InvalidArgument",
            ExecError::Rejected(reason) => reason,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub inscription_id: InscriptionId,
    pub function: String,
    pub success: bool,
    pub return_value: String,
    pub gas_used: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepositEntry {
    pub btc_addr: String,
    pub deposit: Eth,
    pub registration: InscriptionId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NftCollection {
    pub max: u64,
    pub owners: BTreeMap<u64, String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoanPool {
    #[serde(with = "crate::amount_serde")]
    pub credit_line: Amount,
    #[serde(with = "crate::amount_serde::map")]
    pub debts: BTreeMap<String, Amount>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuctionLot {
    pub highest_bidder: Option<String>,
    #[serde(with = "crate::amount_serde")]
    pub highest_bid: Amount,
    pub bids: u64,
    pub settled: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsurancePool {
    #[serde(with = "crate::amount_serde")]
    pub coverage_cap: Amount,
    #[serde(with = "crate::amount_serde::map")]
    pub premiums: BTreeMap<String, Amount>,
    pub claims: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dao {
    /// proposal id → voters
    pub proposals: BTreeMap<u64, BTreeSet<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContractStorage {
    Deposit {
        validators: BTreeMap<String, DepositEntry>,
    },
    Token {
        registry: Brc20Registry,
    },
    Stablecoin {
        registry: Brc20Registry,
        collateral: BTreeMap<String, u64>,
    },
    Nft {
        collections: BTreeMap<String, NftCollection>,
    },
    Loan {
        pools: BTreeMap<String, LoanPool>,
    },
    Auction {
        lots: BTreeMap<String, AuctionLot>,
    },
    Insurance {
        pools: BTreeMap<String, InsurancePool>,
    },
    Dao {
        daos: BTreeMap<String, Dao>,
    },
}

impl ContractStorage {
    fn empty(template: Template) -> Self {
        match template {
            Template::Deposit => ContractStorage::Deposit {
                validators: BTreeMap::new(),
            },
            Template::FT => ContractStorage::Token {
                registry: Brc20Registry::new(),
            },
            Template::Stablecoin => ContractStorage::Stablecoin {
                registry: Brc20Registry::new(),
                collateral: BTreeMap::new(),
            },
            Template::NFT => ContractStorage::Nft {
                collections: BTreeMap::new(),
            },
            Template::Loan => ContractStorage::Loan {
                pools: BTreeMap::new(),
            },
            Template::Auction => ContractStorage::Auction {
                lots: BTreeMap::new(),
            },
            Template::Insurance => ContractStorage::Insurance {
                pools: BTreeMap::new(),
            },
            Template::DAO => ContractStorage::Dao {
                daos: BTreeMap::new(),
            },
        }
    }

    /// The token registry, for templates that keep one.
    pub fn registry(&self) -> Option<&Brc20Registry> {
        match self {
            ContractStorage::Token { registry } | ContractStorage::Stablecoin { registry, .. } => {
                Some(registry)
            }
            _ => None,
        }
    }
}

/// A contract call derived from a bundled inscription.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Call {
    pub c_addr: String,
    /// Full interface signature text, e.g. `mint(...) return (...)`.
    pub function: String,
    pub inscription_id: InscriptionId,
    pub caller: String,
    pub recipient: String,
    /// Satoshis delivered with the call, after fee deduction.
    pub value: u64,
    pub args: IndexMap<String, String>,
}

impl Call {
    /// `None` when the inscription names no contract.
    pub fn from_inscription(ins: &Inscription, value: u64) -> Option<Call> {
        Some(Call {
            c_addr: ins.c_addr()?.to_string(),
            function: ins.envelope.invoked_signature(),
            inscription_id: ins.id,
            caller: ins.origin.clone(),
            recipient: ins.recipient.clone(),
            value,
            args: ins.envelope.fields.clone(),
        })
    }

    pub fn digest(&self) -> Digest {
        let mut b = DigestBuilder::tagged("invoke")
            .str(&self.c_addr)
            .str(&self.function)
            .digest(&self.inscription_id.txid)
            .u64(u64::from(self.inscription_id.vout))
            .str(&self.caller)
            .str(&self.recipient)
            .u64(self.value)
            .u64(self.args.len() as u64);
        for (k, v) in &self.args {
            b = b.str(k).str(v);
        }
        b.finish()
    }

    fn arg(&self, key: &'static str) -> Result<&str, ExecError> {
        self.args
            .get(key)
            .map(String::as_str)
            .ok_or(ExecError::MissingArgument(key))
    }

    fn amount(&self, key: &'static str) -> Result<Amount, ExecError> {
        self.arg(key)?
            .parse()
            .map_err(|_| ExecError::InvalidArgument(key))
    }
}

/// Digest validators sign to authorize a fee credit.
pub fn fee_credit_digest(
    c_addr: &str,
    id: &InscriptionId,
    tick: &str,
    credits: &BTreeMap<String, u64>,
) -> Digest {
    let mut b = DigestBuilder::tagged("fee-credit")
        .str(c_addr)
        .digest(&id.txid)
        .u64(u64::from(id.vout))
        .str(tick)
        .u64(credits.len() as u64);
    for (addr, amount) in credits {
        b = b.str(addr).u64(*amount);
    }
    b.finish()
}

/// Signatures over one digest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumProof {
    pub digest: Digest,
    pub signatures: Vec<(PublicKey, Signature)>,
}

/// The validator set the platform accepts quorum proofs from.
#[derive(Clone, Debug)]
pub struct Authority {
    pub members: BTreeSet<PublicKey>,
    pub threshold: usize,
    pub keys: KeyDirectory,
}

impl Authority {
    /// Counts distinct members with a valid signature on `expected`.
    pub fn count_valid(&self, proof: &QuorumProof, expected: &Digest) -> usize {
        if proof.digest != *expected {
            return 0;
        }
        let mut signers = BTreeSet::new();
        for (pk, sig) in &proof.signatures {
            if self.members.contains(pk) && self.keys.verify(pk, expected, sig) {
                signers.insert(*pk);
            }
        }
        signers.len()
    }

    pub fn verify(&self, proof: &QuorumProof, expected: &Digest) -> Result<(), EvmError> {
        let valid = self.count_valid(proof, expected);
        if valid >= self.threshold.max(1) {
            Ok(())
        } else {
            Err(EvmError::QuorumNotMet {
                valid,
                threshold: self.threshold.max(1),
            })
        }
    }
}

/// Per-address, per-tick fee balances (Ψ).
pub type FeeBalances = BTreeMap<String, BTreeMap<String, u64>>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractAccount {
    pub c_addr: String,
    pub template: Template,
    pub owner: String,
    pub interfaces: BTreeSet<String>,
    pub storage: ContractStorage,
    pub fee_balances: FeeBalances,
    pub events: Vec<Event>,
}

/// Immutable copy of a contract's state.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub c_addr: String,
    pub template: Template,
    pub interfaces: BTreeSet<String>,
    pub storage: ContractStorage,
    pub last_seq: u64,
}

#[derive(Clone, Debug)]
pub struct EvmSim {
    contracts: BTreeMap<String, ContractAccount>,
    schedule: GasSchedule,
    authority: Option<Authority>,
    consumed: HashSet<Digest>,
    deployments: u64,
}

impl EvmSim {
    pub fn new(schedule: GasSchedule) -> Self {
        EvmSim {
            contracts: BTreeMap::new(),
            schedule,
            authority: None,
            consumed: HashSet::new(),
            deployments: 0,
        }
    }

    pub fn schedule(&self) -> &GasSchedule {
        &self.schedule
    }

    pub fn install_authority(&mut self, authority: Authority) {
        self.authority = Some(authority);
    }

    pub fn authority(&self) -> Option<&Authority> {
        self.authority.as_ref()
    }

    pub fn deploy_contract(&mut self, template: Template, owner: &str) -> String {
        self.deployments += 1;
        let d = DigestBuilder::tagged("contract")
            .str(owner)
            .str(template.name())
            .u64(self.deployments)
            .finish();
        let c_addr = format!("0x{}", &d.to_hex()[..40]);
        self.contracts.insert(
            c_addr.clone(),
            ContractAccount {
                c_addr: c_addr.clone(),
                template,
                owner: owner.to_string(),
                interfaces: template.interfaces(),
                storage: ContractStorage::empty(template),
                fee_balances: BTreeMap::new(),
                events: Vec::new(),
            },
        );
        c_addr
    }

    pub fn contract(&self, c_addr: &str) -> Result<&ContractAccount, EvmError> {
        self.contracts
            .get(c_addr)
            .ok_or_else(|| EvmError::UnknownContract(c_addr.to_string()))
    }

    pub fn contracts(&self) -> impl Iterator<Item = &ContractAccount> {
        self.contracts.values()
    }

    pub fn get_state(&self, c_addr: &str) -> Result<StateSnapshot, EvmError> {
        let c = self.contract(c_addr)?;
        Ok(StateSnapshot {
            c_addr: c.c_addr.clone(),
            template: c.template,
            interfaces: c.interfaces.clone(),
            storage: c.storage.clone(),
            last_seq: c.events.last().map_or(0, |e| e.seq),
        })
    }

    /// Ψ slice of a contract; always empty for templates that manage no tokens.
    pub fn get_balance(&self, c_addr: &str) -> Result<FeeBalances, EvmError> {
        let c = self.contract(c_addr)?;
        Ok(if c.template.manages_tokens() {
            c.fee_balances.clone()
        } else {
            FeeBalances::new()
        })
    }

    pub fn emitted_events(&self, c_addr: &str, since_seq: u64) -> Result<Vec<Event>, EvmError> {
        let c = self.contract(c_addr)?;
        Ok(c.events
            .iter()
            .filter(|e| e.seq > since_seq)
            .cloned()
            .collect())
    }

    fn check_and_consume(
        &mut self,
        proof: &QuorumProof,
        expected: &Digest,
    ) -> Result<(), EvmError> {
        let authority = self.authority.as_ref().ok_or(EvmError::NoAuthority)?;
        authority.verify(proof, expected)?;
        if !self.consumed.insert(*expected) {
            return Err(EvmError::ProofReplayed);
        }
        Ok(())
    }

    pub fn invoke(&mut self, call: &Call, proof: &QuorumProof) -> Result<Event, EvmError> {
        let contract = self.contract(&call.c_addr)?;
        if !contract.interfaces.contains(&call.function) {
            return Err(EvmError::NoSuchInterface {
                c_addr: call.c_addr.clone(),
                function: call.function.clone(),
            });
        }
        let template = contract.template;
        self.check_and_consume(proof, &call.digest())?;

        let gas_used = self.schedule.cost(template);
        let contract = self.contracts.get_mut(&call.c_addr).expect("checked above");
        let mut scratch = contract.storage.clone();
        let (success, return_value) = match execute(&mut scratch, call) {
            Ok(ret) => {
                contract.storage = scratch;
                (true, ret)
            }
            Err(e) => (false, e.name().to_string()),
        };
        Ok(push_event(
            contract,
            call.inscription_id,
            &call.function,
            success,
            return_value,
            gas_used,
        ))
    }

    /// Credits validator fee shares into a token contract's Ψ.
    pub fn credit_fees(
        &mut self,
        c_addr: &str,
        inscription_id: &InscriptionId,
        tick: &str,
        credits: &BTreeMap<String, u64>,
        proof: &QuorumProof,
    ) -> Result<(), EvmError> {
        let template = self.contract(c_addr)?.template;
        if !template.manages_tokens() {
            return Err(EvmError::WrongTemplate {
                c_addr: c_addr.to_string(),
                expected: Template::FT,
                actual: template,
            });
        }
        self.check_and_consume(
            proof,
            &fee_credit_digest(c_addr, inscription_id, tick, credits),
        )?;
        let contract = self.contracts.get_mut(c_addr).expect("checked above");
        for (addr, amount) in credits {
            *contract
                .fee_balances
                .entry(addr.clone())
                .or_default()
                .entry(tick.to_string())
                .or_default() += amount;
        }
        Ok(())
    }

    /// Validator self-registration into a deposit contract.
    pub fn register_validator_onchain(
        &mut self,
        deposit_contract: &str,
        eth_addr: &str,
        btc_addr: &str,
        deposit: Eth,
        registration: InscriptionId,
    ) -> Result<Event, EvmError> {
        let gas_used = self.schedule.cost(Template::Deposit);
        let contract = self
            .contracts
            .get_mut(deposit_contract)
            .ok_or_else(|| EvmError::UnknownContract(deposit_contract.to_string()))?;
        let ContractStorage::Deposit { validators } = &mut contract.storage else {
            return Err(EvmError::WrongTemplate {
                c_addr: deposit_contract.to_string(),
                expected: Template::Deposit,
                actual: contract.template,
            });
        };
        let outcome = register_deposit(validators, eth_addr, btc_addr, deposit, registration);
        let (success, ret) = match outcome {
            Ok(r) => (true, r),
            Err(e) => (false, e.name().to_string()),
        };
        let function = function_signature("registration");
        Ok(push_event(
            contract,
            registration,
            &function,
            success,
            ret,
            gas_used,
        ))
    }

    /// Deposit held for `eth_addr` in a deposit contract.
    pub fn get_deposit(&self, deposit_contract: &str, eth_addr: &str) -> Option<&DepositEntry> {
        match &self.contracts.get(deposit_contract)?.storage {
            ContractStorage::Deposit { validators } => validators.get(eth_addr),
            _ => None,
        }
    }
}

fn push_event(
    contract: &mut ContractAccount,
    inscription_id: InscriptionId,
    function: &str,
    success: bool,
    return_value: String,
    gas_used: u64,
) -> Event {
    let seq = contract.events.last().map_or(1, |e| e.seq + 1);
    let event = Event {
        seq,
        inscription_id,
        function: function.to_string(),
        success,
        return_value,
        gas_used,
    };
    contract.events.push(event.clone());
    event
}

fn register_deposit(
    validators: &mut BTreeMap<String, DepositEntry>,
    eth_addr: &str,
    btc_addr: &str,
    deposit: Eth,
    registration: InscriptionId,
) -> Result<String, ExecError> {
    if validators.contains_key(eth_addr) {
        return Err(ExecError::Rejected("DuplicateValidator"));
    }
    if deposit == Eth::ZERO {
        return Err(ExecError::Rejected("ZeroDeposit"));
    }
    validators.insert(
        eth_addr.to_string(),
        DepositEntry {
            btc_addr: btc_addr.to_string(),
            deposit,
            registration,
        },
    );
    Ok(deposit.to_string())
}

fn small(amount: &Amount, key: &'static str) -> Result<u64, ExecError> {
    amount.to_u64().ok_or(ExecError::InvalidArgument(key))
}

/// Template logic. Runs against scratch storage; the caller commits on `Ok`.
fn execute(storage: &mut ContractStorage, call: &Call) -> Result<String, ExecError> {
    let func = function_name(&call.function);
    match storage {
        ContractStorage::Deposit { validators } => {
            let eth_addr = call.arg("eth_addr")?;
            let deposit = small(&call.amount("max")?, "max")?;
            register_deposit(
                validators,
                eth_addr,
                &call.caller,
                Eth::from_eth(deposit),
                call.inscription_id,
            )
        }
        ContractStorage::Token { registry } => token_op(registry, call, func),
        ContractStorage::Stablecoin {
            registry,
            collateral,
        } => {
            let ret = token_op(registry, call, func)?;
            if func == "mint" {
                // Each mint must be backed by delivered sats.
                if call.value == 0 {
                    return Err(ExecError::Rejected("Unbacked"));
                }
                *collateral.entry(call.arg("tick")?.to_string()).or_default() += call.value;
            }
            Ok(ret)
        }
        ContractStorage::Nft { collections } => {
            let tick = call.arg("tick")?;
            match func {
                "deploy" => {
                    if collections.contains_key(tick) {
                        return Err(Brc20Error::DuplicateTick(tick.to_string()).into());
                    }
                    let max = small(&call.amount("max")?, "max")?;
                    collections.insert(
                        tick.to_string(),
                        NftCollection {
                            max,
                            owners: BTreeMap::new(),
                        },
                    );
                    Ok(tick.to_string())
                }
                "mint" => {
                    let col = collections
                        .get_mut(tick)
                        .ok_or_else(|| Brc20Error::UnknownTick(tick.to_string()))?;
                    let id = col.owners.len() as u64;
                    if id >= col.max {
                        return Err(ExecError::Rejected("CollectionFull"));
                    }
                    col.owners.insert(id, call.caller.clone());
                    Ok(id.to_string())
                }
                "transfer" => {
                    let col = collections
                        .get_mut(tick)
                        .ok_or_else(|| Brc20Error::UnknownTick(tick.to_string()))?;
                    let id = small(&call.amount("amt")?, "amt")?;
                    match col.owners.get_mut(&id) {
                        Some(owner) if *owner == call.caller => {
                            owner.clone_from(&call.recipient);
                            Ok(id.to_string())
                        }
                        Some(_) => Err(ExecError::Rejected("NotOwner")),
                        None => Err(ExecError::Rejected("NoSuchToken")),
                    }
                }
                _ => unreachable!("interface membership checked"),
            }
        }
        ContractStorage::Loan { pools } => {
            let tick = call.arg("tick")?;
            if func == "deploy" {
                if pools.contains_key(tick) {
                    return Err(Brc20Error::DuplicateTick(tick.to_string()).into());
                }
                let credit_line = call.amount("max")?;
                pools.insert(
                    tick.to_string(),
                    LoanPool {
                        credit_line,
                        debts: BTreeMap::new(),
                    },
                );
                return Ok(tick.to_string());
            }
            let pool = pools
                .get_mut(tick)
                .ok_or_else(|| Brc20Error::UnknownTick(tick.to_string()))?;
            let amt = call.amount("amt")?;
            let outstanding: Amount = pool.debts.values().sum();
            let debt = pool.debts.entry(call.caller.clone()).or_default();
            match func {
                "borrow" => {
                    if outstanding + &amt > pool.credit_line {
                        return Err(ExecError::Rejected("CreditLineExceeded"));
                    }
                    *debt += amt;
                }
                "repay" => {
                    if *debt < amt {
                        return Err(ExecError::Rejected("Overpayment"));
                    }
                    *debt -= amt;
                }
                _ => unreachable!("interface membership checked"),
            }
            Ok(debt.to_string())
        }
        ContractStorage::Auction { lots } => {
            let tick = call.arg("tick")?;
            if func == "deploy" {
                if lots.contains_key(tick) {
                    return Err(Brc20Error::DuplicateTick(tick.to_string()).into());
                }
                lots.insert(tick.to_string(), AuctionLot::default());
                return Ok(tick.to_string());
            }
            let lot = lots
                .get_mut(tick)
                .ok_or_else(|| Brc20Error::UnknownTick(tick.to_string()))?;
            if lot.settled {
                return Err(ExecError::Rejected("LotSettled"));
            }
            match func {
                "bid" => {
                    let amt = call.amount("amt")?;
                    if amt <= lot.highest_bid {
                        return Err(ExecError::Rejected("BidTooLow"));
                    }
                    lot.highest_bid = amt;
                    lot.highest_bidder = Some(call.caller.clone());
                    lot.bids += 1;
                    Ok(lot.highest_bid.to_string())
                }
                "settle" => {
                    let winner = lot
                        .highest_bidder
                        .clone()
                        .ok_or(ExecError::Rejected("NoBids"))?;
                    lot.settled = true;
                    Ok(winner)
                }
                _ => unreachable!("interface membership checked"),
            }
        }
        ContractStorage::Insurance { pools } => {
            let tick = call.arg("tick")?;
            if func == "deploy" {
                if pools.contains_key(tick) {
                    return Err(Brc20Error::DuplicateTick(tick.to_string()).into());
                }
                let coverage_cap = call.amount("max")?;
                pools.insert(
                    tick.to_string(),
                    InsurancePool {
                        coverage_cap,
                        ..InsurancePool::default()
                    },
                );
                return Ok(tick.to_string());
            }
            let pool = pools
                .get_mut(tick)
                .ok_or_else(|| Brc20Error::UnknownTick(tick.to_string()))?;
            let amt = call.amount("amt")?;
            match func {
                "insure" => {
                    let premium = pool.premiums.entry(call.caller.clone()).or_default();
                    *premium += amt;
                    Ok(premium.to_string())
                }
                "claim" => {
                    let insured = pool
                        .premiums
                        .get(&call.caller)
                        .is_some_and(|p| !p.is_zero());
                    if !insured {
                        return Err(ExecError::Rejected("NotInsured"));
                    }
                    if amt > pool.coverage_cap {
                        return Err(ExecError::Rejected("ClaimAboveCoverage"));
                    }
                    pool.claims += 1;
                    Ok(pool.claims.to_string())
                }
                _ => unreachable!("interface membership checked"),
            }
        }
        ContractStorage::Dao { daos } => {
            let tick = call.arg("tick")?;
            if func == "deploy" {
                if daos.contains_key(tick) {
                    return Err(Brc20Error::DuplicateTick(tick.to_string()).into());
                }
                daos.insert(tick.to_string(), Dao::default());
                return Ok(tick.to_string());
            }
            let dao = daos
                .get_mut(tick)
                .ok_or_else(|| Brc20Error::UnknownTick(tick.to_string()))?;
            match func {
                "propose" => {
                    let id = dao.proposals.len() as u64;
                    dao.proposals.insert(id, BTreeSet::new());
                    Ok(id.to_string())
                }
                "vote" => {
                    let id = small(&call.amount("amt")?, "amt")?;
                    let voters = dao
                        .proposals
                        .get_mut(&id)
                        .ok_or(ExecError::Rejected("NoSuchProposal"))?;
                    if !voters.insert(call.caller.clone()) {
                        return Err(ExecError::Rejected("AlreadyVoted"));
                    }
                    Ok(voters.len().to_string())
                }
                _ => unreachable!("interface membership checked"),
            }
        }
    }
}

fn token_op(registry: &mut Brc20Registry, call: &Call, func: &str) -> Result<String, ExecError> {
    let tick = call.arg("tick")?;
    match func {
        "deploy" => {
            registry.apply_deploy(tick, call.amount("max")?, call.amount("lim")?)?;
            Ok(tick.to_string())
        }
        "mint" => {
            let amt = call.amount("amt")?;
            registry.apply_mint(tick, &call.caller, &amt)?;
            Ok(registry.balance(tick, &call.caller).to_string())
        }
        "transfer" => {
            let amt = call.amount("amt")?;
            registry.apply_transfer(tick, &call.caller, &call.recipient, &amt)?;
            Ok(registry.balance(tick, &call.caller).to_string())
        }
        _ => unreachable!("interface membership checked"),
    }
}

/// Decimal string of an amount; used when building call arguments.
pub fn amount_arg(v: impl Into<BigUint>) -> String {
    v.into().to_string()
}
