//! Validator set: deposit-backed registration, consensus rounds, quorum
//! signatures, and slashing.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::btc::BtcChain;
use crate::crypto::{Digest, KeyDirectory, PublicKey, SecretKey, Signature};
use crate::evm::{Authority, EvmSim, QuorumProof};
use crate::inscription::{parse_inscription, InscriptionId, Op};
use crate::pbft::{
    self, forged_digest, leader_index, quorum_size, Behavior, ConsensusError, Evidence,
    MessageCounts, NetworkConfig, Replica, RoundOutcome,
};
use crate::units::{Eth, Rate};

/// Below this many active validators the committee acts as a single
/// trusted signer and runs no consensus rounds.
pub const BFT_MIN_SIZE: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommitteeConfig {
    /// Registration completes once this many validators are active.
    pub min_committee_size: usize,
    /// Minimum deposit `k`, in whole ETH.
    pub deposit_threshold: u64,
    /// Fraction `p` of the deposit confiscated per offence.
    pub penalty_rate: Rate,
    pub network: NetworkConfig,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        CommitteeConfig {
            min_committee_size: BFT_MIN_SIZE,
            deposit_threshold: 32,
            penalty_rate: Rate::from_ppm(500_000).expect("valid"),
            network: NetworkConfig::default(),
        }
    }
}

impl CommitteeConfig {
    pub fn threshold(&self) -> Eth {
        Eth::from_eth(self.deposit_threshold)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidatorStatus {
    Active,
    Slashed,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidatorRecord {
    pub btc_addr: String,
    pub eth_addr: String,
    pub deposit: Eth,
    pub status: ValidatorStatus,
    pub public_key: PublicKey,
    pub registration: InscriptionId,
    /// Injected fault behavior; honest unless a fault plan says otherwise.
    pub behavior: Behavior,
    #[serde(skip)]
    key: SecretKey,
}

impl ValidatorRecord {
    pub fn is_active(&self) -> bool {
        self.status == ValidatorStatus::Active
    }

    fn partial_signature(&self, digest: &Digest) -> Option<(PublicKey, Signature)> {
        match self.behavior {
            Behavior::Honest => Some((self.public_key, self.key.sign(digest))),
            Behavior::Silent => None,
            Behavior::Equivocating => {
                Some((self.public_key, self.key.sign(&forged_digest(digest))))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommitteeError {
    #[error("registration rejected: {0}")]
    RegistrationRejected(String),
    #[error("registration inscription has {confirmations} confirmations, {required} required")]
    NotFinalized { confirmations: u64, required: u64 },
    #[error("validator pair ({btc_addr}, {eth_addr}) overlaps an existing registration")]
    DuplicatePair { btc_addr: String, eth_addr: String },
    #[error("quorum not met: {valid} valid signatures, {threshold} required")]
    QuorumNotMet { valid: usize, threshold: usize },
    #[error("signature from {0:?} does not verify")]
    InvalidSignature(PublicKey),
    #[error("evidence rejected: {0}")]
    EvidenceRejected(&'static str),
    #[error("committee has no active validators")]
    Empty,
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlashRecord {
    pub eth_addr: String,
    pub sequence: u64,
    pub penalty: Eth,
    pub remaining: Eth,
    pub status: ValidatorStatus,
}

#[derive(Debug)]
pub struct Committee {
    config: CommitteeConfig,
    validators: Vec<ValidatorRecord>,
    keys: KeyDirectory,
    punished: BTreeSet<(PublicKey, u64)>,
    slashes: Vec<SlashRecord>,
}

impl Committee {
    pub fn new(config: CommitteeConfig) -> Self {
        Committee {
            config,
            validators: Vec::new(),
            keys: KeyDirectory::new(),
            punished: BTreeSet::new(),
            slashes: Vec::new(),
        }
    }

    pub fn config(&self) -> &CommitteeConfig {
        &self.config
    }

    pub fn keys(&self) -> &KeyDirectory {
        &self.keys
    }

    pub fn validators(&self) -> &[ValidatorRecord] {
        &self.validators
    }

    pub fn active(&self) -> impl Iterator<Item = &ValidatorRecord> {
        self.validators.iter().filter(|v| v.is_active())
    }

    pub fn active_count(&self) -> usize {
        self.active().count()
    }

    pub fn validator(&self, eth_addr: &str) -> Option<&ValidatorRecord> {
        self.validators.iter().find(|v| v.eth_addr == eth_addr)
    }

    pub fn slashes(&self) -> &[SlashRecord] {
        &self.slashes
    }

    /// Registration phase is over.
    pub fn is_formed(&self) -> bool {
        self.active_count() >= self.config.min_committee_size.max(1)
    }

    pub fn is_central(&self) -> bool {
        self.active_count() < BFT_MIN_SIZE
    }

    /// Signatures required for a state change.
    pub fn threshold(&self) -> usize {
        if self.is_central() {
            1
        } else {
            quorum_size(self.active_count())
        }
    }

    /// Leader among active validators for a view.
    pub fn leader(&self, view: u64) -> Option<&ValidatorRecord> {
        let n = self.active_count();
        (n > 0).then(|| self.active().nth(leader_index(view, n)).expect("index < n"))
    }

    pub fn authority(&self) -> Authority {
        let members = self.active().map(|v| v.public_key).collect();
        Authority {
            members,
            threshold: self.threshold(),
            keys: self.keys.clone(),
        }
    }

    /// Admits a validator whose registration inscription is final on the
    /// UTXO chain and whose deposit contract entry holds at least `k`.
    #[allow(clippy::too_many_arguments)]
    pub fn register_validator(
        &mut self,
        chain: &BtcChain,
        evm: &EvmSim,
        deposit_contract: &str,
        btc_addr: &str,
        eth_addr: &str,
        registration: InscriptionId,
        key: SecretKey,
    ) -> Result<&ValidatorRecord, CommitteeError> {
        let reject = |why: String| CommitteeError::RegistrationRejected(why);
        let tx = chain
            .transaction(&registration.txid)
            .ok_or_else(|| reject(format!("unknown transaction {}", registration.txid)))?;
        let confirmations = chain.confirmations(&registration.txid).unwrap_or(0);
        let required = chain.config().finality_depth;
        if confirmations < required {
            return Err(CommitteeError::NotFinalized {
                confirmations,
                required,
            });
        }
        let envelope = tx
            .outputs
            .get(registration.vout as usize)
            .and_then(|o| o.payload.as_deref())
            .and_then(parse_inscription)
            .ok_or_else(|| reject("output carries no inscription".into()))?;
        if envelope.op != Op::Registration {
            return Err(reject(format!("inscription op is {}", envelope.op)));
        }
        if tx.sender != btc_addr {
            return Err(reject(format!(
                "inscribed by {}, not {btc_addr}",
                tx.sender
            )));
        }
        if envelope.field("eth_addr") != Some(eth_addr) {
            return Err(reject("eth_addr does not match the inscription".into()));
        }
        if envelope.c_addr.as_deref() != Some(deposit_contract) {
            return Err(reject(
                "inscription targets another deposit contract".into(),
            ));
        }
        let entry = evm
            .get_deposit(deposit_contract, eth_addr)
            .ok_or_else(|| reject(format!("no deposit recorded for {eth_addr}")))?;
        if entry.btc_addr != btc_addr {
            return Err(reject("deposit was made for another UTXO address".into()));
        }
        if entry.deposit < self.config.threshold() {
            return Err(reject(format!(
                "deposit {} below threshold {}",
                entry.deposit,
                self.config.threshold()
            )));
        }
        if self
            .validators
            .iter()
            .any(|v| v.btc_addr == btc_addr || v.eth_addr == eth_addr)
        {
            return Err(CommitteeError::DuplicatePair {
                btc_addr: btc_addr.into(),
                eth_addr: eth_addr.into(),
            });
        }
        let public_key = self.keys.register(key.clone());
        self.validators.push(ValidatorRecord {
            btc_addr: btc_addr.into(),
            eth_addr: eth_addr.into(),
            deposit: entry.deposit,
            status: ValidatorStatus::Active,
            public_key,
            registration,
            behavior: Behavior::Honest,
            key,
        });
        Ok(self.validators.last().expect("just pushed"))
    }

    pub fn set_behavior(&mut self, eth_addr: &str, behavior: Behavior) -> bool {
        match self.validators.iter_mut().find(|v| v.eth_addr == eth_addr) {
            Some(v) => {
                v.behavior = behavior;
                true
            }
            None => false,
        }
    }

    /// Agreement on `bundle_digest` among the active validators.
    pub fn run_consensus(
        &self,
        bundle_digest: Digest,
        sequence: u64,
        view: u64,
        seed: u64,
    ) -> Result<RoundOutcome, CommitteeError> {
        let active: Vec<&ValidatorRecord> = self.active().collect();
        if active.is_empty() {
            return Err(CommitteeError::Empty);
        }
        if self.is_central() {
            let leader = leader_index(view, active.len());
            return Ok(RoundOutcome {
                decided: bundle_digest,
                view,
                commits: [(leader, bundle_digest)].into(),
                messages: MessageCounts::default(),
                elapsed_ms: 0,
                evidence: Vec::new(),
            });
        }
        let replicas: Vec<Replica> = active
            .iter()
            .map(|v| Replica {
                key: v.key.clone(),
                behavior: v.behavior,
            })
            .collect();
        Ok(pbft::run_round(
            &replicas,
            &self.keys,
            bundle_digest,
            sequence,
            view,
            &self.config.network,
            seed,
        )?)
    }

    /// Partial signatures as each active validator would produce them.
    pub fn partial_signatures(&self, digest: &Digest) -> Vec<(PublicKey, Signature)> {
        self.active()
            .filter_map(|v| v.partial_signature(digest))
            .collect()
    }

    /// Builds a quorum proof. Every partial must verify and come from an
    /// active validator; distinct signers must reach the threshold.
    pub fn multi_sign(
        &self,
        digest: Digest,
        partials: &[(PublicKey, Signature)],
    ) -> Result<QuorumProof, CommitteeError> {
        let members: BTreeSet<PublicKey> = self.active().map(|v| v.public_key).collect();
        let mut signers = BTreeSet::new();
        let mut signatures = Vec::new();
        for (pk, sig) in partials {
            if !members.contains(pk) || !self.keys.verify(pk, &digest, sig) {
                return Err(CommitteeError::InvalidSignature(*pk));
            }
            if signers.insert(*pk) {
                signatures.push((*pk, *sig));
            }
        }
        let threshold = self.threshold();
        if signers.len() < threshold {
            return Err(CommitteeError::QuorumNotMet {
                valid: signers.len(),
                threshold,
            });
        }
        Ok(QuorumProof { digest, signatures })
    }

    /// Collects partials, drops the ones that do not verify, and signs.
    pub fn sign_with_quorum(&self, digest: Digest) -> Result<QuorumProof, CommitteeError> {
        let valid: Vec<_> = self
            .partial_signatures(&digest)
            .into_iter()
            .filter(|(pk, sig)| self.keys.verify(pk, &digest, sig))
            .collect();
        self.multi_sign(digest, &valid)
    }

    /// Applies the penalty for a verified conflict. One penalty per
    /// offender per consensus instance.
    pub fn detect_and_slash(&mut self, evidence: &Evidence) -> Result<SlashRecord, CommitteeError> {
        if !evidence.is_conflict() {
            return Err(CommitteeError::EvidenceRejected("messages do not conflict"));
        }
        if !evidence.first.verify(&self.keys) || !evidence.second.verify(&self.keys) {
            return Err(CommitteeError::EvidenceRejected(
                "signature does not verify",
            ));
        }
        let offender = evidence.first.message.sender;
        let sequence = evidence.first.message.sequence;
        let threshold = self.config.threshold();
        let rate = self.config.penalty_rate;
        let v = self
            .validators
            .iter_mut()
            .find(|v| v.public_key == offender)
            .ok_or(CommitteeError::EvidenceRejected(
                "sender is not a validator",
            ))?;
        if !self.punished.insert((offender, sequence)) {
            return Err(CommitteeError::EvidenceRejected("offence already punished"));
        }
        let penalty = v.deposit.scaled(rate);
        v.deposit = v.deposit.saturating_sub(penalty);
        if v.deposit < threshold {
            v.status = ValidatorStatus::Slashed;
        }
        let record = SlashRecord {
            eth_addr: v.eth_addr.clone(),
            sequence,
            penalty,
            remaining: v.deposit,
            status: v.status,
        };
        self.slashes.push(record.clone());
        Ok(record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::btc::ChainConfig;
    use crate::evm::{GasSchedule, Template};
    use crate::inscription::{serialize_inscription, Envelope, Protocol};
    use crate::pbft::{ConsensusMessage, Phase};

    struct World {
        chain: BtcChain,
        evm: EvmSim,
        deposit: String,
    }

    impl World {
        fn new() -> Self {
            let mut evm = EvmSim::new(GasSchedule::default());
            let deposit = evm.deploy_contract(Template::Deposit, "dev");
            World {
                chain: BtcChain::new(ChainConfig::default()),
                evm,
                deposit,
            }
        }

        /// Inscribes a registration and deposits `eth` for it.
        fn enrol(&mut self, name: &str, eth: u64) -> InscriptionId {
            let btc = format!("bc1{name}");
            let eth_addr = format!("0x{name}");
            self.chain.faucet(&btc, 10_000);
            let env = Envelope::new(Protocol::Middleware, Op::Registration)
                .with_field("tick", "eth")
                .with_field("max", eth.to_string())
                .with_c_addr(self.deposit.clone())
                .with_field("eth_addr", eth_addr.clone());
            let txid = self
                .chain
                .inscribe(&btc, &btc, 546, serialize_inscription(&env).unwrap())
                .unwrap();
            let id = InscriptionId::new(txid, 0);
            self.evm
                .register_validator_onchain(&self.deposit, &eth_addr, &btc, Eth::from_eth(eth), id)
                .unwrap();
            id
        }

        fn mine(&mut self, n: usize) {
            for _ in 0..n {
                self.chain.mine_block();
            }
        }

        fn admit(
            &self,
            committee: &mut Committee,
            name: &str,
            id: InscriptionId,
        ) -> Result<(), CommitteeError> {
            committee
                .register_validator(
                    &self.chain,
                    &self.evm,
                    &self.deposit,
                    &format!("bc1{name}"),
                    &format!("0x{name}"),
                    id,
                    SecretKey::derive(0, name),
                )
                .map(|_| ())
        }
    }

    fn formed(n: usize) -> Committee {
        let mut w = World::new();
        let ids: Vec<_> = (0..n).map(|i| w.enrol(&format!("v{i}"), 32)).collect();
        w.mine(6);
        let mut c = Committee::new(CommitteeConfig::default());
        for (i, id) in ids.into_iter().enumerate() {
            w.admit(&mut c, &format!("v{i}"), id).unwrap();
        }
        c
    }

    #[test]
    fn registration_rules() {
        let mut w = World::new();
        let alice = w.enrol("alice", 32);
        let bob = w.enrol("bob", 31);
        w.mine(3);
        let mut c = Committee::new(CommitteeConfig::default());
        assert_eq!(
            w.admit(&mut c, "alice", alice),
            Err(CommitteeError::NotFinalized {
                confirmations: 3,
                required: 6
            })
        );
        w.mine(3);
        w.admit(&mut c, "alice", alice).unwrap();
        assert!(matches!(
            w.admit(&mut c, "bob", bob),
            Err(CommitteeError::RegistrationRejected(_))
        ));
        assert!(matches!(
            w.admit(&mut c, "alice", alice),
            Err(CommitteeError::DuplicatePair { .. })
        ));
        assert_eq!(c.validators().len(), 1);
        assert!(!c.is_formed());
        assert_eq!(c.validator("0xalice").unwrap().deposit, Eth::from_eth(32));
    }

    #[test]
    fn registration_must_match_inscription() {
        let mut w = World::new();
        let alice = w.enrol("alice", 32);
        w.mine(6);
        let mut c = Committee::new(CommitteeConfig::default());
        let wrong_eth = c.register_validator(
            &w.chain,
            &w.evm,
            &w.deposit,
            "bc1alice",
            "0xmallory",
            alice,
            SecretKey::derive(0, "m"),
        );
        assert!(matches!(
            wrong_eth,
            Err(CommitteeError::RegistrationRejected(_))
        ));
        let wrong_btc = c.register_validator(
            &w.chain,
            &w.evm,
            &w.deposit,
            "bc1mallory",
            "0xalice",
            alice,
            SecretKey::derive(0, "m"),
        );
        assert!(matches!(
            wrong_btc,
            Err(CommitteeError::RegistrationRejected(_))
        ));
    }

    #[test]
    fn modes_and_thresholds() {
        let c = formed(1);
        assert!(c.is_central());
        assert_eq!(c.threshold(), 1);
        let out = c.run_consensus(Digest::of(b"b"), 1, 0, 0).unwrap();
        assert_eq!(out.messages.total(), 0);
        assert_eq!(out.decided, Digest::of(b"b"));

        let c = formed(4);
        assert!(c.is_formed() && !c.is_central());
        assert_eq!(c.threshold(), 3);
        let out = c.run_consensus(Digest::of(b"b"), 1, 0, 0).unwrap();
        assert_eq!(out.messages.total(), 36);
    }

    #[test]
    fn multi_sign_quorum() {
        let c = formed(4);
        let d = Digest::of(b"call");
        let partials = c.partial_signatures(&d);
        assert_eq!(partials.len(), 4);
        let proof = c.multi_sign(d, &partials[..3]).unwrap();
        c.authority().verify(&proof, &d).unwrap();
        assert_eq!(
            c.multi_sign(d, &partials[..2]),
            Err(CommitteeError::QuorumNotMet {
                valid: 2,
                threshold: 3
            })
        );
        let mut forged = partials[..3].to_vec();
        forged[1].1 = Signature::forged(1);
        assert!(matches!(
            c.multi_sign(d, &forged),
            Err(CommitteeError::InvalidSignature(_))
        ));
    }

    #[test]
    fn faulty_signers_are_filtered() {
        let mut c = formed(4);
        c.set_behavior("0xv1", Behavior::Equivocating);
        let d = Digest::of(b"call");
        assert_eq!(c.sign_with_quorum(d).unwrap().signatures.len(), 3);
        c.set_behavior("0xv2", Behavior::Silent);
        assert!(matches!(
            c.sign_with_quorum(d),
            Err(CommitteeError::QuorumNotMet { valid: 2, .. })
        ));
    }

    fn conflicting(c: &Committee, who: usize) -> Evidence {
        let v = &c.validators()[who];
        let m = ConsensusMessage {
            phase: Phase::Prepare,
            view: 0,
            sequence: 7,
            bundle_digest: Digest::of(b"a"),
            sender: v.public_key,
        };
        Evidence {
            first: m.sign(&v.key),
            second: ConsensusMessage {
                bundle_digest: Digest::of(b"b"),
                ..m
            }
            .sign(&v.key),
        }
    }

    #[test]
    fn slashing_halves_deposit_and_ejects() {
        let mut c = formed(5);
        let ev = conflicting(&c, 2);
        let rec = c.detect_and_slash(&ev).unwrap();
        assert_eq!(rec.penalty, Eth::from_eth(16));
        assert_eq!(rec.remaining, Eth::from_eth(16));
        assert_eq!(rec.status, ValidatorStatus::Slashed);
        assert_eq!(c.active_count(), 4);
        assert!(!c
            .authority()
            .members
            .contains(&c.validators()[2].public_key));
        assert_eq!(
            c.detect_and_slash(&ev),
            Err(CommitteeError::EvidenceRejected("offence already punished"))
        );
        assert_eq!(c.validators()[2].deposit, Eth::from_eth(16));
    }

    #[test]
    fn bad_evidence_rejected() {
        let mut c = formed(4);
        let ev = conflicting(&c, 0);
        let same = Evidence {
            first: ev.first,
            second: ev.first,
        };
        assert!(matches!(
            c.detect_and_slash(&same),
            Err(CommitteeError::EvidenceRejected(_))
        ));
        let mut forged = ev;
        forged.second.signature = Signature::forged(3);
        assert!(matches!(
            c.detect_and_slash(&forged),
            Err(CommitteeError::EvidenceRejected(_))
        ));
        assert!(c.slashes().is_empty());
        assert_eq!(c.active_count(), 4);
    }

    #[test]
    fn small_penalty_keeps_validator_active() {
        let mut c = formed(4);
        c.config.penalty_rate = Rate::from_ppm(10_000).unwrap();
        c.validators[0].deposit = Eth::from_eth(40);
        let rec = c.detect_and_slash(&conflicting(&c, 0)).unwrap();
        assert_eq!(rec.remaining, Eth::from_gwei(39_600_000_000));
        assert_eq!(rec.status, ValidatorStatus::Active);
    }
}
