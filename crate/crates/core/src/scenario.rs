//! Scripted end-to-end runs described in TOML.
//!
//! ```toml
//! name = "demo"
//! seed = 7
//!
//! [config.committee]
//! min_committee_size = 3
//!
//! [[validators]]
//! name = "alice"
//! deposit = 32
//!
//! [[contracts]]
//! name = "tokens"
//! template = "FT"
//!
//! [[users]]
//! name = "dave"
//! funds = 100000
//!
//! [[inscriptions]]
//! from = "dave"
//! value = 1000
//! op = "deploy"
//! contract = "tokens"
//! fields = { tick = "ordi", max = "2100000", lim = "1000" }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest, DigestBuilder};
use crate::evm::Template;
use crate::inscription::{Envelope, InscriptionId, Op, Protocol};
use crate::pbft::Behavior;
use crate::sim::{RunReport, SimConfig, SimError, Simulation};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub config: SimConfig,
    #[serde(default)]
    pub validators: Vec<ScenarioValidator>,
    #[serde(default)]
    pub contracts: Vec<ScenarioContract>,
    #[serde(default)]
    pub users: Vec<ScenarioUser>,
    #[serde(default)]
    pub inscriptions: Vec<ScenarioInscription>,
    #[serde(default)]
    pub run: RunSpec,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioValidator {
    pub name: String,
    pub btc_addr: Option<String>,
    pub eth_addr: Option<String>,
    /// Whole ETH; defaults to the deposit threshold.
    pub deposit: Option<u64>,
    #[serde(default)]
    pub behavior: Behavior,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioContract {
    pub name: String,
    pub template: Template,
    #[serde(default = "default_owner")]
    pub owner: String,
}

fn default_owner() -> String {
    "deployer".into()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioUser {
    pub name: String,
    pub funds: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioInscription {
    pub from: String,
    /// Recipient of the inscribed output; the sender by default.
    pub to: Option<String>,
    pub value: u64,
    /// Blocks after committee formation at which to submit.
    #[serde(default)]
    pub at: u64,
    #[serde(default = "default_protocol")]
    pub protocol: String,
    pub op: String,
    pub op_signature: Option<String>,
    /// A `[[contracts]]` name or a literal address.
    pub contract: Option<String>,
    #[serde(default)]
    pub fields: IndexMap<String, String>,
}

fn default_protocol() -> String {
    "brc-20".into()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Extra blocks to mine after the last submission.
    #[serde(default)]
    pub blocks: u64,
    /// Blocks allowed for committee registration before the run is
    /// reported as stalled.
    pub registration_deadline: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    /// Registration never completed within the deadline.
    pub stalled: bool,
    /// Submitted inscription ids, in file order.
    pub inscriptions: Vec<InscriptionId>,
    pub contracts: BTreeMap<String, String>,
    pub run: Option<RunReport>,
}

impl ScenarioReport {
    /// No invariant violations (a stall is not a violation).
    pub fn is_clean(&self) -> bool {
        self.run.as_ref().is_none_or(|r| r.audit.is_clean())
    }
}

impl Scenario {
    pub fn from_toml(text: &str, path: &str) -> Result<Self, ScenarioError> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: path.into(),
            message: e.to_string(),
        })?;
        if s.name.is_empty() {
            s.name = Path::new(path)
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    fn is_empty(&self) -> bool {
        self.validators.is_empty() && self.inscriptions.is_empty() && self.contracts.is_empty()
    }

    fn envelope(
        &self,
        i: usize,
        ins: &ScenarioInscription,
        contracts: &BTreeMap<String, String>,
    ) -> Result<Envelope, ScenarioError> {
        let bad = |what: String| ScenarioError::Invalid(format!("inscription #{}: {what}", i + 1));
        let protocol = Protocol::parse(&ins.protocol)
            .ok_or_else(|| bad(format!("unknown protocol {:?}", ins.protocol)))?;
        let op = Op::parse(&ins.op).ok_or_else(|| bad(format!("unknown op {:?}", ins.op)))?;
        let mut env = Envelope::new(protocol, op);
        env.op_signature = ins.op_signature.clone();
        env.c_addr = match &ins.contract {
            None => None,
            Some(c) if c.starts_with("0x") => Some(c.clone()),
            Some(c) => Some(
                contracts
                    .get(c)
                    .cloned()
                    .ok_or_else(|| bad(format!("unknown contract {c:?}")))?,
            ),
        };
        env.fields = ins.fields.clone();
        env.validate().map_err(|e| bad(e.to_string()))?;
        Ok(env)
    }

    pub fn run(&self) -> Result<ScenarioReport, ScenarioError> {
        let mut report = ScenarioReport {
            name: self.name.clone(),
            stalled: false,
            inscriptions: Vec::new(),
            contracts: BTreeMap::new(),
            run: None,
        };
        if self.is_empty() {
            return Ok(report);
        }
        let mut config = self.config.clone();
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        let mut sim = Simulation::new(config)?;
        for c in &self.contracts {
            if report.contracts.contains_key(&c.name) {
                return Err(ScenarioError::Invalid(format!(
                    "duplicate contract name {:?}",
                    c.name
                )));
            }
            report
                .contracts
                .insert(c.name.clone(), sim.deploy_contract(c.template, &c.owner));
        }
        let envelopes = self
            .inscriptions
            .iter()
            .enumerate()
            .map(|(i, ins)| self.envelope(i, ins, &report.contracts))
            .collect::<Result<Vec<_>, _>>()?;
        for u in &self.users {
            sim.fund(&u.name, u.funds);
        }
        let k = sim.config().committee.deposit_threshold;
        for v in &self.validators {
            let btc = v
                .btc_addr
                .clone()
                .unwrap_or_else(|| format!("btc-{}", v.name));
            let eth = v
                .eth_addr
                .clone()
                .unwrap_or_else(|| default_eth_addr(&v.name));
            sim.enrol_validator(&btc, &eth, v.deposit.unwrap_or(k), v.behavior)?;
        }

        let deadline = self
            .run
            .registration_deadline
            .unwrap_or(sim.chain.config().finality_depth + 10);
        while !sim.is_formed() && sim.chain.tip_height() < deadline {
            sim.step()?;
        }
        if !sim.is_formed() {
            report.stalled = true;
            report.run = Some(sim.report());
            return Ok(report);
        }

        let last = self.inscriptions.iter().map(|i| i.at).max().unwrap_or(0);
        for offset in 0..=last {
            for (ins, env) in self
                .inscriptions
                .iter()
                .zip(&envelopes)
                .filter(|(i, _)| i.at == offset)
            {
                let to = ins.to.as_deref().unwrap_or(&ins.from);
                report
                    .inscriptions
                    .push(sim.inscribe(&ins.from, to, env, ins.value)?);
            }
            sim.step()?;
        }
        sim.run_blocks(self.run.blocks)?;
        let eps = sim.config().bridge.epsilon;
        sim.settle(4 * eps + 4)?;
        report.run = Some(sim.report());
        Ok(report)
    }
}

/// Deterministic 20-byte address for a validator name.
pub fn default_eth_addr(name: &str) -> String {
    let d: Digest = DigestBuilder::tagged("eth-addr").str(name).finish();
    format!("0x{}", &d.to_hex()[..40])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scenario() {
        let s = Scenario::from_toml("", "empty.toml").unwrap();
        assert_eq!(s.name, "empty");
        let r = s.run().unwrap();
        assert!(!r.stalled && r.run.is_none() && r.is_clean());
    }

    #[test]
    fn parse_error_has_line_context() {
        let text = "name = \"x\"\n[[validators]]\nname = 3\n";
        let err = Scenario::from_toml(text, "bad.toml")
            .unwrap_err()
            .to_string();
        assert!(err.contains("bad.toml"), "{err}");
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn unknown_contract_reference() {
        let text = r#"
[[validators]]
name = "a"
[[inscriptions]]
from = "u"
value = 10
op = "mint"
contract = "nope"
fields = { tick = "x", amt = "1" }
"#;
        let err = Scenario::from_toml(text, "s.toml")
            .unwrap()
            .run()
            .unwrap_err();
        assert!(err.to_string().contains("unknown contract"), "{err}");
    }

    #[test]
    fn low_deposit_stalls() {
        let text = r#"
[config.committee]
min_committee_size = 1
[[validators]]
name = "cheap"
deposit = 31
[run]
registration_deadline = 12
"#;
        let r = Scenario::from_toml(text, "s.toml").unwrap().run().unwrap();
        assert!(r.stalled);
        let run = r.run.unwrap();
        assert_eq!(run.formed_at, None);
        assert_eq!(run.rejected.len(), 1);
    }
}
