//! Desk-scale versions of the three evaluations, emitted as CSV.
//!
//! Every row carries the seed and the digest of the configuration that
//! produced it, so a CSV file can be regenerated byte for byte.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::EpochReport;
use crate::crypto::{Digest, DigestBuilder};
use crate::evm::Template;
use crate::inscription::{Envelope, Op, Protocol};
use crate::sim::{config_digest, FaultPlan, SimConfig, SimError, Simulation};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Throughput model for the scalability sweep. All rates are operations
/// (or messages) per second of simulated time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalabilityParams {
    /// Payment-channel cap on the UTXO side.
    pub btc_tps: f64,
    /// Single-shard contract throughput; the cap is this times `shards`.
    pub eth_base_tps: f64,
    pub shards: u32,
    /// Messages per second the committee network can carry.
    pub bus_msgs_per_sec: f64,
    /// Inscriptions settled per consensus round.
    pub ops_per_round: u32,
    pub max_committee_size: usize,
}

impl Default for ScalabilityParams {
    fn default() -> Self {
        ScalabilityParams {
            btc_tps: 10_000.0,
            eth_base_tps: 15.0,
            shards: 64,
            bus_msgs_per_sec: 10_000.0,
            ops_per_round: 3,
            max_committee_size: 20,
        }
    }
}

impl ScalabilityParams {
    pub fn eth_tps(&self) -> f64 {
        self.eth_base_tps * f64::from(self.shards)
    }

    pub fn cap(&self) -> f64 {
        self.btc_tps.min(self.eth_tps())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityRow {
    pub committee_size: usize,
    pub mode: String,
    pub messages_per_round: u64,
    pub consensus_ops_per_sec: Option<f64>,
    pub ops_per_sec: f64,
    pub seed: u64,
    pub config_digest: Digest,
}

pub fn run_scalability(
    sizes: &[usize],
    params: &ScalabilityParams,
    base: &SimConfig,
) -> Result<Vec<ScalabilityRow>, ExperimentError> {
    let digest = config_digest(&(params, base));
    let mut rows = Vec::new();
    for &n in sizes {
        if n == 0 || n > params.max_committee_size {
            return Err(ExperimentError::InvalidParam(format!(
                "committee size {n} outside 1..={}",
                params.max_committee_size
            )));
        }
        let sim = Simulation::with_committee(base.clone(), n, &FaultPlan::default())?;
        let bundle = DigestBuilder::tagged("scalability").u64(n as u64).finish();
        let outcome = sim
            .committee
            .run_consensus(bundle, 1, 0, base.seed)
            .map_err(SimError::from)?;
        let messages = outcome.messages.total();
        let (mode, consensus) = if sim.committee.is_central() {
            ("central", None)
        } else {
            let rounds_per_sec = params.bus_msgs_per_sec / messages as f64;
            (
                "consensus",
                Some(rounds_per_sec * f64::from(params.ops_per_round)),
            )
        };
        rows.push(ScalabilityRow {
            committee_size: n,
            mode: mode.into(),
            messages_per_round: messages,
            consensus_ops_per_sec: consensus,
            ops_per_sec: consensus.map_or(params.cap(), |c| c.min(params.cap())),
            seed: base.seed,
            config_digest: digest,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasSurveyParams {
    pub committee_size: usize,
    /// Sats attached to every workload inscription.
    pub value: u64,
    /// Sats charged per unit of gas.
    pub sats_per_gas: u64,
}

impl Default for GasSurveyParams {
    fn default() -> Self {
        GasSurveyParams {
            committee_size: 4,
            value: 10_000,
            sats_per_gas: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GasRow {
    pub template: Template,
    pub inscriptions: usize,
    pub succeeded: usize,
    pub total_value: u64,
    pub total_fee: u64,
    pub total_gas: u64,
    pub fee_pct: f64,
    pub gas_pct: f64,
    pub extra_fee_pct: f64,
    pub seed: u64,
    pub config_digest: Digest,
}

/// `(function, fields, caller)`
type Step = (
    &'static str,
    Vec<(&'static str, &'static str)>,
    &'static str,
);

/// Steps exercising every interface. Every step carries the fields its
/// envelope op requires.
fn workload(template: Template) -> Vec<Step> {
    let t = ("tick", "w");
    match template {
        Template::FT | Template::Stablecoin => vec![
            (
                "deploy",
                vec![t, ("max", "1000000"), ("lim", "1000")],
                "user",
            ),
            ("mint", vec![t, ("amt", "500")], "user"),
            ("mint", vec![t, ("amt", "500")], "user"),
            ("mint", vec![t, ("amt", "250")], "user"),
            ("transfer", vec![t, ("amt", "100")], "user"),
            ("transfer", vec![t, ("amt", "50")], "user"),
        ],
        Template::NFT => vec![
            ("deploy", vec![t, ("max", "10"), ("lim", "1")], "user"),
            ("mint", vec![t, ("amt", "1")], "user"),
            ("mint", vec![t, ("amt", "1")], "user"),
            ("mint", vec![t, ("amt", "1")], "user"),
            ("transfer", vec![t, ("amt", "0")], "user"),
            ("transfer", vec![t, ("amt", "1")], "user"),
        ],
        Template::Loan => vec![
            ("deploy", vec![t, ("max", "1000"), ("lim", "1000")], "user"),
            ("borrow", vec![t, ("amt", "100")], "user"),
            ("borrow", vec![t, ("amt", "200")], "user"),
            ("repay", vec![t, ("amt", "100")], "user"),
            ("borrow", vec![t, ("amt", "50")], "user"),
            ("repay", vec![t, ("amt", "250")], "user"),
        ],
        Template::Auction => vec![
            ("deploy", vec![t, ("max", "1"), ("lim", "1")], "user"),
            ("bid", vec![t, ("amt", "10")], "user"),
            ("bid", vec![t, ("amt", "20")], "other"),
            ("bid", vec![t, ("amt", "30")], "user"),
            ("bid", vec![t, ("amt", "40")], "other"),
            ("settle", vec![t, ("amt", "0")], "user"),
        ],
        Template::Insurance => vec![
            ("deploy", vec![t, ("max", "100"), ("lim", "100")], "user"),
            ("insure", vec![t, ("amt", "5")], "user"),
            ("insure", vec![t, ("amt", "5")], "other"),
            ("insure", vec![t, ("amt", "5")], "user"),
            ("claim", vec![t, ("amt", "50")], "user"),
            ("claim", vec![t, ("amt", "20")], "other"),
        ],
        Template::DAO => vec![
            ("deploy", vec![t, ("max", "1"), ("lim", "1")], "user"),
            ("propose", vec![t, ("amt", "0")], "user"),
            ("propose", vec![t, ("amt", "0")], "other"),
            ("vote", vec![t, ("amt", "0")], "user"),
            ("vote", vec![t, ("amt", "0")], "other"),
            ("vote", vec![t, ("amt", "1")], "user"),
        ],
        Template::Deposit => Vec::new(),
    }
}

fn workload_op(function: &str) -> Op {
    match function {
        "deploy" => Op::Deploy,
        "transfer" => Op::Transfer,
        _ => Op::Mint,
    }
}

pub fn run_gas_survey(
    templates: &[Template],
    params: &GasSurveyParams,
    base: &SimConfig,
) -> Result<Vec<GasRow>, ExperimentError> {
    if templates.contains(&Template::Deposit) {
        return Err(ExperimentError::InvalidParam(
            "the deposit contract takes no user workload".into(),
        ));
    }
    if params.value == 0 {
        return Err(ExperimentError::InvalidParam(
            "inscription value must be positive".into(),
        ));
    }
    let digest = config_digest(&(params, base));
    let mut sim =
        Simulation::with_committee(base.clone(), params.committee_size, &FaultPlan::default())?;
    let mut targets = Vec::new();
    for &template in templates {
        let c_addr = sim.deploy_contract(template, "surveyor");
        let (user, other) = (format!("{template}-user"), format!("{template}-other"));
        sim.fund(&user, params.value * 16);
        sim.fund(&other, params.value * 16);
        targets.push((template, c_addr, user, other));
    }
    sim.step()?;
    // One step per block so calls that depend on earlier ones see them
    // in order; ordering keys make this hold within a block too.
    for (template, c_addr, user, other) in &targets {
        for (function, fields, caller) in workload(*template) {
            let mut env =
                Envelope::new(Protocol::Brc20, workload_op(function)).with_c_addr(c_addr.clone());
            if function != workload_op(function).as_str() {
                env = env.with_signature(crate::inscription::function_signature(function));
            }
            for (k, v) in fields {
                env = env.with_field(k, v);
            }
            let from = if caller == "user" { user } else { other };
            sim.inscribe(from, from, &env, params.value)?;
        }
    }
    let eps = sim.config().bridge.epsilon;
    sim.run_blocks(1)?;
    sim.settle(4 * eps + 4)?;

    let bridge = sim.bridge().expect("committee formed");
    let mut rows = Vec::new();
    for (template, c_addr, _, _) in &targets {
        let execs: Vec<_> = bridge
            .epochs()
            .iter()
            .flat_map(|e| &e.executions)
            .filter(|r| r.c_addr == *c_addr)
            .collect();
        let total_value: u64 = execs.iter().map(|r| r.value).sum();
        let total_fee: u64 = execs.iter().map(|r| r.fee).sum();
        let total_gas: u64 = execs.iter().map(|r| r.gas_used).sum();
        let pct = |x: u64| {
            if total_value == 0 {
                0.0
            } else {
                100.0 * x as f64 / total_value as f64
            }
        };
        let gas_sats = total_gas * params.sats_per_gas;
        rows.push(GasRow {
            template: *template,
            inscriptions: execs.len(),
            succeeded: execs.iter().filter(|r| r.success).count(),
            total_value,
            total_fee,
            total_gas,
            fee_pct: pct(total_fee),
            gas_pct: pct(gas_sats),
            extra_fee_pct: pct(total_fee + gas_sats),
            seed: base.seed,
            config_digest: digest,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonParams {
    pub committee_size: usize,
    /// Length of the measured window, in blocks.
    pub blocks: u64,
    /// Inscriptions arriving in every block.
    pub per_block: usize,
    /// Fixed cost of running one epoch, in simulated milliseconds.
    pub epoch_cost_ms: u64,
    /// Cost of handling one consensus message.
    pub message_cost_ms: u64,
}

impl Default for EpsilonParams {
    fn default() -> Self {
        EpsilonParams {
            committee_size: 4,
            blocks: 1000,
            per_block: 3,
            epoch_cost_ms: 100,
            message_cost_ms: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: u64,
    pub seed: u64,
    pub blocks: u64,
    pub inscriptions: u64,
    pub rounds: u64,
    pub messages: u64,
    /// Simulated milliseconds spent on epochs, per 1000 blocks.
    pub time_overhead_ms: f64,
    /// Largest bundle held between epochs.
    pub peak_bundle: usize,
    pub config_digest: Digest,
}

pub fn run_epsilon_sweep(
    eps_values: &[u64],
    seeds: &[u64],
    params: &EpsilonParams,
    base: &SimConfig,
) -> Result<Vec<EpsilonRow>, ExperimentError> {
    if let Some(bad) = eps_values.iter().find(|&&e| e == 0) {
        return Err(ExperimentError::InvalidParam(format!(
            "epsilon {bad} must be positive"
        )));
    }
    if params.blocks == 0 || params.per_block == 0 {
        return Err(ExperimentError::InvalidParam(
            "blocks and per_block must be positive".into(),
        ));
    }
    let mut rows = Vec::new();
    for &epsilon in eps_values {
        for &seed in seeds {
            let mut config = base.clone();
            config.seed = seed;
            config.bridge.epsilon = epsilon;
            rows.push(epsilon_point(params, config)?);
        }
    }
    Ok(rows)
}

/// Settings for a synthetic run: a committee, a fault plan and a uniform
/// mint load.
///
/// ```toml
/// committee_size = 7
/// blocks = 200
/// fault_plan = "2:equivocating"
///
/// [sim]
/// seed = 11
/// bridge = { epsilon = 3 }
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub committee_size: usize,
    pub blocks: u64,
    pub per_block: usize,
    /// Same syntax as [`FaultPlan`]'s `FromStr`.
    pub fault_plan: String,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            committee_size: 4,
            blocks: 100,
            per_block: 3,
            fault_plan: String::new(),
            sim: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::InvalidParam(e.to_string()))
    }

    pub fn faults(&self) -> Result<FaultPlan, ExperimentError> {
        self.fault_plan
            .parse()
            .map_err(ExperimentError::InvalidParam)
    }

    /// Runs the load, then settles everything still in flight.
    pub fn execute(&self) -> Result<Simulation, ExperimentError> {
        if self.committee_size == 0 {
            return Err(ExperimentError::InvalidParam(
                "committee size must be positive".into(),
            ));
        }
        let faults = self.faults()?;
        if let Some(i) = faults.0.keys().find(|&&i| i >= self.committee_size) {
            return Err(ExperimentError::InvalidParam(format!(
                "fault plan names validator {i} in a committee of {}",
                self.committee_size
            )));
        }
        let mut run = run_uniform_load(
            self.sim.clone(),
            self.committee_size,
            &faults,
            self.blocks,
            self.per_block,
        )?;
        let eps = self.sim.bridge.epsilon;
        run.sim.settle(4 * eps + 4)?;
        Ok(run.sim)
    }
}

/// Output of [`run_uniform_load`].
#[derive(Debug)]
pub struct LoadRun {
    pub sim: Simulation,
    /// Epochs run while the load was arriving.
    pub epochs: Vec<EpochReport>,
    pub inscriptions: u64,
}

/// Deploys one token and submits `per_block` mints in each of `blocks`
/// blocks from eight funded users. Amounts, values and senders are drawn
/// from the config seed.
pub fn run_uniform_load(
    config: SimConfig,
    committee_size: usize,
    faults: &FaultPlan,
    blocks: u64,
    per_block: usize,
) -> Result<LoadRun, ExperimentError> {
    let seed = config.seed;
    let mut sim = Simulation::with_committee(config, committee_size, faults)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let token = sim.deploy_contract(Template::FT, "issuer");
    let users: Vec<String> = (0..8).map(|i| format!("user{i}")).collect();
    let budget = 1_000 * (blocks + 1) * per_block as u64;
    for u in &users {
        sim.fund(u, budget);
    }
    let deploy = Envelope::new(Protocol::Brc20, Op::Deploy)
        .with_c_addr(token.clone())
        .with_field("tick", "flow")
        .with_field("max", "1000000000000")
        .with_field("lim", "1000");
    sim.inscribe(&users[0], &users[0], &deploy, 1_000)?;

    let mut inscriptions = 1u64;
    let mut epochs = Vec::new();
    for _ in 0..blocks {
        let mut batch: Vec<(usize, u64, u64)> = (0..per_block)
            .map(|_| {
                (
                    rng.gen_range(0..users.len()),
                    rng.gen_range(1..=1000u64),
                    rng.gen_range(500..=1000u64),
                )
            })
            .collect();
        batch.shuffle(&mut rng);
        for (u, amt, value) in batch {
            let env = Envelope::new(Protocol::Brc20, Op::Mint)
                .with_c_addr(token.clone())
                .with_field("tick", "flow")
                .with_field("amt", amt.to_string());
            sim.inscribe(&users[u], &users[u], &env, value)?;
            inscriptions += 1;
        }
        epochs.extend(sim.step()?);
    }
    Ok(LoadRun {
        sim,
        epochs,
        inscriptions,
    })
}

fn epsilon_point(params: &EpsilonParams, config: SimConfig) -> Result<EpsilonRow, ExperimentError> {
    let digest = config_digest(&(params, &config));
    let seed = config.seed;
    let epsilon = config.bridge.epsilon;
    let LoadRun {
        sim,
        epochs,
        inscriptions,
    } = run_uniform_load(
        config,
        params.committee_size,
        &FaultPlan::default(),
        params.blocks,
        params.per_block,
    )?;
    let audit = sim.audit();
    if let Some(v) = audit.violations().next() {
        return Err(ExperimentError::Sim(SimError::Invalid(format!(
            "invariant violated: {v}"
        ))));
    }

    let rounds = epochs.iter().filter(|e| e.consensus.is_some()).count() as u64;
    let messages: u64 = epochs
        .iter()
        .filter_map(|e| e.consensus.as_ref())
        .map(|c| c.messages.total())
        .sum();
    let elapsed: u64 = epochs
        .iter()
        .filter_map(|e| e.consensus.as_ref())
        .map(|c| c.elapsed_ms)
        .sum();
    let total_ms = rounds * params.epoch_cost_ms + messages * params.message_cost_ms + elapsed;
    Ok(EpsilonRow {
        epsilon,
        seed,
        blocks: params.blocks,
        inscriptions,
        rounds,
        messages,
        time_overhead_ms: total_ms as f64 * 1000.0 / params.blocks as f64,
        peak_bundle: epochs.iter().map(|e| e.bundle_size).max().unwrap_or(0),
        config_digest: digest,
    })
}

/// Serializes rows with a header line.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ExperimentError::InvalidParam(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    cov / var
}

/// Templates in the order the survey reports them.
pub fn survey_templates() -> Vec<Template> {
    Template::APPLICATIONS.to_vec()
}

/// Ordering check used by the survey: `<` where the schedule is strict.
pub fn gas_ordering_holds(rows: &[GasRow]) -> bool {
    use Template::*;
    let pct: BTreeMap<Template, f64> = rows.iter().map(|r| (r.template, r.extra_fee_pct)).collect();
    let get = |t| pct.get(&t).copied();
    let chain = [
        (FT, Stablecoin, true),
        (Stablecoin, NFT, true),
        (NFT, Loan, false),
        (Loan, Auction, false),
        (Auction, Insurance, true),
        (Insurance, DAO, false),
    ];
    chain
        .iter()
        .all(|&(lo, hi, strict)| match (get(lo), get(hi)) {
            (Some(a), Some(b)) => {
                if strict {
                    a < b
                } else {
                    a <= b
                }
            }
            _ => true,
        })
}
