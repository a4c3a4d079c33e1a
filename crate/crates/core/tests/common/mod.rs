//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use midastouch_core::brc20::{Amount, Brc20Op, Brc20Registry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Token ledger kept as flat lists and plain integers, with every rule
/// written out from the token semantics rather than from the library.
#[derive(Debug, Default, Clone)]
pub struct NaiveLedger {
    /// (tick, max, lim, minted)
    tokens: Vec<(String, u128, u128, u128)>,
    /// (tick, holder, amount)
    holdings: Vec<(String, String, u128)>,
}

impl NaiveLedger {
    fn token(&self, tick: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t.0 == tick)
    }

    fn holding(&self, tick: &str, who: &str) -> u128 {
        self.holdings
            .iter()
            .filter(|h| h.0 == tick && h.1 == who)
            .map(|h| h.2)
            .sum()
    }

    fn add(&mut self, tick: &str, who: &str, amt: u128) {
        self.holdings.push((tick.to_string(), who.to_string(), amt));
    }

    fn sub(&mut self, tick: &str, who: &str, amt: u128) {
        let mut left = amt;
        for h in self
            .holdings
            .iter_mut()
            .filter(|h| h.0 == tick && h.1 == who)
        {
            let take = left.min(h.2);
            h.2 -= take;
            left -= take;
        }
        assert_eq!(left, 0);
    }

    /// Returns whether the operation was accepted.
    pub fn apply(&mut self, op: &NaiveOp) -> bool {
        match op {
            NaiveOp::Deploy { tick, max, lim } => {
                if self.token(tick).is_some() || lim > max {
                    return false;
                }
                self.tokens.push((tick.clone(), *max, *lim, 0));
                true
            }
            NaiveOp::Mint { tick, minter, amt } => {
                let Some(i) = self.token(tick) else {
                    return false;
                };
                let (_, max, lim, minted) = self.tokens[i].clone();
                if *amt > lim || minted + amt > max {
                    return false;
                }
                self.tokens[i].3 += amt;
                self.add(tick, minter, *amt);
                true
            }
            NaiveOp::Transfer {
                tick,
                sender,
                receiver,
                amt,
            } => {
                if self.token(tick).is_none() || self.holding(tick, sender) < *amt {
                    return false;
                }
                self.sub(tick, sender, *amt);
                self.add(tick, receiver, *amt);
                true
            }
        }
    }

    /// tick -> (max, lim, minted, non-zero balances)
    pub fn snapshot(&self) -> BTreeMap<String, (u128, u128, u128, BTreeMap<String, u128>)> {
        let mut out = BTreeMap::new();
        for (tick, max, lim, minted) in &self.tokens {
            let mut bal: BTreeMap<String, u128> = BTreeMap::new();
            for h in self.holdings.iter().filter(|h| &h.0 == tick) {
                *bal.entry(h.1.clone()).or_default() += h.2;
            }
            bal.retain(|_, v| *v > 0);
            out.insert(tick.clone(), (*max, *lim, *minted, bal));
        }
        out
    }

    pub fn minted(&self, tick: &str) -> u128 {
        self.token(tick).map_or(0, |i| self.tokens[i].3)
    }
}

/// Same shape as the library snapshot, for comparison.
pub fn registry_snapshot(
    r: &Brc20Registry,
) -> BTreeMap<String, (u128, u128, u128, BTreeMap<String, u128>)> {
    let n = |a: &Amount| -> u128 { a.try_into().expect("test amounts fit in u128") };
    r.tokens()
        .map(|t| {
            let bal = t
                .balances
                .iter()
                .filter(|(_, v)| n(v) > 0)
                .map(|(k, v)| (k.clone(), n(v)))
                .collect();
            (
                t.tick.clone(),
                (n(&t.max), n(&t.lim), n(&t.minted_total), bal),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NaiveOp {
    Deploy {
        tick: String,
        max: u128,
        lim: u128,
    },
    Mint {
        tick: String,
        minter: String,
        amt: u128,
    },
    Transfer {
        tick: String,
        sender: String,
        receiver: String,
        amt: u128,
    },
}

impl NaiveOp {
    pub fn to_library(&self) -> Brc20Op {
        match self.clone() {
            NaiveOp::Deploy { tick, max, lim } => Brc20Op::Deploy {
                tick,
                max: max.into(),
                lim: lim.into(),
            },
            NaiveOp::Mint { tick, minter, amt } => Brc20Op::Mint {
                tick,
                minter,
                amt: amt.into(),
            },
            NaiveOp::Transfer {
                tick,
                sender,
                receiver,
                amt,
            } => Brc20Op::Transfer {
                tick,
                sender,
                receiver,
                amt: amt.into(),
            },
        }
    }

    pub fn tick(&self) -> &str {
        match self {
            NaiveOp::Deploy { tick, .. }
            | NaiveOp::Mint { tick, .. }
            | NaiveOp::Transfer { tick, .. } => tick,
        }
    }
}

pub const TICKS: [&str; 5] = ["ordi", "sats", "meme", "pepe", "rats"];
pub const ADDRS: [&str; 8] = ["a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7"];

/// Up to 200 ops over at most 5 ticks and 8 addresses. Deploys are
/// biased toward the front so later mints and transfers have targets.
pub fn random_ops(seed: u64) -> Vec<NaiveOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(0..=200);
    let ticks = &TICKS[..rng.gen_range(1..=TICKS.len())];
    let addrs = &ADDRS[..rng.gen_range(1..=ADDRS.len())];
    let big = rng.gen_bool(0.1);
    (0..len)
        .map(|i| {
            let tick = ticks[rng.gen_range(0..ticks.len())].to_string();
            let roll = rng.gen_range(0..100);
            let deploy_weight = if i < 10 { 40 } else { 5 };
            if roll < deploy_weight {
                let max: u128 = if big {
                    rng.gen_range(0..=u64::MAX as u128) << 40
                } else {
                    rng.gen_range(0..=5_000)
                };
                let lim = if rng.gen_bool(0.1) {
                    max + rng.gen_range(1..=10)
                } else {
                    rng.gen_range(0..=max.clamp(1, 2_000)).min(max)
                };
                NaiveOp::Deploy { tick, max, lim }
            } else if roll < 60 {
                let minter = addrs[rng.gen_range(0..addrs.len())].to_string();
                NaiveOp::Mint {
                    tick,
                    minter,
                    amt: rng.gen_range(0..=2_500),
                }
            } else {
                let sender = addrs[rng.gen_range(0..addrs.len())].to_string();
                let receiver = addrs[rng.gen_range(0..addrs.len())].to_string();
                NaiveOp::Transfer {
                    tick,
                    sender,
                    receiver,
                    amt: rng.gen_range(0..=1_500),
                }
            }
        })
        .collect()
}

/// Replays `ops` through both ledgers, checking supply conservation after
/// every step. Returns a description of the first disagreement.
pub fn check_against_oracle(ops: &[NaiveOp]) -> Result<(), String> {
    let mut lib = Brc20Registry::new();
    let mut naive = NaiveLedger::default();
    for (i, op) in ops.iter().enumerate() {
        let ok_lib = lib.apply(&op.to_library()).is_ok();
        let ok_naive = naive.apply(op);
        if ok_lib != ok_naive {
            return Err(format!(
                "step {i}: {op:?} accepted={ok_lib} but oracle says {ok_naive}"
            ));
        }
        lib.check_invariants()
            .map_err(|e| format!("step {i}: {e}"))?;
        let snap = registry_snapshot(&lib);
        for (tick, (max, _, minted, bal)) in &snap {
            let sum: u128 = bal.values().sum();
            if sum != *minted || minted > max || *minted != naive.minted(tick) {
                return Err(format!(
                    "step {i}: {tick} sum {sum} minted {minted} max {max}"
                ));
            }
        }
        if snap != naive.snapshot() {
            return Err(format!("step {i}: registries diverge after {op:?}"));
        }
    }
    Ok(())
}

/// Fee split computed from first principles: floor share each, the rest to
/// the leader.
pub fn expected_split(fee: u64, validators: &[String], leader: &str) -> BTreeMap<String, u64> {
    let n = validators.len() as u64;
    let mut out: BTreeMap<String, u64> = validators.iter().map(|v| (v.clone(), fee / n)).collect();
    *out.get_mut(leader).unwrap() += fee - (fee / n) * n;
    out
}
