mod common;

use midastouch_core::bridge::{split_fee, Bundle};
use midastouch_core::crypto::Digest;
use midastouch_core::evm::Template;
use midastouch_core::inscription::{
    parse_inscription, serialize_inscription, Envelope, Inscription, InscriptionId, Op,
    OrderingKey, Protocol, ReceiptEntry,
};
use midastouch_core::pbft::Behavior;
use midastouch_core::sim::{FaultPlan, SimConfig, Simulation};
use midastouch_core::units::Rate;
use proptest::prelude::*;

use common::{check_against_oracle, expected_split, NaiveOp, ADDRS, TICKS};

fn decimal() -> impl Strategy<Value = String> {
    prop_oneof![
        any::<u64>().prop_map(|v| v.to_string()),
        any::<u128>().prop_map(|v| v.to_string())
    ]
}

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z0-9]{1,6}",
        "\\PC{1,8}",
        Just("q\"uo\\te\n".to_string())
    ]
}

fn inscription_id() -> impl Strategy<Value = InscriptionId> {
    (any::<[u8; 32]>(), any::<u32>())
        .prop_map(|(b, v)| InscriptionId::new(Digest::from_bytes(b), v))
}

fn envelope() -> impl Strategy<Value = Envelope> {
    let ext = prop::collection::vec(("x_[a-z]{1,5}", text()), 0..3);
    let brc20 = (
        prop_oneof![Just(Op::Deploy), Just(Op::Mint), Just(Op::Transfer)],
        text(),
        decimal(),
        decimal(),
        (
            proptest::option::of(text()),
            proptest::option::of("0x[0-9a-f]{40}"),
            ext,
        ),
    )
        .prop_map(|(op, tick, a, b, (sig, c_addr, ext))| {
            let mut env = Envelope::new(Protocol::Brc20, op).with_field("tick", tick);
            env = match op {
                Op::Deploy => env.with_field("lim", b).with_field("max", a),
                _ => env.with_field("amt", a),
            };
            env.op_signature = sig;
            env.c_addr = c_addr;
            for (k, v) in ext {
                env = env.with_field(k, v);
            }
            env
        });
    let registration = (
        "0x[0-9a-f]{40}",
        "0x[0-9a-f]{40}",
        decimal(),
        proptest::option::of(text()),
    )
        .prop_map(|(c_addr, eth, max, sig)| {
            let mut env = Envelope::new(Protocol::Middleware, Op::Registration)
                .with_field("eth_addr", eth)
                .with_field("tick", "eth")
                .with_field("max", max)
                .with_c_addr(c_addr);
            env.op_signature = sig;
            env
        });
    let receipt = prop::collection::btree_map(inscription_id(), (any::<bool>(), text()), 1..5)
        .prop_map(|events| {
            let mut env = Envelope::new(Protocol::Middleware, Op::Receipt);
            env.events = Some(
                events
                    .into_iter()
                    .map(|(id, (ok, ret))| (id.to_string(), ReceiptEntry::new(ok, ret)))
                    .collect(),
            );
            env
        });
    prop_oneof![brc20, registration, receipt]
}

fn naive_op() -> impl Strategy<Value = NaiveOp> {
    let tick = prop::sample::select(TICKS.to_vec()).prop_map(str::to_string);
    let addr = || prop::sample::select(ADDRS.to_vec()).prop_map(str::to_string);
    prop_oneof![
        (tick.clone(), 0u128..3_000, 0u128..3_500).prop_map(|(tick, max, lim)| NaiveOp::Deploy {
            tick,
            max,
            lim
        }),
        (tick.clone(), addr(), 0u128..1_200).prop_map(|(tick, minter, amt)| NaiveOp::Mint {
            tick,
            minter,
            amt
        }),
        (tick, addr(), addr(), 0u128..1_200).prop_map(|(tick, sender, receiver, amt)| {
            NaiveOp::Transfer {
                tick,
                sender,
                receiver,
                amt,
            }
        }),
    ]
}

fn inscription(seed: u8, block: u64, tx: u32) -> Inscription {
    let env = Envelope::new(Protocol::Brc20, Op::Mint)
        .with_c_addr("0xc")
        .with_field("tick", "t")
        .with_field("amt", seed.to_string());
    Inscription {
        id: InscriptionId::new(Digest::of(&[seed, tx as u8]), 0),
        envelope: env,
        value: 1_000 + u64::from(seed),
        origin: format!("u{seed}"),
        recipient: format!("u{seed}"),
        ordering_key: OrderingKey {
            timestamp: 600 * block,
            block_height: block,
            tx_index: tx,
            output_index: 0,
        },
    }
}

/// Inscriptions at distinct chain positions, plus a permutation of them.
fn collected() -> impl Strategy<Value = (Vec<Inscription>, Vec<Inscription>)> {
    prop::collection::btree_map((1u64..5, 0u32..4), any::<u8>(), 1..20).prop_flat_map(|spec| {
        let items: Vec<Inscription> = spec
            .into_iter()
            .map(|((b, t), s)| inscription(s, b, t))
            .collect();
        (Just(items.clone()), Just(items).prop_shuffle())
    })
}

proptest! {
    #[test]
    fn envelope_round_trip(env in envelope()) {
        let bytes = serialize_inscription(&env).unwrap();
        let parsed = parse_inscription(&bytes).expect("canonical bytes parse");
        prop_assert_eq!(&parsed, &env);
        prop_assert_eq!(serialize_inscription(&parsed).unwrap(), bytes);
    }

    #[test]
    fn parser_is_total(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        if let Some(env) = parse_inscription(&bytes) {
            prop_assert_eq!(serialize_inscription(&env).unwrap(), bytes);
        }
    }

    #[test]
    fn non_canonical_spellings_rejected(env in envelope(), at in any::<prop::sample::Index>()) {
        let bytes = serialize_inscription(&env).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        // Whitespace after any structural comma is valid JSON but not canonical.
        let commas: Vec<usize> = text.match_indices("\",\"").map(|(i, _)| i + 2).collect();
        prop_assume!(!commas.is_empty());
        let pos = commas[at.index(commas.len())];
        let spaced = format!("{} {}", &text[..pos], &text[pos..]);
        prop_assert!(serde_json::from_str::<serde_json::Value>(&spaced).is_ok());
        prop_assert!(parse_inscription(spaced.as_bytes()).is_none());
    }

    #[test]
    fn inscription_id_text_round_trip(id in inscription_id()) {
        prop_assert_eq!(id.to_string().parse::<InscriptionId>().unwrap(), id);
    }

    #[test]
    fn registry_matches_naive_ledger(ops in prop::collection::vec(naive_op(), 0..120)) {
        check_against_oracle(&ops).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn fee_split_conserves(fee in 0u64..1_000_000, n in 1usize..20, leader in any::<prop::sample::Index>()) {
        let validators: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let lead = &validators[leader.index(n)];
        let got = split_fee(fee, validators.iter().map(String::as_str), lead);
        prop_assert_eq!(got.values().sum::<u64>(), fee);
        prop_assert_eq!(got, expected_split(fee, &validators, lead));
    }

    #[test]
    fn rate_floor_matches_integer_math(ppm in 0u32..=1_000_000, amount in any::<u64>()) {
        let r = Rate::from_ppm(ppm).unwrap();
        let want = (u128::from(amount) * u128::from(ppm) / 1_000_000) as u64;
        prop_assert_eq!(r.apply_floor(amount), want);
        prop_assert!(r.apply_floor(amount) <= amount);
    }

    /// Bundle order and digest depend only on chain positions, never on the
    /// order in which the committee happened to collect inscriptions.
    #[test]
    fn bundle_order_ignores_collection_order((items, shuffled) in collected()) {
        let mut a = Bundle { epoch: 1, inscriptions: items };
        let mut b = Bundle { epoch: 1, inscriptions: shuffled };
        a.sort();
        b.sort();
        prop_assert_eq!(a.digest(), b.digest());
        prop_assert!(a.inscriptions.windows(2).all(|w| w[0].ordering_key < w[1].ordering_key));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Arbitrary workloads on arbitrary committees settle with no invariant
    /// violations.
    #[test]
    fn random_runs_audit_clean(
        seed in any::<u64>(),
        epsilon in 1u64..6,
        n in 1usize..8,
        faulty in proptest::option::of((0usize..8, prop_oneof![Just(Behavior::Silent), Just(Behavior::Equivocating)])),
        work in prop::collection::vec((0usize..3, 0u8..3, 0u32..1_500, 0u64..3_000, 0u64..3), 1..25),
    ) {
        let mut config = SimConfig::default();
        config.seed = seed;
        config.bridge.epsilon = epsilon;
        let mut plan = FaultPlan::default();
        if let Some((i, b)) = faulty {
            // Keep within the tolerated fault count.
            if n >= 4 && i < n {
                plan.0.insert(i, b);
            }
        }
        let mut sim = Simulation::with_committee(config, n, &plan).unwrap();
        let ft = sim.deploy_contract(Template::FT, "issuer");
        let users = ["u0", "u1", "u2"];
        for u in users {
            sim.fund(u, 1_000_000);
        }
        let deploy = Envelope::new(Protocol::Brc20, Op::Deploy)
            .with_c_addr(ft.clone())
            .with_field("tick", "t")
            .with_field("max", "20000")
            .with_field("lim", "1000");
        sim.inscribe("u0", "u0", &deploy, 1_000).unwrap();
        for (u, kind, amt, value, gap) in work {
            let op = [Op::Mint, Op::Transfer, Op::Deploy][kind as usize];
            let mut env = Envelope::new(Protocol::Brc20, op).with_c_addr(ft.clone()).with_field("tick", "t");
            env = if op == Op::Deploy {
                env.with_field("max", amt.to_string()).with_field("lim", "1")
            } else {
                env.with_field("amt", amt.to_string())
            };
            sim.inscribe(users[u], users[(u + 1) % 3], &env, value).unwrap();
            sim.run_blocks(gap).unwrap();
        }
        sim.run_blocks(1).unwrap();
        sim.settle(8 * epsilon + 8).unwrap();
        let audit = sim.audit();
        prop_assert!(audit.is_clean(), "{:?}", audit);
        let bridge = sim.bridge().unwrap();
        prop_assert!(bridge.pending().is_empty());
        prop_assert!(bridge.receipts().iter().all(|r| r.mined_height.is_some()));
    }
}
