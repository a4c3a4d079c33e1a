//! Inscription envelope grammar.
//!
//! An envelope is a compact JSON object whose values are strings, except for
//! the `events` map of a receipt, which is one level deeper. Keys appear in a
//! fixed order: `p`, `op`, `op_signature`, `tick`, `max`, `lim`, `amt`,
//! `c_addr`, `eth_addr`, `events`, then any extension fields in the order they
//! were written. Only this canonical byte form parses, which is what makes
//! `serialize(parse(x)) == x` hold for every accepted payload.
//!
//! See `docs/envelope.md` for the full grammar and the golden fixtures.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Digest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "brc-20")]
    Brc20,
    #[serde(rename = "middleware")]
    Middleware,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Brc20 => "brc-20",
            Protocol::Middleware => "middleware",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "brc-20" => Some(Protocol::Brc20),
            "middleware" => Some(Protocol::Middleware),
            _ => None,
        }
    }

    /// The protocol/op validity table.
    pub fn allows(self, op: Op) -> bool {
        match self {
            Protocol::Brc20 => matches!(op, Op::Deploy | Op::Mint | Op::Transfer),
            Protocol::Middleware => matches!(op, Op::Registration | Op::Receipt),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Deploy,
    Mint,
    Transfer,
    Registration,
    Receipt,
}

impl Op {
    pub const ALL: [Op; 5] = [
        Op::Deploy,
        Op::Mint,
        Op::Transfer,
        Op::Registration,
        Op::Receipt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Op::Deploy => "deploy",
            Op::Mint => "mint",
            Op::Transfer => "transfer",
            Op::Registration => "registration",
            Op::Receipt => "receipt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Op::ALL.into_iter().find(|op| op.as_str() == s)
    }

    /// Signature used for interface matching when the envelope carries none.
    pub fn default_signature(self) -> String {
        function_signature(self.as_str())
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The interface-signature text for a function name, e.g. `deploy(...) return (...)`.
pub fn function_signature(name: &str) -> String {
    format!("{name}(...) return (...)")
}

/// Function name of a signature text: everything before the first `(`.
pub fn function_name(signature: &str) -> &str {
    signature.split('(').next().unwrap_or(signature).trim()
}

/// Outcome of one executed inscription as carried in a receipt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptEntry {
    pub success: bool,
    pub return_value: String,
}

impl ReceiptEntry {
    pub fn new(success: bool, return_value: impl Into<String>) -> Self {
        ReceiptEntry {
            success,
            return_value: return_value.into(),
        }
    }

    fn encode(&self) -> String {
        format!(
            "{}:{}",
            if self.success { 't' } else { 'f' },
            self.return_value
        )
    }

    fn decode(s: &str) -> Option<Self> {
        let (flag, rest) = s.split_once(':')?;
        let success = match flag {
            "t" => true,
            "f" => false,
            _ => return None,
        };
        Some(ReceiptEntry::new(success, rest))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("op {op} is not defined for protocol {protocol}")]
    OpNotAllowed {
        protocol: &'static str,
        op: &'static str,
    },
    #[error("receipt envelopes carry no op_signature")]
    ReceiptWithSignature,
    #[error("receipt must attest at least one event")]
    EmptyReceipt,
    #[error("events map is only valid on receipts")]
    UnexpectedEvents,
    #[error("missing required field {0:?}")]
    MissingField(&'static str),
    #[error("field {field:?} is not a canonical decimal integer: {value:?}")]
    InvalidNumber { field: String, value: String },
    #[error("field name {0:?} is reserved or empty")]
    ReservedField(String),
    #[error("field {0:?} must not be empty")]
    EmptyValue(&'static str),
}

/// Parsed envelope content: what the payload bytes themselves carry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub protocol: Protocol,
    pub op: Op,
    pub op_signature: Option<String>,
    pub c_addr: Option<String>,
    /// Every other string field, including extensions, in stored order.
    pub fields: IndexMap<String, String>,
    /// Receipt events keyed by inscription id text.
    pub events: Option<BTreeMap<String, ReceiptEntry>>,
}

const RESERVED: [&str; 5] = ["p", "op", "op_signature", "c_addr", "events"];
const NUMERIC: [&str; 3] = ["max", "lim", "amt"];

/// Canonical position of known keys; extensions sort after them.
fn key_rank(key: &str) -> usize {
    match key {
        "tick" => 0,
        "max" => 1,
        "lim" => 2,
        "amt" => 3,
        "c_addr" => 4,
        "eth_addr" => 5,
        "events" => 6,
        _ => 7,
    }
}

fn is_canonical_decimal(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && (s == "0" || !s.starts_with('0'))
}

impl Envelope {
    pub fn new(protocol: Protocol, op: Op) -> Self {
        Envelope {
            protocol,
            op,
            op_signature: None,
            c_addr: None,
            fields: IndexMap::new(),
            events: None,
        }
    }

    pub fn with_signature(mut self, sig: impl Into<String>) -> Self {
        self.op_signature = Some(sig.into());
        self
    }

    pub fn with_c_addr(mut self, c_addr: impl Into<String>) -> Self {
        self.c_addr = Some(c_addr.into());
        self
    }

    pub fn with_field(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.fields.insert(key.into(), value.into());
        self
    }

    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields.get(key).map(String::as_str)
    }

    pub fn tick(&self) -> Option<&str> {
        self.field("tick")
    }

    /// Numeric field as an arbitrary-precision integer.
    pub fn number(&self, key: &str) -> Option<BigUint> {
        let raw = self.field(key)?;
        is_canonical_decimal(raw)
            .then(|| raw.parse().ok())
            .flatten()
    }

    /// The interface signature this envelope asks to invoke.
    pub fn invoked_signature(&self) -> String {
        self.op_signature
            .clone()
            .unwrap_or_else(|| self.op.default_signature())
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !self.protocol.allows(self.op) {
            return Err(CodecError::OpNotAllowed {
                protocol: self.protocol.as_str(),
                op: self.op.as_str(),
            });
        }
        for key in self.fields.keys() {
            if key.is_empty() || RESERVED.contains(&key.as_str()) {
                return Err(CodecError::ReservedField(key.clone()));
            }
        }
        for key in NUMERIC {
            if let Some(v) = self.fields.get(key) {
                if !is_canonical_decimal(v) {
                    return Err(CodecError::InvalidNumber {
                        field: key.to_string(),
                        value: v.clone(),
                    });
                }
            }
        }
        if self.op == Op::Receipt {
            if self.op_signature.is_some() {
                return Err(CodecError::ReceiptWithSignature);
            }
            match &self.events {
                None => return Err(CodecError::MissingField("events")),
                Some(ev) if ev.is_empty() => return Err(CodecError::EmptyReceipt),
                Some(_) => {}
            }
        } else if self.events.is_some() {
            return Err(CodecError::UnexpectedEvents);
        }
        let required: &[&'static str] = match self.op {
            Op::Deploy => &["tick", "max", "lim"],
            Op::Mint | Op::Transfer => &["tick", "amt"],
            Op::Registration => &["eth_addr"],
            Op::Receipt => &[],
        };
        for key in required {
            if !self.fields.contains_key(*key) {
                return Err(CodecError::MissingField(key));
            }
        }
        if self.op == Op::Registration && self.c_addr.is_none() {
            return Err(CodecError::MissingField("c_addr"));
        }
        if self.tick().is_some_and(str::is_empty) {
            return Err(CodecError::EmptyValue("tick"));
        }
        Ok(())
    }
}

fn push_json_str(out: &mut String, s: &str) {
    // serde_json's string escaping is the canonical one.
    out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"));
}

fn push_entry(out: &mut String, first: &mut bool, key: &str, value: &str) {
    if !*first {
        out.push(',');
    }
    *first = false;
    push_json_str(out, key);
    out.push(':');
    push_json_str(out, value);
}

/// Emits canonical payload bytes for an envelope.
pub fn serialize_inscription(env: &Envelope) -> Result<Vec<u8>, CodecError> {
    env.validate()?;
    let mut out = String::from("{");
    let mut first = true;
    push_entry(&mut out, &mut first, "p", env.protocol.as_str());
    push_entry(&mut out, &mut first, "op", env.op.as_str());
    if let Some(sig) = &env.op_signature {
        push_entry(&mut out, &mut first, "op_signature", sig);
    }

    let mut keyed: Vec<(usize, usize, &str)> = env
        .fields
        .keys()
        .enumerate()
        .map(|(i, k)| (key_rank(k), i, k.as_str()))
        .collect();
    if env.c_addr.is_some() {
        keyed.push((key_rank("c_addr"), 0, "c_addr"));
    }
    if env.events.is_some() {
        keyed.push((key_rank("events"), 0, "events"));
    }
    keyed.sort();

    for (_, _, key) in keyed {
        match key {
            "c_addr" => push_entry(
                &mut out,
                &mut first,
                key,
                env.c_addr.as_deref().unwrap_or_default(),
            ),
            "events" => {
                out.push_str(",\"events\":{");
                let mut inner_first = true;
                for (id, entry) in env.events.iter().flatten() {
                    push_entry(&mut out, &mut inner_first, id, &entry.encode());
                }
                out.push('}');
            }
            _ => push_entry(&mut out, &mut first, key, &env.fields[key]),
        }
    }
    out.push('}');
    Ok(out.into_bytes())
}

/// Parses an output payload into an envelope.
///
/// Returns `None` for anything that is not a canonical, valid envelope. Never
/// panics on arbitrary bytes.
pub fn parse_inscription(payload: &[u8]) -> Option<Envelope> {
    if payload.is_empty() {
        return None;
    }
    let value: serde_json::Value = serde_json::from_slice(payload).ok()?;
    let obj = value.as_object()?;

    let mut protocol = None;
    let mut op = None;
    let mut env_sig = None;
    let mut c_addr = None;
    let mut events = None;
    let mut fields = IndexMap::new();
    for (key, val) in obj {
        match key.as_str() {
            "p" => protocol = Some(Protocol::parse(val.as_str()?)?),
            "op" => op = Some(Op::parse(val.as_str()?)?),
            "op_signature" => env_sig = Some(val.as_str()?.to_string()),
            "c_addr" => c_addr = Some(val.as_str()?.to_string()),
            "events" => {
                let mut map = BTreeMap::new();
                for (id, entry) in val.as_object()? {
                    map.insert(id.clone(), ReceiptEntry::decode(entry.as_str()?)?);
                }
                events = Some(map);
            }
            _ => {
                fields.insert(key.clone(), val.as_str()?.to_string());
            }
        }
    }
    let env = Envelope {
        protocol: protocol?,
        op: op?,
        op_signature: env_sig,
        c_addr,
        fields,
        events,
    };
    let canonical = serialize_inscription(&env).ok()?;
    (canonical == payload).then_some(env)
}

/// Builds a receipt payload attesting one outcome per inscription.
pub fn build_receipt_payload(
    events: &BTreeMap<InscriptionId, ReceiptEntry>,
) -> Result<Vec<u8>, CodecError> {
    if events.is_empty() {
        return Err(CodecError::EmptyReceipt);
    }
    let mut env = Envelope::new(Protocol::Middleware, Op::Receipt);
    env.events = Some(
        events
            .iter()
            .map(|(id, e)| (id.to_string(), e.clone()))
            .collect(),
    );
    serialize_inscription(&env)
}

/// Typed view of a receipt's events; `None` if an id does not parse.
pub fn receipt_events(env: &Envelope) -> Option<BTreeMap<InscriptionId, ReceiptEntry>> {
    env.events
        .as_ref()?
        .iter()
        .map(|(id, e)| Some((id.parse().ok()?, e.clone())))
        .collect()
}

/// `<txid>i<output index>`, the usual inscription id notation.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InscriptionId {
    pub txid: Digest,
    pub vout: u32,
}

impl InscriptionId {
    pub fn new(txid: Digest, vout: u32) -> Self {
        InscriptionId { txid, vout }
    }
}

impl fmt::Display for InscriptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}i{}", self.txid, self.vout)
    }
}

impl fmt::Debug for InscriptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..i{}", &self.txid.to_hex()[..10], self.vout)
    }
}

impl FromStr for InscriptionId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (txid, vout) = s
            .split_once('i')
            .ok_or_else(|| format!("inscription id {s:?} lacks 'i' separator"))?;
        let txid = Digest::from_hex(txid).ok_or_else(|| format!("bad txid in {s:?}"))?;
        let vout = vout
            .parse()
            .map_err(|_| format!("bad output index in {s:?}"))?;
        Ok(InscriptionId { txid, vout })
    }
}

impl Serialize for InscriptionId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InscriptionId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Total execution order: block time first, then position on chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrderingKey {
    pub timestamp: u64,
    pub block_height: u64,
    pub tx_index: u32,
    pub output_index: u32,
}

/// An envelope together with where it sits on the UTXO chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inscription {
    pub id: InscriptionId,
    pub envelope: Envelope,
    /// Satoshis carried by the inscribed output.
    pub value: u64,
    /// Sender of the carrying transaction.
    pub origin: String,
    /// Recipient of the inscribed output.
    pub recipient: String,
    pub ordering_key: OrderingKey,
}

impl Inscription {
    pub fn protocol(&self) -> Protocol {
        self.envelope.protocol
    }

    pub fn op(&self) -> Op {
        self.envelope.op
    }

    pub fn c_addr(&self) -> Option<&str> {
        self.envelope.c_addr.as_deref()
    }
}
